class StoreError(Exception):
    pass


class DuplicateKeyError(StoreError):
    pass


class VersionError(StoreError):
    pass


class UnknownVersionError(StoreError):
    pass


class PresenceError(StoreError):
    """Inclusion requested for an absent key, or exclusion for a present one."""
