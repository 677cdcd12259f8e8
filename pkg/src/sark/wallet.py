"""Wallet storage: one-time seeds, asset files and pending transfers.

A seed is consumed the moment its public key is handed out to become a
``next_owner_key``; the wallet never hands it out again.  Every file write
goes through a temp file plus ``os.replace`` so a crash leaves either the old
or the new content.
"""

from __future__ import annotations

import json
import os
import secrets
import tempfile
from dataclasses import dataclass
from pathlib import Path

from . import crypto
from .asset import Asset


class WalletError(Exception):
    pass


class ConsumedKeyError(WalletError):
    pass


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


@dataclass
class OneTimeKey:
    index: int
    keypair: crypto.KeyPair

    @property
    def public(self) -> bytes:
        return self.keypair.public


class Wallet:
    KEYFILE = "keys.json"

    def __init__(self, directory: str | Path):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._path = self.dir / self.KEYFILE
        if self._path.exists():
            try:
                self._state = json.loads(self._path.read_text())
            except json.JSONDecodeError as e:
                raise WalletError(f"corrupt keyfile {self._path}: {e}") from e
        else:
            self._state = {"seeds": [], "designated": [], "spent": []}

    def _save(self) -> None:
        atomic_write(self._path, json.dumps(self._state, indent=1, sort_keys=True).encode())

    def _key(self, index: int) -> OneTimeKey:
        return OneTimeKey(index, crypto.keygen(bytes.fromhex(self._state["seeds"][index])))

    def designate(self, purpose: str = "") -> OneTimeKey:
        """A fresh one-time key, marked consumed before it leaves the wallet."""
        seed = secrets.token_bytes(32)
        index = len(self._state["seeds"])
        self._state["seeds"].append(seed.hex())
        self._state["designated"].append({"index": index, "purpose": purpose})
        self._save()
        return self._key(index)

    def designated_indices(self) -> list[int]:
        return [d["index"] for d in self._state["designated"]]

    def find(self, public: bytes) -> OneTimeKey | None:
        for i in range(len(self._state["seeds"])):
            k = self._key(i)
            if k.public == public:
                return k
        return None

    def is_spent(self, public: bytes) -> bool:
        return public.hex() in self._state["spent"]

    def mark_spent(self, public: bytes) -> None:
        """Record that this key has signed its one update."""
        if self.is_spent(public):
            raise ConsumedKeyError("key already signed an update")
        self._state["spent"].append(public.hex())
        self._save()

    def owner_secret(self, asset: Asset) -> bytes:
        key = self.find(asset.owner_key)
        if key is None:
            raise WalletError("this wallet does not hold the current owner key")
        if self.is_spent(key.public):
            raise ConsumedKeyError("the current owner key was already used for a transfer")
        return key.keypair.secret

    # Recipients we have sent to: a key may be a next_owner_key only once.
    def record_recipient(self, public: bytes) -> None:
        sent = self._state.setdefault("recipients", [])
        if public.hex() in sent:
            raise ConsumedKeyError("recipient key was already designated in an earlier update")
        sent.append(public.hex())
        self._save()

    def check_recipient(self, public: bytes) -> None:
        if public.hex() in self._state.get("recipients", []):
            raise ConsumedKeyError("recipient key was already designated in an earlier update")
        if self.is_spent(public):
            raise ConsumedKeyError("recipient key is already spent")


def write_key_file(path: str | Path, key: OneTimeKey) -> None:
    atomic_write(path, json.dumps({"public": key.public.hex(), "index": key.index}).encode() + b"\n")


def read_key_file(path: str | Path) -> bytes:
    try:
        data = json.loads(Path(path).read_text())
        key = bytes.fromhex(data["public"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise WalletError(f"bad key file {path}: {e}") from e
    if len(key) != 32:
        raise WalletError(f"bad key file {path}: public key must be 32 bytes")
    return key


def save_asset(path: str | Path, asset: Asset) -> None:
    atomic_write(path, asset.to_bytes())


def load_asset(path: str | Path) -> Asset:
    return Asset.from_bytes(Path(path).read_bytes())


def pending_path(asset_path: str | Path) -> Path:
    p = Path(asset_path)
    return p.with_name(p.name + ".pending.json")
