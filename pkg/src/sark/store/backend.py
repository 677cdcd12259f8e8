"""Key-value backends underneath the authenticated tries."""

from __future__ import annotations

import os
import struct
from abc import ABC, abstractmethod
from collections.abc import Iterator
from pathlib import Path

_REC = struct.Struct(">BII")
_PUT = 1
_DEL = 2


class KvBackend(ABC):
    @abstractmethod
    def get(self, key: bytes) -> bytes | None: ...

    @abstractmethod
    def put(self, key: bytes, value: bytes) -> None: ...

    @abstractmethod
    def delete(self, key: bytes) -> None: ...

    @abstractmethod
    def iterate(self, prefix: bytes = b"") -> Iterator[tuple[bytes, bytes]]:
        """Yield ``(key, value)`` pairs under ``prefix`` in key order."""

    def snapshot(self) -> dict[bytes, bytes]:
        return dict(self.iterate())

    def flush(self) -> None:
        pass

    def close(self) -> None:
        self.flush()


class MemoryBackend(KvBackend):
    def __init__(self):
        self._data: dict[bytes, bytes] = {}

    def get(self, key):
        return self._data.get(key)

    def put(self, key, value):
        self._data[key] = value

    def delete(self, key):
        self._data.pop(key, None)

    def iterate(self, prefix=b""):
        for k in sorted(k for k in self._data if k.startswith(prefix)):
            yield k, self._data[k]

    def __len__(self):
        return len(self._data)


class FileBackend(KvBackend):
    """Append-only record log with an in-memory index rebuilt on open.

    A torn final record (crash mid-write) is discarded on reopen.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._index: dict[bytes, bytes] = {}
        valid = self._replay()
        self._fh = open(self.path, "ab")
        if self._fh.tell() != valid:
            self._fh.truncate(valid)
            self._fh.seek(valid)

    def _replay(self) -> int:
        if not self.path.exists():
            return 0
        data = self.path.read_bytes()
        pos = 0
        while pos + _REC.size <= len(data):
            op, klen, vlen = _REC.unpack_from(data, pos)
            end = pos + _REC.size + klen + vlen
            if end > len(data) or op not in (_PUT, _DEL):
                break
            key = data[pos + _REC.size : pos + _REC.size + klen]
            if op == _PUT:
                self._index[key] = data[pos + _REC.size + klen : end]
            else:
                self._index.pop(key, None)
            pos = end
        return pos

    def get(self, key):
        return self._index.get(key)

    def put(self, key, value):
        self._fh.write(_REC.pack(_PUT, len(key), len(value)) + key + value)
        self._index[key] = value

    def delete(self, key):
        if key in self._index:
            self._fh.write(_REC.pack(_DEL, len(key), 0) + key)
            del self._index[key]

    def iterate(self, prefix=b""):
        for k in sorted(k for k in self._index if k.startswith(prefix)):
            yield k, self._index[k]

    def flush(self):
        if not self._fh.closed:
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self):
        if not self._fh.closed:
            self.flush()
            self._fh.close()
