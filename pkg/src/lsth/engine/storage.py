"""Counted file access under one storage root.

Every byte the engine moves goes through :class:`Storage`, which is what makes
per-statement I/O attribution possible.  The only synchronization primitive
is :meth:`Storage.create_exclusive` (atomic put-if-absent).
"""

from __future__ import annotations

import os
import shutil
import uuid
from pathlib import Path

from ..errors import IOFailure
from .counters import SharedCounters, StorageCounters, shared_counters


class Storage:
    def __init__(self, root: str | Path, shared: SharedCounters | None = None):
        self.root = Path(root)
        self.counters = StorageCounters()
        self.shared = shared if shared is not None else shared_counters(self.root)

    def _bump(self, name: str, amount: int = 1) -> None:
        setattr(self.counters, name, getattr(self.counters, name) + amount)
        self.shared.add(name, amount)

    def read(self, path: Path) -> bytes:
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise
        except OSError as exc:
            raise IOFailure(f"read {path}: {exc}") from exc
        self._bump("files_opened")
        self._bump("bytes_read", len(data))
        return data

    def read_external(self, path: Path) -> bytes:
        """Read a file outside the table tree (e.g. a COPY source); still counted."""
        return self.read(path)

    def _tmp_for(self, path: Path) -> Path:
        return path.with_name(f".{path.name}.{uuid.uuid4().hex}.tmp")

    def write(self, path: Path, data: bytes) -> None:
        """Write-and-replace atomically; readers see the old or the new bytes."""
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self._tmp_for(path)
        try:
            tmp.write_bytes(data)
            os.replace(tmp, path)
        except OSError as exc:
            tmp.unlink(missing_ok=True)
            raise IOFailure(f"write {path}: {exc}") from exc
        self._bump("files_written")
        self._bump("bytes_written", len(data))

    def create_exclusive(self, path: Path, data: bytes) -> bool:
        """Atomically create ``path`` with ``data`` unless it already exists.

        Content is staged in a temp file and hard-linked into place, so a
        reader can never observe a partially written file.  Returns False on
        collision; the staged bytes still count as written.
        """
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self._tmp_for(path)
        try:
            tmp.write_bytes(data)
            self._bump("files_written")
            self._bump("bytes_written", len(data))
            try:
                os.link(tmp, path)
            except FileExistsError:
                return False
            return True
        except OSError as exc:
            raise IOFailure(f"create {path}: {exc}") from exc
        finally:
            tmp.unlink(missing_ok=True)

    def list(self, directory: Path) -> list[str]:
        self._bump("list_calls")
        try:
            return sorted(n for n in os.listdir(directory) if not n.startswith("."))
        except FileNotFoundError:
            return []
        except OSError as exc:
            raise IOFailure(f"list {directory}: {exc}") from exc

    def delete(self, path: Path) -> None:
        try:
            path.unlink(missing_ok=True)
        except OSError as exc:
            raise IOFailure(f"delete {path}: {exc}") from exc

    def remove_tree(self, path: Path) -> None:
        shutil.rmtree(path, ignore_errors=True)

    def append(self, path: Path, data: bytes) -> bool:
        """Append ``data`` in one write to an existing file; False if it does not exist."""
        try:
            fd = os.open(path, os.O_WRONLY | os.O_APPEND)
        except FileNotFoundError:
            return False
        except OSError as exc:
            raise IOFailure(f"append {path}: {exc}") from exc
        try:
            os.write(fd, data)
        finally:
            os.close(fd)
        self._bump("files_written")
        self._bump("bytes_written", len(data))
        return True
