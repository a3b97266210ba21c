"""Physical metadata layouts.

All three layouts store the same logical commit log; they differ in how it is
laid out on storage and therefore in what a reader has to touch:

* delta-style: one ``%020d.commit`` file per version plus a full-state
  ``%020d.checkpoint`` every ``checkpoint_interval`` versions.  A read lists
  the directory, loads the newest usable checkpoint and replays the commits
  after it.
* iceberg-style: a ``vN.metadata`` file per version naming every retained
  snapshot; each snapshot points at a ``snap-N-*.manifestlist`` which points
  at ``manifest-*.mf`` files holding the data-file entries.  A read lists the
  directory to find the current metadata file, then walks the tree.
* hudi-style: one ``N.timeline`` file per version plus an append-only
  ``index.meta`` holding a base state and every later commit.  A read lists
  the timeline and opens the index.

``create_exclusive`` on the per-version file is the commit point everywhere.
"""

from __future__ import annotations

import re
import uuid
from pathlib import Path

from ..errors import IOFailure, VersionNotFound
from .model import (
    AddDelta,
    AddFile,
    CommitEntry,
    CommitKind,
    Expire,
    Layout,
    RemoveFile,
    Snapshot,
    TableDescriptor,
    apply_commit,
    datafile_from_json,
    datafile_to_json,
    decode_commit,
    decode_state,
    delta_from_json,
    delta_to_json,
    dumps_lines,
    encode_commit,
    encode_state,
    loads_lines,
)
from .storage import Storage

_COMMIT = re.compile(r"^(\d{20})\.commit$")
_CHECKPOINT = re.compile(r"^(\d{20})\.checkpoint$")
_METADATA = re.compile(r"^v(\d+)\.metadata$")
_TIMELINE = re.compile(r"^(\d+)\.timeline$")


def _versions(names: list[str], pattern: re.Pattern) -> list[int]:
    return sorted(int(m.group(1)) for n in names if (m := pattern.match(n)))


def detect_layout(names: list[str]) -> Layout | None:
    for n in names:
        if _COMMIT.match(n) or _CHECKPOINT.match(n):
            return Layout.DELTA_STYLE
        if _METADATA.match(n):
            return Layout.ICEBERG_STYLE
        if _TIMELINE.match(n):
            return Layout.HUDI_STYLE
    return None


class MetadataLayout:
    kind: Layout

    def __init__(self, store: Storage, table_dir: Path):
        self.store = store
        self.meta_dir = table_dir / "meta"
        self.data_dir = table_dir / "data"

    def list(self) -> list[str]:
        return self.store.list(self.meta_dir)

    def latest_version(self, names: list[str]) -> int:
        raise NotImplementedError

    def read(self, names: list[str], asof: int | None = None) -> Snapshot:
        raise NotImplementedError

    def history(self, names: list[str]) -> list[Snapshot]:
        """Every still-queryable snapshot, oldest first."""
        raise NotImplementedError

    def publish(self, parent: Snapshot | None, entry: CommitEntry, new: Snapshot) -> bool:
        raise NotImplementedError

    def after_publish(self, entry: CommitEntry, new: Snapshot) -> None:
        pass

    def expire(self, names: list[str], bound: int, history: list[Snapshot]) -> None:
        raise NotImplementedError

    def _check_target(self, asof: int | None, latest: int) -> int:
        target = latest if asof is None else asof
        if target < 0 or target > latest:
            raise VersionNotFound(f"version {target} does not exist (latest {latest})")
        return target

    def _read_file(self, path: Path, version: int) -> bytes:
        try:
            return self.store.read(path)
        except FileNotFoundError:
            raise VersionNotFound(f"metadata for version {version} is gone ({path.name})") from None


def _fold_checked(snap: Snapshot, target: int) -> Snapshot:
    if target < snap.expired_below:
        raise VersionNotFound(f"version {target} was vacuumed (retained from {snap.expired_below})")
    return snap


class DeltaLayout(MetadataLayout):
    kind = Layout.DELTA_STYLE

    def commit_path(self, v: int) -> Path:
        return self.meta_dir / f"{v:020d}.commit"

    def checkpoint_path(self, v: int) -> Path:
        return self.meta_dir / f"{v:020d}.checkpoint"

    def latest_version(self, names: list[str]) -> int:
        vs = _versions(names, _COMMIT) + _versions(names, _CHECKPOINT)
        if not vs:
            raise VersionNotFound("table has no versions")
        return max(vs)

    def _replay(self, names: list[str], target: int) -> Snapshot:
        commits = set(_versions(names, _COMMIT))
        checkpoints = [c for c in _versions(names, _CHECKPOINT) if c <= target]
        snap: Snapshot | None = None
        start = 0
        if checkpoints:
            base = checkpoints[-1]
            snap = decode_state(loads_lines(self._read_file(self.checkpoint_path(base), base)))
            start = base + 1
        for v in range(start, target + 1):
            if v not in commits:
                raise VersionNotFound(f"version {target} is not reconstructable (commit {v} missing)")
            entry = decode_commit(self._read_file(self.commit_path(v), v), snap.descriptor if snap else None)
            snap = apply_commit(snap, entry)
        assert snap is not None
        return snap

    def read(self, names: list[str], asof: int | None = None) -> Snapshot:
        target = self._check_target(asof, self.latest_version(names))
        return _fold_checked(self._replay(names, target), target)

    def history(self, names: list[str]) -> list[Snapshot]:
        latest = self.latest_version(names)
        commits = set(_versions(names, _COMMIT))

        def replayable_from(v: int) -> bool:
            return all(c in commits for c in range(v + 1, latest + 1))

        if replayable_from(-1):
            snap = self._replay(names, 0)
        else:
            usable = [k for k in _versions(names, _CHECKPOINT) if replayable_from(k)]
            if not usable:
                raise IOFailure("commit log has a gap below the latest version")
            start = usable[0]
            snap = decode_state(loads_lines(self._read_file(self.checkpoint_path(start), start)))
        out = [snap]
        for v in range(snap.version + 1, latest + 1):
            snap = apply_commit(snap, decode_commit(self._read_file(self.commit_path(v), v), snap.descriptor))
            out.append(snap)
        return [s for s in out if s.version >= out[-1].expired_below]

    def publish(self, parent: Snapshot | None, entry: CommitEntry, new: Snapshot) -> bool:
        return self.store.create_exclusive(self.commit_path(entry.version), encode_commit(entry, new.descriptor))

    def after_publish(self, entry: CommitEntry, new: Snapshot) -> None:
        interval = new.descriptor.checkpoint_interval
        if new.version > 0 and new.version % interval == 0:
            self.store.write(self.checkpoint_path(new.version), dumps_lines(encode_state(new)))

    def expire(self, names: list[str], bound: int, history: list[Snapshot]) -> None:
        at_bound = next(s for s in history if s.version == bound)
        if bound not in _versions(names, _CHECKPOINT):
            self.store.write(self.checkpoint_path(bound), dumps_lines(encode_state(at_bound)))
        for v in _versions(names, _COMMIT):
            if v < bound:
                self.store.delete(self.commit_path(v))
        for v in _versions(names, _CHECKPOINT):
            if v < bound:
                self.store.delete(self.checkpoint_path(v))


class IcebergLayout(MetadataLayout):
    kind = Layout.ICEBERG_STYLE

    def metadata_path(self, v: int) -> Path:
        return self.meta_dir / f"v{v}.metadata"

    def latest_version(self, names: list[str]) -> int:
        vs = _versions(names, _METADATA)
        if not vs:
            raise VersionNotFound("table has no versions")
        return vs[-1]

    def _read_metadata(self, names: list[str]) -> tuple[dict, list[dict]]:
        current = self.latest_version(names)
        lines = loads_lines(self._read_file(self.metadata_path(current), current))
        return lines[0]["table"], [ln["snapshot"] for ln in lines[1:]]

    def _read_manifest(self, name: str, version: int, desc, cache: dict | None = None) -> list[tuple[str, object]]:
        if cache is not None and name in cache:
            return cache[name]
        entries = []
        for ln in loads_lines(self._read_file(self.meta_dir / name, version)):
            status = ln["status"]
            if "add_file" in ln:
                entries.append((status, AddFile(datafile_from_json(ln["add_file"], desc))))
            else:
                entries.append((status, AddDelta(delta_from_json(ln["add_delta"], desc))))
        if cache is not None:
            cache[name] = entries
        return entries

    def _materialize(self, head: dict, snaps: list[dict], line: dict, cache: dict | None = None) -> Snapshot:
        desc = TableDescriptor.from_json(head)
        v = line["version"]
        manifests = [ln["manifest"] for ln in loads_lines(self._read_file(self.meta_dir / line["manifest_list"], v))]
        snap = Snapshot(v, desc, {}, {}, line["expired_below"])
        contents = {}
        deltas = []
        for m in manifests:
            entries = self._read_manifest(m, v, desc, cache)
            contents[m] = entries
            for status, action in entries:
                if status == "DELETED":
                    continue
                if isinstance(action, AddFile):
                    snap.live_files[action.file.file_id] = action.file
                else:
                    deltas.append(action.delta)
        for d in sorted(deltas, key=lambda d: (d.created_by_version, d.file_id)):
            snap.pending_deltas[d.base_file_id] = snap.pending_deltas.get(d.base_file_id, ()) + (d,)
        snap.layout_state = {"snapshots": snaps, "manifests": manifests, "contents": contents}
        return snap

    def read(self, names: list[str], asof: int | None = None) -> Snapshot:
        head, snaps = self._read_metadata(names)
        latest = snaps[-1]["version"]
        target = self._check_target(asof, latest)
        line = next((s for s in snaps if s["version"] == target), None)
        if line is None:
            raise VersionNotFound(f"snapshot {target} is not in the current metadata (expired)")
        return self._materialize(head, snaps, line)

    def history(self, names: list[str]) -> list[Snapshot]:
        head, snaps = self._read_metadata(names)
        cache: dict = {}
        return [self._materialize(head, snaps, line, cache) for line in snaps]

    def _write_manifest(self, desc, entries: list[tuple[str, object]]) -> str:
        name = f"manifest-{uuid.uuid4().hex}.mf"
        lines = []
        for status, action in entries:
            if isinstance(action, AddFile):
                lines.append({"status": status, "add_file": datafile_to_json(action.file, desc)})
            else:
                lines.append({"status": status, "add_delta": delta_to_json(action.delta, desc)})
        self.store.write(self.meta_dir / name, dumps_lines(lines))
        return name

    @staticmethod
    def _entry_id(action) -> str:
        return action.file.file_id if isinstance(action, AddFile) else action.delta.file_id

    def publish(self, parent: Snapshot | None, entry: CommitEntry, new: Snapshot) -> bool:
        desc = new.descriptor
        written: list[str] = []
        adds = [a for a in entry.actions if isinstance(a, (AddFile, AddDelta))]
        if parent is None:
            prior_snaps: list[dict] = []
            manifests: list[str] = []
        else:
            state = parent.layout_state
            prior_snaps = list(state["snapshots"])
            if entry.kind is CommitKind.OPTIMIZE:
                # compaction also consolidates manifests into one
                live = [("EXISTING", AddFile(f)) for f in new.live_files.values()]
                live += [("EXISTING", AddDelta(d)) for ds in new.pending_deltas.values() for d in ds]
                added = {self._entry_id(a) for a in adds}
                live = [("ADDED" if self._entry_id(a) in added else s, a) for s, a in live]
                manifests = [self._write_manifest(desc, live)] if live else []
                written += manifests
                adds = []
            else:
                removed = {a.file_id for a in entry.actions if isinstance(a, RemoveFile)}
                for base in list(removed):
                    removed.update(d.file_id for d in parent.pending_deltas.get(base, ()))
                manifests = []
                for m in state["manifests"]:
                    entries = state["contents"][m]
                    live_ids = {self._entry_id(a) for s, a in entries if s != "DELETED"}
                    if live_ids & removed:
                        rewritten = [("DELETED" if self._entry_id(a) in removed else "EXISTING", a)
                                     for s, a in entries if s != "DELETED"]
                        name = self._write_manifest(desc, rewritten)
                        written.append(name)
                        manifests.append(name)
                    elif live_ids:
                        manifests.append(m)
        if adds:
            name = self._write_manifest(desc, [("ADDED", a) for a in adds])
            written.append(name)
            manifests.append(name)
        list_name = f"snap-{entry.version}-{uuid.uuid4().hex[:12]}.manifestlist"
        self.store.write(self.meta_dir / list_name, dumps_lines({"manifest": m} for m in manifests))
        written.append(list_name)
        snaps = prior_snaps + [{"version": entry.version, "parent": entry.parent_version, "kind": entry.kind.value,
                                "manifest_list": list_name, "expired_below": new.expired_below}]
        snaps = [s for s in snaps if s["version"] >= new.expired_below]
        body = dumps_lines([{"table": desc.to_json()}] + [{"snapshot": s} for s in snaps])
        if not self.store.create_exclusive(self.metadata_path(entry.version), body):
            for name in written:
                self.store.delete(self.meta_dir / name)
            return False
        new.layout_state = None
        return True

    def expire(self, names: list[str], bound: int, history: list[Snapshot]) -> None:
        fresh = self.list()
        head, snaps = self._read_metadata(fresh)
        keep_lists = {s["manifest_list"] for s in snaps}
        keep_manifests: set[str] = set()
        for s in snaps:
            keep_manifests.update(ln["manifest"] for ln in loads_lines(self._read_file(self.meta_dir / s["manifest_list"], s["version"])))
        for n in fresh:
            if n.endswith(".manifestlist") and n not in keep_lists:
                self.store.delete(self.meta_dir / n)
            elif n.endswith(".mf") and n not in keep_manifests:
                self.store.delete(self.meta_dir / n)
            elif (m := _METADATA.match(n)) and int(m.group(1)) < bound:
                self.store.delete(self.meta_dir / n)


class HudiLayout(MetadataLayout):
    kind = Layout.HUDI_STYLE

    def timeline_path(self, v: int) -> Path:
        return self.meta_dir / f"{v}.timeline"

    @property
    def index_path(self) -> Path:
        return self.meta_dir / "index.meta"

    def latest_version(self, names: list[str]) -> int:
        vs = _versions(names, _TIMELINE)
        if not vs:
            raise VersionNotFound("table has no versions")
        return vs[-1]

    @staticmethod
    def _block(entry: CommitEntry, desc: TableDescriptor) -> bytes:
        return encode_commit(entry, desc) + dumps_lines([{"end": entry.version}])

    def _load_index(self, names: list[str]) -> tuple[Snapshot | None, dict[int, CommitEntry]]:
        """Base state plus every fully appended commit block of ``index.meta``."""
        if "index.meta" not in names:
            return None, {}
        try:
            raw = self.store.read(self.index_path)
        except FileNotFoundError:
            return None, {}
        # an append may be in flight; only complete lines and closed blocks count
        raw = raw[: raw.rfind(b"\n") + 1]
        lines = loads_lines(raw)
        if not lines or "index" not in lines[0]:
            return None, {}
        n_state = lines[0]["index"]["state_lines"]
        base = decode_state(lines[1: 1 + n_state])
        entries: dict[int, CommitEntry] = {}
        block: list[dict] = []
        for line in lines[1 + n_state:]:
            if "end" in line:
                if block:
                    entry = decode_commit(dumps_lines(block), base.descriptor)
                    if entry.version > base.version:
                        entries[entry.version] = entry
                block = []
            else:
                block.append(line)
        return base, entries

    def _walk(self, names: list[str], upto: int) -> list[Snapshot]:
        timeline = set(_versions(names, _TIMELINE))
        base, entries = self._load_index(names)
        snap = base
        out = [base] if base is not None else []
        if base is not None and upto < base.version:
            raise VersionNotFound(f"version {upto} was archived (index starts at {base.version})")
        for v in range((base.version + 1) if base is not None else 0, upto + 1):
            entry = entries.get(v)
            if entry is None:
                # index lags the timeline: fall back to the timeline file itself
                if v not in timeline:
                    raise VersionNotFound(f"version {v} missing from timeline")
                entry = decode_commit(self._read_file(self.timeline_path(v), v), snap.descriptor if snap else None)
            snap = apply_commit(snap, entry)
            out.append(snap)
        return out

    def read(self, names: list[str], asof: int | None = None) -> Snapshot:
        target = self._check_target(asof, self.latest_version(names))
        if target not in set(_versions(names, _TIMELINE)):
            raise VersionNotFound(f"version {target} was archived")
        snap = self._walk(names, target)[-1]
        return _fold_checked(snap, target)

    def history(self, names: list[str]) -> list[Snapshot]:
        out = self._walk(names, self.latest_version(names))
        return [s for s in out if s.version >= out[-1].expired_below]

    def publish(self, parent: Snapshot | None, entry: CommitEntry, new: Snapshot) -> bool:
        return self.store.create_exclusive(self.timeline_path(entry.version), encode_commit(entry, new.descriptor))

    def after_publish(self, entry: CommitEntry, new: Snapshot) -> None:
        if entry.version == 0:
            self._write_index(new, b"")
        else:
            self.store.append(self.index_path, self._block(entry, new.descriptor))

    def _write_index(self, base: Snapshot, tail: bytes) -> None:
        state = encode_state(base)
        self.store.write(self.index_path, dumps_lines([{"index": {"state_lines": len(state)}}] + state) + tail)

    def expire(self, names: list[str], bound: int, history: list[Snapshot]) -> None:
        fresh = self.list()
        walked = self._walk(fresh, self.latest_version(fresh))
        at_bound = next(s for s in walked if s.version == bound)
        _, entries = self._load_index(fresh)
        tail = b""
        for prev, snap in zip(walked, walked[1:]):
            if snap.version > bound:
                entry = entries.get(snap.version)
                if entry is None:
                    entry = decode_commit(self._read_file(self.timeline_path(snap.version), snap.version), prev.descriptor)
                tail += self._block(entry, prev.descriptor)
        self._write_index(at_bound, tail)
        for v in _versions(fresh, _TIMELINE):
            if v < bound:
                self.store.delete(self.timeline_path(v))


LAYOUTS: dict[Layout, type[MetadataLayout]] = {
    Layout.DELTA_STYLE: DeltaLayout,
    Layout.ICEBERG_STYLE: IcebergLayout,
    Layout.HUDI_STYLE: HudiLayout,
}
