"""Wire formats: JSONL detection/track records, config files, feature-map archives."""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from vistrack.embedding import FeatureMap, FeatureMapStack
from vistrack.masks import BinaryMask
from vistrack.metrics import LabeledSequence
from vistrack.tracker import Detection, FrameReport, TrackerConfig

__all__ = [
    "FormatError",
    "DetectionRecord",
    "TrackRecord",
    "atomic_write_text",
    "atomic_write_bytes",
    "dumps",
    "read_jsonl",
    "write_jsonl",
    "read_json",
    "load_tracker_config",
    "detection_records",
    "parse_detections",
    "track_records",
    "parse_tracks",
    "tracks_to_sequence",
    "write_feature_archive",
    "FeatureArchive",
]

# fixed zip timestamp so archives are byte-identical across runs
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class FormatError(ValueError):
    """A malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


# ---------------------------------------------------------------------------
# low-level


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v} cannot be serialized")
        return v
    return obj


def dumps(obj, indent: int | None = None) -> str:
    """Canonical JSON: sorted keys, shortest round-tripping float repr."""
    if indent is None:
        return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return json.dumps(_plain(obj), sort_keys=True, indent=indent, allow_nan=False)


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_jsonl(path, records: Iterable[dict]):
    atomic_write_text(path, "".join(dumps(r) + "\n" for r in records))


def read_jsonl(path) -> list[tuple[int, dict]]:
    """``(line_number, object)`` for every non-blank line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", str(path), n) from None
            if not isinstance(obj, dict):
                raise FormatError("record must be a JSON object", str(path), n)
            out.append((n, obj))
    return out


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON ({exc.msg})", str(path), exc.lineno) from None


def load_tracker_config(path=None, **overrides) -> TrackerConfig:
    """Config file keys mirror TrackerConfig fields; ``None`` overrides are ignored."""
    d = {}
    if path is not None:
        d = read_json(path)
        if not isinstance(d, dict):
            raise FormatError("config must be a JSON object", str(path))
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrackerConfig.from_dict(d)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class DetectionRecord:
    frame: int
    mask: BinaryMask
    score: float
    embedding: tuple[float, ...] | None = None
    feature_maps: dict | None = None

    def __post_init__(self):
        if (self.embedding is None) == (self.feature_maps is None):
            raise ValueError("exactly one of embedding / feature_maps must be present")

    def to_json(self) -> dict:
        d = {"frame": self.frame, "mask": self.mask.to_json(), "score": self.score}
        if self.embedding is not None:
            d["embedding"] = list(self.embedding)
        else:
            d["feature_maps"] = self.feature_maps
        return d

    @classmethod
    def from_json(cls, obj: dict) -> DetectionRecord:
        unknown = set(obj) - {"frame", "mask", "score", "embedding", "feature_maps"}
        if unknown:
            raise ValueError(f"unknown field {sorted(unknown)[0]!r}")
        frame = _int_field(obj, "frame")
        emb = obj.get("embedding")
        if emb is not None:
            emb = tuple(float(v) for v in emb)
        fmap = obj.get("feature_maps")
        if fmap is not None and not isinstance(fmap, dict):
            raise ValueError("feature_maps must be an object")
        return cls(frame, BinaryMask.from_json(_field(obj, "mask")), float(_field(obj, "score")), emb, fmap)


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    track_id: int
    mask: BinaryMask
    score: float

    def to_json(self) -> dict:
        return {"frame": self.frame, "track_id": self.track_id, "mask": self.mask.to_json(), "score": self.score}

    @classmethod
    def from_json(cls, obj: dict) -> TrackRecord:
        unknown = set(obj) - {"frame", "track_id", "mask", "score"}
        if unknown:
            raise ValueError(f"unknown field {sorted(unknown)[0]!r}")
        return cls(_int_field(obj, "frame"), _int_field(obj, "track_id"),
                   BinaryMask.from_json(_field(obj, "mask")), float(obj.get("score", 1.0)))


def _field(obj: dict, key: str):
    if key not in obj:
        raise ValueError(f"missing field {key!r}")
    return obj[key]


def _int_field(obj: dict, key: str) -> int:
    v = _field(obj, key)
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ValueError(f"field {key!r} must be a non-negative integer")
    return v


def _parse(path, cls):
    out = []
    for n, obj in read_jsonl(path):
        try:
            out.append(cls.from_json(obj))
        except (ValueError, TypeError) as exc:
            raise FormatError(str(exc), str(path), n) from None
    return out


def detection_records(frames: Sequence[Sequence[Detection]], archive: str | None = None) -> list[dict]:
    """Wire records; with ``archive`` set, detections reference that feature-map file."""
    out = []
    for t, dets in enumerate(frames):
        for d in dets:
            if archive is not None:
                rec = DetectionRecord(t, d.mask, d.confidence, feature_maps={"path": archive, "frame": t})
            else:
                if d.embedding is None:
                    raise ValueError(f"detection in frame {t} has no embedding")
                rec = DetectionRecord(t, d.mask, d.confidence, tuple(d.embedding.tolist()))
            out.append(rec.to_json())
    return out


def parse_detections(path, n_frames: int | None = None) -> tuple[list[DetectionRecord], int]:
    """Records in file order plus the frame count (max frame + 1 unless given)."""
    records = _parse(path, DetectionRecord)
    top = max((r.frame for r in records), default=-1) + 1
    if n_frames is None:
        n_frames = top
    elif top > n_frames:
        raise FormatError(f"frame {top - 1} beyond declared frame count {n_frames}", str(path))
    return records, n_frames


def track_records(frames: Sequence[Sequence[Detection]], reports: Sequence[FrameReport]) -> list[dict]:
    out = []
    for dets, rep in zip(frames, reports):
        rows = sorted((tid, i) for i, tid in rep.assignments.items())
        for tid, i in rows:
            out.append(TrackRecord(rep.frame, tid, dets[i].mask, dets[i].confidence).to_json())
    return out


def parse_tracks(path) -> list[TrackRecord]:
    records = _parse(path, TrackRecord)
    seen = set()
    for r in records:
        key = (r.frame, r.track_id)
        if key in seen:
            raise FormatError(f"duplicate (frame, track_id) = {key}", str(path))
        seen.add(key)
    return records


def tracks_to_sequence(records: Sequence[TrackRecord], n_frames: int) -> LabeledSequence:
    frames: list[list[tuple[int, BinaryMask]]] = [[] for _ in range(n_frames)]
    for r in records:
        if r.frame >= n_frames:
            raise ValueError(f"frame {r.frame} beyond frame count {n_frames}")
        frames[r.frame].append((r.track_id, r.mask))
    return LabeledSequence(frames)


# ---------------------------------------------------------------------------
# feature-map archives


def write_feature_archive(path, stacks: Iterable[FeatureMapStack]):
    """Deterministic .npz holding ``f{t}_m{k}`` arrays and a ``strides`` table."""
    buf = io.BytesIO()
    strides = []
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for t, stack in enumerate(stacks):
            strides.append([m.stride for m in stack.maps])
            for k, m in enumerate(stack.maps):
                _zip_array(zf, f"f{t}_m{k}", np.ascontiguousarray(m.values))
        _zip_array(zf, "strides", np.asarray(strides, dtype=np.float64))
    atomic_write_bytes(path, buf.getvalue())


def _zip_array(zf: zipfile.ZipFile, name: str, arr: np.ndarray):
    info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    with zf.open(info, "w") as fh:
        np.lib.format.write_array(fh, arr, allow_pickle=False)


class FeatureArchive:
    """Lazy reader for archives written by :func:`write_feature_archive`."""

    def __init__(self, path):
        self.path = str(path)
        try:
            self._npz = np.load(self.path, allow_pickle=False)
            self._strides = self._npz["strides"]
        except (OSError, KeyError, ValueError) as exc:
            raise FormatError(f"unreadable feature archive ({exc})", self.path) from None

    def __len__(self):
        return len(self._strides)

    def stack(self, t: int) -> FeatureMapStack:
        if not 0 <= t < len(self):
            raise FormatError(f"feature archive has no frame {t}", self.path)
        return FeatureMapStack(tuple(FeatureMap(self._npz[f"f{t}_m{k}"], float(s))
                                     for k, s in enumerate(self._strides[t])))
