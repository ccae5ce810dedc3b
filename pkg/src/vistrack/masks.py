"""Binary masks as run-length encodings, plus moments, centroids and IOU."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from vistrack._kernels import label_components

__all__ = [
    "BinaryMask",
    "BoundingBox",
    "Centroid",
    "encode_rle",
    "decode_rle",
    "max_area_component",
    "moment",
    "centroid",
    "mask_iou",
    "mask_iou_matrix",
    "foreground_indices",
    "bbox_of",
    "bbox_center",
    "pixel_extent",
    "bbox_iou",
]


@dataclass(frozen=True)
class BinaryMask:
    """Row-major, background-first run-length encoded mask.

    ``runs`` alternates background/foreground counts.  Only the leading
    background run may be zero.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"mask dimensions must be positive, got {self.width}x{self.height}")
        runs = tuple(int(r) for r in self.runs)
        object.__setattr__(self, "runs", runs)
        if any(r < 0 for r in runs):
            raise ValueError("run lengths must be non-negative")
        if sum(runs) != self.width * self.height:
            raise ValueError(
                f"runs sum to {sum(runs)}, expected {self.width * self.height}"
            )
        if any(r == 0 for r in runs[1:]):
            raise ValueError("only the leading background run may be zero")

    @classmethod
    def from_array(cls, grid) -> BinaryMask:
        return encode_rle(grid)

    def to_array(self) -> np.ndarray:
        return decode_rle(self)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def area(self) -> int:
        return sum(self.runs[1::2])

    def to_json(self) -> dict:
        return {"w": self.width, "h": self.height, "runs": list(self.runs)}

    @classmethod
    def from_json(cls, obj: dict) -> BinaryMask:
        try:
            return cls(int(obj["w"]), int(obj["h"]), tuple(obj["runs"]))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed RLE object: {obj!r}") from exc


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"invalid box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class Centroid:
    x: float
    y: float


def encode_rle(grid) -> BinaryMask:
    grid = np.asarray(grid, dtype=bool)
    if grid.ndim != 2 or grid.shape[0] == 0 or grid.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D grid, got shape {grid.shape}")
    h, w = grid.shape
    flat = grid.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return BinaryMask(w, h, tuple(runs))


def decode_rle(mask: BinaryMask) -> np.ndarray:
    runs = np.asarray(mask.runs, dtype=np.int64)
    if runs.sum() != mask.width * mask.height:
        raise ValueError("run lengths do not cover the mask")
    values = (np.arange(runs.size) % 2).astype(bool)
    return np.repeat(values, runs).reshape(mask.height, mask.width)


def _largest_component(grid: np.ndarray) -> np.ndarray:
    labels, n = label_components(np.ascontiguousarray(grid, dtype=np.bool_))
    if n == 0:
        raise ValueError("empty mask")
    if n == 1:
        return grid
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    counts[0] = -1
    # argmax returns the first maximum, i.e. the earliest component in scan order
    return labels == int(np.argmax(counts))


def max_area_component(mask: BinaryMask) -> BinaryMask:
    """Largest 8-connected foreground component, same dimensions as ``mask``."""
    grid = decode_rle(mask)
    out = _largest_component(grid)
    if out is grid:
        return mask
    return encode_rle(out)


def moment(mask: BinaryMask, p: int, q: int) -> float:
    """Raw image moment sum(x**p * y**q) over foreground pixels, zero-based."""
    if p < 0 or q < 0:
        raise ValueError("moment orders must be non-negative")
    ys, xs = np.nonzero(decode_rle(mask))
    if xs.size == 0:
        return 0.0
    xs = xs.astype(np.int64)
    ys = ys.astype(np.int64)
    return float(np.sum(xs**p * ys**q))


def centroid(mask: BinaryMask) -> Centroid:
    """Moment centroid of the maximum-area component."""
    grid = decode_rle(mask)
    if not grid.any():
        raise ValueError("empty mask")
    ys, xs = np.nonzero(_largest_component(grid))
    m00 = xs.size
    return Centroid(float(xs.sum()) / m00, float(ys.sum()) / m00)


def _check_same_dims(a: BinaryMask, b: BinaryMask):
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    _check_same_dims(a, b)
    ga = decode_rle(a)
    gb = decode_rle(b)
    union = np.count_nonzero(ga | gb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ga & gb) / union


def foreground_indices(mask: BinaryMask) -> np.ndarray:
    """Flat row-major indices of foreground pixels, read straight off the runs."""
    runs = np.asarray(mask.runs, dtype=np.int64)
    ends = np.cumsum(runs)
    starts = ends - runs
    fg_starts, fg_lens = starts[1::2], runs[1::2]
    if fg_lens.size == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.repeat(fg_starts - np.cumsum(np.concatenate(([0], fg_lens[:-1]))), fg_lens)
    return np.arange(fg_lens.sum(), dtype=np.int64) + offsets


def _indicator(masks: Sequence[BinaryMask], n_pixels: int) -> sparse.csr_matrix:
    idx = [foreground_indices(m) for m in masks]
    indptr = np.concatenate(([0], np.cumsum([i.size for i in idx])))
    indices = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
    data = np.ones(indices.size)
    return sparse.csr_matrix((data, indices, indptr), shape=(len(masks), n_pixels))


def mask_iou_matrix(a: Sequence[BinaryMask], b: Sequence[BinaryMask]) -> np.ndarray:
    """Pairwise IOU, shape (len(a), len(b))."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    dims = {(m.width, m.height) for m in (*a, *b)}
    if len(dims) != 1:
        raise ValueError(f"mask dimensions differ: {sorted(dims)}")
    w, h = dims.pop()
    area_a = np.array([m.area for m in a], dtype=np.float64)
    area_b = np.array([m.area for m in b], dtype=np.float64)
    inter = (_indicator(a, w * h) @ _indicator(b, w * h).T).toarray()
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def bbox_of(mask: BinaryMask) -> BoundingBox:
    """Tight box in pixel-centre coordinates; a single pixel gives a zero-size box."""
    ys, xs = np.nonzero(decode_rle(mask))
    if xs.size == 0:
        raise ValueError("empty mask")
    return BoundingBox(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))


def bbox_center(box: BoundingBox) -> Centroid:
    return Centroid((box.x_min + box.x_max) / 2.0, (box.y_min + box.y_max) / 2.0)


def pixel_extent(box: BoundingBox) -> BoundingBox:
    """Continuous box covering the pixel cells of a pixel-centre box."""
    return BoundingBox(box.x_min, box.y_min, box.x_max + 1.0, box.y_max + 1.0)


def bbox_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Rectangle IOU on continuous extents.

    Two zero-area boxes have IOU 1 when identical and 0 otherwise.
    """
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 1.0 if a == b else 0.0
    return inter / union
