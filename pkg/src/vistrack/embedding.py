"""Multi-scale feature sampling and the zero-padded per-frame embedding matrix."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from vistrack.masks import BinaryMask, Centroid, bbox_center, bbox_of, centroid

__all__ = [
    "DEFAULT_LAYER_INDICES",
    "DEFAULT_LAYER_CHANNELS",
    "FeatureMap",
    "FeatureMapStack",
    "EmbeddingMatrix",
    "InstanceOverflow",
    "sample_embedding",
    "sampling_point",
    "embed_mask",
    "select_detections",
    "build_embedding_matrix",
]

# backbone layers feeding the default 11 x 32 = 352 channel profile
DEFAULT_LAYER_INDICES = (7, 10, 16, 22, 34, 46, 58, 70, 82, 91, 100)
DEFAULT_LAYER_CHANNELS = (32,) * len(DEFAULT_LAYER_INDICES)


class InstanceOverflow(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMap:
    """Dense (channels, height, width) map; ``stride`` is input pixels per cell."""

    values: np.ndarray
    stride: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) == 0:
            raise ValueError(f"feature map must be (c, h, w), got {values.shape}")
        if not self.stride > 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureMapStack:
    maps: tuple[FeatureMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise ValueError("feature map stack is empty")

    @property
    def e(self) -> int:
        return sum(m.channels for m in self.maps)


@dataclass
class EmbeddingMatrix:
    values: np.ndarray  # e x n_max, columns >= count are zero
    count: int
    kept: tuple[int, ...] = field(default=())

    @property
    def e(self) -> int:
        return self.values.shape[0]

    @property
    def n_max(self) -> int:
        return self.values.shape[1]


def sample_embedding(stack: FeatureMapStack, point: Centroid, e: int | None = None) -> np.ndarray:
    """Concatenate the nearest-cell channel vector of every map at ``point``."""
    if e is not None and stack.e != e:
        raise ValueError(f"stack provides {stack.e} channels, configured e is {e}")
    parts = []
    for fmap in stack.maps:
        _, h, w = fmap.values.shape
        col = min(max(int(np.floor(point.x / fmap.stride)), 0), w - 1)
        row = min(max(int(np.floor(point.y / fmap.stride)), 0), h - 1)
        parts.append(fmap.values[:, row, col])
    return np.concatenate(parts)


def sampling_point(mask: BinaryMask, strategy: str = "centroid_max_contour") -> Centroid:
    if strategy == "centroid_max_contour":
        return centroid(mask)
    if strategy == "bbox_center":
        return bbox_center(bbox_of(mask))
    raise ValueError(f"unknown sampling strategy {strategy!r}")


def embed_mask(stack: FeatureMapStack, mask: BinaryMask, strategy: str = "centroid_max_contour",
               e: int | None = None) -> np.ndarray:
    return sample_embedding(stack, sampling_point(mask, strategy), e)


def select_detections(confidences: Sequence[float], n_max: int, strict: bool = True) -> list[int]:
    """Indices of detections kept under the ``n_max`` cap, in detection order.

    Lenient mode keeps the ``n_max`` highest-confidence detections; ties go to
    the earlier detection.
    """
    n = len(confidences)
    if n <= n_max:
        return list(range(n))
    if strict:
        raise InstanceOverflow(f"instance overflow: {n} detections exceed n_max={n_max}")
    order = sorted(range(n), key=lambda i: (-float(confidences[i]), i))
    return sorted(order[:n_max])


def build_embedding_matrix(embeddings: Sequence[np.ndarray], n_max: int, e: int | None = None,
                           confidences: Sequence[float] | None = None,
                           strict: bool = True) -> EmbeddingMatrix:
    embeddings = [np.asarray(v, dtype=np.float64).ravel() for v in embeddings]
    if e is None:
        if not embeddings:
            raise ValueError("embedding length unknown for an empty frame; pass e")
        e = embeddings[0].size
    for v in embeddings:
        if v.size != e:
            raise ValueError(f"embedding length {v.size} != e={e}")
    if confidences is None:
        confidences = [1.0] * len(embeddings)
    kept = select_detections(confidences, n_max, strict)
    values = np.zeros((e, n_max))
    for col, idx in enumerate(kept):
        values[:, col] = embeddings[idx]
    return EmbeddingMatrix(values, len(kept), tuple(kept))
