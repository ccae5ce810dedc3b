"""
Pairwise affinities between two frames, entry/exit padding, forward and
reverse probability matrices, and the association losses.

Rows of every matrix index the earlier frame's instances, columns the later
frame's.  The extra last row of the forward matrix is the "entered" slot of
each later-frame detection; the extra last column of the reverse matrix is
the "exited" slot of each earlier-frame instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from vistrack.embedding import EmbeddingMatrix

__all__ = [
    "LOG_CLAMP",
    "AffinityResult",
    "GroundTruthAssociation",
    "LossReport",
    "CombinedLossInput",
    "cosine_scorer",
    "neg_sq_euclidean_scorer",
    "SCORERS",
    "affinity_scores",
    "pad_dynamic",
    "column_softmax",
    "row_softmax",
    "normalize",
    "associate",
    "forward_loss",
    "reverse_loss",
    "nonmax_loss",
    "match_loss",
    "combined_loss",
    "association_losses",
]

LOG_CLAMP = 1e-12

Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def cosine_scorer(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Cosine similarity between columns of ``prev`` (e x a) and ``cur`` (e x b)."""
    pn = np.linalg.norm(prev, axis=0)
    cn = np.linalg.norm(cur, axis=0)
    pn[pn == 0] = 1.0
    cn[cn == 0] = 1.0
    return (prev / pn).T @ (cur / cn)


def neg_sq_euclidean_scorer(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    sq = (prev**2).sum(0)[:, None] + (cur**2).sum(0)[None, :] - 2.0 * prev.T @ cur
    return -np.maximum(sq, 0.0)


SCORERS: dict[str, Scorer] = {
    "cosine": cosine_scorer,
    "neg_sq_euclidean": neg_sq_euclidean_scorer,
}


def affinity_scores(e_cur: EmbeddingMatrix, e_prev: EmbeddingMatrix,
                    scorer: Scorer = cosine_scorer, scale: float = 1.0) -> np.ndarray:
    """Raw n_max x n_max scores; entry (i, j) compares prev column i to current column j.

    Pairs touching a padded column score 0.  ``scale`` multiplies real-pair scores.
    """
    if e_cur.values.shape != e_prev.values.shape:
        raise ValueError(
            f"embedding matrices differ in shape: {e_prev.values.shape} vs {e_cur.values.shape}"
        )
    n_max = e_cur.n_max
    out = np.zeros((n_max, n_max))
    a, b = e_prev.count, e_cur.count
    if a and b:
        out[:a, :b] = scale * scorer(e_prev.values[:, :a], e_cur.values[:, :b])
    return out


def pad_dynamic(t_prime: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    t_prime = np.asarray(t_prime, dtype=np.float64)
    n, m = t_prime.shape
    m_fw = np.vstack([t_prime, np.full((1, m), gamma)])
    m_rv = np.hstack([t_prime, np.full((n, 1), gamma)])
    return m_fw, m_rv


def column_softmax(m: np.ndarray) -> np.ndarray:
    z = np.exp(m - m.max(axis=0, keepdims=True))
    return z / z.sum(axis=0, keepdims=True)


def row_softmax(m: np.ndarray) -> np.ndarray:
    z = np.exp(m - m.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def normalize(m_fw: np.ndarray, m_rv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return column_softmax(np.asarray(m_fw, dtype=np.float64)), row_softmax(np.asarray(m_rv, dtype=np.float64))


@dataclass(frozen=True)
class AffinityResult:
    t_prime: np.ndarray
    m_fw: np.ndarray
    m_rv: np.ndarray
    p_fw: np.ndarray
    p_rv: np.ndarray


def associate(e_prev: EmbeddingMatrix, e_cur: EmbeddingMatrix, gamma: float,
              scorer: Scorer = cosine_scorer, scale: float = 1.0) -> AffinityResult:
    t_prime = affinity_scores(e_cur, e_prev, scorer, scale)
    m_fw, m_rv = pad_dynamic(t_prime, gamma)
    p_fw, p_rv = normalize(m_fw, m_rv)
    return AffinityResult(t_prime, m_fw, m_rv, p_fw, p_rv)


@dataclass(frozen=True)
class GroundTruthAssociation:
    """Binary n_max x n_max association plus the counts of real instances.

    ``n_prev`` real rows and ``n_cur`` real columns; an unmatched real column
    is marked in the entry row of ``g_fw``, an unmatched real row in the exit
    column of ``g_rv``.
    """

    g: np.ndarray
    n_prev: int
    n_cur: int

    def __post_init__(self):
        g = np.asarray(self.g, dtype=np.float64)
        object.__setattr__(self, "g", g)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError(f"association matrix must be square, got {g.shape}")
        if not np.isin(g, (0.0, 1.0)).all():
            raise ValueError("association matrix must be binary")
        if (g.sum(0) > 1).any() or (g.sum(1) > 1).any():
            raise ValueError("each row and column may hold at most one association")
        if g[self.n_prev:, :].any() or g[:, self.n_cur:].any():
            raise ValueError("association touches a padded instance")

    @classmethod
    def from_pairs(cls, pairs, n_max: int, n_prev: int, n_cur: int) -> GroundTruthAssociation:
        g = np.zeros((n_max, n_max))
        for i, j in pairs:
            g[i, j] = 1.0
        return cls(g, n_prev, n_cur)

    @property
    def g_fw(self) -> np.ndarray:
        n = self.g.shape[0]
        out = np.vstack([self.g, np.zeros((1, n))])
        unmatched = self.g[:, : self.n_cur].sum(0) == 0
        out[n, : self.n_cur][unmatched] = 1.0
        return out

    @property
    def g_rv(self) -> np.ndarray:
        n = self.g.shape[0]
        out = np.hstack([self.g, np.zeros((n, 1))])
        unmatched = self.g[: self.n_prev, :].sum(1) == 0
        out[: self.n_prev, n][unmatched] = 1.0
        return out


@dataclass(frozen=True)
class LossReport:
    l_fw: float
    l_rv: float
    l_nm: float
    l_match: float

    def to_json(self) -> dict:
        return {"l_fw": self.l_fw, "l_rv": self.l_rv, "l_nm": self.l_nm, "l_match": self.l_match}


@dataclass(frozen=True)
class CombinedLossInput:
    l_detseg_prev: float
    l_detseg_cur: float
    l_match: float
    s_i: float = 0.0
    s_j: float = 0.0

    def __post_init__(self):
        for name in ("l_detseg_prev", "l_detseg_cur", "l_match"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _weighted_nll(p: np.ndarray, g: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    total = g.sum()
    if total == 0:
        raise ValueError("no ground-truth pairs")
    nll = -np.log(np.maximum(p, LOG_CLAMP))
    return float((g * nll).sum() / total)


def forward_loss(p_fw: np.ndarray, g_fw: np.ndarray) -> float:
    return _weighted_nll(p_fw, g_fw)


def reverse_loss(p_rv: np.ndarray, g_rv: np.ndarray) -> float:
    return _weighted_nll(p_rv, g_rv)


def nonmax_loss(p_fw: np.ndarray, p_rv: np.ndarray, g: np.ndarray) -> float:
    """Loss on the better of the two directions at each real ground-truth pair."""
    p_fw = np.asarray(p_fw)
    p_rv = np.asarray(p_rv)
    g = np.asarray(g)
    n = g.shape[0]
    if p_fw.shape != (n + 1, n) or p_rv.shape != (n, n + 1):
        raise ValueError(f"padded shapes expected for n_max={n}, got {p_fw.shape} and {p_rv.shape}")
    return _weighted_nll(np.maximum(p_fw[:n, :], p_rv[:, :n]), g)


def match_loss(l_fw: float, l_rv: float, l_nm: float) -> LossReport:
    for v in (l_fw, l_rv, l_nm):
        if v < 0:
            raise ValueError("losses must be non-negative")
    return LossReport(l_fw, l_rv, l_nm, (l_fw + l_rv + l_nm) / 3)


def combined_loss(inp: CombinedLossInput) -> float:
    """Uncertainty-weighted sum of the detection/segmentation and matching losses."""
    det_seg = inp.l_detseg_prev + inp.l_detseg_cur
    return 0.5 * (det_seg / math.exp(inp.s_i) + inp.s_i + inp.l_match / math.exp(inp.s_j) + inp.s_j)


def association_losses(p_fw: np.ndarray, p_rv: np.ndarray, gt: GroundTruthAssociation) -> LossReport:
    return match_loss(
        forward_loss(p_fw, gt.g_fw),
        reverse_loss(p_rv, gt.g_rv),
        nonmax_loss(p_fw, p_rv, gt.g),
    )
