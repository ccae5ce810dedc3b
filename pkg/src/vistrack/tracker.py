"""
Online identity assignment for per-frame instance detections.

Each frame's embeddings are stored as a node together with the track ids they
were given.  A new frame is scored against the latest ``fusion_depth`` nodes,
the per-node similarities are fused by an entrywise median over track ids, and
detections are assigned in three passes: Kalman gating removes implausible
pairs, appearance matching runs on the fused similarities, and mask (or box)
IOU matching picks up what is left.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from vistrack.affinity import SCORERS, associate
from vistrack.assignment import solve_assignment
from vistrack.embedding import EmbeddingMatrix, FeatureMapStack, build_embedding_matrix, embed_mask, select_detections
from vistrack.masks import BinaryMask, BoundingBox, bbox_iou, bbox_of, mask_iou_matrix, pixel_extent
from vistrack.motion import CHI2_4DOF_95, KalmanState, NoiseModel, kf_init, kf_predict, kf_update, mahalanobis_sq_many

__all__ = [
    "TrackerConfig",
    "Detection",
    "Track",
    "NodeRecord",
    "FrameReport",
    "Tracker",
    "pair_similarity",
    "fuse_similarity",
    "attach_embeddings",
    "track_sequence",
]

SAMPLING_STRATEGIES = ("centroid_max_contour", "bbox_center")
IOU_MODES = ("mask", "bbox", "none")


@dataclass(frozen=True)
class TrackerConfig:
    n_max: int = 50
    t_max: int = 10
    tau: int = 30
    e: int = 352
    gamma: float = 0.2
    theta_emb: float = 0.5
    theta_iou: float = 0.3
    gate_threshold: float = CHI2_4DOF_95
    fusion_depth: int = 4
    sampling_strategy: str = "centroid_max_contour"
    iou_mode: str = "mask"
    use_kalman: bool = True
    strict: bool = True
    scorer: str = "cosine"
    affinity_scale: float = 10.0
    history_cap: int = 30
    pos_std_weight: float = 1.0 / 20
    vel_std_weight: float = 1.0 / 160

    def __post_init__(self):
        def bad(key, why):
            raise ValueError(f"config key {key!r} out of range: {why}")

        for key in ("n_max", "t_max", "e", "fusion_depth", "history_cap"):
            if int(getattr(self, key)) < 1:
                bad(key, "must be >= 1")
        if self.tau < 0:
            bad("tau", "must be >= 0")
        for key in ("theta_emb", "theta_iou"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                bad(key, "must lie in [0, 1]")
        if not self.gate_threshold > 0:
            bad("gate_threshold", "must be positive")
        for key in ("gamma", "affinity_scale", "pos_std_weight", "vel_std_weight"):
            if not math.isfinite(getattr(self, key)):
                bad(key, "must be finite")
        if self.affinity_scale <= 0:
            bad("affinity_scale", "must be positive")
        if self.pos_std_weight <= 0 or self.vel_std_weight <= 0:
            bad("pos_std_weight" if self.pos_std_weight <= 0 else "vel_std_weight", "must be positive")
        if self.sampling_strategy not in SAMPLING_STRATEGIES:
            bad("sampling_strategy", f"must be one of {SAMPLING_STRATEGIES}")
        if self.iou_mode not in IOU_MODES:
            bad("iou_mode", f"must be one of {IOU_MODES}")
        if self.scorer not in SCORERS:
            bad("scorer", f"must be one of {tuple(SCORERS)}")

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(pos_weight=self.pos_std_weight, vel_weight=self.vel_std_weight)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrackerConfig:
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config key {sorted(unknown)[0]!r}")
        return cls(**d)


@dataclass
class Detection:
    frame_index: int
    mask: BinaryMask
    confidence: float = 1.0
    embedding: np.ndarray | None = None
    box: BoundingBox = field(init=False)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        self.box = bbox_of(self.mask)
        if self.embedding is not None:
            self.embedding = np.asarray(self.embedding, dtype=np.float64).ravel()


@dataclass
class Track:
    id: int
    kstate: KalmanState
    last_mask: BinaryMask
    embedding_history: deque
    age: int = 0
    time_since_update: int = 0
    status: str = "active"


@dataclass(frozen=True)
class NodeRecord:
    timestamp: int
    embeddings: EmbeddingMatrix
    track_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.track_ids) != self.embeddings.count:
            raise ValueError("track ids must align with the node's real columns")


@dataclass
class FrameReport:
    frame: int
    # detection index -> track id, for every kept detection
    assignments: dict[int, int]
    matched_by: dict[int, str]
    new_tracks: list[int]
    removed_tracks: list[int]


def pair_similarity(node: NodeRecord, current: EmbeddingMatrix, cfg: TrackerConfig) -> np.ndarray:
    """n_node x (n_cur + 1): best-direction match probability, then exit probability."""
    if node.embeddings.e != current.e:
        raise ValueError(f"embedding length mismatch: {node.embeddings.e} vs {current.e}")
    res = associate(node.embeddings, current, cfg.gamma, SCORERS[cfg.scorer], cfg.affinity_scale)
    a, b, n = node.embeddings.count, current.count, current.n_max
    out = np.empty((a, b + 1))
    out[:, :b] = np.maximum(res.p_fw[:a, :b], res.p_rv[:a, :b])
    out[:, b] = res.p_rv[:a, n]
    return out


def fuse_similarity(nodes: Sequence[NodeRecord], current: EmbeddingMatrix,
                    track_rows: dict[int, int], cfg: TrackerConfig) -> np.ndarray:
    """Median over nodes of per-track similarity rows, N_tr x (N_dt + 1).

    A node that does not contain a track does not vote for that track's row;
    tracks absent from every node get all zeros.
    """
    n_tr, n_dt = len(track_rows), current.count
    if not nodes or n_tr == 0:
        return np.zeros((n_tr, n_dt + 1))
    stacked = np.full((len(nodes), n_tr, n_dt + 1), np.nan)
    for k, node in enumerate(nodes):
        sim = pair_similarity(node, current, cfg)
        for r, tid in enumerate(node.track_ids):
            row = track_rows.get(tid)
            if row is not None:
                stacked[k, row] = sim[r]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fused = np.nanmedian(stacked, axis=0)
    return np.nan_to_num(fused, nan=0.0)


def attach_embeddings(detections: Iterable[Detection], stack: FeatureMapStack,
                      strategy: str = "centroid_max_contour", e: int | None = None) -> list[Detection]:
    out = []
    for det in detections:
        out.append(Detection(det.frame_index, det.mask, det.confidence,
                             embed_mask(stack, det.mask, strategy, e)))
    return out


class Tracker:
    """Single-sequence tracker; call :meth:`step` once per frame in order."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.noise = cfg.noise
        self.tracks: dict[int, Track] = {}
        self.nodes: deque[NodeRecord] = deque(maxlen=cfg.fusion_depth)
        self.next_id = 1
        self.last_frame: int | None = None

    def _iou(self, tracks: list[Track], dets: list[Detection]) -> np.ndarray:
        if self.cfg.iou_mode == "mask":
            return mask_iou_matrix([t.last_mask for t in tracks], [d.mask for d in dets])
        boxes_t = [pixel_extent(bbox_of(t.last_mask)) for t in tracks]
        boxes_d = [pixel_extent(d.box) for d in dets]
        return np.array([[bbox_iou(a, b) for b in boxes_d] for a in boxes_t]).reshape(len(tracks), len(dets))

    def _new_track(self, det: Detection) -> Track:
        track = Track(
            id=self.next_id,
            kstate=kf_init(pixel_extent(det.box), self.noise),
            last_mask=det.mask,
            embedding_history=deque([det.embedding], maxlen=self.cfg.history_cap),
        )
        self.next_id += 1
        self.tracks[track.id] = track
        return track

    def step(self, frame_index: int, detections: Sequence[Detection]) -> FrameReport:
        cfg = self.cfg
        if self.last_frame is not None and frame_index <= self.last_frame:
            raise ValueError(f"frame index {frame_index} does not follow {self.last_frame}")
        for det in detections:
            if det.embedding is None:
                raise ValueError("detection has no embedding; attach one from feature maps first")
            if det.embedding.size != cfg.e:
                raise ValueError(f"embedding length {det.embedding.size} != e={cfg.e}")
        kept = select_detections([d.confidence for d in detections], cfg.n_max, cfg.strict)
        dets = [detections[i] for i in kept]
        current = build_embedding_matrix([d.embedding for d in dets], cfg.n_max, cfg.e)

        active = sorted(self.tracks.values(), key=lambda t: t.id)
        for t in active:
            t.kstate = kf_predict(t.kstate, self.noise)
        rows = {t.id: r for r, t in enumerate(active)}
        n_tr, n_dt = len(active), len(dets)

        sim = fuse_similarity(list(self.nodes), current, rows, cfg)

        forbidden = np.zeros((n_tr, n_dt), dtype=bool)
        if cfg.use_kalman:
            boxes = [pixel_extent(d.box) for d in dets]
            for r, t in enumerate(active):
                forbidden[r] = ~(mahalanobis_sq_many(t.kstate, boxes, self.noise) <= cfg.gate_threshold)

        match: dict[int, int] = {}  # det column -> track row
        how: dict[int, str] = {}
        if n_tr and n_dt:
            scores = sim[:, :n_dt]
            exit_col = sim[:, n_dt]
            cost = np.where(forbidden, np.inf, -scores)
            for r, c in solve_assignment(cost).pairs:
                if scores[r, c] >= cfg.theta_emb and scores[r, c] >= exit_col[r]:
                    match[c] = r
                    how[c] = "feature"

            if cfg.iou_mode != "none":
                left_r = [r for r in range(n_tr) if r not in match.values()]
                left_c = [c for c in range(n_dt) if c not in match]
                if left_r and left_c:
                    iou = self._iou([active[r] for r in left_r], [dets[c] for c in left_c])
                    block = forbidden[np.ix_(left_r, left_c)] | (iou < cfg.theta_iou)
                    cost = np.where(block, np.inf, 1.0 - iou)
                    for i, j in solve_assignment(cost).pairs:
                        match[left_c[j]] = left_r[i]
                        how[left_c[j]] = "iou"

        assignments: dict[int, int] = {}
        new_ids: list[int] = []
        matched_rows = set(match.values())
        for c, d in enumerate(dets):
            if c in match:
                t = active[match[c]]
                t.kstate = kf_update(t.kstate, pixel_extent(d.box), self.noise)
                t.last_mask = d.mask
                t.embedding_history.append(d.embedding)
                t.time_since_update = 0
            else:
                t = self._new_track(d)
                new_ids.append(t.id)
                how[c] = "new"
            assignments[kept[c]] = t.id

        removed: list[int] = []
        for r, t in enumerate(active):
            t.age += 1
            if r in matched_rows:
                continue
            t.time_since_update += 1
            if t.time_since_update > cfg.tau:
                t.status = "removed"
                del self.tracks[t.id]
                removed.append(t.id)

        self.nodes.append(NodeRecord(frame_index, current, tuple(assignments[kept[c]] for c in range(n_dt))))
        self.last_frame = frame_index
        return FrameReport(
            frame=frame_index,
            assignments=assignments,
            matched_by={kept[c]: how[c] for c in range(n_dt)},
            new_tracks=new_ids,
            removed_tracks=removed,
        )


def track_sequence(frames: Sequence[Sequence[Detection]], cfg: TrackerConfig = TrackerConfig()) -> list[FrameReport]:
    """Run a fresh tracker over frames 0..len(frames)-1."""
    tracker = Tracker(cfg)
    return [tracker.step(t, dets) for t, dets in enumerate(frames)]
