"""
Synthetic scenes for exercising the tracker without a trained network.

Identities are rasterised shapes moving on straight, wall-reflected paths.
Each identity owns a unit base vector; detections either carry that vector
plus Gaussian noise directly, or the scene emits multi-scale feature maps in
which every pixel holds the base vector of the identity painted there, so the
sampling strategy decides which identity an embedding describes.

Randomness comes from one ``numpy.random.SeedSequence`` per scenario, spawned
into fixed child streams (layout, bases, noise, drops, order) so that adding
draws to one stream never perturbs another.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from vistrack.embedding import FeatureMap, FeatureMapStack
from vistrack.masks import BinaryMask, encode_rle
from vistrack.metrics import LabeledSequence
from vistrack.tracker import Detection, attach_embeddings

__all__ = [
    "Crossing",
    "ScenarioConfig",
    "Scenario",
    "generate",
    "rasterize",
    "center_coincidence_fixture",
    "coincidence_scenario",
    "deformation_scenario",
    "clean_scenario_config",
]

SHAPES = ("rectangle", "ellipse", "lshape")
_STREAMS = ("layout", "bases", "noise", "drops", "order")


@dataclass(frozen=True)
class Crossing:
    """Identities ``a`` and ``b`` (1-based) meet half-way through [start, end]."""

    a: int
    b: int
    start: int
    end: int


@dataclass(frozen=True)
class ScenarioConfig:
    n_identities: int = 10
    n_frames: int = 100
    width: int = 320
    height: int = 240
    shape: str = "ellipse"
    size_range: tuple[float, float] = (16.0, 36.0)
    speed_range: tuple[float, float] = (0.5, 2.0)
    jitter_amplitude: float = 0.0
    jitter_period: float = 20.0
    deform_amplitude: float = 0.0
    deform_period: float = 12.0
    embedding_scheme: str = "orthogonal"
    e: int = 352
    embedding_noise: float = 0.0
    twin_similarity: float = 0.0
    drop_prob: float = 0.0
    crossings: tuple[Crossing, ...] = ()
    occlusion: bool = False
    feature_maps: bool = False
    feature_strides: tuple[int, ...] = (1, 2, 4, 8)
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_identities < 1 or self.n_frames < 1:
            raise ValueError("n_identities and n_frames must be >= 1")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if self.embedding_scheme not in ("orthogonal", "random"):
            raise ValueError("embedding_scheme must be 'orthogonal' or 'random'")
        if self.embedding_scheme == "orthogonal" and self.n_identities > self.e:
            raise ValueError("orthogonal bases need n_identities <= e")
        for name in ("drop_prob", "twin_similarity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.embedding_noise < 0 or self.deform_amplitude < 0 or self.jitter_amplitude < 0:
            raise ValueError("noise, deformation and jitter must be non-negative")
        if self.feature_maps and self.e % len(self.feature_strides):
            raise ValueError("e must split evenly across feature maps")
        lo, hi = self.size_range
        if not 1.0 <= lo <= hi:
            raise ValueError("size_range must satisfy 1 <= min <= max")
        reach = hi * (1.0 + self.deform_amplitude) + 2.0 * self.jitter_amplitude
        if reach > min(self.width, self.height):
            raise ValueError("shapes exceed image bounds")
        for c in self.crossings:
            if not (1 <= c.a <= self.n_identities and 1 <= c.b <= self.n_identities and c.a != c.b):
                raise ValueError(f"bad crossing identities {c}")
            if not 0 <= c.start < c.end < self.n_frames:
                raise ValueError(f"bad crossing frame range {c}")

    def to_json(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["size_range"] = list(self.size_range)
        d["speed_range"] = list(self.speed_range)
        d["feature_strides"] = list(self.feature_strides)
        d["crossings"] = [vars(c) for c in self.crossings]
        return d

    @classmethod
    def from_json(cls, d: dict) -> ScenarioConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario key {sorted(unknown)[0]!r}")
        d = dict(d)
        for key in ("size_range", "speed_range", "feature_strides"):
            if key in d:
                d[key] = tuple(d[key])
        if "crossings" in d:
            d["crossings"] = tuple(Crossing(**c) for c in d["crossings"])
        return cls(**d)


class _LazyStacks:
    """Feature-map stacks rebuilt on demand from owner images and per-frame seeds."""

    def __init__(self, cfg: ScenarioConfig, owners: list[np.ndarray], bases: np.ndarray, seeds: list[int]):
        self._cfg = cfg
        self._owners = owners
        self._bases = bases
        self._seeds = seeds

    def __len__(self):
        return len(self._owners)

    def __getitem__(self, t: int) -> FeatureMapStack:
        rng = np.random.Generator(np.random.PCG64(self._seeds[t]))
        return _feature_stack(self._cfg, self._owners[t], self._bases, rng)

    def __iter__(self):
        return (self[t] for t in range(len(self)))


@dataclass
class Scenario:
    config: ScenarioConfig
    gt: LabeledSequence
    detections: list[list[Detection]]
    identities: list[list[int]]  # true identity of each detection
    feature_maps: _LazyStacks | None = None
    bases: np.ndarray | None = field(default=None, repr=False)

    def embedded(self, strategy: str = "centroid_max_contour") -> list[list[Detection]]:
        """Detections with embeddings, sampling feature maps when the scene has them."""
        if self.feature_maps is None:
            return self.detections
        return [attach_embeddings(dets, stack, strategy) for dets, stack in zip(self.detections, self.feature_maps)]


# ---------------------------------------------------------------------------
# rasterisation


def rasterize(shape: str, cx: float, cy: float, w: float, h: float, width: int, height: int,
              corner: int = 0, arm: float = 0.4) -> np.ndarray:
    """Boolean grid of a shape of size w x h centred at (cx, cy).

    For ``lshape`` the two arms meet at ``corner`` (0: bottom-left,
    1: bottom-right, 2: top-right, 3: top-left); ``arm`` is the arm
    thickness as a fraction of the shorter side.
    """
    ys, xs = np.mgrid[0:height, 0:width]
    dx = xs - cx
    dy = ys - cy
    if shape == "ellipse":
        return (dx / (w / 2.0)) ** 2 + (dy / (h / 2.0)) ** 2 <= 1.0
    x0, y0 = cx - w / 2.0, cy - h / 2.0
    inside = (xs >= x0) & (xs < x0 + w) & (ys >= y0) & (ys < y0 + h)
    if shape == "rectangle":
        return inside
    t = arm * min(w, h)
    left = xs < x0 + t
    right = xs >= x0 + w - t
    top = ys < y0 + t
    bottom = ys >= y0 + h - t
    vertical = (left, right, right, left)[corner]
    horizontal = (bottom, bottom, top, top)[corner]
    return inside & (vertical | horizontal)


def _reflect(p: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.full_like(p, (lo + hi) / 2.0)
    q = np.mod(p - lo, 2.0 * span)
    return lo + np.where(q > span, 2.0 * span - q, q)


# ---------------------------------------------------------------------------
# generation


@dataclass
class _Layout:
    sizes: np.ndarray  # (n, 2) base w, h
    centers: np.ndarray  # (n_frames, n, 2)
    deform_phase: np.ndarray  # (n,)
    corners: np.ndarray  # (n,)


def _layout(cfg: ScenarioConfig, rng: np.random.Generator) -> _Layout:
    n, T = cfg.n_identities, cfg.n_frames
    lo, hi = cfg.size_range
    sizes = rng.uniform(lo, hi, size=(n, 2))
    for c in cfg.crossings:
        # crossing partners must differ visibly so their masks never coincide
        a, b = c.a - 1, c.b - 1
        if abs(sizes[a, 0] - sizes[b, 0]) < 4.0:
            sizes[b, 0] = sizes[a, 0] + 4.0 if sizes[a, 0] + 4.0 <= hi else sizes[a, 0] - 4.0
    reach = sizes.max(axis=1) * (1.0 + cfg.deform_amplitude) / 2.0 + cfg.jitter_amplitude + 1.0
    speeds = rng.uniform(*cfg.speed_range, size=n)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    vel = np.stack([np.cos(angles), np.sin(angles)], axis=1) * speeds[:, None]
    start = np.stack([rng.uniform(reach, cfg.width - reach), rng.uniform(reach, cfg.height - reach)], axis=1)
    jitter_phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, 2))
    deform_phase = rng.uniform(0.0, 2.0 * np.pi, size=n)
    corners = rng.integers(0, 4, size=n)

    origin = start.copy()
    t = np.arange(T, dtype=np.float64)
    for k, c in enumerate(cfg.crossings):
        a, b = c.a - 1, c.b - 1
        mid = 0.5 * (c.start + c.end)
        half = 0.5 * (c.end - c.start)
        # meeting points spread over the image so crossings do not pile up
        frac = (k + 1) / (len(cfg.crossings) + 1)
        r = max(reach[a], reach[b])
        meet = np.array([r + frac * (cfg.width - 2 * r), cfg.height / 2.0])
        room = min(meet[0] - r, cfg.width - r - meet[0], meet[1] - r, cfg.height - r - meet[1])
        speed = min(speeds[a], room / max(half, 1.0))
        ang = angles[a]
        v = np.array([np.cos(ang), np.sin(ang)]) * speed
        vel[a], vel[b] = v, -v
        origin[a] = meet - v * mid
        origin[b] = meet + v * mid

    raw = origin[None, :, :] + vel[None, :, :] * t[:, None, None]
    if cfg.jitter_amplitude > 0:
        w = 2.0 * np.pi / cfg.jitter_period
        raw = raw + cfg.jitter_amplitude * np.sin(w * t[:, None, None] + jitter_phase[None, :, :])
    centers = np.empty_like(raw)
    for i in range(n):
        centers[:, i, 0] = _reflect(raw[:, i, 0], reach[i], cfg.width - reach[i])
        centers[:, i, 1] = _reflect(raw[:, i, 1], reach[i], cfg.height - reach[i])
    return _Layout(sizes, centers, deform_phase, corners)


def _bases(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((cfg.e, cfg.n_identities))
    if cfg.embedding_scheme == "orthogonal":
        q, r = np.linalg.qr(g)
        # fix column signs so the basis is a deterministic function of g
        q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
        out = q.T.copy()
    else:
        out = (g / np.linalg.norm(g, axis=0)).T.copy()
    c = cfg.twin_similarity
    if c > 0:
        # identities 2k and 2k+1 become look-alikes with cosine close to c
        for k in range(0, cfg.n_identities - 1, 2):
            v = c * out[k] + np.sqrt(1.0 - c * c) * out[k + 1]
            out[k + 1] = v / np.linalg.norm(v)
    return out


def _frame_grids(cfg: ScenarioConfig, lay: _Layout, t: int) -> list[np.ndarray]:
    grids = []
    for i in range(cfg.n_identities):
        w, h = lay.sizes[i]
        if cfg.deform_amplitude > 0:
            phase = 2.0 * np.pi * t / cfg.deform_period + lay.deform_phase[i]
            w = w * (1.0 + cfg.deform_amplitude * np.sin(phase))
            h = h * (1.0 + cfg.deform_amplitude * np.cos(phase))
        cx, cy = lay.centers[t, i]
        grids.append(rasterize(cfg.shape, cx, cy, w, h, cfg.width, cfg.height, int(lay.corners[i])))
    return grids


def _owner_image(grids: list[np.ndarray]) -> np.ndarray:
    """Identity index painted at each pixel (later identities on top), -1 for background."""
    owner = np.full(grids[0].shape, -1, dtype=np.int64)
    for i, g in enumerate(grids):
        owner[g] = i
    return owner


def _feature_stack(cfg: ScenarioConfig, owner: np.ndarray, bases: np.ndarray,
                   rng: np.random.Generator) -> FeatureMapStack:
    n_maps = len(cfg.feature_strides)
    per = cfg.e // n_maps
    padded = np.vstack([bases, np.zeros((1, cfg.e))])  # row -1 is background
    maps = []
    for k, s in enumerate(cfg.feature_strides):
        hk = -(-cfg.height // s)
        wk = -(-cfg.width // s)
        rows = np.minimum(np.arange(hk) * s + s // 2, cfg.height - 1)
        cols = np.minimum(np.arange(wk) * s + s // 2, cfg.width - 1)
        labels = owner[np.ix_(rows, cols)]
        block = padded[labels][:, :, k * per:(k + 1) * per]  # hk x wk x per
        values = np.transpose(block, (2, 0, 1)).copy()
        if cfg.embedding_noise > 0:
            values += cfg.embedding_noise * rng.standard_normal(values.shape)
        maps.append(FeatureMap(values, float(s)))
    return FeatureMapStack(tuple(maps))


def generate(cfg: ScenarioConfig) -> Scenario:
    streams = dict(zip(_STREAMS, (np.random.Generator(np.random.PCG64(s))
                                  for s in np.random.SeedSequence(cfg.seed).spawn(len(_STREAMS)))))
    lay = _layout(cfg, streams["layout"])
    bases = _bases(cfg, streams["bases"])

    gt_frames: list[list[tuple[int, BinaryMask]]] = []
    det_frames: list[list[Detection]] = []
    id_frames: list[list[int]] = []
    owners: list[np.ndarray] = []
    for t in range(cfg.n_frames):
        grids = _frame_grids(cfg, lay, t)
        owner = _owner_image(grids)
        if cfg.occlusion:
            grids = [owner == i for i in range(cfg.n_identities)]
        gt_frame = []
        dets = []
        ids = []
        for i, g in enumerate(grids):
            if not g.any():
                continue
            mask = encode_rle(g)
            gt_frame.append((i + 1, mask))
            noise = streams["noise"].standard_normal(cfg.e) if not cfg.feature_maps else None
            conf = float(streams["order"].uniform(0.5, 1.0))
            if streams["drops"].random() < cfg.drop_prob:
                continue
            emb = None
            if noise is not None:
                v = bases[i] + cfg.embedding_noise * noise
                emb = v / np.linalg.norm(v)
            dets.append(Detection(t, mask, conf, emb))
            ids.append(i + 1)
        if cfg.shuffle and len(dets) > 1:
            perm = streams["order"].permutation(len(dets))
            dets = [dets[k] for k in perm]
            ids = [ids[k] for k in perm]
        owners.append(owner)
        gt_frames.append(gt_frame)
        det_frames.append(dets)
        id_frames.append(ids)
    gt = LabeledSequence(gt_frames, cfg.width, cfg.height)
    stacks = None
    if cfg.feature_maps:
        seeds = [int(x) for x in streams["noise"].integers(0, 2**63 - 1, size=cfg.n_frames)]
        stacks = _LazyStacks(cfg, owners, bases, seeds)
    return Scenario(cfg, gt, det_frames, id_frames, stacks, bases)


def clean_scenario_config(seed: int = 0, **overrides) -> ScenarioConfig:
    """Ten identities over 100 frames with two scripted crossings."""
    base = ScenarioConfig(
        n_identities=10,
        n_frames=100,
        crossings=(Crossing(1, 2, 20, 40), Crossing(3, 4, 50, 70)),
        seed=seed,
    )
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# centre-coincidence scenes


def _compose(cfg: ScenarioConfig, frames_grids: list[list[np.ndarray]], bases: np.ndarray,
             rng: np.random.Generator) -> Scenario:
    gt_frames, det_frames, id_frames, owners = [], [], [], []
    for t, grids in enumerate(frames_grids):
        owner = _owner_image(grids)
        if cfg.occlusion:
            grids = [owner == i for i in range(len(grids))]
        gt_frame, dets, ids = [], [], []
        for i, g in enumerate(grids):
            if not g.any():
                continue
            mask = encode_rle(g)
            gt_frame.append((i + 1, mask))
            if rng.random() < cfg.drop_prob:
                continue
            dets.append(Detection(t, mask, 1.0, None))
            ids.append(i + 1)
        if cfg.shuffle and len(dets) > 1:
            perm = rng.permutation(len(dets))
            dets = [dets[k] for k in perm]
            ids = [ids[k] for k in perm]
        owners.append(owner)
        gt_frames.append(gt_frame)
        det_frames.append(dets)
        id_frames.append(ids)
    seeds = [int(x) for x in rng.integers(0, 2**63 - 1, size=len(owners))]
    stacks = _LazyStacks(cfg, owners, bases, seeds)
    return Scenario(cfg, LabeledSequence(gt_frames, cfg.width, cfg.height), det_frames, id_frames, stacks, bases)


def center_coincidence_fixture(n_frames: int = 12, coincide: tuple[int, int] = (3, 9)) -> Scenario:
    """An L-shaped identity wrapping a smaller square that slides into its notch.

    Identity 1 is a 64 x 64 L (arms 24 px, corner bottom-left); identity 2 is
    a 16 x 16 square.  During frames ``coincide[0]..coincide[1]`` the square
    sits exactly at the centre of the L's box, so both bounding boxes share a
    centre while the L's own centroid lies in its arm, about 11 px away.
    """
    size, arm, sq = 64, 24, 16
    cfg = ScenarioConfig(n_identities=2, n_frames=n_frames, width=128, height=128, shape="lshape",
                         size_range=(16.0, 64.0), e=32, feature_maps=True, feature_strides=(1, 2, 4, 8),
                         shuffle=False, seed=0)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(0)))
    bases = _bases(cfg, rng)
    x0, y0 = 32, 32
    ys, xs = np.mgrid[0:cfg.height, 0:cfg.width]
    l_grid = ((xs >= x0) & (xs < x0 + size) & (ys >= y0) & (ys < y0 + size)
              & ((xs < x0 + arm) | (ys >= y0 + size - arm)))
    centre = x0 + (size - 1) / 2.0
    frames = []
    for t in range(n_frames):
        if t < coincide[0]:
            off = 4 * (coincide[0] - t)
        elif t > coincide[1]:
            off = 4 * (t - coincide[1])
        else:
            off = 0
        sx = int(round(centre - (sq - 1) / 2.0)) + off
        sy = int(round(centre - (sq - 1) / 2.0)) - off
        sq_grid = (xs >= sx) & (xs < sx + sq) & (ys >= sy) & (ys < sy + sq)
        frames.append([l_grid, sq_grid])
    return _compose(cfg, frames, bases, rng)


def coincidence_scenario(seed: int, n_pairs: int = 3, n_frames: int = 24, size: int = 64,
                         arm: int = 28, inner: int = 16, step: float = 10.0, noise: float = 0.05,
                         width: int = 256, height: int = 256) -> Scenario:
    """Overlap-heavy scene built from the centre-coincidence pattern.

    Each pair is an L wrapping a square that sits at the centre of the L's
    box, so the two boxes share a centre in every frame.  The L is painted
    over the square, and arms are thick enough that the L's own centroid
    stays inside its arm at every sampled stride.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7])))
    n = 2 * n_pairs
    cfg = ScenarioConfig(n_identities=n, n_frames=n_frames, width=width, height=height, shape="lshape",
                         size_range=(float(inner), float(size)), e=24, embedding_noise=noise,
                         feature_maps=True, feature_strides=(1, 2, 4), shuffle=True, seed=seed)
    bases = _bases(cfg, rng)
    ys, xs = np.mgrid[0:height, 0:width]
    reach = size / 2.0 + 1.0
    starts = np.stack([rng.uniform(reach, width - reach, n_pairs), rng.uniform(reach, height - reach, n_pairs)], 1)
    ang = rng.uniform(0.0, 2.0 * np.pi, n_pairs)
    vel = np.stack([np.cos(ang), np.sin(ang)], 1) * step
    corners = rng.integers(0, 4, n_pairs)
    mid = (size - inner) // 2
    frames = []
    for t in range(n_frames):
        grids = []
        for k in range(n_pairs):
            cx = float(_reflect(np.array([starts[k, 0] + vel[k, 0] * t]), reach, width - reach)[0])
            cy = float(_reflect(np.array([starts[k, 1] + vel[k, 1] * t]), reach, height - reach)[0])
            x0, y0 = int(round(cx - size / 2.0)), int(round(cy - size / 2.0))
            box = (xs >= x0) & (xs < x0 + size) & (ys >= y0) & (ys < y0 + size)
            c = int(corners[k])
            vert = (xs < x0 + arm) if c in (0, 3) else (xs >= x0 + size - arm)
            horiz = (ys >= y0 + size - arm) if c in (0, 1) else (ys < y0 + arm)
            sq_grid = (xs >= x0 + mid) & (xs < x0 + mid + inner) & (ys >= y0 + mid) & (ys < y0 + mid + inner)
            # square first so the L is painted on top of it
            grids.extend([sq_grid, box & (vert | horiz)])
        frames.append(grids)
    return _compose(cfg, frames, bases, rng)


def deformation_scenario(seed: int, **overrides) -> Scenario:
    """Slowly deforming ellipses with look-alike pairs and three crossings.

    Identities 2k and 2k+1 share most of their appearance, so a tracker
    without a motion gate can confuse them across the image; crossings pair
    identities that look different.
    """
    cfg = ScenarioConfig(
        n_identities=8,
        n_frames=60,
        width=200,
        height=160,
        shape="ellipse",
        size_range=(18.0, 34.0),
        speed_range=(1.0, 3.0),
        deform_amplitude=0.2,
        deform_period=30.0,
        embedding_scheme="orthogonal",
        e=64,
        embedding_noise=0.08,
        twin_similarity=0.9,
        crossings=(Crossing(2, 3, 5, 25), Crossing(4, 5, 20, 40), Crossing(6, 7, 35, 55)),
        seed=seed,
    )
    return generate(replace(cfg, **overrides))
