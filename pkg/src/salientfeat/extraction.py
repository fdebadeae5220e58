"""Keypoint extraction from the network's score maps.

Candidates are strict local maxima of the repeatability map within a square
radius (plateaus never fire), gated by thresholds on both score maps, ranked
by the product repeatability * reliability, and cut to a budget. Multi-scale
extraction repeats this over a descending image pyramid and maps coordinates
back to the original frame by dividing by the scale factor.

Descriptor files are little-endian binary: magic ``SFDK``, u32 version, u32
point count, u32 descriptor dimension, then per point x/y/scale/score as
float32, followed by the row-major float32 descriptor matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import resize_bilinear
from .network import FeatureMaps, Network, forward
from .tensor import no_grad

DESCRIPTOR_MAGIC = b"SFDK"
DESCRIPTOR_VERSION = 1


@dataclass
class ExtractConfig:
    rel_thresh: float = 0.7
    rep_thresh: float = 0.7
    topk: int = 5000
    nms_radius: int = 3

    def __post_init__(self):
        if self.topk < 1 or self.nms_radius < 1:
            raise ValueError("topk and nms_radius must be >= 1")


@dataclass
class Keypoint:
    x: float
    y: float
    scale: float
    score: float


@dataclass
class KeypointSet:
    keypoints: list[Keypoint] = field(default_factory=list)
    descriptors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __len__(self):
        return len(self.keypoints)

    def coords(self) -> np.ndarray:
        """[n, 2] array of (x, y) positions."""
        if not self.keypoints:
            return np.zeros((0, 2))
        return np.array([[k.x, k.y] for k in self.keypoints])


def _neighbor_max(score: np.ndarray, radius: int) -> np.ndarray:
    """Max over the square window of each pixel, centre excluded."""
    h, w = score.shape
    padded = np.full((h + 2 * radius, w + 2 * radius), -np.inf)
    padded[radius:radius + h, radius:radius + w] = score
    out = np.full((h, w), -np.inf)
    for di in range(2 * radius + 1):
        for dj in range(2 * radius + 1):
            if di == radius and dj == radius:
                continue
            np.maximum(out, padded[di:di + h, dj:dj + w], out=out)
    return out


def extract(maps: FeatureMaps, cfg: ExtractConfig) -> KeypointSet:
    """Single-scale extraction; keypoints sit on pixel centres and are sorted
    by descending score (ties broken by row-major position)."""
    rep = maps.repeatability.data[0]
    rel = maps.reliability.data[0]
    keep = ((rep > _neighbor_max(rep, cfg.nms_radius)) &
            (rep >= cfg.rep_thresh) & (rel >= cfg.rel_thresh))
    ii, jj = np.nonzero(keep)
    if ii.size == 0:
        return KeypointSet([], np.zeros((0, maps.descriptors.shape[0])))
    scores = rep[ii, jj] * rel[ii, jj]
    order = np.lexsort((jj, ii, -scores))[:cfg.topk]
    ii, jj, scores = ii[order], jj[order], scores[order]
    desc = maps.descriptors.data[:, ii, jj].T.copy()
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    desc /= np.maximum(norms, 1e-8)
    points = [Keypoint(float(x), float(y), 1.0, float(s))
              for x, y, s in zip(jj, ii, scores)]
    return KeypointSet(points, desc)


def default_scales(h: int, w: int, min_size: int = 16) -> list[float]:
    """Descending geometric pyramid 2^(-k/4) until the shorter side would
    drop below ``min_size``."""
    scales = []
    k = 0
    while True:
        s = 2.0 ** (-k / 4.0)
        if round(min(h, w) * s) < min_size:
            break
        scales.append(s)
        k += 1
    return scales


def extract_multiscale(net: Network, image: np.ndarray, scales,
                       cfg: ExtractConfig) -> KeypointSet:
    """Extract over an image pyramid and merge into one budgeted set.

    Scales must be strictly descending and keep the smaller image side at
    16 pixels or more. Coordinates come back in the original frame; detections
    from different scales closer than nms_radius keep only the higher score.
    """
    scales = list(scales)
    if not scales:
        raise ValueError("need at least one scale")
    if any(s2 >= s1 for s1, s2 in zip(scales, scales[1:])):
        raise ValueError(f"scales must be strictly descending, got {scales}")
    _, h, w = image.shape
    merged: list[tuple[Keypoint, np.ndarray]] = []
    for s in scales:
        if s <= 0:
            raise ValueError("scales must be positive")
        if s == 1.0:
            scaled = image
        else:
            nh, nw = round(h * s), round(w * s)
            if min(nh, nw) < 16:
                raise ValueError(f"scale {s} shrinks the image below 16 pixels")
            scaled = resize_bilinear(image, (nh, nw))
        with no_grad():
            kset = extract(forward(net, scaled), cfg)
        for kp, d in zip(kset.keypoints, kset.descriptors):
            merged.append((Keypoint(kp.x / s, kp.y / s, s, kp.score), d))

    if not merged:
        return KeypointSet([], np.zeros((0, net.config.descriptor_dim)))
    merged.sort(key=lambda e: (-e[0].score, e[0].scale, e[0].y, e[0].x))
    kept: list[tuple[Keypoint, np.ndarray]] = []
    for kp, d in merged:
        if any(np.hypot(kp.x - q.x, kp.y - q.y) < cfg.nms_radius for q, _ in kept):
            continue
        kept.append((kp, d))
        if len(kept) == cfg.topk:
            break
    return KeypointSet([k for k, _ in kept], np.array([d for _, d in kept]))


# ----------------------------------------------------------------------
# descriptor files
# ----------------------------------------------------------------------
def save_descriptors(path, kset: KeypointSet) -> None:
    n = len(kset)
    dim = kset.descriptors.shape[1] if n else 0
    with open(path, "wb") as f:
        f.write(DESCRIPTOR_MAGIC)
        f.write(struct.pack("<III", DESCRIPTOR_VERSION, n, dim))
        for kp in kset.keypoints:
            f.write(struct.pack("<4f", kp.x, kp.y, kp.scale, kp.score))
        f.write(kset.descriptors.astype("<f4").tobytes())


def load_descriptors(path) -> KeypointSet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DESCRIPTOR_MAGIC:
            raise ValueError(f"{path}: not a descriptor file (magic {magic!r})")
        header = f.read(12)
        if len(header) != 12:
            raise ValueError(f"{path}: truncated header")
        version, n, dim = struct.unpack("<III", header)
        if version != DESCRIPTOR_VERSION:
            raise ValueError(f"{path}: unsupported descriptor-file version {version}")
        points = []
        for _ in range(n):
            rec = f.read(16)
            if len(rec) != 16:
                raise ValueError(f"{path}: truncated keypoint records")
            x, y, scale, score = struct.unpack("<4f", rec)
            points.append(Keypoint(x, y, scale, score))
        payload = f.read(n * dim * 4)
        if len(payload) != n * dim * 4:
            raise ValueError(f"{path}: truncated descriptor payload")
        desc = np.frombuffer(payload, dtype="<f4").reshape(n, dim).copy()
    return KeypointSet(points, desc)
