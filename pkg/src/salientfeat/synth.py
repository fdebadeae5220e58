"""Synthetic training data: procedurally generated scenes and seeded
photometric/homographic augmentation pairs.

A pair consists of a crop, a photometrically jittered copy of it, and a
warp of that copy under a randomly sampled homography, together with the
exact dense correspondence map. Setting the perspective jitter to zero gives
style-only pairs (identity geometry, different lighting); zeroing the
photometric knobs gives warp-only pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (CorrespondenceMap, Homography, build_correspondence_map,
                       warp_image)


@dataclass
class AugmentConfig:
    crop: int = 192
    perspective_jitter: float = 0.15  # corner shift as a fraction of crop size
    brightness: float = 0.2           # additive, sampled from [-b, b]
    contrast: float = 0.25            # scale sampled from [1-c, 1+c]
    hue: float = 0.15                 # rotation angle (radians) around the gray axis
    noise: float = 0.02               # gaussian sigma
    max_retries: int = 20


@dataclass
class PairSample:
    image_a: np.ndarray          # [3, crop, crop] in [0, 1]
    image_b: np.ndarray          # photometric + warp of image_a
    homography: Homography       # image_a frame -> image_b frame
    correspondence: CorrespondenceMap
    photometric: dict = field(default_factory=dict)
    crop_offset: tuple[int, int] = (0, 0)


def _hue_matrix(angle: float) -> np.ndarray:
    """Rotation of RGB space around the (1,1,1) gray axis."""
    axis = np.ones(3) / np.sqrt(3.0)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return (np.cos(angle) * np.eye(3) + np.sin(angle) * k +
            (1 - np.cos(angle)) * np.outer(axis, axis))


def photometric_jitter(img: np.ndarray, rng: np.random.Generator,
                       cfg: AugmentConfig) -> tuple[np.ndarray, dict]:
    """Brightness/contrast/hue jitter plus additive noise, clipped to [0,1].

    The random draws happen even when a knob is zeroed so that toggling one
    knob does not shift the rng stream of the others.
    """
    brightness = float(rng.uniform(-cfg.brightness, cfg.brightness)) if cfg.brightness else 0.0
    contrast = float(rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)) if cfg.contrast else 1.0
    hue = float(rng.uniform(-cfg.hue, cfg.hue)) if cfg.hue else 0.0
    out = (img - 0.5) * contrast + 0.5 + brightness
    if hue:
        m = _hue_matrix(hue)
        out = np.einsum("dc,chw->dhw", m, out)
    if cfg.noise:
        out = out + rng.normal(0.0, cfg.noise, size=out.shape)
    out = np.clip(out, 0.0, 1.0)
    record = {"brightness": brightness, "contrast": contrast, "hue": hue,
              "noise": cfg.noise}
    return out, record


def _quad_is_sane(quad: np.ndarray, crop: int) -> bool:
    """Reject folded or collapsed corner layouts before solving for the
    homography."""
    cross = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        cross.append(a[0] * b[1] - a[1] * b[0])
        if np.hypot(*a) < 0.1 * crop:
            return False
    cross = np.array(cross)
    return bool(np.all(cross > 0) or np.all(cross < 0))


def sample_homography(crop: int, jitter: float, rng: np.random.Generator,
                      max_retries: int = 20) -> Homography:
    """Perspective transform from jittering the four crop corners."""
    src = np.array([[0.0, 0.0], [crop - 1.0, 0.0],
                    [crop - 1.0, crop - 1.0], [0.0, crop - 1.0]])
    amp = jitter * crop
    for _ in range(max_retries):
        dst = src + rng.uniform(-amp, amp, size=(4, 2))
        if not _quad_is_sane(dst, crop):
            continue
        try:
            return Homography.from_points(src, dst)
        except ValueError:
            continue
    raise RuntimeError(f"no valid homography after {max_retries} attempts "
                       f"(jitter={jitter})")


def synth_pair(image: np.ndarray, rng: np.random.Generator,
               cfg: AugmentConfig) -> PairSample:
    """Cut a crop from ``image`` and build an aligned augmented partner."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected [3,H,W] image, got {image.shape}")
    _, h, w = image.shape
    crop = cfg.crop
    if h < crop or w < crop:
        raise ValueError(f"image {h}x{w} smaller than crop {crop}")
    oy = int(rng.integers(0, h - crop + 1))
    ox = int(rng.integers(0, w - crop + 1))
    image_a = image[:, oy:oy + crop, ox:ox + crop].copy()
    homography = sample_homography(crop, cfg.perspective_jitter, rng,
                                   cfg.max_retries)
    styled, record = photometric_jitter(image_a, rng, cfg)
    image_b = warp_image(styled, homography, (crop, crop))
    correspondence = build_correspondence_map(homography, (crop, crop), (crop, crop))
    return PairSample(image_a, image_b, homography, correspondence, record, (oy, ox))


# ----------------------------------------------------------------------
# procedural scenes
# ----------------------------------------------------------------------
def make_scene(rng: np.random.Generator, size: int = 96) -> np.ndarray:
    """Render one random scene: gradient background, a checkerboard patch and
    a handful of filled convex polygons. Gives a mix of strong corners and
    flat regions."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                         indexing="ij")
    c0 = rng.uniform(0.1, 0.9, size=3)
    c1 = rng.uniform(0.1, 0.9, size=3)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.clip((np.cos(theta) * xx + np.sin(theta) * yy + 1) / 2, 0, 1)
    img = c0[:, None, None] * (1 - ramp) + c1[:, None, None] * ramp

    # checkerboard patch
    cell = int(rng.integers(5, 12))
    bw, bh = int(rng.integers(size // 3, size)), int(rng.integers(size // 3, size))
    by = int(rng.integers(0, size - bh + 1))
    bx = int(rng.integers(0, size - bw + 1))
    py, px = int(rng.integers(0, cell)), int(rng.integers(0, cell))
    ca = rng.uniform(0, 1, size=3)
    cb = rng.uniform(0, 1, size=3)
    gy, gx = np.meshgrid(np.arange(bh), np.arange(bw), indexing="ij")
    checker = (((gy + py) // cell + (gx + px) // cell) % 2).astype(np.float64)
    patch = ca[:, None, None] * (1 - checker) + cb[:, None, None] * checker
    img[:, by:by + bh, bx:bx + bw] = patch

    # convex polygons
    for _ in range(int(rng.integers(2, 6))):
        n_pts = int(rng.integers(3, 6))
        center = rng.uniform(0.15 * size, 0.85 * size, size=2)
        radius = rng.uniform(0.06 * size, 0.22 * size)
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=n_pts))
        verts = np.stack([center[0] + radius * np.cos(angles),
                          center[1] + radius * np.sin(angles)], axis=1)
        color = rng.uniform(0, 1, size=3)
        mask = _convex_mask(verts, size)
        img = img * (1 - mask) + color[:, None, None] * mask
    return np.clip(img, 0.0, 1.0)


def _convex_mask(verts: np.ndarray, size: int) -> np.ndarray:
    """Interior indicator of a convex polygon given as ordered (x, y) rows."""
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    inside = np.ones((size, size), dtype=bool)
    n = len(verts)
    for i in range(n):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % n]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross >= 0
    return inside.astype(np.float64)


def synthetic_corpus(count: int, size: int, seed: int) -> list[np.ndarray]:
    """Seeded list of scenes; each scene gets an independent child stream."""
    root = np.random.default_rng(seed)
    return [make_scene(np.random.default_rng(root.integers(0, 2**63)), size)
            for _ in range(count)]
