"""Detector/descriptor training losses.

Two losses supervise the point-extraction branch:

* repeatability: the repeatability map of one image, warped into the frame of
  the other through the ground-truth correspondence, should agree with the
  other map patch by patch (cosine similarity), while a peakiness term keeps
  each patch from collapsing to a constant.
* reliability: at sampled anchor pixels, a differentiable average-precision
  surrogate ranks the true corresponding descriptor against random negatives;
  the reliability map gates how much each anchor is trusted, with an
  indifference constant ``kappa`` as the break-even level.

The AP surrogate bins descriptor distances into overlapping triangular
histogram bins over [0, 2] (the range of unit-norm descriptor distances),
which makes AP piecewise differentiable while keeping it monotone in the
positive's distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import CorrespondenceMap
from .tensor import Tensor, bilinear_sample, extract_patches, gather_pixels


@dataclass
class RepeatabilityConfig:
    patch_size: int = 16       # non-overlapping tiling; partial border tiles dropped
    peaky_weight: float = 1.0  # weight of the peakiness term relative to cosine

    def __post_init__(self):
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")


@dataclass
class ReliabilityConfig:
    sample_radius: int = 8   # negatives must lie farther than this from the match
    num_negatives: int = 64
    kappa: float = 0.5       # reliability level at which AP stops mattering
    num_bins: int = 25       # histogram bins over the distance range [0, 2]
    anchor_stride: int = 4   # anchor grid spacing

    def __post_init__(self):
        if self.sample_radius < 1 or self.num_negatives < 1:
            raise ValueError("sample_radius and num_negatives must be >= 1")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.num_bins < 2 or self.anchor_stride < 1:
            raise ValueError("num_bins must be >= 2 and anchor_stride >= 1")


# ----------------------------------------------------------------------
# repeatability
# ----------------------------------------------------------------------
def warp_repeatability(r_prime: Tensor, t: CorrespondenceMap) -> Tensor:
    """Pull the partner's repeatability map [1,H,W] into the reference frame:
    output(i, j) bilinearly samples r_prime at t.target[i, j]. Pixels with an
    invalid correspondence come out as 0 and must be masked downstream."""
    if r_prime.ndim != 3 or r_prime.shape[0] != 1:
        raise ValueError(f"expected [1,H,W] repeatability map, got {r_prime.shape}")
    h, w = t.shape
    valid = t.valid
    us = np.where(valid, t.target[..., 0], 0.0).reshape(-1)
    vs = np.where(valid, t.target[..., 1], 0.0).reshape(-1)
    sampled = bilinear_sample(r_prime, us, vs)          # [H*W, 1]
    flat_mask = Tensor(valid.reshape(-1, 1).astype(np.float64))
    return (sampled * flat_mask).reshape((1, h, w))


def repeatability_loss(r: Tensor, r_prime_t: Tensor, valid_mask: np.ndarray,
                       cfg: RepeatabilityConfig) -> Tensor:
    """Cosine-similarity plus peakiness loss over an N x N patch grid.

    Masked pixels are zeroed before the cosine; patches without a single
    valid pixel are skipped. Returns 0 (with a warning) when no patch
    survives.
    """
    if r.shape != r_prime_t.shape:
        raise ValueError(f"map shapes disagree: {r.shape} vs {r_prime_t.shape}")
    n = cfg.patch_size
    _, h, w = r.shape
    if h // n == 0 or w // n == 0:
        warnings.warn("map smaller than one patch; repeatability loss is 0")
        return Tensor(0.0)

    mask = np.asarray(valid_mask, dtype=np.float64).reshape(1, h, w)
    mask_tiles = _tile(mask[0], n)                      # [P, n*n] plain array
    patch_ok = mask_tiles.sum(axis=1) > 0
    n_ok = int(patch_ok.sum())
    if n_ok == 0:
        warnings.warn("no patch has a valid pixel; repeatability loss is 0")
        return Tensor(0.0)

    a = extract_patches(r, n) * Tensor(mask_tiles)
    b = extract_patches(r_prime_t, n) * Tensor(mask_tiles)
    ok = Tensor(patch_ok.astype(np.float64))

    dot = (a * b).sum(axis=1)
    na = ((a * a).sum(axis=1) + 1e-12).sqrt()
    nb = ((b * b).sum(axis=1) + 1e-12).sqrt()
    cosine = dot / (na * nb + 1e-12)
    l_cosim = 1.0 - (cosine * ok).sum() * (1.0 / n_ok)

    peak_a = ((a.max(axis=1) - a.mean(axis=1)) * ok).sum() * (1.0 / n_ok)
    peak_b = ((b.max(axis=1) - b.mean(axis=1)) * ok).sum() * (1.0 / n_ok)
    l_peaky = 1.0 - 0.5 * (peak_a + peak_b)
    return l_cosim + cfg.peaky_weight * l_peaky


def _tile(arr: np.ndarray, n: int) -> np.ndarray:
    h, w = arr.shape
    nh, nw = h // n, w // n
    return (arr[:nh * n, :nw * n].reshape(nh, n, nw, n)
            .transpose(0, 2, 1, 3).reshape(nh * nw, n * n))


# ----------------------------------------------------------------------
# reliability
# ----------------------------------------------------------------------
def reliability_loss(x1: Tensor, x2: Tensor, s1: Tensor, t: CorrespondenceMap,
                     cfg: ReliabilityConfig, rng: np.random.Generator) -> Tensor:
    """Average-precision reliability loss over a grid of anchor pixels.

    For each anchor (i, j) of the reference image with a valid correspondence
    (u, v): rank the descriptor interpolated at (u, v) in the partner map
    against ``num_negatives`` random partner descriptors sampled farther than
    ``sample_radius`` pixels from (u, v). Per-anchor loss is
    1 - (AP * S + kappa * (1 - S)), averaged over anchors.
    """
    if x1.shape != x2.shape:
        raise ValueError(f"descriptor map shapes disagree: {x1.shape} vs {x2.shape}")
    if s1.shape[1:] != x1.shape[1:]:
        raise ValueError("reliability map spatial size must match the descriptors")
    _, h, w = x1.shape
    stride = cfg.anchor_stride
    ai, aj = np.meshgrid(np.arange(0, h, stride), np.arange(0, w, stride),
                         indexing="ij")
    ai, aj = ai.reshape(-1), aj.reshape(-1)
    keep = t.valid[ai, aj]
    ai, aj = ai[keep], aj[keep]
    if ai.size == 0:
        raise ValueError("reliability loss has no valid correspondences to supervise")
    us = t.target[ai, aj, 0]
    vs = t.target[ai, aj, 1]

    anchors = gather_pixels(x1, ai, aj)                       # [n, C]
    positives = bilinear_sample(x2, us, vs)                   # [n, C]
    ni, nj = _sample_negatives(us, vs, (h, w), cfg, rng)      # [n, K] each
    k = cfg.num_negatives
    negatives = gather_pixels(x2, ni.reshape(-1), nj.reshape(-1))
    negatives = negatives.reshape((ai.size, k, x2.shape[0]))
    anchors_rep = gather_pixels(x1, np.repeat(ai, k), np.repeat(aj, k))
    anchors_rep = anchors_rep.reshape((ai.size, k, x1.shape[0]))

    d_pos = ((anchors - positives).square().sum(axis=1) + 1e-12).sqrt()      # [n]
    d_neg = ((anchors_rep - negatives).square().sum(axis=2) + 1e-12).sqrt()  # [n,K]

    ap = soft_binned_ap(d_pos, d_neg, cfg.num_bins)
    s_anchor = gather_pixels(s1, ai, aj).reshape((ai.size,))
    per_anchor = 1.0 - (ap * s_anchor + cfg.kappa * (1.0 - s_anchor))
    return per_anchor.mean()


def soft_binned_ap(d_pos: Tensor, d_neg: Tensor, num_bins: int) -> Tensor:
    """Histogram-quantized average precision, one positive per anchor.

    Distances fall into triangular bins whose centers span [0, 2]. Sweeping
    from the closest bin outward, a bin's precision is what the positive
    would score if it sat entirely in that bin, 1 / (1 + cumulative negative
    mass); AP averages these precisions under the positive's own bin weights.
    With a single positive this matches the rank definition of AP, stays
    piecewise differentiable, and moving the positive closer (all negatives
    fixed) can never decrease it: its mass only shifts toward bins with no
    more negatives below them.
    """
    n = d_pos.shape[0]
    delta = 2.0 / (num_bins - 1)
    cum_neg = Tensor(np.zeros(n))
    ap = Tensor(np.zeros(n))
    for m in range(num_bins):
        center = m * delta
        wp = (1.0 - (d_pos - center).abs() * (1.0 / delta)).relu()          # [n]
        wn = ((1.0 - (d_neg - center).abs() * (1.0 / delta)).relu()).sum(axis=1)
        cum_neg = cum_neg + wn
        ap = ap + wp / (cum_neg + 1.0)
    return ap


def _sample_negatives(us, vs, size, cfg: ReliabilityConfig,
                      rng: np.random.Generator):
    """Uniform pixel positions farther than sample_radius from each match."""
    h, w = size
    radius = cfg.sample_radius
    if radius * 2 >= min(h, w):
        raise ValueError(f"sample_radius {radius} leaves too few pixels in a "
                         f"{h}x{w} map to sample negatives from")
    n, k = us.size, cfg.num_negatives
    ni = rng.integers(0, h, size=(n, k))
    nj = rng.integers(0, w, size=(n, k))
    for _ in range(200):
        bad = np.hypot(nj - us[:, None], ni - vs[:, None]) <= radius
        count = int(bad.sum())
        if count == 0:
            return ni, nj
        ni[bad] = rng.integers(0, h, size=count)
        nj[bad] = rng.integers(0, w, size=count)
    raise RuntimeError("negative sampling failed to avoid the positive region")
