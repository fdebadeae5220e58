"""Channel-covariance statistics of feature maps and the transformation loss
that splits them into style and structure components.

The pipeline for an image pair is: standardize each descriptor map per
channel, form the channel correlation matrix of each, take the elementwise
absolute difference of the two matrices, threshold its strict upper triangle
at its mean into a "style" set (entries that moved a lot between the two
views, to be suppressed) and a "structure" set (stable entries, to be
expanded), and score the two sets with a single scalar loss.

Masking and thresholding are selection steps: gradients flow through the
covariance values only, never through mask construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import write_image
from .tensor import Tensor, make_node, matmul


@dataclass
class CovarianceMatrix:
    """A [C, C] matrix tensor tagged with the pipeline stage it came from
    ("raw", "standardized" or "difference")."""

    values: Tensor
    source: str = "raw"

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass
class MaskPair:
    """Disjoint binary selectors over the strict upper triangle of a
    covariance-difference matrix, split at ``threshold`` (the mean of the
    considered entries). Plain arrays: gradients never flow through masks."""

    style_mask: np.ndarray      # 1.0 where the entry exceeds the threshold
    structure_mask: np.ndarray  # 1.0 on the remaining upper-triangle entries
    threshold: float

    @property
    def style_count(self) -> int:
        return int(self.style_mask.sum())

    @property
    def structure_count(self) -> int:
        return int(self.structure_mask.sum())


@dataclass
class LossWeights:
    """Relative weights of the three training loss terms (default 1:1:2)."""

    reliability: float = 1.0
    repeatability: float = 1.0
    covariance: float = 2.0

    def __post_init__(self):
        if min(self.reliability, self.repeatability, self.covariance) < 0:
            raise ValueError("loss weights must be non-negative")


def covariance(x: Tensor) -> CovarianceMatrix:
    """Population channel covariance of x [C,H,W]: centre each channel by its
    spatial mean, then average outer products over the H*W positions."""
    c, h, w = _check_map(x)
    n = h * w
    flat = x.reshape((c, n))
    mu = flat.mean(axis=1).reshape((c, 1))
    ones = Tensor(np.ones((1, n)))
    centered = flat - matmul(mu, ones)
    cov = matmul(centered, centered.transpose()) * (1.0 / n)
    return CovarianceMatrix(cov, "raw")


def standardize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Shift/scale each channel of x [C,H,W] to zero spatial mean and unit
    population variance. Channels whose standard deviation falls below
    ``eps`` are divided by ``eps`` instead, mapping constant channels to
    all-zeros without NaNs."""
    c, h, w = _check_map(x)
    flat = x.data.reshape(c, -1)
    mu = flat.mean(axis=1, keepdims=True)
    centered = flat - mu
    std = np.sqrt((centered * centered).mean(axis=1, keepdims=True))
    denom = np.maximum(std, eps)
    active = std > eps
    y = centered / denom

    def bw(g, a=x):
        if not a.requires_grad:
            return
        gf = g.reshape(c, -1)
        g_mean = gf.mean(axis=1, keepdims=True)
        gy_mean = (gf * y).mean(axis=1, keepdims=True)
        gx = (gf - g_mean - y * (gy_mean * active)) / denom
        a._accum(gx.reshape(a.data.shape))

    return make_node(y.reshape(c, h, w), (x,), bw)


def standardized_covariance(x_s: Tensor) -> CovarianceMatrix:
    """Correlation matrix of an already-standardized map: entries lie in
    [-1, 1] with unit diagonal for non-degenerate channels."""
    c, h, w = _check_map(x_s)
    n = h * w
    flat = x_s.reshape((c, n))
    cov = matmul(flat, flat.transpose()) * (1.0 / n)
    return CovarianceMatrix(cov, "standardized")


def covariance_difference(s1: CovarianceMatrix, s2: CovarianceMatrix) -> CovarianceMatrix:
    """Elementwise |s1 - s2|; measures how much each correlation entry moved
    between the two images of a pair."""
    if s1.values.shape != s2.values.shape:
        raise ValueError(f"covariance shapes disagree: {s1.values.shape} vs "
                         f"{s2.values.shape}")
    return CovarianceMatrix((s1.values - s2.values).abs(), "difference")


def build_masks(sigma_c: CovarianceMatrix) -> MaskPair:
    """Split the strict upper triangle of a difference matrix at the mean of
    its entries: strictly above the mean is style, the rest is structure.
    Equality at the threshold goes to structure."""
    vals = sigma_c.values.data
    c = vals.shape[0]
    if c < 2:
        raise ValueError("need at least 2 channels to form off-diagonal masks")
    rows, cols = np.triu_indices(c, k=1)
    entries = vals[rows, cols]
    threshold = float(entries.mean())
    above = entries > threshold
    style = np.zeros_like(vals)
    structure = np.zeros_like(vals)
    style[rows[above], cols[above]] = 1.0
    structure[rows[~above], cols[~above]] = 1.0
    return MaskPair(style, structure, threshold)


def cov_loss(sigma_c: CovarianceMatrix, masks: MaskPair,
             include_style: bool = True, include_structure: bool = True) -> Tensor:
    """Scalar transformation loss: mean of the style-selected entries (driven
    toward 0) plus one minus the mean of the structure-selected entries
    (driven toward 1). An empty selection contributes 0 for its term; the
    structure term is not clamped below 0.

    The ``include_*`` switches drop a branch entirely for ablation runs.
    """
    v = sigma_c.values
    terms = []
    if include_style and masks.style_count > 0:
        sel = v * Tensor(masks.style_mask)
        terms.append(sel.sum() * (1.0 / masks.style_count))
    if include_structure and masks.structure_count > 0:
        sel = v * Tensor(masks.structure_mask)
        terms.append(1.0 - sel.sum() * (1.0 / masks.structure_count))
    if not terms:
        return Tensor(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def total_loss(l_reli: Tensor, l_repeat: Tensor, l_cov: Tensor,
               weights: LossWeights) -> Tensor:
    """Weighted sum of the three scalar training losses."""
    for name, t in (("l_reli", l_reli), ("l_repeat", l_repeat), ("l_cov", l_cov)):
        if t.size != 1:
            raise ValueError(f"{name} must be scalar, got shape {t.shape}")
    return (weights.reliability * l_reli + weights.repeatability * l_repeat +
            weights.covariance * l_cov)


def masked_means(sigma_c: CovarianceMatrix, masks: MaskPair) -> tuple[float, float]:
    """(style mean, structure mean) of the difference matrix under the masks;
    empty selections report 0. Diagnostic values, no gradients."""
    vals = sigma_c.values.data
    sty = float((vals * masks.style_mask).sum() / masks.style_count) \
        if masks.style_count else 0.0
    stru = float((vals * masks.structure_mask).sum() / masks.structure_count) \
        if masks.structure_count else 0.0
    return sty, stru


# ----------------------------------------------------------------------
# inspection dumps
# ----------------------------------------------------------------------
def save_matrix_text(path, matrix: np.ndarray) -> None:
    rows = [" ".join(format(v, ".9e") for v in row) for row in np.asarray(matrix)]
    with open(path, "w") as f:
        f.write("\n".join(rows) + "\n")


def save_matrix_pgm(path, matrix: np.ndarray, vmin: float, vmax: float) -> None:
    """Grayscale rendering of a matrix with the given value range."""
    m = np.asarray(matrix, dtype=np.float64)
    if vmax <= vmin:
        raise ValueError("vmax must exceed vmin")
    scaled = np.clip((m - vmin) / (vmax - vmin), 0.0, 1.0)
    write_image(path, scaled[None])


def _check_map(x: Tensor) -> tuple[int, int, int]:
    if x.ndim != 3:
        raise ValueError(f"expected a [C,H,W] feature map, got shape {x.shape}")
    c, h, w = x.shape
    if h * w < 2:
        raise ValueError(f"need at least 2 spatial positions, got {h}x{w}")
    return c, h, w
