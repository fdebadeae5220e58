"""Planar projective geometry: homographies, dense correspondence maps and
bilinear image warping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_DET_FLOOR = 1e-12


class Homography:
    """3x3 projective transform, stored normalized so matrix[2,2] == 1."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=np.float64).reshape(3, 3)
        if abs(m[2, 2]) < _DET_FLOOR:
            raise ValueError("homography has vanishing scale entry h33")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= _DET_FLOOR:
            raise ValueError("homography is not invertible")
        self.matrix = m

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    def invert(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def compose(self, other: "Homography") -> "Homography":
        """Transform that applies ``other`` first, then ``self``."""
        return Homography(self.matrix @ other.matrix)

    @staticmethod
    def from_points(src, dst) -> "Homography":
        """Direct linear transform from four (x, y) correspondences."""
        src = np.asarray(src, dtype=np.float64)
        dst = np.asarray(dst, dtype=np.float64)
        if src.shape != (4, 2) or dst.shape != (4, 2):
            raise ValueError("from_points needs four source and four target points")
        a = np.zeros((8, 8))
        b = np.zeros(8)
        for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
            a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
            a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
            b[2 * i] = u
            b[2 * i + 1] = v
        try:
            sol = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise ValueError("degenerate point configuration") from exc
        return Homography(np.append(sol, 1.0).reshape(3, 3))

    def __repr__(self):
        return f"Homography({self.matrix.tolist()})"


def apply_homography(h: Homography, point) -> tuple[float, float]:
    """Map one (x, y) point; raises if it lands at infinity."""
    x, y = float(point[0]), float(point[1])
    m = h.matrix
    den = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(den) <= _DET_FLOOR:
        raise ValueError(f"point {point} maps to infinity under this homography")
    return ((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / den,
            (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / den)


def project_points(h: Homography, xs, ys):
    """Vectorized apply_homography; returns (us, vs, finite_mask)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    m = h.matrix
    den = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    finite = np.abs(den) > _DET_FLOOR
    safe = np.where(finite, den, 1.0)
    us = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / safe
    vs = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / safe
    return us, vs, finite


@dataclass
class CorrespondenceMap:
    """Dense per-pixel ground-truth mapping, source pixel (i, j) to target
    coordinates target[i, j] = (u, v); valid marks pixels that land inside
    the target image."""

    target: np.ndarray  # [H, W, 2] float (u, v)
    valid: np.ndarray   # [H, W] bool

    @property
    def shape(self):
        return self.valid.shape


def build_correspondence_map(h: Homography, size, target_size) -> CorrespondenceMap:
    """Project every source pixel (row i, col j) as (x=j, y=i) through h."""
    hh, ww = size
    th, tw = target_size
    jj, ii = np.meshgrid(np.arange(ww, dtype=np.float64),
                         np.arange(hh, dtype=np.float64))
    us, vs, finite = project_points(h, jj, ii)
    valid = finite & (us >= 0) & (us <= tw - 1) & (vs >= 0) & (vs <= th - 1)
    return CorrespondenceMap(np.stack([us, vs], axis=-1), valid)


def warp_image(img: np.ndarray, h: Homography, out_size) -> np.ndarray:
    """Inverse-warp img [C,H,W] so that out(y, x) = img(h^-1(x, y)).

    Samples bilinearly; target pixels whose preimage falls outside the source
    are filled with 0, never clamped to the border.
    """
    c, src_h, src_w = img.shape
    oh, ow = out_size
    inv = h.invert()
    xx, yy = np.meshgrid(np.arange(ow, dtype=np.float64),
                         np.arange(oh, dtype=np.float64))
    us, vs, finite = project_points(inv, xx, yy)
    inside = finite & (us >= 0) & (us <= src_w - 1) & (vs >= 0) & (vs <= src_h - 1)
    us = np.where(inside, us, 0.0)
    vs = np.where(inside, vs, 0.0)
    u0 = np.clip(np.floor(us), 0, max(src_w - 2, 0)).astype(np.intp)
    v0 = np.clip(np.floor(vs), 0, max(src_h - 2, 0)).astype(np.intp)
    fu = us - u0
    fv = vs - v0
    u1 = np.minimum(u0 + 1, src_w - 1)
    v1 = np.minimum(v0 + 1, src_h - 1)
    out = (img[:, v0, u0] * ((1 - fu) * (1 - fv)) +
           img[:, v0, u1] * (fu * (1 - fv)) +
           img[:, v1, u0] * ((1 - fu) * fv) +
           img[:, v1, u1] * (fu * fv))
    return out * inside


def resize_bilinear(img: np.ndarray, out_size) -> np.ndarray:
    """Resize img [C,H,W] with corner-aligned bilinear sampling."""
    c, h, w = img.shape
    oh, ow = out_size
    if oh < 1 or ow < 1:
        raise ValueError("resize target must be at least 1x1")
    ys = np.linspace(0.0, h - 1, oh) if oh > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, ow) if ow > 1 else np.zeros(1)
    x0 = np.clip(np.floor(xs), 0, max(w - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, max(h - 2, 0)).astype(np.intp)
    fx = (xs - x0)[None, None, :]
    fy = (ys - y0)[None, :, None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy
