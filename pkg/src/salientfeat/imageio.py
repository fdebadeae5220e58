"""Binary portable-pixmap I/O (P5 grayscale, P6 color) and sequence loading.

Images travel through the package as float64 arrays of shape [C, H, W] with
values in [0, 1]; files store 8-bit samples.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import Homography


def write_image(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ValueError(f"expected [1|3,H,W] image, got shape {img.shape}")
    c, h, w = img.shape
    magic = b"P5" if c == 1 else b"P6"
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    payload = data[0] if c == 1 else data.transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(payload.tobytes())


def read_image(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, pos = _token(raw, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported image magic {magic!r}")
    w, pos = _int_token(raw, pos, path)
    h, pos = _int_token(raw, pos, path)
    maxval, pos = _int_token(raw, pos, path)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = w * h * channels
    body = raw[pos:pos + need]
    if len(body) != need:
        raise ValueError(f"{path}: truncated pixel payload, expected {need} bytes, "
                         f"got {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return arr.reshape(1, h, w)
    return arr.reshape(h, w, 3).transpose(2, 0, 1)


def _token(raw: bytes, pos: int) -> tuple[bytes, int]:
    n = len(raw)
    while pos < n:
        ch = raw[pos:pos + 1]
        if ch == b"#":  # comment runs to end of line
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not raw[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("unexpected end of header")
    return raw[start:pos], pos + 1  # consume the single whitespace after the token


def _int_token(raw: bytes, pos: int, path) -> tuple[int, int]:
    tok, pos = _token(raw, pos)
    try:
        return int(tok), pos
    except ValueError as exc:
        raise ValueError(f"{path}: malformed header token {tok!r}") from exc


def to_rgb(img: np.ndarray) -> np.ndarray:
    """Replicate a single-channel image to three channels."""
    if img.shape[0] == 3:
        return img
    return np.repeat(img, 3, axis=0)


def read_homography_file(path) -> Homography:
    """Parse a text file of 9 whitespace-separated reals, row-major."""
    text = Path(path).read_text()
    parts = text.split()
    if len(parts) != 9:
        raise ValueError(f"{path}: expected 9 values, found {len(parts)}")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry in homography file") from exc
    return Homography(np.array(values).reshape(3, 3))


def load_sequence(directory) -> tuple[list[np.ndarray], list[Homography]]:
    """Load an evaluation sequence directory.

    Layout: reference image ``1.ppm`` (or ``1.pgm``), further images
    ``2.*`` .. ``n.*``, and for each k >= 2 a text file ``H_1_k`` holding the
    ground-truth homography from image 1 to image k. Returns the images in
    order plus the homographies for k = 2..n.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"sequence directory not found: {directory}")
    images = [read_image(_find_image(directory, 1))]
    homographies: list[Homography] = []
    k = 2
    while True:
        try:
            img_path = _find_image(directory, k)
        except FileNotFoundError:
            break
        h_path = directory / f"H_1_{k}"
        if not h_path.exists():
            raise FileNotFoundError(f"missing homography file: {h_path}")
        images.append(read_image(img_path))
        homographies.append(read_homography_file(h_path))
        k += 1
    return images, homographies


def _find_image(directory: Path, index: int) -> Path:
    for ext in (".ppm", ".pgm"):
        candidate = directory / f"{index}{ext}"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"missing image {directory / f'{index}.ppm'} (or .pgm)")
