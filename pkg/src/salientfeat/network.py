"""Feature map generation network.

A small full-resolution convolutional trunk (stride 1 everywhere, growing
dilation instead of downsampling, so every output pixel aligns with an input
pixel) feeds three consecutive tail layers, depthwise-separable by default.
Three heads read the tail features:

* descriptors: 1x1 convolution followed by per-pixel l2 normalization,
* reliability: the element-wise square of the tail response goes through a
  1x1 convolution to two channels whose softmax (channel 0) is the score,
* repeatability: a further 1x1 convolution on the reliability branch's
  two-channel response, squashed the same way.

The two-channel softmax is computed as sigmoid(logit0 - logit1), which is
the same function. One parameter set serves both images of a pair, so the
pair forward is siamese by construction.

Checkpoints are little-endian binary files: magic ``SFTC``, a u32 format
version, a JSON config block, the step counter, named float64 parameter
records, and an optional optimizer-state block. Round-trips are bit exact.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import (Tensor, conv2d, depthwise_separable_conv, l2_normalize,
                     slice_channels)

CHECKPOINT_MAGIC = b"SFTC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    descriptor_dim: int = 128
    channel_widths: tuple[int, ...] = (32, 32, 64, 64, 128, 128, 128)
    dilations: tuple[int, ...] = (1, 1, 1, 2, 2, 4, 4)
    use_dsc_tail: bool = True
    input_channels: int = 3

    def __post_init__(self):
        if self.descriptor_dim < 2:
            raise ValueError("descriptor_dim must be >= 2")
        if not self.channel_widths or min(self.channel_widths) < 1:
            raise ValueError("channel widths must all be >= 1")
        if len(self.dilations) != len(self.channel_widths):
            raise ValueError("need one dilation per trunk layer")
        if min(self.dilations) < 1:
            raise ValueError("dilations must be >= 1")
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")

    @staticmethod
    def desk() -> "BackboneConfig":
        """Small preset used throughout the tests: 32-d descriptors, five
        trunk layers, runs comfortably on a CPU."""
        return BackboneConfig(descriptor_dim=32,
                              channel_widths=(8, 8, 16, 16, 32),
                              dilations=(1, 1, 2, 2, 4))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_widths"] = list(self.channel_widths)
        d["dilations"] = list(self.dilations)
        return d

    @staticmethod
    def from_dict(d: dict) -> "BackboneConfig":
        return BackboneConfig(descriptor_dim=int(d["descriptor_dim"]),
                              channel_widths=tuple(d["channel_widths"]),
                              dilations=tuple(d["dilations"]),
                              use_dsc_tail=bool(d["use_dsc_tail"]),
                              input_channels=int(d["input_channels"]))


@dataclass
class FeatureMaps:
    """Per-image network outputs at full input resolution."""

    descriptors: Tensor   # [descriptor_dim, H, W], unit norm per pixel
    reliability: Tensor   # [1, H, W] in [0, 1]
    repeatability: Tensor  # [1, H, W] in [0, 1]


class Network:
    """Parameter container plus forward pass. Immutable during inference;
    training updates the parameter tensors in place under exclusive access."""

    def __init__(self, config: BackboneConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_network(config: BackboneConfig, seed: int) -> Network:
    """Deterministically initialize all parameters from ``seed``."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def add(name, shape, fan_in):
        params[name] = Tensor(_he_uniform(rng, shape, fan_in), requires_grad=True)

    def add_bias(name, n):
        params[name] = Tensor(np.zeros(n), requires_grad=True)

    c_prev = config.input_channels
    for i, width in enumerate(config.channel_widths):
        add(f"trunk{i}.w", (width, c_prev, 3, 3), c_prev * 9)
        add_bias(f"trunk{i}.b", width)
        c_prev = width

    d = config.descriptor_dim
    for i in range(3):
        c_out = d
        if config.use_dsc_tail:
            add(f"tail{i}.dw", (c_prev, 1, 3, 3), 9)
            add(f"tail{i}.pw", (c_out, c_prev, 1, 1), c_prev)
        else:
            add(f"tail{i}.w", (c_out, c_prev, 3, 3), c_prev * 9)
        add_bias(f"tail{i}.b", c_out)
        c_prev = c_out

    add("desc_head.w", (d, d, 1, 1), d)
    add_bias("desc_head.b", d)
    add("reli_head.w", (2, d, 1, 1), d)
    # optimistic start: reliability ~ 0.88 everywhere, so the ranking loss
    # trains the descriptors from step one instead of first deciding every
    # anchor is untrustworthy (a self-trapping fixed point otherwise)
    params["reli_head.b"] = Tensor(np.array([2.0, 0.0]), requires_grad=True)
    add("rep_head.w", (2, 2, 1, 1), 2)
    add_bias("rep_head.b", 2)
    return Network(config, params)


def _two_channel_softmax(logits: Tensor) -> Tensor:
    """Channel 0 of a softmax over a [2,H,W] tensor."""
    return (slice_channels(logits, 0, 1) - slice_channels(logits, 1, 2)).sigmoid()


def forward(net: Network, image) -> FeatureMaps:
    """Run one image [3,H,W] with values in [0,1]; H and W must be >= 16."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    cfg = net.config
    if x.ndim != 3 or x.shape[0] != cfg.input_channels:
        raise ValueError(f"expected [{cfg.input_channels},H,W] image, got {x.shape}")
    _, h, w = x.shape
    if h < 16 or w < 16:
        raise ValueError(f"input {h}x{w} is below the 16x16 minimum")
    if x.data.min() < -1e-9 or x.data.max() > 1 + 1e-9:
        raise ValueError("image values must lie in [0, 1]")

    p = net.params
    for i, dil in enumerate(cfg.dilations):
        x = conv2d(x, p[f"trunk{i}.w"], p[f"trunk{i}.b"], padding=dil,
                   dilation=dil).relu()
    for i in range(3):
        if cfg.use_dsc_tail:
            x = depthwise_separable_conv(x, p[f"tail{i}.dw"], p[f"tail{i}.pw"],
                                         bias=p[f"tail{i}.b"])
        else:
            x = conv2d(x, p[f"tail{i}.w"], p[f"tail{i}.b"], padding=1)
        if i < 2:
            x = x.relu()  # last tail layer stays linear

    descriptors = l2_normalize(conv2d(x, p["desc_head.w"], p["desc_head.b"]))
    reli_logits = conv2d(x.square(), p["reli_head.w"], p["reli_head.b"])
    reliability = _two_channel_softmax(reli_logits)
    rep_logits = conv2d(reli_logits, p["rep_head.w"], p["rep_head.b"])
    repeatability = _two_channel_softmax(rep_logits)
    return FeatureMaps(descriptors, reliability, repeatability)


def forward_pair(net: Network, image_a, image_b) -> tuple[FeatureMaps, FeatureMaps]:
    """Apply the same parameters to both images of a pair."""
    return forward(net, image_a), forward(net, image_b)


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
def save_checkpoint(net: Network, path, step: int = 0,
                    optimizer_state: dict | None = None) -> None:
    """Write a bit-exact snapshot of the parameters (and, optionally, the
    Adam moment estimates) to ``path``."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    cfg_blob = json.dumps(net.config.to_dict(), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg_blob)))
    buf.write(cfg_blob)
    buf.write(struct.pack("<Q", step))
    buf.write(struct.pack("<I", len(net.params)))
    for name, tensor in net.params.items():
        _write_array(buf, name, tensor.data)
    if optimizer_state is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<Q", int(optimizer_state["t"])))
        for name in net.params:
            _write_array(buf, name, optimizer_state["m"][name])
            _write_array(buf, name, optimizer_state["v"][name])
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> tuple[Network, int, dict | None]:
    """Rebuild a network from a checkpoint; returns (net, step, optimizer
    state or None). Rejects wrong magic/version and truncated payloads."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (magic {magic!r})")
        version = _unpack(f, "<I", path)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        cfg_len = _unpack(f, "<I", path)
        cfg_blob = _read_exact(f, cfg_len, path, "config block")
        config = BackboneConfig.from_dict(json.loads(cfg_blob.decode()))
        step = _unpack(f, "<Q", path)
        n_params = _unpack(f, "<I", path)
        net = build_network(config, seed=0)
        if n_params != len(net.params):
            raise ValueError(f"{path}: expected {len(net.params)} parameters for "
                             f"this config, file holds {n_params}")
        for _ in range(n_params):
            name, arr = _read_array(f, path)
            if name not in net.params:
                raise ValueError(f"{path}: unknown parameter {name!r}")
            if arr.shape != net.params[name].data.shape:
                raise ValueError(f"{path}: shape mismatch for {name!r}: "
                                 f"{arr.shape} vs {net.params[name].data.shape}")
            net.params[name] = Tensor(arr, requires_grad=True)
        flag = _unpack(f, "<B", path)
        opt_state = None
        if flag == 1:
            t = _unpack(f, "<Q", path)
            m: dict[str, np.ndarray] = {}
            v: dict[str, np.ndarray] = {}
            for expected in net.params:
                for store in (m, v):
                    name, arr = _read_array(f, path)
                    if name != expected or arr.shape != net.params[name].data.shape:
                        raise ValueError(f"{path}: optimizer state mismatch at {name!r}")
                    store[name] = arr
            opt_state = {"t": t, "m": m, "v": v}
        elif flag != 0:
            raise ValueError(f"{path}: bad optimizer-state flag {flag}")
        return net, step, opt_state


def _write_array(buf, name: str, arr: np.ndarray) -> None:
    encoded = name.encode()
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(arr.astype("<f8", copy=False).tobytes())


def _read_array(f, path) -> tuple[str, np.ndarray]:
    name_len = _unpack(f, "<I", path)
    name = _read_exact(f, name_len, path, "parameter name").decode()
    ndim = _unpack(f, "<I", path)
    shape = tuple(_unpack(f, "<I", path) for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    payload = _read_exact(f, count * 8, path, f"payload of {name!r}")
    return name, np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def _read_exact(f, n: int, path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"{path}: truncated file, {what} needs {n} bytes, "
                         f"got {len(data)}")
    return data


def _unpack(f, fmt: str, path):
    size = struct.calcsize(fmt)
    return struct.unpack(fmt, _read_exact(f, size, path, f"field {fmt}"))[0]
