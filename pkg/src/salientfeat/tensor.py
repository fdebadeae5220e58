"""Minimal reverse-mode autodiff engine over float64 numpy arrays.

Scope is deliberately narrow: exactly the operations the feature network and
its losses need. Everything is double precision, row-major, and shape-strict.
Binary elementwise ops require identical shapes; the only broadcasting allowed
is scalar-with-tensor. The computation graph is held implicitly by parent
links on each output tensor, and ``Tensor.backward`` replays it once in
reverse topological order, accumulating gradients by summation wherever a
tensor feeds several consumers.

Conventions that callers can rely on:

* ``abs`` has subgradient 0 at 0; ``relu`` likewise.
* max-reductions route the incoming gradient to the first maximal element in
  row-major order.
* ``sqrt`` is left unguarded; callers that may hit 0 add their own epsilon.
* A second ``backward`` on the same scalar raises instead of silently
  double-accumulating.

Threading: a graph is single-writer (build and differentiate it from one
thread); tensors that do not require gradients are immutable after creation
and safe to share across threads, and independent graphs can run in
parallel.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn",
                 "_backward_ran")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._backward_ran = False

    # ------------------------------------------------------------------
    # basics
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            # materialize: g may be a read-only broadcast view
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # graph plumbing
    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Populate gradients of every tensor this scalar depends on."""
        if self.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._backward_ran:
            raise RuntimeError("backward already ran on this tensor; rebuild the "
                               "graph (or zero gradients) before differentiating again")
        self._backward_ran = True

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # ------------------------------------------------------------------
    # elementwise arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            _same_shape(self, other, "add")

            def bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accum(g)
                if b.requires_grad:
                    b._accum(g)

            return _make(self.data + other.data, (self, other), bw)
        return self._scalar_affine(1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _same_shape(self, other, "subtract")

            def bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accum(g)
                if b.requires_grad:
                    b._accum(-g)

            return _make(self.data - other.data, (self, other), bw)
        return self._scalar_affine(1.0, -float(other))

    def __rsub__(self, other):
        return self._scalar_affine(-1.0, float(other))

    def __neg__(self):
        return self._scalar_affine(-1.0, 0.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _same_shape(self, other, "multiply")

            def bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accum(g * b.data)
                if b.requires_grad:
                    b._accum(g * a.data)

            return _make(self.data * other.data, (self, other), bw)
        return self._scalar_affine(float(other), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            _same_shape(self, other, "divide")

            def bw(g, a=self, b=other):
                if a.requires_grad:
                    a._accum(g / b.data)
                if b.requires_grad:
                    b._accum(-g * a.data / (b.data * b.data))

            return _make(self.data / other.data, (self, other), bw)
        return self._scalar_affine(1.0 / float(other), 0.0)

    def _scalar_affine(self, scale: float, shift: float) -> "Tensor":
        def bw(g, a=self, s=scale):
            if a.requires_grad:
                a._accum(g * s)

        return _make(self.data * scale + shift, (self,), bw)

    # ------------------------------------------------------------------
    # elementwise nonlinearities
    # ------------------------------------------------------------------
    def square(self):
        def bw(g, a=self):
            if a.requires_grad:
                a._accum(g * (2.0 * a.data))

        return _make(self.data * self.data, (self,), bw)

    def sqrt(self):
        out = np.sqrt(self.data)

        def bw(g, a=self, o=out):
            if a.requires_grad:
                a._accum(g * (0.5 / o))

        return _make(out, (self,), bw)

    def relu(self):
        mask = self.data > 0

        def bw(g, a=self, m=mask):
            if a.requires_grad:
                a._accum(g * m)

        return _make(self.data * mask, (self,), bw)

    def sigmoid(self):
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])  # split form never overflows
        out[~pos] = ex / (1.0 + ex)

        def bw(g, a=self, o=out):
            if a.requires_grad:
                a._accum(g * (o * (1.0 - o)))

        return _make(out, (self,), bw)

    def abs(self):
        sign = np.sign(self.data)  # sign(0) == 0: subgradient convention

        def bw(g, a=self, s=sign):
            if a.requires_grad:
                a._accum(g * s)

        return _make(np.abs(self.data), (self,), bw)

    # ------------------------------------------------------------------
    # shape ops
    # ------------------------------------------------------------------
    def reshape(self, shape) -> "Tensor":
        old = self.data.shape

        def bw(g, a=self, o=old):
            if a.requires_grad:
                a._accum(g.reshape(o))

        return _make(self.data.reshape(shape), (self,), bw)

    def transpose(self) -> "Tensor":
        if self.ndim != 2:
            raise ValueError(f"transpose expects a matrix, got shape {self.shape}")

        def bw(g, a=self):
            if a.requires_grad:
                a._accum(g.T)

        return _make(self.data.T.copy(), (self,), bw)

    # ------------------------------------------------------------------
    # reductions
    # ------------------------------------------------------------------
    def sum(self, axis=None):
        axes = _normalize_axes(axis, self.ndim)

        def bw(g, a=self, ax=axes):
            if a.requires_grad:
                a._accum(np.broadcast_to(np.expand_dims(g, ax), a.data.shape))

        return _make(self.data.sum(axis=axes), (self,), bw)

    def mean(self, axis=None):
        axes = _normalize_axes(axis, self.ndim)
        n = int(np.prod([self.data.shape[ax] for ax in axes]))

        def bw(g, a=self, ax=axes, count=n):
            if a.requires_grad:
                a._accum(np.broadcast_to(np.expand_dims(g, ax), a.data.shape) / count)

        return _make(self.data.mean(axis=axes), (self,), bw)

    def max(self, axis=None):
        """Max over ``axis``; gradient goes to the first maximal element
        (row-major order) of each reduced block."""
        axes = _normalize_axes(axis, self.ndim)
        kept = tuple(i for i in range(self.ndim) if i not in axes)
        moved = np.moveaxis(self.data, axes, range(len(kept), self.ndim))
        kept_shape = moved.shape[:len(kept)]
        red = int(np.prod(moved.shape[len(kept):])) if axes else 1
        flat = moved.reshape(-1, red)
        arg = flat.argmax(axis=1)  # argmax returns the first maximum
        out = flat[np.arange(flat.shape[0]), arg].reshape(kept_shape)

        def bw(g, a=self, ax=axes, ks=kept_shape, index=arg, r=red):
            if not a.requires_grad:
                return
            buf = np.zeros((index.size, r))
            buf[np.arange(index.size), index] = g.reshape(-1)
            full = buf.reshape(ks + tuple(np.moveaxis(a.data, ax, range(len(ks), a.ndim)).shape[len(ks):]))
            a._accum(np.moveaxis(full, range(len(ks), a.ndim), ax))

        return _make(out, (self,), bw)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def make_node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Extension point: record a hand-differentiated op in the graph.

    ``backward_fn(upstream)`` must push gradients into each parent via
    ``parent._accum`` (guarding on ``parent.requires_grad``).
    """
    return _make(data, parents, backward_fn)


def _same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    """None or an empty tuple mean full reduction."""
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(a % ndim for a in axis))
    if not axes:
        return tuple(range(ndim))
    if len(set(axes)) != len(axes):
        raise ValueError(f"duplicate axes {axis}")
    return axes


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Exact matrix product of a [M,K] and b [K,N]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects matrices, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")

    def bw(g, x=a, y=b):
        if x.requires_grad:
            x._accum(g @ y.data.T)
        if y.requires_grad:
            y._accum(x.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


# ----------------------------------------------------------------------
# convolutions
# ----------------------------------------------------------------------
def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation of x [C_in,H,W] with weight [C_out,C_in,k,k].

    Output height is (H + 2*padding - span)/stride + 1 with
    span = (k-1)*dilation + 1; the division must be exact. Implemented as
    k*k strided-slice matmuls so the heavy lifting stays in BLAS.
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise ValueError(f"conv2d: expected 3-D input and 4-D kernel, got {x.shape}, {weight.shape}")
    c_in, h, w = x.shape
    c_out, kc, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if kc != c_in:
        raise ValueError(f"conv2d: input has {c_in} channels but kernel expects {kc}")
    if stride < 1 or padding < 0 or dilation < 1:
        raise ValueError("conv2d: stride/dilation must be >= 1 and padding >= 0")
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    k = kh
    span = (k - 1) * dilation + 1
    if (h + 2 * padding - span) % stride or (w + 2 * padding - span) % stride:
        raise ValueError(f"conv2d: output size not exact for H,W={h},{w} k={k} "
                         f"stride={stride} padding={padding} dilation={dilation}")
    h_out = (h + 2 * padding - span) // stride + 1
    w_out = (w + 2 * padding - span) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ValueError("conv2d: non-positive output size")

    parents = (x, weight) if bias is None else (x, weight, bias)

    if k == 1 and stride == 1 and padding == 0:
        # pointwise fast path: a single channel-mixing matmul
        w1 = weight.data.reshape(c_out, c_in)
        flat = x.data.reshape(c_in, -1)
        out = (w1 @ flat).reshape(c_out, h, w)
        if bias is not None:
            out += bias.data[:, None, None]

        def bw1(g):
            gf = g.reshape(c_out, -1)
            if weight.requires_grad:
                weight._accum((gf @ flat.T).reshape(weight.data.shape))
            if x.requires_grad:
                x._accum((w1.T @ gf).reshape(x.data.shape))
            if bias is not None and bias.requires_grad:
                bias._accum(g.sum(axis=(1, 2)))

        return _make(out, parents, bw1)

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data

    def im2col():
        cols = np.empty((k * k * c_in, h_out * w_out))
        for di in range(k):
            for dj in range(k):
                block = cols[(di * k + dj) * c_in:(di * k + dj + 1) * c_in]
                np.copyto(block.reshape(c_in, h_out, w_out),
                          xp[:, _tap(di, dilation, stride, h_out),
                             _tap(dj, dilation, stride, w_out)])
        return cols

    # weight laid out to match the (di, dj, channel) block order of im2col
    w2 = weight.data.transpose(0, 2, 3, 1).reshape(c_out, k * k * c_in)
    out = (w2 @ im2col()).reshape(c_out, h_out, w_out)
    if bias is not None:
        out += bias.data[:, None, None]

    def bw(g):
        gf = g.reshape(c_out, -1)
        if weight.requires_grad:
            gw2 = gf @ im2col().T
            weight._accum(gw2.reshape(c_out, k, k, c_in).transpose(0, 3, 1, 2))
        if x.requires_grad:
            gcols = w2.T @ gf
            gxp = np.zeros_like(xp)
            for di in range(k):
                for dj in range(k):
                    block = gcols[(di * k + dj) * c_in:(di * k + dj + 1) * c_in]
                    gxp[:, _tap(di, dilation, stride, h_out),
                        _tap(dj, dilation, stride, w_out)] += \
                        block.reshape(c_in, h_out, w_out)
            x._accum(gxp[:, padding:padding + h, padding:padding + w] if padding else gxp)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(1, 2)))

    return _make(out, parents, bw)


def _tap(offset: int, dilation: int, stride: int, n_out: int) -> slice:
    start = offset * dilation
    return slice(start, start + (n_out - 1) * stride + 1, stride)


def depthwise_conv2d(x: Tensor, weight: Tensor, dilation: int = 1) -> Tensor:
    """Per-channel spatial convolution, same padding, stride 1.

    weight has shape [C,1,k,k]; channel c of the output sees only channel c
    of the input.
    """
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != 1:
        raise ValueError(f"depthwise_conv2d: bad shapes {x.shape}, {weight.shape}")
    c, h, w = x.shape
    if weight.shape[0] != c:
        raise ValueError(f"depthwise_conv2d: {c} input channels vs kernel for {weight.shape[0]}")
    k = weight.shape[2]
    if k != weight.shape[3] or k % 2 == 0:
        raise ValueError("depthwise_conv2d: kernel must be square with odd size")
    pad = (k - 1) * dilation // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    wm = weight.data
    out = np.zeros((c, h, w))
    for di in range(k):
        for dj in range(k):
            out += wm[:, 0, di, dj][:, None, None] * \
                xp[:, _tap(di, dilation, 1, h), _tap(dj, dilation, 1, w)]

    def bw(g):
        g3 = g.reshape(c, h, w)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wm) if weight.requires_grad else None
        for di in range(k):
            for dj in range(k):
                rows = _tap(di, dilation, 1, h)
                cols = _tap(dj, dilation, 1, w)
                if gw is not None:
                    gw[:, 0, di, dj] = (g3 * xp[:, rows, cols]).sum(axis=(1, 2))
                if gxp is not None:
                    gxp[:, rows, cols] += wm[:, 0, di, dj][:, None, None] * g3
        if gw is not None:
            weight._accum(gw)
        if gxp is not None:
            x._accum(gxp[:, pad:pad + h, pad:pad + w] if pad else gxp)

    return _make(out, (x, weight), bw)


def depthwise_separable_conv(x: Tensor, depthwise_kernel: Tensor,
                             pointwise_kernel: Tensor, bias: Tensor | None = None,
                             dilation: int = 1) -> Tensor:
    """Depthwise spatial convolution followed by 1x1 channel mixing.

    Equals conv2d(depthwise stage) piped into conv2d(pointwise stage) but with
    far fewer parameters; spatial size is preserved.
    """
    if pointwise_kernel.ndim != 4 or pointwise_kernel.shape[2:] != (1, 1):
        raise ValueError(f"pointwise kernel must be [C_out,C_in,1,1], got {pointwise_kernel.shape}")
    if pointwise_kernel.shape[1] != x.shape[0]:
        raise ValueError(f"pointwise kernel expects {pointwise_kernel.shape[1]} channels, "
                         f"input has {x.shape[0]}")
    mixed = depthwise_conv2d(x, depthwise_kernel, dilation=dilation)
    return conv2d(mixed, pointwise_kernel, bias=bias)


# ----------------------------------------------------------------------
# normalization and sampling
# ----------------------------------------------------------------------
def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale every per-pixel channel vector of x [C,H,W] to unit norm.

    Pixels whose norm falls below ``eps`` are divided by ``eps`` instead,
    so zero vectors map to zero without NaNs.
    """
    if x.ndim != 3:
        raise ValueError(f"l2_normalize expects [C,H,W], got {x.shape}")
    norm = np.sqrt((x.data * x.data).sum(axis=0))
    denom = np.maximum(norm, eps)
    active = norm > eps
    out = x.data / denom

    def bw(g, a=x, y=out, d=denom, act=active):
        if not a.requires_grad:
            return
        dot = (g * y).sum(axis=0)
        a._accum((g - y * (dot * act)) / d)

    return _make(out, (x,), bw)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """View channels [start, stop) of x [C,H,W] as a new tensor."""
    c = x.shape[0]
    if not (0 <= start < stop <= c):
        raise ValueError(f"slice_channels: bad range [{start},{stop}) for {c} channels")

    def bw(g, a=x, c0=start, c1=stop):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[c0:c1] = g
            a._accum(buf)

    return _make(x.data[start:stop].copy(), (x,), bw)


def gather_pixels(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Pick per-pixel channel vectors of x [C,H,W] at integer (row, col)
    positions; returns [n, C]. Duplicate positions are fine, their gradients
    accumulate."""
    c, h, w = x.shape
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if rows.min(initial=0) < 0 or cols.min(initial=0) < 0 or \
       rows.max(initial=0) >= h or cols.max(initial=0) >= w:
        raise ValueError("gather_pixels: index out of bounds")
    lin = rows * w + cols
    flat = x.data.reshape(c, -1)

    def bw(g, a=x, idx=lin):
        if a.requires_grad:
            buf = np.zeros((a.data.shape[1] * a.data.shape[2], a.data.shape[0]))
            np.add.at(buf, idx, g)
            a._accum(buf.T.reshape(a.data.shape))

    return _make(flat[:, lin].T.copy(), (x,), bw)


def bilinear_sample(x: Tensor, us: np.ndarray, vs: np.ndarray) -> Tensor:
    """Bilinearly sample x [C,H,W] at float positions (u=column, v=row);
    returns [n, C]. All positions must satisfy 0 <= u <= W-1, 0 <= v <= H-1;
    integer positions reproduce the pixel exactly."""
    c, h, w = x.shape
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    tol = 1e-9
    if us.size and (us.min() < -tol or us.max() > w - 1 + tol or
                    vs.min() < -tol or vs.max() > h - 1 + tol):
        raise ValueError("bilinear_sample: position outside the image")
    u0 = np.clip(np.floor(us), 0, w - 2).astype(np.intp) if w > 1 else np.zeros_like(us, dtype=np.intp)
    v0 = np.clip(np.floor(vs), 0, h - 2).astype(np.intp) if h > 1 else np.zeros_like(vs, dtype=np.intp)
    fu = np.clip(us - u0, 0.0, 1.0)
    fv = np.clip(vs - v0, 0.0, 1.0)
    corners = ((v0, u0, (1 - fu) * (1 - fv)),
               (v0, np.minimum(u0 + 1, w - 1), fu * (1 - fv)),
               (np.minimum(v0 + 1, h - 1), u0, (1 - fu) * fv),
               (np.minimum(v0 + 1, h - 1), np.minimum(u0 + 1, w - 1), fu * fv))
    flat = x.data.reshape(c, -1)
    out = np.zeros((us.size, c))
    lins = []
    for vy, ux, wt in corners:
        lin = vy * w + ux
        lins.append((lin, wt))
        out += flat[:, lin].T * wt[:, None]

    def bw(g, a=x, taps=lins):
        if not a.requires_grad:
            return
        buf = np.zeros((a.data.shape[1] * a.data.shape[2], a.data.shape[0]))
        for lin, wt in taps:
            np.add.at(buf, lin, g * wt[:, None])
        a._accum(buf.T.reshape(a.data.shape))

    return _make(out, (x,), bw)


def extract_patches(x: Tensor, patch: int) -> Tensor:
    """Cut x [1,H,W] into non-overlapping patch x patch tiles, flattened to
    [P, patch*patch]. Trailing rows/columns that do not fill a tile are
    dropped."""
    if x.ndim != 3 or x.shape[0] != 1:
        raise ValueError(f"extract_patches expects [1,H,W], got {x.shape}")
    if patch < 2:
        raise ValueError("patch size must be >= 2")
    _, h, w = x.shape
    nh, nw = h // patch, w // patch
    hc, wc = nh * patch, nw * patch
    tiles = (x.data[0, :hc, :wc]
             .reshape(nh, patch, nw, patch)
             .transpose(0, 2, 1, 3)
             .reshape(nh * nw, patch * patch))

    def bw(g, a=x):
        if not a.requires_grad:
            return
        buf = np.zeros_like(a.data)
        buf[0, :hc, :wc] = (g.reshape(nh, nw, patch, patch)
                            .transpose(0, 2, 1, 3)
                            .reshape(hc, wc))
        a._accum(buf)

    return _make(tiles.copy(), (x,), bw)


# ----------------------------------------------------------------------
# finite-difference validation
# ----------------------------------------------------------------------
def grad_check(fn, inputs, h: float = 1e-3) -> float:
    """Compare analytic gradients of fn(*inputs) against central differences.

    ``fn`` must return a scalar Tensor. Every input tensor with
    requires_grad=True is perturbed one coordinate at a time with step
    h * max(1, |x_i|). Returns the maximum relative error, where the
    denominator is max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    checked = [t for t in inputs if isinstance(t, Tensor) and t.requires_grad]
    if not checked:
        raise ValueError("grad_check: no input requires a gradient")
    for t in checked:
        t.zero_grad()
    loss = fn(*inputs)
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in checked]

    worst = 0.0
    with no_grad():
        for t, ga in zip(checked, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                step = h * max(1.0, abs(flat[i]))
                orig = flat[i]
                flat[i] = orig + step
                fp = fn(*inputs).item()
                flat[i] = orig - step
                fm = fn(*inputs).item()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * step)
                err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst
