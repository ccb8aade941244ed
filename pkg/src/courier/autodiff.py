"""Minimal reverse-mode autodiff over numpy arrays, plus Adam and checkpoint I/O.

Only the operators the policies need are implemented. Graphs are recorded
eagerly as each op runs; ``backward`` walks the tape once in reverse
topological order. A graph can be differentiated exactly once.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager

import numpy as np

# Training runs in float32; gradient checks run in float64. Switched globally
# because parameters, activations and optimizer state must agree.
_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True

LEAKY_RELU_SLOPE = 0.01


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def using_dtype(dtype):
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextmanager
def no_grad():
    """Disable graph recording: ops return constant tensors."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy array plus an optional gradient and tape record.

    ``grad`` is populated by ``backward`` and matches ``data``'s shape.
    Leaf tensors with ``requires_grad=True`` are the trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None  # callable(grad_out) -> tuple of parent grads
        self._done = False

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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar used by the loss code.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_graph(*tensors: Tensor) -> bool:
    if not _GRAD_ENABLED:
        return False
    return any(t.requires_grad or t._parents or t._vjp for t in tensors)


def _make(data, parents, vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._done = False
    if _needs_graph(*parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class ShapeError(ValueError):
    pass


def _check_matmul(a: Tensor, b: Tensor) -> None:
    if a.data.shape[-1] != b.data.shape[0 if b.data.ndim <= 2 else -2]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")


# ---------------------------------------------------------------------------
# forward operators


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), vjp)


def square(a: Tensor) -> Tensor:
    data = a.data * a.data

    def vjp(g):
        return (2.0 * g * a.data,)

    return _make(data, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_matmul(a, b)
    data = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(data, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over leading axes."""
    return add(matmul(x, w), b)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return _make(data, (a,), vjp)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _make(data, (a,), vjp)


def leaky_relu(a: Tensor, slope: float = LEAKY_RELU_SLOPE) -> Tensor:
    mask = a.data >= 0
    data = np.where(mask, a.data, slope * a.data)

    def vjp(g):
        return (np.where(mask, g, slope * g),)

    return _make(data, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    # Stable in both tails.
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return _make(data, (a,), vjp)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    data = z - lse
    sm = np.exp(data)

    def vjp(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(data, (a,), vjp)


def masked_softmax(a: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over positions where ``mask`` is True; masked entries get 0."""
    neg = np.where(mask, a.data, -np.inf)
    z = neg - neg.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    return _make(data, (a,), vjp)


def mean(a: Tensor, axis=None) -> Tensor:
    data = a.data.mean(axis=axis)
    n = a.data.size if axis is None else a.data.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, g / n, dtype=a.data.dtype),)
        ge = np.expand_dims(g, axis)
        return (np.broadcast_to(ge / n, a.data.shape).astype(a.data.dtype, copy=False),)

    return _make(data, (a,), vjp)


def tsum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.full_like(a.data, g, dtype=a.data.dtype),)
        ge = np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.data.shape).astype(a.data.dtype, copy=False),)

    return _make(data, (a,), vjp)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def vjp(g):
        return (_unbroadcast(np.where(take_a, g, 0.0), a.data.shape),
                _unbroadcast(np.where(take_a, 0.0, g), b.data.shape))

    return _make(data, (a, b), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def vjp(g):
        return (np.where(inside, g, 0.0),)

    return _make(data, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _make(data, (a,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), vjp)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick one column per row of a 2-D tensor: out[i] = a[i, index[i]]."""
    index = np.asarray(index)
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, index]

    def vjp(g):
        out = np.zeros_like(a.data)
        out[rows, index] = g
        return (out,)

    return _make(data, (a,), vjp)


def embedding_lookup(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup with scatter-add backward; index may have any shape."""
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding index out of range [0,{table.data.shape[0]}): "
            f"min={index.min()}, max={index.max()}")
    data = table.data[index]

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, index.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (out,)

    return _make(data, (table,), vjp)


def place_rows(src: Tensor, n_rows: int, dest_index: np.ndarray,
               src_index: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted scatter-add of rows of ``src`` into a zero (n_rows, d) tensor.

    out[dest_index[k]] += weights[k] * src[src_index[k]]. Used to paint entity
    vectors into grid cells; ``weights`` carries the 1/overlap averaging.
    """
    dest_index = np.asarray(dest_index)
    src_index = np.asarray(src_index)
    w = np.asarray(weights, dtype=src.data.dtype).reshape(-1, 1)
    data = np.zeros((n_rows, src.data.shape[1]), dtype=src.data.dtype)
    np.add.at(data, dest_index, w * src.data[src_index])

    def vjp(g):
        out = np.zeros_like(src.data)
        np.add.at(out, src_index, w * g[dest_index])
        return (out,)

    return _make(data, (src,), vjp)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Valid 2-D convolution over (B, h, w, Cin) with kernel (kh, kw, Cin, Cout).

    Output is (B, h-kh+1, w-kw+1, Cout). One fused matmul per pass: every
    cell is projected through all kernel taps at once and the taps are
    combined by strided shifted adds, avoiding im2col patch copies.
    """
    B, h, w, cin = x.data.shape
    kh, kw, kcin, cout = kernel.data.shape
    if kcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape}, kernel {kernel.data.shape}")
    oh, ow = h - kh + 1, w - kw + 1
    x_flat = np.ascontiguousarray(x.data).reshape(B * h * w, cin)
    w_cat = kernel.data.transpose(2, 0, 1, 3).reshape(cin, kh * kw * cout)
    z = (x_flat @ w_cat).reshape(B, h, w, kh, kw, cout)
    data = np.broadcast_to(bias.data, (B, oh, ow, cout)).copy()
    for i in range(kh):
        for j in range(kw):
            data += z[:, i:i + oh, j:j + ow, i, j, :]

    def vjp(g):
        gz = np.zeros((B, h, w, kh, kw, cout), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gz[:, i:i + oh, j:j + ow, i, j, :] = g
        gz_flat = gz.reshape(B * h * w, kh * kw * cout)
        gx = (gz_flat @ w_cat.T).reshape(x.data.shape)
        gw = (x_flat.T @ gz_flat).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        gb = g.sum(axis=(0, 1, 2))
        return gx, gw, gb

    return _make(data, (x, kernel, bias), vjp)


class PlacementSpec:
    """Where each source row lands in a (sample, frame, row, col) grid stack.

    Precomputes, per frame and kernel tap, the valid output cells so
    ``placed_conv`` touches only occupied cells instead of dense grids.
    """

    def __init__(self, n_samples: int, src_index, weight, sample, row, col, frame,
                 grid=(10, 10), kernel_hw=(2, 2), n_frames: int = 3):
        self.n_samples = n_samples
        self.src_index = np.asarray(src_index, dtype=np.int64)
        self.weight = np.asarray(weight)
        self.grid = grid
        self.kh, self.kw = kernel_hw
        self.n_frames = n_frames
        self.oh, self.ow = grid[0] - self.kh + 1, grid[1] - self.kw + 1
        sample = np.asarray(sample, dtype=np.int64)
        row = np.asarray(row, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        frame = np.asarray(frame, dtype=np.int64)
        self.sample, self.row, self.col, self.frame = sample, row, col, frame
        self.frame_rows = []
        self.taps = []  # per frame: list of (positions-in-group, dest rows) per tap
        for f in range(n_frames):
            sel = np.flatnonzero(frame == f)
            self.frame_rows.append(sel)
            per_tap = []
            for i in range(self.kh):
                for j in range(self.kw):
                    orow = row[sel] - i
                    ocol = col[sel] - j
                    ok = (orow >= 0) & (orow < self.oh) & (ocol >= 0) & (ocol < self.ow)
                    dest = (sample[sel][ok] * self.oh + orow[ok]) * self.ow + ocol[ok]
                    per_tap.append((np.flatnonzero(ok), dest))
            self.taps.append(per_tap)


def placed_conv(src: Tensor, spec: PlacementSpec, kernel: Tensor,
                bias: Tensor) -> Tensor:
    """Fused scatter-then-convolve for sparse grids.

    Equivalent to scattering weighted ``src`` rows into a zero
    (B, h, w, n_frames*d) stack and running ``conv2d``, but only occupied
    cells are projected through the kernel taps.
    """
    d = src.data.shape[1]
    kh, kw, cin, cout = kernel.data.shape
    if cin != spec.n_frames * d:
        raise ShapeError(f"placed_conv channel mismatch: kernel {kernel.data.shape}, "
                         f"src width {d} x {spec.n_frames} frames")
    oh, ow = spec.oh, spec.ow
    out = np.zeros((spec.n_samples * oh * ow, cout), dtype=src.data.dtype)
    w_cats, gathered = [], []
    for f in range(spec.n_frames):
        sel = spec.frame_rows[f]
        wf = kernel.data[:, :, f * d:(f + 1) * d, :]
        w_cat = np.ascontiguousarray(wf.transpose(2, 0, 1, 3)).reshape(d, kh * kw * cout)
        w_cats.append(w_cat)
        gat = src.data[spec.src_index[sel]] * spec.weight[sel, None]
        gathered.append(gat)
        proj = gat @ w_cat
        for t, (pos, dest) in enumerate(spec.taps[f]):
            np.add.at(out, dest, proj[pos, t * cout:(t + 1) * cout])
    data = (out + bias.data).reshape(spec.n_samples, oh, ow, cout)

    def vjp(g):
        gf = g.reshape(spec.n_samples * oh * ow, cout)
        gb = gf.sum(axis=0)
        gsrc = np.zeros_like(src.data)
        gw = np.zeros_like(kernel.data)
        for f in range(spec.n_frames):
            sel = spec.frame_rows[f]
            dproj = np.zeros((len(sel), kh * kw * cout), dtype=gf.dtype)
            for t, (pos, dest) in enumerate(spec.taps[f]):
                dproj[pos, t * cout:(t + 1) * cout] = gf[dest]
            dgat = dproj @ w_cats[f].T
            np.add.at(gsrc, spec.src_index[sel], dgat * spec.weight[sel, None])
            dwcat = gathered[f].T @ dproj
            gw[:, :, f * d:(f + 1) * d, :] = \
                dwcat.reshape(d, kh, kw, cout).transpose(1, 2, 0, 3)
        return gsrc, gw, gb

    return _make(data, (src, kernel, bias), vjp)


def attention_weights(q: Tensor, keys: Tensor, dim: int) -> Tensor:
    """Scaled dot-product attention weights: softmax(q . k_j / sqrt(dim)).

    ``q`` is (d,) or (m0, d); ``keys`` is (m, d). Returns (m,) or (m0, m).
    """
    squeeze = q.data.ndim == 1
    if squeeze:
        q = reshape(q, (1, -1))
    scores = mul(matmul(q, transpose(keys)), _wrap(1.0 / np.sqrt(dim)))
    out = softmax(scores, axis=-1)
    return reshape(out, (-1,)) if squeeze else out


def transpose(a: Tensor) -> Tensor:
    data = np.swapaxes(a.data, -1, -2)

    def vjp(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(data, (a,), vjp)


def transpose_axes(a: Tensor, axes: tuple) -> Tensor:
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _make(data, (a,), vjp)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor, params=None) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    ``loss`` must be scalar and its graph not already consumed. Tensors in
    ``params`` that the graph never touched get zero gradients so optimizers
    can treat all parameters uniformly.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise RuntimeError("backward already ran on this graph; re-record the forward pass")
    loss._done = True

    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or node._vjp is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0, dtype=loss.data.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if parent._vjp is None and not parent.requires_grad:
                continue
            if parent.requires_grad:
                parent.grad = pg if parent.grad is None else parent.grad + pg
            if parent._vjp is not None:
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        node._parents = ()
        node._vjp = None

    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------------------
# Adam


class Adam:
    """Adam with bias correction over a name -> Tensor parameter dict."""

    def __init__(self, params: dict, lr: float = 5e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"adam step with missing grads: {missing[:3]}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * (g * g)
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
            p.grad = None

    def reset(self) -> None:
        self.step_count = 0
        for k in self.m:
            self.m[k][:] = 0.0
            self.v[k][:] = 0.0


# ---------------------------------------------------------------------------
# initializers


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Fan-based uniform init for linear / conv kernels."""
    if len(shape) == 2:
        fan_in, fan_out = shape
    else:  # conv kernel (kh, kw, cin, cout)
        rec = int(np.prod(shape[:-2]))
        fan_in, fan_out = rec * shape[-2], rec * shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(_DEFAULT_DTYPE)


def normal_embedding(rng: np.random.Generator, shape) -> np.ndarray:
    """normal(0, 1/sqrt(d)) rows for embedding tables (d = last axis)."""
    return (rng.standard_normal(shape) / np.sqrt(shape[-1])).astype(_DEFAULT_DTYPE)


# ---------------------------------------------------------------------------
# checkpoint format
#
# magic 'CRKP', u32 version, u32 meta-length, meta JSON (variant, d, d_tok,
# extra), then u32 blob count and per blob: name, shape, f32 data. An optional
# trailing optimizer section stores the step counter and first/second moments.

_MAGIC = b"CRKP"
CHECKPOINT_VERSION = 1


def _write_blob(f, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_blob(f):
    (nlen,) = struct.unpack("<I", f.read(4))
    name = f.read(nlen).decode("utf-8")
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim)) if ndim else ()
    n = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
    return name, arr


def save_checkpoint(path, variant: str, d: int, d_tok: int, params: dict,
                    optimizer: Adam | None = None, extra: dict | None = None) -> None:
    meta = {"variant": variant, "d": d, "d_tok": d_tok, "extra": extra or {}}
    mb = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(mb)))
        f.write(mb)
        f.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            _write_blob(f, name, p.data)
        if optimizer is None:
            f.write(struct.pack("<I", 0))
        else:
            f.write(struct.pack("<I", 1))
            f.write(struct.pack("<Q", optimizer.step_count))
            for name in params:
                _write_blob(f, name, optimizer.m[name])
                _write_blob(f, name, optimizer.v[name])


def load_checkpoint(path):
    """Returns (meta dict, name -> Tensor params, optimizer state or None)."""
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(mlen).decode("utf-8"))
        (count,) = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(count):
            name, arr = _read_blob(f)
            params[name] = Tensor(arr.astype(_DEFAULT_DTYPE), requires_grad=True)
        (has_opt,) = struct.unpack("<I", f.read(4))
        opt_state = None
        if has_opt:
            (step_count,) = struct.unpack("<Q", f.read(8))
            m, v = {}, {}
            for _ in range(count):
                name, arr = _read_blob(f)
                m[name] = arr.astype(_DEFAULT_DTYPE)
                name2, arr2 = _read_blob(f)
                v[name2] = arr2.astype(_DEFAULT_DTYPE)
            opt_state = {"step_count": step_count, "m": m, "v": v}
    return meta, params, opt_state


def restore_optimizer(opt: Adam, opt_state: dict) -> None:
    opt.step_count = int(opt_state["step_count"])
    for k in opt.params:
        opt.m[k] = opt_state["m"][k].copy()
        opt.v[k] = opt_state["v"][k].copy()
