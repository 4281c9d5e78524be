"""Rank-4 tensors with taped reverse-mode differentiation.

The operator set is exactly what the network blocks need: conv2d, linear,
elementwise arithmetic with per-channel broadcasting, sigmoid / leaky-relu,
channel statistics, channel concat/split, reshape/transpose, and bilinear
sampling with coordinate gradients.  Forward values live in NumPy arrays
(float64 for gradient checking, float32 for training); the hot loops are
dispatched through :mod:`d2a2.backend`.

Recording: ops append backward closures to the active ``Tape``.  Replaying
the tape in reverse forward order accumulates gradients exactly as the
chain rule does; a node consumed twice receives the sum of both incoming
gradients because each consumer's closure adds into ``.grad``.
"""

from contextlib import contextmanager

import numpy as np

from .backend import kernels


class Tensor:
    """Dense array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def accumulate(self, g):
        if self.grad is None:
            # own a fresh buffer: g may be (a view of) another node's grad
            self.grad = np.array(g, dtype=self.data.dtype)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


class Parameter(Tensor):
    """Named trainable tensor with persistent Adam moment buffers."""

    __slots__ = ("name", "opt_m", "opt_v", "opt_t")

    def __init__(self, name, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.opt_m = None
        self.opt_v = None
        self.opt_t = 0


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self._ops = []

    def __len__(self):
        return len(self._ops)

    def record(self, backward_fn):
        self._ops.append(backward_fn)

    def backward(self, loss, seed=None):
        """Seed the loss gradient and replay backward rules in reverse order."""
        if seed is None:
            if loss.data.size != 1:
                raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
            seed = np.ones_like(loss.data)
        loss.grad = np.asarray(seed, dtype=loss.data.dtype)
        for fn in reversed(self._ops):
            fn()


_TAPES = []


def active_tape():
    return _TAPES[-1] if _TAPES else None


@contextmanager
def record(tape=None):
    """Activate a tape; ops executed inside are recorded on it."""
    t = tape if tape is not None else Tape()
    _TAPES.append(t)
    try:
        yield t
    finally:
        _TAPES.pop()


def as_tensor(v, like=None):
    if isinstance(v, Tensor):
        return v
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(v, dtype=dtype))


def _tape_for(*inputs):
    t = active_tape()
    if t is None:
        return None
    if any(isinstance(i, Tensor) and i.requires_grad for i in inputs):
        return t
    return None


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of NumPy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (want, got) in enumerate(zip(shape, g.shape)) if want == 1 and got > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data + b.data)
    tape = _tape_for(a, b)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g, b.shape))

        tape.record(bwd)
    return out


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data - b.data)
    tape = _tape_for(a, b)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(-g, b.shape))

        tape.record(bwd)
    return out


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data * b.data)
    tape = _tape_for(a, b)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g * a.data, b.shape))

        tape.record(bwd)
    return out


def div(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data / b.data)
    tape = _tape_for(a, b)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        tape.record(bwd)
    return out


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # branch on sign to keep exp() in the underflow-safe regime
    pos = d >= 0
    ex = np.exp(np.where(pos, -d, d))
    s = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    out = Tensor(s.astype(d.dtype, copy=False))
    tape = _tape_for(x)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            x.accumulate(g * out.data * (1.0 - out.data))

        tape.record(bwd)
    return out


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    pos = x.data > 0
    out = Tensor(np.where(pos, x.data, x.data.dtype.type(slope) * x.data))
    tape = _tape_for(x)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            x.accumulate(np.where(pos, g, x.data.dtype.type(slope) * g))

        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# shape ops


def concat_channels(*tensors):
    """Concatenate along the channel axis (axis 1)."""
    if len(tensors) < 2:
        raise ValueError("concat_channels needs at least two tensors")
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(base) or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ValueError(f"concat_channels shape mismatch: {base} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    tape = _tape_for(*tensors)
    if tape is not None:
        out.requires_grad = True
        sizes = [t.shape[1] for t in tensors]

        def bwd():
            g = out.grad
            if g is None:
                return
            start = 0
            for t, c in zip(tensors, sizes):
                if t.requires_grad:
                    t.accumulate(g[:, start:start + c])
                start += c

        tape.record(bwd)
    return out


def split_channels(x, sizes):
    """Split along the channel axis into chunks of the given sizes."""
    x = as_tensor(x)
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"split sizes {sizes} do not cover {x.shape[1]} channels")
    outs = []
    start = 0
    bounds = []
    for c in sizes:
        outs.append(Tensor(x.data[:, start:start + c].copy()))
        bounds.append((start, start + c))
        start += c
    tape = _tape_for(x)
    if tape is not None:
        for o in outs:
            o.requires_grad = True

        def bwd():
            if not any(o.grad is not None for o in outs):
                return
            g = np.zeros_like(x.data)
            for o, (lo, hi) in zip(outs, bounds):
                if o.grad is not None:
                    g[:, lo:hi] = o.grad
            x.accumulate(g)

        tape.record(bwd)
    return tuple(outs)


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    tape = _tape_for(x)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            x.accumulate(g.reshape(x.shape))

        tape.record(bwd)
    return out


def transpose(x, axes):
    x = as_tensor(x)
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    tape = _tape_for(x)
    if tape is not None:
        out.requires_grad = True
        inv = np.argsort(axes)

        def bwd():
            g = out.grad
            if g is None:
                return
            x.accumulate(g.transpose(inv))

        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra ops


def linear(x, weight, bias=None):
    """Affine map y = x @ weight.T + bias for x of shape (N, in)."""
    x = as_tensor(x)
    if x.ndim != 2 or weight.ndim != 2:
        raise ValueError(f"linear expects matrices, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input dim {x.shape[1]} != weight input dim {weight.shape[1]}")
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data
    out = Tensor(y)
    tape = _tape_for(x, weight, bias) if bias is not None else _tape_for(x, weight)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                x.accumulate(g @ weight.data)
            if weight.requires_grad:
                weight.accumulate(g.T @ x.data)
            if bias is not None and bias.requires_grad:
                bias.accumulate(g.sum(axis=0))

        tape.record(bwd)
    return out


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of (B, Ci, H, W) with (Co, Ci, kh, kw)."""
    x = as_tensor(x)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects rank-4 tensors, got {x.shape} and {weight.shape}")
    b, ci, h, w = x.shape
    co, ci_w, kh, kw = weight.shape
    if ci != ci_w:
        raise ValueError(f"conv2d: input has {ci} channels but weight expects {ci_w}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w} (pad {padding})")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    k = kernels()
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = np.ascontiguousarray(x.data).reshape(b, ci, h * w)
    else:
        cols = k.im2col(np.ascontiguousarray(x.data), kh, kw, stride, padding)
    w_mat = weight.data.reshape(co, ci * kh * kw)
    out_mat = np.matmul(w_mat, cols)
    if bias is not None:
        out_mat = out_mat + bias.data[:, None]
    out = Tensor(out_mat.reshape(b, co, ho, wo))

    tape = _tape_for(x, weight, bias) if bias is not None else _tape_for(x, weight)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            g_mat = g.reshape(b, co, ho * wo)
            if weight.requires_grad:
                gw = np.matmul(g_mat, cols.transpose(0, 2, 1)).sum(axis=0)
                weight.accumulate(gw.reshape(weight.shape))
            if bias is not None and bias.requires_grad:
                bias.accumulate(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                gcols = np.matmul(w_mat.T, g_mat)
                if pointwise:
                    x.accumulate(gcols.reshape(b, ci, h, w))
                else:
                    x.accumulate(kernels().col2im(gcols, ci, h, w, kh, kw, stride, padding))

        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# statistics


def channel_stats(x, epsilon=1e-5, over_batch=False):
    """Spatial mean and std per (batch, channel); shapes keep unit H, W dims.

    std = sqrt(population variance + epsilon).  With over_batch=True the
    statistics pool over the batch axis as well (batch-norm style) and the
    leading dim is 1.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"channel_stats expects rank-4 input, got {x.shape}")
    if x.shape[2] * x.shape[3] == 0:
        raise ValueError("channel_stats: empty spatial extent")
    axes = (0, 2, 3) if over_batch else (2, 3)
    n = x.shape[0] * x.shape[2] * x.shape[3] if over_batch else x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    sig = np.sqrt(var + epsilon)
    out_mu = Tensor(mu)
    out_sig = Tensor(sig)
    tape = _tape_for(x)
    if tape is not None:
        out_mu.requires_grad = True
        out_sig.requires_grad = True

        def bwd():
            gmu, gsig = out_mu.grad, out_sig.grad
            if gmu is None and gsig is None:
                return
            g = np.zeros_like(x.data)
            if gmu is not None:
                g += gmu / n
            if gsig is not None:
                g += gsig * centered / (n * sig)
            x.accumulate(g)

        tape.record(bwd)
    return out_mu, out_sig


def tensor_sum(x):
    """Sum over all elements -> scalar tensor."""
    x = as_tensor(x)
    out = Tensor(x.data.sum())
    tape = _tape_for(x)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            x.accumulate(np.broadcast_to(g, x.shape))

        tape.record(bwd)
    return out


def channel_mean(x):
    """Mean over the channel axis, keepdims."""
    x = as_tensor(x)
    c = x.shape[1]
    out = Tensor(x.data.mean(axis=1, keepdims=True))
    tape = _tape_for(x)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            x.accumulate(np.broadcast_to(g / c, x.shape))

        tape.record(bwd)
    return out


def channel_max(x):
    """Max over the channel axis, keepdims; gradient routes to the argmax."""
    x = as_tensor(x)
    am = x.data.argmax(axis=1, keepdims=True)
    out = Tensor(np.take_along_axis(x.data, am, axis=1))
    tape = _tape_for(x)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, am, g, axis=1)
            x.accumulate(gx)

        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# sampling


def bilinear_sample(x, coords):
    """Sample x (B, C, H, W) at coords (B, 2, Ho, Wo) given as (y, x) pixels.

    Bilinear interpolation of the four neighbors; neighbors outside the
    image read zero.  Differentiable in both the pixel values and the
    coordinates (the coordinate gradient is the analytic derivative of the
    interpolation weights).
    """
    x = as_tensor(x)
    coords = as_tensor(coords, like=x)
    if x.ndim != 4 or coords.ndim != 4 or coords.shape[1] != 2:
        raise ValueError(f"bilinear_sample: bad shapes {x.shape}, {coords.shape}")
    if coords.shape[0] != x.shape[0]:
        raise ValueError(f"bilinear_sample: batch mismatch {x.shape[0]} vs {coords.shape[0]}")
    if not np.isfinite(coords.data).all():
        raise ValueError("bilinear_sample: non-finite coordinates")
    b, c, h, w = x.shape
    ho, wo = coords.shape[2], coords.shape[3]
    s = ho * wo
    ys = np.ascontiguousarray(coords.data[:, 0].reshape(b, s))
    xs = np.ascontiguousarray(coords.data[:, 1].reshape(b, s))
    k = kernels()
    out = Tensor(k.bilinear_gather(np.ascontiguousarray(x.data), ys, xs).reshape(b, c, ho, wo))
    tape = _tape_for(x, coords)
    if tape is not None:
        out.requires_grad = True

        def bwd():
            g = out.grad
            if g is None:
                return
            gout = np.ascontiguousarray(g.reshape(b, c, s))
            gin, gys, gxs = kernels().bilinear_backward(
                np.ascontiguousarray(x.data), ys, xs, gout,
                x.requires_grad, coords.requires_grad)
            if x.requires_grad:
                x.accumulate(gin)
            if coords.requires_grad:
                gc = np.stack([gys.reshape(b, ho, wo), gxs.reshape(b, ho, wo)], axis=1)
                coords.accumulate(gc)

        tape.record(bwd)
    return out
