"""Rank-4 tensors with reverse-mode automatic differentiation.

Every value is a dense [n, c, h, w] array (scalars are [1, 1, 1, 1]).
Ops build an implicit tape through `_prev` links; `backward()` walks it
in reverse topological order and accumulates gradients into leaves.
All ops are deterministic given identical inputs.
"""

from __future__ import annotations

import struct

import numpy as np

BCE_EPS = 1e-7

_SUPPORTED_DTYPES = (np.float32, np.float64)


class Tensor:
    """A [n, c, h, w] array plus an optional gradient buffer.

    Tensors are immutable during the forward pass; `backward` mutates
    only `grad` buffers. `requires_grad` marks trainable leaves; the
    flag propagates through ops so untracked subgraphs carry no tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_op",
                 "_backward_fn", "_backward_done")

    def __init__(self, data, requires_grad: bool = False,
                 dtype=np.float32, _prev=(), _op: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(dtype)
        if arr.ndim != 4:
            raise ValueError(f"tensor must be rank 4, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._prev = tuple(_prev)
        self._op = _op
        self._backward_fn = None
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(())[()])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def sum(self) -> "Tensor":
        """Reduce all elements to a scalar [1,1,1,1] tensor."""
        out = _result(self.data.sum(dtype=self.dtype).reshape(1, 1, 1, 1),
                      (self,), "sum")

        def _bw():
            g = out.grad.reshape(())
            _accumulate(self, np.full(self.data.shape, g, dtype=self.dtype))

        out._backward_fn = _bw
        return out

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return (f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad}, op={self._op!r})")


def scalar(value: float, dtype=np.float32) -> Tensor:
    """Wrap a python number as a [1,1,1,1] tensor."""
    return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))


def _result(data: np.ndarray, prev: tuple, op: str) -> Tensor:
    """Build an op output, recording the tape edge only when needed."""
    track = any(p.requires_grad for p in prev)
    if track:
        out = Tensor(data, requires_grad=True, _prev=prev, _op=op)
    else:
        out = Tensor(data, _op=op)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


def backward(loss: Tensor) -> None:
    """Populate grad buffers of every `requires_grad` leaf below `loss`.

    The root must be scalar and attached to a tape; calling twice on
    the same root without rebuilding the graph is an error.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {loss.shape}")
    if loss._backward_done:
        raise RuntimeError("backward already ran on this root; rebuild the graph first")
    if not loss._prev:
        raise RuntimeError("backward on a detached tensor (no recorded ops)")
    loss._backward_done = True

    # Iterative post-order DFS; _prev tuples keep traversal deterministic.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn()


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add")

    def _bw():
        _accumulate(a, out.grad)
        _accumulate(b, out.grad)

    out._backward_fn = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    out = _result(a.data - b.data, (a, b), "sub")

    def _bw():
        _accumulate(a, out.grad)
        _accumulate(b, -out.grad)

    out._backward_fn = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul")

    def _bw():
        _accumulate(a, out.grad * b.data)
        _accumulate(b, out.grad * a.data)

    out._backward_fn = _bw
    return out


def scalar_rsub(s: float, a: Tensor) -> Tensor:
    """Compute s - a for a python scalar s."""
    out = _result(s - a.data, (a,), "scalar_rsub")

    def _bw():
        _accumulate(a, -out.grad)

    out._backward_fn = _bw
    return out


def scale(a: Tensor, s: float) -> Tensor:
    """Compute s * a for a python scalar s."""
    out = _result(a.data * s, (a,), "scale")

    def _bw():
        _accumulate(a, out.grad * s)

    out._backward_fn = _bw
    return out


def relu(a: Tensor) -> Tensor:
    out = _result(np.maximum(a.data, 0), (a,), "relu")

    def _bw():
        _accumulate(a, out.grad * (a.data > 0))

    out._backward_fn = _bw
    return out


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; pick the matching branch per element
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def sigmoid(a: Tensor) -> Tensor:
    p = _sigmoid_raw(a.data)
    out = _result(p, (a,), "sigmoid")

    def _bw():
        _accumulate(a, out.grad * p * (1.0 - p))

    out._backward_fn = _bw
    return out


def concat_channels(tensors: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis; n, h, w must agree."""
    if not tensors:
        raise ValueError("concat_channels: empty input list")
    first = tensors[0]
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ValueError(f"concat_channels: incompatible shapes {first.shape} vs {t.shape}")
        if t.dtype != first.dtype:
            raise ValueError("concat_channels: dtype mismatch")
    data = np.concatenate([t.data for t in tensors], axis=1)
    out = _result(data, tuple(tensors), "concat")
    offsets = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _bw():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            _accumulate(t, out.grad[:, lo:hi])

    out._backward_fn = _bw
    return out


# ---------------------------------------------------------------------------
# convolution / pooling / resize


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int,
            oh: int, ow: int) -> np.ndarray:
    """Extract sliding windows from a padded input as (n, c*kh*kw, oh*ow)."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, dilation * sh, dilation * sw, stride * sh, stride * sw),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, oh * ow)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, dilation: int = 1) -> Tensor:
    """2D cross-correlation with zero padding.

    x: [n, cin, h, w]; weight: [cout, cin, kh, kw]; bias: [1, cout, 1, 1].
    Output size per axis: (size + 2p - d*(k-1) - 1) // s + 1.
    """
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise ValueError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv2d: stride/dilation must be >= 1 and padding >= 0")
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ValueError(f"conv2d: bias shape {bias.shape} != (1, {cout}, 1, 1)")
    if x.dtype != weight.dtype or (bias is not None and bias.dtype != x.dtype):
        raise ValueError("conv2d: dtype mismatch between input and parameters")
    oh = conv_output_size(h, kh, stride, padding, dilation)
    ow = conv_output_size(w, kw, stride, padding, dilation)
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv2d: non-positive output extent {oh}x{ow} "
                         f"for input {h}x{w}, k={kh}x{kw}, stride={stride}, "
                         f"padding={padding}, dilation={dilation}")

    if padding > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = np.ascontiguousarray(_im2col(xp, kh, kw, stride, dilation, oh, ow))
    w2 = weight.data.reshape(cout, cin * kh * kw)
    y = np.matmul(w2[None, :, :], cols).reshape(n, cout, oh, ow)
    if bias is not None:
        y = y + bias.data

    prev = (x, weight) if bias is None else (x, weight, bias)
    out = _result(y, prev, "conv2d")

    def _bw():
        g = out.grad.reshape(n, cout, oh * ow)
        _accumulate(weight, np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weight.shape))
        if bias is not None:
            _accumulate(bias, out.grad.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1))
        if x.requires_grad:
            gcols = np.matmul(w2.T[None, :, :], g)
            gcols = gcols.reshape(n, cin, kh, kw, oh, ow)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                hi = i * dilation
                for j in range(kw):
                    wj = j * dilation
                    gxp[:, :, hi:hi + stride * oh:stride,
                        wj:wj + stride * ow:stride] += gcols[:, :, i, j]
            if padding > 0:
                gxp = gxp[:, :, padding:padding + h, padding:padding + w]
            _accumulate(x, gxp)

    out._backward_fn = _bw
    return out


def avg_pool2d(x: Tensor, k: int, stride: int, padding: int = 0) -> Tensor:
    """k x k mean pooling with zero padding; divisor is always k*k."""
    if k < 1:
        raise ValueError("avg_pool2d: k must be >= 1")
    n, c, h, w = x.shape
    oh = conv_output_size(h, k, stride, padding, 1)
    ow = conv_output_size(w, k, stride, padding, 1)
    if oh <= 0 or ow <= 0:
        raise ValueError(f"avg_pool2d: non-positive output extent {oh}x{ow}")
    if padding > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, oh, ow, k, k),
        strides=(sn, sc, stride * sh, stride * sw, sh, sw), writeable=False)
    y = view.mean(axis=(4, 5), dtype=x.dtype)
    out = _result(y, (x,), "avg_pool2d")

    def _bw():
        g = out.grad * np.asarray(1.0 / (k * k), dtype=x.dtype)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += g
        if padding > 0:
            gxp = gxp[:, :, padding:padding + h, padding:padding + w]
        _accumulate(x, gxp)

    out._backward_fn = _bw
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, output [n, c, 1, 1]."""
    n, c, h, w = x.shape
    y = x.data.mean(axis=(2, 3), keepdims=True, dtype=x.dtype)
    out = _result(y, (x,), "global_avg_pool")

    def _bw():
        g = out.grad * np.asarray(1.0 / (h * w), dtype=x.dtype)
        _accumulate(x, np.broadcast_to(g, x.data.shape).copy())

    out._backward_fn = _bw
    return out


def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """1D bilinear interpolation matrix under half-pixel-center mapping.

    Row o holds the weights over input cells for output cell o:
    src = (o + 0.5) * n_in / n_out - 0.5, clamped to [0, n_in - 1].
    n_out == n_in yields the identity matrix exactly.
    """
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resize with half-pixel centers and edge clamping."""
    if out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resize: output extents must be >= 1")
    n, c, h, w = x.shape
    my = interp_matrix(h, out_h, x.dtype)
    mx = interp_matrix(w, out_w, x.dtype)
    y = np.matmul(np.matmul(my[None, None], x.data), mx.T[None, None])
    out = _result(y, (x,), "bilinear_resize")

    def _bw():
        _accumulate(x, np.matmul(np.matmul(my.T[None, None], out.grad), mx[None, None]))

    out._backward_fn = _bw
    return out


# ---------------------------------------------------------------------------
# loss


def bce_loss(pred_logits: Tensor, target: Tensor) -> Tensor:
    """Sigmoid + binary cross-entropy, mean-reduced over all elements.

    Probabilities are clamped to [BCE_EPS, 1 - BCE_EPS] before the log.
    The gradient w.r.t. the logits is (p - g) / N with p the clamped
    probability.
    """
    _check_same(pred_logits, target, "bce_loss")
    t = target.data
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_loss: target must be binary (0/1)")
    p = _sigmoid_raw(pred_logits.data)
    np.clip(p, BCE_EPS, 1.0 - BCE_EPS, out=p)
    n_total = p.size
    loss = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean(dtype=pred_logits.dtype)
    out = _result(np.asarray(loss).reshape(1, 1, 1, 1), (pred_logits, target), "bce_loss")

    def _bw():
        g = out.grad.reshape(())
        _accumulate(pred_logits, ((p - t) * (g / n_total)).astype(pred_logits.dtype))

    out._backward_fn = _bw
    return out


# ---------------------------------------------------------------------------
# raw tensor file format

TENSOR_MAGIC = b"BANT"
TENSOR_VERSION = 1


def write_tensor_raw(f, arr: np.ndarray) -> None:
    """Write one array in the raw tensor format (f32 little-endian payload)."""
    if arr.ndim != 4:
        raise ValueError(f"raw tensor format is rank 4, got shape {arr.shape}")
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<II", TENSOR_VERSION, 4))
    f.write(struct.pack("<4I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_raw(f) -> np.ndarray:
    magic = f.read(4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<II", f.read(8))
    if version != TENSOR_VERSION:
        raise ValueError(f"unsupported tensor format version {version}")
    if rank != 4:
        raise ValueError(f"unsupported tensor rank {rank}")
    shape = struct.unpack("<4I", f.read(16))
    count = int(np.prod(shape))
    payload = f.read(4 * count)
    if len(payload) != 4 * count:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
