"""Minimal reverse-mode differentiation engine over dense numpy arrays.

Provides exactly the operations the prototype network's forward and backward
passes need: grouped 1-D convolution, 1x1 channel mixing, sliding squared-L2
distance, temporal max pooling, a dense head, the losses, and a handful of
scalar glue ops. Graphs are built per batch and consumed by a single
``backward()`` call; there is no broadcasting and no higher-order grad.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "GraphError",
    "Tensor",
    "grouped_conv1d",
    "pointwise_mix",
    "relu",
    "sliding_sq_l2",
    "log_ratio",
    "max_over_time",
    "masked_min",
    "linear",
    "softmax_cross_entropy",
    "mse",
    "abs_sum",
    "neg_part_sum",
    "sum_all",
    "mean_all",
    "average_group_blocks",
    "finite_diff_check",
]

# Elements per temporary block in the sliding-distance kernels; keeps peak
# memory bounded when the prototype count grows.
_CHUNK_BUDGET = 8_000_000


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar or repeated backward)."""


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    Treat tensors as immutable values once created; parameters are leaf
    tensors with ``requires_grad=True`` whose ``grad`` slot is filled by
    ``backward()`` on a downstream scalar.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward_fn: Optional[Callable[[np.ndarray], None]] = None,
    ):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim > 3:
            raise ValueError(f"rank {arr.ndim} tensor not supported (max 3)")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._consumed = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{grad})"

    # -- scalar/elementwise glue ----------------------------------------
    def __add__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            raise TypeError("can only add Tensor to Tensor")
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch in add: {self.shape} vs {other.shape}")
        out = _node(self.data + other.data, (self, other))
        if out.requires_grad:
            def backward(g, a=self, b=other):
                _accum(a, g)
                _accum(b, g)
            out._backward_fn = backward
        return out

    def __mul__(self, scalar) -> "Tensor":
        c = float(scalar)
        out = _node(self.data * c, (self,))
        if out.requires_grad:
            def backward(g, a=self, c=c):
                _accum(a, g * c)
            out._backward_fn = backward
        return out

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    # -- reverse pass ---------------------------------------------------
    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar node.

        Fills ``grad`` on every reachable tensor with ``requires_grad``.
        The graph is consumed: a second call on the same node raises.
        """
        if self.size != 1:
            raise GraphError(f"backward requires a scalar node, got shape {self.shape}")
        if self._consumed:
            raise GraphError("graph already consumed by a previous backward call")
        if not self.requires_grad:
            self._consumed = True
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
                node._backward_fn = None  # release saved closures
        self._consumed = True


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, _parents=parents if requires else ())


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# convolution ops
# ---------------------------------------------------------------------------

def grouped_conv1d(x: Tensor, weight: Tensor, bias: Tensor, groups: int) -> Tensor:
    """Length-preserving grouped 1-D convolution, stride 1, symmetric zero pad.

    x: [B, C_in, T]; weight: [C_out, C_in/groups, k] with k odd; bias: [C_out].
    Channels of output group i depend only on input channels of group i.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 3 or weight.ndim != 3 or bias.ndim != 1:
        raise ValueError("grouped_conv1d expects x[B,C,T], weight[O,C/g,k], bias[O]")
    batch, c_in, t_len = x.shape
    c_out, c_in_g, k = weight.shape
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if groups < 1 or c_in % groups or c_out % groups:
        raise ValueError(f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
    if c_in_g != c_in // groups:
        raise ValueError(f"weight expects {c_in_g} channels per group, input provides {c_in // groups}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} != ({c_out},)")

    pad = k // 2
    c_out_g = c_out // groups
    xg = x.data.reshape(batch, groups, c_in_g, t_len)
    xp = np.pad(xg, ((0, 0), (0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=-1)  # [B, g, c_in_g, T, k] view
    # one batched GEMM per layer: [g, B*T, c*k] @ [g, c*k, o]
    cols = np.ascontiguousarray(win.transpose(1, 0, 3, 2, 4)).reshape(groups, batch * t_len, c_in_g * k)
    wg = weight.data.reshape(groups, c_out_g, c_in_g * k)
    y = np.matmul(cols, wg.transpose(0, 2, 1))  # [g, B*T, o]
    y = y.reshape(groups, batch, t_len, c_out_g).transpose(1, 0, 3, 2)
    y = y.reshape(batch, c_out, t_len) + bias.data[None, :, None]

    out = _node(y, (x, weight, bias))
    if out.requires_grad:
        def backward(g, x=x, weight=weight, bias=bias, cols=cols, wg=wg,
                     batch=batch, groups=groups, c_out_g=c_out_g, c_in_g=c_in_g,
                     k=k, pad=pad, t_len=t_len, c_in=c_in):
            gg = g.reshape(batch, groups, c_out_g, t_len)
            if bias.requires_grad:
                _accum(bias, g.sum(axis=(0, 2)))
            gcols = np.ascontiguousarray(gg.transpose(1, 0, 3, 2)).reshape(groups, batch * t_len, c_out_g)
            if weight.requires_grad:
                gw = np.matmul(gcols.transpose(0, 2, 1), cols)  # [g, o, c*k]
                _accum(weight, gw.reshape(weight.shape))
            if x.requires_grad:
                # columns of the padded-input grad, then fold windows back
                gxp_cols = np.matmul(gcols, wg)  # [g, B*T, c*k]
                gxp_cols = gxp_cols.reshape(groups, batch, t_len, c_in_g, k)
                gxp = np.zeros((batch, groups, c_in_g, t_len + 2 * pad), dtype=g.dtype)
                for tau in range(k):
                    gxp[:, :, :, tau:tau + t_len] += gxp_cols[:, :, :, :, tau].transpose(1, 0, 3, 2)
                gx = gxp[:, :, :, pad:pad + t_len]
                _accum(x, gx.reshape(batch, c_in, t_len))
        out._backward_fn = backward
    return out


def pointwise_mix(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """1x1 convolution over channels: out[b,j,t] = sum_i w[j,i]*x[b,i,t] + b[j]."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 3:
        raise ValueError("pointwise_mix expects x[B,C,T]")
    channels = x.shape[1]
    if weight.shape != (channels, channels):
        raise ValueError(f"mixing weight must be square [{channels},{channels}], got {weight.shape}")
    if bias.shape != (channels,):
        raise ValueError(f"mixing bias shape {bias.shape} != ({channels},)")

    y = np.matmul(weight.data, x.data) + bias.data[None, :, None]
    out = _node(y, (x, weight, bias))
    if out.requires_grad:
        def backward(g, x=x, weight=weight, bias=bias, channels=channels):
            if bias.requires_grad:
                _accum(bias, g.sum(axis=(0, 2)))
            if weight.requires_grad:
                gflat = g.transpose(1, 0, 2).reshape(channels, -1)
                xflat = x.data.transpose(1, 0, 2).reshape(channels, -1)
                _accum(weight, gflat @ xflat.T)
            if x.requires_grad:
                _accum(x, np.matmul(weight.data.T, g))
        out._backward_fn = backward
    return out


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _node(np.maximum(x.data, 0.0), (x,))
    if out.requires_grad:
        mask = x.data > 0
        def backward(g, x=x, mask=mask):
            _accum(x, g * mask)
        out._backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# prototype-distance ops
# ---------------------------------------------------------------------------

def _proto_chunks(m: int, per_proto_elems: int) -> Sequence[range]:
    step = max(1, _CHUNK_BUDGET // max(1, per_proto_elems))
    return [range(j, min(j + step, m)) for j in range(0, m, step)]


def sliding_sq_l2(z: Tensor, protos: Tensor) -> Tensor:
    """Squared L2 distance of every length-L window of z to every prototype.

    z: [B, l, T]; protos: [m, l, L]; output: [B, m, T-L+1] with
    out[b,j,s] = sum_{c,tau} (z[b,c,s+tau] - protos[j,c,tau])^2.
    Computed from explicit differences, so a window equal to a prototype
    gives exactly zero.
    """
    z, protos = _as_tensor(z), _as_tensor(protos)
    if z.ndim != 3 or protos.ndim != 3:
        raise ValueError("sliding_sq_l2 expects z[B,l,T] and protos[m,l,L]")
    batch, chans, t_len = z.shape
    m, p_chans, p_len = protos.shape
    if p_chans != chans:
        raise ValueError(f"channel mismatch: z has {chans}, protos have {p_chans}")
    if p_len > t_len:
        raise ValueError(f"prototype length {p_len} exceeds series length {t_len}")

    s_len = t_len - p_len + 1
    win = np.ascontiguousarray(sliding_window_view(z.data, p_len, axis=-1))  # [B, l, S, L]
    dist = np.empty((batch, m, s_len), dtype=z.data.dtype)
    for block in _proto_chunks(m, batch * chans * s_len * p_len):
        diff = win[:, None, :, :, :] - protos.data[None, block, :, None, :]
        dist[:, block, :] = np.einsum("bjcsl,bjcsl->bjs", diff, diff)

    out = _node(dist, (z, protos))
    if out.requires_grad:
        def backward(g, z=z, protos=protos, win=win, batch=batch, m=m,
                     chans=chans, s_len=s_len, p_len=p_len):
            # grad_z[b,c,t] = 2 z[b,c,t] * boxsum_j,s(g) - 2 sum_{j,tau} g[b,j,t-tau] p[j,c,tau]
            # grad_p[j,c,tau] = 2 p[j,c,tau] * sum_{b,s} g - 2 sum_{b,s} g[b,j,s] z[b,c,s+tau]
            pd = protos.data
            if z.requires_grad:
                gsum = g.sum(axis=1)  # [B, S]
                gz = np.zeros_like(z.data)
                box = np.zeros((batch, z.data.shape[2]), dtype=g.dtype)
                corr = np.tensordot(g, pd, axes=([1], [0]))  # [B, S, l, L]
                for tau in range(p_len):
                    box[:, tau:tau + s_len] += gsum
                    gz[:, :, tau:tau + s_len] -= 2.0 * corr[:, :, :, tau].transpose(0, 2, 1)
                gz += 2.0 * z.data * box[:, None, :]
                _accum(z, gz)
            if protos.requires_grad:
                gtot = g.sum(axis=(0, 2))  # [m]
                gmat = g.transpose(1, 0, 2).reshape(m, batch * s_len)
                wmat = win.transpose(0, 2, 1, 3).reshape(batch * s_len, chans * p_len)
                gp = 2.0 * pd * gtot[:, None, None] - 2.0 * (gmat @ wmat).reshape(m, chans, p_len)
                _accum(protos, gp)
        out._backward_fn = backward
    return out


def log_ratio(dist: Tensor, epsilon: float) -> Tensor:
    """Similarity transform log((d + 1) / (d + epsilon)), elementwise on d >= 0."""
    dist = _as_tensor(dist)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    d = dist.data
    y = np.log(d + 1.0) - np.log(d + epsilon)
    out = _node(y, (dist,))
    if out.requires_grad:
        def backward(g, dist=dist, d=d, epsilon=epsilon):
            _accum(dist, g * (1.0 / (d + 1.0) - 1.0 / (d + epsilon)))
        out._backward_fn = backward
    return out


def max_over_time(d: Tensor) -> tuple[Tensor, np.ndarray]:
    """Max over the trailing temporal axis of [B, m, S].

    Returns (values [B, m], argmax [B, m]); ties resolve to the smallest
    offset, and the gradient flows only to the winning offset.
    """
    d = _as_tensor(d)
    if d.ndim != 3:
        raise ValueError("max_over_time expects [B, m, S]")
    if d.shape[2] == 0:
        raise ValueError("empty temporal axis")
    argmax = d.data.argmax(axis=2)  # first occurrence wins ties
    values = np.take_along_axis(d.data, argmax[:, :, None], axis=2)[:, :, 0]
    out = _node(values, (d,))
    if out.requires_grad:
        def backward(g, d=d, argmax=argmax):
            gd = np.zeros_like(d.data)
            np.put_along_axis(gd, argmax[:, :, None], g[:, :, None], axis=2)
            _accum(d, gd)
        out._backward_fn = backward
    return out, argmax


def masked_min(d: Tensor, mask: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Per-item min of d[b, j, s] over offsets s and prototypes j with mask[b, j].

    Returns (values [B], argmin [B, 2]) where argmin rows are (j, s); ties
    resolve to the lexicographically smallest (j, s). Gradient flows only to
    the winning entry of each item.
    """
    d = _as_tensor(d)
    if d.ndim != 3:
        raise ValueError("masked_min expects [B, m, S]")
    mask = np.asarray(mask, dtype=bool)
    batch, m, s_len = d.shape
    if mask.shape != (batch, m):
        raise ValueError(f"mask shape {mask.shape} != ({batch}, {m})")
    if not mask.any(axis=1).all():
        raise ValueError("each batch item needs at least one unmasked prototype")

    screened = np.where(mask[:, :, None], d.data, np.inf)
    flat = screened.reshape(batch, m * s_len)
    idx = flat.argmin(axis=1)
    values = flat[np.arange(batch), idx]
    argmin = np.stack([idx // s_len, idx % s_len], axis=1)

    out = _node(values, (d,))
    if out.requires_grad:
        def backward(g, d=d, argmin=argmin, batch=batch):
            gd = np.zeros_like(d.data)
            gd[np.arange(batch), argmin[:, 0], argmin[:, 1]] = g
            _accum(d, gd)
        out._backward_fn = backward
    return out, argmin


# ---------------------------------------------------------------------------
# head and losses
# ---------------------------------------------------------------------------

def linear(a: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Dense head: logits[b, c] = sum_j weight[c, j] * a[b, j] (+ bias[c])."""
    a, weight = _as_tensor(a), _as_tensor(weight)
    if a.ndim != 2 or weight.ndim != 2 or a.shape[1] != weight.shape[1]:
        raise ValueError(f"linear shape mismatch: a{a.shape} vs weight{weight.shape}")
    y = a.data @ weight.data.T
    parents = (a, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} != ({weight.shape[0]},)")
        y = y + bias.data[None, :]
        parents = (a, weight, bias)
    out = _node(y, parents)
    if out.requires_grad:
        def backward(g, a=a, weight=weight, bias=bias):
            if a.requires_grad:
                _accum(a, g @ weight.data)
            if weight.requires_grad:
                _accum(weight, g.T @ a.data)
            if bias is not None and bias.requires_grad:
                _accum(bias, g.sum(axis=0))
        out._backward_fn = backward
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-subtracted."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError("softmax_cross_entropy expects logits[B, C]")
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} != ({batch},)")
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label out of range [0, {classes})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float((logsumexp - shifted[np.arange(batch), labels]).mean())
    out = _node(np.asarray(loss, dtype=logits.dtype), (logits,))
    if out.requires_grad:
        def backward(g, logits=logits, shifted=shifted, labels=labels, batch=batch):
            probs = np.exp(shifted)
            probs /= probs.sum(axis=1, keepdims=True)
            probs[np.arange(batch), labels] -= 1.0
            _accum(logits, (float(g) / batch) * probs)
        out._backward_fn = backward
    return out


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared elementwise difference."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = _node(np.asarray(float((diff * diff).mean()), dtype=pred.dtype), (pred, target))
    if out.requires_grad:
        def backward(g, pred=pred, target=target, diff=diff):
            scaled = (2.0 * float(g) / diff.size) * diff
            if pred.requires_grad:
                _accum(pred, scaled)
            if target.requires_grad:
                _accum(target, -scaled)
        out._backward_fn = backward
    return out


def abs_sum(w: Tensor) -> Tensor:
    """Sum of absolute values (L1); subgradient 0 at exact zeros."""
    w = _as_tensor(w)
    out = _node(np.asarray(float(np.abs(w.data).sum()), dtype=w.dtype), (w,))
    if out.requires_grad:
        def backward(g, w=w):
            _accum(w, float(g) * np.sign(w.data))
        out._backward_fn = backward
    return out


def neg_part_sum(w: Tensor) -> Tensor:
    """Sum of magnitudes of the negative entries: sum(max(0, -w))."""
    w = _as_tensor(w)
    out = _node(np.asarray(float(np.maximum(-w.data, 0.0).sum()), dtype=w.dtype), (w,))
    if out.requires_grad:
        def backward(g, w=w):
            _accum(w, float(g) * np.where(w.data < 0, -1.0, 0.0))
        out._backward_fn = backward
    return out


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _node(np.asarray(float(x.data.sum()), dtype=x.dtype), (x,))
    if out.requires_grad:
        def backward(g, x=x):
            _accum(x, np.full_like(x.data, float(g)))
        out._backward_fn = backward
    return out


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = _node(np.asarray(float(x.data.mean()), dtype=x.dtype), (x,))
    if out.requires_grad:
        def backward(g, x=x):
            _accum(x, np.full_like(x.data, float(g) / x.size))
        out._backward_fn = backward
    return out


def average_group_blocks(x: Tensor, groups: int) -> Tensor:
    """Mean over the leading channel blocks: [B, g*d, T] -> [B, d, T]."""
    x = _as_tensor(x)
    if x.ndim != 3 or x.shape[1] % groups:
        raise ValueError(f"cannot split {x.shape} into {groups} channel blocks")
    batch, total, t_len = x.shape
    d = total // groups
    y = x.data.reshape(batch, groups, d, t_len).mean(axis=1)
    out = _node(y, (x,))
    if out.requires_grad:
        def backward(g, x=x, groups=groups, batch=batch, d=d, t_len=t_len):
            gx = np.broadcast_to(g[:, None, :, :] / groups, (batch, groups, d, t_len))
            _accum(x, gx.reshape(batch, groups * d, t_len))
        out._backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Compare the analytic gradient of scalar-valued f at x to central differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    Raises on non-finite intermediates; meaningful only at 64-bit precision.
    """
    base = np.array(_as_tensor(x).data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise GraphError("finite_diff_check needs a scalar-valued function")
    out.backward()
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(base.copy())).item()
        flat[i] = orig - step
        lo = f(Tensor(base.copy())).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError("non-finite intermediate in finite differences")
        num_flat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(analytic))
    return float((np.abs(analytic - numeric) / denom).max())
