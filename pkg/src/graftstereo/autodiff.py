"""Reverse-mode differentiation over the fixed matching pipeline.

This is not a general autodiff system: it is a closed set of operations
(convolutions, activation, resampling, cost construction, softmax/regression,
losses) recorded on a tape, enough to differentiate
feature -> adaptor -> cost -> aggregation -> disparity -> loss end to end.
Values are raw numpy arrays; float64 inputs run the same graph in a 64-bit
shadow used by the finite-difference checker.
"""

from __future__ import annotations

import numpy as np

from .cost import hypothesis_mask
from .errors import EmptyMask, GraphNotRecorded, ShapeMismatch
from .tensor import (conv2d_bwd, conv2d_fwd, conv3d_bwd, conv3d_fwd,
                     l2norm_bwd, l2norm_fwd)


class Node:
    """One value in the recorded graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    def accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g


def leaf(value: np.ndarray, requires_grad: bool = True) -> Node:
    return Node(np.asarray(value), requires_grad=requires_grad)


def const(value) -> Node:
    return Node(np.asarray(value), requires_grad=False)


def _op(value, parents, backward_fn) -> Node:
    req = any(p.requires_grad for p in parents)
    return Node(np.asarray(value), parents, backward_fn if req else None, req)


def backward(loss: Node) -> None:
    """Accumulate gradients of a scalar loss into every recorded node."""
    if loss.value.shape != ():
        raise ShapeMismatch(f"backward needs a scalar loss, got {loss.value.shape}")
    if not loss.parents:
        raise GraphNotRecorded("loss is not the output of a recorded graph")
    topo, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    loss.grad = np.ones((), dtype=loss.value.dtype)
    for node in reversed(topo):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(x: Node, y: Node) -> Node:
    if x.value.shape != y.value.shape:
        raise ShapeMismatch(f"add shapes differ: {x.value.shape} vs {y.value.shape}")

    def bwd(g):
        if x.requires_grad:
            x.accum(g)
        if y.requires_grad:
            y.accum(g)

    return _op(x.value + y.value, (x, y), bwd)


def scale(x: Node, c: float) -> Node:
    def bwd(g):
        if x.requires_grad:
            x.accum(g * c)

    return _op(x.value * x.value.dtype.type(c), (x,), bwd)


def leaky_relu(x: Node, slope: float = 0.1) -> Node:
    keep = x.value >= 0
    out = np.where(keep, x.value, x.value * x.value.dtype.type(slope))

    def bwd(g):
        x.accum(np.where(keep, g, g * g.dtype.type(slope)))

    return _op(out, (x,), bwd)


def reshape(x: Node, shape) -> Node:
    def bwd(g):
        x.accum(g.reshape(x.value.shape))

    return _op(x.value.reshape(shape), (x,), bwd)


def decimate2(x: Node) -> Node:
    """Keep every other row/column of the last two axes."""
    out = np.ascontiguousarray(x.value[..., ::2, ::2])

    def bwd(g):
        dx = np.zeros_like(x.value)
        dx[..., ::2, ::2] = g
        x.accum(dx)

    return _op(out, (x,), bwd)


def upsample_nearest2x(x: Node) -> Node:
    out = np.repeat(np.repeat(x.value, 2, axis=-2), 2, axis=-1)

    def bwd(g):
        s = g.shape
        blocks = g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2))
        x.accum(blocks.sum(axis=(-3, -1)))

    return _op(out, (x,), bwd)


def _lin_coords(out_len: int, in_len: int, align: bool, dtype):
    if align:
        src = (np.arange(out_len, dtype=np.float64) * (in_len - 1) / (out_len - 1)
               if out_len > 1 else np.zeros(1))
    else:
        src = (np.arange(out_len, dtype=np.float64) + 0.5) * in_len / out_len - 0.5
        src = np.clip(src, 0.0, in_len - 1)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_len - 1)
    i1 = np.minimum(i0 + 1, in_len - 1)
    w = (src - i0).astype(dtype)
    return i0, i1, w


def lin_resample(x: Node, axis: int, out_len: int, align: bool) -> Node:
    """Linear resampling along one axis.

    align=True maps endpoints exactly (used on the disparity axis so output
    bin d samples input bin d/4); align=False uses half-pixel centers (spatial
    upsampling to 4x the grid).
    """
    in_len = x.value.shape[axis]
    i0, i1, w = _lin_coords(out_len, in_len, align, x.value.dtype)
    wshape = [1] * x.value.ndim
    wshape[axis] = out_len
    w = w.reshape(wshape)
    out = (np.take(x.value, i0, axis=axis) * (1 - w)
           + np.take(x.value, i1, axis=axis) * w)

    def bwd(g):
        dx = np.zeros_like(np.moveaxis(x.value, axis, 0))
        gm = np.moveaxis(g, axis, 0)
        wm = np.moveaxis(np.broadcast_to(w, g.shape), axis, 0)
        np.add.at(dx, i0, gm * (1 - wm))
        np.add.at(dx, i1, gm * wm)
        x.accum(np.moveaxis(dx, 0, axis))

    return _op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolutions


def conv2d(x: Node, k: Node, b: Node, stride: int = 1, pad: int = 0) -> Node:
    out, patches = conv2d_fwd(x.value, k.value, b.value, stride, pad)

    def bwd(g):
        dx, dk, db = conv2d_bwd(g, x.value, k.value, patches, stride, pad,
                                need_dx=x.requires_grad, need_dk=k.requires_grad)
        if dx is not None:
            x.accum(dx)
        if dk is not None:
            k.accum(dk)
            b.accum(db)

    return _op(out, (x, k, b), bwd)


def conv3d(x: Node, k: Node, b: Node, stride: int = 1, pad: int = 0) -> Node:
    out, patches = conv3d_fwd(x.value, k.value, b.value, stride, pad)

    def bwd(g):
        dx, dk, db = conv3d_bwd(g, x.value, k.value, patches, stride, pad,
                                need_dx=x.requires_grad, need_dk=k.requires_grad)
        if dx is not None:
            x.accum(dx)
        if dk is not None:
            k.accum(dk)
            b.accum(db)

    return _op(out, (x, k, b), bwd)


# ---------------------------------------------------------------------------
# cost construction


def l2norm_channels(x: Node, eps: float) -> Node:
    out, norm, clamped = l2norm_fwd(x.value, eps)

    def bwd(g):
        x.accum(l2norm_bwd(g, x.value, norm, clamped))

    return _op(out, (x,), bwd)


def shifted_dot(l: Node, r: Node, d_max: int, fill: float) -> Node:
    """out[d,y,x] = sum_c l[c,y,x] * r[c,y,x-d]; out-of-frame slots = fill."""
    c, h, w = l.value.shape
    dt = l.value.dtype
    out = np.full((d_max + 1, h, w), fill, dtype=dt)
    for d in range(d_max + 1):
        out[d, :, d:] = np.einsum("chw,chw->hw", l.value[:, :, d:],
                                  r.value[:, :, :w - d], dtype=np.float64)

    def bwd(g):
        dl = np.zeros_like(l.value)
        dr = np.zeros_like(r.value)
        for d in range(d_max + 1):
            gs = g[d, :, d:][None]
            dl[:, :, d:] += gs * r.value[:, :, :w - d]
            dr[:, :, :w - d] += gs * l.value[:, :, d:]
        if l.requires_grad:
            l.accum(dl)
        if r.requires_grad:
            r.accum(dr)

    return _op(out, (l, r), bwd)


def l2_distance_volume(l: Node, r: Node, d_max: int, squared: bool = False) -> Node:
    """out[d,y,x] = ||l(:,y,x) - r(:,y,x-d)||; invalid slots = 2 * max valid.

    The fill tracks the volume content, so its gradient is routed into the
    element attaining the maximum (first occurrence on ties).
    """
    c, h, w = l.value.shape
    dt = l.value.dtype
    dist = np.zeros((d_max + 1, h, w), dtype=dt)
    for d in range(d_max + 1):
        diff = l.value[:, :, d:] - r.value[:, :, :w - d]
        sq = np.einsum("chw,chw->hw", diff, diff, dtype=np.float64)
        dist[d, :, d:] = sq if squared else np.sqrt(sq)
    valid = hypothesis_mask(d_max, h, w)
    out = dist.copy()
    max_idx = None
    if not valid.all():
        vals = np.where(valid, dist, -np.inf)
        max_idx = np.unravel_index(np.argmax(vals), vals.shape)
        out[~valid] = 2 * dist[max_idx]

    def bwd(g):
        g_eff = np.array(g, copy=True)
        g_eff[~valid] = 0
        if max_idx is not None:
            g_eff[max_idx] += 2 * g[~valid].sum(dtype=np.float64)
        dl = np.zeros_like(l.value)
        dr = np.zeros_like(r.value)
        for d in range(d_max + 1):
            diff = l.value[:, :, d:] - r.value[:, :, :w - d]
            if squared:
                w_d = 2 * g_eff[d, :, d:][None]
            else:
                denom = np.maximum(dist[d, :, d:], dt.type(1e-12))
                w_d = (g_eff[d, :, d:] / denom)[None]
            dl[:, :, d:] += w_d * diff
            dr[:, :, :w - d] -= w_d * diff
        if l.requires_grad:
            l.accum(dl)
        if r.requires_grad:
            r.accum(dr)

    return _op(out, (l, r), bwd)


def concat_volume(l: Node, r: Node, d_max: int) -> Node:
    """out[:,d,y,x] = [l(:,y,x); r(:,y,x-d)]; out-of-frame slots all zero."""
    c, h, w = l.value.shape
    out = np.zeros((2 * c, d_max + 1, h, w), dtype=l.value.dtype)
    for d in range(d_max + 1):
        out[:c, d, :, d:] = l.value[:, :, d:]
        out[c:, d, :, d:] = r.value[:, :, :w - d]

    def bwd(g):
        dl = np.zeros_like(l.value)
        dr = np.zeros_like(r.value)
        for d in range(d_max + 1):
            dl[:, :, d:] += g[:c, d, :, d:]
            dr[:, :, :w - d] += g[c:, d, :, d:]
        if l.requires_grad:
            l.accum(dl)
        if r.requires_grad:
            r.accum(dr)

    return _op(out, (l, r), bwd)


# ---------------------------------------------------------------------------
# disparity head


def softmax_disparity(x: Node, temperature: float, valid: np.ndarray) -> Node:
    """Masked softmax over axis 0 of [D,H,W]; invalid hypotheses get 0 mass."""
    if x.value.shape != valid.shape:
        raise ShapeMismatch(
            f"scores {x.value.shape} vs hypothesis mask {valid.shape}")
    dt = x.value.dtype
    z = np.where(valid, x.value / dt.type(temperature), dt.type(-np.inf))
    m = z.max(axis=0, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=0, keepdims=True)

    def bwd(g):
        inner = (g * p).sum(axis=0, keepdims=True)
        x.accum((g - inner) * p / dt.type(temperature))

    return _op(p, (x,), bwd)


def regress_disparity(p: Node) -> Node:
    d = np.arange(p.value.shape[0], dtype=np.float64)
    out = np.einsum("dhw,d->hw", p.value, d, dtype=np.float64).astype(p.value.dtype)

    def bwd(g):
        p.accum(g[None] * d[:, None, None].astype(g.dtype))

    return _op(out, (p,), bwd)


def cross_entropy(p: Node, target: np.ndarray, mask: np.ndarray,
                  eps_log: float = 1e-12) -> Node:
    """Mean over masked pixels of sum_d -target * log(p + eps_log)."""
    n = int(mask.sum())
    if n == 0:
        raise EmptyMask("cross entropy over an all-false mask")
    dt = p.value.dtype
    logp = np.log(p.value + dt.type(eps_log))
    per_pixel = -(target * logp).sum(axis=0)
    total = per_pixel[mask].sum(dtype=np.float64) / n

    def bwd(g):
        dp = -target / (p.value + dt.type(eps_log))
        dp *= mask[None].astype(dt) / dt.type(n)
        p.accum(dp * g)

    return _op(dt.type(total), (p,), bwd)


def smooth_l1(d: Node, gt: np.ndarray, mask: np.ndarray) -> Node:
    """Mean over masked pixels of the huber penalty with knee at 1 px."""
    n = int(mask.sum())
    if n == 0:
        raise EmptyMask("smooth l1 over an all-false mask")
    dt = d.value.dtype
    e = d.value - gt
    ae = np.abs(e)
    per_pixel = np.where(ae < 1, 0.5 * e * e, ae - 0.5)
    total = per_pixel[mask].sum(dtype=np.float64) / n

    def bwd(g):
        de = np.where(ae < 1, e, np.sign(e))
        d.accum(de * (mask.astype(dt) / dt.type(n)) * g)

    return _op(dt.type(total), (d,), bwd)
