"""Dense tensor type and the numeric kernels every other module builds on.

Values are float32, row-major, immutable once constructed. Data tensors
carry 1 to 4 axes; a fifth axis is admitted only so 3-d convolution
kernels [Co,C,kd,kh,kw] fit the same type (the file container stays
capped at 4). Convolutions are cross-correlations with zero padding; the
output extent (n + 2*pad - k) must divide the stride exactly, otherwise
ShapeMismatch is raised (no silent flooring). All reductions run in a
fixed order so repeated runs on the same inputs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import AxisOutOfRange, ShapeMismatch


class Tensor:
    """Immutable dense array of float32, shape length 1-5."""

    __slots__ = ("_a",)

    def __init__(self, array, copy: bool = True):
        a = np.array(array, dtype=np.float32, copy=copy, order="C")
        if a.ndim < 1 or a.ndim > 5:
            raise ShapeMismatch(f"tensor must have 1-5 axes, got {a.ndim}")
        if any(n < 1 for n in a.shape):
            raise ShapeMismatch(f"all extents must be >= 1, got {a.shape}")
        a.flags.writeable = False
        self._a = a

    @property
    def array(self) -> np.ndarray:
        """Shaped read-only float32 view."""
        return self._a

    @property
    def data(self) -> np.ndarray:
        """Flat (row-major) read-only view of the payload."""
        return self._a.reshape(-1)

    @property
    def shape(self) -> tuple:
        return self._a.shape

    @property
    def ndim(self) -> int:
        return self._a.ndim

    @property
    def size(self) -> int:
        return self._a.size

    def tolist(self):
        return self._a.tolist()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    @staticmethod
    def zeros(shape) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float32), copy=False)

    @staticmethod
    def full(shape, value) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=np.float32), copy=False)


def _as_array(x) -> np.ndarray:
    return x.array if isinstance(x, Tensor) else np.asarray(x)


def _out_extent(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ShapeMismatch(
            f"extent {n} with kernel {k}, stride {stride}, pad {pad} does not "
            f"produce an integral output size"
        )
    out = span // stride + 1
    if out < 1:
        raise ShapeMismatch("output extent must be >= 1")
    return out


def _check_conv_args(kshape, stride, pad, nspatial):
    if stride < 1:
        raise ShapeMismatch(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ShapeMismatch(f"pad must be >= 0, got {pad}")
    for k in kshape[-nspatial:]:
        if k % 2 == 0:
            raise ShapeMismatch(f"kernel extents must be odd, got {kshape}")


def conv2d_fwd(x: np.ndarray, k: np.ndarray, b: np.ndarray, stride: int, pad: int):
    """Cross-correlation on [C,H,W] with kernel [C_out,C,kh,kw].

    Returns (out, patches); patches is the im2col matrix kept for backward.
    """
    c_out, c_in, kh, kw = k.shape
    if x.shape[0] != c_in:
        raise ShapeMismatch(f"input channels {x.shape[0]} != kernel channels {c_in}")
    if b.shape != (c_out,):
        raise ShapeMismatch(f"bias shape {b.shape} != ({c_out},)")
    ho = _out_extent(x.shape[1], kh, stride, pad)
    wo = _out_extent(x.shape[2], kw, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # [C, ho, wo, kh, kw]
    patches = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, ho * wo)
    patches = np.ascontiguousarray(patches)
    out = k.reshape(c_out, -1) @ patches
    out += b[:, None]
    return out.reshape(c_out, ho, wo), patches


def conv2d_bwd(grad: np.ndarray, x: np.ndarray, k: np.ndarray, patches: np.ndarray,
               stride: int, pad: int, need_dx: bool = True, need_dk: bool = True):
    """Gradients of conv2d_fwd w.r.t. input, kernel and bias."""
    c_out, c_in, kh, kw = k.shape
    _, ho, wo = grad.shape
    gm = grad.reshape(c_out, -1)
    dk = db = dx = None
    if need_dk:
        dk = (gm @ patches.T).reshape(k.shape)
        db = gm.sum(axis=1)
    if need_dx:
        dcols = (k.reshape(c_out, -1).T @ gm).reshape(c_in, kh, kw, ho, wo)
        hp, wp = x.shape[1] + 2 * pad, x.shape[2] + 2 * pad
        dxp = np.zeros((c_in, hp, wp), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
        dx = dxp[:, pad:hp - pad, pad:wp - pad] if pad else dxp
    return dx, dk, db


def conv3d_fwd(x: np.ndarray, k: np.ndarray, b: np.ndarray, stride: int, pad: int):
    """Cross-correlation on [C,D,H,W] with kernel [C_out,C,kd,kh,kw]."""
    c_out, c_in, kd, kh, kw = k.shape
    if x.shape[0] != c_in:
        raise ShapeMismatch(f"input channels {x.shape[0]} != kernel channels {c_in}")
    if b.shape != (c_out,):
        raise ShapeMismatch(f"bias shape {b.shape} != ({c_out},)")
    do = _out_extent(x.shape[1], kd, stride, pad)
    ho = _out_extent(x.shape[2], kh, stride, pad)
    wo = _out_extent(x.shape[3], kw, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))
    win = win[:, ::stride, ::stride, ::stride]  # [C, do, ho, wo, kd, kh, kw]
    patches = win.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c_in * kd * kh * kw, do * ho * wo)
    patches = np.ascontiguousarray(patches)
    out = k.reshape(c_out, -1) @ patches
    out += b[:, None]
    return out.reshape(c_out, do, ho, wo), patches


def conv3d_bwd(grad: np.ndarray, x: np.ndarray, k: np.ndarray, patches: np.ndarray,
               stride: int, pad: int, need_dx: bool = True, need_dk: bool = True):
    c_out, c_in, kd, kh, kw = k.shape
    _, do, ho, wo = grad.shape
    gm = grad.reshape(c_out, -1)
    dk = db = dx = None
    if need_dk:
        dk = (gm @ patches.T).reshape(k.shape)
        db = gm.sum(axis=1)
    if need_dx:
        dcols = (k.reshape(c_out, -1).T @ gm).reshape(c_in, kd, kh, kw, do, ho, wo)
        dp, hp, wp = (x.shape[1] + 2 * pad, x.shape[2] + 2 * pad, x.shape[3] + 2 * pad)
        dxp = np.zeros((c_in, dp, hp, wp), dtype=grad.dtype)
        for a in range(kd):
            for i in range(kh):
                for j in range(kw):
                    dxp[:, a:a + stride * do:stride,
                        i:i + stride * ho:stride,
                        j:j + stride * wo:stride] += dcols[:, a, i, j]
        dx = dxp[:, pad:dp - pad, pad:hp - pad, pad:wp - pad] if pad else dxp
    return dx, dk, db


def softmax_fwd(x: np.ndarray, axis: int) -> np.ndarray:
    """Softmax along one axis with max-subtraction for stability."""
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def l2norm_fwd(x: np.ndarray, eps: float):
    """Per-pixel channel normalization of [C,H,W]: v / max(||v||, eps).

    Returns (out, norms, clamped) with norms = max(||v||, eps).
    """
    sq = np.einsum("chw,chw->hw", x, x, dtype=np.float64)
    norm = np.sqrt(sq).astype(x.dtype)
    clamped = np.maximum(norm, x.dtype.type(eps))
    return x / clamped[None], norm, clamped


def l2norm_bwd(grad: np.ndarray, x: np.ndarray, norm: np.ndarray,
               clamped: np.ndarray) -> np.ndarray:
    """Backward of l2norm_fwd. Below the clamp the map is linear (v / eps)."""
    y = x / clamped[None]
    dot = np.einsum("chw,chw->hw", grad, y, dtype=np.float64).astype(grad.dtype)
    dx = (grad - y * dot[None]) / clamped[None]
    below = norm < clamped  # clamp active: out = x / eps exactly
    if below.any():
        dx = np.where(below[None], grad / clamped[None], dx)
    return dx


# ---------------------------------------------------------------------------
# public, Tensor-level operations


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           pad: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) with zero padding."""
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv2d expects [C,H,W] and [Co,C,kh,kw], got "
                            f"{x.shape} and {kernel.shape}")
    _check_conv_args(kernel.shape, stride, pad, 2)
    out, _ = conv2d_fwd(x.array, kernel.array, bias.array, stride, pad)
    return Tensor(out, copy=False)


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           pad: int = 0) -> Tensor:
    """3-D convolution (cross-correlation) with zero padding."""
    if x.ndim != 4 or kernel.ndim != 5:
        raise ShapeMismatch(f"conv3d expects [C,D,H,W] and [Co,C,kd,kh,kw], got "
                            f"{x.shape} and {kernel.shape}")
    _check_conv_args(kernel.shape, stride, pad, 3)
    out, _ = conv3d_fwd(x.array, kernel.array, bias.array, stride, pad)
    return Tensor(out, copy=False)


def softmax_axis(x: Tensor, axis: int) -> Tensor:
    """Softmax along `axis`; outputs are positive and sum to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise AxisOutOfRange(f"axis {axis} out of range for shape {x.shape}")
    return Tensor(softmax_fwd(x.array, axis), copy=False)


def l2_normalize_channels(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize each pixel's channel vector to unit length (eps-guarded)."""
    if x.ndim != 3:
        raise ShapeMismatch(f"expected [C,H,W], got {x.shape}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    out, _, _ = l2norm_fwd(x.array, eps)
    return Tensor(out, copy=False)
