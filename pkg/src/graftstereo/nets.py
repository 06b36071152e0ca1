"""The three trainable components at toy scale, plus gradient plumbing.

Feature extractor: three 3x3 conv layers with two factor-2 decimations in
between, so the map comes out at quarter resolution. Adaptor: one of three
variants (a single 1x1 projection, a two-layer nonlinear stack, or a small
two-stage U-shape with additive skips). Aggregator: four 3x3x3 conv layers
over the cost volume with one residual connection and a single scoring head.

Parameters for each net live in one flat float32 vector with named layer
slices and per-layer frozen flags; frozen layers still pass gradients
through to earlier nodes but accumulate none themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .cost import CostVolume, FeatureMap
from .errors import ChannelMismatch, ConfigError, FormatError, ShapeMismatch
from .io import read_kv, read_tensor, write_kv, write_tensor
from .tensor import Tensor

LEAKY_SLOPE = 0.1

NET_KINDS = ("feature", "adaptor", "aggregator")
ADAPTOR_VARIANTS = ("linear", "nonlinear", "ushape")


@dataclass(frozen=True)
class NetDesc:
    """Architecture descriptor; fully determines layer shapes and layout."""

    kind: str
    in_ch: int
    width: int
    out_ch: int
    variant: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NET_KINDS:
            raise ConfigError(f"unknown net kind {self.kind!r}")
        if self.kind == "adaptor" and self.variant not in ADAPTOR_VARIANTS:
            raise ConfigError(f"unknown adaptor variant {self.variant!r}")
        if min(self.in_ch, self.width, self.out_ch) < 1:
            raise ConfigError("channel counts must be >= 1")

    def layers(self):
        """(name, op, c_in, c_out, ksize, pad) in forward order."""
        i, w, o = self.in_ch, self.width, self.out_ch
        if self.kind == "feature":
            return [("conv1", "conv2d", i, w, 3, 1),
                    ("conv2", "conv2d", w, w, 3, 1),
                    ("conv3", "conv2d", w, o, 3, 1)]
        if self.kind == "adaptor":
            if self.variant == "linear":
                return [("proj", "conv2d", i, o, 1, 0)]
            if self.variant == "nonlinear":
                return [("conv1", "conv2d", i, w, 3, 1),
                        ("conv2", "conv2d", w, o, 3, 1)]
            return [("enc1", "conv2d", i, w, 3, 1),
                    ("enc2", "conv2d", w, 2 * w, 3, 1),
                    ("bott", "conv2d", 2 * w, 2 * w, 3, 1),
                    ("up2", "conv2d", 2 * w, 2 * w, 3, 1),
                    ("up1", "conv2d", 2 * w, w, 3, 1),
                    ("head", "conv2d", w, o, 3, 1)]
        return [("agg1", "conv3d", i, w, 3, 1),
                ("agg2", "conv3d", w, w, 3, 1),
                ("agg3", "conv3d", w, w, 3, 1),
                ("head", "conv3d", w, o, 3, 1)]

    def layout(self):
        """(name, kernel_slice, bias_slice, kernel_shape) over the flat vector."""
        out = []
        off = 0
        for name, op, c_in, c_out, k, _ in self.layers():
            kshape = ((c_out, c_in, k, k) if op == "conv2d"
                      else (c_out, c_in, k, k, k))
            n = int(np.prod(kshape))
            out.append((name, slice(off, off + n),
                        slice(off + n, off + n + c_out), kshape))
            off += n + c_out
        return out

    def param_count(self) -> int:
        last = self.layout()[-1]
        return last[2].stop


def aggregator_desc(in_ch: int, width: int = 8, seed: int = 0) -> NetDesc:
    return NetDesc("aggregator", in_ch, width, 1, seed=seed)


class NetParams:
    """Flat float32 parameter vector with named layer slices."""

    __slots__ = ("desc", "flat", "frozen")

    def __init__(self, desc: NetDesc, flat: np.ndarray, frozen=None):
        if flat.shape != (desc.param_count(),):
            raise ShapeMismatch(
                f"flat vector has {flat.shape}, descriptor wants "
                f"({desc.param_count()},)")
        self.desc = desc
        self.flat = np.ascontiguousarray(flat, dtype=np.float32)
        names = [n for n, *_ in desc.layers()]
        self.frozen = {n: False for n in names}
        if frozen:
            for n in frozen:
                if n not in self.frozen:
                    raise ConfigError(f"unknown layer {n!r} in frozen set")
                self.frozen[n] = True

    def kernel(self, name: str) -> np.ndarray:
        for n, ks, _, kshape in self.desc.layout():
            if n == name:
                return self.flat[ks].reshape(kshape)
        raise ConfigError(f"no layer named {name!r}")

    def bias(self, name: str) -> np.ndarray:
        for n, _, bs, _ in self.desc.layout():
            if n == name:
                return self.flat[bs]
        raise ConfigError(f"no layer named {name!r}")

    @property
    def param_count(self) -> int:
        return self.flat.size

    def set_frozen(self, flag: bool, names=None) -> "NetParams":
        for n in (names if names is not None else self.frozen):
            if n not in self.frozen:
                raise ConfigError(f"no layer named {n!r}")
            self.frozen[n] = flag
        return self

    def frozen_mask(self) -> np.ndarray:
        m = np.zeros(self.flat.size, dtype=bool)
        for n, ks, bs, _ in self.desc.layout():
            if self.frozen[n]:
                m[ks] = True
                m[bs] = True
        return m

    def copy(self) -> "NetParams":
        return NetParams(self.desc, self.flat.copy(),
                         [n for n, f in self.frozen.items() if f])

    def __repr__(self):
        return (f"NetParams({self.desc.kind}/{self.desc.variant or '-'}, "
                f"{self.param_count} params)")


def init_params(desc: NetDesc, seed: int) -> NetParams:
    """He-style fan-in scaled kernels, zero biases, reproducible per seed."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(desc.param_count(), dtype=np.float32)
    p = NetParams(replace(desc, seed=seed), flat)
    for name, _, c_in, c_out, k, _ in desc.layers():
        kern = p.kernel(name)
        fan_in = c_in * k ** (kern.ndim - 2)
        std = np.sqrt(2.0 / fan_in)
        kern[...] = rng.normal(0.0, std, kern.shape).astype(np.float32)
    return p


def save_params(p: NetParams, prefix: str) -> None:
    """Write {prefix}.tns (flat vector) and {prefix}.desc (architecture)."""
    write_tensor(Tensor(p.flat), f"{prefix}.tns")
    d = p.desc
    frozen = ",".join(n for n, f in p.frozen.items() if f)
    write_kv({"kind": d.kind, "variant": d.variant, "in_ch": d.in_ch,
              "width": d.width, "out_ch": d.out_ch, "seed": d.seed,
              "frozen": frozen}, f"{prefix}.desc")


def load_params(prefix: str) -> NetParams:
    kv = read_kv(f"{prefix}.desc")
    try:
        desc = NetDesc(kv["kind"], int(kv["in_ch"]), int(kv["width"]),
                       int(kv["out_ch"]), kv.get("variant", ""),
                       int(kv.get("seed", 0)))
    except KeyError as e:
        raise FormatError(f"{prefix}.desc: missing key {e}") from None
    flat = read_tensor(f"{prefix}.tns")
    if flat.ndim != 1 or flat.size != desc.param_count():
        raise FormatError(
            f"{prefix}.tns holds {flat.size} values, descriptor wants "
            f"{desc.param_count()}")
    frozen = [n for n in kv.get("frozen", "").split(",") if n]
    return NetParams(desc, flat.array.copy(), frozen)


# ---------------------------------------------------------------------------
# graph builders (autodiff nodes); public forwards wrap these with constants


def param_nodes(p: NetParams, flat=None) -> dict:
    """Leaf nodes viewing a flat vector; frozen layers get requires_grad False.

    flat defaults to p.flat; pass a float64 copy for the shadow path.
    """
    src = p.flat if flat is None else flat
    nodes = {}
    for name, ks, bs, kshape in p.desc.layout():
        req = not p.frozen[name]
        nodes[name] = (ad.leaf(src[ks].reshape(kshape), requires_grad=req),
                       ad.leaf(src[bs], requires_grad=req))
    return nodes


def feature_graph(nodes: dict, x: ad.Node) -> ad.Node:
    h, w = x.value.shape[-2:]
    if h % 4 or w % 4:
        raise ShapeMismatch(f"image dims must be divisible by 4, got {h}x{w}")
    y = ad.leaky_relu(ad.conv2d(x, *nodes["conv1"], 1, 1), LEAKY_SLOPE)
    y = ad.decimate2(y)
    y = ad.leaky_relu(ad.conv2d(y, *nodes["conv2"], 1, 1), LEAKY_SLOPE)
    y = ad.decimate2(y)
    return ad.conv2d(y, *nodes["conv3"], 1, 1)


def adaptor_graph(nodes: dict, variant: str, x: ad.Node,
                  use_skips: bool = True) -> ad.Node:
    if variant == "linear":
        return ad.conv2d(x, *nodes["proj"], 1, 0)
    if variant == "nonlinear":
        y = ad.leaky_relu(ad.conv2d(x, *nodes["conv1"], 1, 1), LEAKY_SLOPE)
        return ad.conv2d(y, *nodes["conv2"], 1, 1)
    h, w = x.value.shape[-2:]
    if h % 4 or w % 4:
        raise ShapeMismatch(
            f"u-shape adaptor needs dims divisible by 4, got {h}x{w}")
    e1 = ad.leaky_relu(ad.conv2d(x, *nodes["enc1"], 1, 1), LEAKY_SLOPE)
    e2 = ad.leaky_relu(ad.conv2d(ad.decimate2(e1), *nodes["enc2"], 1, 1),
                       LEAKY_SLOPE)
    bt = ad.leaky_relu(ad.conv2d(ad.decimate2(e2), *nodes["bott"], 1, 1),
                       LEAKY_SLOPE)
    u2 = ad.leaky_relu(ad.conv2d(ad.upsample_nearest2x(bt), *nodes["up2"], 1, 1),
                       LEAKY_SLOPE)
    if use_skips:
        u2 = ad.add(u2, e2)
    u1 = ad.leaky_relu(ad.conv2d(ad.upsample_nearest2x(u2), *nodes["up1"], 1, 1),
                       LEAKY_SLOPE)
    if use_skips:
        u1 = ad.add(u1, e1)
    return ad.conv2d(u1, *nodes["head"], 1, 1)


def aggregator_graph(nodes: dict, cv: ad.Node) -> list:
    """Score volumes [D,H,W] from a [K,D,H,W] cost volume; M=1 head."""
    h1 = ad.leaky_relu(ad.conv3d(cv, *nodes["agg1"], 1, 1), LEAKY_SLOPE)
    h2 = ad.leaky_relu(ad.conv3d(h1, *nodes["agg2"], 1, 1), LEAKY_SLOPE)
    h3 = ad.add(ad.leaky_relu(ad.conv3d(h2, *nodes["agg3"], 1, 1), LEAKY_SLOPE), h1)
    out = ad.conv3d(h3, *nodes["head"], 1, 1)
    return [ad.reshape(out, out.value.shape[1:])]


# ---------------------------------------------------------------------------
# public forwards


def feature_forward(p: NetParams, image: Tensor) -> FeatureMap:
    """Quarter-resolution feature map of a [C,H,W] image, C matching the net."""
    if p.desc.kind != "feature":
        raise ConfigError(f"expected feature params, got {p.desc.kind}")
    if image.ndim != 3:
        raise ShapeMismatch(f"image must be [C,H,W], got {image.shape}")
    if image.shape[0] != p.desc.in_ch:
        raise ShapeMismatch(
            f"image has {image.shape[0]} channels, net expects {p.desc.in_ch}")
    out = feature_graph(param_nodes(p), ad.const(image.array))
    return FeatureMap(Tensor(out.value))


def adaptor_forward(p: NetParams, arch: str, f: FeatureMap,
                    use_skips: bool = True) -> FeatureMap:
    """Transform a feature map at unchanged resolution.

    use_skips=False zeroes the u-shape skip connections; an ablation hook,
    not a training mode.
    """
    if p.desc.kind != "adaptor":
        raise ConfigError(f"expected adaptor params, got {p.desc.kind}")
    if arch != p.desc.variant:
        raise ConfigError(
            f"requested {arch!r} but params describe {p.desc.variant!r}")
    if f.channels != p.desc.in_ch:
        raise ShapeMismatch(
            f"feature has {f.channels} channels, adaptor expects {p.desc.in_ch}")
    out = adaptor_graph(param_nodes(p), arch, ad.const(f.data.array), use_skips)
    return FeatureMap(Tensor(out.value))


def aggregator_forward(p: NetParams, cv: CostVolume) -> list:
    """M score volumes (Tensors [D,H,W]) from a cost volume."""
    if p.desc.kind != "aggregator":
        raise ConfigError(f"expected aggregator params, got {p.desc.kind}")
    if cv.k != p.desc.in_ch:
        raise ChannelMismatch(
            f"cost volume has K={cv.k}, aggregator was built for "
            f"K={p.desc.in_ch}")
    outs = aggregator_graph(param_nodes(p), ad.const(cv.data.array))
    return [Tensor(o.value) for o in outs]


# ---------------------------------------------------------------------------
# gradients


def collect_grad(p: NetParams, nodes: dict, dtype=np.float32) -> np.ndarray:
    """Flat gradient aligned with p.flat; frozen or unreached layers get zeros."""
    g = np.zeros(p.flat.size, dtype=dtype)
    for name, ks, bs, _ in p.desc.layout():
        kn, bn = nodes[name]
        if kn.grad is not None:
            g[ks] = kn.grad.reshape(-1)
        if bn.grad is not None:
            g[bs] = bn.grad
    return g


def backward(loss: ad.Node, nets: dict) -> dict:
    """One reverse pass; returns flat gradients per net.

    nets maps a name to (NetParams, its param_nodes dict used in the graph).
    """
    ad.backward(loss)
    return {name: collect_grad(p, nodes) for name, (p, nodes) in nets.items()}


def _param_name(p: NetParams, i: int) -> str:
    for name, ks, bs, _ in p.desc.layout():
        if ks.start <= i < ks.stop:
            return f"{name}.kernel[{i - ks.start}]"
        if bs.start <= i < bs.stop:
            return f"{name}.bias[{i - bs.start}]"
    return f"flat[{i}]"


def grad_check(pipeline, params: dict, tolerance: float = 1e-4,
               h: float = 1e-4, corrupt=None) -> dict:
    """Compare analytic gradients with central differences in float64.

    pipeline(flats) builds the loss graph from {name: flat float64 vector}
    and returns (loss node, {name: param_nodes dict}). params maps the same
    names to NetParams. corrupt=(name, index, factor) scales one analytic
    entry before comparing; used to prove the check catches bad gradients.
    Relative error uses max(|analytic|, |fd|, 1e-4) as denominator. The
    step h balances O(h^2) truncation against double roundoff; larger
    steps leak truncation error above 1e-4 on small gradients. A stencil
    that straddles a leaky-relu corner is retried with a smaller step: the
    mismatch vanishes once the step fits inside one linear piece, whereas
    a wrong gradient disagrees at every step size.
    """
    flats = {n: p.flat.astype(np.float64) for n, p in params.items()}
    loss, nodes = pipeline(flats)
    ad.backward(loss)
    analytic = {n: collect_grad(p, nodes[n], dtype=np.float64)
                for n, p in params.items()}
    if corrupt is not None:
        cn, ci, cf = corrupt
        analytic[cn][ci] *= cf

    def central(flat, i, orig, step):
        flat[i] = orig + step
        lp = float(pipeline(flats)[0].value)
        flat[i] = orig - step
        lm = float(pipeline(flats)[0].value)
        flat[i] = orig
        return (lp - lm) / (2.0 * step)

    max_rel = 0.0
    worst = ""
    checked = 0
    for n, p in params.items():
        frozen = p.frozen_mask()
        flat = flats[n]
        for i in range(flat.size):
            if frozen[i]:
                continue
            orig = flat[i]
            a = analytic[n][i]
            rel = np.inf
            for step in (h, h / 10.0, h / 100.0):
                fd = central(flat, i, orig, step)
                rel = min(rel, abs(a - fd) / max(abs(a), abs(fd), 1e-4))
                if rel < 0.1 * tolerance:
                    break
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = f"{n}:{_param_name(p, i)}"
    return {"max_rel_err": max_rel, "worst_param": worst,
            "tolerance": tolerance, "n_checked": checked,
            "passed": max_rel < tolerance}
