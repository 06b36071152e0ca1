"""Command-line front end: every stage of the workflow as a subcommand.

Exit codes: 0 success, 2 usage error, 1 runtime error. Diagnostics go to
stderr; data goes to files (or stdout for eval without --out). Every run
drops a manifest.txt next to its outputs echoing the settings and the
sha256 of inputs and outputs, so identical invocations are provably
identical. Set GRAFTSTEREO_LOG=info (or debug) for progress logging.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bench, nets, pipeline
from .cost import COST_METHODS, FeatureMap, build_cost
from .errors import ConfigError, GraftStereoError
from .heads import DisparityMap
from .io import (read_kv, read_pfm, read_pgm, write_kv, write_pfm,
                 write_tensor)
from .nets import ADAPTOR_VARIANTS, NetDesc, init_params, load_params
from .tensor import Tensor

log = logging.getLogger("graftstereo.cli")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("GRAFTSTEREO_LOG", "error").lower()
    logging.basicConfig(level=_LOG_LEVELS.get(level, logging.ERROR),
                        stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# manifests


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_path(path: str) -> str:
    """sha256 of a file, or of the sorted (name, hash) listing of a directory."""
    if os.path.isdir(path):
        h = hashlib.sha256()
        for root, dirs, files in sorted(os.walk(path)):
            dirs.sort()
            for fn in sorted(files):
                rel = os.path.relpath(os.path.join(root, fn), path)
                h.update(f"{rel}:{_sha256(os.path.join(root, fn))}\n".encode())
        return h.hexdigest()
    return _sha256(path)


def _write_manifest(directory: str, command: str, settings: dict,
                    inputs: dict, outputs: dict) -> None:
    entries = {"command": command}
    for k in sorted(settings):
        entries[f"cfg.{k}"] = settings[k]
    for k in sorted(inputs):
        entries[f"input.{k}"] = _hash_path(inputs[k])
    for k in sorted(outputs):
        entries[f"output.{k}"] = _hash_path(outputs[k])
    write_kv(entries, os.path.join(directory, "manifest.txt"))


# ---------------------------------------------------------------------------
# shared argument plumbing


def _field_spec(text: str):
    """Parse constant:d=3 / twoplane:d1=2,d2=5,split=16 / slanted:a=..,b=..,c=.."""
    try:
        kind, _, rest = text.partition(":")
        kw = dict(p.split("=", 1) for p in rest.split(",") if p)
        if kind == "constant":
            return ("constant", int(kw["d"]))
        if kind == "twoplane":
            return ("two_plane", int(kw["d1"]), int(kw["d2"]), int(kw["split"]))
        if kind == "slanted":
            return ("slanted", float(kw["a"]), float(kw["b"]), float(kw["c"]))
    except (KeyError, ValueError) as e:
        raise argparse.ArgumentTypeError(f"bad field spec {text!r}: {e}")
    raise argparse.ArgumentTypeError(
        f"unknown field kind {kind!r} (constant, twoplane, slanted)")


def _resolve(args, key, default, cast=None):
    """Flag value if given, else config-file value, else default."""
    v = getattr(args, key.replace("-", "_"), None)
    if v is None:
        v = getattr(args, "_config_kv", {}).get(key)
        if v is not None and cast is not None:
            v = cast(v)
    if v is None:
        v = default
    return v


def _load_config_file(args):
    args._config_kv = read_kv(args.config) if getattr(args, "config", None) else {}


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_data(args) -> int:
    samples = []
    ids = []
    for i in range(args.count):
        spec = bench.SyntheticSpec(args.height, args.width, field=args.spec,
                                   density=args.density, noise=args.noise,
                                   seed=args.seed + i)
        sid = f"{args.start_id + i:04d}"
        ids.append(sid)
        samples.append((spec, sid))
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as ex:
            generated = list(ex.map(lambda sp: bench.gen_pair(*sp), samples))
    else:
        generated = [bench.gen_pair(spec, sid) for spec, sid in samples]
    bench.save_dataset(generated, args.out)
    log.info("wrote %d samples to %s", len(generated), args.out)
    outputs = {f"{sid}_{part}": os.path.join(args.out, f"{sid}_{part}")
               for sid in ids
               for part in ("left.pgm", "right.pgm", "gt.pfm", "mask.pgm")}
    _write_manifest(args.out, "gen-data",
                    {"spec": args.spec, "count": args.count,
                     "height": args.height, "width": args.width,
                     "density": args.density, "noise": args.noise,
                     "seed": args.seed, "start_id": args.start_id},
                    {}, outputs)
    return 0


def _dataset_ids(data_dir: str):
    return sorted(f[:-9] for f in os.listdir(data_dir) if f.endswith("_left.pgm"))


def _cmd_export_features(args) -> int:
    ids = _dataset_ids(args.data)
    if not ids:
        raise ConfigError(f"{args.data}: no samples found")
    if args.from_checkpoint:
        p = load_params(args.from_checkpoint)
        if p.desc.kind != "feature":
            raise ConfigError(f"{args.from_checkpoint} is not a feature net")
        source = {"checkpoint": _sha256(args.from_checkpoint + ".tns")}
    else:
        p = init_params(NetDesc("feature", 1, args.width, args.channels),
                        args.seed)
        source = {"seed": args.seed, "width": args.width,
                  "channels": args.channels}
    os.makedirs(args.out, exist_ok=True)
    outputs = {}
    for sid in ids:
        for side in ("left", "right"):
            img = read_pgm(os.path.join(args.data, f"{sid}_{side}.pgm"))
            f = nets.feature_forward(p, img).data.array
            if args.blur > 0:
                f = bench.box_blur(f, args.blur)
            out_path = os.path.join(args.out, f"{sid}_{side}.tns")
            write_tensor(Tensor(f), out_path)
            outputs[f"{sid}_{side}"] = out_path
    log.info("exported %d feature pairs to %s", len(ids), args.out)
    _write_manifest(args.out, "export-features",
                    {**source, "blur": args.blur},
                    {"data": args.data}, outputs)
    return 0


def _cmd_build_cost(args) -> int:
    left = read_pgm(args.left)
    right = read_pgm(args.right)
    if args.patch_radius > 0:
        lf = bench.patch_feature_map(left, args.patch_radius)
        rf = bench.patch_feature_map(right, args.patch_radius)
    else:
        lf, rf = FeatureMap(left), FeatureMap(right)
    cv = build_cost(lf, rf, args.d_max, args.method, eps=args.eps,
                    squared=args.squared)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    write_tensor(cv.data, f"{args.out}.tns")
    write_tensor(Tensor(cv.valid.astype(np.float32)), f"{args.out}_valid.tns")
    _write_manifest(out_dir, "build-cost",
                    {"method": args.method, "d_max": args.d_max,
                     "eps": args.eps, "squared": args.squared,
                     "patch_radius": args.patch_radius},
                    {"left": args.left, "right": args.right},
                    {"cost": f"{args.out}.tns",
                     "valid": f"{args.out}_valid.tns"})
    return 0


def _train_config(args, dataset) -> pipeline.PipelineConfig:
    method = _resolve(args, "method", "cosine")
    d_max = _resolve(args, "d-max", 12, int)
    seed = _resolve(args, "seed", 0, int)
    common = dict(
        method=method, d_max=d_max, seed=seed,
        temperature=_resolve(args, "temperature", 1.0, float),
        b=_resolve(args, "b", 1.0, float),
        mu=_resolve(args, "mu", 0.1, float),
        lr=_resolve(args, "lr", 1e-3, float),
        epochs=_resolve(args, "epochs", None, int),
        squared_l2=bool(_resolve(args, "squared", False)),
        stage=args.stage)
    scalar = method in ("cosine", "l2")

    if args.stage == "base":
        in_ch = dataset[0].left.shape[0]
        fw = _resolve(args, "feature-width", 8, int)
        fc = _resolve(args, "feature-channels", 8, int)
        aw = _resolve(args, "agg-width", 8, int)
        feature = init_params(NetDesc("feature", in_ch, fw, fc), seed)
        k = 1 if scalar else 2 * fc
        aggregator = init_params(NetDesc("aggregator", k, aw, 1), seed + 1)
        return pipeline.PipelineConfig(feature=feature, aggregator=aggregator,
                                       **common)

    if not args.init:
        raise ConfigError(f"--init checkpoint required for stage {args.stage}")
    loaded = pipeline.load_checkpoint(args.init)
    if "aggregator" not in loaded:
        raise ConfigError(f"{args.init}: no aggregator checkpoint")
    feature = loaded.get("feature") if not args.features else None
    feature_dir = args.features or None

    if args.stage == "adapt":
        if feature is None and feature_dir is None:
            raise ConfigError("adapt needs --features or a feature checkpoint")
        if feature_dir:
            channels = pipeline._peek_channels(feature_dir)
        else:
            channels = feature.desc.out_ch
        adaptor = loaded.get("adaptor")
        if adaptor is None:
            variant = _resolve(args, "adaptor", "ushape")
            if variant not in ADAPTOR_VARIANTS:
                raise ConfigError(f"unknown adaptor variant {variant!r}")
            aw = _resolve(args, "adaptor-width", 8, int)
            out_ch = _resolve(args, "adaptor-channels", channels, int)
            adaptor = init_params(
                NetDesc("adaptor", channels, aw, out_ch, variant=variant), seed)
        return pipeline.PipelineConfig(
            feature=feature, feature_dir=feature_dir, adaptor=adaptor,
            aggregator=loaded["aggregator"], joint=args.joint, **common)

    return pipeline.PipelineConfig(
        feature=feature, feature_dir=feature_dir,
        adaptor=loaded.get("adaptor"), aggregator=loaded["aggregator"],
        resume=args.resume, **common)


def _cmd_train(args) -> int:
    _load_config_file(args)
    dataset = bench.load_dataset(args.data)
    if args.features:
        pipeline.attach_features(dataset, args.features)
    cfg = _train_config(args, dataset)
    log.info("training stage %s on %d samples", args.stage, len(dataset))
    out_nets, trace = pipeline.train_stage(cfg, dataset)
    stage_dir = os.path.join(args.out, args.stage)
    pipeline.save_checkpoint(out_nets, stage_dir)
    pipeline.write_trace(trace, os.path.join(stage_dir, "loss.csv"))
    log.info("final loss %.6f after %d steps", trace[-1][1], len(trace))
    inputs = {"data": args.data}
    if args.features:
        inputs["features"] = args.features
    if args.init:
        inputs["init"] = args.init
    settings = {"stage": args.stage, "method": cfg.method, "d_max": cfg.d_max,
                "temperature": cfg.temperature, "b": cfg.b, "mu": cfg.mu,
                "lr": cfg.lr, "epochs": cfg.stage_epochs(), "seed": cfg.seed,
                "resume": getattr(args, "resume", False),
                "joint": getattr(args, "joint", False)}
    outputs = {"loss.csv": os.path.join(stage_dir, "loss.csv")}
    for name in out_nets:
        outputs[f"{name}.tns"] = os.path.join(stage_dir, f"{name}.tns")
        outputs[f"{name}.desc"] = os.path.join(stage_dir, f"{name}.desc")
    _write_manifest(stage_dir, "train", settings, inputs, outputs)
    return 0


def _cmd_graft(args) -> int:
    aggregator = load_params(os.path.join(args.aggregator, "aggregator"))
    if args.features and args.feature_ckpt:
        raise ConfigError("give either --features or --feature-ckpt, not both")
    if args.features:
        source = args.features
        feature_ref = f"dir:{args.features}"
    elif args.feature_ckpt:
        source = load_params(args.feature_ckpt)
        feature_ref = f"ckpt:{args.feature_ckpt}"
    else:
        raise ConfigError("graft needs a feature source "
                          "(--features or --feature-ckpt)")
    adaptor = load_params(args.adaptor) if args.adaptor else None
    cfg = pipeline.graft(aggregator, source, adaptor, method=args.method,
                         d_max=args.d_max, temperature=args.temperature,
                         b=args.b, mu=args.mu)
    del cfg  # validation only; the config file re-loads by reference
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    entries = {"method": args.method, "d_max": args.d_max,
               "temperature": args.temperature, "b": args.b, "mu": args.mu,
               "aggregator": os.path.join(args.aggregator, "aggregator"),
               "feature": feature_ref,
               "adaptor": args.adaptor or "none"}
    write_kv(entries, args.out)
    inputs = {"aggregator": args.aggregator}
    if args.features:
        inputs["features"] = args.features
    if args.feature_ckpt:
        inputs["feature_ckpt"] = f"{args.feature_ckpt}.tns"
    if args.adaptor:
        inputs["adaptor"] = f"{args.adaptor}.tns"
    _write_manifest(out_dir, "graft", entries, inputs, {"config": args.out})
    log.info("graft config written to %s", args.out)
    return 0


def _graft_config_from_file(path: str) -> pipeline.PipelineConfig:
    kv = read_kv(path)
    try:
        aggregator = load_params(kv["aggregator"])
        feature_ref = kv["feature"]
        method = kv["method"]
        d_max = int(kv["d_max"])
    except KeyError as e:
        raise ConfigError(f"{path}: missing key {e}") from None
    if feature_ref.startswith("ckpt:"):
        source = load_params(feature_ref[5:])
    elif feature_ref.startswith("dir:"):
        source = feature_ref[4:]
    else:
        raise ConfigError(f"{path}: bad feature reference {feature_ref!r}")
    adaptor = kv.get("adaptor", "none")
    adaptor = None if adaptor == "none" else load_params(adaptor)
    return pipeline.graft(aggregator, source, adaptor, method=method,
                          d_max=d_max,
                          temperature=float(kv.get("temperature", 1.0)),
                          b=float(kv.get("b", 1.0)),
                          mu=float(kv.get("mu", 0.1)))


def _cmd_infer(args) -> int:
    if bool(args.config) == bool(args.ckpt):
        raise ConfigError("give exactly one of --config or --ckpt")
    if args.config:
        cfg = _graft_config_from_file(args.config)
    else:
        loaded = pipeline.load_checkpoint(args.ckpt)
        if "aggregator" not in loaded:
            raise ConfigError(f"{args.ckpt}: no aggregator checkpoint")
        cfg = pipeline.PipelineConfig(
            method=args.method, d_max=args.d_max, stage="graft",
            temperature=args.temperature,
            feature=loaded.get("feature"),
            feature_dir=args.features or None,
            adaptor=loaded.get("adaptor"),
            aggregator=loaded["aggregator"])
    dataset = bench.load_dataset(args.data)
    feature_dir = args.features or cfg.feature_dir
    if feature_dir:
        pipeline.attach_features(dataset, feature_dir)
        if cfg.feature_dir is None:
            raise ConfigError(
                "--features given but the pipeline uses a learned extractor")
    os.makedirs(args.out, exist_ok=True)
    outputs = {}
    for s in dataset:
        pred = pipeline.run_inference(cfg, s)
        out_path = os.path.join(args.out, f"{s.sample_id}_pred.pfm")
        write_pfm(pred, out_path)
        outputs[s.sample_id] = out_path
        log.debug("sample %s done", s.sample_id)
    inputs = {"data": args.data}
    if args.config:
        inputs["config"] = args.config
    if args.ckpt:
        inputs["ckpt"] = args.ckpt
    if feature_dir:
        inputs["features"] = feature_dir
    _write_manifest(args.out, "infer",
                    {"method": cfg.method, "d_max": cfg.d_max,
                     "temperature": cfg.temperature},
                    inputs, outputs)
    return 0


def _eval_one(pred_dir, gt_dir, sid, tau):
    pred = read_pfm(os.path.join(pred_dir, f"{sid}_pred.pfm"))
    gt = read_pfm(os.path.join(gt_dir, f"{sid}_gt.pfm"))
    mask = read_pgm(os.path.join(gt_dir, f"{sid}_mask.pgm")).array[0] > 0.5
    gt = DisparityMap(gt.data, mask=gt.mask & mask)
    return sid, bench.epe(pred, gt), bench.error_rate(pred, gt, tau)


def _cmd_eval(args) -> int:
    ids = _dataset_ids(args.gt)
    if not ids:
        raise ConfigError(f"{args.gt}: no ground-truth samples")
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(
                lambda sid: _eval_one(args.pred, args.gt, sid, args.tau), ids))
    else:
        rows = [_eval_one(args.pred, args.gt, sid, args.tau) for sid in ids]
    lines = ["sample,epe,rate"]
    for sid, e, r in rows:
        lines.append(f"{sid},{e!r},{r!r}")
    mean_epe = float(np.mean([e for _, e, _ in rows]))
    mean_rate = float(np.mean([r for _, _, r in rows]))
    lines.append(f"all,{mean_epe!r},{mean_rate!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
        _write_manifest(out_dir, "eval", {"tau": args.tau},
                        {"pred": args.pred, "gt": args.gt},
                        {"report": args.out})
    else:
        sys.stdout.write(text)
    return 0


def _cmd_grad_check(args) -> int:
    variants = (["linear", "nonlinear", "ushape"] if args.all
                else [args.variant])
    methods = (["cosine", "l2", "concat"] if args.all else [args.method])
    failed = False
    for variant in variants:
        for method in methods:
            cfg, sample = bench.grad_check_setup(variant, method, seed=args.seed)
            builder, params = pipeline.make_loss_builder(cfg, sample)
            report = nets.grad_check(builder, params,
                                     tolerance=args.tolerance, h=args.h)
            status = "PASS" if report["passed"] else "FAIL"
            print(f"{variant:>9} x {method:<7} max_rel_err="
                  f"{report['max_rel_err']:.3e} worst={report['worst_param']} "
                  f"n={report['n_checked']} {status}")
            failed |= not report["passed"]
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="graftstereo",
        description="Stereo cost-volume and grafting engine.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate a random-dot dataset")
    g.add_argument("--spec", type=_field_spec, required=True,
                   help="constant:d=3 | twoplane:d1=2,d2=5,split=16 | "
                        "slanted:a=0.2,b=0,c=1")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--density", type=float, default=0.5)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--start-id", type=int, default=0)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_data)

    e = sub.add_parser("export-features",
                       help="dump engine-made feature files for a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--from-checkpoint",
                   help="feature net prefix ({prefix}.tns/.desc)")
    e.add_argument("--channels", type=int, default=8)
    e.add_argument("--width", type=int, default=8)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--blur", type=int, default=0,
                   help="box-blur radius applied to the feature maps")
    e.set_defaults(func=_cmd_export_features)

    b = sub.add_parser("build-cost", help="cost volume for one image pair")
    b.add_argument("--left", required=True)
    b.add_argument("--right", required=True)
    b.add_argument("--method", choices=COST_METHODS, default="cosine")
    b.add_argument("--d-max", type=int, required=True)
    b.add_argument("--eps", type=float, default=1e-8)
    b.add_argument("--squared", action="store_true")
    b.add_argument("--patch-radius", type=int, default=0,
                   help="lift pixels to zero-meaned patch features")
    b.add_argument("--out", required=True, help="output prefix")
    b.set_defaults(func=_cmd_build_cost)

    t = sub.add_parser("train", help="run one training stage")
    t.add_argument("--data", required=True)
    t.add_argument("--stage", choices=("base", "adapt", "retrain"),
                   required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--init", help="checkpoint dir from the previous stage")
    t.add_argument("--features", help="external feature dir")
    t.add_argument("--config", help="key=value defaults file")
    t.add_argument("--method", choices=COST_METHODS)
    t.add_argument("--d-max", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--temperature", type=float)
    t.add_argument("--b", type=float)
    t.add_argument("--mu", type=float)
    t.add_argument("--feature-width", type=int)
    t.add_argument("--feature-channels", type=int)
    t.add_argument("--agg-width", type=int)
    t.add_argument("--adaptor", choices=ADAPTOR_VARIANTS)
    t.add_argument("--adaptor-width", type=int)
    t.add_argument("--adaptor-channels", type=int)
    t.add_argument("--resume", action="store_true",
                   help="retrain: continue from the loaded aggregator")
    t.add_argument("--joint", action="store_true",
                   help="adapt: also train the aggregator (experimental)")
    t.set_defaults(func=_cmd_train)

    gr = sub.add_parser("graft", help="combine trained parts, no finetuning")
    gr.add_argument("--aggregator", required=True,
                    help="checkpoint dir holding aggregator.tns/.desc")
    gr.add_argument("--features", help="external feature dir")
    gr.add_argument("--feature-ckpt", help="feature net prefix")
    gr.add_argument("--adaptor", help="adaptor prefix")
    gr.add_argument("--method", choices=COST_METHODS, default="cosine")
    gr.add_argument("--d-max", type=int, default=12)
    gr.add_argument("--temperature", type=float, default=1.0)
    gr.add_argument("--b", type=float, default=1.0)
    gr.add_argument("--mu", type=float, default=0.1)
    gr.add_argument("--out", required=True, help="graft config file to write")
    gr.set_defaults(func=_cmd_graft)

    i = sub.add_parser("infer", help="disparity maps for a dataset")
    i.add_argument("--config", help="graft config file")
    i.add_argument("--ckpt", help="checkpoint dir (alternative to --config)")
    i.add_argument("--data", required=True)
    i.add_argument("--features", help="external feature dir")
    i.add_argument("--method", choices=COST_METHODS, default="cosine")
    i.add_argument("--d-max", type=int, default=12)
    i.add_argument("--temperature", type=float, default=1.0)
    i.add_argument("--out", required=True)
    i.set_defaults(func=_cmd_infer)

    ev = sub.add_parser("eval", help="EPE and tau-pixel error rates")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--tau", type=float, default=3.0)
    ev.add_argument("--jobs", type=int, default=1)
    ev.add_argument("--out", help="CSV path (default stdout)")
    ev.set_defaults(func=_cmd_eval)

    gc = sub.add_parser("grad-check",
                        help="finite-difference gradient verification")
    gc.add_argument("--variant", choices=("none",) + ADAPTOR_VARIANTS,
                    default="none")
    gc.add_argument("--method", choices=COST_METHODS, default="cosine")
    gc.add_argument("--all", action="store_true",
                    help="all adaptor variants x cosine/l2/concat")
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--h", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=3)
    gc.set_defaults(func=_cmd_grad_check)

    return ap


def main(argv=None) -> int:
    _setup_logging()
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except GraftStereoError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
