"""Batch command-line surface.

Subcommands: train, eval, gradcheck, bench, params, gen-data. Machine
output (CSV/JSON) goes to stdout or files; human summaries go to stderr.
``RKAN_THREADS`` caps the worker threads used for batch math.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time

import numpy as np

from .backbone import build, default_micro_spec, load_checkpoint_into
from .basis import GaussianRBF
from .block import RkanBlock, RkanBlockConfig
from .config import (datasets_from_config, load_config, model_from_config,
                     spec_from_config, train_config_from_config,
                     write_effective_config)
from .data import SHAPE_CLASSES, Standardizer, serialize_cifar10
from .errors import ConfigError, NumericError
from .kan_conv import KanConv2d, kan_parameter_count
from .layers import Conv2d, Linear
from .ops import softmax_cross_entropy
from .training import (evaluate_top1, gradcheck, train_run, write_metrics_csv)

GRADCHECK_TOLERANCE = 1e-4


def _say(msg):
    print(msg, file=sys.stderr)


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    if args.out is not None:
        cfg["output"]["dir"] = args.out
    out_dir = cfg["output"]["dir"]
    write_effective_config(cfg, out_dir)

    train_ds, val_ds = datasets_from_config(cfg)
    if val_ds.class_count != cfg["model"]["num_classes"]:
        raise ConfigError(
            f"model.num_classes={cfg['model']['num_classes']} does not match "
            f"dataset class count {val_ds.class_count}")
    model = model_from_config(cfg)
    tcfg = train_config_from_config(cfg)
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    metrics = train_run(model, train_ds, val_ds, tcfg,
                        augment=cfg["data"]["flip"], checkpoint_path=ckpt)
    write_metrics_csv(metrics, os.path.join(out_dir, "metrics.csv"))
    for r in metrics.records:
        _say(f"epoch {r.epoch}: loss {r.train_loss:.4f} "
             f"val_top1 {r.val_top1:.4f} lr {r.lr:.5f} "
             f"({r.throughput:.0f} img/s)")
    _say(f"done: best val top-1 {metrics.best_top1:.4f}, "
         f"outputs in {out_dir}")
    return 0


def cmd_eval(args):
    cfg = load_config(args.config)
    train_ds, val_ds = datasets_from_config(cfg)
    model = model_from_config(cfg)
    load_checkpoint_into(model, args.checkpoint)
    std = Standardizer.fit(train_ds.images)
    top1 = evaluate_top1(model, std.transform(val_ds.images), val_ds.labels,
                         cfg["train"]["batch_size"])
    print(json.dumps({"val_top1": top1}))
    _say(f"val top-1 {top1:.4f} over {len(val_ds)} images")
    return 0


def _gradcheck_targets(seed, degree):
    rng = np.random.default_rng(seed)

    def conv():
        return Conv2d(3, 4, 3, stride=2, padding=1, bias=True, rng=rng), \
            rng.standard_normal((2, 3, 7, 7)), {}

    def linear():
        return Linear(6, 4, rng=rng), rng.standard_normal((3, 6)), {}

    def kanconv():
        from .basis import Chebyshev
        return KanConv2d(2, 3, 3, stride=1, padding=1,
                         basis=Chebyshev(degree), rng=rng), \
            rng.standard_normal((1, 2, 5, 5)), {}

    def kanconv_rbf():
        return KanConv2d(2, 3, 3, stride=1, padding=1,
                         basis=GaussianRBF(), rng=rng), \
            rng.standard_normal((1, 2, 5, 5)), {}

    def rkanblock():
        cfg = RkanBlockConfig(in_channels=4, stage_channels=6,
                              reduce_factor=2, stride=2)
        return RkanBlock(cfg, rng=rng), rng.standard_normal((1, 4, 6, 6)), {}

    def model():
        net = build(default_micro_spec(num_classes=3, rkan_stages=(4,)),
                    seed=seed)
        return net, rng.standard_normal((2, 3, 32, 32)), \
            {"max_input_coords": 384}

    return {"conv2d": conv, "linear": linear, "kanconv": kanconv,
            "kanconv-rbf": kanconv_rbf, "rkanblock": rkanblock,
            "model": model}


def cmd_gradcheck(args):
    targets = _gradcheck_targets(args.seed or 0, args.degree)
    if args.target == "all":
        names = list(targets)
    elif args.target in targets:
        names = [args.target]
    else:
        _say(f"unknown target {args.target!r}; available: "
             f"{', '.join(sorted(targets))}, all")
        return 2
    print("target,max_rel_err,pass")
    ok = True
    for name in names:
        module, x, kwargs = targets[name]()
        report = gradcheck(module, x, rng=np.random.default_rng(1),
                           tolerance=GRADCHECK_TOLERANCE, **kwargs)
        ok &= report.passed
        print(f"{name},{report.max_rel_err:.3e},{report.passed}")
        _say(f"{name}: max rel err {report.max_rel_err:.3e} "
             f"({'pass' if report.passed else 'FAIL'})")
    return 0 if ok else 1


def _bench_model(cfg, basis, seed):
    rcfg = dict(cfg["rkan"])
    rcfg["enabled"] = True
    rcfg["basis"] = basis
    bench_cfg = dict(cfg)
    bench_cfg["rkan"] = rcfg
    spec = spec_from_config(bench_cfg, rkan_enabled=True)
    spec = type(spec)(**{**spec.__dict__,
                         "rkan": type(spec.rkan)(**{**spec.rkan.__dict__,
                                                    "rbf_match_degree": True})})
    return build(spec, seed)


def _time_pass(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cmd_bench(args):
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg["train"]["seed"]
    batch = cfg["train"]["batch_size"]
    hw = cfg["data"]["image_hw"]
    bases = ["chebyshev", "rbf"] if args.basis == "both" else [args.basis]
    precisions = (["double", "single"] if args.precision == "both"
                  else [args.precision])
    rng = np.random.default_rng(seed)
    x64 = rng.standard_normal((batch, 3, hw, hw))
    labels = rng.integers(0, cfg["model"]["num_classes"], size=batch)

    lines = ["basis,precision,pass,img_per_s,params"]
    for basis in bases:
        for precision in precisions:
            model = _bench_model(cfg, basis, seed)
            dtype = np.float64 if precision == "double" else np.float32
            model.cast_(dtype)
            x = x64.astype(dtype)
            params = model.parameter_total()

            def fwd():
                model.forward(x)

            def fwd_bwd():
                model.zero_grad()
                logits = model.forward(x)
                _, grad = softmax_cross_entropy(logits, labels)
                model.backward(grad)

            fwd()          # warmup
            fwd_bwd()
            t_fwd = _time_pass(fwd, args.repeat)
            t_both = _time_pass(fwd_bwd, args.repeat)
            for name, t in (("forward", t_fwd), ("forward_backward", t_both)):
                lines.append(f"{basis},{precision},{name},"
                             f"{batch / t:.6g},{params}")
            _say(f"{basis}/{precision}: forward {batch / t_fwd:.1f} img/s, "
                 f"forward+backward {batch / t_both:.1f} img/s "
                 f"({params} params)")
    table = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "bench.csv")
        with open(path, "w") as f:
            f.write(table)
        _say(f"wrote {path}")
    print(table, end="")
    return 0


def cmd_params(args):
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg["train"]["seed"]
    baseline = build(spec_from_config(cfg, rkan_enabled=False), seed)
    augmented = model_from_config(cfg, seed=seed)

    print("name,census,predicted")
    block_sum = 0
    for stage, blk in sorted(augmented.rkan_blocks.items()):
        block_sum += blk.parameter_total()
        for kan_name in ("kan1", "kan2"):
            layer = getattr(blk, kan_name)
            if layer is None:
                continue
            census = sum(p.size for _, p in layer.named_parameters())
            predicted = layer.parameter_count()["total"]
            print(f"rkan{stage}.{kan_name},{census},{predicted}")
    base_total = baseline.parameter_total()
    aug_total = augmented.parameter_total()
    print(f"baseline_total,{base_total},")
    print(f"augmented_total,{aug_total},")
    print(f"delta,{aug_total - base_total},{block_sum}")
    _say(f"baseline {base_total} params, augmented {aug_total} "
         f"(+{aug_total - base_total})")
    return 0


def cmd_gen_data(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["data"]["seed"] = args.seed
    out_dir = args.out or cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    d = cfg["data"]
    from .data import SyntheticConfig, generate_synthetic
    ds = generate_synthetic(SyntheticConfig(
        classes=d["classes"], per_class=d["per_class"], image_hw=d["image_hw"],
        noise_sigma=d["noise_sigma"], seed=d["seed"]))
    bin_path = os.path.join(out_dir, "synthetic.bin")
    with open(bin_path, "wb") as f:
        f.write(serialize_cifar10(ds))
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w") as f:
        f.write(f"seed: {d['seed']}\n")
        for label in range(d["classes"]):
            f.write(f"label {label}: {SHAPE_CLASSES[label]}\n")
    _say(f"wrote {bin_path} ({len(ds)} records) and {manifest}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rkan",
        description="KAN-convolution residual blocks: train, verify, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="path to a JSON run config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory override")

    p = sub.add_parser("train", help="run the epoch loop")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="top-1 of a checkpoint on the val split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--target", default="all")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="throughput of forward and backward passes")
    common(p)
    p.add_argument("--basis", choices=["chebyshev", "rbf", "both"],
                   default="both")
    p.add_argument("--precision", choices=["double", "single", "both"],
                   default="double")
    p.add_argument("--repeat", type=int, default=3)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("params", help="parameter census vs analytic counts")
    common(p)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    common(p)
    p.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError) as err:
        _say(f"error: {err}")
        return 2
    except NumericError as err:
        _say(f"numeric error: {err}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
