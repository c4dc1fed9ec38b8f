"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import energy, lp, symbolic, warp
from .bench import config as bconfig
from .bench import fixtures, harness
from .errors import ConfigError, SymlpError
from .imaging import PatchSpec, extract_bbox, extract_template, save_pgm

log = logging.getLogger("symlp")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key = value config file")
    for key in bconfig.config_keys():
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        parser.add_argument(*flags, dest=f"cfg_{key}", metavar="VALUE", default=None)


def _config(args) -> bconfig.BenchConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return bconfig.load_config(args.config, overrides)


def cmd_synthetic(args):
    cfg = _config(args)
    _, text = harness.run_synthetic(cfg)
    if not cfg.output:
        sys.stdout.write(text)


def cmd_sweep(args):
    cfg = _config(args)
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one entry")
    _, text = harness.run_sweep(cfg, args.axis, values)
    if not cfg.output:
        sys.stdout.write(text)


def cmd_errpred(args):
    cfg = _config(args)
    result = harness.run_error_prediction(cfg)
    if not cfg.output:
        sys.stdout.write(result.csv)
    print(f"spearman {result.spearman:.4f}", file=sys.stderr)


def cmd_model_build(args):
    cfg = _config(args)
    spec = PatchSpec(cfg.side, cfg.pattern)
    model = symbolic.build_model(spec, cfg.train_ranges, cfg.m, cfg.train_seed, r=args.r)
    symbolic.save_model(model, args.out)
    print(f"wrote {args.out}: n={model.n} l={model.l} L nnz={model.L.nnz} "
          f"Q nnz={model.Q.nnz} build {model.build_seconds:.2f}s")


def cmd_model_inspect(args):
    model = symbolic.load_model(args.path)
    print(f"patch        {model.spec.side}x{model.spec.side} {model.spec.pattern} (n={model.n})")
    print(f"warps        m={model.m} seed={model.seed}")
    print(f"ranges lo    {' '.join(f'{v:g}' for v in model.ranges.lo)}")
    print(f"ranges hi    {' '.join(f'{v:g}' for v in model.ranges.hi)}")
    b = model.bbox
    print(f"bbox         left={b.left} right={b.right} top={b.top} bottom={b.bottom} (l={b.l})")
    print(f"L nnz        {model.L.nnz}")
    print(f"Q nnz        {model.Q.nnz} of q={model.Q.q} pairs")
    print(f"Tr(P P^T)    {model.tr_ppt:.6f}")
    print(f"dct r        {model.dct.r if model.dct else 0}")


def cmd_fixture(args):
    if args.kind == "checker":
        img = fixtures.checkerboard(args.size, 8)[0]
    elif args.kind == "smooth":
        img = fixtures.smooth(args.size, args.seed)
    else:
        img = fixtures.textured(args.size, args.seed)
    save_pgm(img, args.out)


def cmd_refine(args):
    cfg = _config(args)
    source = fixtures.resolve(cfg.image)
    target = fixtures.resolve(args.target) if args.target else source
    center = (args.x, args.y)
    spec = PatchSpec(cfg.side, cfg.pattern)
    method = args.method
    if not bconfig.METHOD_RE.match(method):
        raise ConfigError(f"unknown method {method!r}")
    if method in ("iclk", "esm"):
        pre = energy.iclk_precompute(source, center, spec)
        fn = energy.iclk_refine if method == "iclk" else energy.esm_refine
        p = fn(pre, target, center, None, cfg.energy_iters, cfg.energy_tol).p
    else:
        template = extract_template(source, spec, center)
        base, _, rs = method.partition("-")
        r = int(rs) if rs else None
        if base.startswith("sym"):
            model = (symbolic.load_model(cfg.model) if cfg.model else
                     symbolic.build_model(spec, cfg.train_ranges, cfg.m, cfg.train_seed))
            model = model.with_dct(r)
            u = extract_bbox(source, center, model.bbox)
            pred = (symbolic.learn_symbolic(model, u) if base == "sym"
                    else symbolic.learn_symbolic_dct(model, u))
        else:
            P = warp.sample_warps(cfg.train_ranges, cfg.m, cfg.train_seed)
            E = lp.build_error_matrix(source, center, spec, P)
            mapping = lp.build_dct_mapping(cfg.side, r) if r else None
            pred = lp.learn(method, P, E, mapping)
            pred = lp.LinearPredictor(pred.A, pred.learner, pred.m, spec, cfg.train_ranges)
        p = lp.predict(pred, target, center, template, None, cfg.lp_iters).p
    print(" ".join(f"{v:.6f}" for v in np.asarray(p)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symlp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="synthetic alignment benchmark")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    p = bsub.add_parser("synthetic", help="RMSE and timing per method")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synthetic)
    p = bsub.add_parser("sweep", help="repeat the benchmark along one axis")
    _add_config_flags(p)
    p.add_argument("--axis", choices=sorted(harness.SWEEP_AXES), required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.set_defaults(func=cmd_sweep)
    p = bsub.add_parser("errpred", help="predicted against measured error per keypoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_errpred)

    model = sub.add_parser("model", help="symbolic model files")
    msub = model.add_subparsers(dest="model_command", required=True)
    p = msub.add_parser("build")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--r", type=int, default=None, help="retained DCT coefficients")
    p.set_defaults(func=cmd_model_build)
    p = msub.add_parser("inspect")
    p.add_argument("path")
    p.set_defaults(func=cmd_model_inspect)

    p = sub.add_parser("refine", help="align one keypoint and print the six warp parameters")
    _add_config_flags(p)
    p.add_argument("--target", help="image to align against (defaults to --image)")
    p.add_argument("--x", type=int, required=True)
    p.add_argument("--y", type=int, required=True)
    p.add_argument("--method", default="sym")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("fixture", help="write a synthetic test image as PGM")
    p.add_argument("--kind", choices=("textured", "smooth", "checker"), default="textured")
    p.add_argument("--size", type=int, default=320)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SymlpError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
