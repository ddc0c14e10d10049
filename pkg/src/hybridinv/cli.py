"""Command-line interface.

Subcommands mirror the pipeline stages (embed, segment, refine), the
composite (invert, batch via --image-dir), post-hoc tools (edit, eval,
bench) and a numerical self-test (selfcheck). Every stage option can come
from a --config file (flat key = value, same keys as RunConfig) with
command-line flags taking precedence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .benchmark import format_table, render_curve, run_benchmark
from .embedding import embed, resolve_encoder, load_latent, save_latent
from .errors import ConfigError, RefinementDiverged, StageError
from .generator import ToyGenerator
from .metrics import PyramidOracle, evaluate_dirs, format_record
from .pipeline import (RunConfig, config_fingerprint, edit_bundle,
                       load_generator, parse_config, run_batch, run_invert,
                       serialize_config)
from .refinement import (RefinementSession, gradient_split_check, refine,
                         save_delta, save_feature, save_history)
from .segmentation import load_parsing, segment
from .storage import load_image, load_mask, save_image, save_mask
from .toydata import make_instances, noise_patch_instance

# maps CLI dest -> RunConfig field for every override flag
_OVERRIDES = {
    "seed": "seed",
    "generator": "generator",
    "generator_seed": "generator_seed",
    "encoder": "encoder",
    "parsing": "parsing",
    "coarse_steps": "steps_coarse",
    "coarse_lr": "lr_coarse",
    "k": "k_target",
    "compactness": "compactness",
    "slic_iters": "slic_iters",
    "tau1": "tau1",
    "tau2": "tau2",
    "steps_f": "steps_feature",
    "steps_w": "steps_theta",
    "lr_f": "lr_feature",
    "lr_w": "lr_theta",
    "lambda_perceptual": "lambda_perceptual",
    "oracle": "oracle",
    "layer": "inject_layer",
}


def _build_config(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "config", None):
        config = parse_config(Path(args.config).read_text())
    else:
        config = RunConfig()
    for dest, field in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            setattr(config, field, value)
    return config


def _add_generator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--generator", help="generator checkpoint (.npz); default: seeded toy")
    p.add_argument("--generator-seed", type=int, help="toy generator seed (default 7)")
    p.add_argument("--seed", type=int, help="run seed")


def cmd_embed(args) -> int:
    config = _build_config(args)
    state = load_generator(config)
    target = load_image(args.image)
    encoder = resolve_encoder(config.encoder)
    latent = embed(encoder, state, target, steps=config.steps_coarse,
                   lr=config.lr_coarse, seed=config.seed)
    save_latent(args.out, latent, state.fingerprint())
    print(f"wrote {args.out} ({latent.space.value}, shape {latent.values.shape})")
    return 0


def cmd_segment(args) -> int:
    config = _build_config(args)
    state = load_generator(config)
    target = load_image(args.image)
    parsing = load_parsing(config.parsing) if config.parsing else None
    result = segment(target, state, k_target=config.k_target,
                     compactness=config.compactness, iters=config.slic_iters,
                     tau1=config.tau1, tau2=config.tau2,
                     coarse_steps=config.steps_coarse, coarse_lr=config.lr_coarse,
                     seed=config.seed, parsing=parsing)
    save_mask(args.out, result.mask)
    out_frac = 1.0 - result.mask.mean()
    print(f"wrote {args.out}: {result.partition.count} partitions, "
          f"{out_frac:.1%} out-of-domain")
    return 0


def cmd_refine(args) -> int:
    config = _build_config(args)
    state = load_generator(config)
    target = load_image(args.image)
    latent = load_latent(args.latent, expect_fingerprint=state.fingerprint())
    mask = load_mask(args.mask)
    session = RefinementSession.create(state, latent, target, mask,
                                       config.to_refine_config())
    refined, feature, history = refine(session)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    final = refined.synthesize_with_injection(latent, feature, session.mask_feat)
    save_image(out_dir / "refined.png", final)
    save_mask(out_dir / "mask_feat.png", session.mask_feat)
    save_delta(out_dir / "delta.npz", refined)
    save_feature(out_dir / "feature.npz", feature, refined.fingerprint())
    save_history(out_dir / "history.txt", history)
    l_in, l_out = history[-1] if history else (float("nan"), float("nan"))
    print(f"wrote {out_dir}: final L_in={l_in:.3e} L_out={l_out:.3e}")
    return 0


def cmd_invert(args) -> int:
    config = _build_config(args)
    if bool(args.image) == bool(args.image_dir):
        raise ConfigError("provide exactly one of --image / --image-dir")
    if args.image:
        bundle = run_invert(config, args.image, args.out, no_cache=args.no_cache)
        eval_line = (bundle / "eval.txt").read_text().strip()
        print(f"bundle {bundle}")
        print(eval_line)
    else:
        records, summary = run_batch(config, args.image_dir, args.out,
                                     no_cache=args.no_cache)
        print(summary.read_text().rstrip())
        print(f"summary {summary}")
    return 0


def cmd_edit(args) -> int:
    out = edit_bundle(args.bundle, args.direction, args.alpha,
                      out=args.out)
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    records, aggregate = evaluate_dirs(args.pred_dir, args.target_dir,
                                       oracle=PyramidOracle())
    for rec in records:
        print(format_record(rec, include_time=False))
    print(f"aggregate count={aggregate['count']} "
          f"mse_mean={aggregate['mse_mean']:.8e} "
          f"psnr_mean={aggregate['psnr_mean']:.4f} "
          f"perceptual_mean={aggregate['perceptual_mean']:.8e}")
    return 0


def cmd_bench(args) -> int:
    config = _build_config(args)
    budgets = [int(b) for b in args.budgets.split(",") if b.strip()]
    state = load_generator(config)
    instances = make_instances(state, args.instances, seed=config.seed)
    rows = run_benchmark(state, instances, budgets, config=config)
    table = format_table(rows)
    print(table, end="")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bench.txt").write_text(table)
        render_curve(rows, out_dir / "bench.png")
        print(f"wrote {out_dir}/bench.txt and bench.png")
    return 0


def cmd_selfcheck(args) -> int:
    config = _build_config(args)
    state = load_generator(config)
    inst = noise_patch_instance(state, seed=config.seed)
    session = RefinementSession.create(state, inst.latent, inst.target,
                                       inst.mask_true, config.to_refine_config())
    report = gradient_split_check(session, seed=config.seed)
    print(f"gradient split: theta fd max rel err {report.theta_fd_max_rel:.2e}, "
          f"feature fd max rel err {report.feature_fd_max_rel:.2e}")
    print(f"isolation: theta={'ok' if report.theta_isolated else 'FAIL'} "
          f"feature={'ok' if report.feature_isolated else 'FAIL'}")

    # mask/blending algebra spot checks
    rng = np.random.default_rng(config.seed)
    failures = list(report.failures)
    shape = state.feature_shape
    for _ in range(20):
        f_l = rng.standard_normal(shape)
        f = rng.standard_normal(shape)
        m = rng.integers(0, 2, size=shape[1:]).astype(np.float64)
        blended = f_l * m + f * (1.0 - m)
        if not np.array_equal(blended * m, f_l * m):
            failures.append("blend algebra: in-region mismatch")
        if not np.array_equal(blended * (1 - m), f * (1 - m)):
            failures.append("blend algebra: out-region mismatch")
    print(f"blend algebra: {'ok' if len(failures) == len(report.failures) else 'FAIL'}")

    if failures:
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return 1
    print("selfcheck passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridinv",
        description="Region-aware GAN inversion: segment, refine, edit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="produce a latent code for an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output latent archive (.npz)")
    p.add_argument("--encoder", help="factory:mod:attr or exec:path")
    p.add_argument("--coarse-steps", type=int, dest="coarse_steps")
    p.add_argument("--coarse-lr", type=float, dest="coarse_lr")
    _add_generator_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("segment", help="compute the in/out-of-domain mask")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output mask (.png)")
    p.add_argument("--k", type=int, help="superpixel count target (default 100)")
    p.add_argument("--tau1", type=float, help="base threshold (default 0.7)")
    p.add_argument("--tau2", type=float, help="eyes/nose/mouth threshold (default 0.8)")
    p.add_argument("--coarse-steps", type=int, dest="coarse_steps")
    p.add_argument("--compactness", type=float)
    p.add_argument("--slic-iters", type=int, dest="slic_iters")
    p.add_argument("--parsing", help="parsing raster (.png with .categories.txt)")
    _add_generator_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("refine", help="hybrid weight/feature refinement")
    p.add_argument("--image", required=True)
    p.add_argument("--latent", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps-f", type=int, dest="steps_f")
    p.add_argument("--steps-w", type=int, dest="steps_w")
    p.add_argument("--lr-w", type=float, dest="lr_w")
    p.add_argument("--lr-f", type=float, dest="lr_f")
    p.add_argument("--lambda", type=float, dest="lambda_perceptual")
    p.add_argument("--layer", type=int, help="injection layer index")
    p.add_argument("--oracle", choices=["pointwise", "pyramid", "huber"])
    _add_generator_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("invert", help="full pipeline into a bundle directory")
    p.add_argument("--image", help="single input image")
    p.add_argument("--image-dir", dest="image_dir", help="batch over a directory")
    p.add_argument("--out", required=True, help="bundle dir (or batch root)")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--encoder")
    p.add_argument("--parsing")
    p.add_argument("--k", type=int)
    p.add_argument("--tau1", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--coarse-steps", type=int, dest="coarse_steps")
    p.add_argument("--steps-f", type=int, dest="steps_f")
    p.add_argument("--steps-w", type=int, dest="steps_w")
    p.add_argument("--lr-w", type=float, dest="lr_w")
    p.add_argument("--lr-f", type=float, dest="lr_f")
    p.add_argument("--lambda", type=float, dest="lambda_perceptual")
    p.add_argument("--layer", type=int)
    p.add_argument("--oracle", choices=["pointwise", "pyramid", "huber"])
    _add_generator_flags(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("edit", help="latent edit over a refined bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--direction", required=True, help="direction archive (.npz)")
    p.add_argument("--alpha", type=float, default=3.0)
    p.add_argument("--out", help="output image (default: inside the bundle)")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("eval", help="score predictions against targets")
    p.add_argument("--pred-dir", required=True, dest="pred_dir")
    p.add_argument("--target-dir", required=True, dest="target_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time-vs-quality budget sweep")
    p.add_argument("--budgets", default="10,50,100")
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--out-dir", dest="out_dir")
    _add_generator_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selfcheck", help="gradient routing and mask algebra checks")
    _add_generator_flags(p)
    p.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RefinementDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
