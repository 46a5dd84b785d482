"""Command-line entry point.

Subcommands: ``run`` (full pipeline), ``stability`` (single trajectory with
the gap profile and rate fit), ``convergence`` (replicates with the
consistency and recursion diagnostics), ``check`` (built-in oracle
self-tests), and ``sweep`` (grid over one config parameter).  Exit codes:
0 success, 1 configuration error, 2 runtime divergence, 3 self-check
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config

DEFAULT_OUT_ENV = "SGDLAB_OUT"


def _add_common(p, with_workers=True):
    p.add_argument("config", help="YAML experiment configuration")
    p.add_argument("--out", default=None, help="output directory (default: $SGDLAB_OUT or ./out)")
    p.add_argument("--seed", type=int, default=None, help="override the base seed")
    p.add_argument("--allow-non-rm", action="store_true",
                   help="accept schedules violating the step-size summability condition")
    p.add_argument("--plots", action="store_true", help="render SVG figures next to the CSV output")
    if with_workers:
        p.add_argument("--workers", type=int, default=1, help="concurrent replicate budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgdlab",
        description="Projected stochastic gradient descent laboratory: "
                    "stability profiles, convergence diagnostics, reproducible artifacts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="full pipeline: replicates, stability, convergence"))
    _add_common(sub.add_parser("stability", help="one trajectory plus the gap profile and rate fit"),
                with_workers=False)
    _add_common(sub.add_parser("convergence", help="replicates plus consistency and recursion checks"))
    sweep = sub.add_parser("sweep", help="grid over one configuration parameter")
    _add_common(sweep)
    sweep.add_argument("--param", required=True, help="dotted config path, e.g. schedule.alpha")
    sweep.add_argument("--values", required=True, help="comma-separated values, e.g. 0.6,0.75,1.0")
    sub.add_parser("check", help="run the built-in oracle self-tests")
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.allow_non_rm and not cfg.allow_non_rm:
        cfg = replace(cfg, allow_non_rm=True)
    if args.plots:
        cfg = replace(cfg, emit_plots=True)
    return cfg


def _out_dir(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(os.environ.get(DEFAULT_OUT_ENV, "out"))


def _parse_values(text: str) -> list:
    import yaml

    values = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        values.append(yaml.safe_load(chunk))
    if not values:
        raise ConfigError("sweep: --values is empty")
    return values


def run_self_check(echo=print) -> int:
    """Oracle self-tests: gradient checks, projection properties, expansion exactness."""
    import numpy as np

    from .losses import LogisticLoss, SquareLoss, check_gradient_fd
    from .model import Sample
    from .rng import philox_generator
    from .sets import Ball, Box, Halfspace, Simplex
    from .stability import taylor_decomposition

    failures = 0
    gen = philox_generator(4242)

    worst = 0.0
    for loss in (SquareLoss(), LogisticLoss()):
        for _ in range(100):
            f = gen.standard_normal(6)
            z = Sample(x=gen.standard_normal(6), y=float(np.sign(gen.standard_normal()) or 1.0))
            worst = max(worst, check_gradient_fd(loss, f, z))
    ok = worst < 1e-5
    failures += not ok
    echo(f"[{'ok' if ok else 'FAIL'}] gradient versus central differences: max relative error {worst:.2e}")

    sets = [Ball(radius=1.5), Box(lo=-np.ones(6), hi=np.ones(6)), Simplex(scale=1.0),
            Halfspace(normal=np.ones(6), offset=1.0)]
    worst = 0.0
    for K in sets:
        for _ in range(200):
            a = 3.0 * gen.standard_normal(6)
            b = 3.0 * gen.standard_normal(6)
            pa, pb = K.project(a), K.project(b)
            worst = max(worst, np.linalg.norm(pa - pb) - np.linalg.norm(a - b))
            worst = max(worst, np.linalg.norm(K.project(pa) - pa))
            g = K.project(3.0 * gen.standard_normal(6))
            # nearest-point optimality: <a - proj(a), g - proj(a)> <= 0 on the set
            worst = max(worst, float((a - pa) @ (g - pa)))
    ok = worst <= 1e-10
    failures += not ok
    echo(f"[{'ok' if ok else 'FAIL'}] projection contraction/idempotence/optimality: worst slack {worst:.2e}")

    worst = 0.0
    loss = SquareLoss()
    for _ in range(200):
        f = gen.standard_normal(6)
        z = Sample(x=gen.standard_normal(6), y=float(gen.standard_normal()))
        t = taylor_decomposition(f, z, 0.05, loss)
        scale = max(1.0, abs(t.exact_diff), abs(t.first_term))
        worst = max(worst, abs(t.residual) / scale)
    ok = worst <= 1e-10
    failures += not ok
    echo(f"[{'ok' if ok else 'FAIL'}] second-order expansion exact for square loss: worst residual {worst:.2e}")

    return failures


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "check":
        failures = run_self_check()
        if failures:
            print(f"{failures} self-check suite(s) failed", file=sys.stderr)
            return 3
        print("all self-checks passed")
        return 0

    from . import runner

    try:
        cfg = _load(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    out = _out_dir(args)
    try:
        if args.command == "run":
            artifacts = runner.run_experiment(cfg, out, workers=args.workers)
        elif args.command == "stability":
            artifacts = runner.run_stability(cfg, out)
        elif args.command == "convergence":
            artifacts = runner.run_convergence(cfg, out, workers=args.workers)
        elif args.command == "sweep":
            values = _parse_values(args.values)
            manifest = runner.run_sweep(cfg, out, args.param, values, workers=args.workers)
            bad = [e for e in manifest["points"] if not e["ok"]]
            if bad:
                print(f"{len(bad)} sweep point(s) had diverged replicates", file=sys.stderr)
                return 2
            print(f"sweep over {args.param}: {len(manifest['points'])} bundles under {out}")
            return 0
        else:  # pragma: no cover
            raise AssertionError(args.command)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    if not artifacts.ok:
        bad = [r for r in artifacts.manifest["replicates"] if r["status"] != "completed"]
        print(f"{len(bad)} replicate(s) diverged; see manifest.json", file=sys.stderr)
        return 2
    print(f"wrote {len(artifacts.manifest['files'])} files to {artifacts.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
