"""Command line interface: gen, run, reproduce, metrics, bench.

Every command is batch and deterministic given its arguments; exit codes are
0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


from . import bench as bench_mod
from . import kernels
from .cloud import load_cloud
from .datasets import Dataset, DatasetSpec, KINDS, make_dataset
from .errors import CloudFormatError, ConfigError, NumericalAbortError
from .experiments import (EXPERIMENT_NAMES, ExperimentConfig, ExperimentReport,
                          reproduce, run_experiment, write_dataset)
from .metrics import background_snr, nearest_reference_errors, relative_error
from .neighborhood import fill_distance
from .sketch import build_sketch, load_sketch
from .solver import SolverConfig
from .rng import Rng

DEFAULT_OUT_ROOT_ENV = "MLOP_OUT_ROOT"


def _out_root(value: str | None) -> Path:
    if value:
        return Path(value)
    return Path(os.environ.get(DEFAULT_OUT_ROOT_ENV, "runs"))


def load_dataset_dir(path) -> Dataset:
    """Re-assemble a dataset bundle written by ``gen``."""
    d = Path(path)
    spec = DatasetSpec.from_json(d / "spec.json")
    points = load_cloud(d / "P.csv")
    reference = load_cloud(d / "reference.csv")
    masks = ref_masks = None
    if (d / "masks.csv").exists():
        masks = load_cloud(d / "masks.csv").points.astype(bool)
        ref_masks = load_cloud(d / "reference_masks.csv").points.astype(bool)
    return Dataset(spec=spec, points=points, reference=reference,
                   masks=masks, reference_masks=ref_masks)


def cmd_gen(args) -> int:
    spec = DatasetSpec(
        kind=args.kind,
        sample_count=args.count,
        noise=args.noise,
        gaussian_sigma=args.gaussian_sigma,
        ambient_dim=args.ambient_dim,
        seed=args.seed,
        reference_density=args.reference_density,
        radius=args.radius,
    )
    ds = make_dataset(spec)
    write_dataset(ds, args.out)
    print(f"wrote dataset '{spec.kind}' ({ds.points.size} points, "
          f"R^{ds.points.ambient_dim}) to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    ds = load_dataset_dir(cfg.dataset_dir) if cfg.dataset_dir else make_dataset(cfg.dataset)
    if args.threads is not None:
        cfg.solver.threads = args.threads
    report, result = run_experiment(ds, cfg.solver, out_dir=cfg.out_dir)
    status = "converged" if report.converged else "max-iters"
    print(f"run finished ({status}) after {report.iterations_run} iterations; "
          f"report at {Path(cfg.out_dir) / 'report.json'}")
    return 0


def cmd_reproduce(args) -> int:
    overrides = {}
    for item in args.override:
        key, _, value = item.partition("=")
        if not _:
            raise ConfigError(f"override {item!r} must look like key=value")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        overrides[key] = parsed
    out_root = _out_root(args.out)
    summary = reproduce(args.name, out_root, seed=args.seed, threads=args.threads,
                        overrides=overrides, bootstraps=args.bootstraps)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


def cmd_metrics(args) -> int:
    ds = load_dataset_dir(args.dataset_dir)
    q = load_cloud(args.q)
    if args.sketch:
        S = load_sketch(args.sketch)
    else:
        S = build_sketch(ds.points, args.sketch_dim, Rng(args.seed).stream("sketch"))
    err = nearest_reference_errors(q, ds.reference, S)
    report = ExperimentReport(
        kind=ds.spec.kind,
        relative_error=relative_error(q, ds.reference, S),
        rmse=err.rmse,
        variance=err.variance,
        fill_distance_final=fill_distance(q, S) if q.size >= 2 else None,
        config={"dataset": ds.spec.to_dict()},
    )
    if ds.masks is not None:
        from .experiments import _nearest_mask
        from .metrics import erode_background

        masks = erode_background(_nearest_mask(q, ds.reference, ds.reference_masks, S))
        report.snr_final = background_snr(q, masks).median
    report.save(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_bench(args) -> int:
    rows = bench_mod.compare_backends(n_values=args.n, reps=args.reps,
                                      threads=args.threads, seed=args.seed)
    print("backend,n,median_ms")
    for backend, n, ms in rows:
        print(f"{backend},{n},{ms:.3f}")
    if args.out:
        with open(args.out, "w", encoding="ascii", newline="\n") as fh:
            fh.write("backend,n,median_ms\n")
            for backend, n, ms in rows:
                fh.write(f"{backend},{n},{ms:.3f}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mlop",
        description="Manifold reconstruction and denoising experiments "
                    f"(active kernel backend: {kernels.backend_name()})",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset bundle")
    g.add_argument("--kind", required=True, choices=KINDS)
    g.add_argument("--count", type=int, required=True, help="number of samples J")
    g.add_argument("--noise", type=float, default=0.0, help="uniform noise half-width")
    g.add_argument("--gaussian-sigma", type=float, default=0.05,
                   help="per-pixel gaussian noise (image datasets)")
    g.add_argument("--ambient-dim", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--reference-density", type=float, default=None,
                   help="reference grid density multiplier per parameter axis")
    g.add_argument("--radius", type=float, default=1.5, help="cylinder radius")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run the solver on a generated dataset")
    r.add_argument("--config", required=True,
                   help="JSON with dataset_dir, out_dir and solver settings")
    r.add_argument("--threads", type=int, default=None,
                   help="override the solver thread count (result is identical "
                        "for any value)")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("reproduce", help="run a canned experiment bundle")
    rep.add_argument("name", choices=EXPERIMENT_NAMES)
    rep.add_argument("--out", default=None,
                     help=f"output root (default ${DEFAULT_OUT_ROOT_ENV} or ./runs)")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--threads", type=int, default=1)
    rep.add_argument("--bootstraps", type=int, default=10)
    rep.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                     help="override any dataset/solver field (repeatable)")
    rep.set_defaults(func=cmd_reproduce)

    m = sub.add_parser("metrics", help="re-score an existing reconstruction")
    m.add_argument("--dataset-dir", required=True)
    m.add_argument("--q", required=True, help="reconstruction CSV to score")
    m.add_argument("--sketch", default=None, help="sketch CSV saved by the run")
    m.add_argument("--sketch-dim", type=int, default=10)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_metrics)

    b = sub.add_parser("bench", help="compare kernel backends and dimensions")
    b.add_argument("--n", type=int, nargs="+", default=[60, 120])
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CloudFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
