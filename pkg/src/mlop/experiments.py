"""Experiment orchestration: dataset -> solver -> metrics -> report files.

Also hosts the canned experiment recipes behind the ``reproduce`` command:
each recipe wires a synthetic dataset at its full benchmark scale through
the solver and writes a summary table of the headline quantities.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import solver as solver_mod
from .cloud import PointCloud, save_cloud, write_matrix
from .datasets import Dataset, DatasetSpec, make_dataset
from .errors import ConfigError
from .metrics import (background_snr, erode_background, local_pca_angle_error,
                      nearest_reference_errors, relative_error)
from .neighborhood import fill_distance
from .rng import Rng
from .sketch import SketchMatrix, save_sketch
from .solver import SolverConfig, SolverResult, write_trace

REPORT_SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    """One-file description of a run: where the data comes from (either a
    directory written by ``gen`` or an inline dataset spec to generate on
    the fly), the solver settings, and where artifacts go."""

    solver: SolverConfig
    out_dir: str
    dataset_dir: str | None = None
    dataset: DatasetSpec | None = None

    def __post_init__(self):
        if (self.dataset_dir is None) == (self.dataset is None):
            raise ConfigError("provide exactly one of dataset_dir / dataset")

    def to_dict(self) -> dict:
        d = {"solver": self.solver.to_dict(), "out_dir": self.out_dir}
        if self.dataset_dir is not None:
            d["dataset_dir"] = self.dataset_dir
        if self.dataset is not None:
            d["dataset"] = self.dataset.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        missing = {"solver", "out_dir"} - set(d)
        if missing:
            raise ConfigError(f"run config is missing {sorted(missing)}")
        return cls(
            solver=SolverConfig.from_dict(d["solver"]),
            out_dir=d["out_dir"],
            dataset_dir=d.get("dataset_dir"),
            dataset=DatasetSpec.from_dict(d["dataset"]) if "dataset" in d else None,
        )

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

# Radius multiplier for local-PCA neighbourhoods: the tangent estimate
# needs a few rings of neighbours around each point.
PCA_RADIUS_MULT = 4.0


@dataclass
class ExperimentReport:
    """Flat record of everything a run is scored on."""

    kind: str
    relative_error: float | None = None
    relative_error_initial: float | None = None
    rmse: float | None = None
    rmse_initial: float | None = None
    max_rel_error: float | None = None
    variance: float | None = None
    fill_distance_initial: float | None = None
    fill_distance_final: float | None = None
    snr_initial: float | None = None
    snr_final: float | None = None
    pca_angle_deg: float | None = None
    runtime_ms: float = 0.0
    iterations_run: int = 0
    converged: bool = False
    max_iters_reached: bool = False
    supports: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA_VERSION
        return d

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _nearest_mask(images: PointCloud, reference: PointCloud,
                  reference_masks: np.ndarray, S: SketchMatrix) -> np.ndarray:
    """Background mask of the nearest reference image, per evaluated image."""
    ref_proj = S.project(reference)
    idx = np.empty(images.size, dtype=int)
    proj = S.project(images)
    for i in range(images.size):
        d = np.einsum("ij,ij->i", ref_proj - proj[i], ref_proj - proj[i])
        idx[i] = int(np.argmin(d))
    return reference_masks[idx]


def score_run(ds: Dataset, result: SolverResult, config: SolverConfig,
              runtime_ms: float) -> ExperimentReport:
    """Compute the metric bundle for a finished run."""
    S = result.sketch
    threads = config.threads
    q0 = ds.points.subset(result.q0_indices)
    err0 = nearest_reference_errors(q0, ds.reference, S, threads=threads)
    err1 = nearest_reference_errors(result.q_final, ds.reference, S, threads=threads)
    rel0 = relative_error(q0, ds.reference, S, threads=threads)
    rel1 = relative_error(result.q_final, ds.reference, S, threads=threads)
    diam = err1.dists.mean() / rel1 if rel1 > 0 else math.nan
    report = ExperimentReport(
        kind=ds.spec.kind,
        relative_error=rel1,
        relative_error_initial=rel0,
        rmse=err1.rmse,
        rmse_initial=err0.rmse,
        max_rel_error=float(err1.max / diam) if math.isfinite(diam) else None,
        variance=err1.variance,
        fill_distance_initial=fill_distance(q0, S) if q0.size >= 2 else None,
        fill_distance_final=fill_distance(result.q_final, S) if result.q_final.size >= 2 else None,
        runtime_ms=runtime_ms,
        iterations_run=result.iterations_run,
        converged=result.converged,
        max_iters_reached=(not result.converged and result.iterations_run >= config.max_iters),
        supports=result.supports.to_dict(),
        config={"dataset": ds.spec.to_dict(), "solver": config.to_dict()},
    )
    if ds.masks is not None:
        init_masks = erode_background(ds.masks[result.q0_indices])
        report.snr_initial = background_snr(q0, init_masks).median
        final_masks = erode_background(
            _nearest_mask(result.q_final, ds.reference, ds.reference_masks, S))
        report.snr_final = background_snr(result.q_final, final_masks).median
    return report


def run_experiment(ds: Dataset, config: SolverConfig,
                   out_dir=None) -> tuple[ExperimentReport, SolverResult]:
    """Run the solver on a dataset and score it; optionally write artifacts."""
    t0 = time.perf_counter()
    result = solver_mod.run(ds.points, config)
    runtime_ms = (time.perf_counter() - t0) * 1e3
    report = score_run(ds, result, config, runtime_ms)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_cloud(result.q_final, out / "Q_final.csv")
        write_trace(result.trace, out / "trace.csv")
        save_sketch(result.sketch, out / "sketch.csv")
        report.save(out / "report.json")
        # per-point nearest-reference distances, plot-ready
        dists = nearest_reference_errors(result.q_final, ds.reference,
                                         result.sketch, threads=config.threads).dists
        write_matrix(dists[:, None], out / "errors.csv")
    return report, result


# ---------------------------------------------------------------------------
# canned reproductions
# ---------------------------------------------------------------------------

EXPERIMENT_NAMES = ("o2", "cone", "cylinder2d", "noise-sweep", "cylinder6d",
                    "ellipses", "pca-benchmark")

NOISE_SWEEP_SIGMAS = (0.0, 0.1, 0.2, 0.5)


def _base_recipe(name: str, seed: int) -> tuple[DatasetSpec, SolverConfig]:
    if name == "o2":
        spec = DatasetSpec(kind="o2", sample_count=500, noise=0.2, seed=seed)
        cfg = SolverConfig(q_size=50, max_iters=500, seed=seed,
                           init="around_point", init_index=250)
    elif name == "cone":
        spec = DatasetSpec(kind="cone_segment", sample_count=720, noise=0.2, seed=seed)
        cfg = SolverConfig(q_size=144, max_iters=500, seed=seed,
                           init="around_point", init_index=360)
    elif name == "cylinder2d":
        spec = DatasetSpec(kind="cylinder2d", sample_count=816, noise=0.1, seed=seed)
        cfg = SolverConfig(q_size=163, max_iters=500, seed=seed,
                           init="around_point", init_index=408)
    elif name == "cylinder6d":
        spec = DatasetSpec(kind="cylinder6d", sample_count=1200, noise=0.1, seed=seed)
        cfg = SolverConfig(q_size=460, max_iters=300, seed=seed, init="random")
    elif name == "ellipses":
        spec = DatasetSpec(kind="ellipse_images", sample_count=900,
                           gaussian_sigma=0.05, seed=seed)
        cfg = SolverConfig(q_size=180, max_iters=1000, seed=seed, init="random")
    else:
        raise ConfigError(f"no base recipe for {name!r}")
    return spec, cfg


def _apply_overrides(spec: DatasetSpec, cfg: SolverConfig, overrides: dict):
    sd = spec.to_dict()
    cd = cfg.to_dict()
    for key, value in overrides.items():
        if key in sd:
            sd[key] = value
        elif key in cd:
            cd[key] = value
        else:
            raise ConfigError(f"unknown override {key!r}")
    return DatasetSpec.from_dict(sd), SolverConfig.from_dict(cd)


def _write_summary(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                format(v, ".17g") if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


def reproduce(name: str, out_root, seed: int = 0, threads: int = 1,
              overrides: dict | None = None, bootstraps: int = 10) -> dict:
    """Run one canned experiment bundle; returns the summary mapping.

    overrides may adjust any DatasetSpec / SolverConfig field by name
    (used for desk-scale smoke runs).
    """
    if name not in EXPERIMENT_NAMES:
        raise ConfigError(f"unknown experiment {name!r}; choose from {EXPERIMENT_NAMES}")
    out = Path(out_root) / name.replace("-", "_")
    out.mkdir(parents=True, exist_ok=True)
    overrides = dict(overrides or {})

    if name == "noise-sweep":
        return _reproduce_noise_sweep(out, seed, threads, overrides)
    if name == "pca-benchmark":
        return _reproduce_pca_benchmark(out, seed, threads, overrides, bootstraps)

    spec, cfg = _base_recipe(name, seed)
    spec, cfg = _apply_overrides(spec, cfg, overrides)
    cfg.threads = threads
    ds = make_dataset(spec)
    report, _ = run_experiment(ds, cfg, out_dir=out)
    rows = [[spec.kind, float(spec.noise), report.relative_error, report.rmse_initial,
             report.rmse, report.fill_distance_initial, report.fill_distance_final]]
    if report.snr_initial is not None:
        rows[0].extend([report.snr_initial, report.snr_final])
        header = ["kind", "noise", "relative_error", "rmse_initial", "rmse_final",
                  "fill_initial", "fill_final", "snr_initial", "snr_final"]
    else:
        header = ["kind", "noise", "relative_error", "rmse_initial", "rmse_final",
                  "fill_initial", "fill_final"]
    _write_summary(out / "summary.csv", header, rows)
    return {"report": report.to_dict()}


def _reproduce_noise_sweep(out: Path, seed: int, threads: int, overrides: dict) -> dict:
    sigmas = overrides.pop("sigmas", NOISE_SWEEP_SIGMAS)
    rows = []
    reports = {}
    for sigma in sigmas:
        spec, cfg = _base_recipe("cylinder2d", seed)
        spec, cfg = _apply_overrides(spec, cfg, dict(overrides, noise=float(sigma)))
        cfg.threads = threads
        ds = make_dataset(spec)
        report, _ = run_experiment(ds, cfg, out_dir=out / f"sigma_{sigma:g}")
        rows.append([float(sigma), report.relative_error])
        reports[f"{sigma:g}"] = report.to_dict()
    _write_summary(out / "summary.csv", ["sigma", "relative_error"], rows)
    return {"sweep": rows, "reports": reports}


def _pca_error_of(points: PointCloud, reference: PointCloud, S: SketchMatrix) -> float:
    h = PCA_RADIUS_MULT * fill_distance(points, S)
    return local_pca_angle_error(points, reference, h, S).median_deg


def pca_benchmark(seed: int = 0, threads: int = 1, bootstraps: int = 10,
                  subset_size: int = 160, sigmas=(0.1, 0.2),
                  sample_count: int = 816, max_iters: int = 500) -> dict:
    """Local-PCA tangent accuracy on five dataset families, all of the
    subset size: clean random samples, noisy samples at two levels, and the
    reconstructions denoised from those same noisy samples.

    Each bootstrap draws a fresh subset; the denoised set is produced by
    running the solver on that subset with q_size equal to its size.
    Returns {sigma: {clean_random, noisy, denoised}} of medians over
    bootstraps.
    """
    summary: dict = {}
    for sigma in sigmas:
        spec = DatasetSpec(kind="cylinder2d", sample_count=sample_count,
                           noise=float(sigma), seed=seed)
        ds = make_dataset(spec)
        boot = Rng(seed).stream("bootstrap")
        clean_meds, noisy_meds, den_meds = [], [], []
        for b in range(bootstraps):
            idx = boot.subsample(ds.points.size, subset_size)
            sub_noisy = ds.points.subset(idx)
            cfg = SolverConfig(q_size=subset_size, max_iters=max_iters,
                               seed=seed + b, init="random", threads=threads)
            result = solver_mod.run(sub_noisy, cfg)
            S = result.sketch
            clean_meds.append(_pca_error_of(ds.clean.subset(idx), ds.reference, S))
            noisy_meds.append(_pca_error_of(sub_noisy, ds.reference, S))
            den_meds.append(_pca_error_of(result.q_final, ds.reference, S))
        summary[f"{sigma:g}"] = {
            "clean_random": float(np.median(clean_meds)),
            "noisy": float(np.median(noisy_meds)),
            "denoised": float(np.median(den_meds)),
        }
    return summary


def _reproduce_pca_benchmark(out: Path, seed: int, threads: int, overrides: dict,
                             bootstraps: int) -> dict:
    kwargs = {}
    for key in ("subset_size", "sigmas", "sample_count", "max_iters"):
        if key in overrides:
            kwargs[key] = overrides.pop(key)
    if overrides:
        raise ConfigError(f"unknown overrides for pca-benchmark: {sorted(overrides)}")
    summary = pca_benchmark(seed=seed, threads=threads, bootstraps=bootstraps, **kwargs)
    rows = []
    for sigma, vals in summary.items():
        for name in ("clean_random", "noisy", "denoised"):
            rows.append([name, float(sigma), vals[name]])
    _write_summary(out / "summary.csv", ["dataset", "sigma", "pca_angle_deg"], rows)
    return {"pca": summary}


# ---------------------------------------------------------------------------
# dataset file layout shared by the gen / run / metrics commands
# ---------------------------------------------------------------------------


def write_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_cloud(ds.points, out / "P.csv")
    save_cloud(ds.reference, out / "reference.csv")
    if ds.masks is not None:
        write_matrix(ds.masks.astype(np.float64), out / "masks.csv")
        write_matrix(ds.reference_masks.astype(np.float64), out / "reference_masks.csv")
    with open(out / "spec.json", "w", encoding="ascii") as fh:
        json.dump(ds.spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
