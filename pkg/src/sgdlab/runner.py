"""Experiment orchestration: runs, sweeps, artifacts, and the manifest.

A run writes, under one output directory: a trajectory CSV per replicate,
a stability CSV with the per-checkpoint gap estimates, a convergence CSV
with the across-replicate curves, a structured report, optional figures,
and a manifest listing every file with its content hash.  All CSV bytes
are a pure function of the configuration: replicate seeds derive from the
base seed, floats are printed as shortest round-trip decimals, and worker
count affects scheduling only.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ExperimentConfig, parse_config
from .engine import (
    DivergenceError,
    Trajectory,
    erm_solve,
    projection_inactivity_index,
    robbins_monro_check,
    run_sgd,
)
from .losses import estimate_constants
from .model import NoAnalyticMinimizerError, sample_dataset, true_minimizer
from .monitor import (
    consistency_curve,
    norm_error,
    robbins_siegmund_check,
    sgd_monitor_series,
    supermartingale_test,
)
from .stability import (
    converse_bound_check,
    default_checkpoints,
    envelope_constant,
    fit_rate,
    gradient_growth_check,
    pooled_gap,
    stability_profile,
)

__all__ = ["RunArtifacts", "run_experiment", "run_stability", "run_convergence", "run_sweep"]


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    v = float(value)
    if np.isnan(v):
        return ""
    return repr(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunArtifacts:
    out_dir: Path
    manifest: dict
    trajectories: list[Trajectory] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r["status"] == "completed" for r in self.manifest["replicates"])


def _closed_form_excess(cfg: ExperimentConfig) -> bool:
    return cfg.distribution == "linear-gaussian" and cfg.loss == "square"


def _trajectory_rows(traj: Trajectory, dist, loss, f_min, closed_form: bool):
    w_star = getattr(dist, "w_star", None)
    base = float(np.sum((f_min - w_star) ** 2)) if closed_form else None
    for i, n in enumerate(traj.recorded_steps):
        n = int(n)
        f = traj.iterates[i]
        err = norm_error(f, f_min)
        if closed_form:
            exc = float(np.sum((f - w_star) ** 2)) - base
        else:
            exc = None
        if n < traj.n_steps:
            yield (n, traj.gamma_at(n), traj.step_losses[n], err, exc, bool(traj.projection_active[n]))
        else:
            yield (n, traj.gamma_at(n), None, err, exc, None)


def _run_replicates(cfg: ExperimentConfig, dist, loss, constraint, schedule, workers: int):
    """Replicate trajectories in submission order; failures become records."""
    seeds = [cfg.base_seed + r for r in range(cfg.replicates)]

    def one(seed):
        return run_sgd(dist, loss, constraint, schedule, cfg.n_steps, seed,
                       record_stride=cfg.record_stride)

    results: list = [None] * len(seeds)
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(one, s): i for i, s in enumerate(seeds)}
            for fut in concurrent.futures.as_completed(futures):
                i = futures[fut]
                try:
                    results[i] = fut.result()
                except DivergenceError as e:
                    results[i] = e
    else:
        for i, s in enumerate(seeds):
            try:
                results[i] = one(s)
            except DivergenceError as e:
                results[i] = e
    records = []
    trajectories = []
    for i, (seed, res) in enumerate(zip(seeds, results)):
        if isinstance(res, Trajectory):
            records.append({"replicate": i, "seed": seed, "status": "completed"})
            trajectories.append(res)
        else:
            records.append({"replicate": i, "seed": seed, "status": "diverged",
                            "error": str(res), "step": res.step})
            trajectories.append(None)
    return records, trajectories


def _stability_block(cfg, traj, dist, loss, constraint, f_min):
    series = stability_profile(traj, dist, loss, constraint, m=cfg.stability_draws,
                               checkpoints=default_checkpoints(traj, count=cfg.stability_checkpoints))
    report: dict = {"checkpoints": int(series.steps.size), "fresh_draws_per_checkpoint": cfg.stability_draws}
    pooled_mean, pooled_se = pooled_gap(series)
    report["pooled_gap"] = {"mean": pooled_mean, "stderr": pooled_se}
    report["min_gap_plus_ci"] = float((series.beta_hat + series.ci_halfwidth).min())
    try:
        fit = fit_rate(series)
        report["rate_fit"] = {"slope": fit.slope, "c_hat": fit.c_hat,
                              "r_squared": fit.r_squared, "n_used": fit.n_used}
    except ValueError as e:
        fit = None
        report["rate_fit"] = {"error": str(e)}
    constants = estimate_constants(loss, constraint, dist, f_min, probes=200, seed=cfg.base_seed)
    report["constants"] = {
        "lipschitz": constants.lipschitz,
        "hessian_bound": constants.hessian_bound,
        "growth": constants.growth,
        "probe_radius": constants.probe_radius,
        "probes": constants.probes,
    }
    if fit is not None:
        envelope = envelope_constant(series)
        converse = converse_bound_check(traj, dist, loss, envelope, constants.hessian_bound,
                                        m=cfg.stability_draws, checkpoints=series.steps)
        usable = [c for c in converse if not c.skipped]
        report["converse_bound"] = {
            "envelope_constant": envelope,
            "checkpoints": len(converse),
            "skipped": len(converse) - len(usable),
            "within_bound": sum(c.within_bound for c in usable),
            "significant_violations": sum(c.significant_violation for c in usable),
        }
    growth = gradient_growth_check(traj, dist, loss, f_min, constants.growth,
                                   m=cfg.stability_draws, checkpoints=series.steps)
    report["growth_bound"] = {
        "checkpoints": len(growth),
        "within_bound": sum(c.within_bound for c in growth),
        "significant_violations": sum(c.significant_violation for c in growth),
    }
    return series, report


def _convergence_block(cfg, trajs, dist, loss, constraint, f_min, closed_form):
    curve = None
    if len(trajs) >= 10:
        if closed_form:
            steps = None  # closed-form risk: evaluate on the whole grid
        else:
            grid = trajs[0].recorded_steps
            targets = np.geomspace(max(1, int(grid[1]) if grid.size > 1 else 1, grid[-1] // 1000),
                                   grid[-1], 40)
            steps = np.unique(grid[np.clip(np.searchsorted(grid, targets), 0, grid.size - 1)])
        curve = consistency_curve(trajs, dist, loss, f_min, cfg.epsilon, steps=steps,
                                  mc_draws=cfg.risk_mc_draws, seed=cfg.base_seed)
    final_errors = [norm_error(t.final, f_min) for t in trajs]
    below = sum(e < cfg.near_threshold for e in final_errors)
    report: dict = {
        "epsilon": cfg.epsilon,
        "near_threshold": cfg.near_threshold,
        "replicates": len(trajs),
        "final_norm_error_median": float(np.median(final_errors)),
        "replicates_below_threshold": int(below),
    }
    inactivity = []
    for t in trajs:
        half = t.projection_active[t.n_steps // 2:]
        inactivity.append({"active_fraction_last_half": float(half.mean()),
                           "inactivity_index": projection_inactivity_index(t)})
    report["projection"] = {
        "replicates_with_quiet_last_half": int(sum(1 for r in inactivity if r["active_fraction_last_half"] == 0.0)),
        "per_replicate": inactivity,
    }
    rs_report = None
    series = []
    try:
        for i, t in enumerate(trajs):
            series.append(sgd_monitor_series(t, dist, loss, constraint, f_min, replicate_id=i))
    except ValueError as e:
        report["recursion_check"] = {"error": str(e)}
        series = []
    if series:
        rs = robbins_siegmund_check(series)
        sm = supermartingale_test(series)
        report["recursion_check"] = {
            "violations": rs.recursion_violations,
            "tested_points": rs.tested_points,
            "violation_rate": rs.violation_rate,
            "beta_summable": rs.beta_summable,
            "chi_summable": rs.chi_summable,
            "v_converges": rs.v_converges,
            "eta_series_bounded": rs.eta_series_bounded,
            "deterministic_mode": rs.deterministic_mode,
            "notes": rs.notes,
        }
        report["supermartingale"] = {
            "violations": sm.violations,
            "tested_points": sm.tested_points,
            "violation_rate": sm.violation_rate,
            "deterministic_mode": sm.deterministic_mode,
        }
        rs_report = (rs, series)
    return curve, report, rs_report


def _convergence_rows(curve, trajs, f_min, series):
    """Rows (n, fraction exceeding, mean V, mean eta partial sum)."""
    grid = trajs[0].recorded_steps
    v_mean = np.mean([np.sum((t.iterates - f_min) ** 2, axis=1) for t in trajs], axis=0)
    eta_partial = None
    if series:
        cum = np.mean([np.cumsum(s.eta) for s in series], axis=0)
        eta_partial = {i + 1: cum[i] for i in range(cum.size)}
        eta_partial[0] = 0.0
    frac = dict(curve) if curve else {}
    for i, n in enumerate(grid):
        n = int(n)
        yield (n, frac.get(n), v_mean[i], None if eta_partial is None else eta_partial.get(n))


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int = 1,
                   emit_plots: bool | None = None, include_stability: bool = True) -> RunArtifacts:
    """Full pipeline: replicates, stability profile, convergence diagnostics, manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dist = cfg.build_distribution()
    loss = cfg.build_loss()
    constraint = cfg.build_constraint()
    schedule = cfg.build_schedule()
    if emit_plots is None:
        emit_plots = cfg.emit_plots

    try:
        f_min = true_minimizer(dist, loss, constraint)
    except NoAnalyticMinimizerError:
        data = sample_dataset(dist, cfg.base_seed + 977, max(10_000, 50 * cfg.dimension))
        f_min = erm_solve(data, loss, constraint).f

    rm = robbins_monro_check(schedule)
    report: dict = {
        "tool": "sgdlab",
        "version": __version__,
        "schedule": {"a": cfg.schedule_a, "b": cfg.schedule_b, "alpha": cfg.schedule_alpha,
                     "divergent_sum": rm.divergent_sum, "convergent_sq_sum": rm.convergent_sq_sum,
                     "robbins_monro": rm.passes},
        "minimizer": [float(v) for v in f_min],
    }

    records, trajectories = _run_replicates(cfg, dist, loss, constraint, schedule, workers)
    completed = [t for t in trajectories if t is not None]
    closed_form = _closed_form_excess(cfg)

    files: list[Path] = []
    for i, traj in enumerate(trajectories):
        if traj is None:
            continue
        path = out / f"trajectory_r{i:03d}.csv"
        _write_csv(path, ["n", "gamma_n", "loss_at_step", "norm_error", "excess_risk", "projection_active"],
                   _trajectory_rows(traj, dist, loss, f_min, closed_form))
        files.append(path)

    series = None
    if completed and include_stability:
        series, stab_report = _stability_block(cfg, completed[0], dist, loss, constraint, f_min)
        report["stability"] = stab_report
        path = out / "stability.csv"
        _write_csv(path, ["n", "gamma", "beta_hat", "ci", "m"], series.rows())
        files.append(path)

    curve = None
    monitor_series = []
    if len(completed) >= 10:
        curve, conv_report, rs_bundle = _convergence_block(cfg, completed, dist, loss, constraint,
                                                           f_min, closed_form)
        report["convergence"] = conv_report
        if rs_bundle:
            monitor_series = rs_bundle[1]
        path = out / "convergence.csv"
        _write_csv(path, ["n", "frac_exceeding_eps", "V_mean", "eta_partial_sum"],
                   _convergence_rows(curve, completed, f_min, monitor_series))
        files.append(path)

    if emit_plots and completed:
        from . import plots

        figures = plots.render_all(out, series=series, trajectories=completed, f_min=f_min,
                                   curve=curve, epsilon=cfg.epsilon)
        files.extend(figures)

    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append(report_path)

    manifest = {
        "tool": "sgdlab",
        "version": __version__,
        "config": cfg.resolved(),
        "config_sha256": cfg.content_hash(),
        "replicates": records,
        "files": {f.name: _sha256(f) for f in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunArtifacts(out_dir=out, manifest=manifest, trajectories=completed)


def run_stability(cfg: ExperimentConfig, out_dir, emit_plots: bool | None = None) -> RunArtifacts:
    """Single-replicate pipeline: trajectory, gap profile, and rate fit only."""
    one = _with_replicates(cfg, 1)
    return run_experiment(one, out_dir, workers=1, emit_plots=emit_plots)


def run_convergence(cfg: ExperimentConfig, out_dir, workers: int = 1,
                    emit_plots: bool | None = None) -> RunArtifacts:
    """Replicates with the consistency and recursion diagnostics; no gap profile."""
    return run_experiment(cfg, out_dir, workers=workers, emit_plots=emit_plots,
                          include_stability=False)


def _with_replicates(cfg: ExperimentConfig, n: int) -> ExperimentConfig:
    return replace(cfg, replicates=n)


def _set_path(tree: dict, dotted: str, value):
    parts = dotted.split(".")
    node = tree
    for key in parts[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ValueError(f"sweep parameter path {dotted!r} does not address a mapping")
    node[parts[-1]] = value


def run_sweep(cfg: ExperimentConfig, out_dir, param: str, values: list, workers: int = 1) -> dict:
    """One full bundle per parameter value, plus a sweep manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for value in values:
        tree = cfg.resolved()
        _set_path(tree, param, value)
        sub_cfg = parse_config(yaml.safe_dump(tree))
        sub_dir = out / f"{param.replace('.', '_')}_{value}"
        artifacts = run_experiment(sub_cfg, sub_dir, workers=workers)
        entries.append({
            "value": value,
            "directory": sub_dir.name,
            "ok": artifacts.ok,
            "config_sha256": sub_cfg.content_hash(),
        })
    sweep_manifest = {"tool": "sgdlab", "version": __version__, "parameter": param, "points": entries}
    (out / "sweep_manifest.json").write_text(json.dumps(sweep_manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    return sweep_manifest

