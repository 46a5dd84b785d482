"""Acceptance battery for the laboratory.

Each test prints one pass/fail line; run with ``pytest tests/test_acceptance.py -v -s``.
The default problem throughout: p=10 linear-Gaussian square loss, generating
parameter of unit norm strictly inside a ball of radius 2, schedule
0.5/(1+n+1), 1e5 online steps, 1e4 fresh draws per stability checkpoint.
"""

import itertools
import time

import numpy as np
import pytest

from sgdlab import (
    Ball,
    LogisticLoss,
    MonitorSeries,
    Sample,
    SquareLoss,
    StepSchedule,
    WholeSpace,
    check_gradient_fd,
    converse_bound_check,
    envelope_constant,
    estimate_constants,
    excess_risk,
    fit_rate,
    make_linear_gaussian,
    norm_error,
    parse_config,
    pooled_gap,
    robbins_siegmund_check,
    run_sgd,
    sgd_monitor_series,
    stability_profile,
    supermartingale_test,
    taylor_decomposition,
    true_minimizer,
)
from sgdlab.rng import RISK_PURPOSE, philox_generator, substream
from sgdlab.runner import run_experiment
from sgdlab.sets import Box, Halfspace, Simplex

P = 10
SIGMA = 0.5
BASE_SEED = 20240501
N_STEPS = 100_000
REPLICATES = 20
FRESH_DRAWS = 10_000


def _criterion(num, name, passed, detail):
    print(f"\n[criterion {num}] {name}: {'PASS' if passed else 'FAIL'} ({detail})")
    assert passed, f"criterion {num} ({name}): {detail}"


@pytest.fixture(scope="session")
def problem():
    w_star = np.ones(P) / np.sqrt(P)
    dist = make_linear_gaussian(w_star, SIGMA)
    loss = SquareLoss()
    constraint = Ball(radius=2.0)
    schedule = StepSchedule(a=0.5, b=1.0, alpha=1.0)
    f_min = true_minimizer(dist, loss, constraint)
    assert constraint.in_interior(f_min, 0.3), "acceptance problem must have an interior minimizer"
    return {"dist": dist, "loss": loss, "constraint": constraint, "schedule": schedule,
            "w_star": w_star, "f_min": f_min}


@pytest.fixture(scope="session")
def default_pipeline(problem):
    """Trajectory, stability profile, and rate fit for the default problem, timed."""
    t0 = time.perf_counter()
    traj = run_sgd(problem["dist"], problem["loss"], problem["constraint"], problem["schedule"],
                   N_STEPS, seed=BASE_SEED)
    series = stability_profile(traj, problem["dist"], problem["loss"], problem["constraint"],
                               m=FRESH_DRAWS)
    fit = fit_rate(series)
    elapsed = time.perf_counter() - t0
    return {"trajectory": traj, "series": series, "fit": fit, "elapsed": elapsed}


def _replicate_runs(problem, schedule, n_reps=REPLICATES, n_steps=N_STEPS, seed0=BASE_SEED):
    return [run_sgd(problem["dist"], problem["loss"], problem["constraint"], schedule,
                    n_steps, seed=seed0 + r) for r in range(n_reps)]


@pytest.fixture(scope="session")
def compliant_runs(problem):
    return _replicate_runs(problem, problem["schedule"])


@pytest.fixture(scope="session")
def monitor_runs(problem):
    return _replicate_runs(problem, problem["schedule"], n_reps=100, n_steps=10_000,
                           seed0=BASE_SEED + 5000)


def test_criterion_1_gap_rate_proportional_to_step_size(default_pipeline):
    series = default_pipeline["series"]
    fit = default_pipeline["fit"]
    ok = (0.8 <= fit.slope <= 1.2 and fit.r_squared >= 0.9
          and series.m == FRESH_DRAWS and series.steps.size == 20
          and default_pipeline["elapsed"] < 120.0)
    _criterion(1, "gap rate linear in the step size", ok,
               f"slope={fit.slope:.3f}, r2={fit.r_squared:.4f}, "
               f"checkpoints={series.steps.size}, elapsed={default_pipeline['elapsed']:.1f}s")


def test_criterion_2_gap_sign(default_pipeline):
    series = default_pipeline["series"]
    lower_edges_ok = bool(np.all(series.beta_hat >= -series.ci_halfwidth))
    mean, se = pooled_gap(series)
    pooled_positive = mean > 1.645 * se
    _criterion(2, "gap nonnegative with positive pooled estimate",
               lower_edges_ok and pooled_positive,
               f"min(gap+ci)={float((series.beta_hat + series.ci_halfwidth).min()):.3e}, "
               f"pooled={mean:.4f} +/- {se:.4f}")


def test_criterion_3_convergence_and_negative_controls(problem, compliant_runs):
    f_min = problem["f_min"]
    threshold = 0.1
    good = sum(norm_error(t.final, f_min) < threshold for t in compliant_runs)
    controls = {}
    for name, schedule in [("alpha=1.5", StepSchedule(a=0.5, b=1.0, alpha=1.5)),
                           ("constant", StepSchedule(a=0.5, b=1.0, alpha=0.0))]:
        runs = _replicate_runs(problem, schedule)
        controls[name] = sum(norm_error(t.final, f_min) >= threshold for t in runs)
    ok = good >= 18 and all(v > REPLICATES // 2 for v in controls.values())
    _criterion(3, "almost-sure convergence with failing negative controls", ok,
               f"compliant below 0.1: {good}/20; stalled replicates: "
               f"alpha=1.5 -> {controls['alpha=1.5']}/20, constant -> {controls['constant']}/20")


def test_criterion_4_projection_eventually_inactive(problem, compliant_runs):
    margin_ok = problem["constraint"].in_interior(problem["f_min"], 0.3)
    quiet = sum(t.projection_active[t.n_steps // 2:].sum() == 0 for t in compliant_runs)
    _criterion(4, "projection inactive over the final half", margin_ok and quiet >= 18,
               f"quiet replicates: {quiet}/20 (interior margin >= 0.3: {margin_ok})")


def test_criterion_5_second_order_expansion():
    gen = philox_generator(606)
    square = SquareLoss()
    worst = 0.0
    for _ in range(1000):
        f = gen.standard_normal(P)
        z = Sample(x=gen.standard_normal(P), y=float(gen.standard_normal()))
        t = taylor_decomposition(f, z, 0.02, square)
        scale = max(1.0, abs(t.exact_diff), abs(t.first_term), abs(t.second_term))
        worst = max(worst, abs(t.residual) / scale)
    square_ok = worst <= 1e-10

    logistic = LogisticLoss()
    gammas = np.array([1e-2, 1e-3, 1e-4])
    slopes = []
    for _ in range(50):
        f = 0.5 * gen.standard_normal(P)
        z = Sample(x=gen.standard_normal(P), y=1.0 if gen.random() < 0.5 else -1.0)
        residuals = np.array([abs(taylor_decomposition(f, z, g, logistic).residual) for g in gammas])
        if np.all(residuals > 1e-15):
            slopes.append(np.polyfit(np.log(gammas), np.log(residuals), 1)[0])
    slope = float(np.median(slopes))
    logistic_ok = len(slopes) >= 25 and abs(slope - 3.0) <= 0.5
    _criterion(5, "one-step expansion exact for quadratics, third order otherwise",
               square_ok and logistic_ok,
               f"square worst residual={worst:.2e}; logistic residual slope={slope:.2f} "
               f"({len(slopes)} usable probes)")


def test_criterion_6_converse_gradient_bound(problem, default_pipeline):
    # the bound quantifies over all steps, so the constant is the fitted
    # envelope of gap/gamma, not the rate fit's geometric mean
    traj = default_pipeline["trajectory"]
    series = default_pipeline["series"]
    c_env = envelope_constant(series)
    consts = estimate_constants(problem["loss"], problem["constraint"], problem["dist"],
                                problem["f_min"], probes=200, seed=BASE_SEED)
    checks = converse_bound_check(traj, problem["dist"], problem["loss"], c_env,
                                  consts.hessian_bound, m=FRESH_DRAWS,
                                  checkpoints=series.steps)
    usable = [c for c in checks if not c.skipped]
    violations = [c for c in usable if c.significant_violation]
    within = sum(c.within_bound for c in usable)
    ok = len(usable) >= 15 and not violations and within == len(usable)
    worst_margin = min((c.bound - (c.moment - c.ci_halfwidth)) for c in usable)
    _criterion(6, "gradient second moment within the stability-implied bound", ok,
               f"usable checkpoints={len(usable)}, within bound={within}, "
               f"significant violations={len(violations)}, C envelope={c_env:.2f}, "
               f"hessian bound={consts.hessian_bound:.1f}, worst CI margin={worst_margin:.3f}")


def test_criterion_7_perturbed_recursion_diagnostics(problem, monitor_runs):
    # deterministic oracle: exact iteration of the recursion passes every flag
    n = 200
    v = np.empty(n + 1)
    beta = 2.0 ** -np.arange(n, dtype=float)
    chi = 2.0 ** -np.arange(n, dtype=float)
    eta = np.empty(n)
    v[0] = 1.0
    for k in range(n):
        eta[k] = v[k] / 4.0
        v[k + 1] = v[k] * (1.0 + beta[k]) + chi[k] - eta[k]
    oracle = robbins_siegmund_check([MonitorSeries(v=v, beta=beta, chi=chi, eta=eta)])
    oracle_ok = (oracle.recursion_violations == 0 and oracle.beta_summable and oracle.chi_summable
                 and oracle.v_converges and oracle.eta_series_bounded)

    series = [sgd_monitor_series(t, problem["dist"], problem["loss"], problem["constraint"],
                                 problem["f_min"], replicate_id=i) for i, t in enumerate(monitor_runs)]
    rs = robbins_siegmund_check(series)
    sm = supermartingale_test(series)
    sgd_ok = (not rs.deterministic_mode and rs.violation_rate <= 0.05 and rs.v_converges
              and rs.chi_summable and rs.eta_series_bounded and sm.violation_rate <= 0.05)

    bad = MonitorSeries(v=1.0 + np.arange(51, dtype=float), beta=np.zeros(50),
                        chi=np.zeros(50), eta=np.zeros(50))
    adversarial = robbins_siegmund_check([bad])
    adversarial_ok = (adversarial.recursion_violations == adversarial.tested_points
                      and not adversarial.v_converges)

    _criterion(7, "perturbed-recursion diagnostics", oracle_ok and sgd_ok and adversarial_ok,
               f"oracle flags ok={oracle_ok}; run violation rate={rs.violation_rate:.3%} "
               f"over {rs.tested_points} cells, drift rate={sm.violation_rate:.3%}; "
               f"adversarial rejected={adversarial_ok}")


def test_criterion_8_oracle_cross_checks(problem):
    gen = philox_generator(808)
    # (a) analytic gradients against central differences
    worst_fd = 0.0
    for loss in (SquareLoss(), LogisticLoss()):
        for _ in range(100):
            f = gen.standard_normal(P)
            z = Sample(x=gen.standard_normal(P), y=1.0 if gen.random() < 0.5 else -1.0)
            worst_fd = max(worst_fd, check_gradient_fd(loss, f, z))
    fd_ok = worst_fd < 1e-5

    # (b) projections against grid search in dimensions 1-3
    grid_ok = True
    for dim in (1, 2, 3):
        steps = {1: 20001, 2: 301, 3: 61}[dim]
        for K in (Ball(radius=1.0), Box(lo=-np.ones(dim), hi=np.full(dim, 0.6)),
                  Simplex(scale=1.0), Halfspace(normal=np.ones(dim), offset=0.5)):
            for _ in range(3):
                f = 1.4 * gen.standard_normal(dim)
                if isinstance(K, (Ball, Box, Simplex)):
                    lo = {"Ball": -np.full(dim, 1.01)}.get(type(K).__name__, None)
                    if isinstance(K, Ball):
                        lo, hi = np.full(dim, -1.01), np.full(dim, 1.01)
                    elif isinstance(K, Box):
                        lo, hi = K.lo, K.hi
                    else:
                        lo, hi = np.zeros(dim), np.full(dim, K.scale)
                else:
                    width = float(K.distance(f)) + 0.5
                    lo, hi = f - width, f + width
                axes = [np.linspace(lo[d], hi[d], steps) for d in range(dim)]
                pts = np.array(list(itertools.product(*axes)))
                if isinstance(K, Simplex):
                    pts = pts[np.all(pts >= 0, axis=1)]
                    sums = pts.sum(axis=1)
                    pts = pts[sums > 0] * (K.scale / sums[sums > 0])[:, None]
                else:
                    pts = pts[np.asarray(K.contains(pts, 1e-9))]
                resolution = np.linalg.norm((hi - lo) / (steps - 1))
                pf = K.project(f)
                best = pts[np.argmin(((pts - f) ** 2).sum(axis=1))]
                if (np.linalg.norm(pf - f) > np.linalg.norm(best - f) + 1e-12
                        or np.linalg.norm(best - f) > np.linalg.norm(pf - f) + 2.0 * resolution):
                    grid_ok = False

    # (c) closed-form risk against Monte Carlo, 20 parameters, 1e6 draws each
    dist, loss = problem["dist"], problem["loss"]
    risk_ok = True
    worst_sigmas = 0.0
    for trial in range(20):
        f = problem["w_star"] + 0.5 * gen.standard_normal(P)
        exact = float(np.sum((f - problem["w_star"]) ** 2) + SIGMA**2)
        x, y = dist._sample_batch(philox_generator(909, substream(RISK_PURPOSE, trial)), 1_000_000)
        vals = loss.values(f, x, y)
        se = float(vals.std(ddof=1) / np.sqrt(vals.size))
        sigmas = abs(float(vals.mean()) - exact) / se
        worst_sigmas = max(worst_sigmas, sigmas)
        risk_ok &= sigmas < 4.0

    # (d) excess risk equals squared distance for unconstrained square loss
    f_min = true_minimizer(dist, loss, WholeSpace())
    identity_ok = True
    for _ in range(100):
        f = f_min + gen.standard_normal(P)
        a = excess_risk(dist, loss, f, f_min)
        b = norm_error(f, f_min) ** 2
        identity_ok &= abs(a - b) <= 1e-10 * max(1.0, a)

    _criterion(8, "oracle cross-checks", fd_ok and grid_ok and risk_ok and identity_ok,
               f"fd worst={worst_fd:.2e}; grid ok={grid_ok}; "
               f"risk MC worst deviation={worst_sigmas:.2f} SE; identity ok={identity_ok}")


def test_criterion_9_byte_identical_reruns(tmp_path_factory):
    cfg = parse_config(
        "problem: {dimension: 4, noise_sigma: 0.4}\n"
        "run: {n_steps: 2000, replicates: 4, base_seed: 7}\n"
        "stability: {fresh_draws: 500, checkpoints: 8}\n"
    )
    outs = []
    for tag, workers in [("w1", 1), ("w1b", 1), ("w3", 3)]:
        out = tmp_path_factory.mktemp(f"det_{tag}")
        run_experiment(cfg, out, workers=workers)
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    same = bool(names)
    for name in names:
        blobs = [(out / name).read_bytes() for out in outs]
        same &= blobs[0] == blobs[1] == blobs[2]
    manifests = [(out / "manifest.json").read_bytes() for out in outs]
    same &= manifests[0] == manifests[1] == manifests[2]
    _criterion(9, "byte-identical artifacts across reruns and worker counts", same,
               f"{len(names)} CSV files plus the manifest compared across 3 runs")
