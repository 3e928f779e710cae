"""One function per CLI command.  Each returns an ``ExperimentResult`` holding
CSV tables and whether the command's statistical gate passed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .dynamics import (SimParams, SystemSpec, Variant, point_mass, product_gaussian,
                       simulate, stationary)
from .estimators import (energy_distance_test, fit_exponential_rate, mardia_normality,
                         relative_entropy_vs_gaussian, standardize_pooled)
from .limitlaw import collision_bound_experiment, sample_limit12, time_reversal_pair
from .observables import (PairLogTrace, RadiusTrace, moment_identity_residuals, pair_log_slope,
                          pair_log_mean_two_vortex)
from .rng import derive_seed

Z_GATE = 4.0


@dataclass
class Table:
    header: tuple
    rows: list = field(default_factory=list)


@dataclass
class ExperimentResult:
    tables: dict
    passed: bool | None = None
    summary: dict = field(default_factory=dict)


def _z0(cfg: RunConfig, spec: SystemSpec):
    if cfg["z0"] is not None:
        return np.asarray(cfg["z0"], dtype=float).reshape(spec.n, 2)
    # default: unit spacing along the first axis, centred
    x = np.arange(spec.n, dtype=float) - 0.5 * (spec.n - 1)
    return np.stack([2.0 * x if spec.n == 2 else x, np.zeros(spec.n)], axis=1)


def _init(cfg: RunConfig, spec: SystemSpec, default="point"):
    kind = cfg.get("init", default)
    if kind == "stationary":
        return stationary()
    if kind == "gaussian":
        mean = cfg["init_mean"]
        mean = np.zeros((spec.n, 2)) if mean is None else np.asarray(mean, float).reshape(spec.n, 2)
        var = cfg.get("init_var", (4.0 if spec.reduced else 2.0) * spec.nu)
        return product_gaussian(mean, var)
    return point_mass(_z0(cfg, spec))


def _times(cfg: RunConfig, default):
    return tuple(cfg["times"]) if cfg["times"] is not None else tuple(default)


# ---------------------------------------------------------------------------

def run_stationarity(cfg: RunConfig) -> ExperimentResult:
    spec = cfg.system()
    times = _times(cfg, (cfg.get("horizon", 1.0),))
    params = cfg.sim(horizon=max(times))
    _, f = simulate(spec, _init(cfg, spec, "stationary"), params, record_times=times)
    target = (4.0 if spec.reduced else 2.0) * spec.nu
    tab = Table(("t", "quantity", "estimate", "target", "std_error", "z_score"))
    ok = True
    for t in times:
        snap = f.records[round(round(t / params.dt) * params.dt, 12)]
        x = snap.z.reshape(len(snap.z), -1)
        n, d = x.shape
        xc = x - x.mean(axis=0)
        for i in range(d):
            for j in range(i, d):
                prod = xc[:, i] * xc[:, j]
                est = float(prod.mean())
                se = float(prod.std(ddof=1) / math.sqrt(n))
                tgt = target if i == j else 0.0
                z = (est - tgt) / se
                ok &= abs(z) <= Z_GATE
                name = f"var_{i}" if i == j else f"cov_{i}_{j}"
                tab.rows.append((t, name, est, tgt, se, z))
        if d <= 8 and n >= 500:
            rep = mardia_normality(x)
            ok &= rep.p_value >= 0.01
            tab.rows.append((t, "mardia_p", rep.p_value, 0.01, 0.0, 0.0))
    return ExperimentResult({"stationarity": tab}, bool(ok))


def _entropy_reference(spec):
    var = (4.0 if spec.reduced else 2.0) * spec.nu
    return np.zeros(2 * spec.n), var


def gaussian_relative_entropy(mean, var, ref_var):
    """H(N(mean, var I) | N(0, ref_var I)) in closed form."""
    mean = np.ravel(mean)
    d = mean.size
    r = var / ref_var
    return 0.5 * d * (r - 1.0 - math.log(r)) + float(mean @ mean) / (2.0 * ref_var)


def run_entropy_decay(cfg: RunConfig) -> ExperimentResult:
    spec = cfg.system()
    times = _times(cfg, (0.5, 1.0, 1.5, 2.0))
    params = cfg.sim(horizon=max(times))
    ref_mean, ref_var = _entropy_reference(spec)
    mean = cfg["init_mean"] if cfg["init_mean"] is not None else np.zeros(2 * spec.n)
    var = cfg.get("init_var", ref_var)
    h0 = gaussian_relative_entropy(mean, var, ref_var)
    init = product_gaussian(np.asarray(mean, float).reshape(spec.n, 2), var)
    _, f = simulate(spec, init, params, record_times=times)
    tab = Table(("t", "entropy_estimate", "std_error", "bound"))
    ok = True
    est = []
    for t in times:
        snap = f.records[round(round(t / params.dt) * params.dt, 12)]
        rep = relative_entropy_vs_gaussian(snap.z.reshape(len(snap.z), -1), ref_mean, ref_var,
                                           k=cfg["k"])
        bound = math.exp(-t) * h0
        ok &= rep.estimate <= 1.10 * bound + 3.0 * rep.std_error
        tab.rows.append((t, rep.estimate, rep.std_error, bound))
        est.append(rep.estimate)
    rate = Table(("rate", "std_error", "h0"))
    if len(times) >= 4 and all(e > 0 for e in est):
        fit = fit_exponential_rate(times, est)
        rate.rows.append((fit.estimate, fit.std_error, h0))
    return ExperimentResult({"entropy_decay": tab, "entropy_rate": rate}, bool(ok), {"h0": h0})


def run_radius_law(cfg: RunConfig) -> ExperimentResult:
    spec = cfg.system()
    if not (all(x > 0 for x in spec.a) or all(x < 0 for x in spec.a)):
        raise ValueError("radius-law needs same-sign vorticities")
    times = _times(cfg, (0.25, 0.5, 1.0, 2.0, 5.0))
    params = cfg.sim(horizon=max(times))
    z0 = _z0(cfg, spec)
    trace = RadiusTrace(times, spec.a, z0)
    simulate(spec, point_mass(z0), params, observers=[trace])
    tab = Table(("t", "empirical_mean_R", "closed_form", "std_error"))
    ok = True
    for t, m, exact, se in trace.rows:
        tab.rows.append((t, m, exact, se))
        ok &= abs(m - exact) <= Z_GATE * se if se > 0 else m == exact
    return ExperimentResult({"radius_law": tab}, bool(ok))


def run_pairlog(cfg: RunConfig) -> ExperimentResult:
    spec = cfg.system()
    if spec.n < 2:
        raise ValueError("pairlog needs n >= 2")
    times = _times(cfg, tuple(np.round(np.arange(1, 11) * 0.1, 12)))
    params = cfg.sim(horizon=max(times))
    z0 = _z0(cfg, spec)
    trace = PairLogTrace((0.0,) + times, spec.a, params.eps)
    simulate(spec, point_mass(z0), params, observers=[trace])
    slope = pair_log_slope(spec.a)
    tab = Table(("t", "mean_pair_log", "std_error", "frac_entering", "linear_prediction",
                 "unstopped_closed_form"))
    base = trace.rows[0][1]
    for t, m, se, frac in trace.rows:
        exact = (pair_log_mean_two_vortex(z0, spec.a, spec.nu, t)
                 if spec.n == 2 and spec.variant is Variant.RESCALED and t > 0 else float("nan"))
        tab.rows.append((t, m, se, frac, base + slope * t, exact))
    slopes, frac = trace.replica_slopes()
    fit_slope, fit_se = (float(slopes.mean()), float(slopes.std(ddof=1) / math.sqrt(slopes.size)))
    ok = abs(fit_slope - slope) <= Z_GATE * fit_se and frac < 0.01
    fit = Table(("fitted_slope", "std_error", "predicted_slope", "frac_entering"),
                [(fit_slope, fit_se, slope, frac)])
    return ExperimentResult({"pairlog": tab, "pairlog_fit": fit}, bool(ok),
                            {"slope": fit_slope, "slope_se": fit_se, "frac_entering": frac})


def run_moments(cfg: RunConfig) -> ExperimentResult:
    spec = cfg.system()
    if not spec.reduced:
        raise ValueError("moments runs on the reduced two-vortex process (variant=difference/ou)")
    if spec.variant is Variant.REVERSED:
        raise ValueError("moments identities are stated for the forward difference process")
    params = cfg.sim(horizon=cfg.get("horizon", 10.0))
    state, f = simulate(spec, _init(cfg, spec, "stationary"), params)
    rep = moment_identity_residuals(state.states[:, 0], f.zeta[:, 0], f.xi[:, 0], spec.a[0], spec.nu)
    tab = Table(("quantity", "estimate", "std_error", "target", "z_score"))
    ok = True
    for k, v in rep.residuals.items():
        se = rep.standard_errors[k]
        tab.rows.append((k, v, se, 0.0, v / se))
        if k in ("r1", "r2", "r3"):
            ok &= abs(v / se) <= Z_GATE
    if "r3" in rep.residuals:
        tab.rows.append(("cov_xi1_z2", rep.residuals["r3"] - 1.0 / (4.0 * math.pi),
                         rep.standard_errors["r3"], -1.0 / (4.0 * math.pi),
                         rep.residuals["r3"] / rep.standard_errors["r3"]))
    for k, v in rep.correlations.items():
        tab.rows.append((k, v, float("nan"), float("nan"), float("nan")))
    return ExperimentResult({"moments": tab}, bool(ok))


def run_limit_law(cfg: RunConfig) -> ExperimentResult:
    v = cfg.values
    if v["a1"] is None:
        raise ValueError("limit-law needs a1 and a2")
    a1, a2, nu = v["a1"], v["a2"], v["nu"]
    params = cfg.sim(horizon=v["t_trunc"])
    tab = Table(("repeat", "seed", "mardia_p", "b1", "b2", "diff_var_0", "diff_var_1"))
    ps = []
    for r in range(cfg["repeats"]):
        seed = derive_seed(cfg.seed, r) if cfg["repeats"] > 1 else cfg.seed
        pair = sample_limit12(a1, a2, nu, params, v["t_trunc"], seed)
        rep = mardia_normality(pair.stacked())
        dv = np.var(pair.z1 - pair.z2, axis=0, ddof=1)
        tab.rows.append((r, seed, rep.p_value, rep.extra["b1"], rep.extra["b2"], dv[0], dv[1]))
        ps.append(rep.p_value)
    med = float(np.median(ps))
    ok = med < 1e-3 if a1 != a2 else med >= 0.01
    return ExperimentResult({"limit_law": tab}, bool(ok), {"median_p": med})


def _energy_repeats(cfg, make_pair, name):
    tab = Table(("repeat", "seed", "statistic", "p_value"))
    hits = 0
    R = cfg["repeats"]
    for r in range(R):
        seed = derive_seed(cfg.seed, r) if R > 1 else cfg.seed
        x, y = make_pair(seed)
        rep = energy_distance_test(x, y, cfg["n_permutations"], seed=seed)
        tab.rows.append((r, seed, rep.statistic, rep.p_value))
        hits += rep.p_value >= 0.01
    need = math.ceil(0.9 * R)
    return ExperimentResult({name: tab}, hits >= need, {"non_rejections": hits, "repeats": R})


def run_reversal(cfg: RunConfig) -> ExperimentResult:
    spec = cfg.system()
    if not spec.reduced:
        raise ValueError("reversal needs a reduced two-vortex variant")
    t = cfg.get("horizon", 10.0)
    params = cfg.sim(horizon=t).with_(replicas=cfg["n_samples"])

    def pair(seed):
        t1, t2 = time_reversal_pair(spec.a[0], spec.nu, t, params, seed)
        return standardize_pooled(t1.stacked(), t2.stacked())

    return _energy_repeats(cfg, pair, "reversal")


def scaled_original(spec: SystemSpec, init, params: SimParams, t: float):
    """e^{-t/2} X_{e^t - 1} for the unconfined system started from ``init``."""
    s = math.expm1(t)
    orig = SystemSpec(spec.n, spec.a, spec.nu, Variant.ORIGINAL)
    p = params.with_(horizon=s, dt=s / max(1, round(s / params.dt)))
    state, _ = simulate(orig, init, p)
    return math.exp(-t / 2) * state.states


def run_scaling(cfg: RunConfig) -> ExperimentResult:
    spec = cfg.system()
    if spec.variant is not Variant.RESCALED:
        spec = SystemSpec(spec.n, spec.a, spec.nu, Variant.RESCALED)
    t = cfg.get("horizon", 1.5)
    init = _init(cfg, spec, "point")
    params = cfg.sim(horizon=t).with_(replicas=cfg["n_samples"])

    def pair(seed):
        x = scaled_original(spec, init, params.with_(master_seed=seed), t)
        z, _ = simulate(spec, init, params.with_(master_seed=derive_seed(seed, 1)))
        return x.reshape(len(x), -1), z.states.reshape(len(x), -1)

    return _energy_repeats(cfg, pair, "scaling")


def run_collision_bound(cfg: RunConfig) -> ExperimentResult:
    spec = cfg.system()
    t = cfg.get("horizon", 2.0)
    reps = collision_bound_experiment(_z0(cfg, spec), spec.a, spec.nu, cfg["eps_list"], t,
                                      cfg.sim(horizon=t))
    tab = Table(("eps", "probability", "std_error", "bound"))
    ok = True
    for r in reps:
        tab.rows.append((r.extra["eps"], r.estimate, r.std_error, r.extra["bound"]))
        ok &= r.estimate <= r.extra["bound"] + 3.0 * r.std_error
    return ExperimentResult({"collision_bound": tab}, bool(ok))


RUNNERS = {
    "stationarity": run_stationarity,
    "entropy-decay": run_entropy_decay,
    "radius-law": run_radius_law,
    "pairlog": run_pairlog,
    "moments": run_moments,
    "limit-law": run_limit_law,
    "reversal": run_reversal,
    "scaling": run_scaling,
    "collision-bound": run_collision_bound,
}


def run_experiment(cfg: RunConfig) -> ExperimentResult:
    return RUNNERS[cfg.command](cfg)
