import math

import numpy as np
import pytest
from scipy import stats

from vortexlab.dynamics import (NumericalFailure, SimParams, StateBatch, SystemSpec, Variant,
                                cir_exact_transition, kernel_displacement, point_mass,
                                simulate, stationary, step_original,
                                step_rescaled)
from vortexlab.estimators import energy_distance_test
from vortexlab.kernel import pairwise_drift
from vortexlab.observables import expected_radius, lyapunov
from vortexlab.rng import make_streams


def _batch(z, seed=0):
    z = np.asarray(z, dtype=float)
    return StateBatch(z.copy(), 0.0, make_streams(seed, z.shape[0]))


def _within(est, target, se, k=4.0):
    return abs(est - target) <= k * se


# ---------------------------------------------------------------------------
# specs and params

def test_spec_validation():
    with pytest.raises(ValueError, match="2 entries but n=3"):
        SystemSpec(3, (1, 1), 1.0)
    with pytest.raises(ValueError):
        SystemSpec(2, (1, 1), 0.0)
    with pytest.raises(ValueError):
        SystemSpec(2, (1, 1), 1.0, "difference")
    with pytest.raises(ValueError):
        SystemSpec(1, (1.0,), 1.0, "ou")
    with pytest.raises(ValueError):
        SimParams(dt=2.0, horizon=1.0)
    with pytest.raises(ValueError):
        SimParams(eps=0.0)
    spec = SystemSpec.two_vortex("reversed", 1, 3, 0.5)
    assert spec.a == (4.0,) and spec.drift_sign == -1.0 and spec.reduced
    assert spec.noise_scale == pytest.approx(2 * math.sqrt(0.5))


# ---------------------------------------------------------------------------
# single steps

def test_ou_step_without_noise_is_exact_decay():
    spec = SystemSpec(1, (0.0,), 1.0, Variant.OU)
    p = SimParams(dt=1e-2, horizon=1.0)
    out = step_rescaled(_batch([[[2.0, 0.0]]]), spec, p, noise=np.zeros((1, 1, 2)))
    np.testing.assert_allclose(out.states[0, 0], [2 * math.exp(-5e-3), 0.0], rtol=1e-15)


def test_one_step_noise_variance():
    spec = SystemSpec(1, (0.0,), 1.0, Variant.OU)
    p = SimParams(dt=0.1, horizon=1.0)
    M = 100_000
    out = step_rescaled(_batch(np.zeros((M, 1, 2))), spec, p)
    target = 4.0 * -math.expm1(-0.1)
    x = out.states.reshape(M, 2)
    for j in range(2):
        v = x[:, j] ** 2
        assert _within(v.mean(), target, v.std() / math.sqrt(M))


def test_drift_consistency_richardson():
    spec = SystemSpec(1, (1.0,), 1.0, Variant.DIFFERENCE)
    z = np.array([[[1.0, 0.0]]])
    target = np.array([-0.5, 1 / (2 * math.pi)])  # K(1, 0) - z / 2
    est = {}
    for dt in (1e-2, 1e-3, 1e-4):
        p = SimParams(dt=dt, horizon=1.0, eps=1e-2)
        out = step_rescaled(_batch(z), spec, p, noise=np.zeros((1, 1, 2)))
        est[dt] = (out.states[0, 0] - z[0, 0]) / dt
    rich = (10 * est[1e-4] - est[1e-3]) / 9
    np.testing.assert_allclose(est[1e-4], target, atol=1e-3)
    np.testing.assert_allclose(rich, target, atol=1e-7)


def test_rotation_step_keeps_pair_distance_and_energy(rng):
    z = rng.normal(size=(50, 2, 2))
    disp, _ = kernel_displacement(z, (1.0, 3.0), 1e-2, 0.05)
    w = z + disp
    np.testing.assert_allclose(np.linalg.norm(w[:, 0] - w[:, 1], axis=1),
                               np.linalg.norm(z[:, 0] - z[:, 1], axis=1), rtol=1e-12)
    # same-sign vorticities: every pair rotation conserves the weighted energy
    z = rng.normal(size=(50, 4, 2))
    a = (1.0, 2.0, 0.5, 1.5)
    disp, _ = kernel_displacement(z, a, 1e-2, 0.05)
    np.testing.assert_allclose(lyapunov(z + disp, a), lyapunov(z, a), rtol=1e-12)


def test_explicit_displacement_matches_drift(rng):
    z = rng.normal(size=(10, 3, 2))
    a = (1.0, -2.0, 0.5)
    disp, _ = kernel_displacement(z, a, 1e-3, 1e-3, scheme="explicit")
    np.testing.assert_allclose(disp, 1e-3 * pairwise_drift(z, a, eps=1e-3), rtol=1e-12)


def test_original_step_brownian_for_single_particle():
    spec = SystemSpec(1, (1.0,), 1.0, Variant.ORIGINAL)
    p = SimParams(dt=0.5, horizon=1.0)
    M = 50_000
    st = _batch(np.tile([[[1.0, 2.0]]], (M, 1, 1)))
    st = step_original(step_original(st, spec, p), spec, p)
    r2 = np.sum(st.states[:, 0] ** 2, axis=1)
    assert _within(r2.mean(), 5.0 + 4.0 * 1.0, r2.std() / math.sqrt(M))


def test_step_variant_guards():
    p = SimParams()
    with pytest.raises(ValueError):
        step_rescaled(_batch(np.zeros((1, 1, 2))), SystemSpec(1, (1.0,), 1.0, "original"), p)
    with pytest.raises(ValueError):
        step_original(_batch(np.zeros((1, 1, 2))), SystemSpec(1, (1.0,), 1.0), p)


# ---------------------------------------------------------------------------
# fused integrator vs numpy reference

@pytest.mark.parametrize("variant,a,scheme", [
    ("rescaled", (1.0, 2.0, -0.5), "rotation"),
    ("rescaled", (1.0, 2.0, -0.5), "explicit"),
    ("difference", (2.0,), "rotation"),
    ("reversed", (3.0,), "rotation"),
    ("original", (1.0, 1.0), "rotation"),
])
def test_fused_integrator_matches_reference_steps(variant, a, scheme):
    spec = SystemSpec(len(a), a, 0.7, variant)
    p = SimParams(dt=1e-2, horizon=0.5, eps=0.05, replicas=64, master_seed=9, scheme=scheme)
    state, _ = simulate(spec, stationary(), p)
    ref = _batch(stationary()(spec, make_streams(9, 64)), seed=9)
    step = step_original if variant == "original" else step_rescaled
    for _ in range(p.steps()):
        ref = step(ref, spec, p)
    np.testing.assert_allclose(state.states, ref.states, rtol=1e-10, atol=1e-12)


def test_replica_results_independent_of_batching():
    spec = SystemSpec(3, (1.0, 2.0, 1.0), 1.0)
    p = SimParams(dt=1e-2, horizon=0.3, replicas=12, master_seed=5)
    full, _ = simulate(spec, stationary(), p)
    part, _ = simulate(spec, stationary(), p, streams=make_streams(5, 4, first_replica=8))
    assert np.array_equal(full.states[8:], part.states)
    again, _ = simulate(spec, stationary(), p)
    assert np.array_equal(full.states, again.states)


def test_numerical_failure_reports_replica():
    spec = SystemSpec(1, (0.0,), 1.0, Variant.OU)

    def init(spec, streams):
        z = np.zeros((len(streams), 1, 2))
        z[3, 0, 0] = np.inf
        return z

    with pytest.raises(NumericalFailure) as err:
        simulate(spec, init, SimParams(dt=0.1, horizon=0.5, replicas=5))
    assert err.value.replica == 3
    assert err.value.time == pytest.approx(0.1)


def test_record_times_outside_horizon_rejected():
    spec = SystemSpec(1, (0.0,), 1.0, Variant.OU)
    with pytest.raises(ValueError):
        simulate(spec, stationary(), SimParams(dt=0.1, horizon=0.5, replicas=2), record_times=[1.0])


# ---------------------------------------------------------------------------
# laws

def test_ou_law_from_point_mass():
    nu, t = 0.8, 1.3
    spec = SystemSpec(1, (0.0,), nu, Variant.OU)
    p = SimParams(dt=0.1, horizon=t, replicas=40_000, master_seed=2)
    z0 = np.array([[1.5, -0.5]])
    st, _ = simulate(spec, point_mass(z0), p)
    x = st.states[:, 0]
    M = len(x)
    mean = math.exp(-t / 2) * z0[0]
    var = 4 * nu * -math.expm1(-t)
    for j in range(2):
        assert _within(x[:, j].mean(), mean[j], math.sqrt(var / M))
        v = (x[:, j] - mean[j]) ** 2
        assert _within(v.mean(), var, v.std() / math.sqrt(M))
    c = (x[:, 0] - mean[0]) * (x[:, 1] - mean[1])
    assert _within(c.mean(), 0.0, c.std() / math.sqrt(M))


def test_equal_vorticity_gaussian_is_invariant():
    spec = SystemSpec(3, (1.0, 1.0, 1.0), 1.0)
    p = SimParams(dt=1e-2, horizon=1.0, replicas=20_000, master_seed=4)
    st, _ = simulate(spec, stationary(), p)
    x = st.states.reshape(len(st.states), -1)
    v = x ** 2
    for j in range(6):
        assert _within(v[:, j].mean(), 2.0, v[:, j].std() / math.sqrt(len(x)))


def test_mean_energy_closed_form():
    a = (1.0, 2.0, 1.0)
    spec = SystemSpec(3, a, 1.0)
    z0 = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 1.0]])
    p = SimParams(dt=1e-2, horizon=1.0, replicas=20_000, master_seed=8)
    st, f = simulate(spec, point_mass(z0), p, record_times=[0.5])
    for t, z in ((0.5, f.records[0.5].z), (1.0, st.states)):
        R = lyapunov(z, a)
        assert _within(R.mean(), expected_radius(z0, a, 1.0, t), R.std() / math.sqrt(len(R)))


def test_unconfined_pair_sum_is_brownian():
    spec = SystemSpec(2, (1.0, 1.0), 0.5, Variant.ORIGINAL)
    p = SimParams(dt=1e-2, horizon=1.0, replicas=20_000, master_seed=3)
    z0 = np.array([[1.0, 0.0], [-1.0, 0.0]])
    st, _ = simulate(spec, point_mass(z0), p)
    s = st.states.sum(axis=1)
    M = len(s)
    for j in range(2):
        v = s[:, j] ** 2
        assert _within(v.mean(), 2 * 2 * 0.5 * 1.0, v.std() / math.sqrt(M))


def test_unconfined_second_moment_growth_is_4_n_nu():
    n, nu, t = 3, 0.5, 2.0
    spec = SystemSpec(n, (1.0,) * n, nu, Variant.ORIGINAL)
    p = SimParams(dt=1e-2, horizon=t, replicas=20_000, master_seed=12)
    st, f = simulate(spec, stationary(), p)
    r0 = np.sum(f.z0 ** 2, axis=(1, 2))
    r1 = np.sum(st.states ** 2, axis=(1, 2))
    d = r1 - r0
    se = d.std() / math.sqrt(len(d))
    assert _within(d.mean(), 4 * n * nu * t, se)
    assert not _within(d.mean(), 2 * n * nu * t, se, k=10)


def test_scaling_identity_small():
    spec = SystemSpec(2, (1.0, 1.0), 1.0)
    t = 1.0
    init = point_mass(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    s = math.expm1(t)
    orig = SystemSpec(2, (1.0, 1.0), 1.0, Variant.ORIGINAL)
    x, _ = simulate(orig, init, SimParams(dt=s / 1000, horizon=s, replicas=600, master_seed=1))
    z, _ = simulate(spec, init, SimParams(dt=1e-3, horizon=t, replicas=600, master_seed=2))
    rep = energy_distance_test(math.exp(-t / 2) * x.states.reshape(600, -1),
                               z.states.reshape(600, -1), 200, seed=0)
    assert rep.p_value >= 0.01


def test_reconstruction_identity_of_integrals():
    spec = SystemSpec(1, (2.0,), 1.0, Variant.DIFFERENCE)
    p = SimParams(dt=1e-2, horizon=3.0, replicas=200, master_seed=6)
    st, f = simulate(spec, stationary(), p)
    lhs = st.states - math.exp(-1.5) * f.z0 - 2.0 * f.IK - f.zeta
    np.testing.assert_allclose(lhs, 0.0, atol=1e-12)


def test_eps_halving_changes_little():
    spec = SystemSpec(1, (2.0,), 1.0, Variant.DIFFERENCE)
    out = {}
    for eps in (0.01, 0.005):
        st, f = simulate(spec, stationary(), SimParams(dt=1e-3, horizon=2.0, eps=eps,
                                                       replicas=4000, master_seed=1))
        out[eps] = np.hstack([st.states[:, 0], f.IK[:, 0]])
    se = out[0.01].std(axis=0) / math.sqrt(4000)
    assert np.all(np.abs(out[0.01].mean(axis=0) - out[0.005].mean(axis=0)) < se)


# ---------------------------------------------------------------------------
# exact radius transition

def test_cir_from_zero_is_exponential():
    nu, t = 1.0, 0.7
    r = cir_exact_transition(np.zeros(100_000), t, nu, np.random.default_rng(1))
    scale = 8 * nu * -math.expm1(-t)
    assert stats.kstest(r, "expon", args=(0, scale)).pvalue >= 0.01


def test_cir_mean_and_stationary_limit():
    nu = 0.5
    s = make_streams(3, 100_000)
    r = cir_exact_transition(3.0, 0.4, nu, s)
    target = 3.0 * math.exp(-0.4) + 8 * nu * -math.expm1(-0.4)
    assert _within(r.mean(), target, r.std() / math.sqrt(r.size))
    assert cir_exact_transition(3.0, 20.0, nu, np.random.default_rng(4)).shape == ()
    big = cir_exact_transition(np.full(100_000, 3.0), 20.0, nu, np.random.default_rng(5))
    assert stats.kstest(big, "expon", args=(0, 8 * nu)).pvalue >= 0.01


def test_cir_domain_errors():
    g = np.random.default_rng(0)
    with pytest.raises(ValueError):
        cir_exact_transition(1.0, 0.0, 1.0, g)
    with pytest.raises(ValueError):
        cir_exact_transition(-1.0, 1.0, 1.0, g)


def test_reversed_radius_matches_exact_transition():
    nu, t = 1.0, 1.0
    spec = SystemSpec(1, (2.0,), nu, Variant.REVERSED)
    st, f = simulate(spec, stationary(), SimParams(dt=1e-3, horizon=t, replicas=3000,
                                                   master_seed=2))
    r_sim = np.sum(st.states[:, 0] ** 2, axis=1)
    r0 = np.sum(f.z0[:, 0] ** 2, axis=1)
    r_exact = cir_exact_transition(r0, t, nu, make_streams(77, 3000))
    assert stats.ks_2samp(r_sim, r_exact).pvalue >= 0.01


def test_reversed_paths_rarely_approach_origin():
    # fraction of paths whose radius drops below eps/2 by t = 10
    frac = {}
    spec = SystemSpec(1, (2.0,), 1.0, Variant.REVERSED)
    for eps in (1e-1, 1e-2, 1e-3):
        _, f = simulate(spec, stationary(), SimParams(dt=1e-3, horizon=10.0, eps=eps,
                                                      replicas=2000, master_seed=3))
        frac[eps] = float(np.mean(f.min_dist < eps / 2))
    assert frac[1e-1] > frac[1e-2] >= frac[1e-3]
    assert frac[1e-1] > 0


# P(min_{s<=1} |X^1_s - X^2_s| <= eps) for two free particles at distance 2, nu = 1:
# inverse Laplace transform of K0(2 sqrt(l/2)) / (l K0(eps sqrt(l/2))) (mpmath, Talbot)
FREE_PAIR_HIT = {5e-2: 0.0867090, 1e-2: 0.0581368, 1e-3: 0.0394028}


@pytest.mark.parametrize("dt", [5e-2, 1e-2])
def test_min_distance_hitting_matches_bessel_oracle(dt):
    spec = SystemSpec(2, (0.0, 0.0), 1.0, Variant.ORIGINAL)
    _, f = simulate(spec, point_mass([[1.0, 0.0], [-1.0, 0.0]]),
                    SimParams(dt=dt, horizon=1.0, replicas=20000, master_seed=1))
    for eps, p in FREE_PAIR_HIT.items():
        q = float(np.mean(f.min_dist <= eps))
        assert _within(q, p, math.sqrt(p * (1 - p) / 20000))


def test_reduced_min_distance_insensitive_to_step():
    spec = SystemSpec(1, (0.0,), 1.0, Variant.DIFFERENCE)
    frac = []
    for dt in (4e-2, 2e-3):
        _, f = simulate(spec, point_mass([[1.0, 0.0]]),
                        SimParams(dt=dt, horizon=1.0, replicas=20000, master_seed=4))
        frac.append(float(np.mean(f.min_dist <= 1e-2)))
    se = math.sqrt(frac[1] * (1 - frac[1]) / 20000)
    assert frac[0] > 0.01 and abs(frac[0] - frac[1]) <= 4 * math.sqrt(2) * se
