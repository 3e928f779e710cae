"""Samplers for the long-time limits of the two-vortex system.

The triplet law is built from the reversed difference process started at its
stationary law N(0, 4 nu I):

    (Zbar_0, int_0^T e^{-s/2} (Zbar_s / sqrt(4 nu) ds - dB_s), int_0^T e^{-s/2} K(Zbar_s) ds).

The middle component is not accumulated directly: integrating
d(e^{-s/2} Zbar_s) over [0, T] gives

    2 sqrt(nu) * drift_int = Zbar_0 - e^{-T/2} Zbar_T - a * kernel_int,

which holds exactly for the discrete scheme as well.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SimParams, SystemSpec, Variant, point_mass, simulate, stationary
from .estimators import StatReport
from .rng import AUX, INIT, make_streams


@dataclass
class TripletSample:
    zbar0: np.ndarray        # (N, 2)
    drift_int: np.ndarray    # (N, 2)
    kernel_int: np.ndarray   # (N, 2)
    truncation_T: float

    def stacked(self):
        """(N, 6) array of the three components."""
        return np.hstack([self.zbar0, self.drift_int, self.kernel_int])


@dataclass
class LimitPairSample:
    z1: np.ndarray  # (N, 2)
    z2: np.ndarray  # (N, 2)

    def stacked(self):
        return np.hstack([self.z1, self.z2])


def _triplet_run(variant, a, nu, params: SimParams, horizon, master_seed):
    spec = SystemSpec(1, (a,), nu, variant)
    p = params.with_(horizon=horizon, master_seed=master_seed)
    state, f = simulate(spec, stationary(), p)
    return spec, state, f


def sample_mu_inf(nu, a, params: SimParams, T_trunc=None, master_seed=None) -> TripletSample:
    """Draw ``params.replicas`` triplets, truncating the integrals at ``T_trunc``."""
    T = params.t_trunc if T_trunc is None else T_trunc
    if T < 10:
        raise ValueError("T_trunc must be >= 10")
    seed = params.master_seed if master_seed is None else master_seed
    _, state, f = _triplet_run(Variant.REVERSED, a, nu, params, T, seed)
    return _reversed_triplet(f, state.states, a, nu, state.time)


def _reversed_triplet(f, zT, a, nu, T):
    z0 = f.z0[:, 0]
    kern = f.kernel_fwd[:, 0]
    drift = (z0 - math.exp(-T / 2) * zT[:, 0] - a * kern) / (2.0 * math.sqrt(nu))
    return TripletSample(z0, drift, kern, T)


def limit_pair_from_triplet(trip: TripletSample, a1, a2, g_perp):
    """Assemble (z1, z2); ``g_perp`` holds the N(0, nu I) draws."""
    common = g_perp + 0.5 * (a2 - a1) * trip.kernel_int
    return LimitPairSample(0.5 * trip.zbar0 + common, -0.5 * trip.zbar0 + common)


def sample_limit12(a1, a2, nu, params: SimParams, T_trunc=None, master_seed=None) -> LimitPairSample:
    """Two-vortex limit law: z1 = Zbar_0/2 + G + c K_int, z2 = -Zbar_0/2 + G + c K_int.

    Here G ~ N(0, nu I) is independent of the path and c = (a2 - a1)/2.  When
    a1 == a2 the kernel integral drops out and only Zbar_0 is drawn.
    """
    seed = params.master_seed if master_seed is None else master_seed
    streams = make_streams(seed, params.replicas)
    g_perp = math.sqrt(nu) * streams.with_family(AUX).normals(2)
    if a1 == a2:
        T = params.t_trunc if T_trunc is None else T_trunc
        z0 = 2.0 * math.sqrt(nu) * streams.with_family(INIT).normals(2)
        trip = TripletSample(z0, np.full_like(z0, np.nan), np.zeros_like(z0), T)
    else:
        trip = sample_mu_inf(nu, a1 + a2, params, T_trunc, seed)
    return limit_pair_from_triplet(trip, a1, a2, g_perp)


def time_reversal_pair(a, nu, t, params: SimParams, master_seed=None, reversed_sign=True):
    """The two triplet batches whose laws coincide.

    T1 runs the difference process (drift +aK) for a duration t/2 from the
    stationary law and returns (Z, int e^{(s-t)/2} dB, int e^{(s-t)/2} K(Z) ds).
    T2 runs the reversed process (drift -aK) over [0, t/2] and returns the
    triplet.  ``reversed_sign=False`` gives T2 the forward drift instead (a
    control that should be told apart).  The two batches use independent seeds.
    """
    if t < 2:
        raise ValueError("t must be >= 2")
    seed = params.master_seed if master_seed is None else master_seed
    s1 = (seed * 2 + 0) & 0xFFFFFFFFFFFFFFFF
    s2 = (seed * 2 + 1) & 0xFFFFFFFFFFFFFFFF
    half = 0.5 * t
    _, st1, f1 = _triplet_run(Variant.DIFFERENCE, a, nu, params, half, s1)
    t1 = TripletSample(st1.states[:, 0], f1.IB[:, 0], f1.IK[:, 0], half)
    v2 = Variant.REVERSED if reversed_sign else Variant.DIFFERENCE
    _, st2, f2 = _triplet_run(v2, a, nu, params, half, s2)
    # the identity for drift_int uses the drift actually applied in the run
    a_eff = a if reversed_sign else -a
    t2 = _reversed_triplet(f2, st2.states, a_eff, nu, half)
    return t1, t2


# ---------------------------------------------------------------------------
# collision probabilities

def sup_energy_sq_bound(z0, a, nu, t):
    """Doob-type bound on E[sup_{s<=t} R_s^2] for the weighted energy R."""
    z0 = np.asarray(z0, dtype=float).reshape(-1, 2)
    a = np.abs(np.asarray(a, dtype=float))
    r2 = np.sum(z0 * z0, axis=1)
    abar = a.max()
    first = np.sum(a * (r2 + 4.0 * nu * t)) ** 2
    second = 32.0 * nu * abar * (np.sum(a * r2) * -math.expm1(-t)
                                 + 4.0 * nu * a.sum() * (t + math.expm1(-t)))
    return float(2.0 * (first + second))


def collision_bound(z0, a, nu, eps, t):
    """Right-hand side of the collision-time bound for same-sign vorticities."""
    z0 = np.asarray(z0, dtype=float).reshape(-1, 2)
    a = np.asarray(a, dtype=float)
    n = len(a)
    if not (np.all(a > 0) or np.all(a < 0)):
        raise ValueError("collision bound needs same-sign vorticities")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    head = 0.0
    amin = math.inf
    for i in range(n):
        for j in range(n):
            if i != j:
                head += a[i] * a[j] * (t / 2 - math.log(float(np.hypot(*(z0[i] - z0[j])))))
                amin = min(amin, a[i] * a[j])
    absa = np.abs(a)
    tail = 2.0 * float(np.sum(np.sqrt(absa) * (absa.sum() - absa)))
    tail *= sup_energy_sq_bound(z0, a, nu, t) ** 0.25
    return (head + tail) / (amin * math.log(1.0 / eps))


def collision_bound_experiment(z0, a, nu, eps_list, t, params: SimParams):
    """Empirical P(min pairwise distance <= eps before t) next to the bound, one report per eps.

    The dynamics are regularized at min(eps_list)/10 so every hitting event is
    decided by the exact kernel.
    """
    a = tuple(float(x) for x in a)
    if not (all(x > 0 for x in a) or all(x < 0 for x in a)):
        raise ValueError("collision_bound_experiment needs same-sign vorticities")
    z0 = np.asarray(z0, dtype=float).reshape(-1, 2)
    spec = SystemSpec(len(a), a, nu, Variant.RESCALED)
    p = params.with_(horizon=t, eps=min(eps_list) / 10.0)
    _, f = simulate(spec, point_mass(z0), p)
    out = []
    for eps in eps_list:
        hit = f.min_dist <= eps
        pr = float(hit.mean())
        se = math.sqrt(max(pr * (1 - pr), 1e-300) / hit.size)
        bound = collision_bound(z0, a, nu, eps, t)
        out.append(StatReport(pr, se, bound, int(hit.size), "collision-probability",
                              seed=p.master_seed, extra={"eps": eps, "bound": bound}))
    return out
