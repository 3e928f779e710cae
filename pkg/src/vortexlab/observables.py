"""Path functionals, closed-form moments and stationary moment identities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import exp1

FOUR_PI = 4.0 * math.pi


@dataclass
class Snapshot:
    """State of a batch at one recorded time."""

    time: float
    z: np.ndarray          # (M, n, 2)
    ib: np.ndarray         # (M, n, 2) exponentially weighted noise integrals
    ik: np.ndarray         # (M, n, 2) exponentially weighted kernel integrals
    min_dist: np.ndarray   # (M,) running minimum pairwise distance, bridge-resolved between steps (|z| for reduced)
    inv_radius: np.ndarray | None = None  # (M, 2) int e^{-s/2}/|z| ds, int ds/|z| (reduced only)


@dataclass
class FunctionalSample:
    """Per-replica path functionals at time ``time``.

    ``IB`` and ``IK`` follow the recursion ``I <- e^{-dt/2} I + increment``,
    i.e. they carry the weight e^{(s - t)/2}.  For the reduced two-vortex
    systems ``IK`` integrates K itself (no vorticity factor) so that
    ``xi = IK`` and ``zeta = 2 sqrt(nu) IB``; for particle systems it holds
    the integrated kernel drift of each particle.  ``kernel_fwd`` carries the
    forward weight e^{-s/2}.
    """

    time: float
    R: np.ndarray
    M: np.ndarray
    IB: np.ndarray
    IK: np.ndarray
    kernel_fwd: np.ndarray
    min_dist: np.ndarray
    nu: float
    z0: np.ndarray | None = None
    inv_radius: np.ndarray | None = None
    records: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, replicas, n, nu):
        z = np.zeros((replicas, n, 2))
        return cls(0.0, np.zeros(replicas), np.zeros(replicas), z.copy(), z.copy(), z.copy(),
                   np.full(replicas, np.inf), nu)

    @property
    def zeta(self):
        return 2.0 * math.sqrt(self.nu) * self.IB

    @property
    def xi(self):
        return self.IK


def lyapunov(z, a):
    """Weighted energy ``sum_i |a_i| |z^i|^2``; z has shape (..., n, 2)."""
    z = np.asarray(z, dtype=float)
    w = np.abs(np.asarray(a, dtype=float))
    return np.sum(w * np.sum(z * z, axis=-1), axis=-1)


def pair_log(z, a, strict=True):
    """``sum_{i != j} a_i a_j ln|z^i - z^j|`` over ordered pairs.

    Coincident positions raise ValueError, or give -inf/nan when ``strict`` is False.
    """
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    n = z.shape[-2]
    out = np.zeros(z.shape[:-2])
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(n):
            for j in range(i + 1, n):
                d = z[..., i, :] - z[..., j, :]
                r = np.hypot(d[..., 0], d[..., 1])
                if strict and np.any(r == 0):
                    raise ValueError("pair_log is undefined for coincident positions")
                out = out + 2.0 * a[i] * a[j] * np.log(r)
    return out


def pair_log_slope(a):
    """Drift of ``pair_log`` away from collisions: -(1/2) sum_{i != j} a_i a_j."""
    a = np.asarray(a, dtype=float)
    return -0.5 * (a.sum() ** 2 - np.sum(a * a))


def pair_log_mean_two_vortex(z0, a, nu, t):
    """Exact E[pair_log(Z_t)] for n = 2 started from the point ``z0``.

    The separation is a planar Ornstein-Uhlenbeck process (the kernel only
    rotates it), so Z^1_t - Z^2_t ~ N(m, s^2 I_2) with |m| = e^{-t/2}|z0^1 - z0^2|,
    s^2 = 4 nu (1 - e^{-t}), and E ln|N(m, s^2 I)| = ln|m| + E1(|m|^2 / 2 s^2) / 2.
    The E1 term is what separates the unstopped mean from the linear drift.
    """
    z0 = np.asarray(z0, dtype=float)
    m = math.exp(-t / 2) * float(np.hypot(*(z0[0] - z0[1])))
    s2 = -4.0 * nu * math.expm1(-t)
    return 2.0 * a[0] * a[1] * (math.log(m) + 0.5 * float(exp1(m * m / (2.0 * s2))))


def expected_radius(z0, a, nu, t):
    """Closed-form mean of the weighted energy: e^{-t} V(z0) + (1 - e^{-t}) 4 nu sum|a_i|."""
    if t < 0:
        raise ValueError("t must be non-negative")
    v0 = lyapunov(z0, a)
    return math.exp(-t) * v0 - math.expm1(-t) * 4.0 * nu * float(np.sum(np.abs(a)))


def lyapunov_generator(z, a, nu):
    """Closed form of the generator applied to the weighted energy: 4 nu sum|a_i| - V(z)."""
    return 4.0 * nu * float(np.sum(np.abs(a))) - lyapunov(z, a)


def second_moment_difference(m0, nu, t):
    """E|Z_t|^2 for the reduced systems from dE|Z|^2/dt = 8 nu - E|Z|^2."""
    return math.exp(-t) * m0 - math.expm1(-t) * 8.0 * nu


def update_exp_integrals(f: FunctionalSample, noise_inc, kernel_inc, dt) -> FunctionalSample:
    """One step of ``I <- e^{-dt/2} I + increment`` for the noise and kernel integrals.

    ``noise_inc`` must be the Gaussian increment ``sqrt(1 - e^{-dt}) xi`` used by
    the dynamics step; ``kernel_inc`` the kernel increment of the same step.
    """
    q = math.exp(-dt / 2)
    return replace(f, time=f.time + dt, IB=q * f.IB + noise_inc, IK=q * f.IK + kernel_inc)


# ---------------------------------------------------------------------------
# stationary moment identities

@dataclass
class MomentReport:
    residuals: dict
    standard_errors: dict
    correlations: dict
    n_samples: int

    def z_scores(self):
        return {k: self.residuals[k] / self.standard_errors[k] for k in self.residuals}


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def moment_identity_residuals(Z, zeta, xi, a, nu, folds=10):
    """Residuals of E[Lf] = 0 at stationarity for the two-vortex difference process.

    Parameters
    ----------
    Z, zeta, xi : ndarray, shape (N, 2)
        Difference, its noise part ``zeta`` and its kernel integral ``xi``.
    a : float
        Total vorticity a1 + a2.

    ``r1``/``r2`` come from f = zeta1 z1 and f = zeta1 z2.  With a = 0 the
    report adds ``r3`` (Cov(Z2, xi1) + 1/4pi), ``r4`` (the Gaussian-moment
    relation, reported only) and ``r4_generator`` (E[Lf] for f = xi1^2 z2^2
    evaluated directly).
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    zeta = np.asarray(zeta, dtype=float).reshape(-1, 2)
    xi = np.asarray(xi, dtype=float).reshape(-1, 2)
    r2 = np.sum(Z * Z, axis=1)
    if np.any(r2 < (10 * np.finfo(float).eps) ** 2):
        raise ValueError("degenerate sample: |Z| vanishes")
    z1, z2 = Z[:, 0], Z[:, 1]
    c = a / (2.0 * math.pi)
    res, se = {}, {}
    res["r1"], se["r1"] = _mean_se(4.0 * nu - z1 * zeta[:, 0] - c * z2 * zeta[:, 0] / r2)
    res["r2"], se["r2"] = _mean_se(-zeta[:, 0] * z2 + c * zeta[:, 0] * z1 / r2)
    if a == 0:
        x1 = xi[:, 0]
        m, s = _mean_se(x1 * z2)
        res["r3"], se["r3"] = m + 1.0 / FOUR_PI, s

        def r4(idx):
            v = np.mean(x1[idx] ** 2)
            cov = np.mean(x1[idx] * z2[idx])
            return 4 * nu * v - 2 * (4 * nu * v + 2 * cov ** 2) - 3.0 / FOUR_PI * cov

        res["r4"] = float(r4(slice(None)))
        parts = np.array_split(np.arange(len(x1)), folds)
        se["r4"] = float(np.std([r4(p) for p in parts], ddof=1) / math.sqrt(folds))
        res["r4_generator"], se["r4_generator"] = _mean_se(
            4 * nu * x1 ** 2 - 2 * x1 ** 2 * z2 ** 2 - x1 * z2 ** 3 / (math.pi * r2))
    corr = {
        "beta": float(np.corrcoef(zeta[:, 0], z1)[0, 1]),
        "gamma": float(np.corrcoef(zeta[:, 0], z2)[0, 1]),
    }
    return MomentReport(res, se, corr, len(Z))


# ---------------------------------------------------------------------------
# observers

class RadiusTrace:
    """Mean weighted energy at given times, next to its closed form."""

    def __init__(self, times, a, z0=None):
        self.times = list(times)
        self.a = a
        self.z0 = z0
        self.rows = []

    def observe(self, snap, spec):
        R = lyapunov(snap.z, self.a)
        m, s = _mean_se(R)
        exact = expected_radius(self.z0, self.a, spec.nu, snap.time) if self.z0 is not None else np.nan
        self.rows.append((snap.time, m, exact, s))


class PairLogTrace:
    """Mean pair_log over replicas whose separation never fell below ``eps``.

    Per-replica values are kept so that slopes can be fitted path by path.
    """

    def __init__(self, times, a, eps):
        self.times = list(times)
        self.a = a
        self.eps = eps
        self.rows = []
        self.values = []
        self.min_dist = None

    def observe(self, snap, spec):
        keep = snap.min_dist > self.eps
        L = pair_log(snap.z, self.a, strict=False)
        m, s = _mean_se(L[keep])
        self.rows.append((snap.time, m, s, 1.0 - keep.mean()))
        self.values.append(L)
        self.min_dist = snap.min_dist

    def replica_slopes(self):
        """OLS slope of pair_log against time for each replica that never entered the zone.

        Returns ``(slopes, fraction_entering)``; the running minimum is taken at the last time.
        """
        t = np.array([r[0] for r in self.rows])
        L = np.array(self.values)
        keep = self.min_dist > self.eps
        tc = t - t.mean()
        slopes = tc @ (L[:, keep] - L[:, keep].mean(axis=0)) / (tc @ tc)
        return slopes, 1.0 - keep.mean()
