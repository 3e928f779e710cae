"""Sample-based diagnostics: relative entropy, transport and energy distances,
normality tests and exponential-rate fits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import digamma, gammaln

MAX_EXACT_N = 2000


@dataclass(frozen=True)
class SampleCloud:
    """N points in R^d with an optional seed for bookkeeping."""

    points: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("points must be an (N, d) array")
        if not np.isfinite(p).all():
            raise ValueError("cloud contains non-finite entries")
        object.__setattr__(self, "points", p)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


@dataclass
class StatReport:
    estimate: float
    std_error: float
    statistic: float
    n_samples: int
    method: str
    p_value: float | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)


def _pts(x) -> np.ndarray:
    return x.points if isinstance(x, SampleCloud) else SampleCloud(x).points


# ---------------------------------------------------------------------------
# relative entropy against an isotropic Gaussian

def knn_entropy(x, k=5):
    """Kozachenko-Leonenko differential entropy (nats) from k-th neighbour distances."""
    x = _pts(x)
    n, d = x.shape
    if n <= k:
        raise ValueError("need more than k points")
    dist, _ = cKDTree(x).query(x, k=k + 1)
    rho = dist[:, k]
    if np.any(dist[:, 1] == 0.0):
        raise ValueError("cloud has coincident points; kNN entropy is undefined")
    log_vd = 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)
    return float(digamma(n) - digamma(k) + log_vd + d * np.mean(np.log(rho)))


def _gaussian_cross_entropy(x, mean, var):
    d = x.shape[1]
    r2 = np.sum((x - mean) ** 2, axis=1)
    return 0.5 * d * math.log(2.0 * math.pi * var) + np.mean(r2) / (2.0 * var)


def relative_entropy_vs_gaussian(cloud, mean, cov_scale, k=5, folds=10) -> StatReport:
    """H(p | N(mean, cov_scale I)) as Gaussian cross-entropy minus kNN entropy.

    The estimate uses the full sample; the standard error comes from the
    spread of the same estimator over ``folds`` disjoint batches.
    """
    x = _pts(cloud)
    n, d = x.shape
    if n < 100:
        raise ValueError("relative entropy estimate needs N >= 100")
    if not 3 <= k <= 20:
        raise ValueError("k must lie in [3, 20]")
    if not cov_scale > 0:
        raise ValueError("cov_scale must be positive")
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (d,))

    def est(y):
        return _gaussian_cross_entropy(y, mean, cov_scale) - knn_entropy(y, k)

    h = est(x)
    parts = [est(x[idx]) for idx in np.array_split(np.arange(n), folds)]
    se = float(np.std(parts, ddof=1) / math.sqrt(folds))
    seed = cloud.seed if isinstance(cloud, SampleCloud) else None
    return StatReport(float(h), se, float(h), n, f"knn-kl(k={k})", seed=seed)


# ---------------------------------------------------------------------------
# transport distances

def wasserstein_exact(a, b, alpha=1.0):
    """Empirical W_alpha between equal-size clouds via optimal assignment."""
    x, y = _pts(a), _pts(b)
    if x.shape != y.shape:
        raise ValueError(f"cloud sizes differ: {x.shape} vs {y.shape}")
    if x.shape[0] > MAX_EXACT_N:
        raise ValueError(f"exact assignment is capped at N={MAX_EXACT_N}; use sliced_wasserstein")
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    cost = cdist(x, y) ** alpha
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].mean() ** (1.0 / alpha))


def sliced_wasserstein(a, b, alpha=1.0, n_projections=64, seed=0):
    """(mean over random directions of the 1D W_alpha^alpha)^(1/alpha).

    Never exceeds ``wasserstein_exact`` on the same clouds.
    """
    x, y = _pts(a), _pts(b)
    if x.shape != y.shape:
        raise ValueError("sliced_wasserstein needs equal-size clouds")
    if n_projections < 16:
        raise ValueError("n_projections must be >= 16")
    d = x.shape[1]
    u = np.random.default_rng(seed).standard_normal((n_projections, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    px = np.sort(x @ u.T, axis=0)
    py = np.sort(y @ u.T, axis=0)
    return float(np.mean(np.abs(px - py) ** alpha) ** (1.0 / alpha))


# ---------------------------------------------------------------------------
# energy distance

def standardize_pooled(a, b):
    """Divide both clouds by the per-column standard deviation of the pooled sample.

    The same linear map is applied to both sides, so equality in law is
    unaffected; it keeps small-scale columns from being drowned out in the
    Euclidean distances of the energy statistic.
    """
    x, y = _pts(a), _pts(b)
    sc = np.vstack([x, y]).std(axis=0)
    sc[sc == 0] = 1.0
    return x / sc, y / sc


def energy_distance_test(a, b, n_permutations=500, seed=0, chunk=128) -> StatReport:
    """Two-sample energy statistic 2E|X-Y| - E|X-X'| - E|Y-Y'| with a permutation p-value.

    All permutation statistics come from one pooled distance matrix: for a
    label indicator u, sum_AA = u'Du, sum_AB = u'D1 - sum_AA and
    sum_BB = 1'D1 - 2u'D1 + sum_AA.
    """
    x, y = _pts(a), _pts(b)
    if x.shape[1] != y.shape[1]:
        raise ValueError("clouds live in different dimensions")
    na, nb = len(x), len(y)
    D = cdist(np.vstack([x, y]), np.vstack([x, y]))
    rows = D.sum(axis=1)
    total = rows.sum()

    def stat(u):
        # u: (N, P) indicator columns
        saa = np.einsum("ip,ip->p", u, D @ u)
        sab = rows @ u - saa
        sbb = total - 2.0 * (rows @ u) + saa
        return 2.0 * sab / (na * nb) - saa / na ** 2 - sbb / nb ** 2

    u0 = np.zeros((na + nb, 1))
    u0[:na] = 1.0
    obs = float(stat(u0)[0])
    rng = np.random.default_rng(seed)
    null = []
    done = 0
    while done < n_permutations:
        p = min(chunk, n_permutations - done)
        u = np.zeros((na + nb, p))
        for j in range(p):
            u[rng.permutation(na + nb)[:na], j] = 1.0
        null.append(stat(u))
        done += p
    null = np.concatenate(null) if null else np.zeros(0)
    exceed = int(np.sum(null >= obs * (1 - 1e-12)))
    pval = (1.0 + exceed) / (1.0 + n_permutations)
    # spread of the statistic under the permutation null
    se = float(null.std(ddof=1)) if null.size > 1 else 0.0
    return StatReport(obs, se, obs, na + nb, "energy-permutation", pval, seed,
                      {"n_permutations": n_permutations})


# ---------------------------------------------------------------------------
# multivariate normality

def mardia_normality(cloud) -> StatReport:
    """Mardia skewness and kurtosis; p_value is the Bonferroni minimum of the two.

    Skewness b1 = sum_rst m_rst^2 over third moments of the whitened sample
    (equal to the usual double sum, but O(N d^3)); kurtosis b2 = mean |y|^4.
    """
    x = _pts(cloud)
    n, d = x.shape
    if d > 8:
        raise ValueError("mardia_normality supports d <= 8")
    if n < 3:
        raise ValueError("need at least 3 points")
    xc = x - x.mean(axis=0)
    S = xc.T @ xc / n
    w, V = np.linalg.eigh(S)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise ValueError("sample covariance is singular")
    y = xc @ (V / np.sqrt(w))
    m3 = np.einsum("ni,nj,nk->ijk", y, y, y, optimize=True) / n
    b1 = float(np.sum(m3 * m3))
    b2 = float(np.mean(np.sum(y * y, axis=1) ** 2))
    skew_stat = n * b1 / 6.0
    dof = d * (d + 1) * (d + 2) / 6.0
    p_skew = float(stats.chi2.sf(skew_stat, dof))
    kurt_z = (b2 - d * (d + 2)) / math.sqrt(8.0 * d * (d + 2) / n)
    p_kurt = float(2.0 * stats.norm.sf(abs(kurt_z)))
    p = min(1.0, 2.0 * min(p_skew, p_kurt))
    seed = cloud.seed if isinstance(cloud, SampleCloud) else None
    return StatReport(b1, float("nan"), skew_stat, n, "mardia", p, seed,
                      {"b1": b1, "b2": b2, "skew_stat": skew_stat, "skew_p": p_skew,
                       "kurt_z": kurt_z, "kurt_p": p_kurt,
                       "b2_se": math.sqrt(8.0 * d * (d + 2) / n)})


# ---------------------------------------------------------------------------
# rate fits and histogram diagnostics

def fit_exponential_rate(times, values) -> StatReport:
    """OLS of ln(values) on times; estimate is the decay rate -slope.

    ``statistic`` is slope / std_error and ``p_value`` the two-sided t-test of
    a zero slope.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.size < 4:
        raise ValueError("need at least 4 matched (time, value) pairs")
    if np.any(v <= 0):
        raise ValueError("values must be positive")
    y = np.log(v)
    tc = t - t.mean()
    sxx = float(tc @ tc)
    if sxx == 0:
        raise ValueError("times must not all coincide")
    slope = float(tc @ (y - y.mean()) / sxx)
    resid = y - y.mean() - slope * tc
    dof = t.size - 2
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / sxx)
    if se > 0:
        tstat = slope / se
        p = float(2.0 * stats.t.sf(abs(tstat), dof))
    else:
        tstat = 0.0 if slope == 0 else math.copysign(math.inf, slope)
        p = 1.0 if slope == 0 else 0.0
    return StatReport(-slope, se, tstat, int(t.size), "log-linear-ols", p,
                      extra={"intercept": float(y.mean() - slope * t.mean())})


def histogram_tv(a, b) -> float:
    """Total-variation distance between histograms on shared Scott's-rule bins (trend use only)."""
    x, y = _pts(a), _pts(b)
    pooled = np.vstack([x, y])
    edges = [np.histogram_bin_edges(pooled[:, j], bins="scott") for j in range(pooled.shape[1])]
    hx, _ = np.histogramdd(x, bins=edges)
    hy, _ = np.histogramdd(y, bins=edges)
    return float(0.5 * np.abs(hx / len(x) - hy / len(y)).sum())
