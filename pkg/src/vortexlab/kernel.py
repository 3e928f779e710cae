"""Biot-Savart kernel, its smoothed version, and the stationarity defect.

Points of the plane are arrays whose last axis has length 2; every function
broadcasts over leading axes.  The smoothed kernel is

    K_eps(z) = (1 / 2 pi) * phi_eps'(|z|) / phi_eps(|z|) * z_perp / |z|,

with ``phi_eps(r) = eps * phi(r / eps)`` and ``phi`` a C2 blend between the
constant 1/2 (for r <= 1/2) and the identity (for r >= 1).
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


def perp(z):
    """Rotate by +90 degrees: (x1, x2) -> (-x2, x1)."""
    z = np.asarray(z, dtype=float)
    return np.stack([-z[..., 1], z[..., 0]], axis=-1)


def biot_savart(z):
    """Exact kernel ``z_perp / (2 pi |z|^2)``; raises ValueError at the origin."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    if np.any(r2 == 0.0):
        raise ValueError("Biot-Savart kernel is singular at z = 0")
    return perp(z) / (TWO_PI * r2[..., None])


def _smoothstep(s):
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def blend_phi(r):
    """The profile ``phi``: 1/2 on [0, 1/2], r on [1, inf), quintic blend between."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("blend_phi needs r >= 0")
    s = np.clip(2.0 * r - 1.0, 0.0, 1.0)
    mid = r + (0.5 - r) * (1.0 - _smoothstep(s))
    out = np.where(r <= 0.5, 0.5, np.where(r >= 1.0, r, mid))
    return out[()] if out.ndim == 0 else out


def blend_phi_prime(r):
    """Derivative of ``blend_phi``; equals ``S(s) + s S'(s)`` with s = 2r - 1 on the blend."""
    r = np.asarray(r, dtype=float)
    s = np.clip(2.0 * r - 1.0, 0.0, 1.0)
    mid = s * s * s * (40.0 + s * (-75.0 + 36.0 * s))
    out = np.where(r <= 0.5, 0.0, np.where(r >= 1.0, 1.0, mid))
    return out[()] if out.ndim == 0 else out


@njit(cache=True, inline="always")
def rotation_rate(rho, eps):
    """g(rho) with K_eps(z) = g(|z|) * z_perp.  Zero inside eps / 2."""
    x = rho / eps
    if x <= 0.5:
        return 0.0
    if x >= 1.0:
        return 1.0 / (TWO_PI * rho * rho)
    s = 2.0 * x - 1.0
    ss = s * s * s
    phi = x + (0.5 - x) * (1.0 - ss * (10.0 + s * (-15.0 + 6.0 * s)))
    dphi = ss * (40.0 + s * (-75.0 + 36.0 * s))
    return dphi / (TWO_PI * rho * eps * phi)


@njit(cache=True, inline="always")
def rotation_rate_sq(rho2, eps):
    """``rotation_rate`` from the squared radius; avoids the square root outside the blend zone."""
    e2 = eps * eps
    if rho2 >= e2:
        return 1.0 / (TWO_PI * rho2)
    if rho2 <= 0.25 * e2:
        return 0.0
    return rotation_rate(math.sqrt(rho2), eps)


def k_eps(z, eps):
    """Smoothed kernel; coincides with ``biot_savart`` for |z| >= eps, vanishes for |z| <= eps/2."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    z = np.asarray(z, dtype=float)
    rho2 = np.sum(z * z, axis=-1)
    rho = np.sqrt(rho2)
    x = rho / eps
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = blend_phi_prime(x) / (eps * blend_phi(x))
        # same expression as biot_savart so the two agree bit for bit outside eps
        g = np.where(x <= 0.5, 0.0, ratio / (TWO_PI * rho))
        out = np.where((x >= 1.0)[..., None], perp(z) / (TWO_PI * rho2[..., None]),
                       g[..., None] * perp(z))
    return out


def pairwise_drift(z, a, eps=None):
    """Kernel drift ``sum_{j != i} a_j K(z^i - z^j)`` for every particle.

    ``z`` has shape (..., n, 2).  Uses the exact kernel when ``eps`` is None.
    """
    z = np.asarray(z, dtype=float)
    a = np.asarray(a, dtype=float)
    n = z.shape[-2]
    out = np.zeros_like(z)
    for i in range(n):
        for j in range(i + 1, n):
            d = z[..., i, :] - z[..., j, :]
            k = biot_savart(d) if eps is None else k_eps(d, eps)
            out[..., i, :] += a[j] * k
            out[..., j, :] -= a[i] * k
    return out


def stationarity_defect(z, a, nu):
    """``L* p_inf / p_inf`` at z, i.e. (1/2nu) sum_{i != j} a_j K(z^i - z^j) . z^i.

    Vanishes identically when all vorticities are equal.
    """
    z = np.asarray(z, dtype=float)
    drift = pairwise_drift(z, a)
    return np.sum(drift * z, axis=(-2, -1)) / (2.0 * nu)
