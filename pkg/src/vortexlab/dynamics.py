"""Monte Carlo integration of the vortex SDE systems.

Variants
--------
ORIGINAL    dX^i = sqrt(2 nu) dW^i + sum_j a_j K(X^i - X^j) dt
RESCALED    dZ^i = sqrt(2 nu) dB^i + (sum_j a_j K(Z^i - Z^j) - Z^i / 2) dt
DIFFERENCE  dZ = 2 sqrt(nu) dB + (a K(Z) - Z / 2) dt        (a = a1 + a2)
REVERSED    dZ = 2 sqrt(nu) dB + (-a K(Z) - Z / 2) dt
OU          DIFFERENCE with a = 0

The last three are one effective particle (n = 1) carrying the scalar ``a``.

Scheme: the linear drift and the noise are integrated exactly (one-step
Ornstein-Uhlenbeck law); the kernel drift acts over the effective time
tau = 2 (e^{dt/2} - 1) so that ``e^{-dt/2} (z + tau D) = e^{-dt/2} z +
2 (1 - e^{-dt/2}) D``.  With ``scheme="rotation"`` (default) the kernel flow of
each pair is solved exactly, as a rotation about the pair's centre of
vorticity; ``scheme="explicit"`` uses the first-order update ``z + tau D(z)``.
Each pair rotation keeps that pair's distance, and for same-sign vorticities
the weighted energy sum |a_i| |z^i|^2 is left unchanged by the kernel step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from numba import njit, prange

from .kernel import TWO_PI, blend_phi, blend_phi_prime, k_eps, perp, rotation_rate, rotation_rate_sq
from .observables import FunctionalSample, Snapshot, lyapunov, pair_log
from .rng import BRIDGE, INIT, Streams, gaussian_pair, make_streams, uniform_triple

MODE_RESCALED = 0
MODE_REDUCED = 1
MODE_ORIGINAL = 2


class Variant(str, Enum):
    ORIGINAL = "original"
    RESCALED = "rescaled"
    DIFFERENCE = "difference"
    REVERSED = "reversed"
    OU = "ou"


REDUCED = (Variant.DIFFERENCE, Variant.REVERSED, Variant.OU)


class NumericalFailure(RuntimeError):
    """A coordinate became non-finite."""

    def __init__(self, replica, time):
        super().__init__(f"non-finite state in replica {replica} at t={time:.6g}")
        self.replica = replica
        self.time = time


@dataclass(frozen=True)
class SystemSpec:
    n: int
    a: tuple
    nu: float
    variant: Variant = Variant.RESCALED

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "a", tuple(float(x) for x in np.atleast_1d(self.a)))
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if len(self.a) != self.n:
            raise ValueError(f"vorticity list has {len(self.a)} entries but n={self.n}")
        if self.variant in REDUCED and self.n != 1:
            raise ValueError(f"{self.variant.value} is a one-particle system (n=1, a=a1+a2)")
        if self.variant is Variant.OU and self.a[0] != 0.0:
            raise ValueError("OU variant requires a = 0")

    @classmethod
    def two_vortex(cls, variant, a1, a2, nu):
        """Reduced system for the difference of two vortices."""
        variant = Variant(variant)
        return cls(1, (a1 + a2,), nu, variant)

    @property
    def reduced(self):
        return self.variant in REDUCED

    @property
    def drift_sign(self):
        return -1.0 if self.variant is Variant.REVERSED else 1.0

    @property
    def mode(self):
        if self.variant is Variant.ORIGINAL:
            return MODE_ORIGINAL
        return MODE_REDUCED if self.reduced else MODE_RESCALED

    @property
    def noise_scale(self):
        """Diffusion coefficient per coordinate: sqrt(2 nu) per particle, 2 sqrt(nu) for reduced systems."""
        return 2.0 * math.sqrt(self.nu) if self.reduced else math.sqrt(2.0 * self.nu)


@dataclass(frozen=True)
class SimParams:
    dt: float = 1e-3
    horizon: float = 1.0
    eps: float = 1e-2
    replicas: int = 1000
    master_seed: int = 0
    scheme: str = "rotation"
    t_trunc: float = 20.0

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        if self.dt > self.horizon * (1 + 1e-12):
            raise ValueError("dt must not exceed horizon")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.scheme not in ("rotation", "explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def steps(self, horizon=None):
        h = self.horizon if horizon is None else horizon
        return int(round(h / self.dt))

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class StateBatch:
    states: np.ndarray  # (M, n, 2)
    time: float
    streams: Streams
    step: int = 0

    @property
    def replicas(self):
        return self.states.shape[0]


# ---------------------------------------------------------------------------
# initial conditions

InitSampler = Callable[[SystemSpec, Streams], np.ndarray]


def _init_normals(spec, streams):
    g = streams.with_family(INIT).normals(2 * spec.n)
    return g.reshape(len(streams), spec.n, 2)


def point_mass(z0) -> InitSampler:
    z0 = np.asarray(z0, dtype=float).reshape(-1, 2)

    def sample(spec, streams):
        if z0.shape[0] != spec.n:
            raise ValueError("point mass has the wrong number of particles")
        return np.broadcast_to(z0, (len(streams), spec.n, 2)).copy()

    return sample


def product_gaussian(mean, var) -> InitSampler:
    """Independent N(mean^i, var I_2) particles; ``mean`` has shape (n, 2)."""
    mean = np.asarray(mean, dtype=float).reshape(-1, 2)

    def sample(spec, streams):
        return mean + math.sqrt(var) * _init_normals(spec, streams)

    return sample


def stationary() -> InitSampler:
    """N(0, 2 nu I_2n) for particle systems, N(0, 4 nu I_2) for reduced ones."""

    def sample(spec, streams):
        var = 4.0 * spec.nu if spec.reduced else 2.0 * spec.nu
        return math.sqrt(var) * _init_normals(spec, streams)

    return sample


# ---------------------------------------------------------------------------
# reference single steps (numpy)

def _step_noise(state, n):
    k = state.step
    g = state.streams.normals(2 * n, first_block=k * n)
    return g.reshape(state.replicas, n, 2)


def _rotation_factors(theta):
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-2
    th = np.where(small, 1.0, theta)
    t2 = theta * theta
    s = np.where(small, 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0), np.sin(th) / th)
    c = np.where(small, theta * (0.5 - t2 / 24.0 * (1.0 - t2 / 30.0)), (1.0 - np.cos(th)) / th)
    return s, c


def kernel_displacement(z, a, eps, tau, scheme="rotation", sign=1.0, reduced=False):
    """Per-particle displacement of the kernel flow over time ``tau``.

    Returns ``(disp, unit)`` where ``unit`` is the increment of the integral of
    K (without the vorticity factor) for reduced systems, else equal to ``disp``.
    """
    z = np.array(z, dtype=float)
    if reduced:
        d = z[:, 0, :]
        rho = np.hypot(d[:, 0], d[:, 1])
        if scheme == "explicit":
            unit = tau * k_eps(d, eps)
        else:
            g = _vec_rate(rho, eps)
            s, c = _rotation_factors(sign * a[0] * g * tau)
            unit = (g * tau)[:, None] * (s[:, None] * perp(d) - c[:, None] * d)
        unit = unit[:, None, :]
        return sign * a[0] * unit, unit
    n = z.shape[1]
    disp = np.zeros_like(z)
    if scheme == "explicit":
        for i in range(n):
            for j in range(i + 1, n):
                v = tau * k_eps(z[:, i] - z[:, j], eps)
                disp[:, i] += a[j] * v
                disp[:, j] -= a[i] * v
        return disp, disp
    cur = z.copy()
    for i in range(n):
        for j in range(i + 1, n):
            r = cur[:, i] - cur[:, j]
            g = _vec_rate(np.hypot(r[:, 0], r[:, 1]), eps)
            s, c = _rotation_factors((a[i] + a[j]) * g * tau)
            v = (g * tau)[:, None] * (s[:, None] * perp(r) - c[:, None] * r)
            cur[:, i] += a[j] * v
            cur[:, j] -= a[i] * v
    disp = cur - z
    return disp, disp


def _vec_rate(rho, eps):
    x = np.asarray(rho, dtype=float) / eps
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = blend_phi_prime(x) / (TWO_PI * rho * eps * blend_phi(x))
        return np.where(x >= 1.0, 1.0 / (TWO_PI * rho * rho), np.where(x <= 0.5, 0.0, mid))


def step_rescaled(state: StateBatch, spec: SystemSpec, params: SimParams, noise=None) -> StateBatch:
    """One exponential-integrator step of a confined (rescaled or reduced) system."""
    if spec.variant is Variant.ORIGINAL:
        raise ValueError("step_rescaled does not handle the ORIGINAL variant")
    dt = params.dt
    decay = math.exp(-dt / 2)
    tau = 2.0 * math.expm1(dt / 2)
    if noise is None:
        noise = _step_noise(state, spec.n)
    disp, _ = kernel_displacement(state.states, spec.a, params.eps, tau, params.scheme,
                                  spec.drift_sign, spec.reduced)
    sd = spec.noise_scale * math.sqrt(-math.expm1(-dt))
    z = decay * (state.states + disp) + sd * noise
    _check_finite(z, state.time + dt)
    return StateBatch(z, state.time + dt, state.streams, state.step + 1)


def step_original(state: StateBatch, spec: SystemSpec, params: SimParams, noise=None) -> StateBatch:
    """One step of the unconfined system: kernel flow over dt plus sqrt(2 nu dt) noise."""
    if spec.variant is not Variant.ORIGINAL:
        raise ValueError("step_original only handles the ORIGINAL variant")
    dt = params.dt
    if noise is None:
        noise = _step_noise(state, spec.n)
    disp, _ = kernel_displacement(state.states, spec.a, params.eps, dt, params.scheme)
    z = state.states + disp + math.sqrt(2.0 * spec.nu * dt) * noise
    _check_finite(z, state.time + dt)
    return StateBatch(z, state.time + dt, state.streams, state.step + 1)


def _check_finite(z, t):
    bad = ~np.isfinite(z).all(axis=(1, 2))
    if bad.any():
        raise NumericalFailure(int(np.argmax(bad)), t)


# ---------------------------------------------------------------------------
# fused integrator

@njit(cache=True, inline="always")
def _rot_factors(theta):
    # series error is below theta^6 / 5040, i.e. at rounding level for |theta| < 1e-2
    if abs(theta) < 1e-2:
        t2 = theta * theta
        return (1.0 - t2 / 6.0 * (1.0 - t2 / 20.0),
                theta * (0.5 - t2 / 24.0 * (1.0 - t2 / 30.0)))
    return math.sin(theta) / theta, (1.0 - math.cos(theta)) / theta


# Sub-step resolution of pair distances.  A rotational drift f(|d|) d^perp
# leaves |d| untouched, so the distance of a pair between two grid points
# follows the radial part of a 2D Brownian bridge (OU damping is O(dt) over a
# step and is ignored).  The endpoint angle is drawn from its conditional
# (von Mises) law and the bridge is refined dyadically where it can still
# undercut the running minimum.
_BRIDGE_NODE_BITS = 24
_BRIDGE_SPAN = 1 << (_BRIDGE_NODE_BITS + 2)
_BRIDGE_REL = 0.1
_BRIDGE_SIGMAS = 4.0


@njit(cache=True)
def _von_mises(kappa, k0, k1, rep, base):
    """Angle with density proportional to exp(kappa cos(phi)) (Best-Fisher)."""
    if kappa < 1e-8:
        u, _, _ = uniform_triple(k0, k1, BRIDGE, rep, base)
        return 2.0 * math.pi * u - math.pi
    if kappa > 1e6:
        g, _ = gaussian_pair(k0, k1, BRIDGE, rep, base)
        return g / math.sqrt(kappa)
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    for attempt in range(1000):
        u1, u2, u3 = uniform_triple(k0, k1, BRIDGE, rep, base + attempt)
        zc = math.cos(math.pi * u1)
        f = (1.0 + r * zc) / (r + zc)
        c = kappa * (r - f)
        if c * (2.0 - c) - u2 > 0.0 or (u2 > 0.0 and math.log(c / u2) + 1.0 - c >= 0.0):
            phi = math.acos(min(1.0, max(-1.0, f)))
            return phi if u3 >= 0.5 else -phi
    return 0.0


@njit(cache=True, inline="always")
def _segment_dist(ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    ee = ex * ex + ey * ey
    t = 0.0 if ee == 0.0 else min(1.0, max(0.0, -(ax * ex + ay * ey) / ee))
    px = ax + t * ex
    py = ay + t * ey
    return math.sqrt(px * px + py * py)


@njit(cache=True)
def _bridge_min(r0, r1, var, cur, k0, k1, rep, base):
    """min(cur, smallest radius of the bridge from radius r0 to r1); var is the
    per-coordinate variance accumulated over the step."""
    if not var > 0.0:
        return min(cur, r0, r1)
    if min(r0, r1) - _BRIDGE_SIGMAS * math.sqrt(var) >= cur:
        return cur
    phi = _von_mises(r0 * r1 / var, k0, k1, rep, base + (1 << _BRIDGE_NODE_BITS))
    sax = np.empty(2 * _BRIDGE_NODE_BITS + 2)
    say = np.empty_like(sax)
    sbx = np.empty_like(sax)
    sby = np.empty_like(sax)
    sv = np.empty_like(sax)
    sn = np.empty(sax.shape[0], dtype=np.int64)
    sax[0], say[0], sbx[0], sby[0], sv[0], sn[0] = r0, 0.0, r1 * math.cos(phi), r1 * math.sin(phi), var, 1
    sp = 1
    while sp > 0:
        sp -= 1
        ax, ay, bx, by, v, node = sax[sp], say[sp], sbx[sp], sby[sp], sv[sp], sn[sp]
        sd = math.sqrt(v)
        if sd <= _BRIDGE_REL * cur or node >= (1 << _BRIDGE_NODE_BITS):
            continue
        if _segment_dist(ax, ay, bx, by) - _BRIDGE_SIGMAS * sd >= cur:
            continue
        g0, g1 = gaussian_pair(k0, k1, BRIDGE, rep, base + node)
        mx = 0.5 * (ax + bx) + 0.5 * sd * g0
        my = 0.5 * (ay + by) + 0.5 * sd * g1
        rm = math.sqrt(mx * mx + my * my)
        if rm < cur:
            cur = rm
        # the half nearer the origin goes on top of the stack
        near_a = ax * ax + ay * ay < bx * bx + by * by
        for side in range(2):
            push_a_half = (side == 0) != near_a
            if push_a_half:
                sax[sp], say[sp], sbx[sp], sby[sp] = ax, ay, mx, my
                sn[sp] = 2 * node
            else:
                sax[sp], say[sp], sbx[sp], sby[sp] = mx, my, bx, by
                sn[sp] = 2 * node + 1
            sv[sp] = 0.5 * v
            sp += 1
    return cur


@njit(parallel=True, cache=True)
def _integrate(z, ib, ik, kf, mind, inv, a, nu, dt, nsteps, step0, eps, mode, sign, rotate,
               k0, k1, family, replicas, rec_steps, rec_z, rec_ib, rec_ik, rec_mind, rec_inv,
               fail):
    M, n, _ = z.shape
    nrec = rec_steps.shape[0]
    if mode == MODE_ORIGINAL:
        decay = 1.0
        tau = dt
        sd = math.sqrt(2.0 * nu * dt)
        ib_decay = 1.0
        ib_sd = math.sqrt(dt)
    else:
        decay = math.exp(-0.5 * dt)
        tau = 2.0 * math.expm1(0.5 * dt)
        ib_decay = decay
        ib_sd = math.sqrt(-math.expm1(-dt))
        if mode == MODE_REDUCED:
            sd = 2.0 * math.sqrt(nu) * ib_sd
        else:
            sd = math.sqrt(2.0 * nu) * ib_sd
    decay_f = math.exp(-0.5 * dt)
    # per-coordinate variance of a pair distance increment over one step
    pair_var = sd * sd if mode == MODE_REDUCED else 2.0 * sd * sd
    npairs = 1 if mode == MODE_REDUCED else n * (n - 1) // 2
    for m in prange(M):
        rep = replicas[m]
        zm = z[m]
        disp = np.zeros((n, 2))
        vx = np.zeros((n * n,))
        vy = np.zeros((n * n,))
        prev = np.empty(npairs)
        if mode == MODE_REDUCED:
            prev[0] = math.sqrt(zm[0, 0] * zm[0, 0] + zm[0, 1] * zm[0, 1])
        else:
            p = 0
            for i in range(n):
                for j in range(i + 1, n):
                    prev[p] = math.sqrt((zm[i, 0] - zm[j, 0]) ** 2 + (zm[i, 1] - zm[j, 1]) ** 2)
                    p += 1
        rec = 0
        wf = math.exp(-0.5 * step0 * dt)
        while rec < nrec and rec_steps[rec] == 0:
            rec_z[rec, m] = zm
            rec_ib[rec, m] = ib[m]
            rec_ik[rec, m] = ik[m]
            rec_mind[rec, m] = mind[m]
            rec_inv[rec, m] = inv[m]
            rec += 1
        for k in range(nsteps):
            step = step0 + k
            if k > 0:
                wf *= decay_f
            for i in range(n):
                disp[i, 0] = 0.0
                disp[i, 1] = 0.0
            if mode == MODE_REDUCED:
                x = zm[0, 0]
                y = zm[0, 1]
                rho = math.sqrt(x * x + y * y)
                if rho > 0.0:
                    inv[m, 0] += wf * dt / rho
                    inv[m, 1] += dt / rho
                g = rotation_rate(rho, eps)
                if rotate:
                    s, c = _rot_factors(sign * a[0] * g * tau)
                    ux = g * tau * (-s * y - c * x)
                    uy = g * tau * (s * x - c * y)
                else:
                    ux = -g * tau * y
                    uy = g * tau * x
                disp[0, 0] = sign * a[0] * ux
                disp[0, 1] = sign * a[0] * uy
                ikx = decay * ux
                iky = decay * uy
                ik[m, 0, 0] = decay * ik[m, 0, 0] + ikx
                ik[m, 0, 1] = decay * ik[m, 0, 1] + iky
                kf[m, 0, 0] += wf * ikx
                kf[m, 0, 1] += wf * iky
            else:
                if rotate:
                    # sequential exact pair rotations
                    for i in range(n):
                        for j in range(i + 1, n):
                            rx = zm[i, 0] + disp[i, 0] - zm[j, 0] - disp[j, 0]
                            ry = zm[i, 1] + disp[i, 1] - zm[j, 1] - disp[j, 1]
                            g = rotation_rate_sq(rx * rx + ry * ry, eps)
                            s, c = _rot_factors((a[i] + a[j]) * g * tau)
                            px = g * tau * (-s * ry - c * rx)
                            py = g * tau * (s * rx - c * ry)
                            disp[i, 0] += a[j] * px
                            disp[i, 1] += a[j] * py
                            disp[j, 0] -= a[i] * px
                            disp[j, 1] -= a[i] * py
                else:
                    for i in range(n):
                        for j in range(i + 1, n):
                            rx = zm[i, 0] - zm[j, 0]
                            ry = zm[i, 1] - zm[j, 1]
                            g = rotation_rate_sq(rx * rx + ry * ry, eps)
                            vx[i * n + j] = -g * tau * ry
                            vy[i * n + j] = g * tau * rx
                    for i in range(n):
                        for j in range(i + 1, n):
                            disp[i, 0] += a[j] * vx[i * n + j]
                            disp[i, 1] += a[j] * vy[i * n + j]
                            disp[j, 0] -= a[i] * vx[i * n + j]
                            disp[j, 1] -= a[i] * vy[i * n + j]
                for i in range(n):
                    ik[m, i, 0] = decay * (ik[m, i, 0] + disp[i, 0])
                    ik[m, i, 1] = decay * (ik[m, i, 1] + disp[i, 1])
                    kf[m, i, 0] += wf * decay * disp[i, 0]
                    kf[m, i, 1] += wf * decay * disp[i, 1]
            finite = True
            for i in range(n):
                g0, g1 = gaussian_pair(k0, k1, family, rep, step * n + i)
                zm[i, 0] = decay * (zm[i, 0] + disp[i, 0]) + sd * g0
                zm[i, 1] = decay * (zm[i, 1] + disp[i, 1]) + sd * g1
                ib[m, i, 0] = ib_decay * ib[m, i, 0] + ib_sd * g0
                ib[m, i, 1] = ib_decay * ib[m, i, 1] + ib_sd * g1
                if not (math.isfinite(zm[i, 0]) and math.isfinite(zm[i, 1])):
                    finite = False
            if not finite:
                fail[m] = step + 1
                break
            if mode == MODE_REDUCED:
                d = math.sqrt(zm[0, 0] * zm[0, 0] + zm[0, 1] * zm[0, 1])
                mind[m] = _bridge_min(prev[0], d, pair_var, min(mind[m], d), k0, k1, rep,
                                      step * _BRIDGE_SPAN)
                prev[0] = d
            else:
                p = 0
                for i in range(n):
                    for j in range(i + 1, n):
                        dx = zm[i, 0] - zm[j, 0]
                        dy = zm[i, 1] - zm[j, 1]
                        d = math.sqrt(dx * dx + dy * dy)
                        mind[m] = _bridge_min(prev[p], d, pair_var, min(mind[m], d), k0, k1, rep,
                                              (step * npairs + p) * _BRIDGE_SPAN)
                        prev[p] = d
                        p += 1
            while rec < nrec and rec_steps[rec] == k + 1:
                rec_z[rec, m] = zm
                rec_ib[rec, m] = ib[m]
                rec_ik[rec, m] = ik[m]
                rec_mind[rec, m] = mind[m]
                rec_inv[rec, m] = inv[m]
                rec += 1


def _min_distance(z, reduced):
    if reduced:
        return np.hypot(z[:, 0, 0], z[:, 0, 1])
    n = z.shape[1]
    out = np.full(z.shape[0], np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            d = z[:, i] - z[:, j]
            out = np.minimum(out, np.hypot(d[:, 0], d[:, 1]))
    return out


def simulate(spec: SystemSpec, init: InitSampler, params: SimParams,
             observers: Sequence = (), record_times: Sequence[float] = (),
             streams: Streams | None = None):
    """Integrate from 0 to ``params.horizon``.

    Observers expose ``times`` and ``observe(snapshot, spec)``; they are called
    with the state at each of their times.  ``record_times`` adds snapshots to
    the returned sample without an observer.  Returns ``(StateBatch,
    FunctionalSample)``.
    """
    if streams is None:
        streams = make_streams(params.master_seed, params.replicas)
    nsteps = params.steps()
    z = np.ascontiguousarray(init(spec, streams), dtype=float)
    if z.shape != (len(streams), spec.n, 2):
        raise ValueError(f"initial condition has shape {z.shape}")
    z0 = z.copy()
    wanted = set(round(float(t) / params.dt) for t in record_times)
    for obs in observers:
        wanted.update(round(float(t) / params.dt) for t in obs.times)
    if any(s < 0 or s > nsteps for s in wanted):
        raise ValueError("record time outside [0, horizon]")
    rec_steps = np.array(sorted(wanted), dtype=np.int64)
    M, n = z.shape[:2]
    ib = np.zeros_like(z)
    ik = np.zeros_like(z)
    kf = np.zeros_like(z)
    mind = _min_distance(z, spec.reduced) if (spec.reduced or n > 1) else np.full(M, np.inf)
    nrec = len(rec_steps)
    rec_z = np.empty((nrec, M, n, 2))
    rec_ib = np.empty((nrec, M, n, 2))
    rec_ik = np.empty((nrec, M, n, 2))
    rec_mind = np.empty((nrec, M))
    inv = np.zeros((M, 2))
    rec_inv = np.empty((nrec, M, 2))
    fail = np.zeros(M, dtype=np.int64)
    k0, k1 = streams.key
    _integrate(z, ib, ik, kf, mind, inv, np.asarray(spec.a, dtype=float), spec.nu, params.dt, nsteps,
               0, params.eps, spec.mode, spec.drift_sign, params.scheme == "rotation",
               k0, k1, np.uint64(streams.family), streams.replicas, rec_steps,
               rec_z, rec_ib, rec_ik, rec_mind, rec_inv, fail)
    if fail.any():
        m = int(np.argmax(fail > 0))
        raise NumericalFailure(m, fail[m] * params.dt)
    horizon = nsteps * params.dt
    records = {}
    for r, s in enumerate(rec_steps):
        records[round(s * params.dt, 12)] = Snapshot(s * params.dt, rec_z[r], rec_ib[r],
                                                     rec_ik[r], rec_mind[r], rec_inv[r])
    for obs in observers:
        for t in obs.times:
            obs.observe(records[round(round(float(t) / params.dt) * params.dt, 12)], spec)
    sample = FunctionalSample(
        time=horizon,
        R=lyapunov(z, spec.a),
        M=pair_log(z, spec.a, strict=False) if n > 1 else np.zeros(M),
        IB=ib, IK=ik, kernel_fwd=kf, min_dist=mind, nu=spec.nu, z0=z0, inv_radius=inv,
        records=records,
    )
    return StateBatch(z, horizon, streams, nsteps), sample


# ---------------------------------------------------------------------------
# exact radius sampler

def cir_exact_transition(r0, t, nu, stream):
    """Exact draw of |Z_t|^2 given |Z_0|^2 = r0 for the reduced systems.

    The squared radius solves dR = 4 sqrt(nu R) dbeta + (8 nu - R) dt, whose
    transition is a scaled noncentral chi-square with 2 degrees of freedom:
    R_t = c |(sqrt(lam), 0) + N(0, I_2)|^2 with c = 4 nu (1 - e^{-t}),
    lam = r0 e^{-t} / c.  ``stream`` is a ``Streams`` (one draw per replica) or
    a numpy Generator.
    """
    r0 = np.asarray(r0, dtype=float)
    if not t > 0:
        raise ValueError("t must be positive")
    if np.any(r0 < 0):
        raise ValueError("r0 must be non-negative")
    if isinstance(stream, Streams):
        g = stream.normals(2)
        r0 = np.broadcast_to(r0, (len(stream),))
    else:
        g = stream.standard_normal(np.shape(r0) + (2,)) if r0.ndim else stream.standard_normal(2)
    c = -4.0 * nu * math.expm1(-t)
    mean_norm = np.sqrt(r0 * math.exp(-t) / c)
    return c * ((mean_norm + g[..., 0]) ** 2 + g[..., 1] ** 2)
