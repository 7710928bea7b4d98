"""One-dimensional reaction-diffusion systems and position control of
traveling waves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.interpolate
import scipy.optimize

from .errors import (Ambiguous, BadParameter, BadRoots, NonFinite, NoPulse, NotConverged,
                     RankDeficientAtNode, StabilityViolated, ZeroCoupling)
from .numerics import TimeGrid
from .systems import AffineSystem, builtin_system

STABILITY_SAFETY = 0.4


@dataclass(frozen=True)
class RDGrid:
    """``N`` nodes on [0, L). Periodic nodes sit at i*dx, Neumann nodes at
    cell centres (i + 1/2)*dx with mirrored ghost cells."""

    L: float
    N: int
    bc: str = "periodic"

    def __post_init__(self):
        if self.N < 16:
            raise BadParameter("RDGrid needs at least 16 nodes")
        if not self.L > 0:
            raise BadParameter("RDGrid needs L > 0")
        if self.bc not in ("periodic", "neumann"):
            raise BadParameter(f"unknown boundary condition '{self.bc}'")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def r(self) -> np.ndarray:
        off = 0.0 if self.bc == "periodic" else 0.5
        return (np.arange(self.N) + off) * self.dx

    def laplacian(self, X: np.ndarray) -> np.ndarray:
        """Second-order stencil along axis 0."""
        if self.bc == "periodic":
            left, right = np.roll(X, 1, axis=0), np.roll(X, -1, axis=0)
        else:
            left = np.concatenate([X[:1], X[:-1]], axis=0)
            right = np.concatenate([X[1:], X[-1:]], axis=0)
        return (left - 2.0 * X + right) / self.dx ** 2

    def gradient(self, X: np.ndarray) -> np.ndarray:
        """Central difference along axis 0 (one-sided at Neumann walls)."""
        if self.bc == "periodic":
            return (np.roll(X, -1, axis=0) - np.roll(X, 1, axis=0)) / (2 * self.dx)
        return np.gradient(X, self.dx, axis=0)

    def stable_dt(self, D_max: float) -> float:
        return STABILITY_SAFETY * self.dx ** 2 / D_max if D_max > 0 else math.inf


@dataclass(frozen=True)
class RDSystem:
    """Kinetics and coupling of ``base`` plus diagonal diffusion ``D`` and an
    actuation mask ``chi`` (shape n, or N x n)."""

    base: AffineSystem
    D: np.ndarray
    chi: np.ndarray | None = None

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if D.shape != (self.base.n, self.base.n) or np.any(D != np.diag(np.diag(D))):
            raise BadParameter("D must be a diagonal n x n matrix")
        if np.any(np.diag(D) < 0):
            raise BadParameter("diffusion coefficients must be non-negative")
        object.__setattr__(self, "D", D)
        chi = np.ones(self.base.n) if self.chi is None else np.asarray(self.chi, dtype=float)
        if not np.all((chi == 0) | (chi == 1)):
            raise BadParameter("actuation mask entries must be 0 or 1")
        object.__setattr__(self, "chi", chi)

    @property
    def diffusion(self) -> np.ndarray:
        return np.diag(self.D)

    def kinetics(self, X: np.ndarray) -> np.ndarray:
        """R at every node; X has shape N x n."""
        try:
            out = np.asarray(self.base.R(X.T), dtype=float)
            if out.shape == (self.base.n, X.shape[0]):
                return out.T
        except (ValueError, TypeError):
            pass
        return np.array([self.base.R(x) for x in X])

    def coupling(self, X: np.ndarray) -> np.ndarray:
        """B at every node, shape N x n x p."""
        n, p = self.base.n, self.base.p
        try:
            out = np.asarray(self.base.B(X.T), dtype=float)
            if out.shape == (n, p, X.shape[0]):
                return np.moveaxis(out, -1, 0)
        except (ValueError, TypeError):
            pass
        return np.array([self.base.B(x) for x in X])

    def mask(self, N: int) -> np.ndarray:
        return np.broadcast_to(self.chi, (N, self.base.n))

    def rhs(self, grid: RDGrid, X: np.ndarray, U: np.ndarray | None) -> np.ndarray:
        out = grid.laplacian(X) * self.diffusion + self.kinetics(X)
        if U is not None:
            out = out + self.mask(grid.N) * np.einsum("kij,kj->ki", self.coupling(X), U)
        return out


@dataclass(frozen=True)
class SpaceTimeField:
    """Samples ``values[k, i, j]`` at time t[k], node r[i], component j."""

    t: np.ndarray
    r: np.ndarray
    values: np.ndarray

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation in time."""
        k = int(np.clip(np.searchsorted(self.t, t) - 1, 0, self.t.size - 2))
        t0, t1 = self.t[k], self.t[k + 1]
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def component(self, j: int) -> np.ndarray:
        return self.values[:, :, j]


def rd_integrate(system: RDSystem, grid: RDGrid, u, state0, tspan: TimeGrid,
                 store_every: int = 1) -> SpaceTimeField:
    """Method of lines with the second-order Laplacian and classical RK4.

    ``u`` is None, a SpaceTimeField on ``tspan`` (linear in time between
    samples) or a callable ``u(t) -> N x p``.
    """
    dt = tspan.dt
    limit = grid.stable_dt(float(np.max(system.diffusion)))
    if dt > limit * (1 + 1e-12):
        raise StabilityViolated(f"dt={dt:.4g} exceeds the explicit bound {limit:.4g}")
    n = system.base.n
    X = np.asarray(state0, dtype=float).reshape(grid.N, n).copy()
    if u is None:
        control = lambda t: None
    elif isinstance(u, SpaceTimeField):
        control = u.at
    else:
        control = u
    times = tspan.t
    keep = [0]
    out = [X.copy()]
    f = lambda t, Y: system.rhs(grid, Y, control(t))
    for k in range(tspan.steps):
        t = times[k]
        k1 = f(t, X)
        k2 = f(t + 0.5 * dt, X + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, X + 0.5 * dt * k2)
        k4 = f(t + dt, X + dt * k3)
        X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (k + 1) % store_every == 0 or k + 1 == tspan.steps:
            if not np.all(np.isfinite(X)):
                raise NonFinite(f"field became non-finite at t={times[k + 1]:.6g}")
            keep.append(k + 1)
            out.append(X.copy())
    return SpaceTimeField(times[keep], grid.r, np.array(out))


# Wave profiles ------------------------------------------------------------------


@dataclass(frozen=True)
class WaveProfile:
    """Profile X_c(xi) with speed c; ``period`` is set for periodic domains."""

    xi: np.ndarray
    values: np.ndarray
    c: float
    interpolant: Callable
    derivative: Callable
    second: Callable
    period: float | None = None

    def __call__(self, xi) -> np.ndarray:
        return self.interpolant(self._wrap(xi))

    def d(self, xi) -> np.ndarray:
        return self.derivative(self._wrap(xi))

    def dd(self, xi) -> np.ndarray:
        return self.second(self._wrap(xi))

    def _wrap(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.period is None:
            return xi
        lo = self.xi[0]
        return lo + np.mod(xi - lo, self.period)


def schloegl_front(k: float, x0: float, x1: float, x2: float, D: float) -> WaveProfile:
    """Analytic tanh front joining x2 (xi -> -inf) to x0 (xi -> +inf)."""
    if not (0 < x0 < x1 < x2):
        raise BadRoots("roots must satisfy 0 < x0 < x1 < x2")
    if k <= 0 or D <= 0:
        raise BadParameter("k and D must be positive")
    q = math.sqrt(k / D) * (x2 - x0) / (2.0 * math.sqrt(2.0))
    mid, half = 0.5 * (x0 + x2), 0.5 * (x0 - x2)
    c = math.sqrt(D * k / 2.0) * (x0 + x2 - 2.0 * x1)

    def X(xi):
        return mid + half * np.tanh(q * np.asarray(xi, dtype=float))

    def dX(xi):
        return half * q / np.cosh(q * np.asarray(xi, dtype=float)) ** 2

    def ddX(xi):
        z = q * np.asarray(xi, dtype=float)
        return -2.0 * half * q ** 2 * np.tanh(z) / np.cosh(z) ** 2

    xi = np.linspace(-30.0 / q, 30.0 / q, 2001)
    return WaveProfile(xi, X(xi)[:, None], c, lambda s: X(s)[..., None],
                       lambda s: dX(s)[..., None], lambda s: ddX(s)[..., None])


def schloegl_rd(params=None, D: float = 1.0) -> RDSystem:
    return RDSystem(builtin_system("schloegl-kinetics", params), np.array([[D]]))


def fhn_pulse_system(a0: float = 0.429, a1: float = 0.0, a2: float = 0.33) -> AffineSystem:
    """Activator-controlled FHN kinetics with R(x, y) = 3y - y^3 - x."""

    def R(x):
        return np.array([a0 + a1 * x[0] + a2 * x[1], 3.0 * x[1] - x[1] ** 3 - x[0]])

    def gradR(x):
        return np.array([[a1, a2], [-1.0, 3.0 - 3.0 * x[1] ** 2]])

    def B(x):
        one = np.ones_like(np.asarray(x[0], dtype=float))
        return np.array([[0.0 * one], [one]])

    return AffineSystem(2, 1, R, B, gradR, lambda x: np.zeros((2, 1, 2)), "fhn-pulse",
                        {"a0": a0, "a1": a1, "a2": a2})


def fhn_rd(a0=0.429, a1=0.0, a2=0.33, Dx=0.3, Dy=1.0) -> RDSystem:
    return RDSystem(fhn_pulse_system(a0, a1, a2), np.diag([Dx, Dy]))


def _fourier_shift(X: np.ndarray, s: float, L: float) -> np.ndarray:
    """Periodic translation X(r) -> X(r - s) along axis 0."""
    k = 2 * np.pi * np.fft.fftfreq(X.shape[0], d=L / X.shape[0])
    phase = np.exp(-1j * k * s)
    return np.real(np.fft.ifft(np.fft.fft(X, axis=0) * phase[:, None], axis=0))


def _spectral_derivative(X: np.ndarray, L: float) -> np.ndarray:
    k = 2 * np.pi * np.fft.fftfreq(X.shape[0], d=L / X.shape[0])
    return np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(X, axis=0), axis=0))


def _align(prev: np.ndarray, cur: np.ndarray, L: float) -> float:
    """Shift s with cur ~ prev(r - s): best whole-cell roll, then a bounded
    sub-cell refinement."""
    N = prev.shape[0]
    dx = L / N
    # circular cross-correlation over all rolls
    corr = np.real(np.fft.ifft(np.sum(np.conj(np.fft.fft(prev, axis=0)) * np.fft.fft(cur, axis=0),
                                      axis=1)))
    j = int(np.argmax(corr))
    guess = (j if j <= N // 2 else j - N) * dx
    err = lambda s: float(np.sum((_fourier_shift(prev, s, L) - cur) ** 2))
    res = scipy.optimize.minimize_scalar(err, bounds=(guess - dx, guess + dx), method="bounded",
                                         options={"xatol": 1e-10 * dx})
    return float(res.x)


def profile_residual(profile_values: np.ndarray, c: float, system: RDSystem,
                     grid: RDGrid) -> np.ndarray:
    """D X'' + c X' + R(X) on the grid: stencil Laplacian, spectral X'."""
    X = profile_values
    dX = _spectral_derivative(X, grid.L)
    return grid.laplacian(X) * system.diffusion + c * dX + system.kinetics(X)


def fhn_wave_profile(system: RDSystem | None = None, grid: RDGrid | None = None,
                     check_every: float = 10.0, tol: float = 1e-6,
                     t_max: float = 3000.0) -> WaveProfile:
    """Pulse profile from a long uncontrolled run on a periodic domain.

    The seed is a super-threshold activator bump of width 10 with a refractory
    inhibitor strip behind it, so a single pulse travels to the right. The
    run stops when the shape, aligned by an optimal sub-grid shift, changes by
    less than ``tol`` between checks.
    """
    system = fhn_rd() if system is None else system
    grid = RDGrid(150.0, 1024) if grid is None else grid
    if grid.bc != "periodic":
        raise BadParameter("pulse extraction needs a periodic grid")
    p = system.base.params
    y_rest = -p["a0"] / p["a2"] if p.get("a1", 0.0) == 0 else None
    if y_rest is None:
        rest = scipy.optimize.fsolve(lambda z: system.base.R(z), np.array([-1.0, -1.0]))
    else:
        rest = np.array([3.0 * y_rest - y_rest ** 3, y_rest])
    r = grid.r
    X = np.tile(rest, (grid.N, 1))
    bump = (r >= 20.0) & (r < 30.0)
    X[bump, 1] = 2.0
    X[(r >= 10.0) & (r < 20.0), 0] = rest[0] + 3.0
    dt = grid.stable_dt(float(np.max(system.diffusion)))
    steps = max(int(math.ceil(check_every / dt)), 1)
    span = TimeGrid(0.0, check_every, steps)
    prev, shifts = None, []
    t = 0.0
    while t < t_max:
        X = rd_integrate(system, grid, None, X, span, store_every=steps).values[-1]
        t += check_every
        if np.ptp(X[:, 1]) < 1e-3:
            raise NoPulse("the seed decayed to the homogeneous state")
        if prev is not None:
            s = _align(prev, X, grid.L)
            shifts.append(s)
            change = np.max(np.abs(_fourier_shift(prev, s, grid.L) - X))
            if change < tol:
                break
        prev = X
    else:
        raise NotConverged(f"pulse shape still changing after t={t_max:g}")
    c = shifts[-1] / check_every
    centre = r[int(np.argmax(X[:, 1]))]
    Xc = _fourier_shift(X, grid.L / 2 - centre, grid.L)
    xi = r - grid.L / 2
    return _periodic_profile(xi, Xc, c, grid.L)


def _periodic_profile(xi, values, c, L) -> WaveProfile:
    xs = np.append(xi, xi[0] + L)
    vs = np.vstack([values, values[:1]])
    spline = scipy.interpolate.CubicSpline(xs, vs, bc_type="periodic", axis=0)
    return WaveProfile(np.asarray(xi), np.asarray(values), float(c), spline,
                       spline.derivative(1), spline.derivative(2), float(L))


def fhn_profile_residual(profile: WaveProfile, system: RDSystem, grid: RDGrid) -> np.ndarray:
    """Residual of the profile equation with the samples on ``grid``."""
    return profile_residual(profile.values, profile.c, system, grid)


# Protocols and control ---------------------------------------------------------------


@dataclass(frozen=True)
class Protocol:
    phi: Callable[[float], float]
    phidot: Callable[[float], float]


def uniform_protocol(c: float, phi0: float, t0: float = 0.0) -> Protocol:
    return Protocol(lambda t: phi0 + c * (t - t0), lambda t: c + 0.0 * t)


def smooth_sinusoidal_protocol(c: float, phi0: float, A: float, T: float,
                               t0: float = 0.0) -> Protocol:
    """phi = A0 + A sin(2 pi t / T + A1) with phi(t0) = phi0 and phi'(t0) = c."""
    w = 2.0 * math.pi / T
    ratio = c / (A * w)
    if abs(ratio) > 1:
        raise BadParameter("amplitude too small to start with the free speed")
    A1 = math.acos(ratio) - w * t0
    A0 = phi0 - A * math.sin(w * t0 + A1)
    return Protocol(lambda t: A0 + A * np.sin(w * t + A1), lambda t: A * w * np.cos(w * t + A1))


def drifting_sinusoidal_protocol(c: float, A: float, T: float, phi0: float = 0.0,
                                 t0: float = 0.0) -> Protocol:
    """phi = phi0 + c (t - t0) + A sin(2 pi (t - t0) / T)."""
    w = 2.0 * math.pi / T
    return Protocol(lambda t: phi0 + c * (t - t0) + A * np.sin(w * (t - t0)),
                    lambda t: c + A * w * np.cos(w * (t - t0)))


@dataclass(frozen=True)
class PositionControl:
    """Control field as a function of time plus, for the FHN recipe, the
    correction x_hat to the desired inhibitor."""

    u: Callable[[float], np.ndarray]
    x_hat: SpaceTimeField | None
    profile: WaveProfile
    protocol: Protocol

    def desired(self, r: np.ndarray, t: float) -> np.ndarray:
        base = np.array(self.profile(r - self.protocol.phi(t)))
        if self.x_hat is not None:
            base[:, 0] += self.x_hat.at(t)[:, 0]
        return base


def position_control_signal(profile: WaveProfile, protocol: Protocol, recipe: str, grid: RDGrid,
                            tspan: TimeGrid, system: RDSystem | None = None) -> PositionControl:
    """Open-loop control moving a traveling wave along ``protocol``.

    schloegl-multiplicative: u = (c - phi') X_c'(r - phi) / B(X_c(r - phi))
    fhn-activator:           u = (c - phi') Y_c'(r - phi) + x_hat, with x_hat
    from x_hat_t = Dx x_hat_rr + a1 x_hat - (c - phi') X_c'(r - phi), x_hat(t0) = 0.
    """
    r, c = grid.r, profile.c
    if recipe == "schloegl-multiplicative":
        system = schloegl_rd() if system is None else system
        shifted = lambda t: profile(r - protocol.phi(t)).reshape(grid.N, 1)
        B = system.coupling(shifted(tspan.t0))[:, 0, 0]
        Xprobe = profile(profile.xi).reshape(-1, 1)
        if np.any(system.coupling(Xprobe)[:, 0, 0] == 0.0) or np.any(B == 0.0):
            raise ZeroCoupling("the coupling vanishes along the profile")

        def u(t):
            s = r - protocol.phi(t)
            X = profile(s).reshape(grid.N, 1)
            b = system.coupling(X)[:, 0, 0]
            return (c - protocol.phidot(t)) * profile.d(s) / b[:, None]

        return PositionControl(u, None, profile, protocol)
    if recipe == "fhn-activator":
        system = fhn_rd() if system is None else system
        p = system.base.params
        Dx = float(system.diffusion[0])
        lin = AffineSystem(1, 1, lambda x: p["a1"] * x, lambda x: np.ones((1, 1) + np.shape(x)[1:]),
                           lambda x: np.array([[p["a1"]]]), lambda x: np.zeros((1, 1, 1)),
                           "x-hat", {})
        hat_sys = RDSystem(lin, np.array([[Dx]]))
        hat_grid = RDGrid(grid.L, grid.N, "periodic")

        def forcing(t):
            s = r - protocol.phi(t)
            return (-(c - protocol.phidot(t)) * profile.d(s)[:, 0]).reshape(grid.N, 1)

        x_hat = rd_integrate(hat_sys, hat_grid, forcing, np.zeros(grid.N), tspan)

        def u(t):
            s = r - protocol.phi(t)
            return ((c - protocol.phidot(t)) * profile.d(s)[:, 1]).reshape(grid.N, 1) + x_hat.at(t)

        return PositionControl(u, x_hat, profile, protocol)
    raise BadParameter(f"unknown recipe '{recipe}'")


def measure_position(snapshot: np.ndarray, component: int, method: str, grid: RDGrid,
                     previous: float | None = None) -> float:
    """Grid argmax of |d x/dr| (steepest-slope) or of x (max), refined by a
    parabola through three nodes and unwrapped against ``previous``."""
    X = np.asarray(snapshot, dtype=float)
    x = X[:, component] if X.ndim == 2 else X
    if method == "steepest-slope":
        stat = np.abs(grid.gradient(x))
    elif method == "max":
        stat = x
    else:
        raise BadParameter(f"unknown position method '{method}'")
    i = int(np.argmax(stat))
    N = grid.N
    # a second local maximum of nearly the same height makes the answer ambiguous
    periodic = grid.bc == "periodic"
    left = np.roll(stat, 1) if periodic else np.r_[-np.inf, stat[:-1]]
    right = np.roll(stat, -1) if periodic else np.r_[stat[1:], -np.inf]
    peaks = np.flatnonzero((stat >= left) & (stat > right))
    dist = np.abs(peaks - i)
    if periodic:
        dist = np.minimum(dist, N - dist)
    others = stat[peaks[dist > 2]]
    span = stat[i] - np.min(stat)
    if others.size and span > 0 and np.max(others) >= stat[i] - 0.01 * span:
        raise Ambiguous("two candidate positions within 1%")
    if periodic:
        ym, y0, yp = stat[(i - 1) % N], stat[i], stat[(i + 1) % N]
    elif 0 < i < N - 1:
        ym, y0, yp = stat[i - 1], stat[i], stat[i + 1]
    else:
        ym = y0 = yp = 0.0
    den = ym - 2.0 * y0 + yp
    delta = 0.5 * (ym - yp) / den if den != 0 else 0.0
    pos = grid.r[i] + delta * grid.dx
    if periodic and previous is not None:
        pos += grid.L * round((previous - pos) / grid.L)
    return float(pos)


def rds_synthesize_control(system: RDSystem, x_d: SpaceTimeField, grid: RDGrid,
                           xt: np.ndarray | None = None, lap: np.ndarray | None = None
                           ) -> SpaceTimeField:
    """u = B+ (x_d_t - D lap x_d - R(x_d)) node by node, zero where chi = 0.

    ``xt`` and ``lap`` optionally supply exact time derivatives and Laplacians
    (same shape as x_d.values); otherwise centred differences in time and the
    grid stencil are used.
    """
    V = x_d.values
    if xt is None:
        xt = np.gradient(V, x_d.t, axis=0, edge_order=2)
    n, p = system.base.n, system.base.p
    out = np.zeros(V.shape[:2] + (p,))
    mask = system.mask(grid.N)
    for k in range(V.shape[0]):
        X = V[k]
        L_ = grid.laplacian(X) if lap is None else lap[k]
        resid = xt[k] - L_ * system.diffusion - system.kinetics(X)
        Bk = system.coupling(X)
        for i in range(grid.N):
            active = mask[i] != 0
            if not np.any(active):
                continue
            Bi = Bk[i][active]
            s = np.linalg.svd(Bi, compute_uv=False)
            if s.size == 0 or s[-1] <= 1e-12 * max(s[0], 1.0) or Bi.shape[0] < p:
                raise RankDeficientAtNode(f"coupling loses rank at node {i}, t={x_d.t[k]:.6g}")
            out[k, i] = np.linalg.lstsq(Bi, resid[i][active], rcond=None)[0]
    return SpaceTimeField(x_d.t, x_d.r, out)
