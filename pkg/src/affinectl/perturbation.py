"""Singular perturbation solution of optimal tracking for planar systems

    x' = a0 + a1 x + a2 y,    y' = R(x, y) + b(x, y) u

with running cost s1 (x - x_d)^2 + s2 (y - y_d)^2, control weight eps^2,
terminal penalty beta1 on x(t1) and a sharp y(t1) = y1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.integrate
import scipy.interpolate
import scipy.optimize

from .errors import (DegenerateKappa, IntegralDiverged, NoConvergence, ZeroCoupling,
                     BadParameter)
from .numerics import TimeGrid, Trajectory, solve_forced_linear
from .systems import AffineSystem, Signal

LAYER_DECAY = 1e12
FEEDBACK_HORIZON = 28.0
SHARP_PENALTY = 1e8


@dataclass(frozen=True)
class Problem2D:
    """Data of the planar tracking problem.

    ``R`` and ``b`` take scalars (x, y). ``dR`` and ``db`` optionally return
    the pair of partial derivatives; central differences are used otherwise.
    ``beta1`` may be ``math.inf`` for a sharp terminal x.
    """

    a0: float
    a1: float
    a2: float
    R: Callable[[float, float], float]
    b: Callable[[float, float], float]
    s1: float
    s2: float
    beta1: float
    epsilon: float
    x_d: Signal
    y_d: Signal
    x0: float
    y0: float
    x1: float
    y1: float
    grid: TimeGrid
    dR: Callable | None = None
    db: Callable | None = None

    def __post_init__(self):
        if self.a2 == 0:
            raise BadParameter("a2 must be nonzero")
        if self.s1 <= 0 or self.s2 <= 0:
            raise BadParameter("s1 and s2 must be positive")
        if self.epsilon <= 0:
            raise BadParameter("epsilon must be positive")
        if not self.beta1 >= 0:
            raise BadParameter("beta1 must be non-negative")

    @property
    def phi1(self) -> float:
        return math.sqrt(self.a1 ** 2 * self.s2 + self.a2 ** 2 * self.s1) / math.sqrt(self.s2)

    @property
    def M(self) -> np.ndarray:
        return np.array([[self.a1, self.a2], [self.a2 * self.s1 / self.s2, -self.a1]])

    def forcing(self, t):
        t = np.asarray(t, dtype=float)
        f2 = self.y_d.df(t) + self.a1 * self.y_d(t) - self.a2 * self.s1 / self.s2 * self.x_d(t)
        return np.stack([np.full_like(t, self.a0), f2 + 0.0 * t], axis=-1)

    def partials(self, x, y):
        """((R_x, R_y), (b_x, b_y)) at a point."""
        def fd(f):
            h = 1e-6 * (1.0 + abs(x) + abs(y))
            return ((f(x + h, y) - f(x - h, y)) / (2 * h), (f(x, y + h) - f(x, y - h)) / (2 * h))
        dR = self.dR(x, y) if self.dR else fd(self.R)
        db = self.db(x, y) if self.db else fd(self.b)
        return dR, db

    def with_shift(self, alpha: float) -> "Problem2D":
        return replace(self, y_d=self.y_d.shifted(alpha))

    def as_system(self) -> AffineSystem:
        a0, a1, a2, R, b = self.a0, self.a1, self.a2, self.R, self.b

        def gradR(z):
            (rx, ry), _ = self.partials(z[0], z[1])
            return np.array([[a1, a2], [rx, ry]])

        def gradB(z):
            _, (bx, by) = self.partials(z[0], z[1])
            g = np.zeros((2, 1, 2))
            g[1, 0] = bx, by
            return g

        return AffineSystem(
            2, 1, lambda z: np.array([a0 + a1 * z[0] + a2 * z[1], R(z[0], z[1])]),
            lambda z: np.array([[0.0], [b(z[0], z[1])]]), gradR, gradB, "planar",
            {"a0": a0, "a1": a1, "a2": a2})


def problem_from_system(system: AffineSystem, x_d: Signal, y_d: Signal, *, s1=1.0, s2=1.0,
                        beta1=math.inf, epsilon, x0, y0, x1, y1, grid) -> Problem2D:
    """Wrap a builtin planar system whose first equation is affine and whose
    control acts on the second component only."""
    if system.n != 2 or system.p != 1:
        raise BadParameter(f"{system.name} is not a planar single-input system")
    r1 = lambda x, y: system.R(np.array([x, y]))[0]
    a0 = r1(0.0, 0.0)
    a1, a2 = r1(1.0, 0.0) - a0, r1(0.0, 1.0) - a0
    for x, y in ((0.3, -1.7), (2.1, 0.4), (-1.2, 2.5)):
        if abs(r1(x, y) - (a0 + a1 * x + a2 * y)) > 1e-10 * (1 + abs(r1(x, y))):
            raise BadParameter(f"{system.name}: first equation is not affine")
        if abs(system.B(np.array([x, y]))[0, 0]) > 0:
            raise BadParameter(f"{system.name}: control enters the first equation")

    def dR(x, y):
        return tuple(system.gradR(np.array([x, y]))[1])

    def db(x, y):
        return tuple(system.gradB(np.array([x, y]))[1, 0])

    return Problem2D(a0, a1, a2, lambda x, y: system.R(np.array([x, y]))[1],
                     lambda x, y: system.B(np.array([x, y]))[1, 0], s1, s2, beta1, epsilon,
                     x_d, y_d, x0, y0, x1, y1, grid, dR, db)


# Outer solution ---------------------------------------------------------------


@dataclass(frozen=True)
class OuterSolution:
    x: Trajectory
    y: Trajectory
    lam: Trajectory
    ydot: np.ndarray
    y_init: float
    y_end: float
    kappa: float


def kappa(problem: Problem2D) -> float:
    """Denominator of the y_init formula; for beta1 = inf it is divided by beta1."""
    p = problem
    T = p.grid.t1 - p.grid.t0
    ph = p.phi1
    if math.isinf(p.beta1):
        return p.s2 * ph * p.a2 ** 2 * math.sinh(T * ph)
    return (p.s2 * ph * (p.a2 ** 2 * p.beta1 - p.a1 * p.s2) * math.sinh(T * ph)
            + p.s2 ** 2 * ph ** 2 * math.cosh(T * ph))


def outer_solution(problem: Problem2D, refine: int = 1) -> OuterSolution:
    """x_O, y_O from z' = M z + f with x_O(t0) = x0 and y_init fixed by the
    terminal matching x_O(t1) = x1 + s2/(beta1 a2) (y_d(t1) - y_O(t1))."""
    p, grid = problem, problem.grid
    M = p.M
    fine = grid.refined(refine).t
    zp = solve_forced_linear(M, p.forcing(fine), [p.x0, 0.0], grid, refine).x
    zh = solve_forced_linear(M, np.zeros((fine.size, 2)), [0.0, 1.0], grid, refine).x
    yd1 = float(p.y_d(grid.t1))
    if math.isinf(p.beta1):
        num, den, scale = p.x1 - zp[-1, 0], zh[-1, 0], abs(zh[-1, 0])
    else:
        ba = p.beta1 * p.a2
        num = ba * (p.x1 - zp[-1, 0]) + p.s2 * (yd1 - zp[-1, 1])
        den = ba * zh[-1, 0] + p.s2 * zh[-1, 1]
        scale = abs(ba * zh[-1, 0]) + abs(p.s2 * zh[-1, 1])
    if abs(den) <= 1e-12 * scale or abs(kappa(p)) == 0.0:
        raise DegenerateKappa("terminal matching has no unique solution")
    y_init = num / den
    z = zp + y_init * zh
    t = grid.t
    ydot = (M @ z.T).T[:, 1] + p.forcing(t)[:, 1]
    lam = p.s2 / p.a2 * (p.y_d(t) - z[:, 1])
    return OuterSolution(Trajectory(t, z[:, 0]), Trajectory(t, z[:, 1]), Trajectory(t, lam),
                         ydot, float(y_init), float(z[-1, 1]), kappa(p))


# Boundary layers ------------------------------------------------------------------


@dataclass(frozen=True)
class Layer:
    """Y(tau) relaxing from ``start`` to ``target`` at fixed x."""

    tau: np.ndarray
    Y: np.ndarray
    start: float
    target: float
    x: float
    spline: Callable

    @property
    def tau_max(self) -> float:
        return float(self.tau[-1])

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        inside = tau < self.tau_max
        out = np.full(tau.shape, self.target)
        out[inside] = self.spline(tau[inside])
        return out


def _layer(problem: Problem2D, x: float, start: float, target: float) -> Layer:
    rs2 = math.sqrt(problem.s2)
    probe = np.abs([problem.b(x, y) for y in np.linspace(start, target, 201)])
    if np.min(probe) == 0.0:
        raise ZeroCoupling(f"b vanishes on the layer path at x={x:.6g}")
    lo, hi = rs2 * np.min(probe), rs2 * np.max(probe)
    tau_max = math.log(LAYER_DECAY) / lo
    steps = max(int(math.ceil(tau_max * hi / 0.05)), 16)
    h = tau_max / steps

    def rhs(Y):
        return rs2 * (target - Y) * abs(problem.b(x, Y))

    Y = np.empty(steps + 1)
    dY = np.empty(steps + 1)
    Y[0] = y = start
    for k in range(steps):
        dY[k] = k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        Y[k + 1] = y
    dY[-1] = rhs(y)
    if abs(Y[-1] - target) > 1e-10 * max(1.0, abs(start - target)):
        raise NoConvergence(f"layer did not relax: residual {abs(Y[-1] - target):.3g}")
    tau = h * np.arange(steps + 1)
    spline = scipy.interpolate.CubicHermiteSpline(tau, Y, dY)
    return Layer(tau, Y, float(start), float(target), float(x), spline)


def inner_layers(problem: Problem2D, y_init: float, y_end: float,
                 x_right: float | None = None) -> tuple[Layer, Layer]:
    """Left layer from y0 to y_init at x0, right layer from y1 to y_end.

    The right layer sits at ``x_right`` (default x1; the outer x_O(t1) when
    beta1 is finite)."""
    xr = problem.x1 if x_right is None else x_right
    return (_layer(problem, problem.x0, problem.y0, y_init),
            _layer(problem, xr, problem.y1, y_end))


# Composite ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Composite2D:
    y_init: float
    y_end: float
    kappa: float
    outer: OuterSolution
    YL: Layer
    YR: Layer
    composite: Trajectory
    epsilon: float
    u_outer: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return self.composite.x[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.composite.x[:, 1]

    @property
    def lam_x(self) -> np.ndarray:
        return self.composite.x[:, 2]

    @property
    def u(self) -> np.ndarray:
        return self.composite.x[:, 3]


def _outer_control(p: Problem2D, x, y, ydot):
    return (ydot - p.R(x, y)) / p.b(x, y)


def _layer_control(p: Problem2D, layer: Layer, tau, ydot_edge, sign: float):
    Y = layer(tau)
    bY = np.array([p.b(layer.x, v) for v in Y])
    RY = np.array([p.R(layer.x, v) for v in Y])
    return (ydot_edge - RY) / bY + sign * math.sqrt(p.s2) / p.epsilon * np.sign(bY) * (layer.target - Y)


def composite_solution(problem: Problem2D, refine: int = 1) -> Composite2D:
    p, grid = problem, problem.grid
    out = outer_solution(p, refine)
    xO, yO = out.x.x[:, 0], out.y.x[:, 0]
    xr = p.x1 if math.isinf(p.beta1) else float(xO[-1])
    YL, YR = inner_layers(p, out.y_init, out.y_end, xr)
    t = grid.t
    tl = (t - grid.t0) / p.epsilon
    tr = (grid.t1 - t) / p.epsilon
    y = yO + YL(tl) - out.y_init + YR(tr) - out.y_end
    uO = np.array([_outer_control(p, a, b_, c) for a, b_, c in zip(xO, yO, out.ydot)])
    UL = _layer_control(p, YL, tl, out.ydot[0], 1.0)
    UR = _layer_control(p, YR, tr, out.ydot[-1], -1.0)
    u = uO + UL + UR - uO[0] - uO[-1]
    cols = np.column_stack([xO, y, out.lam.x[:, 0], u])
    return Composite2D(out.y_init, out.y_end, out.kappa, out, YL, YR, Trajectory(t, cols),
                       p.epsilon, uO)


@dataclass(frozen=True)
class Eps0Limit:
    jump_left: float
    jump_right: float
    kick_left: float
    kick_right: float
    x: Trajectory
    y: Trajectory
    u: Trajectory

    def report(self) -> str:
        return (f"jump_left={self.jump_left:.12g} kick_left={self.kick_left:.12g} "
                f"jump_right={self.jump_right:.12g} kick_right={self.kick_right:.12g}")


def eps0_limit(problem: Problem2D, refine: int = 1) -> Eps0Limit:
    """Interior outer solution plus the boundary jumps of y and the delta
    kicks 2 * jump carried by y' at both ends."""
    out = outer_solution(problem, refine)
    xO, yO = out.x.x[:, 0], out.y.x[:, 0]
    uO = np.array([_outer_control(problem, a, b_, c) for a, b_, c in zip(xO, yO, out.ydot)])
    jl = out.y_init - problem.y0
    jr = out.y_end - problem.y1
    t = problem.grid.t
    return Eps0Limit(jl, jr, 2.0 * jl, 2.0 * jr, out.x, out.y, Trajectory(t, uO))


# Feedback ---------------------------------------------------------------------------------


def y_init_infinite(problem: Problem2D, x: float, t: float) -> float:
    """y_init for an infinite horizon, with the current state as initial value."""
    p = problem
    ph = p.phi1
    c = p.a2 * p.s1 / p.s2

    def g(tau):
        return math.exp((t - tau) * ph) * (c * p.x_d(tau) - (p.a1 + ph) * p.y_d(tau))

    horizon = FEEDBACK_HORIZON / ph
    tail = abs(g(t + horizon))
    val, _ = scipy.integrate.quad(g, t, t + horizon, limit=2000)
    if not (math.isfinite(val) and math.isfinite(tail)) or tail > 1e-8 * (1.0 + abs(val)):
        raise IntegralDiverged("desired trajectory grows too fast for the infinite horizon")
    return (val - (ph + p.a1) / p.a2 * x - p.a0 / p.a2 * (p.a1 / ph + 1.0) + float(p.y_d(t)))


def feedback_law(problem: Problem2D, x: float, y: float, t: float) -> float:
    """Closed-loop control for an infinite time horizon."""
    p = problem
    yi = y_init_infinite(p, x, t)
    bxy = p.b(x, y)
    if bxy == 0:
        raise ZeroCoupling("b vanishes at the current state")
    drift = (p.a1 * (float(p.y_d(t)) - yi) + float(p.y_d.df(t))
             + p.a2 * p.s1 / p.s2 * (x - float(p.x_d(t))))
    stiff = math.sqrt(p.s2) / p.epsilon * (yi - y) * abs(bxy)
    return (drift + stiff - p.R(x, y)) / bxy


def delayed_feedback_law(problem: Problem2D, x_delayed: float, y_delayed: float, t: float,
                         delay: float, refine: int = 1) -> float:
    """Composite open-loop control restarted at t - delay from the delayed state
    and evaluated at t; the horizon end stays at problem.grid.t1. ``refine``
    sets the quadrature grid relative to the problem grid."""
    if not delay > 0:
        raise BadParameter("delay must be positive")
    p = problem
    t0 = t - delay
    t1 = p.grid.t1
    if not t1 > t:
        raise BadParameter("feedback time must precede the horizon end")
    dt = p.grid.dt
    steps = max(int(math.ceil((t1 - t0) / dt)), 2)
    q = replace(p, x0=float(x_delayed), y0=float(y_delayed), grid=TimeGrid(t0, t1, steps))
    out = outer_solution(q, refine)
    xO, yO = out.x.x[:, 0], out.y.x[:, 0]
    xr = q.x1 if math.isinf(q.beta1) else float(xO[-1])
    YL, YR = inner_layers(q, out.y_init, out.y_end, xr)
    # outer quantities at t; y_O' from the outer equation before substitution
    z_t = np.array([np.interp(t, q.grid.t, xO), np.interp(t, q.grid.t, yO)])
    ydot_t = (q.M @ z_t)[1] + q.forcing(t)[1]
    uO_t = _outer_control(q, z_t[0], z_t[1], ydot_t)
    uO0 = _outer_control(q, xO[0], yO[0], out.ydot[0])
    uO1 = _outer_control(q, xO[-1], yO[-1], out.ydot[-1])
    UL = _layer_control(q, YL, np.array([delay / q.epsilon]), out.ydot[0], 1.0)[0]
    UR = _layer_control(q, YR, np.array([(t1 - t) / q.epsilon]), out.ydot[-1], -1.0)[0]
    return float(uO_t + UL + UR - uO0 - uO1)


# Direct numerical solution ------------------------------------------------------------------


@dataclass(frozen=True)
class DirectSolution:
    x: Trajectory
    u: Trajectory
    J: float
    iterations: int
    gradient_norm: float
    converged: bool


def _direct_setup(p: Problem2D):
    g = p.grid
    h, N = g.dt, g.steps
    den = 1.0 - 0.5 * h * p.a1
    alpha = (1.0 + 0.5 * h * p.a1) / den
    gamma = 0.5 * h * p.a2 / den
    delta = h * p.a0 / den
    # D[k, j] = dx_k / dy_j for the trapezoid recursion of the x equation
    D = np.zeros((N + 1, N + 1))
    c = np.zeros(N + 1)
    c[0] = p.x0
    for k in range(N):
        D[k + 1] = alpha * D[k]
        D[k + 1, k] += gamma
        D[k + 1, k + 1] += gamma
        c[k + 1] = alpha * c[k] + delta
    return D, c


def direct_tracking(problem: Problem2D, y_guess=None, max_nfev: int = 200,
                    tol: float = 1e-12) -> DirectSolution:
    """Minimize the discretized functional over the samples of y.

    x follows from y through the trapezoid rule for the affine x equation, the
    control is u = (y' - R) / b at the interval midpoints, and y(t0), y(t1) are
    fixed. The sum of squares is solved by scipy's trust-region least squares
    with the exact Jacobian.
    """
    p, g = problem, problem.grid
    h, N = g.dt, g.steps
    t = g.t
    D, c = _direct_setup(p)
    w = np.full(N + 1, h)
    w[0] = w[-1] = 0.5 * h
    xd, yd = np.asarray(p.x_d(t), dtype=float) + 0 * t, np.asarray(p.y_d(t), dtype=float) + 0 * t
    rx, ry = np.sqrt(w * p.s1), np.sqrt(w * p.s2)
    ru = p.epsilon * math.sqrt(h)
    rb = math.sqrt(SHARP_PENALTY if math.isinf(p.beta1) else p.beta1)
    free = slice(1, N)

    def full(v):
        y = np.empty(N + 1)
        y[0], y[-1] = p.y0, p.y1
        y[free] = v
        return y

    def pieces(y):
        x = D @ y + c
        xm, ym = 0.5 * (x[1:] + x[:-1]), 0.5 * (y[1:] + y[:-1])
        Rm = np.array([p.R(a, b_) for a, b_ in zip(xm, ym)])
        bm = np.array([p.b(a, b_) for a, b_ in zip(xm, ym)])
        u = (np.diff(y) / h - Rm) / bm
        return x, xm, ym, bm, u

    def residual(v):
        y = full(v)
        x, _, _, _, u = pieces(y)
        return np.concatenate([rx * (x - xd), ry * (y - yd), ru * u, [rb * (x[-1] - p.x1)]])

    def jac(v):
        y = full(v)
        x, xm, ym, bm, u = pieces(y)
        parts = [p.partials(a, b_) for a, b_ in zip(xm, ym)]
        Rx = np.array([q[0][0] for q in parts])
        Ry = np.array([q[0][1] for q in parts])
        bx = np.array([q[1][0] for q in parts])
        by = np.array([q[1][1] for q in parts])
        Dm = 0.5 * (D[1:] + D[:-1])
        Ym = np.zeros((N, N + 1))
        idx = np.arange(N)
        Ym[idx, idx] = Ym[idx, idx + 1] = 0.5
        Dy = np.zeros((N, N + 1))
        Dy[idx, idx], Dy[idx, idx + 1] = -1.0 / h, 1.0 / h
        du = (Dy - Rx[:, None] * Dm - Ry[:, None] * Ym - u[:, None] * (bx[:, None] * Dm + by[:, None] * Ym)) / bm[:, None]
        J = np.vstack([rx[:, None] * D, np.diag(ry), ru * du, rb * D[-1:]])
        return J[:, free]

    if y_guess is None:
        v0 = np.linspace(p.y0, p.y1, N + 1)[free]
    else:
        v0 = np.asarray(y_guess, dtype=float)[free]
    res = scipy.optimize.least_squares(residual, v0, jac=jac, method="trf", xtol=tol,
                                       ftol=tol, gtol=tol, max_nfev=max_nfev, x_scale="jac")
    y = full(res.x)
    x, _, _, _, u = pieces(y)
    u_nodes = np.empty(N + 1)
    u_nodes[1:-1] = 0.5 * (u[1:] + u[:-1])
    u_nodes[0], u_nodes[-1] = u[0], u[-1]
    grad = np.max(np.abs(res.grad)) if res.grad.size else 0.0
    return DirectSolution(Trajectory(t, np.column_stack([x, y])), Trajectory(t, u_nodes),
                          float(res.cost), int(res.nfev), float(grad), bool(res.status > 0))
