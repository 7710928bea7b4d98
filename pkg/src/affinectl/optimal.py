"""Numerical optimal trajectory tracking.

The state is advanced by RK4 with the control linearly interpolated between
grid nodes, the functional is the trapezoid rule on the same grid. The
descent direction is the exact gradient of that discrete functional, computed
by reverse-mode differentiation through the RK4 stages and scaled by the
trapezoid weights so it approximates eps^2 (u - u0) + B^T lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from .errors import Diverged, IllConditioned, NonFinite, SingularSurfaceDegenerate
from .numerics import TimeGrid, Trajectory, central_gradient, rk4_step
from .systems import AffineSystem

SHARP_PENALTY = 1e8


@dataclass(frozen=True)
class TrackingProblem:
    """Tracking functional data.

    ``x_d(t)`` returns the desired n-vector at a scalar time. ``S1`` holds the
    terminal weights; components flagged in ``sharp_terminal_mask`` get the
    penalty weight ``SHARP_PENALTY`` instead.
    """

    system: AffineSystem
    x_d: Callable[[float], np.ndarray]
    S: np.ndarray
    S1: np.ndarray
    epsilon: float
    x0: np.ndarray
    x1: np.ndarray
    grid: TimeGrid
    u0: float = 0.0
    sharp_terminal_mask: tuple | None = None
    xdot_d: Callable[[float], np.ndarray] | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        if np.min(np.linalg.eigvalsh(0.5 * (S + S.T))) < -1e-12:
            raise ValueError("S must be positive semidefinite")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "S1", np.atleast_2d(np.asarray(self.S1, dtype=float)))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "x1", np.asarray(self.x1, dtype=float))

    @property
    def terminal_weights(self) -> np.ndarray:
        S1 = self.S1.copy()
        if self.sharp_terminal_mask is not None:
            for i, sharp in enumerate(self.sharp_terminal_mask):
                if sharp:
                    S1[i, :] = 0.0
                    S1[:, i] = 0.0
                    S1[i, i] = SHARP_PENALTY
        return S1

    def desired_samples(self) -> np.ndarray:
        return np.array([self.x_d(t) for t in self.grid.t], dtype=float)


@dataclass(frozen=True)
class OptimalSolution:
    x: Trajectory
    lam: Trajectory
    u: Trajectory
    J: float
    iterations: int
    stationarity_residual: float
    history: tuple = field(default_factory=tuple)
    converged: bool = True


def _trapezoid_weights(steps: int) -> np.ndarray:
    w = np.ones(steps + 1)
    w[0] = w[-1] = 0.5
    return w


def _as_controls(u, grid: TimeGrid, p: int) -> np.ndarray:
    if isinstance(u, Trajectory):
        u = u.x
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape != (grid.steps + 1, p):
        raise ValueError(f"control must have shape {(grid.steps + 1, p)}")
    return u


def simulate(problem: TrackingProblem, u) -> Trajectory:
    """Forward RK4 solve with u linear between nodes."""
    sys_, grid = problem.system, problem.grid
    U = _as_controls(u, grid, sys_.p)
    h = grid.dt
    x = problem.x0.copy()
    out = np.empty((grid.steps + 1, sys_.n))
    out[0] = x
    R, B = sys_.R, sys_.B
    for k in range(grid.steps):
        ua, ub = U[k], U[k + 1]
        um = 0.5 * (ua + ub)
        k1 = R(x) + B(x) @ ua
        k2x = x + 0.5 * h * k1
        k2 = R(k2x) + B(k2x) @ um
        k3x = x + 0.5 * h * k2
        k3 = R(k3x) + B(k3x) @ um
        k4x = x + h * k3
        k4 = R(k4x) + B(k4x) @ ub
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"state became non-finite at step {k + 1}")
        out[k + 1] = x
    return Trajectory(grid.t, out)


def evaluate_functional(problem: TrackingProblem, x, u) -> float:
    """Trapezoid rule for the running cost plus the terminal penalty."""
    grid = problem.grid
    X = x.x if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
    U = _as_controls(u, grid, problem.system.p)
    E = X - problem.desired_samples()
    running = 0.5 * np.einsum("ki,ij,kj->k", E, problem.S, E)
    running += 0.5 * problem.epsilon ** 2 * np.sum((U - problem.u0) ** 2, axis=1)
    w = _trapezoid_weights(grid.steps)
    e1 = X[-1] - problem.x1
    return float(grid.dt * np.dot(w, running) + 0.5 * e1 @ problem.terminal_weights @ e1)


def _fx(sys_, x, u):
    return sys_.gradR(x) + np.einsum("ijk,j->ik", sys_.gradB(x), u)


def discrete_gradient(problem: TrackingProblem, u) -> tuple[float, np.ndarray, Trajectory]:
    """J and dJ/du_k of the discrete problem (reverse mode through RK4)."""
    sys_, grid = problem.system, problem.grid
    U = _as_controls(u, grid, sys_.p)
    h, N = grid.dt, grid.steps
    R, B = sys_.R, sys_.B
    X = np.empty((N + 1, sys_.n))
    stages = []
    x = problem.x0.copy()
    X[0] = x
    for k in range(N):
        ua, ub = U[k], U[k + 1]
        um = 0.5 * (ua + ub)
        k1 = R(x) + B(x) @ ua
        x2 = x + 0.5 * h * k1
        k2 = R(x2) + B(x2) @ um
        x3 = x + 0.5 * h * k2
        k3 = R(x3) + B(x3) @ um
        x4 = x + h * k3
        k4 = R(x4) + B(x4) @ ub
        stages.append((x, x2, x3, x4))
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"state became non-finite at step {k + 1}")
        X[k + 1] = x
    traj = Trajectory(grid.t, X)
    J = evaluate_functional(problem, traj, U)
    w = _trapezoid_weights(N) * h
    E = X - problem.desired_samples()
    SE = E @ problem.S.T
    gu = (w * problem.epsilon ** 2)[:, None] * (U - problem.u0)
    a = w[-1] * SE[-1] + problem.terminal_weights @ (X[-1] - problem.x1)
    for k in range(N - 1, -1, -1):
        x1_, x2, x3, x4 = stages[k]
        ua, ub = U[k], U[k + 1]
        um = 0.5 * (ua + ub)
        b1, b2 = (h / 6.0) * a, (h / 3.0) * a
        b3, b4 = b2, b1
        gx = a.copy()
        # stage 4
        g4 = _fx(sys_, x4, ub).T @ b4
        gu[k + 1] += B(x4).T @ b4
        gx += g4
        b3 = b3 + h * g4
        # stage 3
        g3 = _fx(sys_, x3, um).T @ b3
        gm = B(x3).T @ b3
        gx += g3
        b2 = b2 + 0.5 * h * g3
        # stage 2
        g2 = _fx(sys_, x2, um).T @ b2
        gm = gm + B(x2).T @ b2
        gx += g2
        b1 = b1 + 0.5 * h * g2
        # stage 1
        gx += _fx(sys_, x1_, ua).T @ b1
        gu[k] += B(x1_).T @ b1 + 0.5 * gm
        gu[k + 1] += 0.5 * gm
        a = gx + w[k] * SE[k]
    return J, gu, traj


def function_space_gradient(problem: TrackingProblem, gu: np.ndarray) -> np.ndarray:
    """Divide the discrete gradient by the trapezoid weights."""
    w = _trapezoid_weights(problem.grid.steps) * problem.grid.dt
    return gu / w[:, None]


def adjoint_sweep(problem: TrackingProblem, x, u) -> Trajectory:
    """Co-state from -lam' = (gradR + u gradB)^T lam + S (x - x_d), integrated
    backward in the reversed time s = t1 - t with RK4."""
    sys_, grid = problem.system, problem.grid
    X = x.x if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
    U = _as_controls(u, grid, sys_.p)
    XD = problem.desired_samples()
    N, h = grid.steps, grid.dt
    lam = problem.terminal_weights @ (X[-1] - problem.x1)
    out = np.empty_like(X)
    out[-1] = lam
    S = problem.S

    def g(xk, uk, xdk, l):
        return _fx(sys_, xk, uk).T @ l + S @ (xk - xdk)

    for k in range(N, 0, -1):
        xm = 0.5 * (X[k] + X[k - 1])
        um = 0.5 * (U[k] + U[k - 1])
        xdm = 0.5 * (XD[k] + XD[k - 1])
        k1 = g(X[k], U[k], XD[k], lam)
        k2 = g(xm, um, xdm, lam + 0.5 * h * k1)
        k3 = g(xm, um, xdm, lam + 0.5 * h * k2)
        k4 = g(X[k - 1], U[k - 1], XD[k - 1], lam + h * k3)
        lam = lam + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(lam)):
            raise NonFinite("co-state became non-finite")
        out[k - 1] = lam
    return Trajectory(grid.t, out)


def _finish(problem, U, J, iters, history, converged):
    _, gu, traj = discrete_gradient(problem, U)
    resid = float(np.max(np.abs(function_space_gradient(problem, gu))))
    lam = adjoint_sweep(problem, traj, U)
    return OptimalSolution(traj, lam, Trajectory(problem.grid.t, U), J, iters, resid,
                           tuple(history), converged)


def gradient_descent(problem: TrackingProblem, u_init=None, opts: dict | None = None) -> OptimalSolution:
    """First-order descent on the control.

    opts: max_iter (5000), step0 (min(1/eps^2, 1e6)), tol (1e-8, relative J
    change over 10 accepted iterations), method ("steepest" or "lbfgs").
    Steepest descent uses a backtracking step: halve on failure, grow by 1.3
    on success, give up below 1e-12. The "lbfgs" method hands the same
    function and exact gradient to scipy's L-BFGS-B.
    """
    if problem.epsilon <= 0:
        raise ValueError("gradient_descent needs epsilon > 0")
    opts = dict(opts or {})
    grid, p = problem.grid, problem.system.p
    max_iter = int(opts.get("max_iter", 5000))
    tol = float(opts.get("tol", 1e-8))
    step = float(opts.get("step0", min(1.0 / problem.epsilon ** 2, 1e6)))
    method = opts.get("method", "steepest")
    U = np.zeros((grid.steps + 1, p)) if u_init is None else _as_controls(u_init, grid, p).copy()
    if method == "lbfgs":
        return _lbfgs(problem, U, max_iter, tol, opts)
    if method != "steepest":
        raise ValueError(f"unknown method '{method}'")

    J, gu, _ = discrete_gradient(problem, U)
    history = [J]
    iters, converged = 0, False
    while iters < max_iter:
        g = function_space_gradient(problem, gu)
        while True:
            trial = U - step * g
            try:
                J_trial, gu_trial, _ = discrete_gradient(problem, trial)
            except NonFinite:
                J_trial = math.inf
            if J_trial < J:
                break
            step *= 0.5
            if step < 1e-12:
                if J_trial - J > 1e-12 * max(1.0, abs(J)):
                    raise Diverged("no decrease at the minimum step size")
                return _finish(problem, U, J, iters, history, True)
        U, J, gu = trial, J_trial, gu_trial
        step *= 1.3
        iters += 1
        history.append(J)
        if len(history) > 10 and abs(history[-11] - J) <= tol * max(abs(J), 1e-300):
            converged = True
            break
    return _finish(problem, U, J, iters, history, converged)


def _lbfgs(problem, U, max_iter, tol, opts):
    shape = U.shape
    history = []

    def fun(v):
        J, gu, _ = discrete_gradient(problem, v.reshape(shape))
        return J, gu.ravel()

    def track(intermediate_result):
        history.append(float(intermediate_result.fun))

    J0, _ = fun(U.ravel())
    history.append(J0)
    res = scipy.optimize.minimize(
        fun, U.ravel(), jac=True, method="L-BFGS-B", callback=track,
        options={"maxiter": max_iter, "ftol": tol * 1e-2, "gtol": float(opts.get("gtol", 1e-12)),
                 "maxcor": int(opts.get("maxcor", 30)), "maxfun": 4 * max_iter})
    U = res.x.reshape(shape)
    return _finish(problem, U, float(res.fun), int(res.nit), history, bool(res.success))


# Exact free-particle tracking ------------------------------------------------


def kappas(epsilon: float) -> tuple[float, float]:
    r = math.sqrt(1.0 - 4.0 * epsilon ** 2)
    k1 = math.sqrt(1.0 - r) / (math.sqrt(2.0) * epsilon)
    k2 = math.sqrt(r + 1.0) / (math.sqrt(2.0) * epsilon)
    return k1, k2


def exact_linear_tracking(epsilon: float, beta1: float, beta2: float, x0: float, y0: float,
                          x1: float, y1: float, grid: TimeGrid) -> OptimalSolution:
    """Free particle x'=y, y'=u with x_d = 0, S = 1 and terminal penalties.

    The state/co-state system has eigenvalues +-kappa1, +-kappa2 with
    eigenvectors (1, s, -1/s, -eps^2 s^2). Each mode is anchored at the end
    where it is largest (growing modes at t1, decaying at t0) so all basis
    functions stay bounded; the four boundary conditions are then fitted by
    a linear solve. ``beta1 = inf`` imposes x(t1) = x1 exactly.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("exact solution needs 0 < epsilon < 1/2")
    k1, k2 = kappas(epsilon)
    sig = np.array([k1, -k1, k2, -k2])
    vecs = np.array([[1.0, s, -1.0 / s, -(epsilon ** 2) * s ** 2] for s in sig]).T
    t0, t1 = grid.t0, grid.t1

    def modes(t):
        t = np.asarray(t, dtype=float)
        anchor = np.where(sig > 0, t1, t0)
        return np.exp(sig[None, :] * (t[:, None] - anchor[None, :]))

    m0, m1 = modes([t0])[0], modes([t1])[0]
    V0, V1 = vecs * m0, vecs * m1
    rows = [V0[0], V0[1]]
    rhs = [x0, y0]
    if math.isinf(beta1):
        rows.append(V1[0])
        rhs.append(x1)
    else:
        rows.append(V1[2] - beta1 * V1[0])
        rhs.append(-beta1 * x1)
    if math.isinf(beta2):
        rows.append(V1[1])
        rhs.append(y1)
    else:
        rows.append(V1[3] - beta2 * V1[1])
        rhs.append(-beta2 * y1)
    M = np.array(rows)
    scale = np.max(np.abs(M), axis=1, keepdims=True)
    cond = np.linalg.cond(M / scale)
    if cond > 1e12:
        raise IllConditioned(f"boundary fit condition number {cond:.3g}")
    c = np.linalg.solve(M / scale, np.asarray(rhs) / scale[:, 0])
    Z = modes(grid.t) @ (vecs * c).T
    x = Trajectory(grid.t, Z[:, :2])
    lam = Trajectory(grid.t, Z[:, 2:])
    u = -Z[:, 3] / epsilon ** 2
    w = _trapezoid_weights(grid.steps)
    run = 0.5 * (Z[:, 0] ** 2 + Z[:, 1] ** 2 + epsilon ** 2 * u ** 2)
    J = grid.dt * float(np.dot(w, run))
    if not math.isinf(beta1):
        J += 0.5 * beta1 * (Z[-1, 0] - x1) ** 2
    if not math.isinf(beta2):
        J += 0.5 * beta2 * (Z[-1, 1] - y1) ** 2
    resid = float(np.max(np.abs(epsilon ** 2 * u + Z[:, 3])))
    return OptimalSolution(x, lam, Trajectory(grid.t, u), J, 0, resid)


def free_particle_composite(epsilon, beta1, x0, y0, x1, y1, t):
    """Leading-order composite (x, y, lambda_x, lambda_y) for t0 = 0."""
    t = np.asarray(t, dtype=float)
    t1 = float(t[-1]) if t.ndim else float(t)
    return _free_particle_composite(epsilon, beta1, x0, y0, x1, y1, t, t1)


def _free_particle_composite(eps, beta1, x0, y0, x1, y1, t, t1):
    if math.isinf(beta1):
        # divide numerator and kappa by beta1 and let it grow
        kap, b, one = math.sinh(t1), 1.0, 0.0
    else:
        kap, b, one = beta1 * math.sinh(t1) + math.cosh(t1), beta1, 1.0
    y = (b * x1 * np.cosh(t) + x0 * (one * np.sinh(t - t1) - b * np.cosh(t - t1))) / kap
    y += np.exp(-(t1 - t) / eps) * (b * (y1 * math.sinh(t1) + x0) + math.cosh(t1) * (one * y1 - b * x1)) / kap
    y += np.exp(-t / eps) * (math.sinh(t1) * (one * x0 + b * y0) + math.cosh(t1) * (b * x0 + one * y0) - b * x1) / kap
    x = b * x1 * np.sinh(t) / kap + x0 * (one * np.cosh(t - t1) - b * np.sinh(t - t1)) / kap
    lx = np.cosh(t) / kap * (x0 * (b * math.cosh(t1) + one * math.sinh(t1)) - b * x1) - x0 * np.sinh(t)
    return x, y, lx, np.zeros_like(t)


# Singular control -------------------------------------------------------------


def singular_control_scalar(system: AffineSystem, S, x, lam, x_d, xdot_d,
                            tol: float = 1e-12, h: float = 1e-6) -> tuple[float, float]:
    """Singular control and generalized convexity for a single input.

    With q = gradB R - gradR B, differentiating the switching function twice
    gives p(x) u + rest = 0 where
      p    = lam^T (grad q B - gradB q) - B^T S B - (x - x_d)^T S gradB B
      rest = lam^T (grad q R - gradR q) + B^T S (xdot_d - R) - (x - x_d)^T S (gradB R + q)
    so u = -rest / p. The convexity value returned is -p; it must be positive
    along a minimizing singular arc.
    """
    if system.p != 1:
        raise ValueError("singular_control_scalar needs a single input")
    S = np.atleast_2d(np.asarray(S, dtype=float))
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    e = x - np.asarray(x_d, dtype=float)
    xdot_d = np.asarray(xdot_d, dtype=float)

    def q_of(z):
        return system.gradB(z)[:, 0, :] @ system.R(z) - system.gradR(z) @ system.B(z)[:, 0]

    Bv = system.B(x)[:, 0]
    Rv = system.R(x)
    dB = system.gradB(x)[:, 0, :]
    dR = system.gradR(x)
    q = q_of(x)
    dq = central_gradient(q_of, x, h)
    p = lam @ (dq @ Bv - dB @ q) - Bv @ S @ Bv - e @ S @ (dB @ Bv)
    rest = lam @ (dq @ Rv - dR @ q) + Bv @ S @ (xdot_d - Rv) - e @ S @ (dB @ Rv + q)
    if abs(p) <= tol:
        raise SingularSurfaceDegenerate("p(x) vanishes; the singular control is undefined")
    return float(-rest / p), float(-p)
