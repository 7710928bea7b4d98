"""Exactly realizable desired trajectories and their open-loop controls."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentInitialState, RankDeficient, RecipePreconditionViolated
from .numerics import (
    TimeGrid,
    Trajectory,
    integrate_ivp,
    matrix_rank,
    pseudo_inverse_projectors,
    solve_forced_linear,
    trapezoid_cumulative,
)
from .systems import (
    AffineSystem,
    DesiredTrajectory,
    Signal,
    affine_part,
    builtin_system,
    satisfies_linearizing_assumption,
)


@dataclass(frozen=True)
class RealizationResult:
    x_d: Trajectory
    u: Trajectory
    residual: float
    xdot_d: np.ndarray | None = None
    clipped: bool = False
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TrackingReport:
    sup: np.ndarray
    final: np.ndarray
    x: Trajectory

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.sup))


def fd_derivative(x: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order differences along axis 0; one-sided near the ends."""
    x = np.asarray(x, dtype=float)
    d = np.empty_like(x)
    if x.shape[0] < 5:
        return np.gradient(x, dt, axis=0)
    d[2:-2] = (x[:-4] - 8 * x[1:-3] + 8 * x[3:-1] - x[4:]) / (12 * dt)
    d[0] = (-25 * x[0] + 48 * x[1] - 36 * x[2] + 16 * x[3] - 3 * x[4]) / (12 * dt)
    d[1] = (-3 * x[0] - 10 * x[1] + 18 * x[2] - 6 * x[3] + x[4]) / (12 * dt)
    d[-1] = (25 * x[-1] - 48 * x[-2] + 36 * x[-3] - 16 * x[-4] + 3 * x[-5]) / (12 * dt)
    d[-2] = (3 * x[-1] + 10 * x[-2] - 18 * x[-3] + 6 * x[-4] - x[-5]) / (12 * dt)
    return d


def constraint_residual(system: AffineSystem, x: np.ndarray, xdot: np.ndarray) -> float:
    worst = 0.0
    for xk, vk in zip(x, xdot):
        Q = pseudo_inverse_projectors(system.B(xk)).Q
        worst = max(worst, float(np.max(np.abs(Q @ (vk - system.R(xk))))))
    return worst


def _split(system: AffineSystem, mask, x_ref):
    mask = np.asarray(mask, dtype=bool)
    if mask.sum() != system.p:
        raise RankDeficient(f"{mask.sum()} prescribed components, need exactly p={system.p}")
    E = np.eye(system.n)
    ES, EU = E[:, mask], E[:, ~mask]
    Q = pseudo_inverse_projectors(system.B(x_ref)).Q
    if matrix_rank(Q @ EU) != system.n - system.p:
        raise RankDeficient("prescribed components do not span the range of P")
    return mask, ES, EU


def solve_constraint(system: AffineSystem, desired: DesiredTrajectory, x0,
                     grid: TimeGrid, linear: bool | None = None) -> RealizationResult:
    """Fill in the unprescribed components from Q (x_d' - R(x_d)) = 0.

    With the linearizing assumption the constraint is a linear ODE solved by
    variation of constants; otherwise the reduced ODE is integrated by RK4.
    """
    x0 = np.asarray(x0, dtype=float)
    t = grid.t
    mask, ES, EU = _split(system, desired.prescribed_mask, x0)
    xs = np.array([[f(tk) for f, m in zip(desired.values, mask) if m] for tk in t])
    vs = np.array([[f(tk) for f, m in zip(desired.derivatives, mask) if m] for tk in t])
    if np.max(np.abs(xs[0] - x0[mask])) > 1e-12 * max(1.0, np.max(np.abs(x0))):
        raise InconsistentInitialState("prescribed components disagree with x0 at t0")
    if linear is None:
        linear = satisfies_linearizing_assumption(system)

    def assemble(xu_row, xs_row):
        return ES @ xs_row + EU @ xu_row

    if linear:
        A, b = affine_part(system, x0)
        Q = _q(system, x0)
        QEU_pinv = np.linalg.pinv(Q @ EU)
        M = QEU_pinv @ A @ EU
        forcing = np.array([QEU_pinv @ (A @ ES @ s + b - Q @ ES @ v) for s, v in zip(xs, vs)])
        xu = solve_forced_linear(M, forcing, x0[~mask], grid).x
        xu_dot = xu @ M.T + forcing
    else:
        def xs_at(tau):
            return np.array([f(tau) for f, m in zip(desired.values, mask) if m])

        def vs_at(tau):
            return np.array([f(tau) for f, m in zip(desired.derivatives, mask) if m])

        def rhs(tau, xu):
            x = assemble(xu, xs_at(tau))
            Q = pseudo_inverse_projectors(system.B(x)).Q
            return np.linalg.pinv(Q @ EU) @ (Q @ (system.R(x) - ES @ vs_at(tau)))

        xu = integrate_ivp(rhs, x0[~mask], grid).x
        xu_dot = np.array([rhs(tk, row) for tk, row in zip(t, xu)])
    x = xs @ ES.T + xu @ EU.T
    xdot = vs @ ES.T + xu_dot @ EU.T
    x_traj = Trajectory(t, x)
    u = synthesize_control(system, x_traj, xdot)
    return RealizationResult(x_traj, u, constraint_residual(system, x, xdot), xdot)


def _q(system: AffineSystem, x) -> np.ndarray:
    return pseudo_inverse_projectors(system.B(x)).Q


def synthesize_control(system: AffineSystem, x_d: Trajectory, xdot=None) -> Trajectory:
    """u = B+(x_d) (x_d' - R(x_d)) at every node."""
    x = x_d.x
    if xdot is None:
        xdot = fd_derivative(x, x_d.t[1] - x_d.t[0])
    u = np.array([pseudo_inverse_projectors(system.B(xk)).Bplus @ (vk - system.R(xk))
                  for xk, vk in zip(x, xdot)])
    return Trajectory(x_d.t, u)


def controlled_rhs(system: AffineSystem, u: Trajectory):
    """RHS of the controlled system with u linearly interpolated in time."""
    tu, U = u.t, u.x
    last = tu.size - 2
    h = (tu[-1] - tu[0]) / (tu.size - 1) if tu.size > 1 else 0.0
    uniform = tu.size > 1 and np.allclose(np.diff(tu), h, rtol=1e-9, atol=0.0)

    def at(t):
        if not uniform:
            return np.array([np.interp(t, tu, U[:, j]) for j in range(U.shape[1])])
        s = min(max((t - tu[0]) / h, 0.0), last + 1.0)
        k = min(int(s), last)
        w = s - k
        return (1.0 - w) * U[k] + w * U[k + 1]

    def rhs(t, x):
        return system.R(x) + system.B(x) @ at(t)

    return rhs


def verify_tracking(system: AffineSystem, u: Trajectory, x0, grid: TimeGrid,
                    x_d: Trajectory) -> TrackingReport:
    """Simulate with the given control and report sup and final deviations."""
    sim = integrate_ivp(controlled_rhs(system, u), x0, grid)
    ref = x_d(grid.t)
    dev = np.abs(sim.x - ref)
    return TrackingReport(dev.max(axis=0), dev[-1], sim)


def stability_matrix(system: AffineSystem, x_d: Trajectory, xdot=None) -> np.ndarray:
    """M(t) = gradR(x_d) + T(x_d) for the open-loop deviation dynamics.

    T_ik = sum_j dB_ij/dx_k u_j with u = B+(x_d' - R(x_d)).
    """
    u = synthesize_control(system, x_d, xdot).x
    return np.array([system.gradR(xk) + np.einsum("ijk,j->ik", system.gradB(xk), uk)
                     for xk, uk in zip(x_d.x, u)])


# Output realization recipes ---------------------------------------------------


def _fhn_mixed(params, z: Signal, x0, grid):
    a0, a1, a2 = params["a0"], params["a1"], params["a2"]
    c1, c2 = params["c1"], params["c2"]
    if c2 == 0.0:
        raise RecipePreconditionViolated("FhnMixedOutput needs c2 != 0")
    t = grid.t
    zt, zdot = z.f(t), z.df(t)
    if abs(c1 * x0[0] + c2 * x0[1] - zt[0]) > 1e-12 * max(1.0, abs(zt[0])):
        raise InconsistentInitialState("z_d(t0) != c1*x0 + c2*y0")
    kappa = a1 - a2 * c1 / c2
    forcing = a0 + (a2 / c2) * zt
    x = solve_forced_linear([[kappa]], forcing, [x0[0]], grid).x[:, 0]
    xdot = kappa * x + forcing
    y = (zt - c1 * x) / c2
    ydot = (zdot - c1 * xdot) / c2
    return np.column_stack([x, y]), np.column_stack([xdot, ydot]), {"kappa": kappa}


def _fhn_activator_output(params, z: Signal, x0, grid):
    # inhibitor-controlled FHN, the activator y is the output
    if z.ddf is None:
        raise RecipePreconditionViolated("FhnActivatorOutput needs a second derivative of z_d")
    t = grid.t
    y, ydot, yddot = z.f(t), z.df(t), z.ddf(t)
    x = y - y ** 3 / 3.0 - ydot
    xdot = (1.0 - y ** 2) * ydot - yddot
    if abs(x[0] - x0[0]) > 1e-12 * max(1.0, abs(x0[0])) or abs(y[0] - x0[1]) > 1e-12 * max(1.0, abs(x0[1])):
        raise InconsistentInitialState("initial state not on the realizable manifold")
    return np.column_stack([x, y]), np.column_stack([xdot, ydot]), {}


def sir_parabola(beta: float, gamma: float, N: float, S0: float, I0: float,
                 t0: float, t1: float) -> Signal:
    """Parabola with z(t0)=I0, z(t1)=0 and z'(t0) chosen so that u(t0)=0."""
    slope = beta * I0 * S0 / N - gamma * I0
    span = t1 - t0
    curv = -(I0 + slope * span) / span ** 2
    return Signal(lambda t: I0 + slope * (t - t0) + curv * (t - t0) ** 2,
                  lambda t: slope + 2.0 * curv * (t - t0),
                  lambda t: 2.0 * curv + 0.0 * np.asarray(t, dtype=float))


def _sir_infected(params, z: Signal, x0, grid):
    beta, gamma, N = params["beta"], params["gamma"], params["N"]
    S0, I0, R0 = x0
    t = grid.t
    zt, zdot = z.f(t), z.df(t)
    if abs(zt[0] - I0) > 1e-12 * max(1.0, abs(I0)):
        raise InconsistentInitialState("z_d(t0) != I(t0)")
    Z = trapezoid_cumulative(zt, grid.dt)
    S = S0 + I0 - zt - gamma * Z
    R = R0 + gamma * Z
    if np.any(zt <= 0.0) or np.any(S <= 0.0):
        raise RecipePreconditionViolated("SirInfected needs z_d > 0 and S_d > 0 on the grid")
    x = np.column_stack([S, zt, R])
    xdot = np.column_stack([-gamma * zt - zdot, zdot, gamma * zt])
    u = N * (gamma * zt + zdot) / (zt * S) - beta
    return x, xdot, {"u_formula": u}


RECIPES = {
    "FhnMixedOutput": (_fhn_mixed, "fhn-activator"),
    "FhnActivatorOutput": (_fhn_activator_output, "fhn-inhibitor"),
    "SirInfected": (_sir_infected, "sir"),
}


def realize_output(recipe: str, params: dict, z_d: Signal, x0, grid: TimeGrid,
                   clip: bool = False) -> RealizationResult:
    """Full desired state and control from a scalar desired output.

    ``params`` holds the system parameters plus the recipe extras (c1, c2 for
    FhnMixedOutput). With ``clip`` the SIR control is limited to u >= -beta.
    """
    if recipe not in RECIPES:
        raise ValueError(f"unknown recipe '{recipe}'")
    build, sysname = RECIPES[recipe]
    sys_keys = {k: v for k, v in params.items() if k not in ("c1", "c2")}
    system = builtin_system(sysname, sys_keys)
    full = {**system.params, **params}
    x0 = np.asarray(x0, dtype=float)
    x, xdot, info = build(full, z_d, x0, grid)
    x_traj = Trajectory(grid.t, x)
    u = synthesize_control(system, x_traj, xdot)
    clipped = False
    if clip and recipe == "SirInfected":
        floor = -full["beta"]
        clipped = bool(np.any(u.x <= floor))
        u = Trajectory(u.t, np.maximum(u.x, floor))
        info["active_until"] = _first_crossing(grid.t, u.x[:, 0], floor)
    return RealizationResult(x_traj, u, constraint_residual(system, x, xdot), xdot,
                             clipped, {**info, "system": system})


def _first_crossing(t, u, floor):
    hit = np.nonzero(u <= floor)[0]
    return float(t[hit[0]]) if hit.size else float(t[-1])
