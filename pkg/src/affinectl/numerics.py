"""Dense linear algebra, projectors and fixed-step ODE integration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NonFinite, NotPositiveDefinite, RankDeficient

RANK_TOL = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 + k*dt, k = 0..steps."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("TimeGrid needs t1 > t0")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("TimeGrid needs a positive integer step count")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.t1, self.steps * factor)


@dataclass(frozen=True)
class Trajectory:
    """Samples ``x[k]`` (shape steps+1 by n) at the times ``t[k]``."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] != t.shape[0]:
            raise ValueError("trajectory samples and times differ in length")
        t.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __call__(self, t):
        """Linear interpolation at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, self.t, self.x[:, j]) for j in range(self.dim)]
        return np.stack(cols, axis=-1)

    def component(self, j: int) -> np.ndarray:
        return self.x[:, j]


@dataclass(frozen=True)
class ProjectorPair:
    Bplus: np.ndarray
    P: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True)
class WeightedProjectorPair:
    S: np.ndarray
    Bg: np.ndarray
    PS: np.ndarray
    QS: np.ndarray
    OmegaS: np.ndarray
    GammaS: np.ndarray


def _as_matrix(B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    return B


def _check_full_column_rank(B: np.ndarray, tol: float) -> None:
    s = np.linalg.svd(B, compute_uv=False)
    if s.size == 0 or s[0] == 0.0 or s[-1] < tol * s[0] or B.shape[1] > B.shape[0]:
        raise RankDeficient(f"B ({B.shape[0]}x{B.shape[1]}) lacks full column rank")


def pseudo_inverse_projectors(B, tol: float = RANK_TOL) -> ProjectorPair:
    """Moore-Penrose inverse of a full column rank B and the projectors
    P = B B+ and Q = 1 - P."""
    B = _as_matrix(B)
    if B.shape[1] == 1:
        # a single column is perfectly conditioned; skip the factorizations
        nb2 = float(B[:, 0] @ B[:, 0])
        if nb2 == 0.0:
            raise RankDeficient(f"B ({B.shape[0]}x1) lacks full column rank")
        Bplus = B.T / nb2
        P = B @ Bplus
        P = 0.5 * (P + P.T)
        return ProjectorPair(Bplus, P, np.eye(B.shape[0]) - P)
    _check_full_column_rank(B, tol)
    # (B^T B)^-1 B^T = R^-1 Q^T without squaring the condition number
    Qb, Rb = np.linalg.qr(B)
    Bplus = scipy.linalg.solve_triangular(Rb, Qb.T)
    P = Qb @ Qb.T
    P = 0.5 * (P + P.T)
    Q = np.eye(B.shape[0]) - P
    return ProjectorPair(Bplus, P, Q)


def weighted_inverse(B, S) -> WeightedProjectorPair:
    """Generalized reflexive inverse Bg = (B^T S B)^-1 B^T S and friends."""
    B = _as_matrix(B)
    S = np.asarray(S, dtype=float)
    # with B = Q R, B^T S B = R^T (Q^T S Q) R; only the small core is inverted
    Qb, Rb = np.linalg.qr(B)
    core = Qb.T @ S @ Qb
    core = 0.5 * (core + core.T)
    try:
        np.linalg.cholesky(B.T @ S @ B)
        core_inv = np.linalg.inv(core)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("B^T S B is not positive definite") from None
    Bg = scipy.linalg.solve_triangular(Rb, core_inv @ Qb.T @ S)
    PS = B @ Bg
    QS = np.eye(B.shape[0]) - PS
    OmegaS = Qb @ core_inv @ Qb.T
    GammaS = Bg.T @ Bg
    return WeightedProjectorPair(S, Bg, PS, QS, OmegaS, GammaS)


def matrix_rank(M, tol: float = RANK_TOL, scale: float = 0.0) -> int:
    """Number of singular values above ``tol`` times the largest one.

    ``scale`` is an optional magnitude of the data the matrix was built from;
    the threshold never drops below ``tol * scale``, so a matrix that is zero up
    to rounding in its inputs has rank 0.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * max(s[0], scale)))


def state_transition(A, t: float, t0: float) -> np.ndarray:
    """exp(A (t - t0)) for constant A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return scipy.linalg.expm(A * (t - t0))


def _eval_forcing(f, times: np.ndarray, n: int) -> np.ndarray:
    if callable(f):
        return np.array([np.broadcast_to(np.asarray(f(s), dtype=float), (n,)) for s in times])
    F = np.asarray(f, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != times.shape[0]:
        raise ValueError("sampled forcing does not match the grid")
    return F


def solve_forced_linear(A, f, x0, grid: TimeGrid, refine: int = 1) -> Trajectory:
    """x' = A x + f(t) via the variation-of-constants formula.

    The convolution is the composite trapezoid rule on the grid (optionally
    refined by an integer factor). ``f`` is a callable of time or an array of
    samples on the (refined) grid.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    x0 = np.asarray(x0, dtype=float).reshape(n)
    fine = grid.refined(refine)
    times = fine.t
    F = _eval_forcing(f, times, n)
    dt = fine.dt
    E = scipy.linalg.expm(A * dt)
    out = np.empty((times.size, n))
    # G_k = sum_j w_j Phi(t_k - t_j) f_j with trapezoid weights.
    G = 0.5 * F[0]
    state = x0.copy()
    out[0] = x0
    for k in range(1, times.size):
        G = E @ G + F[k]
        state = E @ state
        out[k] = state + dt * (G - 0.5 * F[k])
    return Trajectory(grid.t, out[::refine])


def rk4_step(rhs, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, x)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_ivp(rhs, x0, grid: TimeGrid) -> Trajectory:
    """Classical fixed-step RK4; ``rhs(t, x)`` returns dx/dt."""
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    times = grid.t
    h = grid.dt
    out = np.empty((times.size, x.size))
    out[0] = x
    for k in range(grid.steps):
        x = rk4_step(rhs, times[k], x, h)
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"state became non-finite at t={times[k + 1]:.6g}")
        out[k + 1] = x
    return Trajectory(times, out)


def diagonalize_projector(B, tol: float = RANK_TOL):
    """Return (T, QD) with T^-1 Q T = QD = diag(0,..,0,1,..,1).

    The first p columns of T are the columns of B; the remaining ones are
    independent columns of Q, each scaled to unit max-norm.
    """
    B = _as_matrix(B)
    n, p = B.shape
    proj = pseudo_inverse_projectors(B, tol)
    cols = [B[:, j] for j in range(p)]
    for j in range(n):
        if len(cols) == n:
            break
        q = proj.Q[:, j]
        scale = np.max(np.abs(q))
        if scale <= tol:
            continue
        trial = np.column_stack(cols + [q / scale])
        if matrix_rank(trial, tol) == trial.shape[1]:
            cols.append(q / scale)
    T = np.column_stack(cols)
    if T.shape[1] != n:
        raise RankDeficient("could not complete the projector basis")
    QD = np.diag(np.r_[np.zeros(p), np.ones(n - p)])
    return T, QD


def trapezoid_cumulative(y: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral along axis 0, starting at zero."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)
    return out


def central_gradient(fun, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector (or matrix) valued function.

    The differentiation index is the last axis of the result.
    """
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    out = np.empty(f0.shape + (x.size,))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[..., i] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h)
    return out
