"""Affine control systems x' = R(x) + B(x) u and the builtin registry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import BadParameter, UnknownSystem
from .numerics import central_gradient, matrix_rank, pseudo_inverse_projectors


@dataclass(frozen=True)
class AffineSystem:
    """Control-affine dynamics.

    ``gradR(x)`` is n x n with entry [i, k] = dR_i/dx_k and ``gradB(x)`` is
    n x p x n with entry [i, j, k] = dB_ij/dx_k.
    """

    n: int
    p: int
    R: Callable[[np.ndarray], np.ndarray]
    B: Callable[[np.ndarray], np.ndarray]
    gradR: Callable[[np.ndarray], np.ndarray]
    gradB: Callable[[np.ndarray], np.ndarray]
    name: str
    params: Mapping[str, float] = field(default_factory=dict)

    def rhs(self, x, u) -> np.ndarray:
        return self.R(x) + self.B(x) @ np.atleast_1d(u)


@dataclass(frozen=True)
class DesiredTrajectory:
    """Per-component value and derivative functions of time.

    Components whose ``prescribed_mask`` entry is False are placeholders to be
    filled in by the constraint equation.
    """

    values: tuple
    derivatives: tuple
    prescribed_mask: tuple

    def __call__(self, t) -> np.ndarray:
        return np.array([f(t) if f is not None else np.nan for f in self.values])

    def dot(self, t) -> np.ndarray:
        return np.array([f(t) if f is not None else np.nan for f in self.derivatives])


@dataclass(frozen=True)
class Signal:
    """Scalar function of time with first and (optionally) second derivative."""

    f: Callable
    df: Callable
    ddf: Callable | None = None

    def __call__(self, t):
        return self.f(t)

    def shifted(self, alpha: float) -> "Signal":
        f = self.f
        return Signal(lambda t: f(t) + alpha, self.df, self.ddf)


def constant_signal(c: float) -> Signal:
    zero = lambda t: 0.0 * np.asarray(t, dtype=float)
    return Signal(lambda t: c + 0.0 * np.asarray(t, dtype=float), zero, zero)


def desired(values, derivatives, mask=None) -> DesiredTrajectory:
    mask = tuple(f is not None for f in values) if mask is None else tuple(mask)
    return DesiredTrajectory(tuple(values), tuple(derivatives), mask)


def _merge(defaults: dict, overrides: Mapping[str, float] | None) -> dict:
    params = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in params:
            raise BadParameter(f"unknown parameter '{key}' (known: {', '.join(sorted(params))})")
        params[key] = float(value)
    return params


def _coupling(b0, b2):
    """b(x) = b0 + b2 x^2 on the first state component."""

    def b(x):
        return b0 + b2 * x[0] ** 2

    def db(x):
        return np.array([2.0 * b2 * x[0], 0.0])

    return b, db


def _check_coupling(b0, b2, name):
    # b0 + b2 x^2 vanishes somewhere unless both are of the same sign and b0 != 0
    if b0 == 0.0 or b0 * b2 < 0.0:
        raise BadParameter(f"{name}: coupling b0 + b2*x^2 has a zero")


def _fhn_activator(params):
    a0, a1, a2 = params["a0"], params["a1"], params["a2"]
    r = params["r_on"]
    _check_coupling(params["b0"], params["b2"], "fhn-activator")
    b, db = _coupling(params["b0"], params["b2"])

    def R(x):
        return np.array([a0 + a1 * x[0] + a2 * x[1], r * (x[1] - x[1] ** 3 / 3.0 - x[0])])

    def gradR(x):
        return np.array([[a1, a2], [-r, r * (1.0 - x[1] ** 2)]])

    def B(x):
        return np.array([[0.0], [b(x)]])

    def gradB(x):
        g = np.zeros((2, 1, 2))
        g[1, 0, :] = db(x)
        return g

    return AffineSystem(2, 1, R, B, gradR, gradB, "fhn-activator", params)


def _fhn_kinetics(a0, a1, a2):
    def R(x):
        return np.array([a0 + a1 * x[0] + a2 * x[1], x[1] - x[1] ** 3 / 3.0 - x[0]])

    def gradR(x):
        return np.array([[a1, a2], [-1.0, 1.0 - x[1] ** 2]])

    return R, gradR


def _fhn_inhibitor(params):
    R, gradR = _fhn_kinetics(params["a0"], params["a1"], params["a2"])
    Bc = np.array([[1.0], [0.0]])
    return AffineSystem(2, 1, R, lambda x: Bc, gradR, lambda x: np.zeros((2, 1, 2)),
                        "fhn-inhibitor", params)


def _fhn_both(params):
    R, gradR = _fhn_kinetics(params["a0"], params["a1"], params["a2"])
    return AffineSystem(2, 2, R, lambda x: np.eye(2), gradR, lambda x: np.zeros((2, 2, 2)),
                        "fhn-both", params)


def _mechanical(params):
    gamma, w2 = params["gamma"], params["omega2"]
    _check_coupling(params["b0"], params["b2"], "mechanical")
    b, db = _coupling(params["b0"], params["b2"])

    def R(x):
        return np.array([x[1], -gamma * x[1] - w2 * np.sin(x[0])])

    def gradR(x):
        return np.array([[0.0, 1.0], [-w2 * np.cos(x[0]), -gamma]])

    def B(x):
        return np.array([[0.0], [b(x)]])

    def gradB(x):
        g = np.zeros((2, 1, 2))
        g[1, 0, :] = db(x)
        return g

    return AffineSystem(2, 1, R, B, gradR, gradB, "mechanical", params)


def _free_particle(params):
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    Bc = np.array([[0.0], [1.0]])
    return AffineSystem(2, 1, lambda x: A @ x, lambda x: Bc, lambda x: A,
                        lambda x: np.zeros((2, 1, 2)), "free-particle", params)


def _diagonal_lti(params):
    A = np.diag([params["lambda1"], params["lambda2"]])
    Bc = np.array([[1.0], [1.0]])
    return AffineSystem(2, 1, lambda x: A @ x, lambda x: Bc, lambda x: A,
                        lambda x: np.zeros((2, 1, 2)), "diagonal-lti", params)


def _sir(params):
    beta, gamma, N = params["beta"], params["gamma"], params["N"]
    if N <= 0:
        raise BadParameter("sir: N must be positive")

    def R(x):
        s, i, _ = x
        flow = beta * s * i / N
        return np.array([-flow, flow - gamma * i, gamma * i])

    def gradR(x):
        s, i, _ = x
        ds, di = beta * i / N, beta * s / N
        return np.array([[-ds, -di, 0.0], [ds, di - gamma, 0.0], [0.0, gamma, 0.0]])

    def B(x):
        s, i, _ = x
        return np.array([[-s * i / N], [s * i / N], [0.0]])

    def gradB(x):
        s, i, _ = x
        g = np.zeros((3, 1, 3))
        g[0, 0, :2] = [-i / N, -s / N]
        g[1, 0, :2] = [i / N, s / N]
        return g

    return AffineSystem(3, 1, R, B, gradR, gradB, "sir", params)


def cart_matrices(params) -> tuple[np.ndarray, np.ndarray]:
    g, M = params["g"], params["M"]
    m1, m2, l1, l2 = params["m1"], params["m2"], params["l1"], params["l2"]
    A = np.zeros((6, 6))
    A[0, 3] = A[1, 4] = 1.0
    A[2, 5] = 1.0 / M
    A[3, :2] = [g * (m1 + M) / (l1 * M), g * m2 / (l1 * M)]
    A[4, :2] = [g * m1 / (l2 * M), g * (m2 + M) / (l2 * M)]
    A[5, :2] = [-g * m1, -g * m2]
    B = np.array([[0.0], [0.0], [0.0], [-1.0 / (l1 * M)], [-1.0 / (l2 * M)], [1.0]])
    return A, B


def _cart(params):
    if min(params["M"], params["l1"], params["l2"]) <= 0:
        raise BadParameter("cart-two-pendulums: M, l1, l2 must be positive")
    A, Bc = cart_matrices(params)
    return AffineSystem(6, 1, lambda x: A @ x, lambda x: Bc, lambda x: A,
                        lambda x: np.zeros((6, 1, 6)), "cart-two-pendulums", params)


def _schloegl(params):
    k, r0, r1, r2, k1p = params["k"], params["x0"], params["x1"], params["x2"], params["k1p"]

    def R(x):
        return np.array([-k * (x[0] - r0) * (x[0] - r1) * (x[0] - r2)])

    def gradR(x):
        y = x[0]
        d = (y - r1) * (y - r2) + (y - r0) * (y - r2) + (y - r0) * (y - r1)
        return np.array([[-k * d]])

    def B(x):
        return np.array([[k1p * x[0] ** 2]])

    def gradB(x):
        return np.array([[[2.0 * k1p * x[0]]]])

    return AffineSystem(1, 1, R, B, gradR, gradB, "schloegl-kinetics", params)


FHN_DEFAULTS = {"a0": 0.056, "a1": -0.064, "a2": 0.08}

_REGISTRY = {
    "fhn-activator": (_fhn_activator, {**FHN_DEFAULTS, "b0": 1.0, "b2": 0.0, "r_on": 1.0}),
    "fhn-inhibitor": (_fhn_inhibitor, dict(FHN_DEFAULTS)),
    "fhn-both": (_fhn_both, dict(FHN_DEFAULTS)),
    "mechanical": (_mechanical, {"gamma": 0.1, "omega2": 1.0, "b0": 1.0, "b2": 0.0}),
    "free-particle": (_free_particle, {}),
    "diagonal-lti": (_diagonal_lti, {"lambda1": 1.0, "lambda2": 2.0}),
    "sir": (_sir, {"beta": 0.36, "gamma": 0.2, "N": 1.0}),
    "cart-two-pendulums": (_cart, {"g": 9.81, "M": 1.0, "m1": 0.1, "m2": 0.2,
                                   "l1": 0.5, "l2": 1.0}),
    "schloegl-kinetics": (_schloegl, {"k": 1.0, "x0": 1.0, "x1": 1.5, "x2": 3.0,
                                      "k1p": 1.0}),
}

BUILTIN_NAMES = tuple(_REGISTRY)


def builtin_defaults(name: str) -> dict:
    if name not in _REGISTRY:
        raise UnknownSystem(f"unknown system '{name}'")
    return dict(_REGISTRY[name][1])


def builtin_system(name: str, overrides: Mapping[str, float] | None = None) -> AffineSystem:
    """Look up a builtin system and apply numeric parameter overrides."""
    if name not in _REGISTRY:
        raise UnknownSystem(f"unknown system '{name}' (known: {', '.join(BUILTIN_NAMES)})")
    factory, defaults = _REGISTRY[name]
    return factory(_merge(defaults, overrides))


def probe_states(n: int, count: int = 20, box: float = 3.0, seed: int = 42) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-box, box, size=(count, n))


def jacobian_errors(system: AffineSystem, states, h: float = 1e-5) -> tuple[float, float]:
    """Largest relative mismatch of gradR and gradB against central differences."""
    worst_r = worst_b = 0.0
    for x in states:
        fd_r = central_gradient(system.R, x, h)
        fd_b = central_gradient(system.B, x, h)
        an_r, an_b = system.gradR(x), system.gradB(x)
        worst_r = max(worst_r, np.max(np.abs(fd_r - an_r)) / max(1.0, np.max(np.abs(an_r))))
        worst_b = max(worst_b, np.max(np.abs(fd_b - an_b)) / max(1.0, np.max(np.abs(an_b))))
    return worst_r, worst_b


def full_rank_everywhere(system: AffineSystem, states) -> bool:
    return all(matrix_rank(system.B(x)) == system.p for x in states)


def reference_projectors(system: AffineSystem, x=None):
    """Projectors at a reference state (constant under the linearizing assumption)."""
    if x is None:
        x = np.linspace(0.3, 0.7, system.n)
    return pseudo_inverse_projectors(system.B(np.asarray(x, dtype=float)))


def affine_part(system: AffineSystem, x_ref=None) -> tuple[np.ndarray, np.ndarray]:
    """Extract (A, b) with Q R(x) = A x + b, Q taken at a reference state."""
    Q = reference_projectors(system, x_ref).Q
    n = system.n
    r0 = system.R(np.zeros(n))
    A = np.column_stack([Q @ (system.R(e) - r0) for e in np.eye(n)])
    return A, Q @ r0


def satisfies_linearizing_assumption(system: AffineSystem, states=None, tol: float = 1e-10) -> bool:
    """Constant projectors plus Q R affine, checked on probe states."""
    if states is None:
        states = probe_states(system.n)
    states = [x for x in states if matrix_rank(system.B(x)) == system.p]
    if not states:
        return False
    Q0 = pseudo_inverse_projectors(system.B(states[0])).Q
    for x in states[1:]:
        if np.max(np.abs(pseudo_inverse_projectors(system.B(x)).Q - Q0)) > tol:
            return False
    A, b = affine_part(system, states[0])
    for x in states:
        ref = Q0 @ system.R(x)
        if np.max(np.abs(ref - (A @ x + b))) > tol * max(1.0, np.max(np.abs(ref))):
            return False
    return True


def collinear_qr(system: AffineSystem, x_a, x_b, tol: float = 1e-10) -> bool:
    """Q R at x_a, the midpoint and x_b lie on a line."""
    x_a, x_b = np.asarray(x_a, float), np.asarray(x_b, float)
    Q = reference_projectors(system, x_a).Q
    pts = [Q @ system.R(x) for x in (x_a, 0.5 * (x_a + x_b), x_b)]
    mid = 0.5 * (pts[0] + pts[2])
    return bool(np.max(np.abs(mid - pts[1])) <= tol * max(1.0, np.max(np.abs(pts[1]))))
