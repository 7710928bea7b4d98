"""Kalman, realizable-trajectory and output controllability matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .numerics import RANK_TOL, matrix_rank, pseudo_inverse_projectors


@dataclass(frozen=True)
class ControllabilityReport:
    matrix: np.ndarray
    rank: int
    required_rank: int
    controllable: bool

    def summary(self) -> str:
        verdict = "true" if self.controllable else "false"
        return f"rank={self.rank} required={self.required_rank} controllable={verdict}"


def _scale(A, B, C=None) -> float:
    # magnitude of the largest block the inputs can produce
    a = max(1.0, np.linalg.norm(A, 2))
    s = a ** (A.shape[0] - 1) * np.linalg.norm(B, 2)
    return s * (np.linalg.norm(C, 2) if C is not None else 1.0)


def _report(K, required, tol, scale=0.0):
    r = matrix_rank(K, tol, scale)
    return ControllabilityReport(K, r, required, r == required)


def _blocks(first: np.ndarray, step: np.ndarray, count: int) -> np.ndarray:
    cols, block = [], first
    for _ in range(count):
        cols.append(block)
        block = step @ block
    return np.hstack(cols)


def kalman_matrix(A, B, tol: float = RANK_TOL) -> ControllabilityReport:
    """K = [B | AB | ... | A^(n-1) B]."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return _report(_blocks(B, A, A.shape[0]), A.shape[0], tol, _scale(A, B))


def realizable_controllability_matrix(A, B, tol: float = RANK_TOL) -> ControllabilityReport:
    """K~ = [QAP | (QAQ) QAP | ... | (QAQ)^(n-1) QAP], required rank n - p."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    pr = pseudo_inverse_projectors(B, tol)
    QAP = pr.Q @ A @ pr.P
    QAQ = pr.Q @ A @ pr.Q
    n, p = B.shape
    return _report(_blocks(QAP, QAQ, n), n - p, tol, _scale(A, B))


def output_controllability_matrix(A, B, C, variant: str = "realizable",
                                  tol: float = RANK_TOL) -> ControllabilityReport:
    """Output controllability for y = C x.

    classic:    [CB | CAB | ... | CA^(n-1) B]
    realizable: [CP | CQAP | CQ(QAQ)QAP | ... | CQ(QAQ)^(n-1) QAP]
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    m = C.shape[0]
    if matrix_rank(C, tol) != m:
        raise RankDeficient("C lacks full row rank")
    if variant == "classic":
        K = C @ _blocks(B, A, n)
    elif variant == "realizable":
        pr = pseudo_inverse_projectors(B, tol)
        QAP = pr.Q @ A @ pr.P
        QAQ = pr.Q @ A @ pr.Q
        K = np.hstack([C @ pr.P, C @ pr.Q @ _blocks(QAP, QAQ, n)])
    else:
        raise ValueError(f"unknown variant '{variant}'")
    return _report(K, m, tol, _scale(A, B, C))


def format_matrix(M: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.6g}" for v in row) for row in np.atleast_2d(M))
