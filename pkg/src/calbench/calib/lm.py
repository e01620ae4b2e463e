"""Levenberg-Marquardt with Marquardt (column-norm) scaling.

Problems supply ``residual(x)`` and ``jacobian(x)``; the Jacobian may be a
dense array or a scipy sparse matrix.  The normal matrix is formed densely,
which is cheap for calibration-sized problems (a few hundred parameters).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import scipy.linalg
import scipy.sparse

from ..errors import NumericalFailure


class LMProblem(Protocol):
    def residual(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray): ...


@dataclass(frozen=True)
class FunctionProblem:
    """Adapter turning two callables into an :class:`LMProblem`."""

    residual_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Callable[[np.ndarray], np.ndarray]

    def residual(self, x):
        return self.residual_fn(x)

    def jacobian(self, x):
        return self.jacobian_fn(x)


@dataclass(frozen=True)
class LMConfig:
    max_iter: int = 200
    lambda0: float = 1e-4
    # gradient test: largest cosine between the residual and a Jacobian column
    gtol: float = 1e-10
    # step test: relative parameter change
    xtol: float = 1e-12
    lambda_up: float = 2.0
    lambda_down: float = 0.3
    max_rejects: int = 60


@dataclass
class LMResult:
    x: np.ndarray
    cost: float  # 0.5 * ||r||^2
    iterations: int  # accepted steps
    converged: bool
    reason: str
    cost_history: list[float] = field(default_factory=list)
    evaluations: int = 0


def _normal_equations(J, r):
    if scipy.sparse.issparse(J):
        A = (J.T @ J).toarray()
        g = J.T @ r
    else:
        A = J.T @ J
        g = J.T @ r
    return np.asarray(A, dtype=float), np.asarray(g, dtype=float).ravel()


def _check_finite(J, what):
    data = J.data if scipy.sparse.issparse(J) else J
    if not np.isfinite(data).all():
        raise NumericalFailure(f"non-finite {what}")


def lm_optimize(problem: LMProblem, x0, config: LMConfig = LMConfig()) -> LMResult:
    """Minimise ``0.5 * ||problem.residual(x)||^2`` from ``x0``.

    Trial points with a non-finite residual count as rejected steps (they
    typically push a point behind the camera); a non-finite residual at
    ``x0`` or a non-finite Jacobian raises :class:`NumericalFailure`.
    """
    x = np.array(x0, dtype=float)
    r = np.asarray(problem.residual(x), dtype=float)
    if not np.isfinite(r).all():
        raise NumericalFailure("non-finite residual at the initial point")
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = config.lambda0
    evals = 1
    it = 0
    tiny = np.finfo(float).tiny
    while True:
        if cost <= tiny:
            return LMResult(x, cost, it, True, "zero residual", history, evals)
        J = problem.jacobian(x)
        _check_finite(J, "Jacobian")
        A, g = _normal_equations(J, r)
        d = np.sqrt(np.diag(A))
        d[d == 0] = 1.0
        rnorm = np.sqrt(2.0 * cost)
        if np.abs(g / d).max() <= config.gtol * rnorm:
            return LMResult(x, cost, it, True, "gradient", history, evals)
        if it >= config.max_iter:
            return LMResult(x, cost, it, False, "max_iter", history, evals)
        As = A / np.outer(d, d)
        gs = g / d
        accepted = False
        for _ in range(config.max_rejects):
            M = As + lam * np.eye(len(x))
            try:
                y = scipy.linalg.solve(M, -gs, assume_a="pos")
            except (np.linalg.LinAlgError, ValueError):
                lam *= config.lambda_up
                continue
            step = y / d
            if np.linalg.norm(step) <= config.xtol * (np.linalg.norm(x) + config.xtol):
                return LMResult(x, cost, it, True, "step", history, evals)
            x_new = x + step
            r_new = np.asarray(problem.residual(x_new), dtype=float)
            evals += 1
            cost_new = 0.5 * float(r_new @ r_new) if np.isfinite(r_new).all() else np.inf
            if cost_new < cost:
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam * config.lambda_down, 1e-15)
                accepted = True
                break
            lam *= config.lambda_up
        if not accepted:
            return LMResult(x, cost, it, False, "no decrease", history, evals)
        it += 1
        history.append(cost)
