"""Matrix-free Krylov solvers for symmetric systems.

``minres`` follows Paige & Saunders' MINRES (with optional SPD
preconditioning) and tolerates singular and indefinite operators; ``cg``
is plain (preconditioned) conjugate gradients for SPD operators.  Both
accept anything that maps a vector to ``A @ vector``: a dense array, a
callable, or an object with an ``apply`` method.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

CONVERGED = "converged"
MAX_ITER = "max_iter"
BREAKDOWN = "breakdown"


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-5
    max_iterations: int = 200
    preconditioner: str = "none"
    warm_start: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveResult:
    solution: np.ndarray
    iterations: int
    final_relative_residual: float
    termination: str
    estimated_relative_residual: float = float("nan")
    residual_trace: list[float] = field(default_factory=list)

    def diagnostics(self) -> dict:
        return {
            "iterations": self.iterations,
            "relative_residual": self.final_relative_residual,
            "termination": self.termination,
            "residual_trace": list(self.residual_trace),
        }


def as_matvec(op) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(op, np.ndarray):
        return lambda y: op @ y
    if hasattr(op, "apply"):
        return op.apply
    if callable(op):
        return op
    raise TypeError(f"cannot use {type(op).__name__} as a linear operator")


def _jacobi(op, config: SolverConfig, diagonal):
    if config.preconditioner == "none" and diagonal is None:
        return None
    if diagonal is None:
        if isinstance(op, np.ndarray):
            diagonal = np.diag(op)
        elif hasattr(op, "diagonal"):
            diagonal = op.diagonal()
        else:
            raise ValueError("Jacobi preconditioning needs the operator diagonal")
    diagonal = np.asarray(diagonal, dtype=float)
    if np.any(diagonal <= 0) or not np.all(np.isfinite(diagonal)):
        raise ValueError("Jacobi diagonal must be positive and finite")
    return 1.0 / diagonal


def _finish(matvec, rhs, x, iterations, termination, estimate, trace) -> SolveResult:
    g_norm = np.linalg.norm(rhs)
    r = np.linalg.norm(matvec(x) - rhs)
    rel = r / g_norm if g_norm > 0 else r
    return SolveResult(x, iterations, float(rel), termination, float(estimate), trace)


def minres(op, rhs, x0=None, config: SolverConfig | None = None, diagonal=None,
           callback: Callable[[np.ndarray], None] | None = None) -> SolveResult:
    """Minimum-residual solve of ``A x = rhs`` for symmetric ``A``.

    Stops once the relative residual ``||A x - rhs|| / ||rhs||`` drops to
    ``config.tolerance``.  With a Jacobi preconditioner the recurrence
    tracks a preconditioned norm, so the true residual is checked before
    stopping.  Started from zero on a consistent singular system the
    iterates approach the minimum-norm solution.  Non-finite arithmetic ends the solve with
    ``termination == "breakdown"`` and the last finite iterate.
    """
    config = SolverConfig() if config is None else config
    matvec = as_matvec(op)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if x.shape != rhs.shape:
        raise ValueError("x0 and rhs must have the same shape")
    minv = _jacobi(op, config, diagonal)
    precond = (lambda r: minv * r) if minv is not None else (lambda r: r)

    if not np.any(rhs):
        return _finish(matvec, rhs, x, 0, CONVERGED, 0.0, [])

    r1 = rhs - matvec(x)
    y = precond(r1)
    beta1 = float(r1 @ y)
    g_scale = np.sqrt(float(rhs @ precond(rhs)))
    if not np.isfinite(beta1) or beta1 < 0:
        return _finish(matvec, rhs, x, 0, BREAKDOWN, np.nan, [])
    beta1 = np.sqrt(beta1)
    trace = [beta1 / g_scale]
    if beta1 == 0 or trace[0] <= config.tolerance:
        return _finish(matvec, rhs, x, 0, CONVERGED, trace[0], trace)

    eps = np.finfo(float).eps
    oldb, beta = 0.0, beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    termination = MAX_ITER
    itn = 0
    for itn in range(1, config.max_iterations + 1):
        v = y / beta
        y = matvec(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = precond(r2)
        oldb = beta
        beta_sq = float(r2 @ y)
        if not np.isfinite(alfa) or not np.isfinite(beta_sq) or beta_sq < 0:
            termination = BREAKDOWN
            itn -= 1
            break
        beta = np.sqrt(beta_sq)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x_new = x + phi * w
        if not np.all(np.isfinite(x_new)):
            termination = BREAKDOWN
            itn -= 1
            break
        x = x_new
        if callback is not None:
            callback(x)
        trace.append(phibar / g_scale)
        if trace[-1] <= config.tolerance:
            if minv is None:
                termination = CONVERGED
                break
            # The estimate is in the preconditioned norm; confirm the true residual.
            true_rel = np.linalg.norm(matvec(x) - rhs) / np.linalg.norm(rhs)
            if true_rel <= config.tolerance:
                termination = CONVERGED
                break
        if beta <= eps * beta1:
            # Krylov space exhausted without reaching the tolerance.
            termination = BREAKDOWN
            break
    return _finish(matvec, rhs, x, itn, termination, trace[-1], trace)


def cg(op, rhs, x0=None, config: SolverConfig | None = None, diagonal=None,
       callback: Callable[[np.ndarray], None] | None = None) -> SolveResult:
    """Conjugate gradients for SPD ``A``; non-positive curvature is a breakdown."""
    config = SolverConfig() if config is None else config
    matvec = as_matvec(op)
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    minv = _jacobi(op, config, diagonal)
    g_norm = np.linalg.norm(rhs)
    if g_norm == 0:
        return _finish(matvec, rhs, x, 0, CONVERGED, 0.0, [])
    r = rhs - matvec(x)
    trace = [np.linalg.norm(r) / g_norm]
    if trace[0] <= config.tolerance:
        return _finish(matvec, rhs, x, 0, CONVERGED, trace[0], trace)
    z = minv * r if minv is not None else r
    p = z.copy()
    rz = float(r @ z)
    termination = MAX_ITER
    k = 0
    for k in range(1, config.max_iterations + 1):
        Ap = matvec(p)
        curvature = float(p @ Ap)
        if not np.isfinite(curvature) or curvature <= 0:
            termination = BREAKDOWN
            k -= 1
            break
        a = rz / curvature
        x = x + a * p
        r = r - a * Ap
        if callback is not None:
            callback(x)
        trace.append(np.linalg.norm(r) / g_norm)
        if not np.isfinite(trace[-1]):
            termination = BREAKDOWN
            break
        if trace[-1] <= config.tolerance:
            termination = CONVERGED
            break
        z = minv * r if minv is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return _finish(matvec, rhs, x, k, termination, trace[-1], trace)


SOLVERS = {"minres": minres, "cg": cg}
