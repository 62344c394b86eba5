"""Linear and nonlinear solvers for the discrete regularized problem."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    ComplexField,
    ProblemSpec,
    _values,
    assemble_jacobian,
    assemble_residual,
    assemble_system,
    v_norm,
)

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-14
MAX_HALVINGS = 8
STAGNATION = 1e-3


class SingularMatrixError(RuntimeError):
    def __init__(self, message, pivot=None):
        self.pivot = pivot
        super().__init__(message)


class SingularJacobianError(SingularMatrixError):
    pass


@dataclass
class SolverReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    final_relative_residual: float = float("nan")
    wall_time: float = 0.0
    method: str = ""
    picard_fallbacks: int = 0


@dataclass
class NonlinearSettings:
    r_tol: float = 1e-8
    a_tol: float = 0.0
    max_iterations: int = 50
    damping: float = 1.0
    initial_guess: Optional[ComplexField] = None

    def __post_init__(self):
        if not 0 < self.r_tol < 1:
            raise ValueError(f"r_tol must lie in (0, 1), got {self.r_tol}")
        if self.a_tol < 0:
            raise ValueError(f"a_tol must be >= 0, got {self.a_tol}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")


def factorize(A: sp.spmatrix):
    """Sparse LU (SuperLU, COLAMD ordering, partial pivoting) with a pivot-size check."""
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    scale = abs(A).max() if A.nnz else 0.0
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        # exactly singular: locate the offending pivot on a slightly shifted copy
        shift = 1.5e-8 * (scale or 1.0)
        col = None
        try:
            probe = spla.splu((A + shift * sp.identity(A.shape[0], format="csc")).tocsc(), permc_spec="COLAMD")
            col = int(probe.perm_c[int(np.argmin(np.abs(probe.U.diagonal())))])
        except RuntimeError:
            pass
        raise SingularMatrixError(f"sparse LU failed ({exc}); zero pivot at column {col}", pivot=col) from exc
    piv = np.abs(lu.U.diagonal())
    k = int(np.argmin(piv)) if piv.size else 0
    if scale == 0.0 or piv[k] < PIVOT_TOL * scale:
        col = int(lu.perm_c[k]) if piv.size else 0
        raise SingularMatrixError(
            f"numerically singular matrix: pivot {k} (column {col}) has magnitude {piv[k] if piv.size else 0:.3e}",
            pivot=col,
        )
    return lu


def solve_linear(A: sp.spmatrix, b) -> np.ndarray:
    b = np.asarray(b)
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {A.shape} and {b.shape}")
    lu = factorize(A.astype(np.result_type(A.dtype, b.dtype)))
    return lu.solve(b.astype(lu.U.dtype))


def _start(spec: ProblemSpec, settings: NonlinearSettings) -> np.ndarray:
    if settings.initial_guess is None:
        return spec.initial_guess().values.copy()
    x = _values(spec, settings.initial_guess).copy()
    return spec.lift(x)


def _converged(norm, norm0, settings):
    return norm <= settings.r_tol * norm0 + settings.a_tol


def _relative(norm, norm0):
    return norm / norm0 if norm0 > 0 else 0.0


def picard_step(spec: ProblemSpec, xi: np.ndarray) -> np.ndarray:
    """One application of the fixed-point map: solve the problem frozen at Re(xi)."""
    A, rhs = assemble_system(spec, xi)
    return solve_linear(A, rhs)


def picard_solve(spec: ProblemSpec, settings: NonlinearSettings | None = None):
    """Fixed-point iteration xi_{k+1} = T(xi_k); returns (ComplexField, SolverReport)."""
    settings = settings or NonlinearSettings()
    t0 = time.perf_counter()
    xi = _start(spec, settings)
    r0 = float(np.linalg.norm(assemble_residual(spec, xi)))
    report = SolverReport(residual_history=[r0], method="picard")
    first_step = None
    if _converged(r0, r0, settings) and r0 <= settings.a_tol:
        report.converged = True
    while not report.converged and report.iterations < settings.max_iterations:
        new = picard_step(spec, xi)
        if settings.damping < 1:
            new = xi + settings.damping * (new - xi)
        step = v_norm(spec.mesh, new - xi)
        first_step = step if first_step is None else first_step
        xi = new
        report.iterations += 1
        r = float(np.linalg.norm(assemble_residual(spec, xi)))
        report.residual_history.append(r)
        log.debug("picard %d: residual %.3e step %.3e", report.iterations, r, step)
        if _converged(r, r0, settings) or step <= settings.r_tol * first_step:
            report.converged = True
    report.final_relative_residual = _relative(report.residual_history[-1], r0)
    report.wall_time = time.perf_counter() - t0
    return ComplexField(spec.mesh, xi), report


def newton_solve(spec: ProblemSpec, settings: NonlinearSettings | None = None):
    """Damped Newton on the real/imaginary split; returns (ComplexField, SolverReport).

    Steps are halved (at most 8 times) until the residual norm decreases.  If
    no halving helps, or two accepted steps in a row reduce the residual by
    less than 0.1 %, one Picard sweep is taken instead.
    """
    settings = settings or NonlinearSettings()
    t0 = time.perf_counter()
    n = spec.mesh.n_vertices
    xi = _start(spec, settings)
    F = assemble_residual(spec, xi)
    r = r0 = float(np.linalg.norm(F))
    report = SolverReport(residual_history=[r0], method="newton")
    report.converged = r0 <= settings.a_tol
    slow = 0
    while not report.converged and report.iterations < settings.max_iterations:
        J = assemble_jacobian(spec, xi)
        try:
            lu = factorize(J)
        except SingularMatrixError as exc:
            raise SingularJacobianError(
                f"singular Jacobian at Newton iteration {report.iterations + 1} ({exc}); "
                "the linearized sign-changing operator is singular here, try a larger epsilon",
                pivot=exc.pivot,
            ) from exc
        d = lu.solve(-np.concatenate([F.real, F.imag]))
        delta = d[:n] + 1j * d[n:]

        t = settings.damping
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            trial = xi + t * delta
            F_trial = assemble_residual(spec, trial)
            r_trial = float(np.linalg.norm(F_trial))
            if r_trial < r:
                accepted = True
                break
            t *= 0.5
        if accepted and r_trial > (1 - STAGNATION) * r:
            slow += 1
        elif accepted:
            slow = 0
        if not accepted or slow >= 2:
            trial = picard_step(spec, xi)
            F_trial = assemble_residual(spec, trial)
            r_trial = float(np.linalg.norm(F_trial))
            report.picard_fallbacks += 1
            slow = 0
            log.debug("newton %d: Picard fallback", report.iterations + 1)
        xi, F, r = trial, F_trial, r_trial
        report.iterations += 1
        report.residual_history.append(r)
        log.debug("newton %d: residual %.3e (step %.3g)", report.iterations, r, t)
        report.converged = _converged(r, r0, settings)
    report.final_relative_residual = _relative(r, r0)
    report.wall_time = time.perf_counter() - t0
    return ComplexField(spec.mesh, xi), report


def solve(spec: ProblemSpec, settings: NonlinearSettings | None = None, method: str = "newton"):
    if method == "newton":
        return newton_solve(spec, settings)
    if method == "picard":
        return picard_solve(spec, settings)
    raise ValueError(f"unknown solver {method!r}")
