"""Coupled Riccati recursions for jump-linear quadratic control.

Finite horizon: a backward recursion couples the per-mode matrices through
the transition-weighted average W_i = sum_j transition[i, j] P[j](k+1):

    Upsilon[i](k) = B[i]' W_i B[i] + R[i]
    M[i](k)       = B[i]' W_i A[i]
    P[i](k)       = A[i]' W_i A[i] + Q[i] - M[i](k)' Upsilon[i](k)^{-1} M[i](k)

with the optimal feedback u(k) = -Upsilon[i](k)^{-1} M[i](k) x(k) and optimal
cost sum_i pi0[i] x0' P[i](0) x0.  The recursion is well defined exactly when
every Upsilon[i](k) is positive definite; a semi-definite or indefinite term
raises :class:`RiccatiBreakdown`.

Infinite horizon: iterating the same step from P = 0 (value iteration) drives
the per-mode matrices to the fixed point of the coupled algebraic Riccati
equation whenever a mean-square stabilizing controller exists; divergence of
the iterates is the non-existence signal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    InvalidInput,
    InvalidState,
    NotStabilizable,
    NumericalFailure,
    ObservabilityViolation,
    PreconditionFailed,
    RiccatiBreakdown,
)
from .model import MjlsModel, Policy, mode_average, min_eigenvalue, sym, \
    spectral_norm_sym

__all__ = [
    "FiniteHorizonSolution",
    "CareSolution",
    "cdre_step",
    "solve_finite",
    "optimal_cost_finite",
    "solve_care",
    "care_residual",
    "write_riccati_csv",
]

PD_TOL = 1e-10


def _pd_floor(matrix) -> float:
    return PD_TOL * (1.0 + spectral_norm_sym(matrix))


def cdre_step(P_next, model: MjlsModel, stage=None):
    """One backward step of the coupled difference Riccati recursion.

    Parameters
    ----------
    P_next : sequence of per-mode symmetric matrices
        Cost-to-go matrices at the following stage.
    model : MjlsModel
    stage : optional int
        Stage label attached to breakdown diagnostics.

    Returns
    -------
    (P, Upsilon, M, K, upsilon_min_eig) : per-mode lists
        ``K[i]`` is the feedback gain, i.e. u = K[i] x.

    Raises
    ------
    RiccatiBreakdown
        If some Upsilon[i] is not positive definite (smallest eigenvalue at
        or below ``1e-10 * (1 + ||Upsilon[i]||)``).
    """
    L = model.mode_count
    if len(P_next) != L:
        raise InvalidInput(f"expected {L} matrices, got {len(P_next)}")
    P, Upsilon, M, K, eigs = [], [], [], [], []
    for i in range(L):
        W = mode_average(P_next, i, model.transition)
        A, B = model.A[i], model.B[i]
        WB = W @ B
        ups = sym(B.T @ WB + model.R[i])
        mat = WB.T @ A
        low = min_eigenvalue(ups)
        floor = _pd_floor(ups)
        if low <= floor:
            kind = "indefinite" if low < -floor else "singular"
            where = "" if stage is None else f" at stage {stage}"
            raise RiccatiBreakdown(
                f"input-weight term is {kind}{where} in mode {i}: "
                f"min eigenvalue {low:.3e}",
                stage=stage, mode=i, eigenvalue=low, kind=kind)
        # Solve against Upsilon through its Cholesky factor; never invert.
        factor = cho_factor(ups, lower=True)
        gain = -cho_solve(factor, mat)
        P.append(sym(A.T @ W @ A + model.Q[i] + mat.T @ gain))
        Upsilon.append(ups)
        M.append(mat)
        K.append(gain)
        eigs.append(low)
    return P, Upsilon, M, K, eigs


@dataclass(eq=False)
class FiniteHorizonSolution:
    """Backward-recursion output over stages k = 0..N.

    ``P[k][i]`` runs over k = 0..N+1 (``P[N+1]`` is the terminal weight);
    ``Upsilon``, ``M``, ``K`` and ``upsilon_min_eig`` run over k = 0..N.
    When the recursion breaks down at some stage, entries below that stage
    are ``None`` and ``solvable`` is False.
    """

    horizon: int
    P: list
    Upsilon: list
    M: list
    K: list
    upsilon_min_eig: list
    solvable: bool
    breakdown: RiccatiBreakdown | None = None

    def policy(self) -> Policy:
        """Optimal staged feedback policy u(k) = K[k][i] x(k)."""
        if not self.solvable:
            raise InvalidState("no policy: the recursion broke down")
        return Policy.from_stages(self.K)


def solve_finite(model: MjlsModel, terminal, N: int,
                 raise_on_breakdown: bool = True) -> FiniteHorizonSolution:
    """Run the coupled backward recursion from stage N down to stage 0.

    ``terminal`` is the list of per-mode symmetric PSD terminal weights
    (stage N+1).  With ``raise_on_breakdown=False`` a breakdown is recorded
    on the returned solution instead of raised.
    """
    model.ensure_valid()
    if N < 0:
        raise InvalidInput("horizon must be nonnegative")
    L, n = model.mode_count, model.state_dim
    if len(terminal) != L:
        raise InvalidInput(f"expected {L} terminal matrices")
    term = []
    for j, mat in enumerate(terminal):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (n, n):
            raise InvalidInput(f"terminal[{j}] must be {n}x{n}")
        if float(np.max(np.abs(mat - mat.T))) > 1e-12:
            raise InvalidInput(f"terminal[{j}] must be symmetric")
        if min_eigenvalue(mat) < -_pd_floor(mat):
            raise InvalidInput(f"terminal[{j}] must be positive semi-definite")
        term.append(sym(mat))

    P = [None] * (N + 2)
    Upsilon = [None] * (N + 1)
    M = [None] * (N + 1)
    K = [None] * (N + 1)
    eigs = [None] * (N + 1)
    P[N + 1] = term
    for k in range(N, -1, -1):
        try:
            P[k], Upsilon[k], M[k], K[k], eigs[k] = cdre_step(
                P[k + 1], model, stage=k)
        except RiccatiBreakdown as exc:
            if raise_on_breakdown:
                raise
            return FiniteHorizonSolution(
                horizon=N, P=P, Upsilon=Upsilon, M=M, K=K,
                upsilon_min_eig=eigs, solvable=False, breakdown=exc)
    return FiniteHorizonSolution(
        horizon=N, P=P, Upsilon=Upsilon, M=M, K=K,
        upsilon_min_eig=eigs, solvable=True)


def optimal_cost_finite(sol: FiniteHorizonSolution, model: MjlsModel) -> float:
    """Optimal performance index sum_i pi0[i] * x0' P[i](0) x0."""
    if not sol.solvable:
        raise InvalidState("cost undefined: the recursion broke down")
    x0 = model.x0
    pi0 = model.initial_distribution
    return float(sum(pi0[i] * x0 @ sol.P[0][i] @ x0
                     for i in range(model.mode_count)))


@dataclass(eq=False)
class CareSolution:
    """Fixed point of the coupled algebraic Riccati equation.

    ``K[i]`` is the stationary feedback gain u = K[i] x; ``p_min_eig``
    certifies positive definiteness of each P[i].
    """

    P: list
    Upsilon: list
    M: list
    K: list
    iterations: int
    final_increment: float
    residual: float
    p_min_eig: list

    def policy(self) -> Policy:
        return Policy.stationary(self.K)


def _check_input_weights_pd(model: MjlsModel):
    for i in range(model.mode_count):
        low = min_eigenvalue(model.R[i])
        if low <= _pd_floor(model.R[i]):
            raise PreconditionFailed(
                f"R[{i}] must be positive definite "
                f"(min eigenvalue {low:.3e})")


def solve_care(model: MjlsModel, tol: float = 1e-10, max_iter: int = 10000,
               divergence_bound: float = 1e12, residual_tol: float = 1e-8,
               initial=None) -> CareSolution:
    """Solve the coupled algebraic Riccati equation by value iteration.

    Repeats :func:`cdre_step` from P = 0 (or ``initial``) until the relative
    per-mode increment drops below ``tol``.  Requires every R[i] positive
    definite.  Divergence of the iterates (any trace above
    ``divergence_bound``) or an exhausted iteration budget means no
    mean-square stabilizing controller exists and raises
    :class:`NotStabilizable`; a fixed point that is PSD but not PD raises
    :class:`ObservabilityViolation` since positivity is guaranteed under
    exact observability.
    """
    model.ensure_valid()
    _check_input_weights_pd(model)
    L, n = model.mode_count, model.state_dim
    if initial is None:
        P = [np.zeros((n, n)) for _ in range(L)]
    else:
        if len(initial) != L:
            raise InvalidInput(f"expected {L} initial matrices")
        P = [sym(np.asarray(mat, dtype=float)) for mat in initial]

    increment = np.inf
    for iteration in range(1, max_iter + 1):
        new_P, Upsilon, M, K, _ = cdre_step(P, model)
        if any(float(np.trace(mat)) > divergence_bound for mat in new_P):
            raise NotStabilizable(
                f"iterates diverged after {iteration} iterations "
                f"(trace above {divergence_bound:.1e}); "
                "no mean-square stabilizing controller exists",
                reason="diverged", iterations=iteration)
        increment = max(
            float(np.linalg.norm(new_P[i] - P[i], "fro"))
            / (1.0 + float(np.linalg.norm(P[i], "fro")))
            for i in range(L))
        P = new_P
        if increment <= tol:
            break
    else:
        raise NotStabilizable(
            f"no convergence within {max_iter} iterations "
            f"(last increment {increment:.3e})",
            reason="budget", iterations=max_iter)

    residual = care_residual(P, model)
    if residual > residual_tol:
        raise NumericalFailure(
            f"converged iterates leave residual {residual:.3e} "
            f"above {residual_tol:.1e}")
    # Stationary coefficients evaluated at the fixed point.
    _, Upsilon, M, K, _ = cdre_step(P, model)
    p_eigs = [min_eigenvalue(mat) for mat in P]
    for i, low in enumerate(p_eigs):
        if low <= _pd_floor(P[i]):
            raise ObservabilityViolation(
                f"fixed point P[{i}] is not positive definite "
                f"(min eigenvalue {low:.3e}); the state weights likely fail "
                "exact observability")
    return CareSolution(P=P, Upsilon=Upsilon, M=M, K=K,
                        iterations=iteration, final_increment=increment,
                        residual=residual, p_min_eig=p_eigs)


def care_residual(P, model: MjlsModel) -> float:
    """Fixed-point defect of the coupled algebraic Riccati equation.

    Applies one recursion step to ``P`` and returns the largest per-mode
    Frobenius distance to ``P`` normalized by (1 + ||P[i]||_F).
    """
    new_P, _, _, _, _ = cdre_step(P, model)
    return max(
        float(np.linalg.norm(new_P[i] - np.asarray(P[i], dtype=float), "fro"))
        / (1.0 + float(np.linalg.norm(P[i], "fro")))
        for i in range(model.mode_count))


def write_riccati_csv(sol: FiniteHorizonSolution, path):
    """Dump per-stage Riccati coefficients and gains to CSV.

    Columns: ``k, mode, row, col, P, gain_row, gain_col, K``.  Each stage k,
    mode i contributes one line per matrix entry; the gain columns are empty
    where no gain entry exists (terminal stage, or row/col outside the gain
    shape).  Floats are written with ``repr`` so files are byte-reproducible.
    """
    n = sol.P[sol.horizon + 1][0].shape[0]
    m = sol.K[0][0].shape[0] if sol.solvable else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mode", "row", "col", "P",
                         "gain_row", "gain_col", "K"])
        for k in range(sol.horizon + 2):
            if sol.P[k] is None:
                continue
            has_gain = k <= sol.horizon and sol.K[k] is not None
            for i, mat in enumerate(sol.P[k]):
                for row in range(max(n, m if has_gain else 0)):
                    for col in range(n):
                        p_val = repr(float(mat[row, col])) if row < n else ""
                        if has_gain and row < m:
                            g = sol.K[k][i]
                            gain = [str(row), str(col),
                                    repr(float(g[row, col]))]
                        else:
                            gain = ["", "", ""]
                        writer.writerow(
                            [k, i, row if row < n else "", col, p_val, *gain])
