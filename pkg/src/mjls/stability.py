"""Mean-square stability, exact observability, and stabilizability tests.

Mean-square stability of a mode-switched linear map is decided through the
lifted second-moment operator: with X[i](k) = E[x(k)x(k)' 1{mode = i}] and
closed-loop matrices Abar[i] = A[i] + B[i] F[i],

    X[j](k+1) = sum_i transition[i, j] * Abar[i] X[i](k) Abar[i]',

a linear map on the stacked vectorized moments whose spectral radius below
one is equivalent to E||x(k)||^2 -> 0 for every initial state and mode.  The
same recursion run forward gives exact (sampling-free) second moments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidInput,
    NotStabilizable,
    NumericalFailure,
    PreconditionFailed,
)
from .model import MjlsModel, Policy, mode_average, min_eigenvalue, \
    spectral_norm_sym, sym
from .riccati import solve_care

__all__ = [
    "SecondMomentChain",
    "closed_loop_matrices",
    "closed_loop_operator",
    "spectral_radius",
    "is_mss",
    "propagate_second_moment",
    "is_exactly_observable",
    "is_stabilizable",
    "write_moment_csv",
]


def closed_loop_matrices(model: MjlsModel, policy: Policy | None) -> list:
    """Per-mode A[i] + B[i] F[i]; plain A[i] when no policy is given."""
    if policy is None:
        return [model.A[i].copy() for i in range(model.mode_count)]
    if policy.staged:
        raise InvalidInput("a stationary policy is required here")
    n, m = model.state_dim, model.input_dim
    mats = []
    for i in range(model.mode_count):
        F = policy.gain(0, i)
        if F.shape != (m, n):
            raise InvalidInput(f"gain[{i}] must be {m}x{n}, got {F.shape}")
        mats.append(model.A[i] + model.B[i] @ F)
    return mats


def closed_loop_operator(model: MjlsModel,
                         policy: Policy | None = None) -> np.ndarray:
    """Lifted second-moment transition operator, an (L n^2) square matrix.

    Block (target mode j, source mode i) equals
    transition[i, j] * kron(Abar[i], Abar[i]).
    """
    model.ensure_valid()
    abar = closed_loop_matrices(model, policy)
    L, n = model.mode_count, model.state_dim
    d = n * n
    T = np.zeros((L * d, L * d))
    for i in range(L):
        kron = np.kron(abar[i], abar[i])
        for j in range(L):
            lam = model.transition[i, j]
            if lam != 0.0:
                T[j * d:(j + 1) * d, i * d:(i + 1) * d] = lam * kron
    return T


def _orthogonal_iteration(T, block, tol, max_iter, rng):
    """Dominant-modulus estimate from orthogonal (block power) iteration.

    Returns (radius, converged).  The subspace residual ||T V - V H||_F with
    H = V' T V certifies the estimate; a random start avoids starting vectors
    orthogonal to the dominant eigenspace.
    """
    n = T.shape[0]
    V = np.linalg.qr(rng.standard_normal((n, block)))[0]
    scale = tol * (1.0 + float(np.linalg.norm(T, "fro")))
    previous = np.inf
    for _ in range(max_iter):
        W = T @ V
        H = V.T @ W
        eigs = np.linalg.eigvals(H)
        radius = float(np.max(np.abs(eigs))) if eigs.size else 0.0
        residual = float(np.linalg.norm(W - V @ H, "fro"))
        if residual <= scale and abs(radius - previous) <= tol * (1.0 + radius):
            return radius, True
        previous = radius
        norm_W = float(np.linalg.norm(W))
        if norm_W == 0.0:
            return 0.0, True
        V = np.linalg.qr(W)[0]
    return previous, False


def spectral_radius(T, tol: float = 1e-12, max_iter: int = 10000) -> float:
    """Largest eigenvalue magnitude of a square matrix.

    Uses block power iteration, widening the block (1, 2, 4, ...) when the
    dominant eigenvalues come in complex pairs or share their modulus.  The
    returned value is accurate to ``tol * (1 + ||T||)``.

    Raises
    ------
    NumericalFailure
        If no block width converges within ``max_iter`` iterations each.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise InvalidInput("spectral radius needs a square matrix")
    if not np.all(np.isfinite(T)):
        raise InvalidInput("matrix entries must be finite")
    n = T.shape[0]
    if n == 0:
        return 0.0
    rng = np.random.default_rng(0x5eed)
    blocks = sorted({min(b, n) for b in (1, 2, 4, 8)})
    for block in blocks:
        radius, converged = _orthogonal_iteration(T, block, tol, max_iter, rng)
        if converged:
            return radius
    raise NumericalFailure(
        f"spectral radius estimate did not settle within {max_iter} "
        f"iterations (block widths {blocks})")


def is_mss(model: MjlsModel, policy: Policy | None = None,
           mss_margin: float = 1e-9):
    """Decide mean-square stability of the (closed-loop) switched system.

    Returns ``(stable, radius)`` where ``stable`` requires the lifted
    operator's spectral radius to sit strictly below ``1 - mss_margin``;
    a marginal radius of one is not mean-square stable since the second
    moment then fails to vanish.
    """
    radius = spectral_radius(closed_loop_operator(model, policy))
    return radius < 1.0 - mss_margin, radius


@dataclass(eq=False)
class SecondMomentChain:
    """Exact per-mode conditional second moments X[k][i] and mode masses."""

    X: list
    mode_mass: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.X) - 1

    def traces(self) -> np.ndarray:
        """Array [k, i] of trace(X[k][i])."""
        return np.array([[float(np.trace(mat)) for mat in stage]
                         for stage in self.X])

    def total_second_moment(self) -> np.ndarray:
        """E||x(k)||^2 for k = 0..steps."""
        return self.traces().sum(axis=1)


def propagate_second_moment(model: MjlsModel, policy: Policy | None,
                            steps: int) -> SecondMomentChain:
    """Propagate exact second moments of the closed loop; no sampling.

    Starts from X[0][i] = pi0[i] * x0 x0' and applies the lifted recursion
    ``steps`` times.  A staged policy must cover every propagated stage.
    """
    model.ensure_valid()
    if steps < 0:
        raise InvalidInput("steps must be nonnegative")
    L, n = model.mode_count, model.state_dim
    if policy is not None and policy.staged and steps > policy.horizon + 1:
        raise InvalidInput(
            f"staged policy covers {policy.horizon + 1} steps, "
            f"asked for {steps}")
    x0 = model.x0
    X = [[model.initial_distribution[i] * np.outer(x0, x0) for i in range(L)]]
    for k in range(steps):
        if policy is None:
            abar = [model.A[i] for i in range(L)]
        else:
            abar = [model.A[i] + model.B[i] @ policy.gain(k, i)
                    for i in range(L)]
        nxt = [np.zeros((n, n)) for _ in range(L)]
        for i in range(L):
            push = abar[i] @ X[k][i] @ abar[i].T
            for j in range(L):
                lam = model.transition[i, j]
                if lam != 0.0:
                    nxt[j] += lam * push
        X.append([sym(mat) for mat in nxt])
    mass = np.empty((steps + 1, L))
    mass[0] = model.initial_distribution
    for k in range(steps):
        mass[k + 1] = mass[k] @ model.transition
    return SecondMomentChain(X=X, mode_mass=mass)


def is_exactly_observable(model: MjlsModel, horizon: int | None = None,
                          strict: bool = False, pd_tol: float = 1e-10) -> bool:
    """Whether an almost-surely zero output forces a zero initial state.

    Builds the transition-weighted observability Gramians

        G[i](0) = Q[i],   G[i](t) = Q[i] + A[i]' (sum_j transition[i,j]
                                                  G[j](t-1)) A[i]

    and checks positive definiteness after ``horizon`` steps (defaults to
    n * L; Gramian kernels are non-increasing and stall within that many
    steps).  By default only modes with positive initial probability are
    checked; ``strict=True`` demands all of them.
    """
    model.ensure_valid()
    # Factoring Q certifies it is a valid C'C when no output map was given.
    model.state_weight_factors()
    L, n = model.mode_count, model.state_dim
    if horizon is None:
        horizon = n * L
    G = [model.Q[i].copy() for i in range(L)]
    for _ in range(horizon):
        G = [sym(model.Q[i]
                 + model.A[i].T @ mode_average(G, i, model.transition)
                 @ model.A[i])
             for i in range(L)]
    modes = range(L) if strict else \
        [i for i in range(L) if model.initial_distribution[i] > 0.0]
    return all(
        min_eigenvalue(G[i]) > pd_tol * (1.0 + spectral_norm_sym(G[i]))
        for i in modes)


def is_stabilizable(model: MjlsModel, **care_options) -> bool:
    """Whether some mode-indexed feedback makes the loop mean-square stable.

    Equivalent to the coupled algebraic Riccati equation admitting a positive
    definite solution; that equivalence needs positive definite input weights
    and exact observability, so both are checked first and their failure
    raises :class:`PreconditionFailed`.
    """
    model.ensure_valid()
    from .riccati import _check_input_weights_pd
    _check_input_weights_pd(model)
    if not is_exactly_observable(model):
        raise PreconditionFailed(
            "the state weights are not exactly observable; the Riccati "
            "criterion for stabilizability does not apply")
    try:
        solve_care(model, **care_options)
    except NotStabilizable:
        return False
    return True


def write_moment_csv(chain: SecondMomentChain, path):
    """Dump per-mode second-moment traces to CSV.

    Columns: ``k, mode, trace, total`` where ``total`` repeats
    E||x(k)||^2 = sum_i trace(X[k][i]) on each row of stage k.
    """
    traces = chain.traces()
    totals = traces.sum(axis=1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mode", "trace", "total"])
        for k in range(traces.shape[0]):
            for i in range(traces.shape[1]):
                writer.writerow(
                    [k, i, repr(float(traces[k, i])), repr(float(totals[k]))])
