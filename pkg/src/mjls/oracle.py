"""Brute-force verification by exhaustive mode-path enumeration.

At small sizes every positive-probability mode sequence theta(0..N+1) can be
enumerated with its exact probability.  States and controls are deterministic
along each sequence, so expected costs, conditional costates, first-order
stationarity of the optimal controller, and the completion-of-squares
identity can all be evaluated exactly and compared against the Riccati
solver — an independent check that shares none of its code path.

Conditional expectations given the mode history up to stage k reduce to
probability-weighted sums over the continuations of each path prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, TooLarge
from .model import MjlsModel, Policy, mode_average
from .riccati import FiniteHorizonSolution

__all__ = [
    "PathEnsemble",
    "CostateSequence",
    "enumerate_paths",
    "exact_cost",
    "costate_from_definition",
    "stationarity_residual",
    "costate_relation_residual",
    "decomposition_check",
    "perturbation_optimality",
    "verification_report",
]

DEFAULT_ENUMERATION_CAP = 10 ** 6


@dataclass(eq=False)
class PathEnsemble:
    """Every positive-probability mode sequence theta(0..N+1).

    ``paths`` has shape (count, N+2); ``probabilities`` are the exact chain
    probabilities and sum to one.
    """

    paths: np.ndarray
    probabilities: np.ndarray

    @property
    def horizon(self) -> int:
        return self.paths.shape[1] - 2

    @property
    def count(self) -> int:
        return self.paths.shape[0]


def enumerate_paths(model: MjlsModel, N: int,
                    cap: int = DEFAULT_ENUMERATION_CAP) -> PathEnsemble:
    """Enumerate mode sequences theta(0..N+1) with exact probabilities.

    Zero-probability transitions are pruned while extending, but the a-priori
    bound L**(N+2) must not exceed ``cap`` (raises :class:`TooLarge`).
    """
    model.ensure_valid()
    if N < 0:
        raise InvalidInput("horizon must be nonnegative")
    L = model.mode_count
    total = L ** (N + 2)
    if total > cap:
        raise TooLarge(
            f"{L}**{N + 2} = {total} mode sequences exceed the cap {cap}")
    pi0 = model.initial_distribution
    lam = model.transition
    start = np.nonzero(pi0 > 0.0)[0]
    paths = start.reshape(-1, 1).astype(np.int64)
    probs = pi0[start].astype(float)
    for _ in range(N + 1):
        last = paths[:, -1]
        chunks, pchunks = [], []
        for j in range(L):
            weight = lam[last, j]
            keep = weight > 0.0
            if not np.any(keep):
                continue
            ext = np.hstack([paths[keep],
                             np.full((int(keep.sum()), 1), j, dtype=np.int64)])
            chunks.append(ext)
            pchunks.append(probs[keep] * weight[keep])
        paths = np.vstack(chunks)
        probs = np.concatenate(pchunks)
    return PathEnsemble(paths=paths, probabilities=probs)


def _terminal_from(sol_or_list, model):
    term = []
    for j, mat in enumerate(sol_or_list):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (model.state_dim,) * 2:
            raise InvalidInput(f"terminal[{j}] has wrong shape {mat.shape}")
        term.append(mat)
    return term


def _roll_ensemble(model, policy, ensemble):
    """States and controls along every path, vectorized over paths.

    States depend only on the path prefix, so rolling each full path once
    also yields every prefix's state sequence.
    """
    paths = ensemble.paths
    count, length = paths.shape
    N = length - 2
    n, m = model.state_dim, model.input_dim
    xs = np.zeros((count, N + 2, n))
    us = np.zeros((count, N + 1, m))
    xs[:, 0] = model.x0
    for k in range(N + 1):
        mk = paths[:, k]
        for i in range(model.mode_count):
            mask = mk == i
            if not np.any(mask):
                continue
            x = xs[mask, k]
            if policy is not None:
                u = x @ policy.gain(k, i).T
                us[mask, k] = u
            else:
                u = np.zeros((int(mask.sum()), m))
            xs[mask, k + 1] = x @ model.A[i].T + u @ model.B[i].T
    return xs, us


def _path_costs(model, ensemble, xs, us, terminal):
    paths = ensemble.paths
    N = ensemble.horizon
    costs = np.zeros(ensemble.count)
    for k in range(N + 1):
        mk = paths[:, k]
        for i in range(model.mode_count):
            mask = mk == i
            if not np.any(mask):
                continue
            x, u = xs[mask, k], us[mask, k]
            costs[mask] += (np.einsum("pa,ab,pb->p", x, model.Q[i], x)
                            + np.einsum("pa,ab,pb->p", u, model.R[i], u))
    last = paths[:, N + 1]
    for j in range(model.mode_count):
        mask = last == j
        if np.any(mask):
            x = xs[mask, N + 1]
            costs[mask] += np.einsum("pa,ab,pb->p", x, terminal[j], x)
    return costs


def exact_cost(model: MjlsModel, policy: Policy | None, N: int,
               terminal=None, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Expected cost of a policy, exact up to roundoff.

    Sums prob(path) * cost(path) over the full ensemble; combined in fixed
    path order so the value is reproducible.
    """
    ensemble = enumerate_paths(model, N, cap=cap)
    if terminal is None:
        terminal = [np.zeros((model.state_dim,) * 2)] * model.mode_count
    terminal = _terminal_from(terminal, model)
    xs, us = _roll_ensemble(model, policy, ensemble)
    costs = _path_costs(model, ensemble, xs, us, terminal)
    return float(ensemble.probabilities @ costs)


@dataclass(eq=False)
class CostateSequence:
    """Conditional costates keyed by mode-history prefix.

    ``eta[k]`` maps each prefix tuple theta(0..k) to the costate vector at
    stage k, and ``state[k]`` maps the same prefix to x(k+1) (the successor
    state, which the prefix determines).
    """

    eta: list
    state: list

    @property
    def horizon(self) -> int:
        return len(self.eta) - 1


def _pathwise_costate(model, ensemble, xs, terminal):
    """Backward accumulation of the per-path costate integrand.

    For one fixed path the costate definition telescopes:
    the stage-N value is P_term[theta(N+1)] x(N+1) and each earlier stage
    adds Q[theta(k+1)] x(k+1) and pushes through A[theta(k+1)]'.
    """
    paths = ensemble.paths
    N = ensemble.horizon
    count = ensemble.count
    n = model.state_dim
    eta = np.zeros((count, N + 1, n))
    last = paths[:, N + 1]
    for j in range(model.mode_count):
        mask = last == j
        if np.any(mask):
            eta[mask, N] = xs[mask, N + 1] @ terminal[j].T
    for k in range(N - 1, -1, -1):
        nxt = paths[:, k + 1]
        for i in range(model.mode_count):
            mask = nxt == i
            if not np.any(mask):
                continue
            eta[mask, k] = (xs[mask, k + 1] @ model.Q[i].T
                            + eta[mask, k + 1] @ model.A[i])
    return eta


def _prefix_groups(paths, k):
    """Group path indices by their prefix theta(0..k)."""
    _, inverse = np.unique(paths[:, :k + 1], axis=0, return_inverse=True)
    groups = {}
    for idx, g in enumerate(inverse):
        groups.setdefault(int(g), []).append(idx)
    return groups


def costate_from_definition(model: MjlsModel, policy: Policy | None, N: int,
                            terminal=None,
                            cap: int = DEFAULT_ENUMERATION_CAP
                            ) -> CostateSequence:
    """Costates from their defining conditional expectation.

    For each stage k and each positive-probability mode history theta(0..k),
    averages the pathwise costate integrand over the continuations, weighted
    by conditional path probabilities.
    """
    ensemble = enumerate_paths(model, N, cap=cap)
    if terminal is None:
        terminal = [np.zeros((model.state_dim,) * 2)] * model.mode_count
    terminal = _terminal_from(terminal, model)
    xs, _ = _roll_ensemble(model, policy, ensemble)
    integrand = _pathwise_costate(model, ensemble, xs, terminal)
    probs = ensemble.probabilities
    eta_tables, state_tables = [], []
    for k in range(N + 1):
        table, states = {}, {}
        for members in _prefix_groups(ensemble.paths, k).values():
            members = np.asarray(members)
            weight = probs[members]
            key = tuple(int(v) for v in ensemble.paths[members[0], :k + 1])
            table[key] = weight @ integrand[members, k] / float(weight.sum())
            states[key] = xs[members[0], k + 1]
        eta_tables.append(table)
        state_tables.append(states)
    return CostateSequence(eta=eta_tables, state=state_tables)


def stationarity_residual(model: MjlsModel, policy: Policy, N: int,
                          terminal=None,
                          cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """First-order optimality defect of a policy.

    The optimal controller zeroes B' eta(k) + R u(k) given the mode history;
    both factors are determined by the prefix, so the residual is the largest
    norm of that expression over all stages and prefixes.
    """
    ensemble = enumerate_paths(model, N, cap=cap)
    if terminal is None:
        terminal = [np.zeros((model.state_dim,) * 2)] * model.mode_count
    terminal = _terminal_from(terminal, model)
    xs, us = _roll_ensemble(model, policy, ensemble)
    integrand = _pathwise_costate(model, ensemble, xs, terminal)
    probs = ensemble.probabilities
    worst = 0.0
    for k in range(N + 1):
        for members in _prefix_groups(ensemble.paths, k).values():
            members = np.asarray(members)
            weight = probs[members]
            eta_k = weight @ integrand[members, k] / float(weight.sum())
            rep = members[0]
            i = int(ensemble.paths[rep, k])
            u = us[rep, k]
            residual = model.B[i].T @ eta_k + model.R[i] @ u
            worst = max(worst, float(np.linalg.norm(residual)))
    return worst


def costate_relation_residual(model: MjlsModel, sol: FiniteHorizonSolution,
                              N: int,
                              cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Largest normalized gap between defined and closed-form costates.

    Under the optimal policy the costate collapses onto the state through
    the transition-weighted cost-to-go:
    eta(k) = (sum_j transition[theta(k), j] P[j](k+1)) x(k+1).
    Residuals are normalized by (1 + ||reference||).
    """
    if not sol.solvable:
        raise InvalidInput("need a solvable finite-horizon solution")
    if sol.horizon != N:
        raise InvalidInput("solution horizon does not match N")
    seq = costate_from_definition(model, sol.policy(), N,
                                  terminal=sol.P[N + 1], cap=cap)
    worst = 0.0
    for k in range(N + 1):
        for key, eta_k in seq.eta[k].items():
            i = key[-1]
            reference = mode_average(sol.P[k + 1], i,
                                     model.transition) @ seq.state[k][key]
            gap = float(np.linalg.norm(eta_k - reference))
            worst = max(worst, gap / (1.0 + float(np.linalg.norm(reference))))
    return worst


def decomposition_check(model: MjlsModel, policy: Policy, N: int,
                        sol: FiniteHorizonSolution,
                        cap: int = DEFAULT_ENUMERATION_CAP):
    """Completion-of-squares identity, evaluated exactly.

    For any policy the cost splits into the optimal value plus an
    Upsilon-weighted quadratic penalty on the deviation from the optimal
    feedback:

        J = sum_i pi0[i] x0' P[i](0) x0
            + sum_k E[(u(k) - K x(k))' Upsilon (u(k) - K x(k))].

    Returns ``(lhs, rhs, gap)`` where lhs is the enumerated cost of
    ``policy`` with the solution's terminal weight.
    """
    if not sol.solvable:
        raise InvalidInput("need a solvable finite-horizon solution")
    if sol.horizon != N:
        raise InvalidInput("solution horizon does not match N")
    ensemble = enumerate_paths(model, N, cap=cap)
    terminal = _terminal_from(sol.P[N + 1], model)
    xs, us = _roll_ensemble(model, policy, ensemble)
    costs = _path_costs(model, ensemble, xs, us, terminal)
    lhs = float(ensemble.probabilities @ costs)

    excess = np.zeros(ensemble.count)
    for k in range(N + 1):
        mk = ensemble.paths[:, k]
        for i in range(model.mode_count):
            mask = mk == i
            if not np.any(mask):
                continue
            dev = us[mask, k] - xs[mask, k] @ sol.K[k][i].T
            excess[mask] += np.einsum(
                "pa,ab,pb->p", dev, sol.Upsilon[k][i], dev)
    x0, pi0 = model.x0, model.initial_distribution
    value = float(sum(pi0[i] * x0 @ sol.P[0][i] @ x0
                      for i in range(model.mode_count)))
    rhs = value + float(ensemble.probabilities @ excess)
    return lhs, rhs, abs(lhs - rhs)


def perturbation_optimality(model: MjlsModel, sol: FiniteHorizonSolution,
                            N: int, count: int, scale: float, seed,
                            cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Worst cost change over random perturbations of the optimal gains.

    Perturbs every stage/mode gain entry uniformly within ``scale`` and
    returns min(perturbed cost - optimal cost); a genuine optimum keeps this
    nonnegative up to roundoff.  ``count=0`` returns +inf (vacuous pass).
    """
    if not sol.solvable:
        raise InvalidInput("need a solvable finite-horizon solution")
    if sol.horizon != N:
        raise InvalidInput("solution horizon does not match N")
    terminal = sol.P[N + 1]
    base = exact_cost(model, sol.policy(), N, terminal=terminal, cap=cap)
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(count):
        staged = [[sol.K[k][i]
                   + rng.uniform(-scale, scale, size=sol.K[k][i].shape)
                   for i in range(model.mode_count)]
                  for k in range(N + 1)]
        perturbed = exact_cost(model, Policy.from_stages(staged), N,
                               terminal=terminal, cap=cap)
        worst = min(worst, perturbed - base)
    return worst


def verification_report(model: MjlsModel, N: int, terminal, *, seed=0,
                        perturbations: int = 25,
                        perturbation_scale: float = 1e-2,
                        rel_tol: float = 1e-9, costate_tol: float = 1e-10,
                        cap: int = DEFAULT_ENUMERATION_CAP) -> dict:
    """Run the full brute-force battery against the Riccati solver.

    Returns ``{"checks": [{name, residual, tolerance, passed}...],
    "passed": bool}``.  Residuals are normalized by (1 + |reference|) so the
    stated tolerances survive large initial states.
    """
    from .riccati import optimal_cost_finite, solve_finite

    checks = []

    def record(name, residual, tolerance):
        entry = {"name": name, "residual": float(residual),
                 "tolerance": float(tolerance),
                 "passed": bool(residual <= tolerance)}
        checks.append(entry)
        return entry["passed"]

    from .errors import RiccatiBreakdown

    try:
        sol = solve_finite(model, terminal, N)
    except RiccatiBreakdown as exc:
        record(f"finite-horizon solve ({exc})", math.inf, 0.0)
        return {"checks": checks, "passed": False, "horizon": N}
    record("finite-horizon solve", 0.0, 0.0)

    value = optimal_cost_finite(sol, model)
    policy = sol.policy()
    enumerated = exact_cost(model, policy, N, terminal=sol.P[N + 1], cap=cap)
    record("optimal cost equals enumerated cost",
           abs(enumerated - value) / (1.0 + abs(value)), rel_tol)

    record("costate matches transition-weighted cost-to-go",
           costate_relation_residual(model, sol, N, cap=cap), costate_tol)

    record("first-order stationarity at the optimum",
           stationarity_residual(model, policy, N, terminal=sol.P[N + 1],
                                 cap=cap) / (1.0 + abs(value)), rel_tol)

    lhs, _, gap = decomposition_check(model, policy, N, sol, cap=cap)
    record("cost decomposition at the optimum",
           gap / (1.0 + abs(lhs)), rel_tol)

    rng = np.random.default_rng(seed)
    random_policy = Policy.stationary(
        [rng.uniform(-1.0, 1.0, size=(model.input_dim, model.state_dim))
         for _ in range(model.mode_count)])
    lhs, _, gap = decomposition_check(model, random_policy, N, sol, cap=cap)
    record("cost decomposition for an arbitrary policy",
           gap / (1.0 + abs(lhs)), rel_tol)

    decrease = perturbation_optimality(
        model, sol, N, count=perturbations, scale=perturbation_scale,
        seed=seed, cap=cap)
    shortfall = 0.0 if math.isinf(decrease) else max(0.0, -decrease)
    record("no gain perturbation improves the cost",
           shortfall / (1.0 + abs(value)), 1e-10)

    return {"checks": checks,
            "passed": all(c["passed"] for c in checks),
            "horizon": N}
