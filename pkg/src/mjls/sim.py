"""Markov chain sampling, closed-loop rollout, and Monte Carlo costing.

Sampling is deterministic given a seed: modes are drawn by inverse CDF over
the cumulative transition row (ascending mode order, so ties at probability
boundaries resolve the same way everywhere), and Monte Carlo trials derive
independent per-trial streams from (seed, trial index) so serial and parallel
runs agree bitwise.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DivergedTrajectory, InvalidInput
from .model import MjlsModel, Policy

__all__ = [
    "Trajectory",
    "sample_markov_chain",
    "simulate_closed_loop",
    "monte_carlo_cost",
    "write_trajectory_csv",
]


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _trial_seed(seed, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(trial,))


def sample_markov_chain(transition, initial_distribution, N: int, seed):
    """Sample one mode path theta(0..N+1); deterministic given ``seed``.

    ``seed`` may be an int, a SeedSequence, or a Generator.
    """
    transition = np.asarray(transition, dtype=float)
    pi0 = np.asarray(initial_distribution, dtype=float)
    L = pi0.shape[0]
    if transition.shape != (L, L):
        raise InvalidInput("transition shape does not match distribution")
    if N < 0:
        raise InvalidInput("horizon must be nonnegative")
    rng = _rng(seed)
    cum_rows = np.cumsum(transition, axis=1)
    cum_pi = np.cumsum(pi0)
    path = np.empty(N + 2, dtype=np.int64)
    path[0] = min(int(np.searchsorted(cum_pi, rng.random(), side="right")),
                  L - 1)
    for k in range(N + 1):
        u = rng.random()
        path[k + 1] = min(
            int(np.searchsorted(cum_rows[path[k]], u, side="right")), L - 1)
    return path


@dataclass(eq=False)
class Trajectory:
    """One sampled rollout: modes theta(0..N+1), states, controls, costs.

    ``total_cost`` is the sum of ``stage_costs`` plus ``terminal_cost``;
    states satisfy the recursion x(k+1) = A x(k) + B u(k) exactly as rolled.
    """

    modes: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    stage_costs: np.ndarray
    terminal_cost: float
    total_cost: float

    @property
    def horizon(self) -> int:
        return len(self.modes) - 2


def simulate_closed_loop(model: MjlsModel, policy: Policy | None,
                         terminal=None, *, path=None, seed=None,
                         N: int | None = None) -> Trajectory:
    """Roll the switched dynamics forward under mode-indexed feedback.

    Either pass a mode ``path`` of length N+2 or a ``seed`` together with
    ``N`` to sample one.  ``policy=None`` runs the loop open (u = 0);
    ``terminal=None`` means no terminal penalty.
    """
    model.ensure_valid()
    L, n, m = model.mode_count, model.state_dim, model.input_dim
    if path is None:
        if seed is None or N is None:
            raise InvalidInput("need either a mode path or (seed, N)")
        path = sample_markov_chain(model.transition,
                                   model.initial_distribution, N, seed)
    path = np.asarray(path, dtype=np.int64)
    if path.ndim != 1 or path.shape[0] < 2:
        raise InvalidInput("mode path must hold at least two entries")
    if path.min() < 0 or path.max() >= L:
        raise InvalidInput("mode path contains out-of-range modes")
    N = path.shape[0] - 2
    if policy is not None and policy.staged and policy.horizon < N:
        raise InvalidInput(
            f"staged policy horizon {policy.horizon} shorter than {N}")
    if terminal is not None and len(terminal) != L:
        raise InvalidInput(f"expected {L} terminal matrices")

    states = np.zeros((N + 2, n))
    controls = np.zeros((N + 1, m))
    stage_costs = np.zeros(N + 1)
    states[0] = model.x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N + 1):
            i = path[k]
            x = states[k]
            u = np.zeros(m) if policy is None else policy.gain(k, i) @ x
            controls[k] = u
            stage_costs[k] = float(x @ model.Q[i] @ x + u @ model.R[i] @ u)
            nxt = model.A[i] @ x + model.B[i] @ u
            if not np.all(np.isfinite(nxt)):
                raise DivergedTrajectory(
                    f"state became non-finite at step {k + 1}", step=k + 1)
            states[k + 1] = nxt
    j = path[N + 1]
    if terminal is None:
        terminal_cost = 0.0
    else:
        Pt = np.asarray(terminal[j], dtype=float)
        terminal_cost = float(states[N + 1] @ Pt @ states[N + 1])
    total = float(np.sum(stage_costs) + terminal_cost)
    return Trajectory(modes=path, states=states, controls=controls,
                      stage_costs=stage_costs, terminal_cost=terminal_cost,
                      total_cost=total)


def _batch_costs(model, policy, trials, trial_offset, seed, N, terminal):
    """Rollout costs for trials [offset, offset + trials), batched.

    Trial t draws exactly the uniforms that :func:`sample_markov_chain`
    would draw from its (seed, t) stream, so the sampled mode paths match
    the single-trajectory API draw for draw.
    """
    L, n, m = model.mode_count, model.state_dim, model.input_dim
    uniforms = np.empty((trials, N + 2))
    for t in range(trials):
        gen = np.random.default_rng(_trial_seed(seed, trial_offset + t))
        uniforms[t] = gen.random(N + 2)
    cum_rows = np.cumsum(model.transition, axis=1)
    cum_pi = np.cumsum(model.initial_distribution)
    modes = np.empty((trials, N + 2), dtype=np.int64)
    # (cum <= u).sum() reproduces right-sided searchsorted on each row.
    modes[:, 0] = np.minimum(
        (cum_pi[None, :] <= uniforms[:, 0, None]).sum(axis=1), L - 1)
    for k in range(N + 1):
        rows = cum_rows[modes[:, k]]
        modes[:, k + 1] = np.minimum(
            (rows <= uniforms[:, k + 1, None]).sum(axis=1), L - 1)

    x = np.tile(model.x0, (trials, 1))
    costs = np.zeros(trials)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N + 1):
            mk = modes[:, k]
            nxt = np.empty_like(x)
            for i in range(L):
                mask = mk == i
                if not np.any(mask):
                    continue
                xi = x[mask]
                if policy is None:
                    ui = np.zeros((int(mask.sum()), m))
                else:
                    ui = xi @ policy.gain(k, i).T
                costs[mask] += (np.einsum("pa,ab,pb->p", xi, model.Q[i], xi)
                                + np.einsum("pa,ab,pb->p", ui, model.R[i], ui))
                nxt[mask] = xi @ model.A[i].T + ui @ model.B[i].T
            if not np.all(np.isfinite(nxt)):
                bad = int(np.nonzero(~np.isfinite(nxt).all(axis=1))[0][0])
                raise DivergedTrajectory(
                    f"state became non-finite at step {k + 1}",
                    step=k + 1, trial=trial_offset + bad)
            x = nxt
        if terminal is not None:
            last = modes[:, N + 1]
            for j in range(L):
                mask = last == j
                if np.any(mask):
                    Pt = np.asarray(terminal[j], dtype=float)
                    costs[mask] += np.einsum(
                        "pa,ab,pb->p", x[mask], Pt, x[mask])
    return costs


def monte_carlo_cost(model: MjlsModel, policy: Policy | None, trials: int,
                     seed, N: int, terminal=None, workers: int = 1):
    """Sample mean and standard error of the rollout cost.

    Trial t draws its own stream from (seed, t); trials are processed in
    contiguous chunks (one per worker) whose costs land in a shared array by
    trial index, and the mean uses numpy's pairwise summation over that fixed
    order, so the result does not depend on the worker count.
    """
    model.ensure_valid()
    if trials < 2:
        raise InvalidInput("at least two trials are needed")
    if N < 0:
        raise InvalidInput("horizon must be nonnegative")
    if policy is not None and policy.staged and policy.horizon < N:
        raise InvalidInput(
            f"staged policy horizon {policy.horizon} shorter than {N}")
    if terminal is not None and len(terminal) != model.mode_count:
        raise InvalidInput(f"expected {model.mode_count} terminal matrices")
    costs = np.empty(trials)
    if workers <= 1:
        costs[:] = _batch_costs(model, policy, trials, 0, seed, N, terminal)
    else:
        bounds = np.linspace(0, trials, workers + 1).astype(int)
        chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds, bounds[1:])
                  if hi > lo]

        def run(span):
            lo, hi = span
            return lo, hi, _batch_costs(
                model, policy, hi - lo, lo, seed, N, terminal)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            for lo, hi, values in pool.map(run, chunks):
                costs[lo:hi] = values
    mean = float(np.mean(costs))
    stderr = float(np.std(costs, ddof=1) / np.sqrt(trials))
    return mean, stderr


def write_trajectory_csv(trajectories, path, model: MjlsModel):
    """Dump sampled rollouts to CSV.

    Columns: ``trial, k, mode, x_1..x_n, u_1..u_m, stage_cost``.  The final
    row of each trial (k = N+1) carries the terminal state; its control
    columns are empty and its ``stage_cost`` column holds the terminal
    penalty, so each trial's column sum reproduces the total cost.
    """
    n, m = model.state_dim, model.input_dim
    header = (["trial", "k", "mode"]
              + [f"x_{d + 1}" for d in range(n)]
              + [f"u_{d + 1}" for d in range(m)]
              + ["stage_cost"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for trial, traj in enumerate(trajectories):
            N = traj.horizon
            for k in range(N + 2):
                row = [trial, k, int(traj.modes[k])]
                row += [repr(float(v)) for v in traj.states[k]]
                if k <= N:
                    row += [repr(float(v)) for v in traj.controls[k]]
                    row += [repr(float(traj.stage_costs[k]))]
                else:
                    row += [""] * m
                    row += [repr(float(traj.terminal_cost))]
                writer.writerow(row)
