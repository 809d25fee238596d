"""Command-line front end.

Subcommands: ``solve-finite``, ``solve-care``, ``check``, ``simulate`` and
``verify``; all read a model from a JSON file and write CSV/JSON artifacts
into ``--out``.  Every run is deterministic given its flags, so repeated
invocations produce byte-identical artifacts.

Exit codes partition the outcomes:

    0  success
    1  malformed input
    2  Riccati breakdown (input-weight term not positive definite)
    3  not mean-square stabilizable (divergence or exhausted budget)
    4  assumption violation (input weights not PD / not exactly observable)
    5  verification failure or diverged simulation
    6  enumeration larger than the cap
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import (
    DivergedTrajectory,
    InvalidInput,
    NotPsd,
    NotStabilizable,
    NumericalFailure,
    ObservabilityViolation,
    PreconditionFailed,
    RiccatiBreakdown,
    TooLarge,
)
from .model import MjlsModel, load_model
from .oracle import verification_report
from .riccati import optimal_cost_finite, solve_care, solve_finite, \
    write_riccati_csv
from .sim import monte_carlo_cost, sample_markov_chain, \
    simulate_closed_loop, write_trajectory_csv
from .stability import is_exactly_observable, is_mss, \
    propagate_second_moment, write_moment_csv

__all__ = ["main", "entry_point"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mjls",
        description="LQR and mean-square stabilization for discrete-time "
                    "Markov jump linear systems")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, horizon_default=None):
        p.add_argument("--model", required=True, help="model JSON file")
        p.add_argument("--horizon", type=int, default=horizon_default,
                       help="stage horizon N")
        p.add_argument("--terminal", default="zero",
                       help="'zero', 'identity', or a JSON file holding one "
                            "terminal matrix per mode")
        p.add_argument("--tol", type=float, default=1e-10,
                       help="value-iteration convergence tolerance")
        p.add_argument("--max-iter", type=int, default=10000,
                       help="value-iteration budget")
        p.add_argument("--seed", type=int, default=0, help="RNG seed")
        p.add_argument("--trials", type=int, default=50,
                       help="Monte Carlo trial count")
        p.add_argument("--out", default=".", help="artifact directory")

    p = sub.add_parser("solve-finite",
                       help="finite-horizon coupled Riccati recursion")
    common(p)
    p = sub.add_parser("solve-care",
                       help="infinite-horizon fixed point by value iteration")
    common(p)
    p = sub.add_parser("check",
                       help="stability, observability and stabilizability "
                            "report")
    common(p)
    p = sub.add_parser("simulate",
                       help="Monte Carlo rollouts under the optimal "
                            "finite-horizon gains")
    common(p)
    p = sub.add_parser("verify",
                       help="brute-force verification of the solver at "
                            "small sizes")
    common(p)
    return parser


def _require_horizon(args) -> int:
    if args.horizon is None:
        raise InvalidInput(f"--horizon is required for {args.command}")
    if args.horizon < 0:
        raise InvalidInput("--horizon must be nonnegative")
    return args.horizon


def _terminal_matrices(spec: str, model: MjlsModel) -> list:
    n, L = model.state_dim, model.mode_count
    if spec == "zero":
        return [np.zeros((n, n)) for _ in range(L)]
    if spec == "identity":
        return [np.eye(n) for _ in range(L)]
    try:
        with open(spec, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InvalidInput(f"cannot read terminal file {spec}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"terminal file {spec} is not JSON: {exc}") from exc
    if not isinstance(data, list) or len(data) != L:
        raise InvalidInput(f"terminal file must hold a list of {L} matrices")
    return [np.asarray(mat, dtype=float) for mat in data]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(obj, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_valid_model(args) -> MjlsModel:
    model = load_model(args.model)
    model.ensure_valid()
    return model


def cmd_solve_finite(args) -> int:
    model = _load_valid_model(args)
    N = _require_horizon(args)
    terminal = _terminal_matrices(args.terminal, model)
    sol = solve_finite(model, terminal, N)
    cost = optimal_cost_finite(sol, model)
    out = _out_dir(args)
    write_riccati_csv(sol, out / "riccati.csv")
    _write_json({
        "horizon": N,
        "optimal_cost": cost,
        "mode_count": model.mode_count,
        "state_dim": model.state_dim,
        "input_dim": model.input_dim,
        "gains": [[g.tolist() for g in stage] for stage in sol.K],
        "upsilon_min_eigenvalues": sol.upsilon_min_eig,
    }, out / "gains.json")
    print(f"solvable over {N + 1} stages; optimal cost {cost!r}")
    return 0


def cmd_solve_care(args) -> int:
    model = _load_valid_model(args)
    # The Riccati criterion for stabilizability needs both assumptions.
    from .riccati import _check_input_weights_pd
    _check_input_weights_pd(model)
    if not is_exactly_observable(model):
        raise PreconditionFailed(
            "the state weights are not exactly observable")
    sol = solve_care(model, tol=args.tol, max_iter=args.max_iter)
    stable, radius = is_mss(model, sol.policy())
    out = _out_dir(args)
    _write_json({
        "converged": True,
        "iterations": sol.iterations,
        "final_increment": sol.final_increment,
        "residual": sol.residual,
        "P": [mat.tolist() for mat in sol.P],
        "gains": [g.tolist() for g in sol.K],
        "P_min_eigenvalues": sol.p_min_eig,
        "closed_loop_spectral_radius": radius,
        "closed_loop_mean_square_stable": stable,
        "optimal_cost": float(sum(
            model.initial_distribution[i] * model.x0 @ sol.P[i] @ model.x0
            for i in range(model.mode_count))),
    }, out / "care.json")
    print(f"converged in {sol.iterations} iterations; "
          f"residual {sol.residual!r}; closed-loop radius {radius!r}")
    return 0


def cmd_check(args) -> int:
    model = _load_valid_model(args)
    steps = args.horizon if args.horizon is not None else 50
    out = _out_dir(args)
    open_stable, open_radius = is_mss(model)
    report = {
        "open_loop": {"mean_square_stable": open_stable,
                      "spectral_radius": open_radius},
        "exactly_observable": is_exactly_observable(model),
        "closed_loop": None,
        "stabilizable": None,
        "note": "",
    }
    write_moment_csv(propagate_second_moment(model, None, steps),
                     out / "second_moments_open_loop.csv")
    try:
        from .riccati import _check_input_weights_pd
        _check_input_weights_pd(model)
        if not report["exactly_observable"]:
            raise PreconditionFailed(
                "not exactly observable: the Riccati stabilizability "
                "criterion does not apply")
        sol = solve_care(model, tol=args.tol, max_iter=args.max_iter)
    except NotStabilizable as exc:
        report["stabilizable"] = False
        report["note"] = str(exc)
    except (PreconditionFailed, ObservabilityViolation, NotPsd) as exc:
        report["note"] = str(exc)
    else:
        report["stabilizable"] = True
        closed_stable, closed_radius = is_mss(model, sol.policy())
        report["closed_loop"] = {"mean_square_stable": closed_stable,
                                 "spectral_radius": closed_radius}
        write_moment_csv(
            propagate_second_moment(model, sol.policy(), steps),
            out / "second_moments_closed_loop.csv")
    _write_json(report, out / "check.json")
    print(f"open-loop radius {open_radius!r}; "
          f"observable {report['exactly_observable']}; "
          f"stabilizable {report['stabilizable']}")
    return 0


def cmd_simulate(args) -> int:
    model = _load_valid_model(args)
    N = _require_horizon(args)
    if args.trials < 2:
        raise InvalidInput("--trials must be at least 2")
    terminal = _terminal_matrices(args.terminal, model)
    sol = solve_finite(model, terminal, N)
    policy = sol.policy()
    trajectories = []
    for trial in range(args.trials):
        path = sample_markov_chain(
            model.transition, model.initial_distribution, N,
            np.random.SeedSequence(entropy=args.seed, spawn_key=(trial,)))
        try:
            trajectories.append(simulate_closed_loop(
                model, policy, terminal, path=path))
        except DivergedTrajectory as exc:
            exc.trial = trial
            raise
    mean, stderr = monte_carlo_cost(model, policy, args.trials, args.seed,
                                    N, terminal)
    out = _out_dir(args)
    write_trajectory_csv(trajectories, out / "trajectories.csv", model)
    _write_json({
        "trials": args.trials,
        "seed": args.seed,
        "horizon": N,
        "mean_cost": mean,
        "standard_error": stderr,
        "optimal_cost": optimal_cost_finite(sol, model),
    }, out / "cost_stats.json")
    print(f"{args.trials} trials; mean cost {mean!r} "
          f"(standard error {stderr!r})")
    return 0


def cmd_verify(args) -> int:
    model = _load_valid_model(args)
    N = _require_horizon(args)
    terminal = _terminal_matrices(args.terminal, model)
    report = verification_report(model, N, terminal, seed=args.seed)
    out = _out_dir(args)
    _write_json(report, out / "verification.json")
    for check in report["checks"]:
        status = "pass" if check["passed"] else "FAIL"
        print(f"{status}  {check['name']}  "
              f"residual={check['residual']:.3e}  "
              f"tolerance={check['tolerance']:.1e}")
    if not report["passed"]:
        failed = [c["name"] for c in report["checks"] if not c["passed"]]
        print(f"verification failed: {', '.join(failed)}", file=sys.stderr)
        return 5
    return 0


_HANDLERS = {
    "solve-finite": cmd_solve_finite,
    "solve-care": cmd_solve_care,
    "check": cmd_check,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RiccatiBreakdown as exc:
        print(f"riccati breakdown: {exc}", file=sys.stderr)
        return 2
    except NotStabilizable as exc:
        print(f"not stabilizable: {exc}", file=sys.stderr)
        return 3
    except (PreconditionFailed, ObservabilityViolation, NotPsd) as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return 4
    except (DivergedTrajectory, NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 5
    except TooLarge as exc:
        print(f"enumeration too large: {exc}", file=sys.stderr)
        return 6


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
