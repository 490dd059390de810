"""Command-line front end.

    beliefnet infer MODEL [--method bp-sum|bp-max|mf|bethe] [--trace out.csv]
    beliefnet oracle MODEL
    beliefnet fdd SCENARIO [--trace out.csv]

Results are JSON documents on stdout.  Exit codes: 0 success, 2 input or
validation error, 3 solver did not converge (result still written), 4 state
space above the enumeration cap, 5 solver precondition rejected.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import bp, fdd
from .consensus import ConsensusParams, PreconditionError, StepRule
from .io import InputError, beliefs_to_list, dumps, parse_model, parse_scenario
from .model import ModelError, StateCapExceeded, exact_marginals, joint_table
from .optimize import BOParams, minimize_bethe_direct, minimize_mean_field

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3
EXIT_CAP = 4
EXIT_PRECONDITION = 5


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def _write_trace(path: str | None, header: list[str], rows) -> None:
    if not path:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _node_doc(labels, beliefs) -> list:
    return [{"id": label, "belief": b} for label, b in zip(labels, beliefs_to_list(beliefs))]


def cmd_infer(args) -> int:
    mrf = parse_model(_read(args.model)).check()
    doc = {"command": "infer", "method": args.method}
    if args.method in ("bp-sum", "bp-max"):
        mode = bp.SUM if args.method == "bp-sum" else bp.MAX
        res = bp.run_bp(mrf, mode, max_iters=args.max_iters or 500, tol=args.tol or 1e-8)
        beliefs = res.beliefs.node_beliefs
        doc.update(converged=res.converged, iterations=res.iterations)
        _write_trace(args.trace, ["iteration", "residual"],
                     ((n + 1, r) for n, r in enumerate(res.residual_trace)))
        converged = res.converged
        edges = None
    else:
        params = BOParams(seed=args.seed, threads=args.threads)
        if args.max_iters:
            params.max_iters = args.max_iters
        if args.tol:
            params.tol = params.stationarity_tol = args.tol
        solver = minimize_mean_field if args.method == "mf" else minimize_bethe_direct
        res = solver(mrf, params)
        beliefs = res.beliefs.node_beliefs
        edges = res.beliefs.edge_beliefs
        doc.update(converged=res.converged, iterations=res.iterations,
                   objective=res.objective, stationarity=res.stationarity)
        _write_trace(args.trace, ["iteration", "objective"], enumerate(res.objective_trace))
        converged = res.converged
    doc["node_beliefs"] = _node_doc(mrf.labels, beliefs)
    doc["map"] = [{"id": label, "state": s} for label, s in zip(mrf.labels, bp.map_decode(beliefs))]
    if edges:
        doc["edge_beliefs"] = [
            {"i": mrf.labels[i], "j": mrf.labels[j], "belief": np.asarray(b).tolist()}
            for (i, j), b in edges.items()
        ]
    sys.stdout.write(dumps(doc))
    return EXIT_OK if converged else EXIT_NONCONVERGED


def cmd_oracle(args) -> int:
    mrf = parse_model(_read(args.model)).check()
    jt = joint_table(mrf)
    marg = exact_marginals(mrf)
    doc = {
        "command": "oracle",
        "Z": jt.Z,
        "F": jt.free_energy,
        "node_beliefs": _node_doc(mrf.labels, marg.node_beliefs),
        "edge_beliefs": [
            {"i": mrf.labels[i], "j": mrf.labels[j], "belief": b.tolist()}
            for (i, j), b in marg.edge_beliefs.items()
        ],
    }
    sys.stdout.write(dumps(doc))
    return EXIT_OK


def _fdd_params(scn) -> fdd.FddParams:
    p = dict(scn.params)
    consensus = None
    if any(k in p for k in ("step", "alpha0", "max_iters", "tol", "assume_copositive")):
        defaults = fdd.default_consensus_params(scn.method, len(scn.evidences))
        try:
            rule = StepRule(p.get("step", defaults.step_rule.kind),
                            float(p.get("alpha0", defaults.step_rule.alpha0)))
        except ValueError as exc:
            raise InputError(f"'params.step': {exc}") from exc
        consensus = ConsensusParams(
            step_rule=rule,
            max_iters=int(p.get("max_iters", defaults.max_iters)),
            tol=float(p.get("tol", defaults.tol)),
            assume_copositive=bool(p.get("assume_copositive", False)),
        )
    return fdd.FddParams(
        epsilon=scn.epsilon,
        bp_tol=float(p.get("bp_tol", 1e-10)),
        bp_max_iters=int(p.get("bp_max_iters", 500)),
        consensus=consensus,
    )


def cmd_fdd(args) -> int:
    scn = parse_scenario(_read(args.scenario))
    try:
        dec = fdd.distributed_fdd(scn.bank, scn.evidences, scn.topology, scn.method, _fdd_params(scn))
    except PreconditionError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    diag = dec.diagnostics
    doc = {
        "command": "fdd",
        "method": scn.method,
        "agent_beliefs": [
            {"id": ev.agent, "belief": b} for ev, b in zip(scn.evidences, beliefs_to_list(dec.agent_beliefs))
        ],
        "consensus_belief": dec.consensus_belief.tolist(),
        "decision": dec.label,
        "agent_decisions": [scn.bank.labels[d] for d in dec.agent_decisions],
        "consensus_residual": fdd.consensus_residual(dec),
        "oracle_posterior": dec.oracle_posterior.tolist(),
        "oracle_decision": scn.bank.labels[dec.oracle_decision],
        "agrees_with_oracle": dec.agrees_with_oracle,
        "converged": diag["converged"],
        "iterations": diag["iterations"],
    }
    if scn.method.startswith("bp"):
        _write_trace(args.trace, ["iteration", "residual"], diag["trace"])
    else:
        _write_trace(args.trace, ["iteration", "dual_value", "residual", "step"], diag["trace"])
    sys.stdout.write(dumps(doc))
    return EXIT_OK if diag["converged"] else EXIT_NONCONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefnet", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent solver restarts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="approximate marginals by BP or free-energy minimization")
    p.add_argument("model")
    p.add_argument("--method", choices=("bp-sum", "bp-max", "mf", "bethe"), default="bp-sum")
    p.add_argument("--tol", type=float,
                   help="stopping tolerance (default 1e-8 for BP, solver defaults otherwise)")
    p.add_argument("--max-iters", type=int,
                   help="iteration cap (default 500 for BP, 20000 otherwise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("oracle", help="exact marginals and partition function by enumeration")
    p.add_argument("model")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("fdd", help="distributed hypothesis test from a scenario file")
    p.add_argument("scenario")
    p.add_argument("--trace")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_fdd)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "max_iters", None) is not None and args.max_iters < 1:
        print("error: --max-iters must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "tol", None) is not None and args.tol <= 0:
        print("error: --tol must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StateCapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except MemoryError:
        print("error: joint table does not fit in memory; lower BELIEFNET_STATE_CAP", file=sys.stderr)
        return EXIT_CAP
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
