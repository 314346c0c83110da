"""Command-line entry point: ``avgpg {run,sweep,oracle,estimate,mse}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from avgpg import agent, oracle
from avgpg.estimator import DegenerateSupportError, estimate_components
from avgpg.harness import ExperimentConfig, estimator_diagnostic, load_mdp_source, resolve, sweep
from avgpg.mdp import sample_initial_state, sample_trajectory
from avgpg.policy import PolicyKind, make_policy
from avgpg.rng import stream


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True)


def _load_policy(mdp_arg: str, theta_arg: str | None):
    mdp, features = load_mdp_source(mdp_arg)
    kind = PolicyKind.LINEAR if features is not None else PolicyKind.TABULAR
    theta = None
    if theta_arg is not None:
        doc = json.loads(Path(theta_arg).read_text())
        if isinstance(doc, dict):
            kind = PolicyKind(doc.get("kind", kind))
            theta = doc["theta"]
        else:
            theta = doc
    return mdp, make_policy(kind, mdp, theta, features if kind is PolicyKind.LINEAR else None)


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    base = Path(args.config).resolve().parent
    res = resolve(config, base)
    T, seed = config.T_grid[0], config.seeds[0]
    schedule = agent.make_schedule(T, res.t_mix, res.t_hit, res.c_H, config.c_N)
    log = agent.run(
        res.mdp, res.policy, schedule, res.alpha, (config.master_seed, 0, seed),
        diagnostics=config.diagnostics, J_star=res.J_star, probe_pair=config.probe_pair,
    )
    doc = log.to_dict()
    doc["resolved"] = res.describe()["resolved"]
    text = _dump(doc)
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_sweep(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.output_dir:
        config.output_dir = args.output_dir
    if not config.output_dir:
        print("sweep needs output_dir in the config or --output-dir", file=sys.stderr)
        return 2
    summary = sweep(config, Path(args.config).resolve().parent)
    print(_dump(summary.fits))
    return 0


def cmd_oracle(args) -> int:
    try:
        mdp, policy = _load_policy(args.mdp, args.theta)
        rep = oracle.report(mdp, policy)
    except oracle.OracleError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    checks = oracle.report_checks(rep, mdp, policy)
    doc = rep.to_dict()
    doc["checks"] = checks
    print(_dump(doc))
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        print("invariant violated: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_estimate(args) -> int:
    mdp, policy = _load_policy(args.mdp, args.theta)
    start = sample_initial_state(mdp, stream(args.seed, 0))
    traj = sample_trajectory(mdp, policy, start, args.horizon, stream(args.seed, 1))
    try:
        i, v, q, a = estimate_components(traj, args.state, args.action, policy, args.subtraj_len)
    except DegenerateSupportError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    print(_dump({"i": i, "V_hat": v, "Q_hat": q, "A_hat": a}))
    return 0


def cmd_mse(args) -> int:
    mdp, policy = _load_policy(args.mdp, args.theta)
    diag = estimator_diagnostic(
        mdp, policy, args.state, args.action, args.horizons, args.repeats, args.subtraj_len, args.seed
    )
    print(_dump({
        "s": diag.s, "a": diag.a, "N": diag.N, "true_advantage": diag.true_advantage,
        "rows": diag.rows, "slope": diag.slope, "half_width": diag.half_width,
        "fit_error": diag.fit_error,
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avgpg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one learner run (first T and seed of the config)")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="replicated runs over the T grid, with slope fits")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact report for one (MDP, theta)")
    p.add_argument("--mdp", required=True, help="MDP JSON file or fixture name")
    p.add_argument("--theta", help="JSON list, or {kind, theta}; zeros when omitted")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("estimate", help="advantage estimate from one sampled epoch")
    p.add_argument("--mdp", required=True)
    p.add_argument("--theta")
    p.add_argument("--state", type=int, required=True)
    p.add_argument("--action", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--subtraj-len", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mse", help="estimator MSE against the oracle across epoch lengths")
    p.add_argument("--mdp", required=True)
    p.add_argument("--theta")
    p.add_argument("--state", type=int, required=True)
    p.add_argument("--action", type=int, required=True)
    p.add_argument("--horizons", type=int, nargs="+", default=[2**k for k in range(8, 15)])
    p.add_argument("--repeats", type=int, default=1000)
    p.add_argument("--subtraj-len", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mse)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
