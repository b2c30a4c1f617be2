"""Command-line entry point: ``klgames <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from klgames.data import OfflineDataset, make_behavior_policy, sample_dataset
from klgames.errors import KLGameError
from klgames.game import RegularizationConfig, duality_gap, load_game, load_policy
from klgames.harness import (
    ExperimentConfig,
    GameSpec,
    generate_random_game,
    make_refs,
    report_passed,
    rows_to_csv,
    run_optimization_sweep,
    run_statistical_sweep,
    verify_suite,
)
from klgames.rose import rose_solve
from klgames.sosmd import SosmdOptions, sosmd_solve


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument(
        "--strict", action=argparse.BooleanOptionalAction, default=True, help="strict validation of inputs and assumptions (default on)"
    )
    return p


def _regularization(args, game):
    if args.refs_file:
        refs = load_policy(args.refs_file)
    else:
        refs = make_refs(args.refs, game.dims, args.seed, args.refs_concentration)
    return RegularizationConfig(args.eta, refs)


def _add_reg(p):
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--refs", choices=("uniform", "dirichlet"), default="uniform")
    p.add_argument("--refs-concentration", type=float, default=1.0)
    p.add_argument("--refs-file", help="JSON policy file used as the reference pair")


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="klgames", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-game", parents=[common], help="write a random game as JSON")
    p.add_argument("--horizon", type=int, default=3)
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--a1", type=int, default=2)
    p.add_argument("--a2", type=int, default=2)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--deterministic", action="store_true", help="point-mass transitions")

    p = sub.add_parser("sample", parents=[common], help="sample an offline dataset (JSON Lines)")
    p.add_argument("--game", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--behavior", choices=("uniform", "refs"), default="uniform")
    _add_reg(p)

    for name, helptext in (("rose", "exact regularized equilibrium from data"), ("sosmd", "mirror self-play from data")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--game", required=True, help="game file (dimensions; also used for the reported gap)")
        p.add_argument("--data", required=True)
        p.add_argument("--stage-tol", type=float, default=1e-10)
        _add_reg(p)
        if name == "sosmd":
            p.add_argument("--T", type=int, required=True)
            p.add_argument("--diagnostics", help="CSV path for per-iteration diagnostics")

    p = sub.add_parser("eval-gap", parents=[common], help="duality gap of a policy in a known game")
    p.add_argument("--game", required=True)
    p.add_argument("--policy", required=True)
    _add_reg(p)

    sub.add_parser("stat-sweep", parents=[common], help="duality gap vs n (CSV)")
    sub.add_parser("opt-sweep", parents=[common], help="SOS-MD distance vs T (CSV)")
    sub.add_parser("verify", parents=[common], help="run the invariant suite (JSON report)")
    return parser


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args):
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    config.strict = args.strict
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (KLGameError, OSError, ValueError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def _dispatch(args):
    cmd = args.command
    if cmd == "gen-game":
        if args.config:
            spec = _config(args).game
        else:
            spec = GameSpec(args.horizon, args.states, args.a1, args.a2, args.concentration, args.deterministic)
        game = generate_random_game(spec, args.seed, strict=args.strict)
        _emit(json.dumps(game.to_dict(), sort_keys=True) + "\n", args.out)
        return 0

    if cmd == "sample":
        game = load_game(args.game, strict=args.strict)
        cfg = _regularization(args, game)
        behavior = make_behavior_policy(game, args.behavior, refs=cfg.refs)
        data = sample_dataset(game, behavior, args.n, args.sigma, seed=args.seed, strict=args.strict)
        _emit("".join(data.jsonl_lines()), args.out)
        return 0

    if cmd in ("rose", "sosmd"):
        game = load_game(args.game, strict=args.strict)
        cfg = _regularization(args, game)
        data = OfflineDataset.from_jsonl(args.data, game.dims)
        if cmd == "rose":
            res = rose_solve(data, game.dims, cfg, stage_tol=args.stage_tol)
        else:
            opts = SosmdOptions(reference=bool(args.diagnostics))
            res, diag = sosmd_solve(data, game.dims, cfg, args.T, options=opts)
            if args.diagnostics:
                lines = ["run_id,h,agg,t,kl,l1,gamma"]
                lines += [",".join(_cell(v) for v in row) for row in diag.rows(f"sosmd-s{args.seed}")]
                with open(args.diagnostics, "w") as fh:
                    fh.write("\n".join(lines) + "\n")
        out = res.to_dict()
        out["duality_gap"] = duality_gap(game, res.policy, cfg)
        _emit(json.dumps(out, sort_keys=True) + "\n", args.out)
        return 0

    if cmd == "eval-gap":
        game = load_game(args.game, strict=args.strict)
        cfg = _regularization(args, game)
        gap = duality_gap(game, load_policy(args.policy), cfg)
        _emit(json.dumps({"duality_gap": gap}, sort_keys=True) + "\n", args.out)
        return 0

    if cmd in ("stat-sweep", "opt-sweep"):
        config = _config(args)
        rows = run_statistical_sweep(config) if cmd == "stat-sweep" else run_optimization_sweep(config)
        _emit(rows_to_csv(rows), args.out or config.out)
        return 0

    if cmd == "verify":
        config = _config(args)
        report = verify_suite(config, seed=args.seed)
        _emit(json.dumps(report, indent=1) + "\n", args.out or config.out)
        return 0 if report_passed(report) else 1
    raise AssertionError(cmd)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
