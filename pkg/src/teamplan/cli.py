"""Command line entry point.

Subcommands: gen, train, eval, es, compare, replan, time, oracle-check.
Artifacts go under ``<output_dir>/<timestamp>-<seed>/`` (``scenarios/``,
``checkpoints/``, ``reports/``, ``plans/``) unless ``--out`` names a run
directory.  Every JSON report embeds the resolved configuration.

Exit codes: 0 success, 1 unexpected error, 2 usage error or unknown
subcommand, 3 invalid configuration, 4 missing file or checkpoint, 5 policy
and scenarios disagree on team or target count, 6 search budget exceeded,
7 oracle check found a violation.  Failures print a one-line JSON error
report on stderr.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import statistics
import sys
import time
from pathlib import Path

from .config import RunConfig, load_config
from .env import GenerationConfig, Scenario, generate_scenario, is_terminal, reset, step
from .es import Objective, bfs_oracle, exhaustive_search, metric_value, plan_actions
from .estimator import check_policy_matches, check_scenarios
from .evaluate import (
    OptimalRecord,
    compare_to_optimal,
    dump_episodes,
    evaluate_policy,
    measure_inference,
    replanning_experiment,
)
from .exceptions import BudgetExceededError, DimensionError, InvalidConfigError
from .nets import load_checkpoint
from .trainer import train

log = logging.getLogger("teamplan")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_MISMATCH = 5
EXIT_BUDGET = 6
EXIT_CHECK_FAILED = 7


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_USAGE)


def run_dir(cfg: RunConfig, out: str | None) -> Path:
    if out:
        path = Path(out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(cfg.output_dir) / f"{stamp}-{cfg.seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_report(directory: Path, name: str, rows: list[dict], cfg: RunConfig, extra: dict | None = None):
    directory.mkdir(parents=True, exist_ok=True)
    if rows:
        with (directory / f"{name}.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    payload = {"config": cfg.to_dict(), "rows": rows}
    payload.update(extra or {})
    (directory / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))


def write_scenarios(directory: Path, scenarios):
    directory.mkdir(parents=True, exist_ok=True)
    for sc in scenarios:
        (directory / f"scenario_{sc.seed}.json").write_text(sc.to_json())


def read_scenarios(path) -> list[Scenario]:
    path = Path(path)
    if not path.exists():
        raise CliError(f"scenario path {path} does not exist", EXIT_MISSING)
    files = sorted(path.glob("*.json"), key=_seed_key) if path.is_dir() else [path]
    if not files:
        raise CliError(f"no scenario files in {path}", EXIT_MISSING)
    return check_scenarios(files)


def _seed_key(p: Path):
    digits = "".join(ch for ch in p.stem if ch.isdigit())
    return (int(digits) if digits else math.inf, p.name)


def held_out(cfg: RunConfig, n: int | None, seed: int | None, gen: GenerationConfig | None = None):
    gen = gen or cfg.generation
    n = cfg.eval.n_episodes if n is None else n
    first = cfg.eval.first_seed if seed is None else seed
    return [generate_scenario(gen, first + i) for i in range(n)]


def load_policy(path, scenarios):
    path = Path(path)
    if not path.exists():
        raise CliError(f"checkpoint {path} does not exist", EXIT_MISSING)
    params, meta = load_checkpoint(path)
    for sc in scenarios:
        check_policy_matches(params, sc.n_agents, sc.n_targets)
    return params, meta


def _scenarios_arg(args, cfg):
    if getattr(args, "scenarios", None):
        return read_scenarios(args.scenarios)
    return held_out(cfg, args.n, args.seed)


def optimal_records(scenarios, objectives, cfg: RunConfig, plan_dir: Path | None = None) -> list[OptimalRecord]:
    records = []
    for sc in scenarios:
        values = {}
        for obj in objectives:
            plan, value = exhaustive_search(sc, obj, cfg.es.budget)
            values[obj] = value
            if plan_dir is not None:
                d = plan_dir / obj.value
                d.mkdir(parents=True, exist_ok=True)
                (d / f"plan_{sc.seed}.json").write_text(json.dumps(plan.to_dict(obj, sc.seed), sort_keys=True))
        records.append(OptimalRecord(
            seed=sc.seed, checksum=sc.checksum(), horizon=sc.horizon, n_agents=sc.n_agents,
            m_st=values.get(Objective.SOLVE_TIME, 0), m_tte=values.get(Objective.TEAM_EFFORT, 0),
        ))
    return records


def _objectives(name: str) -> list[Objective]:
    return list(Objective) if name == "both" else [Objective(name)]


def cmd_gen(args, cfg):
    out = run_dir(cfg, args.out)
    scenarios = held_out(cfg, args.n, args.seed)
    write_scenarios(out / "scenarios", scenarios)
    print(out / "scenarios")


def cmd_train(args, cfg):
    out = run_dir(cfg, args.out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    result = train(cfg.train, cfg.generation, cfg.rewards, out_dir=out, run_metadata=cfg.to_dict())
    print(result.checkpoints[-1] if result.checkpoints else out)


def cmd_eval(args, cfg):
    out = run_dir(cfg, args.out)
    scenarios = _scenarios_arg(args, cfg)
    params, _ = load_policy(args.policy, scenarios)
    report = evaluate_policy(params, scenarios, label=Path(args.policy).stem)
    write_report(out / "reports", "eval", [report.row()], cfg, {"policy": str(args.policy)})
    if args.episodes_jsonl:
        dump_episodes(out / "reports" / "eval_episodes.jsonl", report.episodes)
    print(json.dumps(report.row(), default=str))


def cmd_es(args, cfg):
    out = run_dir(cfg, args.out)
    scenarios = _scenarios_arg(args, cfg)
    records = optimal_records(scenarios, _objectives(args.objective), cfg, out / "plans")
    rows = [dataclasses.asdict(r) for r in records]
    write_report(out / "reports", "optimal", rows, cfg, {"objective": args.objective})
    print(out / "reports" / "optimal.json")


def cmd_compare(args, cfg):
    out = run_dir(cfg, args.out)
    scenarios = read_scenarios(args.scenarios) if args.scenarios else held_out(cfg, args.n, args.seed)
    params, _ = load_policy(args.policy, scenarios)
    if args.optimal:
        data = json.loads(Path(args.optimal).read_text())
        records = [OptimalRecord(**r) for r in data["rows"]]
    else:
        records = optimal_records(scenarios, _objectives(args.objective), cfg)
    report = evaluate_policy(params, scenarios, label=Path(args.policy).stem)
    ratios = compare_to_optimal(report, records, label=Path(args.policy).stem)
    row = ratios.row()
    if args.objective == "solve_time":
        row["tte_ratio"] = "n/a"
    elif args.objective == "team_effort":
        row["st_ratio"] = "n/a"
    write_report(out / "reports", "compare", [row], cfg, {"policy": str(args.policy)})
    print(json.dumps(row))


def cmd_replan(args, cfg):
    out = run_dir(cfg, args.out)
    n = cfg.eval.replan_episodes if args.episodes is None else args.episodes
    scenarios = read_scenarios(args.scenarios) if args.scenarios else held_out(cfg, n, args.seed)
    params, _ = load_policy(args.policy, scenarios)
    n_inject = cfg.eval.n_inject if args.inject is None else args.inject
    seed = cfg.eval.replan_seed if args.seed is None else args.seed
    report = replanning_experiment(params, scenarios, n_inject=n_inject, seed=seed, label=Path(args.policy).stem)
    row = report.row()
    row["n_inject"] = n_inject
    write_report(out / "reports", "replan", [row], cfg, {"policy": str(args.policy)})
    print(json.dumps(row, default=str))


def cmd_time(args, cfg):
    out = run_dir(cfg, args.out)
    reps = cfg.eval.timing_repetitions if args.repetitions is None else args.repetitions
    rows = []
    if args.policy:
        scenarios = _scenarios_arg(args, cfg)
        params, _ = load_policy(args.policy, scenarios)
        for sc in scenarios:
            stats = measure_inference(params, sc, reps)
            rows.append({"method": "policy", "n_targets": sc.n_targets, "seed": sc.seed,
                         "mean_s": stats.mean_episode_s, "std_s": stats.std_episode_s,
                         "mean_step_s": stats.mean_step_s})
    for m in args.targets or []:
        gen = dataclasses.replace(cfg.generation, n_targets=m)
        for sc in held_out(cfg, args.es_instances, args.seed, gen):
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                exhaustive_search(sc, Objective.SOLVE_TIME, cfg.es.budget)
                times.append(time.perf_counter() - t0)
            rows.append({"method": "es", "n_targets": m, "seed": sc.seed,
                         "mean_s": statistics.fmean(times), "std_s": statistics.pstdev(times),
                         "mean_step_s": ""})
    write_report(out / "reports", "timing", rows, cfg)
    print(out / "reports" / "timing.csv")


def cmd_oracle_check(args, cfg):
    out = run_dir(cfg, args.out)
    gen = GenerationConfig(width=args.width, height=args.height, n_agents=args.agents, n_targets=args.targets,
                           n_skills=cfg.generation.n_skills, horizon=args.horizon,
                           avoid_pass_through=args.avoid_pass_through)
    rows = []
    failures = 0
    for i in range(args.n):
        sc = generate_scenario(gen, args.seed + i)
        plan, _ = exhaustive_search(sc, Objective.SOLVE_TIME, cfg.es.budget)
        oracle = bfs_oracle(sc, Objective.SOLVE_TIME, cfg.es.oracle_max_states)
        state, _ = reset(sc)
        for joint in plan_actions(sc, plan):
            if is_terminal(state, sc):
                break
            state, _ = step(state, sc, joint)
        replay_ok = all(state.solved) and state.step <= plan.t_solved
        ok = plan.t_solved >= oracle and replay_ok
        failures += not ok
        rows.append({"seed": sc.seed, "es_t_solved": plan.t_solved, "oracle_t_solved": oracle,
                     "equal": plan.t_solved == oracle, "replay_ok": replay_ok, "ok": ok})
    write_report(out / "reports", "oracle_check", rows, cfg, {"generation": dataclasses.asdict(gen)})
    print(json.dumps({"instances": len(rows), "failures": failures,
                      "equal": sum(r["equal"] for r in rows)}))
    if failures:
        raise CliError(f"{failures} oracle check violations", EXIT_CHECK_FAILED)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="teamplan", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="run configuration JSON (defaults apply when omitted)")
    parser.add_argument("--out", help="run directory (default: <output_dir>/<timestamp>-<seed>)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def scenario_args(p):
        p.add_argument("--scenarios", help="scenario JSON file or directory")
        p.add_argument("--n", type=int, help="number of generated scenarios when --scenarios is absent")
        p.add_argument("--seed", type=int, help="first scenario seed")

    p = sub.add_parser("gen", help="generate scenario files")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a policy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--policy", required=True)
    scenario_args(p)
    p.add_argument("--episodes-jsonl", action="store_true", help="also dump per-episode results")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("es", help="exhaustive-search optima")
    scenario_args(p)
    p.add_argument("--objective", choices=["solve_time", "team_effort", "both"], default="both")
    p.set_defaults(func=cmd_es)

    p = sub.add_parser("compare", help="policy versus exhaustive-search ratios")
    p.add_argument("--policy", required=True)
    scenario_args(p)
    p.add_argument("--objective", choices=["solve_time", "team_effort", "both"], default="both")
    p.add_argument("--optimal", help="optimal.json written by the es subcommand")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replan", help="replanning experiment with injected targets")
    p.add_argument("--policy", required=True)
    p.add_argument("--scenarios")
    p.add_argument("--inject", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int, help="scenario and injection seed")
    p.set_defaults(func=cmd_replan)

    p = sub.add_parser("time", help="inference timing of the policy and the exhaustive search")
    p.add_argument("--policy")
    scenario_args(p)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--targets", type=int, nargs="*", help="target counts for exhaustive-search timing")
    p.add_argument("--es-instances", type=int, default=5)
    p.set_defaults(func=cmd_time)

    p = sub.add_parser("oracle-check", help="certify exhaustive search against the joint-state oracle")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=6)
    p.add_argument("--height", type=int, default=6)
    p.add_argument("--agents", type=int, default=2)
    p.add_argument("--targets", type=int, default=3)
    p.add_argument("--horizon", type=int, default=64)
    p.add_argument("--avoid-pass-through", action="store_true")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    report = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(report), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError("a subcommand is required", EXIT_USAGE)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        cfg = load_config(args.config) if args.config else RunConfig().validate()
        args.func(args, cfg)
    except CliError as exc:
        return _fail(exc.code, exc)
    except InvalidConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, exc)
    except DimensionError as exc:
        return _fail(EXIT_MISMATCH, exc)
    except BudgetExceededError as exc:
        return _fail(EXIT_BUDGET, exc)
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        return _fail(EXIT_ERROR, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
