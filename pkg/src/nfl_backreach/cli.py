"""Command-line entry point: ``nfl-backreach {run,audit,train,scenarios}``.

Exit codes: 0 certified / success, 2 not certified (or audit violations),
1 error.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import backreach as br
from . import experiments as ex
from . import network, oracle, report
from .dynamics import LinearSystem
from .geometry import HyperRectangle, bound_with_rectangle
from .lp import SolverFailure

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CERTIFIED = 2

ALGORITHMS = ("breach", "rebreach", "forward")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


@dataclass
class RunConfig:
    scenario: str | None = None
    system: str | None = None
    policy: str | None = None
    target: str | None = None
    init: str | None = None
    algorithm: str = "breach"
    tau: int | None = None
    r: list[int] | None = None
    samples: int = 100_000
    seed: int = 0
    out: str = "report.json"
    clip_control_bounds: bool = False
    single_step_refinement: bool = False
    bench: bool = False

    def __post_init__(self):
        explicit = [self.system, self.policy, self.target, self.init]
        if (self.scenario is None) == all(p is None for p in explicit):
            raise UsageError("give exactly one of --scenario or the explicit --system/--policy/--target/--init paths")
        if self.scenario is None and any(p is None for p in explicit):
            raise UsageError("explicit mode needs all of --system, --policy, --target and --init")
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class Problem:
    name: str
    system: LinearSystem
    policy: network.NeuralNetwork
    target: HyperRectangle
    init: HyperRectangle
    tau: int
    r: list[int]


def resolve(cfg: RunConfig) -> Problem:
    if cfg.scenario is not None:
        try:
            sc = ex.get_scenario(cfg.scenario)
        except KeyError as exc:
            raise UsageError(str(exc)) from exc
        return Problem(
            sc.name, sc.system, sc.policy(), sc.target, sc.init,
            cfg.tau or sc.tau, list(cfg.r or sc.r),
        )
    if cfg.tau is None or cfg.r is None:
        raise UsageError("explicit mode needs --tau and --r")
    return Problem(
        "custom",
        LinearSystem.load(cfg.system),
        network.load(cfg.policy),
        HyperRectangle.from_dict(json.loads(Path(cfg.target).read_text())),
        HyperRectangle.from_dict(json.loads(Path(cfg.init).read_text())),
        cfg.tau,
        list(cfg.r),
    )


def _analyse(p: Problem, cfg: RunConfig, opts: br.BackreachOptions):
    if cfg.algorithm == "forward":
        return br.reach_forward_result(p.system, p.policy, p.init, p.tau, p.r, opts)
    base = br.breach_lp(p.system, p.policy, p.target, p.tau, p.r, opts)
    if cfg.algorithm == "breach":
        return base
    return br.rebreach_lp(p.system, p.policy, p.target, p.tau, p.r, opts, base=base)


def run_analysis(cfg: RunConfig, echo=print) -> tuple[dict, int]:
    """Run one configured analysis, write its report files, return (report, exit code)."""
    p = resolve(cfg)
    opts = br.BackreachOptions(
        clip_control_bounds=cfg.clip_control_bounds,
        single_step_refinement=cfg.single_step_refinement,
    )
    runs = 3 if cfg.bench else 1
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        result = _analyse(p, cfg, opts)
        times.append(time.perf_counter() - t0)
    wall = statistics.median(times)

    rep: dict = {
        "version": report.version_string(),
        "config": asdict(cfg),
        "problem": {
            "name": p.name,
            "system": p.system.to_dict(),
            "policy": p.policy.to_dict(),
            "target": p.target.to_dict(),
            "init": p.init.to_dict(),
            "tau": p.tau,
            "r": p.r,
        },
        "wall_clock": {"median": wall, "min": min(times), "max": max(times), "runs": runs},
    }
    rows = list(report.csv_rows("target", [p.target])) + list(report.csv_rows("init", [p.init]))

    if cfg.algorithm == "forward":
        verdict = br.certify_forward(result.sets, p.target)
        rep["forward"] = result.to_dict()
        rep["lp_solves"] = result.lp_solves
        rows += report.csv_rows("forward", result.sets)
        areas = [bound_with_rectangle(u).volume() for u in result.sets]
        errors = None
    else:
        verdict = br.certify_safety(result, p.init)
        rep["result"] = result.to_dict()
        rep["lp_solves"] = result.lp_solves
        base = result.base
        if base is not None:
            rep["base_result"] = base.to_dict()
            rows += report.csv_rows("bp", base.bp_sets)
            rows += report.csv_rows("bp-refined", result.bp_sets)
        else:
            rows += report.csv_rows("bp", result.bp_sets)
        # every true BP state lies in the first-pass hulls, so they bound the sampling region;
        # breach and rebreach runs of one problem therefore share the same truth
        first = base if base is not None else result
        region = bound_with_rectangle([h for h in first.hulls if h is not None])
        truth = oracle.mc_true_bp(p.system, p.policy, p.target, p.tau, region, cfg.samples, cfg.seed)
        errors = oracle.step_errors(result, truth)
        rep["truth"] = truth.to_dict()
        rep["errors"] = errors
        if base is not None:
            rep["base_errors"] = oracle.step_errors(base, truth)
        rows += report.csv_rows("truth-hull", truth.rects)
        areas = result.hull_areas()
    rep["verdict"] = verdict.to_dict()

    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out, rep)
    report.write_csv(out.with_suffix(".csv"), rows)

    status = "CERTIFIED SAFE" if verdict.certified else f"NOT CERTIFIED (first unsafe step {verdict.first_unsafe_step})"
    echo(f"[{p.name}] {cfg.algorithm}: {status}")
    for t, a in enumerate(areas):
        err = "" if errors is None or errors[t] is None else f"  error {errors[t]:.4f}"
        echo(f"  step {t}: hull area {a:.6g}{err}")
    echo(f"  lp_solves {rep['lp_solves']}  wall-clock {wall:.3f}s" + (f" (min {min(times):.3f}, max {max(times):.3f})" if runs > 1 else ""))
    echo(f"  report written to {out} and {out.with_suffix('.csv')}")
    return rep, EXIT_OK if verdict.certified else EXIT_NOT_CERTIFIED


def audit_report(path, samples: int, seed: int, echo=print) -> tuple[oracle.AuditReport, int]:
    try:
        rep = report.read_json(path)
        prob = rep["problem"]
        result = br.BackreachResult.from_dict(rep["result"])
        sys_ = LinearSystem.from_dict(prob["system"])
        nn = network.NeuralNetwork.from_dict(prob["policy"])
        target = HyperRectangle.from_dict(prob["target"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read backward-analysis report {path}: {exc}") from exc
    audit = oracle.soundness_audit(result, sys_, nn, target, samples, seed)
    echo(f"audit of {path}: {audit.hits_checked} target-reaching samples checked, {audit.violations} violations")
    for t, x in audit.violating_states[:20]:
        echo(f"  step {t}: x = {x}")
    return audit, EXIT_OK if audit.sound else EXIT_NOT_CERTIFIED


def _train(args, echo=print) -> int:
    hidden = args.hidden or list(ex.POLICY_HIDDEN[args.field])
    seed = ex.POLICY_SEEDS[args.field] if args.seed is None else args.seed
    if args.dataset_out:
        ex.make_dataset(args.field, args.samples, seed=seed).save_csv(args.dataset_out)
    tp = ex.train_policy(
        args.field, hidden, args.epochs, args.batch, seed, args.samples, args.lr,
        saturate=not args.no_saturate,
    )
    out = Path(args.out) if args.out else ex.policy_path(args.field)
    out.parent.mkdir(parents=True, exist_ok=True)
    network.save(tp.policy, out)
    mse = ", ".join(f"{v:.5f}" for v in tp.held_out_mse)
    echo(f"trained {args.field} policy {tp.policy!r}; held-out MSE per output: [{mse}]")
    echo(f"policy written to {out}")
    if np.any(tp.held_out_mse >= ex.PILOT_MSE_THRESHOLD):
        echo(f"warning: held-out MSE above the {ex.PILOT_MSE_THRESHOLD} pilot threshold")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nfl-backreach", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="compute backprojection or forward sets and certify safety")
    run.add_argument("--scenario", choices=[s.name for s in ex.build_scenarios()])
    run.add_argument("--system", help="system JSON (A, B, c, u_lo, u_hi)")
    run.add_argument("--policy", help="policy JSON")
    run.add_argument("--target", help="target box JSON {lo, hi}")
    run.add_argument("--init", help="initial-set box JSON {lo, hi}")
    run.add_argument("--algorithm", choices=ALGORITHMS, default="breach")
    run.add_argument("--tau", type=int)
    run.add_argument("--r", type=_ints, help="partition counts, e.g. 4,4")
    run.add_argument("--samples", type=int, default=100_000)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default="report.json")
    run.add_argument("--clip-control-bounds", action="store_true")
    run.add_argument("--single-step-refinement", action="store_true")
    run.add_argument("--bench", action="store_true", help="time 3 runs, report the median")

    audit = sub.add_parser("audit", help="Monte-Carlo soundness audit of a run report")
    audit.add_argument("report")
    audit.add_argument("--samples", type=int, default=100_000)
    audit.add_argument("--seed", type=int, default=0)

    train = sub.add_parser("train", help="fit a policy network to an expert control law")
    train.add_argument("--field", choices=ex.FIELDS, required=True)
    train.add_argument("--hidden", type=_ints)
    train.add_argument("--epochs", type=int, default=ex.TRAIN_EPOCHS)
    train.add_argument("--batch", type=int, default=ex.TRAIN_BATCH)
    train.add_argument("--samples", type=int, default=ex.TRAIN_SAMPLES)
    train.add_argument("--seed", type=int)
    train.add_argument("--lr", type=float, default=1e-2)
    train.add_argument("--no-saturate", action="store_true", help="skip the control-limit clamp head")
    train.add_argument("--dataset-out", help="also write the generated dataset as CSV")
    train.add_argument("--out", help="policy path (default: the packaged policy file)")

    sc = sub.add_parser("scenarios", help="export the scenario registry as JSON")
    sc.add_argument("--out", default="-")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error already printed by argparse
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    try:
        if args.command == "run":
            cfg = RunConfig(
                scenario=args.scenario, system=args.system, policy=args.policy, target=args.target,
                init=args.init, algorithm=args.algorithm, tau=args.tau, r=args.r, samples=args.samples,
                seed=args.seed, out=args.out, clip_control_bounds=args.clip_control_bounds,
                single_step_refinement=args.single_step_refinement, bench=args.bench,
            )
            _, code = run_analysis(cfg)
            return code
        if args.command == "audit":
            _, code = audit_report(args.report, args.samples, args.seed)
            return code
        if args.command == "train":
            return _train(args)
        if args.command == "scenarios":
            text = json.dumps([s.to_dict() for s in ex.build_scenarios()], indent=2)
            if args.out == "-":
                print(text)
            else:
                Path(args.out).write_text(text)
            return EXIT_OK
    except UsageError as exc:
        print(f"nfl-backreach: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (SolverFailure, FileNotFoundError, ValueError) as exc:
        print(f"nfl-backreach: analysis failed: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
