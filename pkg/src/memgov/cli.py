"""Operator command line: serve, verify, reconcile, query, simulate, report."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from . import simharness as sim
from .config import DATA_DIR_ENV, CliConfig, load_config
from .errors import ChainInvalid, InvalidConfig, MemgovError
from .gateway import Gateway, serve
from .ledger import Keyring, Ledger, verify_file
from .read_gate import Identity, retrieve
from .reconciler import append_report_csv, reconcile, replay_state
from .store import MemoryState

log = logging.getLogger("memgov")


class UsageError(Exception):
    pass


def _parse_sets(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise UsageError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args: argparse.Namespace, extra: dict[str, str] | None = None) -> CliConfig:
    overrides = _parse_sets(getattr(args, "set", None) or [])
    overrides.update(extra or {})
    return load_config(args.data_dir, args.config, overrides)


def _write_out(text: str, out: str | None, default_name: str) -> Path:
    path = Path(out) if out else Path("sim_out") / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


# --- subcommands ----------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    serve(args.listen, _config(args))
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _config(args)
    report = verify_file(cfg.ledger_path, Keyring.load(cfg.resolved_keyring))
    if report.valid:
        print(f"ledger valid: {report.entries} entries")
        return 0
    print(f"ledger INVALID at seq {report.first_bad_seq}: {report.detail}")
    return 1


def _load_state(cfg: CliConfig, ledger: Ledger) -> MemoryState:
    if cfg.snapshot_path.exists():
        clock = max((e.timestamp for e in ledger.entries()), default=0)
        return MemoryState.import_snapshot(cfg.snapshot_path, ledger, cfg.embedding_dim, clock)
    return replay_state(ledger, cfg.embedding_dim)


def cmd_reconcile(args: argparse.Namespace) -> int:
    extra = {}
    if args.mode:
        extra["reconcile.mode"] = args.mode
    if args.threshold is not None:
        extra["reconcile.drift_threshold"] = str(args.threshold)
    cfg = _config(args, extra)
    ledger = Ledger(cfg.ledger_path, Keyring.load(cfg.resolved_keyring))
    try:
        state = _load_state(cfg, ledger)
        cleaned, report = reconcile(state, ledger, cfg.reconcile)
        if cfg.snapshot_path.exists() and report.units_corrected:
            cleaned.export_snapshot(cfg.snapshot_path)
        append_report_csv(cfg.report_path, [report])
    finally:
        ledger.close()
    print("step,units_checked,units_corrected,pre_drift,post_drift")
    print(f"{report.step},{report.units_checked},{report.units_corrected},{report.pre_drift!r},{report.post_drift!r}")
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    cfg = _config(args)
    gw = Gateway.open(cfg)
    try:
        ident = Identity(args.principal, frozenset(args.attr or []))
        res = retrieve(args.text, ident, args.k, gw.state, cfg.decay, gw.policy)
    finally:
        gw.ledger.close()
    for u, s in zip(res.units, res.similarities):
        print(f"{u.idx}\t{s:.6f}\t{u.scope}\t{u.content}")
    if not res.units:
        print("(no results)", file=sys.stderr)
    return 0


def _exp_value(parser, section: str, key: str, flag, cast):
    if flag is not None:
        return flag
    if parser is not None and parser.has_option(section, key):
        return cast(parser.get(section, key))
    return None


def cmd_simulate(args: argparse.Namespace) -> int:
    exp = sim.load_experiment_file(args.experiment) if args.experiment else None
    if args.which == "drift":
        defaults = sim.DriftExperimentConfig()
        steps = _exp_value(exp, "drift", "steps", args.steps, int) or defaults.total_steps
        window = _exp_value(exp, "drift", "window", args.window, int) or defaults.window
        eps = _exp_value(exp, "drift", "epsilon", args.epsilon, float)
        n_seeds = _exp_value(exp, "drift", "seeds", args.seeds, int) or len(defaults.seeds)
        corpus = _exp_value(exp, "drift", "corpus_size", args.corpus_size, int) or defaults.corpus_size
        summ = _exp_value(exp, "drift", "summarizer", args.summarizer, str) or defaults.summarizer
        cfg = sim.DriftExperimentConfig(
            total_steps=steps, window=window,
            epsilon_step=defaults.epsilon_step if eps is None else eps,
            seeds=tuple(range(n_seeds)), corpus_size=corpus, summarizer=summ,
        )
        curves = sim.run_drift(cfg)
        path = _write_out(sim.drift_csv(curves), args.out, "drift.csv")
        naive, gov = curves["naive"].mean, curves["governed"].mean
        print(f"wrote {path}")
        print(f"naive final mean delta {naive[-1]:.6f}; governed max mean delta {max(gov):.6f}")
    elif args.which == "leakage":
        tenants = _exp_value(exp, "leakage", "tenants", args.tenants, int) or 4
        secrets = _exp_value(exp, "leakage", "secrets", args.secrets, int)
        secrets = 25 if secrets is None else secrets
        queries = _exp_value(exp, "leakage", "queries", args.queries, int) or 10000
        seed = _exp_value(exp, "leakage", "seed", args.seed, int) or 0
        rows = [(tenants, on, sim.run_leakage(tenants, secrets, queries, on, seed)) for on in (True, False)]
        path = _write_out(sim.leakage_csv(rows), args.out, "leakage.csv")
        print(f"wrote {path}")
        for t, on, rate in rows:
            print(f"policy_on={str(on).lower()} leakage_rate={rate:.6f}")
    elif args.which == "scenarios":
        seed = _exp_value(exp, "scenarios", "seed", args.seed, int) or 0
        results = sim.run_scenarios(seed)
        path = _write_out(sim.scenarios_csv(results), args.out, "scenarios.csv")
        print(f"wrote {path}")
        for r in results:
            print(f"{r.scenario}: {r.metric} ungoverned={r.ungoverned:.4f} governed={r.governed:.4f}")
    else:
        writes = _exp_value(exp, "latency", "writes", args.writes, int) or 5000
        seed = _exp_value(exp, "latency", "seed", args.seed, int) or 0
        modes = args.modes.split(",") if args.modes else ["off", "sync", "async"]
        stats = [sim.run_latency(writes, m, seed) for m in modes]
        path = _write_out(sim.latency_csv(stats), args.out, "latency.csv")
        print(f"wrote {path}")
        for s in stats:
            print(f"{s.mode}: p50={s.p50_us:.1f}us p95={s.p95_us:.1f}us final_delta={s.final_delta:.6f}")
    return 0


def _table(header: Sequence[str], rows: list[Sequence[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*map(str, r)) for r in rows]
    return "\n".join(lines)


def summarize_csv(path: Path) -> str:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        cols = tuple(reader.fieldnames or ())
    if cols == ("step", "seed", "mode", "delta"):
        by_mode: dict[str, dict[int, list[float]]] = defaultdict(lambda: defaultdict(list))
        for r in rows:
            by_mode[r["mode"]][int(r["step"])].append(float(r["delta"]))
        out = []
        for mode, steps in by_mode.items():
            means = [sum(v) / len(v) for _, v in sorted(steps.items())]
            seeds = len(next(iter(steps.values())))
            out.append((mode, seeds, len(means) - 1, f"{means[-1]:.6f}", f"{max(means):.6f}"))
        return _table(("mode", "seeds", "steps", "final_mean_delta", "max_mean_delta"), out)
    if cols == ("step", "units_checked", "units_corrected", "pre_drift", "post_drift"):
        corrected = sum(int(r["units_corrected"]) for r in rows)
        worst = max((float(r["pre_drift"]) for r in rows), default=0.0)
        return _table(("runs", "units_corrected", "max_pre_drift"), [(len(rows), corrected, f"{worst:.6f}")])
    return _table(cols, [tuple(r[c] for c in cols) for r in rows])


def cmd_report(args: argparse.Namespace) -> int:
    for name in args.files:
        path = Path(name)
        if not path.exists():
            print(f"{name}: not found", file=sys.stderr)
            return 1
        print(f"== {name}")
        print(summarize_csv(path))
    return 0


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-dir", help=f"data directory (default: ${DATA_DIR_ENV} or .)")
    common.add_argument("--config", help="flat key=value config file (default: <data-dir>/memgov.conf)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override; repeatable")

    p = argparse.ArgumentParser(prog="memgov", description="Governed agent memory substrate.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="{serve,verify,reconcile,query,simulate,report}")
    sub.required = True

    s = sub.add_parser("serve", parents=[common], help="run the gateway")
    s.add_argument("--listen", required=True, help="host:port or unix:/path")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("verify", parents=[common], help="check the ledger hash chain")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("reconcile", parents=[common], help="one-shot reconciliation")
    s.add_argument("--mode", choices=("full_rebuild", "per_unit_correct"))
    s.add_argument("--threshold", type=float)
    s.set_defaults(func=cmd_reconcile)

    s = sub.add_parser("query", parents=[common], help="retrieve as an identity")
    s.add_argument("text")
    s.add_argument("--principal", required=True)
    s.add_argument("--attr", action="append", metavar="KEY=VALUE")
    s.add_argument("-k", type=int, default=5)
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("simulate", help="run an experiment and write CSV")
    s.add_argument("which", choices=("drift", "leakage", "latency", "scenarios"))
    s.add_argument("--experiment", help="INI file with [drift]/[leakage]/[latency]/[scenarios] sections")
    s.add_argument("--out", help="CSV path (default: sim_out/<experiment>.csv)")
    s.add_argument("--data-dir", help="sandbox directory; experiments never read it")
    s.add_argument("--steps", type=int)
    s.add_argument("--window", type=int)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--seeds", type=int, help="number of seeds (0..n-1)")
    s.add_argument("--corpus-size", type=int)
    s.add_argument("--summarizer", choices=sim.SUMMARIZERS)
    s.add_argument("--tenants", type=int)
    s.add_argument("--secrets", type=int)
    s.add_argument("--queries", type=int)
    s.add_argument("--writes", type=int)
    s.add_argument("--modes", help="comma list of off,sync,async")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("report", help="summarise CSV outputs as text tables")
    s.add_argument("files", nargs="+")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"memgov: error: {exc}", file=sys.stderr)
        return 2
    except (InvalidConfig, ValueError) as exc:
        print(f"memgov: error: {exc}", file=sys.stderr)
        return 2
    except ChainInvalid as exc:
        print(f"memgov: {exc}", file=sys.stderr)
        return 1
    except (MemgovError, OSError) as exc:
        print(f"memgov: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
