"""Command line front end.

    rsrecover run      [--config FILE] [--<config-key> VALUE ...]
    rsrecover compare  [...]
    rsrecover sweep    --seeds A..B [...]
    rsrecover metrics  TRACE.json [--lambda-weights a b c] [--desired-recovery-time-s T]

Exit status: 0 on success, 2 for an invalid configuration, 3 for I/O
failures. Output files go to ``--output-dir``, else ``$RSRECOVER_OUTPUT_DIR``,
else the working directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .resilience import score_events
from .runner import ExportError, compare_modes, config_hash, export, load_trace, run_scenario
from .scenario import SCHEMA_VERSION, ConfigError, Mode, ScenarioConfig, config_from_mapping, \
    load_config

OUTPUT_ENV = "RSRECOVER_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

log = logging.getLogger("rsrecover")


def _link(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[,:]\s*(\d+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected AP,USER but got {text!r}")
    return int(m.group(1)), int(m.group(2))


def seed_range(text: str) -> range:
    """``A..B`` (inclusive) or a single seed."""
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}")
    a = int(m.group(1))
    b = int(m.group(2)) if m.group(2) is not None else a
    if b < a:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return range(a, b + 1)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario (overrides the config file)")
    g.add_argument("--config", type=Path, help="YAML scenario file")
    for f in dataclasses.fields(ScenarioConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "lambda_weights":
            g.add_argument(flag, type=float, nargs=3, metavar=("L1", "L2", "L3"))
        elif f.name == "blockage_times_s":
            g.add_argument(flag, type=float, nargs="+", metavar="T")
        elif f.name == "blockage_links":
            g.add_argument(flag, nargs="+", metavar="AP,USER",
                           help="'random' or one AP,USER pair per blockage time")
        elif f.name == "mode":
            g.add_argument(flag, choices=[m.value for m in Mode])
        else:
            kind = int if isinstance(f.default, int) else float
            g.add_argument(flag, type=kind, metavar=kind.__name__.upper())


def build_config(args: argparse.Namespace) -> ScenarioConfig:
    base = load_config(args.config).to_dict() if args.config else {}
    for f in dataclasses.fields(ScenarioConfig):
        value = getattr(args, f.name, None)
        if value is None:
            continue
        if f.name == "blockage_links":
            if value == ["random"]:
                value = "random"
            else:
                try:
                    value = [_link(v) for v in value]
                except argparse.ArgumentTypeError as exc:
                    raise ConfigError(str(exc)) from exc
        base[f.name] = value
    return config_from_mapping({"schema_version": SCHEMA_VERSION, **base})


def output_dir(args: argparse.Namespace) -> Path:
    out = args.output_dir or os.environ.get(OUTPUT_ENV) or "."
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create output directory {path}: {exc.strerror or exc}") from exc
    return path


def _write_trace(trace, summary, config, out: Path, stem: str, fmt: str) -> list[Path]:
    fmts = ["CSV", "JSON"] if fmt == "both" else [fmt.upper()]
    return [export(trace, summary, f, out / f"{stem}.{f.lower()}", config) for f in fmts]


def cmd_run(args) -> int:
    config = build_config(args)
    out = output_dir(args)
    trace, summary = run_scenario(config)
    stem = f"run_{config.mode.value.lower()}_seed{config.seed}"
    files = _write_trace(trace, summary, config, out, stem, args.format)
    print(json.dumps({**summary.to_dict(), "files": [str(f) for f in files]}, indent=1))
    return EXIT_OK


def cmd_compare(args) -> int:
    config = build_config(args)
    out = output_dir(args)
    comp = compare_modes(config)
    table = out / f"compare_seed{config.seed}.csv"
    comp.write_table(table)
    for mode, (trace, summary) in (("rs_dynamic", comp.rs), ("tin", comp.tin)):
        _write_trace(trace, summary, config.replace(mode=Mode(mode.upper())), out,
                     f"run_{mode}_seed{config.seed}", args.format)
    print(json.dumps({"table": str(table),
                      "final_performance": {"RS_DYNAMIC": comp.rs[1].final_performance,
                                            "TIN": comp.tin[1].final_performance},
                      "admissions": comp.rs[1].admissions}, indent=1))
    return EXIT_OK


def _sweep_one(config: ScenarioConfig) -> list[dict]:
    comp = compare_modes(config)
    rows = []
    for trace, summary in (comp.rs, comp.tin):
        rows.append({
            "seed": summary.seed, "mode": summary.mode, "config_hash": summary.config_hash,
            "final_performance": summary.final_performance, "admissions": summary.admissions,
            "mean_r": (sum(s.r for s in trace.scores) / len(trace.scores)) if trace.scores else "",
            "antifragile_events": sum(bool(s.antifragile) for s in trace.scores),
        })
    return rows


def cmd_sweep(args) -> int:
    base = build_config(args)
    out = output_dir(args)
    configs = [base.replace(seed=s) for s in args.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_one, configs))
    else:
        results = [_sweep_one(c) for c in configs]
    rows = [r for pair in results for r in pair]
    path = out / f"sweep_{args.seeds.start}_{args.seeds.stop - 1}.csv"
    try:
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    mean = {m: sum(r["final_performance"] for r in rows if r["mode"] == m) / len(configs)
            for m in ("RS_DYNAMIC", "TIN")}
    print(json.dumps({"file": str(path), "seeds": len(configs),
                      "mean_final_performance": mean}, indent=1))
    return EXIT_OK


def cmd_metrics(args) -> int:
    trace, summary, config = load_trace(args.trace)
    weights = args.lambda_weights or (config.lambda_weights if config else None)
    t0 = args.desired_recovery_time_s
    if t0 is None:
        t0 = config.desired_recovery_time_s if config else 0.0
    if weights is None:
        weights = (0.0, 1.0, 0.0)
    # reuse the config validation for the override values
    ScenarioConfig(lambda_weights=tuple(weights), desired_recovery_time_s=t0)
    scores = score_events(trace, weights, t0)
    rows = [dataclasses.asdict(s) for s in scores]
    if args.json:
        print(json.dumps({"config_hash": summary.config_hash, "events": rows}, indent=1))
    else:
        print(f"{'t0':>7} {'t_n':>7} {'r_abs':>8} {'r_ada':>8} {'r_rec':>8} {'r':>8}  antifragile")
        for s in scores:
            print(f"{s.t0:7.2f} {s.t_n:7.2f} {s.r_abs:8.4f} {s.r_ada:8.4f} {s.r_rec:8.4f} "
                  f"{s.r:8.4f}  {s.antifragile}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsrecover", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_output(p):
        p.add_argument("--output-dir", help=f"defaults to ${OUTPUT_ENV} or the working directory")
        p.add_argument("--format", choices=["csv", "json", "both"], default="both")
        _add_config_flags(p)
        return p

    p = with_output(sub.add_parser("run", help="simulate one scenario"))
    p.set_defaults(func=cmd_run)
    p = with_output(sub.add_parser("compare", help="RS_DYNAMIC vs TIN on the same seed"))
    p.set_defaults(func=cmd_compare)
    p = with_output(sub.add_parser("sweep", help="compare over a seed range"))
    p.add_argument("--seeds", type=seed_range, required=True, metavar="A..B")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("metrics", help="rescore a JSON trace")
    p.add_argument("trace", type=Path)
    p.add_argument("--lambda-weights", type=float, nargs=3, metavar=("L1", "L2", "L3"))
    p.add_argument("--desired-recovery-time-s", type=float)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:  # ExportError included
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
