"""Scenario runs, the RS-versus-TIN comparison and trace export."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .regroup import RecoveryReport, recovery_pipeline
from .resilience import ResilienceScore, ResilienceTrace, TickRecord, instantaneous_performance, \
    score_events
from .rsmodel import RsConfiguration
from .scenario import (
    SCHEMA_VERSION,
    ConfigError,
    Mode,
    ScenarioConfig,
    blockage_schedule,
    config_from_mapping,
    draw_channels,
    generate_topology,
    generators,
)
from .solver import SystemParams, initialize_sca, sca_step

log = logging.getLogger(__name__)


class ExportError(OSError):
    pass


def config_hash(config: ScenarioConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunSummary:
    config_hash: str
    seed: int
    mode: str
    scores: list[tuple[float, float, float, float]]
    final_performance: float
    total_ticks: int
    admissions: int
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self, include_wall_time: bool = False) -> dict:
        d = dataclasses.asdict(self)
        d["scores"] = [list(s) for s in self.scores]
        if not include_wall_time:
            d.pop("wall_time_s")
        return d


def _check_schedule(config: ScenarioConfig) -> dict[int, int]:
    ticks = config.event_ticks()
    if len(set(ticks)) != len(ticks) or any(t <= 0 or t >= config.n_ticks for t in ticks):
        raise ConfigError("blockage times must map to distinct ticks inside the run")
    return {t: i for i, t in enumerate(ticks)}


def run_scenario(config: ScenarioConfig) -> tuple[ResilienceTrace, RunSummary]:
    """Simulate one observation window, one SCA iteration per tick.

    On an event tick the recovery pipeline runs first and the recorded
    rates are the post-recovery allocation; the SCA step taken on that
    tick shows up from the next tick on.
    """
    started = time.perf_counter()
    event_ticks = _check_schedule(config)
    gens = generators(config.seed)
    topology = generate_topology(config, gens["topology"])
    channel = draw_channels(topology, config, gens["fading"])
    events = blockage_schedule(config, gens["blockage"])
    params = SystemParams.from_config(config)
    qos = params.qos
    rs = RsConfiguration.isolated(config.n_users, config.decode_layer_cap)
    state = initialize_sca(channel, rs, params)
    trace = ResilienceTrace(qos=[float(q) for q in qos], tick_seconds=config.tick_seconds)

    for tick in range(config.n_ticks):
        is_event = tick in event_ticks
        if is_event:
            event = events[event_ticks[tick]]
            channel, rs, _, state, report = recovery_pipeline(
                event, channel, rs, state.w_tilde, state, config)
            trace.reports.append(report)
            rates, xi = state.rates, state.last_objective
            state = sca_step(state, channel, rs, params)
        else:
            state = sca_step(state, channel, rs, params)
            rates, xi = state.rates, state.last_objective
        trace.append(TickRecord(tick=tick, time_s=round(tick * config.tick_seconds, 12),
                                r_p=[float(x) for x in rates.r_p], r_c=[float(x) for x in rates.r_c],
                                xi=float(xi), perf=instantaneous_performance(rates, qos),
                                event=is_event))

    trace.scores = score_events(trace, config.lambda_weights, config.desired_recovery_time_s)
    summary = RunSummary(
        config_hash=config_hash(config), seed=config.seed, mode=config.mode.value,
        scores=[s.as_tuple() for s in trace.scores],
        final_performance=float(trace.ticks[-1].perf) if trace.ticks else 0.0,
        total_ticks=len(trace.ticks),
        admissions=sum(len(r.admissions) for r in trace.reports),
        wall_time_s=time.perf_counter() - started)
    return trace, summary


@dataclass
class Comparison:
    rs: tuple[ResilienceTrace, RunSummary]
    tin: tuple[ResilienceTrace, RunSummary]

    def table(self) -> dict[str, np.ndarray]:
        rs_trace, tin_trace = self.rs[0], self.tin[0]
        return {
            "time_s": rs_trace.times,
            "perf_rs": rs_trace.perf,
            "perf_tin": tin_trace.perf,
            "common_rate_sum_rs_bps": np.array([t.common_rate_sum for t in rs_trace.ticks]),
            "common_rate_sum_tin_bps": np.array([t.common_rate_sum for t in tin_trace.ticks]),
        }

    def write_table(self, path: str | Path) -> None:
        cols = self.table()
        path = Path(path)
        try:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(list(cols))
                for row in zip(*cols.values()):
                    w.writerow([repr(float(x)) for x in row])
        except OSError as exc:
            raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc


def compare_modes(config: ScenarioConfig) -> Comparison:
    """Run RS_DYNAMIC and TIN on the same seed, channels and schedule."""
    rs_run = run_scenario(config.replace(mode=Mode.RS_DYNAMIC))
    tin_run = run_scenario(config.replace(mode=Mode.TIN))
    return Comparison(rs=rs_run, tin=tin_run)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def csv_columns(n_users: int) -> list[str]:
    return (["tick", "time_s"] + [f"r_p_{k}" for k in range(n_users)]
            + [f"r_c_{k}" for k in range(n_users)]
            + ["xi", "perf", "common_rate_sum_bps", "event", "config_hash", "schema_version"])


def trace_to_dict(trace: ResilienceTrace, summary: RunSummary,
                  config: ScenarioConfig | None = None) -> dict:
    d = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": summary.config_hash,
        "summary": summary.to_dict(),
        "qos": list(trace.qos),
        "tick_seconds": trace.tick_seconds,
        "ticks": [dataclasses.asdict(t) for t in trace.ticks],
        "reports": [r.to_dict() for r in trace.reports],
        "scores": [dataclasses.asdict(s) for s in trace.scores],
    }
    if config is not None:
        d["config"] = config.to_dict()
    return d


def trace_from_dict(d: dict) -> tuple[ResilienceTrace, RunSummary]:
    trace = ResilienceTrace(qos=list(d["qos"]), tick_seconds=d["tick_seconds"])
    for t in d["ticks"]:
        trace.append(TickRecord(**t))
    trace.reports = [RecoveryReport.from_dict(r) for r in d["reports"]]
    trace.scores = [ResilienceScore(**s) for s in d["scores"]]
    s = dict(d["summary"])
    s["scores"] = [tuple(x) for x in s["scores"]]
    return trace, RunSummary(**s)


def export(trace: ResilienceTrace, summary: RunSummary, fmt: str, path: str | Path,
           config: ScenarioConfig | None = None) -> Path:
    """Write the trace as CSV (one row per tick) or JSON (everything)."""
    path = Path(path)
    fmt = fmt.upper()
    try:
        if fmt == "CSV":
            K = len(trace.qos)
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(csv_columns(K))
                for t in trace.ticks:
                    w.writerow([t.tick, repr(t.time_s), *map(repr, t.r_p), *map(repr, t.r_c),
                                repr(t.xi), repr(t.perf), repr(t.common_rate_sum), int(t.event),
                                summary.config_hash, SCHEMA_VERSION])
        elif fmt == "JSON":
            path.write_text(json.dumps(trace_to_dict(trace, summary, config), indent=1))
        else:
            raise ValueError(f"unknown export format {fmt!r}")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def load_trace(path: str | Path) -> tuple[ResilienceTrace, RunSummary, ScenarioConfig | None]:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ExportError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported trace schema_version {d.get('schema_version')!r}")
    trace, summary = trace_from_dict(d)
    config = None
    if "config" in d:
        config = config_from_mapping({"schema_version": SCHEMA_VERSION, **d["config"]})
    return trace, summary, config
