"""Absorption / adaptation / recovery scoring of a performance trace."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rsmodel import RateAllocation

STATIONARY_TOL = 1e-4
STATIONARY_TICKS = 3
# r_ada must beat the pre-event level by more than solver noise
ANTIFRAGILE_MARGIN = 1e-6


def instantaneous_performance(rates: RateAllocation, qos) -> float:
    """Mean fraction of the demand each user receives (not capped at 1)."""
    qos = np.broadcast_to(np.asarray(qos, dtype=float), rates.r_p.shape)
    return float(np.mean(rates.total / qos))


@dataclass(frozen=True)
class ResilienceScore:
    t0: float
    t_n: float
    r_abs: float
    r_ada: float
    r_rec: float
    r: float
    antifragile: bool | None = None

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.r_abs, self.r_ada, self.r_rec, self.r


def recovery_score(t0: float, t_n: float, desired_recovery_time: float) -> float:
    if t_n < t0:
        raise ValueError(f"recovery time {t_n} precedes disruption time {t0}")
    gap = t_n - t0
    if gap <= desired_recovery_time:
        return 1.0
    return desired_recovery_time / gap


def combine(r_abs: float, r_ada: float, r_rec: float, weights) -> float:
    l1, l2, l3 = weights
    return l1 * r_abs + l2 * r_ada + l3 * r_rec


@dataclass
class TickRecord:
    tick: int
    time_s: float
    r_p: list[float]
    r_c: list[float]
    xi: float
    perf: float
    event: bool = False

    @property
    def common_rate_sum(self) -> float:
        return float(sum(self.r_c))


@dataclass
class ResilienceTrace:
    """Per-tick record of one run plus per-event bookkeeping."""

    qos: list[float]
    tick_seconds: float
    ticks: list[TickRecord] = field(default_factory=list)
    reports: list = field(default_factory=list)  # RecoveryReport, one per event
    scores: list[ResilienceScore] = field(default_factory=list)

    def append(self, record: TickRecord) -> None:
        if self.ticks and record.tick <= self.ticks[-1].tick:
            raise ValueError("ticks must be strictly increasing")
        if not np.isfinite(record.perf) or record.perf < 0:
            raise ValueError(f"invalid performance value {record.perf}")
        self.ticks.append(record)

    @property
    def perf(self) -> np.ndarray:
        return np.array([t.perf for t in self.ticks])

    @property
    def times(self) -> np.ndarray:
        return np.array([t.time_s for t in self.ticks])

    def event_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.ticks) if t.event]

    def performance_at(self, time_s: float) -> float:
        i = int(np.argmin(np.abs(self.times - time_s)))
        return float(self.ticks[i].perf)


def detect_recovery_tick(perf, t0: int, stop: int | None = None,
                         tol: float = STATIONARY_TOL, window: int = STATIONARY_TICKS) -> int:
    """Index of the first tick after ``t0`` that closes ``window`` flat steps.

    A step is flat when ``|perf[t] - perf[t-1]| < tol``. The search is cut
    at ``stop`` (the next event tick) or at the end of the trace.
    """
    perf = np.asarray(perf, dtype=float)
    last = len(perf) - 1 if stop is None else min(stop, len(perf) - 1)
    run = 0
    for t in range(t0 + 1, last + 1):
        run = run + 1 if abs(perf[t] - perf[t - 1]) < tol else 0
        if run >= window:
            return t
    return max(last, t0)


def resilience_score(trace: ResilienceTrace | np.ndarray, t0: float, t_n: float, weights,
                     desired_recovery_time: float, tick_seconds: float | None = None
                     ) -> ResilienceScore:
    """Score one disruption from performance at ``t0`` and at recovery ``t_n`` (seconds)."""
    if t_n < t0:
        raise ValueError(f"recovery time {t_n} precedes disruption time {t0}")
    if isinstance(trace, ResilienceTrace):
        r_abs = trace.performance_at(t0)
        r_ada = trace.performance_at(t_n)
    else:
        perf = np.asarray(trace, dtype=float)
        r_abs = float(perf[int(round(t0 / tick_seconds))])
        r_ada = float(perf[int(round(t_n / tick_seconds))])
    r_rec = recovery_score(t0, t_n, desired_recovery_time)
    return ResilienceScore(t0=t0, t_n=t_n, r_abs=r_abs, r_ada=r_ada, r_rec=r_rec,
                           r=combine(r_abs, r_ada, r_rec, weights))


def score_events(trace: ResilienceTrace, weights, desired_recovery_time: float
                 ) -> list[ResilienceScore]:
    """One score per flagged event tick, recovery searched up to the next event."""
    perf = trace.perf
    events = trace.event_indices()
    scores = []
    for e, idx in enumerate(events):
        stop = events[e + 1] if e + 1 < len(events) else None
        rec = detect_recovery_tick(perf, idx, stop)
        t0, t_n = trace.ticks[idx].time_s, trace.ticks[rec].time_s
        s = resilience_score(trace, t0, t_n, weights, desired_recovery_time)
        before = perf[idx - 1] if idx > 0 else perf[idx]
        scores.append(ResilienceScore(**{**s.__dict__, "antifragile": bool(s.r_ada > before + ANTIFRAGILE_MARGIN)}))
    return scores
