"""Blockage reaction: purge, overcompensate, regroup.

The pipeline run on every blockage event is

1. zero the blocked link in the channel and in the beamformers,
2. remove the affected user from every RS group,
3. spend each unaffected AP's spare power on the affected user's private beam,
4. (RS mode only) admit at most one user into a group, best potential first,
5. reset the allocation to what the new beams support and re-anchor SCA.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .rsmodel import (
    BeamformerSet,
    RsConfiguration,
    achievable_rates,
    clamp_rates,
    group_potentials,
    per_ap_power,
    received_powers,
    _common,
    _cross_private,
)
from .scenario import BlockageEvent, ChannelState, Mode, apply_blockage
from .solver import ScaState, anchored_state, seed_dormant, system_params

log = logging.getLogger(__name__)


class StopReason(str, enum.Enum):
    ONE_ADMISSION = "ONE_ADMISSION"
    NO_CANDIDATE = "NO_CANDIDATE"


@dataclass(frozen=True)
class Admission:
    user: int  # j, the new decoder
    host: int  # k, whose message j now decodes
    kind: str  # 'p' or 'c': which potential matrix nominated the pair
    potential: float
    validation: float


@dataclass
class RecoveryReport:
    event: BlockageEvent
    purged_from: list[int] = field(default_factory=list)
    boost_per_ap: list[float] = field(default_factory=list)
    admissions: list[Admission] = field(default_factory=list)
    stopped_reason: StopReason = StopReason.NO_CANDIDATE
    candidates_evaluated: int = 0

    def to_dict(self) -> dict:
        return {
            "event": {"time_s": self.event.time_s, "ap_index": self.event.ap_index,
                      "user_index": self.event.user_index},
            "purged_from": list(self.purged_from),
            "boost_per_ap": [float(x) for x in self.boost_per_ap],
            "admissions": [{"user": a.user, "host": a.host, "kind": a.kind,
                            "potential": float(a.potential), "validation": float(a.validation)}
                           for a in self.admissions],
            "stopped_reason": self.stopped_reason.value,
            "candidates_evaluated": self.candidates_evaluated,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RecoveryReport":
        return cls(event=BlockageEvent(**d["event"]), purged_from=list(d["purged_from"]),
                   boost_per_ap=list(d["boost_per_ap"]),
                   admissions=[Admission(**a) for a in d["admissions"]],
                   stopped_reason=StopReason(d["stopped_reason"]),
                   candidates_evaluated=d.get("candidates_evaluated", 0))


def _with_decoders(rs: RsConfiguration, decoders: list[set[int]], orders: list[dict[int, int]]):
    return RsConfiguration(decoders=tuple(frozenset(m) for m in decoders), order=tuple(orders),
                           layer_cap=rs.layer_cap)


def _compact(rank: dict[int, int]) -> dict[int, int]:
    """Renumber ranks to 1..n keeping their relative order."""
    return {j: r + 1 for r, j in enumerate(sorted(rank, key=rank.get))}


def purge_user(rs: RsConfiguration, user: int) -> RsConfiguration:
    """Remove ``user`` from every foreign group and dissolve its own group."""
    K = rs.n_users
    if not 0 <= user < K:
        raise IndexError(f"user {user} out of range")
    decoders = [set(m) for m in rs.decoders]
    for j in range(K):
        if j != user:
            decoders[j].discard(user)
    decoders[user] = {user}
    orders = []
    for i in range(K):
        phi = {j for j in range(K) if i in decoders[j]}
        orders.append(_compact({j: r for j, r in rs.order[i].items() if j in phi}))
    return _with_decoders(rs, decoders, orders)


def purged_groups(rs: RsConfiguration, user: int) -> list[int]:
    """Hosts whose group would lose ``user`` (including its own, if shared)."""
    hosts = [j for j in range(rs.n_users) if j != user and user in rs.decoders[j]]
    if len(rs.decoders[user]) > 1:
        hosts.append(user)
    return sorted(hosts)


def zero_blocked_beams(w: BeamformerSet, event: BlockageEvent) -> BeamformerSet:
    n, k = event.ap_index, event.user_index
    if not (0 <= n < w.n_aps and 0 <= k < w.n_users):
        raise IndexError(f"blockage ({n}, {k}) out of range")
    s = w.ap_slice(n)
    w_p, w_c = w.w_p.copy(), w.w_c.copy()
    w_p[k, s] = 0.0
    w_c[k, s] = 0.0
    return BeamformerSet(w_p, w_c, w.n_aps)


def boost_spare_power(w: BeamformerSet, user: int, blocked_ap: int, config,
                      report: RecoveryReport | None = None) -> BeamformerSet:
    """Pour each unaffected AP's unused power into the affected user's private block.

    The block keeps its direction and grows to ``||block||^2 + spare``, so
    the AP ends exactly at its budget. APs with a zero block are skipped.
    """
    p = system_params(config)
    w_p = w.w_p.copy()
    boosts = [0.0] * w.n_aps
    for n in range(w.n_aps):
        if n == blocked_ap:
            continue
        s = w.ap_slice(n)
        block = w_p[user, s]
        norm2 = float(np.vdot(block, block).real)
        if norm2 <= 0:
            continue
        spare = max(p.p_max[n] - per_ap_power(w, n), 0.0)
        if spare <= 0:
            continue
        w_p[user, s] = block * np.sqrt((norm2 + spare) / norm2)
        boosts[n] = spare
    if report is not None:
        report.boost_per_ap = boosts
    return BeamformerSet(w_p, w.w_c, w.n_aps)


def _decoding_order(i: int, phi: set[int], gp, gc, rs_tmp: RsConfiguration, sigma2) -> dict[int, int]:
    """Ranks for user i: its own common last, the others by descending sum-SINR.

    The sum-SINR of message l at user i adds the cross-private SINR and the
    common SINR with no later-decoded commons as interference. Ties go to
    the lower user index (decoded earlier).
    """
    t_i = gp[i].sum() + sigma2
    psi = sorted(rs_tmp.psi(i))
    score = {}
    for l in phi:
        if l == i:
            continue
        common = gc[i, l] / (t_i + gc[i, psi].sum()) if gc[i, l] > 0 else 0.0
        score[l] = _cross_private(gp, gc, i, l, rs_tmp, sigma2) + common
    # ascending rank = decoded later; weakest first, ties: higher index first
    others = sorted(score, key=lambda l: (score[l], -l))
    rank = {i: 1} if i in phi else {}
    for r, l in enumerate(others, start=len(rank) + 1):
        rank[l] = r
    return rank


def dynamic_grouping(w: BeamformerSet, h, rs: RsConfiguration, config,
                     report: RecoveryReport | None = None):
    """Admit at most one user into an RS group.

    Returns ``(rs, w, report)``. Candidates are visited in descending
    potential; the first one that passes the threshold, the layer cap and
    validation is committed.
    """
    p = system_params(config)
    eps_pot, eps_val = config.eps_pot, config.eps_val
    if report is None:
        report = RecoveryReport(event=BlockageEvent(0.0, -1, -1))
    K = rs.n_users
    gam_p, gam_c = group_potentials(w, h, rs, p.sigma2)
    masked = np.zeros((2, K, K), dtype=bool)
    gam = np.stack([gam_p, gam_c])
    for _ in range(K * K):
        cand = np.where(masked, -np.inf, gam)
        if not np.isfinite(cand).any():
            break
        o, j, k = np.unravel_index(int(np.argmax(cand)), cand.shape)
        best = cand[o, j, k]
        if best <= eps_pot:
            break
        # a pair is tried once, under whichever potential ranked it higher
        masked[:, j, k] = True
        if len(rs.phi(j)) >= rs.layer_cap:
            continue
        report.candidates_evaluated += 1
        kind = "p" if o == 0 else "c"
        decoders = [set(m) for m in rs.decoders]
        decoders[k].add(j)
        orders = [dict(x) for x in rs.order]
        orders[j][k] = len(orders[j]) + 1  # provisional, reordered below
        trial = _with_decoders(rs, decoders, orders)

        w_try = w
        if kind == "p":
            w_try = w.with_beams(w_p=_set_row(w.w_p, k, 0.0), w_c=_set_row(w.w_c, k, _merge(w, k)))
        if any(per_ap_power(w_try, n) > p.p_max[n] * (1 + 1e-12) for n in range(w.n_aps)):
            continue

        gp, gc = received_powers(w_try, h)
        orders[j] = _decoding_order(j, trial.phi(j), gp, gc, trial, p.sigma2)
        trial = _with_decoders(rs, decoders, orders)
        ref = _common(gp, gc, k, k, trial, p.sigma2)
        if ref <= 0:
            continue
        val = _common(gp, gc, j, k, trial, p.sigma2) / ref - 1.0
        if val > eps_val:
            report.admissions.append(Admission(user=int(j), host=int(k), kind=kind,
                                               potential=float(best), validation=float(val)))
            report.stopped_reason = StopReason.ONE_ADMISSION
            return trial, w_try, report
    report.stopped_reason = StopReason.NO_CANDIDATE
    return rs, w, report


def _merge(w: BeamformerSet, k: int) -> np.ndarray:
    """Common beam of k after absorbing its private beam.

    Each AP block points along the sum of the two blocks and carries their
    combined power, so per-AP load is unchanged by the merge.
    """
    out = w.w_c[k] + w.w_p[k]
    for n in range(w.n_aps):
        s = w.ap_slice(n)
        have = np.vdot(out[s], out[s]).real
        want = np.vdot(w.w_c[k, s], w.w_c[k, s]).real + np.vdot(w.w_p[k, s], w.w_p[k, s]).real
        if have > 0:
            out[s] *= np.sqrt(want / have)
    return out


def _set_row(a: np.ndarray, k: int, value) -> np.ndarray:
    out = a.copy()
    out[k] = value
    return out


def recovery_pipeline(event: BlockageEvent, channel: ChannelState, rs: RsConfiguration,
                      w: BeamformerSet, state: ScaState, config):
    """Full reaction to one blockage.

    Returns ``(channel, rs, w, state, report)``; the new state is anchored
    at the post-recovery beams with the allocation reset to the rates they
    achieve (capped at the demand).
    """
    p = system_params(config)
    report = RecoveryReport(event=event, purged_from=purged_groups(rs, event.user_index),
                            boost_per_ap=[0.0] * w.n_aps)
    channel = apply_blockage(channel, event)
    w = zero_blocked_beams(w, event)
    rs = purge_user(rs, event.user_index)
    w = boost_spare_power(w, event.user_index, event.ap_index, p, report)
    if p.mode == Mode.RS_DYNAMIC:
        rs, w, report = dynamic_grouping(w, channel, rs, config, report)
    w = seed_dormant(w, channel, rs, p)
    rates = clamp_rates(achievable_rates(w, channel, rs, p.sigma2, p.bandwidth), p.qos)
    new_state = anchored_state(w, channel, rs, p, iteration=state.iteration, rates=rates)
    return channel, rs, w, new_state, report
