"""Successive convex approximation of the QoS-deviation problem.

Each subproblem replaces ``t <= SINR(w)`` by a convex restriction built
around a linearization point ``(w~, t~)``: the concave lower bound of the
quadratic-over-linear ``|h^H w|^2 / t``. The restriction is exact at the
point and implies the original constraint everywhere, so feeding the
solution back as the next point never increases the objective.

Internally the channel is divided by the noise amplitude (unit noise),
rates are expressed as fractions of the per-user demand, every surrogate
row is divided by its interference-plus-noise level at the anchor, and the
SINR slack is expressed relative to the anchor value (``tau = t / t~``).
Complex beams are handled as stacked real/imaginary parts.

The convex program is built once per structure (RS sets, decoding orders
and the set of dormant messages) with cvxpy parameters and re-solved with
new numbers afterwards.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import cvxpy as cp
import numpy as np

from .rsmodel import (
    BeamformerSet,
    RateAllocation,
    RsConfiguration,
    achievable_rates,
    ap_powers,
    clamp_rates,
    qos_gap,
    received_powers,
    sinr_tables,
)
from .scenario import ChannelState, Mode, ScenarioConfig

log = logging.getLogger(__name__)

T_MIN = 1e-8
SEED_SINR = 1e-2
SEED_POWER = 1e-3
# tried in order until one reports a usable status
SOLVER_ATTEMPTS = (
    (cp.CLARABEL, {}),
    (cp.CLARABEL, {"max_iter": 2000, "tol_feas": 1e-7, "tol_gap_abs": 1e-7, "tol_gap_rel": 1e-7}),
    (cp.SCS, {"max_iters": 20000, "eps_abs": 1e-7, "eps_rel": 1e-7}),
)


class SolverStatus(str, enum.Enum):
    OPTIMAL = "OPTIMAL"
    MAX_ITER = "MAX_ITER"
    INFEASIBLE_NUMERIC = "INFEASIBLE_NUMERIC"


@dataclass(frozen=True)
class SystemParams:
    """The numbers the optimizer needs, in linear units."""

    sigma2: float
    bandwidth: float
    qos: np.ndarray  # (K,) bit/s
    p_max: np.ndarray  # (N,) W
    mode: Mode = Mode.RS_DYNAMIC

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "SystemParams":
        return cls(sigma2=config.noise_power_w, bandwidth=config.bandwidth_hz,
                   qos=config.qos, p_max=config.p_max, mode=config.mode)


def system_params(config) -> SystemParams:
    if isinstance(config, SystemParams):
        return config
    return SystemParams.from_config(config)


@dataclass(frozen=True)
class ScaState:
    w_tilde: BeamformerSet
    t_p: np.ndarray  # (K,) private SINR anchors
    t_c: np.ndarray  # (K,) common SINR anchors
    iteration: int
    last_objective: float
    rates: RateAllocation


@dataclass(frozen=True)
class SubproblemSolution:
    w_hat: BeamformerSet
    r_hat: RateAllocation
    t_p: np.ndarray
    t_c: np.ndarray
    objective: float
    solver_status: SolverStatus


# ---------------------------------------------------------------------------
# Anchors
# ---------------------------------------------------------------------------


def achieved_sinrs(w: BeamformerSet, h, rs: RsConfiguration, sigma2: float):
    """Private SINRs and, per user, the worst common SINR over its decoders."""
    private, _, common = sinr_tables(w, h, rs, sigma2)
    worst = np.array([np.min(common[sorted(rs.decoders[k]), k]) for k in range(rs.n_users)])
    return private, worst


def anchored_state(w: BeamformerSet, h, rs: RsConfiguration, config, iteration: int = 0,
                   rates: RateAllocation | None = None) -> ScaState:
    """A state whose SINR anchors are the SINRs ``w`` actually achieves.

    Without explicit ``rates`` the allocation is the achievable rates capped
    at the demand, which is the best allocation the point supports.
    """
    p = system_params(config)
    t_p, t_c = achieved_sinrs(w, h, rs, p.sigma2)
    if rates is None:
        rates = clamp_rates(achievable_rates(w, h, rs, p.sigma2, p.bandwidth), p.qos)
    return ScaState(w_tilde=w, t_p=np.maximum(t_p, T_MIN), t_c=np.maximum(t_c, T_MIN),
                    iteration=iteration, last_objective=qos_gap(rates, p.qos), rates=rates)


def initialize_sca(h: ChannelState, rs: RsConfiguration, config) -> ScaState:
    """Per-AP matched filtering with the AP power split evenly over served users."""
    p = system_params(config)
    N, K, L = h.n_aps, h.n_users, h.antennas
    w_p = np.zeros((K, N * L), dtype=complex)
    for n in range(N):
        norms = np.linalg.norm(h.h[n], axis=1)
        served = np.flatnonzero(norms > 0)
        if served.size == 0 or p.p_max[n] <= 0:
            continue
        amp = np.sqrt(p.p_max[n] / served.size)
        for k in served:
            w_p[k, n * L:(n + 1) * L] = amp * h.h[n, k] / norms[k]
    w = BeamformerSet(w_p, np.zeros_like(w_p), N)
    return anchored_state(w, h, rs, p)


# ---------------------------------------------------------------------------
# Surrogates in physical units (used by tests and the debug dump)
# ---------------------------------------------------------------------------


def _interference(gp, gc, i, m_kind, k, rs, sigma2):
    K = rs.n_users
    if m_kind == "p":
        priv = [j for j in range(K) if j != k]
        com = sorted(rs.psi(i))
    else:
        priv = list(range(K))
        com = sorted(rs.psi(i) | rs.omega(i, k))
    return gp[i, priv].sum() + gc[i, com].sum() + sigma2


def surrogate_value(kind: str, i: int, k: int, w: BeamformerSet, t: float,
                    anchor_w: BeamformerSet, anchor_t: float, h, rs: RsConfiguration,
                    sigma2: float) -> float:
    """Left-hand side of the convex restriction of ``t <= SINR``.

    ``kind`` is 'p' (user k's private SINR, ``i`` must equal ``k``) or 'c'
    (user i decoding k's common message). The restriction holds when the
    value is <= 0.
    """
    H = h.aggregate() if isinstance(h, ChannelState) else np.atleast_2d(h)
    gp, gc = received_powers(w, H)
    interference = _interference(gp, gc, i, kind, k, rs, sigma2)
    w_t = anchor_w.w_p[k] if kind == "p" else anchor_w.w_c[k]
    w_v = w.w_p[k] if kind == "p" else w.w_c[k]
    a = np.vdot(H[i], w_t)  # h_i^H w~
    b = np.vdot(H[i], w_v)  # h_i^H w
    return float(interference + abs(a) ** 2 / anchor_t ** 2 * t
                 - 2.0 * np.real(np.conj(a) * b) / anchor_t)


# ---------------------------------------------------------------------------
# Convex subproblem
# ---------------------------------------------------------------------------


def _real_rows(h_row: np.ndarray) -> np.ndarray:
    """G with ``G @ [Re w; Im w] = [Re h^H w; Im h^H w]``."""
    c, d = h_row.real, h_row.imag
    return np.vstack([np.concatenate([c, d]), np.concatenate([-d, c])])


def _stack(w: np.ndarray) -> np.ndarray:
    """(K, M) complex -> (2M, K) real."""
    return np.vstack([w.real.T, w.imag.T])


def _dormancy(w: BeamformerSet, h, rs: RsConfiguration, p: SystemParams):
    """Messages whose desired signal vanishes at the anchor cannot carry rate."""
    private, worst_common = achieved_sinrs(w, h, rs, p.sigma2)
    dormant_p = tuple(bool(x) for x in private <= T_MIN)
    if p.mode == Mode.TIN:
        dormant_c = (True,) * rs.n_users
    else:
        dormant_c = tuple(bool(x) for x in worst_common <= T_MIN)
    return dormant_p, dormant_c


class _Program:
    """cvxpy problem for one structure; numbers are loaded through parameters."""

    def __init__(self, K: int, N: int, L: int, rs: RsConfiguration, dormant_p, dormant_c,
                 rate_coef: np.ndarray):
        M = N * L
        self.K, self.N, self.L, self.M = K, N, L, M
        self.X = cp.Variable((2 * M, 2 * K))
        self.tau = cp.Variable(2 * K, nonneg=True)
        self.rho = cp.Variable(2 * K, nonneg=True)
        self.p_max = cp.Parameter(N, nonneg=True)
        self.tt = cp.Parameter(2 * K, nonneg=True)
        self.rows = []  # (receiver, message, A, q, lin)
        cons = []
        for n in range(N):
            rows = np.r_[n * L:(n + 1) * L, M + n * L:M + (n + 1) * L]
            cons.append(cp.sum_squares(self.X[rows, :]) <= self.p_max[n])
        dormant = list(dormant_p) + list(dormant_c)
        for m in range(2 * K):
            if dormant[m]:
                cons += [self.X[:, m] == 0, self.tau[m] == 0, self.rho[m] == 0]
                continue
            k = m % K
            cons.append(self.rho[m] <= rate_coef[k] * cp.log(1 + cp.multiply(self.tt[m], self.tau[m])))
            receivers = [k] if m < K else sorted(rs.decoders[k])
            for i in receivers:
                if m < K:
                    interferers = [j for j in range(K) if j != k] + [K + l for l in sorted(rs.psi(i))]
                else:
                    interferers = list(range(K)) + [K + l for l in sorted(rs.psi(i) | rs.omega(i, k))]
                interferers = [j for j in interferers if not dormant[j]]
                A = cp.Parameter((2, 2 * M))
                q = cp.Parameter(nonneg=True)
                lin = cp.Parameter(2 * M)
                expr = q + self.tau[m] - lin @ self.X[:, m]
                if interferers:
                    expr = expr + cp.sum_squares(A @ self.X[:, interferers])
                cons.append(expr <= 0)
                self.rows.append((i, m, A, q, lin))
        objective = cp.sum_squares(self.rho[:K] + self.rho[K:] - 1)
        self.problem = cp.Problem(cp.Minimize(objective), cons)

    def load(self, Hn: np.ndarray, Xt: np.ndarray, t_anchor: np.ndarray, p_max: np.ndarray):
        self.p_max.value = np.asarray(p_max, dtype=float)
        self.tt.value = t_anchor
        for i, m, A, q, lin in self.rows:
            G = _real_rows(Hn[i])
            a = G @ Xt[:, m]
            s_bar = float(a @ a)
            scale = t_anchor[m] / s_bar
            A.value = np.sqrt(scale) * G
            q.value = scale
            lin.value = 2.0 * (G.T @ a) / s_bar


_CACHE: dict[tuple, _Program] = {}
_CACHE_LIMIT = 64


def _program(K, N, L, rs, dormant_p, dormant_c, rate_coef) -> _Program:
    key = (K, N, L, rs.key(), dormant_p, dormant_c, tuple(np.round(rate_coef, 12)))
    prog = _CACHE.get(key)
    if prog is None:
        if len(_CACHE) >= _CACHE_LIMIT:
            _CACHE.clear()
        prog = _Program(K, N, L, rs, dormant_p, dormant_c, rate_coef)
        _CACHE[key] = prog
    return prog


def _finalize(w_hat: BeamformerSet, rho_p, rho_c, h, rs, p: SystemParams):
    """Project the numerical solution onto the exact feasible set.

    Solver tolerances can leave AP powers or rates a hair above their
    limits; AP blocks are shrunk to the budget and rates are cut to what
    the final beams achieve.
    """
    w_p, w_c = w_hat.w_p.copy(), w_hat.w_c.copy()
    for n, power in enumerate(ap_powers(w_hat)):
        if power > p.p_max[n]:
            s = w_hat.ap_slice(n)
            f = np.sqrt(p.p_max[n] / power) if power > 0 else 0.0
            w_p[:, s] *= f
            w_c[:, s] *= f
    w_hat = BeamformerSet(w_p, w_c, w_hat.n_aps)
    ach = achievable_rates(w_hat, h, rs, p.sigma2, p.bandwidth)
    r_p = np.minimum(np.clip(rho_p, 0, None) * p.qos, ach.r_p)
    r_c = np.minimum(np.clip(rho_c, 0, None) * p.qos, ach.r_c)
    return w_hat, RateAllocation(r_p, r_c)


def solve_subproblem(state: ScaState, h: ChannelState, rs: RsConfiguration,
                     config) -> SubproblemSolution:
    """Solve one convexified subproblem around ``state``."""
    p = system_params(config)
    w_t = state.w_tilde
    K, N = w_t.n_users, w_t.n_aps
    L = w_t.antennas
    H = h.aggregate() if isinstance(h, ChannelState) else np.atleast_2d(h)
    if H.shape != w_t.w_p.shape:
        raise ValueError(f"channel shape {H.shape} does not match beams {w_t.w_p.shape}")
    dormant_p, dormant_c = _dormancy(w_t, H, rs, p)
    rate_coef = p.bandwidth / (p.qos * np.log(2.0))
    prog = _program(K, N, L, rs, dormant_p, dormant_c, rate_coef)
    Hn = H / np.sqrt(p.sigma2)
    Xt = np.hstack([_stack(w_t.w_p), _stack(w_t.w_c)])
    t_anchor = np.concatenate([state.t_p, state.t_c])
    prog.load(Hn, Xt, t_anchor, p.p_max)

    failed = SubproblemSolution(w_t, state.rates, state.t_p, state.t_c, state.last_objective,
                                SolverStatus.INFEASIBLE_NUMERIC)
    status = None
    for solver, opts in SOLVER_ATTEMPTS:
        try:
            with warnings.catch_warnings():
                # an inaccurate solve is reported through the status below
                warnings.simplefilter("ignore", UserWarning)
                prog.problem.solve(solver=solver, warm_start=False, **opts)
        except cp.error.SolverError as exc:
            log.debug("%s failed: %s", solver, exc)
            continue
        status = prog.problem.status
        if status == cp.OPTIMAL:
            break
        if status == cp.OPTIMAL_INACCURATE and prog.X.value is not None:
            break
    if status == cp.OPTIMAL:
        flag = SolverStatus.OPTIMAL
    elif status == cp.OPTIMAL_INACCURATE and prog.X.value is not None:
        flag = SolverStatus.MAX_ITER
    else:
        log.warning("subproblem not solved (last status %s)", status)
        return failed

    X = prog.X.value
    M = N * L
    w_p = (X[:M, :K] + 1j * X[M:, :K]).T
    w_c = (X[:M, K:] + 1j * X[M:, K:]).T
    dormant = np.array(dormant_p + dormant_c)
    tau = np.where(dormant, 0.0, np.clip(prog.tau.value, 0, None))
    rho = np.where(dormant, 0.0, prog.rho.value)
    w_hat, r_hat = _finalize(BeamformerSet(w_p, w_c, N), rho[:K], rho[K:], H, rs, p)
    t = tau * t_anchor
    return SubproblemSolution(w_hat=w_hat, r_hat=r_hat, t_p=t[:K], t_c=t[K:],
                              objective=qos_gap(r_hat, p.qos), solver_status=flag)


def seed_dormant(w: BeamformerSet, h, rs: RsConfiguration, config,
                 target_sinr: float = SEED_SINR, power_fraction: float = SEED_POWER) -> BeamformerSet:
    """Give silent messages a small matched-filter beam.

    A message whose desired signal is zero at the anchor cannot be
    linearized, so without a seed it stays silent for good (after a private
    beam is merged into a common one, or once SCA has abandoned a user).
    Privates are seeded whenever the user has a channel; commons only for
    real groups in RS mode. The seed aims at ``target_sinr`` at the weakest
    decoder and never takes more than ``power_fraction`` of the total
    budget. APs pushed over budget are scaled back onto it.
    """
    p = system_params(config)
    H = h.aggregate() if isinstance(h, ChannelState) else np.atleast_2d(h)
    private, worst = achieved_sinrs(w, H, rs, p.sigma2)
    gp, gc = received_powers(w, H)
    budget = float(np.sum(p.p_max))
    w_p, w_c = w.w_p.copy(), w.w_c.copy()
    # beams may only use APs that have power
    usable = np.repeat(p.p_max > 0, w.antennas)
    seeded = False
    for kind, sinr in (("p", private), ("c", worst)):
        for k in range(rs.n_users):
            if sinr[k] > T_MIN:
                continue
            if kind == "c" and (p.mode == Mode.TIN or len(rs.decoders[k]) < 2):
                continue
            d = np.where(usable, H[k], 0.0)
            if not np.any(d):
                continue
            d = d / np.linalg.norm(d)
            decoders = [k] if kind == "p" else sorted(rs.decoders[k])
            need = 0.0
            for i in decoders:
                g = abs(np.vdot(H[i], d)) ** 2
                need = np.inf if g <= 0 else max(
                    need, target_sinr * _interference(gp, gc, i, kind, k, rs, p.sigma2) / g)
            need = min(need, power_fraction * budget)
            if not np.isfinite(need) or need <= 0:
                continue
            target = w_p if kind == "p" else w_c
            target[k] += np.sqrt(need) * d
            seeded = True
    if not seeded:
        return w
    for n in range(w.n_aps):
        s = w.ap_slice(n)
        power = np.sum(np.abs(w_p[:, s]) ** 2) + np.sum(np.abs(w_c[:, s]) ** 2)
        if power > p.p_max[n]:
            f = np.sqrt(p.p_max[n] / power)
            w_p[:, s] *= f
            w_c[:, s] *= f
    return BeamformerSet(w_p, w_c, w.n_aps)


def sca_step(state: ScaState, h: ChannelState, rs: RsConfiguration, config) -> ScaState:
    """One SCA iteration.

    The next anchor keeps the solved beams and takes the SINRs they achieve
    as slack anchors (never below the solved slacks, so the point stays
    feasible and the restriction is tight there). A backend failure, or a
    numerically inaccurate step that would raise the objective, leaves the
    state unchanged.
    """
    p = system_params(config)
    sol = solve_subproblem(state, h, rs, p)
    if sol.solver_status == SolverStatus.INFEASIBLE_NUMERIC:
        return state
    slack = 1e-7 * max(1.0, state.last_objective)
    if sol.objective > state.last_objective + slack:
        log.debug("rejecting SCA step: objective %.9g -> %.9g", state.last_objective, sol.objective)
        return state
    nxt = anchored_state(sol.w_hat, h, rs, p, iteration=state.iteration + 1, rates=sol.r_hat)
    return nxt


def run_sca(state: ScaState, h, rs, config, max_iter: int = 50, tol: float = 1e-6,
            patience: int = 3) -> list[ScaState]:
    """Iterate until the objective moves less than ``tol`` for ``patience`` steps."""
    states = [state]
    calm = 0
    for _ in range(max_iter):
        nxt = sca_step(states[-1], h, rs, config)
        calm = calm + 1 if abs(states[-1].last_objective - nxt.last_objective) < tol else 0
        states.append(nxt)
        if calm >= patience:
            break
    return states


def dump_subproblem(state: ScaState, h: ChannelState, rs: RsConfiguration, config,
                    path: str | Path) -> None:
    """Write the normalized subproblem data as plain text.

    Layout: a header with dimensions, then one block per power constraint
    and per SINR restriction giving the real 2x2M quadratic-form matrix,
    the constant term and the linear coefficient vector over the stacked
    real beam of the desired message.
    """
    p = system_params(config)
    w_t = state.w_tilde
    K, N, L = w_t.n_users, w_t.n_aps, w_t.antennas
    H = h.aggregate() if isinstance(h, ChannelState) else np.atleast_2d(h)
    dormant_p, dormant_c = _dormancy(w_t, H, rs, p)
    rate_coef = p.bandwidth / (p.qos * np.log(2.0))
    prog = _Program(K, N, L, rs, dormant_p, dormant_c, rate_coef)
    Xt = np.hstack([_stack(w_t.w_p), _stack(w_t.w_c)])
    t_anchor = np.concatenate([state.t_p, state.t_c])
    prog.load(H / np.sqrt(p.sigma2), Xt, t_anchor, p.p_max)
    out = [f"users {K}", f"aps {N}", f"antennas {L}", f"real_beam_length {2 * N * L}",
           f"messages {2 * K} (0..{K - 1} private, {K}..{2 * K - 1} common)",
           "dormant " + " ".join(str(int(x)) for x in dormant_p + dormant_c),
           "rate_coef " + " ".join(f"{x:.17g}" for x in rate_coef),
           "anchor_t " + " ".join(f"{x:.17g}" for x in t_anchor)]
    for n in range(N):
        out.append(f"power ap={n} limit={p.p_max[n]:.17g}")
    for i, m, A, q, lin in prog.rows:
        out.append(f"restriction receiver={i} message={m}")
        out.append("  A " + " ; ".join(" ".join(f"{x:.17g}" for x in row) for row in A.value))
        out.append(f"  q {q.value:.17g}")
        out.append("  lin " + " ".join(f"{x:.17g}" for x in lin.value))
    Path(path).write_text("\n".join(out) + "\n")
