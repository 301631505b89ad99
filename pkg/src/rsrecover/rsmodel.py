"""Closed-form quantities of the rate-splitting downlink.

Conventions: users and APs are 0-indexed. Channels are passed either as a
:class:`~rsrecover.scenario.ChannelState` or directly as the (K, N*L)
aggregate matrix whose row k is h_k. Received power of message m at user i
is ``|h_i^H w_m|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .scenario import ChannelState


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RsConfiguration:
    """Decoding groups and SIC orders.

    ``decoders[k]`` is the set M_k of users decoding the common message of
    user k. ``order[i]`` maps every j in Phi_i (the commons user i decodes)
    to its rank; a larger rank is decoded earlier.
    """

    decoders: tuple[frozenset[int], ...]
    order: tuple[Mapping[int, int], ...]
    layer_cap: int = 3

    def __post_init__(self):
        object.__setattr__(self, "decoders", tuple(frozenset(int(j) for j in m) for m in self.decoders))
        object.__setattr__(self, "order", tuple(MappingProxyType({int(a): int(b) for a, b in o.items()})
                                                for o in self.order))
        self.validate()

    @classmethod
    def isolated(cls, n_users: int, layer_cap: int = 3) -> "RsConfiguration":
        """Every user decodes only its own common message."""
        return cls(decoders=tuple(frozenset({k}) for k in range(n_users)),
                   order=tuple({k: 1} for k in range(n_users)),
                   layer_cap=layer_cap)

    @property
    def n_users(self) -> int:
        return len(self.decoders)

    def phi(self, k: int) -> frozenset[int]:
        return frozenset(j for j, m in enumerate(self.decoders) if k in m)

    def psi(self, k: int) -> frozenset[int]:
        return frozenset(range(self.n_users)) - self.phi(k)

    def omega(self, i: int, k: int) -> frozenset[int]:
        """Commons user i decodes after the common of user k."""
        rank = self.order[i]
        return frozenset(m for m in self.phi(i) if rank[k] > rank[m])

    def validate(self) -> None:
        K = len(self.decoders)
        if len(self.order) != K:
            raise ValueError("order needs one entry per user")
        if self.layer_cap < 1:
            raise ValueError("layer cap must be >= 1")
        for k, m in enumerate(self.decoders):
            if any(not 0 <= j < K for j in m):
                raise ValueError(f"M_{k} contains an out-of-range user")
            if k not in m:
                raise ValueError(f"user {k} must decode its own common message")
        for i in range(K):
            phi = self.phi(i)
            if len(phi) > self.layer_cap:
                raise ValueError(f"user {i} decodes {len(phi)} commons, cap is {self.layer_cap}")
            rank = self.order[i]
            if set(rank) != set(phi) or sorted(rank.values()) != list(range(1, len(phi) + 1)):
                raise ValueError(f"decoding order of user {i} is not a bijection onto 1..|Phi_{i}|")

    def key(self) -> tuple:
        return (tuple(tuple(sorted(m)) for m in self.decoders),
                tuple(tuple(sorted(o.items())) for o in self.order))

    def to_dict(self) -> dict:
        return {"decoders": [sorted(m) for m in self.decoders],
                "order": [{str(j): r for j, r in sorted(o.items())} for o in self.order],
                "layer_cap": self.layer_cap}


@dataclass(frozen=True, eq=False)
class BeamformerSet:
    """Private and common beamformers, one row of length N*L per user."""

    w_p: np.ndarray  # (K, N*L) complex
    w_c: np.ndarray  # (K, N*L) complex
    n_aps: int

    def __post_init__(self):
        w_p = np.array(self.w_p, dtype=complex)
        w_c = np.array(self.w_c, dtype=complex)
        if w_p.shape != w_c.shape or w_p.ndim != 2:
            raise ValueError("w_p and w_c must both be (K, N*L)")
        if w_p.shape[1] % self.n_aps:
            raise ValueError("beam length is not a multiple of the AP count")
        if not (np.all(np.isfinite(w_p)) and np.all(np.isfinite(w_c))):
            raise ValueError("beamformers must be finite")
        w_p.setflags(write=False)
        w_c.setflags(write=False)
        object.__setattr__(self, "w_p", w_p)
        object.__setattr__(self, "w_c", w_c)

    @classmethod
    def zeros(cls, n_users: int, n_aps: int, antennas: int) -> "BeamformerSet":
        z = np.zeros((n_users, n_aps * antennas), dtype=complex)
        return cls(z, z.copy(), n_aps)

    @property
    def n_users(self) -> int:
        return self.w_p.shape[0]

    @property
    def antennas(self) -> int:
        return self.w_p.shape[1] // self.n_aps

    def ap_slice(self, n: int) -> slice:
        L = self.antennas
        return slice(n * L, (n + 1) * L)

    def block(self, n: int, k: int, kind: str = "p") -> np.ndarray:
        """The length-L slice of user k's private ('p') or common ('c') beam at AP n."""
        w = self.w_p if kind == "p" else self.w_c
        return w[k, self.ap_slice(n)]

    def with_beams(self, w_p=None, w_c=None) -> "BeamformerSet":
        return BeamformerSet(self.w_p if w_p is None else w_p,
                             self.w_c if w_c is None else w_c, self.n_aps)

    def __eq__(self, other):
        if not isinstance(other, BeamformerSet):
            return NotImplemented
        return (self.n_aps == other.n_aps and np.array_equal(self.w_p, other.w_p)
                and np.array_equal(self.w_c, other.w_c))


@dataclass(frozen=True)
class RateAllocation:
    r_p: np.ndarray
    r_c: np.ndarray

    def __post_init__(self):
        r_p = np.asarray(self.r_p, dtype=float)
        r_c = np.asarray(self.r_c, dtype=float)
        if np.any(r_p < 0) or np.any(r_c < 0):
            raise ValueError("rates must be non-negative")
        object.__setattr__(self, "r_p", r_p)
        object.__setattr__(self, "r_c", r_c)

    @property
    def total(self) -> np.ndarray:
        return self.r_p + self.r_c

    @classmethod
    def zeros(cls, n_users: int) -> "RateAllocation":
        return cls(np.zeros(n_users), np.zeros(n_users))


# ---------------------------------------------------------------------------
# SINRs
# ---------------------------------------------------------------------------


def _channels(h) -> np.ndarray:
    if isinstance(h, ChannelState):
        return h.aggregate()
    return np.atleast_2d(np.asarray(h, dtype=complex))


def received_powers(w: BeamformerSet, h) -> tuple[np.ndarray, np.ndarray]:
    """Matrices ``P[i, m] = |h_i^H w_m|^2`` for private and common beams."""
    H = _channels(h)
    gp = np.abs(H.conj() @ w.w_p.T) ** 2
    gc = np.abs(H.conj() @ w.w_c.T) ** 2
    return gp, gc


def _ratio(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    return num / den if den > 0 else np.inf


def private_sinr(k: int, w: BeamformerSet, h, rs: RsConfiguration, sigma2: float) -> float:
    return cross_private_sinr(k, k, w, h, rs, sigma2)


def cross_private_sinr(i: int, k: int, w: BeamformerSet, h, rs: RsConfiguration,
                       sigma2: float) -> float:
    """SINR of user i decoding the private message of user k.

    The common messages counted as interference are those user i does not
    decode, so ``cross_private_sinr(k, k, ...) == private_sinr(k, ...)``.
    """
    gp, gc = received_powers(w, h)
    return _cross_private(gp, gc, i, k, rs, sigma2)


def _cross_private(gp, gc, i, k, rs, sigma2):
    others = np.delete(gp[i], k).sum()
    psi = sorted(rs.psi(i))
    return _ratio(gp[i, k], others + gc[i, psi].sum() + sigma2)


def common_sinr(i: int, k: int, w: BeamformerSet, h, rs: RsConfiguration, sigma2: float) -> float:
    """SINR of user i decoding the common message of user k (i must be in M_k)."""
    if i not in rs.decoders[k]:
        raise ValueError(f"user {i} does not decode the common message of user {k}")
    gp, gc = received_powers(w, h)
    return _common(gp, gc, i, k, rs, sigma2)


def _common(gp, gc, i, k, rs, sigma2):
    t_i = gp[i].sum() + sigma2
    psi = sorted(rs.psi(i))
    omega = sorted(rs.omega(i, k))
    return _ratio(gc[i, k], t_i + gc[i, psi].sum() + gc[i, omega].sum())


def _prospective_common(gp, gc, i, k, rs, sigma2):
    """Common SINR of a non-member i if it decoded k's common before all of Phi_i."""
    t_i = gp[i].sum() + sigma2
    psi = sorted(rs.psi(i) - {k})
    phi = sorted(rs.phi(i))
    return _ratio(gc[i, k], t_i + gc[i, psi].sum() + gc[i, phi].sum())


def sinr_tables(w: BeamformerSet, h, rs: RsConfiguration, sigma2: float):
    """All SINRs at once.

    Returns ``(private, cross, common)`` where ``private[k]`` is the private
    SINR of k, ``cross[i, k]`` user i decoding k's private message and
    ``common[i, k]`` user i decoding k's common (NaN when i is not in M_k).
    """
    gp, gc = received_powers(w, h)
    K = rs.n_users
    cross = np.empty((K, K))
    common = np.full((K, K), np.nan)
    for i in range(K):
        for k in range(K):
            cross[i, k] = _cross_private(gp, gc, i, k, rs, sigma2)
    for k in range(K):
        for i in rs.decoders[k]:
            common[i, k] = _common(gp, gc, i, k, rs, sigma2)
    return np.diag(cross).copy(), cross, common


def group_potentials(w: BeamformerSet, h, rs: RsConfiguration,
                     sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    """Relative decoding potentials ``(Gamma_p, Gamma_c)``.

    ``Gamma_p[i, k]`` compares user i decoding k's private message with k
    decoding it itself (ratio minus one); ``Gamma_c`` does the same for
    k's common message. A non-member's common SINR assumes it would decode
    k's common before everything else it already decodes. Entries of
    current members of M_k, and whole columns whose reference SINR is
    zero, are -inf.
    """
    gp, gc = received_powers(w, h)
    K = rs.n_users
    gam_p = np.full((K, K), -np.inf)
    gam_c = np.full((K, K), -np.inf)
    for k in range(K):
        ref_p = _cross_private(gp, gc, k, k, rs, sigma2)
        ref_c = _common(gp, gc, k, k, rs, sigma2)
        for i in range(K):
            if i in rs.decoders[k]:
                continue
            if ref_p > 0:
                gam_p[i, k] = _cross_private(gp, gc, i, k, rs, sigma2) / ref_p - 1.0
            if ref_c > 0:
                gam_c[i, k] = _prospective_common(gp, gc, i, k, rs, sigma2) / ref_c - 1.0
    return gam_p, gam_c


# ---------------------------------------------------------------------------
# Rates, power, objective
# ---------------------------------------------------------------------------


def achievable_rates(w: BeamformerSet, h, rs: RsConfiguration, sigma2: float,
                     bandwidth: float) -> RateAllocation:
    """Largest private/common rates the SINRs support.

    The common rate of k is limited by the weakest decoder in M_k; a zero
    common beam yields a zero common rate.
    """
    private, _, common = sinr_tables(w, h, rs, sigma2)
    r_p = bandwidth * np.log2(1.0 + private)
    r_c = np.zeros(rs.n_users)
    for k in range(rs.n_users):
        members = sorted(rs.decoders[k])
        r_c[k] = bandwidth * np.log2(1.0 + np.min(common[members, k]))
    return RateAllocation(r_p, r_c)


def clamp_rates(achievable: RateAllocation, qos) -> RateAllocation:
    """Allocate up to the demand: private first, then common, never above achievable."""
    qos = np.broadcast_to(np.asarray(qos, dtype=float), achievable.r_p.shape)
    r_p = np.minimum(achievable.r_p, qos)
    r_c = np.minimum(achievable.r_c, qos - r_p)
    return RateAllocation(r_p, np.maximum(r_c, 0.0))


def per_ap_power(w: BeamformerSet, n: int) -> float:
    if not 0 <= n < w.n_aps:
        raise IndexError(f"AP index {n} out of range")
    s = w.ap_slice(n)
    return float(np.sum(np.abs(w.w_p[:, s]) ** 2) + np.sum(np.abs(w.w_c[:, s]) ** 2))


def ap_powers(w: BeamformerSet) -> np.ndarray:
    return np.array([per_ap_power(w, n) for n in range(w.n_aps)])


def qos_gap(rates: RateAllocation, qos) -> float:
    """Sum of squared relative deviations from the per-user demand."""
    qos = np.broadcast_to(np.asarray(qos, dtype=float), rates.r_p.shape)
    return float(np.sum((rates.total / qos - 1.0) ** 2))


# ---------------------------------------------------------------------------
# Symbol-level oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransmissionSample:
    s_p: np.ndarray  # (K, n)
    s_c: np.ndarray  # (K, n)
    tx: np.ndarray  # (N*L, n)
    noise: np.ndarray  # (K, n)
    rx: np.ndarray  # (K, n)


@dataclass(frozen=True)
class EmpiricalSinr:
    """Sample-based SINR estimates together with the powers behind them."""

    private: np.ndarray  # (K,)
    cross_private: np.ndarray  # (K, K)
    common: dict = field(default_factory=dict)  # (i, k) -> SINR
    desired_power: np.ndarray | None = None  # (K,) private desired power
    interference_power: np.ndarray | None = None  # (K,) private interference + noise
    ap_power: np.ndarray | None = None  # (N,)


def draw_transmission(w: BeamformerSet, h, sigma2: float, n_samples: int,
                      rng: np.random.Generator) -> TransmissionSample:
    """Gaussian symbols through the superposition transmitter and the channel."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    H = _channels(h)
    K = w.n_users

    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

    s_p = cn(K, n_samples)
    s_c = cn(K, n_samples)
    tx = w.w_p.T @ s_p + w.w_c.T @ s_c
    noise = np.sqrt(sigma2) * cn(K, n_samples)
    rx = H.conj() @ tx + noise
    return TransmissionSample(s_p=s_p, s_c=s_c, tx=tx, noise=noise, rx=rx)


def simulate_transmission(w: BeamformerSet, h, rs: RsConfiguration, sigma2: float,
                          n_samples: int, rng: np.random.Generator) -> EmpiricalSinr:
    """Estimate SINRs from received samples with genie-aided SIC.

    Each receiver subtracts the known contribution of every common message
    it has already decoded; what remains after removing the desired term is
    measured as interference plus noise. A zero interference power gives an
    infinite estimate.
    """
    H = _channels(h)
    sample = draw_transmission(w, H, sigma2, n_samples, rng)
    K = w.n_users
    hp = H.conj() @ w.w_p.T  # hp[i, m] = h_i^H w_m^p
    hc = H.conj() @ w.w_c.T

    def power(x):
        return float(np.mean(np.abs(x) ** 2))

    cross = np.zeros((K, K))
    desired = np.zeros(K)
    interf = np.zeros(K)
    common = {}
    for i in range(K):
        y = sample.rx[i]
        phi = rs.phi(i)
        # private decoding happens after every common in Phi_i is removed
        after_sic = y - sum((hc[i, j] * sample.s_c[j] for j in phi), np.zeros(n_samples))
        for k in range(K):
            d = hp[i, k] * sample.s_p[k]
            rest = after_sic - d
            cross[i, k] = _ratio(power(d), power(rest))
            if i == k:
                desired[i], interf[i] = power(d), power(rest)
        rank = rs.order[i]
        for k in phi:
            earlier = [m for m in phi if rank[m] > rank[k]]
            residual = y - sum((hc[i, m] * sample.s_c[m] for m in earlier), np.zeros(n_samples))
            d = hc[i, k] * sample.s_c[k]
            common[(i, k)] = _ratio(power(d), power(residual - d))
    L = w.antennas
    ap = np.array([np.mean(np.sum(np.abs(sample.tx[n * L:(n + 1) * L]) ** 2, axis=0))
                   for n in range(w.n_aps)])
    return EmpiricalSinr(private=np.diag(cross).copy(), cross_private=cross, common=common,
                         desired_power=desired, interference_power=interf, ap_power=ap)
