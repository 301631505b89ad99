"""Topology, fading channels and the blockage schedule.

Everything here is driven by an explicit ``numpy.random.Generator``; the
helper :func:`generators` derives independent streams for topology,
fading and blockage draws from ``config.seed`` so that the three stay
reproducible even if one of them is re-drawn.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

SCHEMA_VERSION = 1


class Mode(str, enum.Enum):
    RS_DYNAMIC = "RS_DYNAMIC"
    TIN = "TIN"


class ConfigError(ValueError):
    """Raised when a configuration file cannot be parsed or validated."""


def dbm_to_watt(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """All knobs of one experiment. Defaults reproduce the 12-user setup."""

    n_aps: int = 2
    antennas_per_ap: int = 4
    n_users: int = 12
    area_half_width: float = 250.0
    bandwidth_hz: float = 10e6
    noise_power_dbm: float = -100.0
    max_tx_power_dbm: float = 32.0
    qos_rate_bps: float = 12e6
    lambda_weights: tuple[float, float, float] = (0.0, 1.0, 0.0)
    desired_recovery_time_s: float = 0.0
    eps_pot: float = -0.4
    eps_val: float = -0.5
    decode_layer_cap: int = 3
    blockage_times_s: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    # "random" or one (ap, user) pair per blockage time
    blockage_links: str | tuple[tuple[int, int], ...] = "random"
    observation_length_s: float = 10.0
    tick_seconds: float = 0.05
    seed: int = 0
    mode: Mode = Mode.RS_DYNAMIC
    pathloss_ref_db: float = 30.5
    pathloss_exp: float = 3.67
    shadowing_std_db: float = 8.0

    def __post_init__(self):
        # normalise container types coming from YAML / CLI
        object.__setattr__(self, "lambda_weights", tuple(float(x) for x in self.lambda_weights))
        object.__setattr__(self, "blockage_times_s", tuple(float(x) for x in self.blockage_times_s))
        if not isinstance(self.blockage_links, str):
            links = tuple((int(n), int(k)) for n, k in self.blockage_links)
            object.__setattr__(self, "blockage_links", links)
        object.__setattr__(self, "mode", Mode(self.mode))
        self.validate()

    def validate(self) -> None:
        for name in ("n_aps", "antennas_per_ap", "n_users", "decode_layer_cap"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("area_half_width", "bandwidth_hz", "qos_rate_bps",
                     "observation_length_s", "tick_seconds"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.desired_recovery_time_s < 0:
            raise ConfigError("desired_recovery_time_s must be >= 0")
        if self.shadowing_std_db < 0:
            raise ConfigError("shadowing_std_db must be >= 0")
        lam = self.lambda_weights
        if len(lam) != 3:
            raise ConfigError("lambda_weights must have three entries")
        if any(x < 0 for x in lam):
            raise ConfigError("lambda weights must be non-negative")
        if not math.isclose(sum(lam), 1.0, rel_tol=0, abs_tol=1e-9):
            raise ConfigError("lambda weights must sum to 1")
        if self.eps_pot < -1 or self.eps_val < -1:
            raise ConfigError("eps_pot and eps_val must be >= -1")
        times = self.blockage_times_s
        if any(not 0 < t < self.observation_length_s for t in times):
            raise ConfigError("blockage times must lie strictly inside the observation interval")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("blockage times must be strictly increasing")
        if isinstance(self.blockage_links, str):
            if self.blockage_links != "random":
                raise ConfigError("blockage_links must be 'random' or a list of [ap, user] pairs")
        else:
            if len(self.blockage_links) != len(times):
                raise ConfigError("blockage_links needs one [ap, user] pair per blockage time")
            for n, k in self.blockage_links:
                if not (0 <= n < self.n_aps and 0 <= k < self.n_users):
                    raise ConfigError(f"blockage link ({n}, {k}) out of range")
            if len(times) > self.n_aps * self.n_users:
                raise ConfigError("more blockages than links")

    # -- derived quantities -------------------------------------------------
    @property
    def noise_power_w(self) -> float:
        return dbm_to_watt(self.noise_power_dbm)

    @property
    def max_tx_power_w(self) -> float:
        return dbm_to_watt(self.max_tx_power_dbm)

    @property
    def p_max(self) -> np.ndarray:
        return np.full(self.n_aps, self.max_tx_power_w)

    @property
    def qos(self) -> np.ndarray:
        return np.full(self.n_users, float(self.qos_rate_bps))

    @property
    def n_ticks(self) -> int:
        return int(round(self.observation_length_s / self.tick_seconds))

    def event_ticks(self) -> list[int]:
        return [int(round(t / self.tick_seconds)) for t in self.blockage_times_s]

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = self.mode.value
        d["lambda_weights"] = list(self.lambda_weights)
        d["blockage_times_s"] = list(self.blockage_times_s)
        if not isinstance(self.blockage_links, str):
            d["blockage_links"] = [list(p) for p in self.blockage_links]
        return d


_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig)}


def config_from_mapping(data: dict) -> ScenarioConfig:
    """Build a config from a plain mapping (the parsed file contents)."""
    data = dict(data)
    version = data.pop("schema_version", None)
    if version is None:
        raise ConfigError("missing required key 'schema_version'")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    try:
        return ScenarioConfig(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a YAML scenario file. Missing optional keys keep their defaults.

    Raises
    ------
    ConfigError
        On YAML syntax errors (with line/column), unknown keys, a missing
        ``schema_version`` or any invariant violation.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: parse error at {where}: {exc.problem}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return config_from_mapping(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def dump_config(config: ScenarioConfig, path: str | Path) -> None:
    data = {"schema_version": SCHEMA_VERSION, **config.to_dict()}
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))


# ---------------------------------------------------------------------------
# Geometry and channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Topology:
    ap_positions: np.ndarray  # (N, 2) meters
    user_positions: np.ndarray  # (K, 2) meters


@dataclass(frozen=True)
class BlockageEvent:
    time_s: float
    ap_index: int
    user_index: int


@dataclass(frozen=True, eq=False)
class ChannelState:
    """Per-link channels ``h[n, k]`` (length L) and the blockage mask."""

    h: np.ndarray  # (N, K, L) complex
    blocked: np.ndarray  # (N, K) bool
    gain: np.ndarray | None = field(default=None)  # (N, K) large-scale gain beta

    def __post_init__(self):
        h = np.array(self.h, dtype=complex)
        blocked = np.array(self.blocked, dtype=bool)
        if h.ndim != 3 or blocked.shape != h.shape[:2]:
            raise ValueError("h must be (N, K, L) and blocked (N, K)")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel entries must be finite")
        h.setflags(write=False)
        blocked.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "blocked", blocked)

    @property
    def n_aps(self) -> int:
        return self.h.shape[0]

    @property
    def n_users(self) -> int:
        return self.h.shape[1]

    @property
    def antennas(self) -> int:
        return self.h.shape[2]

    def aggregate(self) -> np.ndarray:
        """Stacked channels, row k is h_k of length N*L."""
        return np.transpose(self.h, (1, 0, 2)).reshape(self.n_users, -1)

    def __eq__(self, other):
        if not isinstance(other, ChannelState):
            return NotImplemented
        return (np.array_equal(self.h, other.h)
                and np.array_equal(self.blocked, other.blocked))

    @classmethod
    def from_aggregate(cls, H: np.ndarray, n_aps: int) -> "ChannelState":
        """Inverse of :meth:`aggregate` for an unblocked (K, N*L) matrix."""
        H = np.atleast_2d(np.asarray(H, dtype=complex))
        K, NL = H.shape
        h = H.reshape(K, n_aps, NL // n_aps).transpose(1, 0, 2)
        return cls(h=h, blocked=np.zeros((n_aps, K), dtype=bool))


def generators(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for topology, fading and blockage draws."""
    ss = np.random.SeedSequence(int(seed))
    topo, fading, blockage = ss.spawn(3)
    return {
        "topology": np.random.default_rng(topo),
        "fading": np.random.default_rng(fading),
        "blockage": np.random.default_rng(blockage),
    }


def generate_topology(config: ScenarioConfig, rng: np.random.Generator) -> Topology:
    a = config.area_half_width
    aps = rng.uniform(-a, a, size=(config.n_aps, 2))
    users = rng.uniform(-a, a, size=(config.n_users, 2))
    return Topology(ap_positions=aps, user_positions=users)


def large_scale_gain(distance_m, config: ScenarioConfig, shadowing_db=0.0):
    """Linear gain for the log-distance model; distances are floored at 1 m."""
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    pl_db = config.pathloss_ref_db + 10.0 * config.pathloss_exp * np.log10(d)
    return 10.0 ** (-(pl_db + shadowing_db) / 10.0)


def draw_channels(topology: Topology, config: ScenarioConfig,
                  rng: np.random.Generator) -> ChannelState:
    """Rayleigh fading on top of path loss and log-normal shadowing."""
    N, K, L = config.n_aps, config.n_users, config.antennas_per_ap
    diff = topology.ap_positions[:, None, :] - topology.user_positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    shadow = rng.normal(0.0, config.shadowing_std_db, size=(N, K)) if config.shadowing_std_db > 0 \
        else np.zeros((N, K))
    beta = large_scale_gain(dist, config, shadow)
    g = (rng.standard_normal((N, K, L)) + 1j * rng.standard_normal((N, K, L))) / np.sqrt(2.0)
    h = np.sqrt(beta)[:, :, None] * g
    return ChannelState(h=h, blocked=np.zeros((N, K), dtype=bool), gain=beta)


def apply_blockage(channel: ChannelState, event: BlockageEvent) -> ChannelState:
    n, k = event.ap_index, event.user_index
    if not (0 <= n < channel.n_aps and 0 <= k < channel.n_users):
        raise IndexError(f"blockage ({n}, {k}) out of range for "
                         f"{channel.n_aps} APs and {channel.n_users} users")
    h = channel.h.copy()
    blocked = channel.blocked.copy()
    h[n, k, :] = 0.0
    blocked[n, k] = True
    return ChannelState(h=h, blocked=blocked, gain=channel.gain)


def blockage_schedule(config: ScenarioConfig, rng: np.random.Generator) -> list[BlockageEvent]:
    """Events in time order; random links are distinct (n, k) pairs."""
    times = config.blockage_times_s
    if isinstance(config.blockage_links, str):
        flat = rng.choice(config.n_aps * config.n_users, size=len(times), replace=False)
        links: Sequence[tuple[int, int]] = [divmod(int(i), config.n_users) for i in flat]
    else:
        links = config.blockage_links
    return [BlockageEvent(time_s=t, ap_index=n, user_index=k) for t, (n, k) in zip(times, links)]
