import numpy as np
import pytest

from rsrecover.rsmodel import BeamformerSet, RsConfiguration
from rsrecover.scenario import ChannelState, Mode
from rsrecover.solver import SystemParams

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record a one-line verdict printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        verdict = "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES.append(f"criterion {number}: {verdict}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def beams(w_p, w_c, n_aps=1) -> BeamformerSet:
    """Beams from nested lists; one row per user."""
    return BeamformerSet(np.atleast_2d(np.asarray(w_p, dtype=complex)),
                         np.atleast_2d(np.asarray(w_c, dtype=complex)), n_aps)


def groups(decoders, orders=None, cap=3) -> RsConfiguration:
    """RS sets from a list of member sets; orders default to ascending index = decoded later."""
    K = len(decoders)
    decoders = [set(m) for m in decoders]
    if orders is None:
        orders = []
        for i in range(K):
            phi = sorted(k for k in range(K) if i in decoders[k])
            orders.append({k: r + 1 for r, k in enumerate(phi)})
    return RsConfiguration(decoders=tuple(frozenset(m) for m in decoders), order=tuple(orders),
                           layer_cap=cap)


def params(K, sigma2=1.0, bandwidth=1.0, qos=1.0, p_max=(1.0,), mode=Mode.RS_DYNAMIC):
    return SystemParams(sigma2=sigma2, bandwidth=bandwidth, qos=np.full(K, float(qos)),
                        p_max=np.asarray(p_max, dtype=float), mode=mode)


def scalar_channel(values, n_aps=1) -> ChannelState:
    H = np.asarray(values, dtype=complex).reshape(len(values), -1)
    return ChannelState.from_aggregate(H, n_aps)


def random_instance(rng, K, N, L, scale=1.0):
    H = (rng.standard_normal((K, N * L)) + 1j * rng.standard_normal((K, N * L))) / np.sqrt(2)
    w_p = scale * (rng.standard_normal((K, N * L)) + 1j * rng.standard_normal((K, N * L)))
    w_c = scale * (rng.standard_normal((K, N * L)) + 1j * rng.standard_normal((K, N * L)))
    return ChannelState.from_aggregate(H, N), BeamformerSet(w_p, w_c, N)
