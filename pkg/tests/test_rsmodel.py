import numpy as np
import pytest

from conftest import beams, groups, random_instance, scalar_channel
from rsrecover.rsmodel import (
    BeamformerSet,
    RateAllocation,
    RsConfiguration,
    achievable_rates,
    clamp_rates,
    common_sinr,
    cross_private_sinr,
    group_potentials,
    per_ap_power,
    private_sinr,
    qos_gap,
    simulate_transmission,
    sinr_tables,
)


# -- configuration ----------------------------------------------------------


def test_isolated_sets():
    rs = RsConfiguration.isolated(4)
    for k in range(4):
        assert rs.decoders[k] == {k}
        assert rs.phi(k) == {k}
        assert rs.psi(k) == {0, 1, 2, 3} - {k}
        assert rs.omega(k, k) == frozenset()


def test_phi_is_dual_of_decoders():
    rs = groups([{0, 2}, {1}, {2, 0}])
    assert rs.phi(0) == {0, 2}
    assert rs.phi(2) == {0, 2}
    assert rs.phi(1) == {1}
    assert rs.psi(0) == {1}


def test_omega_holds_commons_decoded_later():
    # user 0 decodes commons 0, 1, 2; larger rank decoded first
    rs = groups([{0}, {0, 1}, {0, 2}], orders=[{1: 3, 2: 2, 0: 1}, {1: 1}, {2: 1}])
    assert rs.omega(0, 1) == {0, 2}
    assert rs.omega(0, 2) == {0}
    assert rs.omega(0, 0) == frozenset()


@pytest.mark.parametrize("decoders, orders, cap", [
    ([{1}, {1}], [{}, {0: 1, 1: 2}], 3),  # k not in M_k
    ([{0, 1}, {1}], [{0: 1}, {1: 1}], 3),  # order misses a decoded common
    ([{0, 1}, {1}], [{0: 1}, {0: 1, 1: 1}], 3),  # ranks not a bijection
    ([{0, 1}, {1, 0}], [{0: 1, 1: 2}, {0: 1, 1: 2}], 1),  # layer cap exceeded
])
def test_invalid_configurations(decoders, orders, cap):
    with pytest.raises(ValueError):
        RsConfiguration(decoders=tuple(frozenset(m) for m in decoders), order=tuple(orders),
                        layer_cap=cap)


def test_beam_blocks():
    w = BeamformerSet(np.arange(8).reshape(2, 4).astype(complex), np.zeros((2, 4)), n_aps=2)
    assert np.array_equal(w.block(1, 0), [2, 3])
    assert np.array_equal(w.block(0, 1, "c"), [0, 0])


def test_rates_non_negative():
    with pytest.raises(ValueError):
        RateAllocation(np.array([1.0, -1.0]), np.zeros(2))


# -- SINR examples -----------------------------------------------------------


def test_private_sinr_with_undecoded_common():
    w = beams([[2], [1]], [[0], [1]])
    h = scalar_channel([1, 1])
    assert private_sinr(0, w, h, RsConfiguration.isolated(2), 1.0) == pytest.approx(4 / 3)


def test_private_sinr_single_user():
    w = beams([[3]], [[0]])
    assert private_sinr(0, w, scalar_channel([1]), RsConfiguration.isolated(1), 1.0) == 9.0


def test_private_sinr_zero_beam():
    w = beams([[0], [1]], [[0], [1]])
    assert private_sinr(0, w, scalar_channel([1, 1]), RsConfiguration.isolated(2), 1.0) == 0.0


def test_common_sinr_without_later_commons():
    # user 0 decodes both commons; common 1 is decoded last so nothing is left after it
    rs = groups([{0}, {0, 1}], orders=[{0: 2, 1: 1}, {1: 1}])
    w = beams([[1], [1]], [[0], [2]])
    assert rs.psi(0) == frozenset() and rs.omega(0, 1) == frozenset()
    assert common_sinr(0, 1, w, scalar_channel([1, 1]), rs, 1.0) == pytest.approx(4 / 3)


def test_common_sinr_counts_commons_decoded_later():
    rs = groups([{0}, {0, 1}], orders=[{1: 2, 0: 1}, {1: 1}])
    w = beams([[1], [1]], [[1], [2]])
    assert rs.omega(0, 1) == {0}
    # numerator 4, privates 2 + noise 1, remaining common 1
    assert common_sinr(0, 1, w, scalar_channel([1, 1]), rs, 1.0) == pytest.approx(1.0)


def test_common_sinr_zero_beam():
    rs = groups([{0, 1}, {1}])
    w = beams([[1], [1]], [[0], [0]])
    assert common_sinr(1, 0, w, scalar_channel([1, 1]), rs, 1.0) == 0.0


def test_common_sinr_rejects_non_member():
    w = beams([[1], [1]], [[1], [1]])
    with pytest.raises(ValueError):
        common_sinr(1, 0, w, scalar_channel([1, 1]), RsConfiguration.isolated(2), 1.0)


def test_cross_private_scalar():
    w = beams([[0], [1]], [[0], [0]])
    h = scalar_channel([2, 1])
    assert cross_private_sinr(0, 1, w, h, RsConfiguration.isolated(2), 1.0) == pytest.approx(4.0)
    w0 = beams([[0], [0]], [[0], [0]])
    assert cross_private_sinr(0, 1, w0, h, RsConfiguration.isolated(2), 1.0) == 0.0


def test_cross_private_reduces_to_private():
    rng = np.random.default_rng(4)
    h, w = random_instance(rng, 4, 2, 2)
    rs = groups([{0, 1}, {1}, {2, 3}, {3}])
    for k in range(4):
        assert cross_private_sinr(k, k, w, h, rs, 0.3) == private_sinr(k, w, h, rs, 0.3)


def test_tables_agree_with_scalar_functions():
    rng = np.random.default_rng(5)
    h, w = random_instance(rng, 4, 2, 2)
    rs = groups([{0, 1}, {1}, {2, 3, 0}, {3}])
    private, cross, common = sinr_tables(w, h, rs, 0.5)
    for i in range(4):
        assert private[i] == private_sinr(i, w, h, rs, 0.5)
        for k in range(4):
            assert cross[i, k] == cross_private_sinr(i, k, w, h, rs, 0.5)
            if i in rs.decoders[k]:
                assert common[i, k] == common_sinr(i, k, w, h, rs, 0.5)
            else:
                assert np.isnan(common[i, k])


# -- potentials --------------------------------------------------------------


def test_potential_ratio_example():
    w = beams([[1], [0]], [[0], [0]])
    h = scalar_channel([1, np.sqrt(0.8)])
    gam_p, _ = group_potentials(w, h, RsConfiguration.isolated(2), 1.0)
    assert gam_p[1, 0] == pytest.approx(-0.2)
    assert gam_p[1, 0] > -0.4


def test_potential_identity_on_diagonal():
    rng = np.random.default_rng(6)
    h, w = random_instance(rng, 3, 1, 2)
    private, cross, _ = sinr_tables(w, h, RsConfiguration.isolated(3), 1.0)
    assert np.all(np.diag(cross) / private - 1.0 == 0.0)


def test_potential_masks_members():
    rng = np.random.default_rng(7)
    h, w = random_instance(rng, 3, 1, 2)
    rs = groups([{0, 2}, {1}, {2}])
    gam_p, gam_c = group_potentials(w, h, rs, 1.0)
    assert gam_c[2, 0] == -np.inf and gam_p[2, 0] == -np.inf
    assert np.all(np.diag(gam_p) == -np.inf)
    assert np.isfinite(gam_c[1, 0])


def test_potential_column_without_reference():
    w = beams([[0], [1]], [[0], [0]])
    gam_p, gam_c = group_potentials(w, scalar_channel([1, 1]), RsConfiguration.isolated(2), 1.0)
    assert np.all(gam_p[:, 0] == -np.inf)
    assert np.all(gam_c == -np.inf)


# -- rates, power, objective -------------------------------------------------


def test_private_rate_unit():
    w = beams([[1]], [[0]])
    r = achievable_rates(w, scalar_channel([1]), RsConfiguration.isolated(1), 1.0, 1.0)
    assert r.r_p[0] == pytest.approx(1.0)
    assert r.r_c[0] == 0.0


def test_common_rate_limited_by_weakest_member():
    rs = groups([{0, 1}, {1}])
    w = beams([[0], [0]], [[np.sqrt(3)], [0]])
    h = scalar_channel([1, np.sqrt(1 / 3)])
    assert common_sinr(0, 0, w, h, rs, 1.0) == pytest.approx(3.0)
    assert common_sinr(1, 0, w, h, rs, 1.0) == pytest.approx(1.0)
    assert achievable_rates(w, h, rs, 1.0, 1.0).r_c[0] == pytest.approx(1.0)


def test_zero_commons_give_zero_common_rate():
    rng = np.random.default_rng(8)
    h, w = random_instance(rng, 3, 2, 2)
    w = w.with_beams(w_c=np.zeros_like(w.w_c))
    r = achievable_rates(w, h, groups([{0, 1}, {1}, {2}]), 1.0, 1.0)
    assert np.all(r.r_c == 0.0)


def test_clamp_private_first():
    ach = RateAllocation(np.array([5.0, 15.0, 0.0]), np.array([10.0, 3.0, 2.0]))
    out = clamp_rates(ach, 12.0)
    assert out.r_p.tolist() == [5.0, 12.0, 0.0]
    assert out.r_c.tolist() == [7.0, 0.0, 2.0]


def test_power_examples():
    assert per_ap_power(BeamformerSet.zeros(2, 2, 2), 1) == 0.0
    w = BeamformerSet(np.array([[0, 0, 1, 1]], dtype=complex), np.zeros((1, 4)), n_aps=2)
    assert per_ap_power(w, 1) == 2.0
    w = BeamformerSet(np.array([[np.sqrt(0.3), 0], [0, np.sqrt(0.5)]], dtype=complex),
                      np.zeros((2, 2)), n_aps=1)
    assert per_ap_power(w, 0) == pytest.approx(0.8)
    with pytest.raises(IndexError):
        per_ap_power(w, 1)


def test_qos_gap_examples():
    assert qos_gap(RateAllocation(np.array([12e6, 12e6]), np.zeros(2)), 12e6) == 0.0
    assert qos_gap(RateAllocation(np.array([4e6, 12e6]), np.array([2e6, 0.0])), 12e6) == \
        pytest.approx(0.25)
    assert qos_gap(RateAllocation.zeros(5), 12e6) == 5.0


# -- symbol-level oracle -----------------------------------------------------


def test_oracle_private_scalar():
    w = beams([[2], [1]], [[0], [1]])
    est = simulate_transmission(w, scalar_channel([1, 1]), RsConfiguration.isolated(2), 1.0,
                                100_000, np.random.default_rng(0))
    assert est.private[0] == pytest.approx(4 / 3, rel=0.02)


def test_oracle_noiseless_single_user():
    w = beams([[3]], [[0]])
    est = simulate_transmission(w, scalar_channel([1]), RsConfiguration.isolated(1), 0.0,
                                1000, np.random.default_rng(0))
    assert est.private[0] == np.inf
    assert est.interference_power[0] == 0.0
    # the sample power of unit-variance symbols fluctuates; 9 in expectation
    assert est.desired_power[0] == pytest.approx(9.0, rel=0.1)


def test_oracle_ap_power():
    rng = np.random.default_rng(9)
    h, w = random_instance(rng, 3, 2, 2)
    est = simulate_transmission(w, h, RsConfiguration.isolated(3), 1.0, 100_000,
                                np.random.default_rng(1))
    for n in range(2):
        assert est.ap_power[n] == pytest.approx(per_ap_power(w, n), rel=0.02)
