import numpy as np
import pytest

from conftest import groups, params, random_instance
from rsrecover.rsmodel import (
    BeamformerSet,
    RsConfiguration,
    achievable_rates,
    ap_powers,
    common_sinr,
    private_sinr,
)
from rsrecover.scenario import ChannelState, Mode, ScenarioConfig, generators, draw_channels, \
    generate_topology
from rsrecover.solver import (
    T_MIN,
    SolverStatus,
    anchored_state,
    dump_subproblem,
    initialize_sca,
    run_sca,
    sca_step,
    seed_dormant,
    solve_subproblem,
    surrogate_value,
)


def _single(h, **kw):
    H = np.atleast_2d(np.asarray(h, dtype=complex))
    return ChannelState.from_aggregate(H, 1), RsConfiguration.isolated(1), params(1, **kw)


def test_init_single_user_matched_filter():
    h = np.array([0.6, 0.8j])
    ch, rs, p = _single(h, sigma2=0.25)
    st = initialize_sca(ch, rs, p)
    assert np.allclose(st.w_tilde.w_p[0], h)
    assert st.t_p[0] == pytest.approx(1 / 0.25)
    assert np.all(st.w_tilde.w_c == 0)


def test_init_all_blocked():
    ch = ChannelState(h=np.zeros((2, 3, 2)), blocked=np.ones((2, 3), dtype=bool))
    st = initialize_sca(ch, RsConfiguration.isolated(3), params(3, p_max=(1.0, 1.0)))
    assert np.all(st.w_tilde.w_p == 0) and np.all(st.w_tilde.w_c == 0)
    assert np.all(st.t_p == T_MIN) and np.all(st.t_c == T_MIN)
    assert st.last_objective == 3.0


def test_init_respects_budget():
    c = ScenarioConfig()
    g = generators(0)
    ch = draw_channels(generate_topology(c, g["topology"]), c, g["fading"])
    st = initialize_sca(ch, RsConfiguration.isolated(c.n_users), c)
    assert np.all(ap_powers(st.w_tilde) <= c.p_max + 1e-9)
    assert np.allclose(ap_powers(st.w_tilde), c.p_max)


def test_single_user_full_power_optimum():
    # demand equals the capacity at full power, so the optimum needs every watt
    ch, rs, p = _single([1.0], sigma2=0.1, p_max=(1.0,), bandwidth=1.0, qos=np.log2(11.0))
    st = BeamformerSet(np.array([[0.3]]), np.zeros((1, 1)), 1)
    state = anchored_state(st, ch, rs, p)
    for _ in range(10):
        state = sca_step(state, ch, rs, p)
    assert state.last_objective < 1e-8
    assert abs(state.w_tilde.w_p[0, 0]) ** 2 == pytest.approx(1.0, rel=1e-4)


def test_zero_power_budget():
    rng = np.random.default_rng(0)
    ch, _ = random_instance(rng, 3, 2, 2)
    rs = RsConfiguration.isolated(3)
    p = params(3, p_max=(0.0, 0.0))
    st = initialize_sca(ch, rs, p)
    sol = solve_subproblem(st, ch, rs, p)
    assert sol.objective == pytest.approx(3.0)
    assert np.allclose(sol.w_hat.w_p, 0) and np.allclose(sol.w_hat.w_c, 0)
    nxt = sca_step(st, ch, rs, p)
    assert nxt.last_objective == 3.0
    assert nxt.w_tilde == st.w_tilde


def _small_problem(seed=1, K=4, mode=Mode.RS_DYNAMIC):
    rng = np.random.default_rng(seed)
    ch, _ = random_instance(rng, K, 2, 2)
    rs = groups([{0, 1}] + [{k} for k in range(1, K)])
    p = params(K, sigma2=0.1, bandwidth=1.0, qos=3.0, p_max=(1.0, 1.0), mode=mode)
    w0 = initialize_sca(ch, rs, p).w_tilde
    return ch, rs, p, seed_dormant(w0, ch, rs, p)


def test_descent_and_feasibility_small():
    ch, rs, p, w = _small_problem()
    states = run_sca(anchored_state(w, ch, rs, p), ch, rs, p, max_iter=15, tol=0.0)
    xi = [s.last_objective for s in states]
    for a, b in zip(xi, xi[1:]):
        assert b <= a + 1e-6 * max(1.0, a)
    for s in states:
        assert np.all(ap_powers(s.w_tilde) <= p.p_max * (1 + 1e-6))
        ach = achievable_rates(s.w_tilde, ch, rs, p.sigma2, p.bandwidth)
        assert np.all(s.rates.r_p <= ach.r_p * (1 + 1e-6) + 1e-12)
        assert np.all(s.rates.r_c <= ach.r_c * (1 + 1e-6) + 1e-12)
    assert xi[-1] < xi[0]


def test_anchor_is_feasible_and_tight():
    ch, rs, p, w = _small_problem(seed=2)
    st = anchored_state(w, ch, rs, p)
    for k in range(rs.n_users):
        assert st.t_p[k] <= max(private_sinr(k, w, ch, rs, p.sigma2), T_MIN)
        for i in rs.decoders[k]:
            assert st.t_c[k] <= max(common_sinr(i, k, w, ch, rs, p.sigma2), T_MIN) * (1 + 1e-12)


def test_subproblem_not_worse_than_anchor():
    ch, rs, p, w = _small_problem(seed=3)
    st = anchored_state(w, ch, rs, p)
    sol = solve_subproblem(st, ch, rs, p)
    assert sol.solver_status in (SolverStatus.OPTIMAL, SolverStatus.MAX_ITER)
    assert sol.objective <= st.last_objective + 1e-7


def test_stationary_after_convergence():
    ch, rs, p, w = _small_problem(seed=4)
    states = run_sca(anchored_state(w, ch, rs, p), ch, rs, p, max_iter=60, tol=1e-6, patience=3)
    last = states[-1]
    for _ in range(3):
        nxt = sca_step(last, ch, rs, p)
        assert abs(nxt.last_objective - last.last_objective) < 1e-6
        last = nxt


def test_tin_mode_keeps_commons_silent():
    ch, rs, p, w = _small_problem(seed=5, mode=Mode.TIN)
    w = w.with_beams(w_c=np.zeros_like(w.w_c))
    states = run_sca(anchored_state(w, ch, RsConfiguration.isolated(4), p), ch,
                     RsConfiguration.isolated(4), p, max_iter=5, tol=0.0)
    for s in states:
        assert np.all(s.w_tilde.w_c == 0)
        assert np.all(s.rates.r_c == 0)


def test_channel_shape_mismatch():
    ch, rs, p, w = _small_problem()
    bad = ChannelState.from_aggregate(np.ones((4, 2)), 1)
    with pytest.raises(ValueError):
        solve_subproblem(anchored_state(w, ch, rs, p), bad, rs, p)


def test_surrogate_zero_at_anchor():
    rng = np.random.default_rng(6)
    ch, w = random_instance(rng, 3, 1, 2)
    rs = groups([{0, 1}, {1}, {2}])
    sigma2 = 0.5
    t = private_sinr(0, w, ch, rs, sigma2)
    assert surrogate_value("p", 0, 0, w, t, w, t, ch, rs, sigma2) == pytest.approx(0, abs=1e-12)
    t = common_sinr(1, 0, w, ch, rs, sigma2)
    assert surrogate_value("c", 1, 0, w, t, w, t, ch, rs, sigma2) == pytest.approx(0, abs=1e-12)


def test_seed_dormant_revives_merged_private():
    ch, rs, p, _ = _small_problem(seed=7)
    w = initialize_sca(ch, rs, p).w_tilde
    w = w.with_beams(w_p=np.vstack([np.zeros((1, 4)), w.w_p[1:]]))
    seeded = seed_dormant(w, ch, rs, p)
    assert private_sinr(0, seeded, ch, rs, p.sigma2) > 0
    assert np.all(ap_powers(seeded) <= p.p_max * (1 + 1e-12))
    # nothing to do when every message is alive
    assert seed_dormant(seeded, ch, rs, p) is seeded


def test_dump_subproblem(tmp_path):
    ch, rs, p, w = _small_problem()
    path = tmp_path / "sub.txt"
    dump_subproblem(anchored_state(w, ch, rs, p), ch, rs, p, path)
    text = path.read_text()
    assert text.startswith("users 4\naps 2\nantennas 2\n")
    # dormant isolated commons get no rows: 4 privates plus common 0 at its 2 decoders
    assert "dormant 0 0 0 0 0 1 1 1" in text
    assert text.count("restriction receiver=") == 4 + 2
