import math

import numpy as np
import pytest

from gridpatch import data as gd
from gridpatch import grid as gg
from oracles import gauss_seidel_power_flow


def two_bus_case(x=0.1, r=0.0):
    return gg.GridCase(
        buses=[gg.Bus(), gg.Bus()],
        branches=[gg.Branch(0, 1, r=r, x=x, limit=2.0)],
        generators=[gg.Generator(bus=0, kind="thermal", p_min=0, p_max=200, q_min=-100, q_max=100,
                                 cost_a=0.01, cost_b=10, cost_c=1, cost_start=10)],
        loads=[gg.Load(bus=1, p=50.0, q=10.0)],
        slack_gen=0,
    )


def five_bus_case():
    return gg.GridCase(
        buses=[gg.Bus() for _ in range(5)],
        branches=[gg.Branch(0, 1, 0.02, 0.06, 3.0), gg.Branch(0, 2, 0.08, 0.24, 3.0),
                  gg.Branch(1, 2, 0.06, 0.18, 3.0), gg.Branch(1, 3, 0.06, 0.18, 3.0),
                  gg.Branch(1, 4, 0.04, 0.12, 3.0), gg.Branch(2, 3, 0.01, 0.03, 3.0),
                  gg.Branch(3, 4, 0.08, 0.24, 3.0)],
        generators=[gg.Generator(bus=0, kind="thermal", p_min=0, p_max=500, q_min=-300, q_max=300,
                                 cost_a=.01, cost_b=10, cost_c=1, cost_start=10),
                    gg.Generator(bus=1, kind="thermal", p_min=0, p_max=200, q_min=-100, q_max=100,
                                 cost_a=.01, cost_b=10, cost_c=1, cost_start=10)],
        loads=[gg.Load(1, 20, 10), gg.Load(2, 45, 15), gg.Load(3, 40, 5), gg.Load(4, 60, 10)],
        slack_gen=0,
    )


@pytest.fixture(scope="module")
def small_case():
    return gg.generate_case(3, n_bus=14, n_gen=9, n_branch=20, n_load=8)


@pytest.fixture(scope="module")
def small_sim(small_case):
    series = gd.synth_series(7, small_case.n_new, 400)
    return gg.DispatchSim(small_case, series, seed=5)


# ---------------------------------------------------------------------------
# zeta
# ---------------------------------------------------------------------------

def test_zeta_values():
    assert gg.zeta(0.0) == 0.0
    assert gg.zeta(-1.0) == pytest.approx(math.exp(-1) - 1, abs=1e-12)
    assert -1.0 < gg.zeta(-50.0) < -0.999


# ---------------------------------------------------------------------------
# case generation
# ---------------------------------------------------------------------------

def test_same_seed_same_hash():
    a = gg.generate_case(11, n_bus=10, n_gen=6, n_branch=14, n_load=5)
    b = gg.generate_case(11, n_bus=10, n_gen=6, n_branch=14, n_load=5)
    assert a.case_hash() == b.case_hash()
    c = gg.generate_case(12, n_bus=10, n_gen=6, n_branch=14, n_load=5)
    assert a.case_hash() != c.case_hash()


def test_default_sizes_and_generator_mix():
    case = gg.generate_case(0)
    assert (case.n_bus, case.n_gen, case.n_branch, case.n_load) == (126, 54, 185, 91)
    assert case.n_new == 18
    assert len(case.thermal_ids) == 36


def test_minimal_case_is_valid():
    case = gg.generate_case(1, n_bus=2, n_gen=1, n_branch=1, n_load=1)
    assert case.n_gen == 1 and case.n_new == 0
    assert case.generators[case.slack_gen].kind == "thermal"


def test_case_json_round_trip(small_case):
    again = gg.GridCase.from_json(small_case.to_json())
    assert again.case_hash() == small_case.case_hash()


def test_impossible_branch_count_rejected():
    with pytest.raises(gg.GridError):
        gg.generate_case(0, n_bus=10, n_gen=3, n_branch=5, n_load=2)


def test_archetype_cost_rows_present():
    case = gg.generate_case(0)
    a_vals = sorted({g.cost_a for g in case.generators})
    assert a_vals == [0.0097, 0.0109, 0.0285, 0.0696]


# ---------------------------------------------------------------------------
# power flow
# ---------------------------------------------------------------------------

def test_zero_load_zero_generation_flat_start():
    case = two_bus_case()
    sol = gg.solve_power_flow(case, np.array([1]), np.array([0.0]), np.array([0.0]), np.array([0.0]))
    assert sol.converged and sol.iterations == 0
    np.testing.assert_allclose(sol.vm, [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(sol.i_mag, [0.0], atol=1e-12)


def test_two_bus_matches_hand_newton_oracle():
    case = two_bus_case()
    sol = gg.solve_power_flow(case, np.array([1]), np.array([0.0]),
                              np.array([50.0]), np.array([10.0]))
    assert sol.converged and sol.iterations <= 10

    # independent hand-coded Newton on the two unknowns (theta1, v1);
    # line admittance -10j gives B = [[-10, 10], [10, -10]]
    th, v = 0.0, 1.0
    for _ in range(20):
        p1 = 10.0 * v * np.sin(th)
        q1 = -10.0 * v * np.cos(th) + 10.0 * v * v
        f = np.array([p1 + 0.5, q1 + 0.1])
        if np.max(np.abs(f)) < 1e-12:
            break
        jac = np.array([[10.0 * v * np.cos(th), 10.0 * np.sin(th)],
                        [10.0 * v * np.sin(th), -10.0 * np.cos(th) + 20.0 * v]])
        dth, dv = np.linalg.solve(jac, -f)
        th += dth
        v += dv
    assert abs(sol.vm[1] - v) < 1e-6
    assert abs(sol.va[1] - th) < 1e-6


def test_five_bus_matches_gauss_seidel_oracle():
    case = five_bus_case()
    sol = gg.solve_power_flow(case, np.array([1, 1]), np.array([0.0, 40.0]),
                              np.array([20.0, 45.0, 40.0, 60.0]), np.array([10.0, 15.0, 5.0, 10.0]))
    assert sol.converged and sol.iterations <= 10

    n = 5
    ybus = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        ys = 1 / complex(br.r, br.x)
        ybus[br.from_bus, br.from_bus] += ys
        ybus[br.to_bus, br.to_bus] += ys
        ybus[br.from_bus, br.to_bus] -= ys
        ybus[br.to_bus, br.from_bus] -= ys
    p_spec = np.array([0.0, (40 - 20) / 100, -0.45, -0.40, -0.60])
    q_spec = np.array([0.0, -0.10, -0.15, -0.05, -0.10])
    v = gauss_seidel_power_flow(ybus, p_spec, q_spec, 1.0, [1], {1: 1.0})
    assert np.max(np.abs(np.abs(v) - sol.vm)) < 1e-5


def test_converged_solution_balances_every_non_slack_bus(small_case):
    case = small_case
    statuses = np.ones(case.n_gen, dtype=int)
    p = 0.5 * (case.p_min_arr() + case.p_max_arr())
    loads_p = np.array([l.p for l in case.loads])
    loads_q = np.array([l.q for l in case.loads])
    sol = gg.solve_power_flow(case, statuses, p, loads_p, loads_q)
    assert sol.converged
    assert sol.max_mismatch < 1e-8

    # recompute specified vs calculated injections independently
    ybus = np.zeros((case.n_bus, case.n_bus), dtype=complex)
    for br in case.branches:
        ys = 1 / complex(br.r, br.x)
        ybus[br.from_bus, br.from_bus] += ys
        ybus[br.to_bus, br.to_bus] += ys
        ybus[br.from_bus, br.to_bus] -= ys
        ybus[br.to_bus, br.from_bus] -= ys
    v = sol.vm * np.exp(1j * sol.va)
    s = v * np.conj(ybus @ v)
    slack_bus = case.generators[case.slack_gen].bus
    spec = np.zeros(case.n_bus)
    for i, g in enumerate(case.generators):
        if i != case.slack_gen:
            spec[g.bus] += p[i] / 100.0
    for l in case.loads:
        spec[l.bus] -= l.p / 100.0
    for b in range(case.n_bus):
        if b != slack_bus:
            assert abs(s[b].real - spec[b]) < 1e-8


def test_offline_slack_rejected():
    case = two_bus_case()
    with pytest.raises(gg.GridError):
        gg.solve_power_flow(case, np.array([0]), np.array([0.0]), np.array([5.0]), np.array([1.0]))


# ---------------------------------------------------------------------------
# objective components
# ---------------------------------------------------------------------------

def _fake_solution(case, i_mag, vm=None, gen_q=None):
    nb = case.n_branch
    return gg.PowerFlowSolution(
        converged=True, iterations=1, max_mismatch=0.0,
        vm=vm if vm is not None else np.ones(case.n_bus),
        va=np.zeros(case.n_bus), i_mag=np.asarray(i_mag, float),
        p_from=np.zeros(nb), q_from=np.zeros(nb), p_to=np.zeros(nb), q_to=np.zeros(nb),
        gen_q=gen_q if gen_q is not None else np.zeros(case.n_gen),
        slack_p_mw=0.0, loss_mw=0.0,
    )


def test_branch_score_is_one_when_unloaded():
    case = five_bus_case()
    s_b, _, _ = gg.security_components(case, _fake_solution(case, np.zeros(case.n_branch)),
                                       np.ones(case.n_gen, dtype=int))
    assert s_b == 1.0


def test_branch_score_with_half_and_overloaded_branch():
    case = two_bus_case()
    case2 = gg.GridCase(
        buses=case.buses, branches=[gg.Branch(0, 1, 0.0, 0.1, 1.0), gg.Branch(0, 1, 0.0, 0.1, 1.0)],
        generators=case.generators, loads=case.loads, slack_gen=0)
    sol = _fake_solution(case2, [0.5, 1.5])
    s_b, _, _ = gg.security_components(case2, sol, np.ones(1, dtype=int))
    assert s_b == pytest.approx(1.0 - (0.5 + 1.0) / 2.0, abs=1e-12) == 0.25


def test_reactive_overrun_at_twice_max_scores_minus_one():
    case = five_bus_case()
    gen_q = np.array([2.0 * case.generators[0].q_max, 0.0])
    _, s_r, _ = gg.security_components(case, _fake_solution(case, np.zeros(case.n_branch), gen_q=gen_q),
                                       np.ones(2, dtype=int))
    assert s_r == pytest.approx(-1.0, abs=1e-12)


def test_reactive_undershoot_is_penalized_not_rewarded():
    case = five_bus_case()
    gen_q = np.array([2.0 * case.generators[0].q_min, 0.0])  # q_min < 0
    _, s_r, _ = gg.security_components(case, _fake_solution(case, np.zeros(case.n_branch), gen_q=gen_q),
                                       np.ones(2, dtype=int))
    assert s_r == pytest.approx(-1.0, abs=1e-12)


def test_offline_generator_reactive_not_scored():
    case = five_bus_case()
    gen_q = np.array([0.0, 99.0 * case.generators[1].q_max])
    _, s_r, _ = gg.security_components(case, _fake_solution(case, np.zeros(case.n_branch), gen_q=gen_q),
                                       np.array([1, 0]))
    assert s_r == 0.0


def test_voltage_overrun_piecewise():
    case = two_bus_case()
    vm = np.array([1.155, 0.95 * 0.9])
    _, _, s_v = gg.security_components(case, _fake_solution(case, [0.0], vm=vm), np.ones(1, dtype=int))
    want = (1.0 - 1.155 / 1.05) + (0.95 * 0.9 / 0.95 - 1.0)
    assert s_v == pytest.approx(want, abs=1e-12)
    assert s_v < 0


def test_operation_cost_archetype_row():
    case = gg.GridCase(
        buses=[gg.Bus(), gg.Bus()],
        branches=[gg.Branch(0, 1, 0.0, 0.1, 1.0)],
        generators=[gg.Generator(bus=0, kind="thermal", p_min=15, p_max=110, q_min=-38.5, q_max=55,
                                 cost_a=0.0285, cost_b=17.82, cost_c=10.15, cost_start=100.0)],
        loads=[gg.Load(1, 10, 3)], slack_gen=0)
    on = np.array([1])
    c = gg.operation_cost(case, on, on, np.array([100.0]))
    assert c == pytest.approx(0.0285 * 100**2 + 17.82 * 100 + 10.15, abs=1e-9) == pytest.approx(2077.15)


def test_operation_cost_all_off_is_zero(small_case):
    off = np.zeros(small_case.n_gen, dtype=int)
    assert gg.operation_cost(small_case, off, off, np.zeros(small_case.n_gen)) == 0.0


def test_startup_cost_charged_exactly_once():
    case = two_bus_case()
    g = case.generators[0]
    was_off, now_on = np.array([0]), np.array([1])
    p = np.array([50.0])
    with_start = gg.operation_cost(case, now_on, was_off, p)
    without = gg.operation_cost(case, now_on, now_on, p)
    assert with_start - without == pytest.approx(g.cost_start)


def test_urre_examples_and_loop_oracle():
    avail = np.array([50.0, 80.0, 20.0])
    assert gg.renewable_utilization(avail, avail) == 1.0
    assert gg.renewable_utilization(np.zeros(3), avail) == 0.0
    assert gg.renewable_utilization(np.ones(3), np.zeros(3)) == 1.0
    rng = np.random.default_rng(0)
    for _ in range(25):
        p = rng.uniform(0, 50, size=6)
        a = rng.uniform(1, 50, size=6)
        want = min(max(sum(float(x) for x in p) / sum(float(x) for x in a), 0.0), 1.0)
        assert gg.renewable_utilization(p, a) == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def test_hold_action_on_light_load_keeps_running(small_case):
    series = gd.synth_series(7, small_case.n_new, 400)
    light = gg.GridCase.from_json(small_case.to_json())
    for br in light.branches:
        br.limit *= 10.0
    sim = gg.DispatchSim(light, series, seed=5)
    st = sim.reset(60)
    out = sim.step(st, st.p_mw.copy())
    assert out.done is False
    assert out.reward.s_b > 0.85


def test_dropping_renewables_trips_slack_limit(small_sim):
    st = small_sim.reset(60)
    action = st.p_mw.copy()
    action[small_sim.case.renewable_ids] = 0.0
    out = small_sim.step(st, action)
    assert out.done is True
    assert out.reason == "slack-limit"


def test_reward_equals_sum_of_logged_components(small_sim):
    st = small_sim.reset(60)
    out = small_sim.step(st, st.p_mw.copy())
    rb = out.reward
    want = rb.s_b + rb.zeta_s_r + rb.zeta_s_v + rb.zeta_cost + small_sim.omega_r * rb.urre
    assert rb.reward == pytest.approx(want, abs=1e-12)


def test_malformed_action_rejected_before_simulation(small_sim):
    st = small_sim.reset(60)
    with pytest.raises(gg.GridError):
        small_sim.step(st, np.zeros(3))
    bad = st.p_mw.copy()
    bad[0] = np.nan
    with pytest.raises(gg.GridError):
        small_sim.step(st, bad)


def test_ramp_limit_enforced_exactly(small_sim):
    case = small_sim.case
    st = small_sim.reset(60)
    action = case.p_max_arr().copy()  # slam everything to max
    out = small_sim.step(st, action)
    for i in case.thermal_ids:
        if i == case.slack_gen or not (st.statuses[i] and out.state.statuses[i]):
            continue
        g = case.generators[i]
        assert abs(out.state.p_mw[i] - st.p_mw[i]) <= g.ramp_rate * g.p_max + 1e-9


def test_renewables_clipped_to_availability(small_sim):
    case = small_sim.case
    st = small_sim.reset(60)
    action = st.p_mw.copy()
    action[case.renewable_ids] = 1e6
    out = small_sim.step(st, action)
    np.testing.assert_allclose(out.state.p_mw[case.renewable_ids], out.state.availability, atol=1e-12)


def test_step_deterministic(small_case):
    series = gd.synth_series(7, small_case.n_new, 400)
    rng = np.random.default_rng(0)
    actions = [rng.uniform(0, 110, size=small_case.n_gen) for _ in range(5)]

    def run():
        sim = gg.DispatchSim(small_case, series, seed=5)
        st = sim.reset(60)
        trace = []
        for a in actions:
            out = sim.step(st, a)
            trace.append((out.state.p_mw.copy(), out.reward.reward, out.done))
            st = out.state
            if out.done:
                break
        return trace

    t1, t2 = run(), run()
    assert len(t1) == len(t2)
    for (p1, r1, d1), (p2, r2, d2) in zip(t1, t2):
        assert np.array_equal(p1, p2) and r1 == r2 and d1 == d2


def test_per_step_reward_within_bounds(small_sim):
    rng = np.random.default_rng(1)
    st = small_sim.reset(60)
    lo, hi = small_sim.case.p_min_arr(), small_sim.case.p_max_arr()
    for _ in range(30):
        a = rng.uniform(lo, hi)
        out = small_sim.step(st, a)
        assert -3.0 < out.reward.reward <= 1.0 + small_sim.omega_r
        assert 0.0 <= out.reward.s_b <= 1.0
        st = out.state
        if out.done:
            st = small_sim.reset(60)


def test_series_end_reports_exhaustion(small_case):
    series = gd.synth_series(7, small_case.n_new, 400)
    sim = gg.DispatchSim(small_case, series, seed=5)
    st = sim.reset(sim.last_day - 1)
    out = sim.step(st, st.p_mw.copy())
    if not out.done:
        pytest.fail("expected termination at the series end")
    assert out.reason in ("series-exhausted", "slack-limit", "voltage-limit")
    st2 = sim.reset(sim.last_day - 1)
    out2 = sim.step(st2, st2.p_mw.copy())
    assert out2.reason == out.reason


# ---------------------------------------------------------------------------
# episode scores
# ---------------------------------------------------------------------------

def test_episode_scores_single_step():
    rb = gg.RewardBreakdown(s_b=1.0, reward=1.0)
    sc = gg.episode_scores([rb])
    assert sc.steps == 1
    assert sc.total_reward == 1.0
    assert sc.security_score == 1.0


def test_episode_scores_two_identical_steps():
    rb = gg.RewardBreakdown(s_b=0.5, zeta_s_r=-0.1, zeta_s_v=-0.05, zeta_cost=-0.4,
                            cost=1000.0, urre=0.8, reward=1.55)
    one = gg.episode_scores([rb])
    two = gg.episode_scores([rb, rb])
    assert two.total_reward == pytest.approx(2 * one.total_reward)
    assert two.security_score == pytest.approx(2 * one.security_score)
    assert two.avg_cost == pytest.approx(one.avg_cost)
    assert two.avg_urre == pytest.approx(one.avg_urre)


def test_episode_scores_match_accumulation_oracle():
    rng = np.random.default_rng(4)
    recs = []
    for _ in range(17):
        rb = gg.RewardBreakdown(
            s_b=rng.uniform(0, 1), zeta_s_r=rng.uniform(-1, 0), zeta_s_v=rng.uniform(-1, 0),
            zeta_cost=rng.uniform(-1, 0), cost=rng.uniform(0, 5e4), urre=rng.uniform(0, 1))
        rb.reward = rb.s_b + rb.zeta_s_r + rb.zeta_s_v + rb.zeta_cost + 2 * rb.urre
        recs.append(rb)
    sc = gg.episode_scores(recs)
    total = security = cost = urre = 0.0
    for r in recs:
        total += r.reward
        security += r.s_b + r.zeta_s_r + r.zeta_s_v
        cost += r.cost
        urre += r.urre
    assert sc.total_reward == pytest.approx(total, abs=1e-12)
    assert sc.security_score == pytest.approx(security, abs=1e-12)
    assert sc.avg_cost == pytest.approx(cost / 17, abs=1e-9)
    assert sc.avg_urre == pytest.approx(urre / 17, abs=1e-12)


def test_generator_branch_load_ratios(small_case):
    case = small_case
    statuses = np.ones(case.n_gen, dtype=int)
    p = 0.5 * (case.p_min_arr() + case.p_max_arr())
    sol = gg.solve_power_flow(case, statuses, p,
                              np.array([l.p for l in case.loads]), np.array([l.q for l in case.loads]))
    ratios = gg.generator_branch_load(case, sol)
    assert ratios.shape == (case.n_gen,)
    assert np.all(ratios >= 0)
    # brute force for one generator
    g0 = case.generators[0]
    want = max((sol.i_mag[j] / br.limit) for j, br in enumerate(case.branches)
               if g0.bus in (br.from_bus, br.to_bus))
    assert ratios[0] == pytest.approx(want, abs=1e-12)
