import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cplrnn.analysis import (classify, enumerate_fixed_points, find_fixed_points,
                             find_limit_cycle, floquet_multipliers, propose_itineraries,
                             search_cycles, write_report)
from cplrnn.errors import InvalidItinerary, NoConvergence
from cplrnn.events import solve_trajectory
from cplrnn.model import ModelParams

from conftest import OSCILLATOR_PERIOD, random_model


def test_scalar_fixed_point():
    p = ModelParams(A=np.array([-1.0]), W=np.zeros((1, 1)), h=np.array([1.0]), P=1, N=1)
    fps = find_fixed_points(p)
    assert len(fps) == 1
    assert fps[0].z_star == pytest.approx([1.0])
    assert fps[0].region == 1 and fps[0].kind == "stable node"


def test_oscillator_fixed_points_real_and_virtual(osc):
    fps = find_fixed_points(osc)
    assert len(fps) == 1
    assert fps[0].z_star == pytest.approx([-0.6, 0.8])
    assert fps[0].kind == "unstable spiral"


def test_classify_kinds():
    assert classify(np.array([-1.0, -2.0])) == "stable node"
    assert classify(np.array([-1 + 1j, -1 - 1j])) == "stable spiral"
    assert classify(np.array([1.0, 2.0])) == "unstable node"
    assert classify(np.array([0.5 + 2j, 0.5 - 2j])) == "unstable spiral"
    assert classify(np.array([-1.0, 2.0])) == "saddle"
    assert classify(np.array([1j, -1j])) == "center"


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_search_matches_enumeration_for_small_p(seed):
    rng = np.random.default_rng(seed)
    p = random_model(rng, M_range=(2, 9), P_max=8, abscissa_max=np.inf, w_scale=2.0)
    found = find_fixed_points(p, restarts=1000, rng=rng)
    ref = enumerate_fixed_points(p)
    key = lambda fps: sorted(tuple(np.round(f.z_star, 8)) for f in fps)  # noqa: E731
    assert key(found) == key(ref)


def _osc_traj(osc, T=60.0):
    return solve_trajectory(osc, np.array([0.0, 0.5]), np.linspace(0.0, T, 601))


def test_oscillator_cycle_period_and_stability(osc):
    cycles = search_cycles(osc, _osc_traj(osc))
    assert len(cycles) == 1
    c = cycles[0]
    assert c.period == pytest.approx(OSCILLATOR_PERIOD, rel=1e-10)
    assert c.stable
    mult = np.sort(np.abs(c.multipliers))
    assert mult[1] == pytest.approx(1.0, abs=1e-8)
    assert mult[0] < 1.0


def test_cycle_matches_simulated_crossing_intervals(osc):
    tr = solve_trajectory(osc, np.array([0.0, 0.5]), np.linspace(0.0, 200.0, 11))
    ups = [e.t_abs for e in tr.events if e.region_after == 1]
    assert np.diff(ups)[-5:] == pytest.approx(OSCILLATOR_PERIOD, rel=1e-7)


def test_nontrivial_multiplier_matches_return_map(osc):
    c = search_cycles(osc, _osc_traj(osc))[0]
    # one-dimensional return map on the switching line z2 = 0, entered upward
    def ret(x):
        tr = solve_trajectory(osc, np.array([x, 0.0]), np.linspace(0.0, 3 * OSCILLATOR_PERIOD, 4))
        up = [e for e in tr.events if e.region_after == 1]
        return up[0].z_at_switch[0] if up[0].t_abs > 1e-3 else up[1].z_at_switch[0]

    i_up = [i for i, k in enumerate(c.regions) if k == 1][0]
    x_star = float(_state_entering(osc, c, i_up)[0])
    eps = 1e-5
    slope = (ret(x_star + eps) - ret(x_star - eps)) / (2 * eps)
    nontrivial = c.multipliers[np.argmax(np.abs(c.multipliers - 1.0))]
    assert slope == pytest.approx(nontrivial.real, rel=1e-3)


def _state_entering(params, c, leg):
    from cplrnn.analysis import _flow, _propagators
    props = _propagators(params, c.regions)
    states = _flow(props, c.z0, c.flight_times)
    return c.z0 if leg == 0 else states[leg - 1][0]


def test_floquet_of_single_linear_region_is_expm_spectrum():
    p = ModelParams(A=np.array([-1.0, -2.0]), W=np.zeros((2, 2)), h=np.zeros(2), P=1, N=1)
    mult = floquet_multipliers(p, [0], [0.5])
    assert np.sort(mult.real) == pytest.approx(np.sort(np.exp([-0.5, -1.0])))


def test_invalid_itinerary(osc):
    with pytest.raises(InvalidItinerary):
        find_limit_cycle(osc, [0, 0], [1, 1], np.zeros(2), [1.0, 1.0])
    with pytest.raises(InvalidItinerary):
        find_limit_cycle(osc, [0, 1], [0, 0], np.zeros(2), [1.0, 1.0])
    with pytest.raises(InvalidItinerary):
        find_limit_cycle(osc, [0, 1], [1], np.zeros(2), [1.0, 1.0])


def test_no_convergence_without_cycle():
    # globally attracting fixed point: no periodic orbit through the switching line
    p = ModelParams(A=np.array([-1.0, -1.0]), W=np.zeros((2, 2)), h=np.array([0.0, 0.5]), P=1, N=1)
    with pytest.raises((NoConvergence, InvalidItinerary)):
        find_limit_cycle(p, [0, 1], [1, 1], np.array([1.0, 0.0]), [1.0, 1.0])
    tr = solve_trajectory(p, np.array([1.0, -1.0]), np.linspace(0, 20, 21))
    assert propose_itineraries(p, tr) == []
    assert search_cycles(p, tr) == []


def test_proposals_from_oscillator(osc):
    cands = propose_itineraries(osc, _osc_traj(osc))
    assert cands
    assert sorted(cands[0]["regions"]) == [0, 1]
    assert cands[0]["dims"] == [1, 1]
    assert sum(cands[0]["T_init"]) == pytest.approx(OSCILLATOR_PERIOD, rel=1e-3)


def test_report_json(tmp_path, osc):
    import json
    write_report(tmp_path / "r.json", find_fixed_points(osc), search_cycles(osc, _osc_traj(osc)))
    rep = json.load(open(tmp_path / "r.json"))
    assert rep["fixed_points"][0]["kind"] == "unstable spiral"
    assert rep["cycles"][0]["stable"] is True
