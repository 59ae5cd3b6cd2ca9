import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cplrnn.errors import NearDefective, SingularRegionMatrix
from cplrnn.model import (ModelParams, decomposition, eval_point, eval_velocity, init_params,
                          max_abscissa, region_matrix, region_of, region_solution, vector_field)

from conftest import random_model


def scalar(a=-1.0, h=1.0):
    return ModelParams(A=np.array([a]), W=np.zeros((1, 1)), h=np.array([h]), P=1, N=1)


def test_scalar_solution_terms():
    sol = region_solution(scalar(), np.array([-1.0]))
    assert sol.lambdas[0] == pytest.approx(-1.0)
    assert sol.c_tilde[0, 0].real == pytest.approx(-2.0)
    assert sol.h_tilde[0] == pytest.approx(1.0)
    assert eval_point(sol, np.log(2.0))[0] == pytest.approx(0.0, abs=1e-15)


def test_region_of_zero_is_off():
    p = ModelParams(A=-np.ones(3), W=np.zeros((3, 3)), h=np.zeros(3), P=2, N=1)
    assert region_of(p, [5.0, 0.0, 1.0]) == 0b10
    assert region_of(p, [5.0, 2.0, -1.0]) == 0b01
    assert region_of(p, [-5.0, 0.0, 0.0]) == 0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_vector_field_matches_region_matrix(seed):
    rng = np.random.default_rng(seed)
    p = random_model(rng, abscissa_max=np.inf)
    z = rng.normal(size=p.M)
    k = region_of(p, z)
    assert np.allclose(vector_field(p, z), region_matrix(p, k) @ z + p.h, rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_solution_satisfies_ode(seed):
    rng = np.random.default_rng(seed)
    p = random_model(rng)
    z0 = rng.normal(size=p.M)
    sol = region_solution(p, z0)
    assert np.allclose(eval_point(sol, 0.0), z0, rtol=0, atol=1e-10)
    t = 0.37
    Wr = region_matrix(p, sol.region)
    assert np.allclose(eval_velocity(sol, t), Wr @ eval_point(sol, t) + p.h, rtol=0, atol=1e-9)


def test_conjugate_pairs_give_real_states():
    p = ModelParams(A=np.array([-0.1, -0.1]), W=np.array([[0.0, -2.0], [2.0, 0.0]]),
                    h=np.zeros(2), P=0, N=2)
    sol = region_solution(p, np.array([1.0, 0.0]))
    z = eval_point(sol, np.pi / 4)
    expected = np.exp(-0.1 * np.pi / 4) * np.array([np.cos(np.pi / 2), np.sin(np.pi / 2)])
    assert np.allclose(z, expected, rtol=0, atol=1e-12)


def test_singular_region():
    p = ModelParams(A=np.array([0.0, -1.0]), W=np.zeros((2, 2)), h=np.zeros(2), P=1, N=1)
    with pytest.raises(SingularRegionMatrix):
        decomposition(p, 0)


def test_defective_region_and_perturbation():
    # Jordan block: eigenvalue -1 with multiplicity two
    p = ModelParams(A=np.array([-1.0, -1.0]), W=np.array([[0.0, 1.0], [0.0, 0.0]]),
                    h=np.zeros(2), P=1, N=1)
    with pytest.raises(NearDefective):
        decomposition(p, 1)
    dec = decomposition(p, 1, allow_perturb=True)
    assert dec.perturbed
    sol = region_solution(p, np.array([0.5, 1.0]), region=1, allow_perturb=True)
    # exact solution of the Jordan system
    t = 0.8
    exact = np.exp(-t) * np.array([0.5 + t * 1.0, 1.0])
    assert np.allclose(eval_point(sol, t), exact, rtol=0, atol=1e-5)


def test_json_round_trip(tmp_path, rng):
    p = init_params(5, 2, 2, rng)
    path = tmp_path / "m.json"
    p.save(path)
    q = ModelParams.load(path)
    assert np.array_equal(p.A, q.A) and np.array_equal(p.W, q.W) and np.array_equal(p.h, q.h)
    assert (q.M, q.P, q.N) == (5, 2, 2)


def test_replace_bumps_version_and_clears_cache(rng):
    p = init_params(4, 2, 1, rng)
    decomposition(p, 0)
    q = p.replace(h=np.ones(4))
    assert q.version == p.version + 1
    assert not q.cache


def test_params_are_read_only(rng):
    p = init_params(3, 1, 1, rng)
    with pytest.raises(ValueError):
        p.W[0, 0] = 1.0


def test_init_is_contracting(rng):
    p = init_params(20, 10, 3, rng)
    assert max_abscissa(p) < 0
    assert np.all(p.A <= 0) and np.all(p.A >= -0.1) and np.all(p.h == 0)


def test_invalid_shapes():
    with pytest.raises(ValueError):
        ModelParams(A=np.zeros(2), W=np.zeros((3, 3)), h=np.zeros(2), P=1, N=1)
    with pytest.raises(ValueError):
        ModelParams(A=np.zeros(2), W=np.zeros((2, 2)), h=np.zeros(2), P=3, N=1)
