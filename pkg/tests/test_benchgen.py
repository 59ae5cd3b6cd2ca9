import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from cplrnn.benchgen import (Dataset, delay_embed, gen_lif, gen_lorenz, lif_isi,
                             lorenz_equilibria, subsample_irregular)
from cplrnn.errors import EmbedRequiresRegular, MinimumRefractory


def test_lorenz_equilibria():
    eq = lorenz_equilibria()
    r = math.sqrt(8.0 / 3.0 * 27.0)
    assert np.allclose(eq, [[0, 0, 0], [r, r, 27], [-r, -r, 27]])


def test_lorenz_matches_reference_integrator():
    ds = gen_lorenz(T=51, transient=0)
    assert ds.times == pytest.approx(np.arange(51.0))

    def f(_, z):
        x, y, w = z
        return [10 * (y - x), x * (28 - w) - y, x * y - 8 / 3 * w]

    ref = solve_ivp(f, (0, 0.5), [1.0, 1.0, 1.0], t_eval=np.linspace(0, 0.5, 51),
                    rtol=1e-12, atol=1e-12, method="DOP853").y.T
    assert np.max(np.abs(ds.values - ref)) < 1e-6


def test_lorenz_deterministic_and_bounded():
    a = gen_lorenz(T=3000)
    b = gen_lorenz(T=3000)
    assert np.array_equal(a.values, b.values)
    assert np.all(np.abs(a.values[:, :2]) < 30) and np.all((a.values[:, 2] > 0) & (a.values[:, 2] < 60))
    assert a.meta["regular"] is True


def test_lif_isi_and_markers():
    assert lif_isi() == pytest.approx(0.005 * math.log(5.0), rel=1e-15)
    ds = gen_lif()
    V = ds.values[:, 0]
    assert V.max() == 1.0 and V.min() == 0.0
    spikes = np.nonzero(V == 1.0)[0]
    # the inter-spike interval is about 50.3 samples
    assert set(np.diff(spikes)) <= {50, 51}
    assert len(spikes) == int((999 * 1.6e-4) // lif_isi())
    assert ds.meta["isi"] / ds.meta["dt"] == pytest.approx(50.295, abs=1e-3)


def test_lif_errors_and_warnings():
    with pytest.raises(MinimumRefractory):
        gen_lif(V_reset=1.0)
    with pytest.warns(UserWarning):
        ds = gen_lif(I=0.1)
    assert not np.any(ds.values == 1.0)


def test_subsample_irregular():
    ds = gen_lif()
    sub = subsample_irregular(ds, 0.1, np.random.default_rng(0))
    assert len(sub.times) == 100
    assert sub.times[0] == ds.times[0] and sub.times[-1] == ds.times[-1]
    assert np.all(np.diff(sub.times) > 0)
    assert sub.regular is False
    assert np.isin(sub.times, ds.times).all()
    with pytest.raises(ValueError):
        subsample_irregular(ds, 0.0, np.random.default_rng(0))


def test_delay_embedding():
    x = np.arange(100.0)
    emb = delay_embed(np.arange(100.0), x, d=6, lag=13)
    assert emb.values.shape == (100 - 65, 6)
    assert list(emb.values[0]) == [65.0, 52.0, 39.0, 26.0, 13.0, 0.0]
    assert emb.times[0] == 65.0
    with pytest.raises(EmbedRequiresRegular):
        delay_embed(np.array([0.0, 1.0, 3.0, 4.0]), np.zeros(4), d=2, lag=1)
    with pytest.raises(EmbedRequiresRegular):
        delay_embed(np.arange(4.0), np.zeros(4), d=2, lag=1, regular=False)


def test_dataset_round_trip(tmp_path):
    ds = subsample_irregular(gen_lorenz(T=200), 0.5, np.random.default_rng(1))
    ds.save(str(tmp_path / "d.csv"))
    back = Dataset.load(str(tmp_path / "d.csv"))
    assert np.array_equal(back.times, ds.times) and np.array_equal(back.values, ds.values)
    assert back.meta == ds.meta
    assert open(tmp_path / "d.csv").readline().strip() == "t,x1,x2,x3"


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        Dataset([0.0, 1.0], [1.0, np.nan])
