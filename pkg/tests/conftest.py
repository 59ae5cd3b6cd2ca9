import numpy as np
import pytest

from cplrnn.model import ModelParams, max_abscissa


def random_model(rng, M_range=(2, 6), P_max=3, abscissa_max=0.5, w_scale=1.5):
    """Random model whose region matrices all have abscissa below ``abscissa_max``."""
    while True:
        M = int(rng.integers(M_range[0], M_range[1] + 1))
        P = int(rng.integers(min(1, P_max), min(P_max, M) + 1))
        p = ModelParams(A=-rng.uniform(0.1, 1.0, M), W=rng.normal(0, w_scale / np.sqrt(M), (M, M)),
                        h=rng.normal(0, 1, M), P=P, N=max(1, M // 2))
        if max_abscissa(p) < abscissa_max:
            return p


def oscillator():
    """Planar two-region model with a stable limit cycle.

    Active region: unstable focus around the real equilibrium (-0.6, 0.8).
    Inactive region: stable node whose (virtual) equilibrium (1, 4) lies above
    the switching line, sending orbits back.
    """
    return ModelParams(A=np.array([-1.0, -0.5]), W=np.array([[0.0, -2.0], [2.0, 2.0]]),
                       h=np.array([1.0, 0.0]), P=1, N=2)


# period of the oscillator cycle, computed once by the boundary-value solver
# and cross-checked against long simulations
OSCILLATOR_PERIOD = 4.800877332710549


@pytest.fixture
def osc():
    return oscillator()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for k in sorted(mod.RESULTS):
                terminalreporter.write_line(mod.RESULTS[k])
