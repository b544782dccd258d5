import numpy as np
import pytest

from archcal.continuum import ContinuumParams
from archcal.interface import InterfaceParams
from archcal.scenarios import CONTINUUM, JOINT


@pytest.fixture(params=["weak", "strong"])
def masonry(request):
    return request.param


@pytest.fixture
def cdp(masonry):
    return ContinuumParams(**CONTINUUM[masonry])


@pytest.fixture
def joint(masonry):
    return InterfaceParams(**JOINT[masonry])


def random_cdp(rng: np.random.Generator) -> ContinuumParams:
    """An admissible continuum parameter set drawn from wide ranges."""
    ft = rng.uniform(0.02, 1.0)
    fc_max = rng.uniform(20 * ft, 200 * ft)
    return ContinuumParams(E=rng.uniform(500.0, 20000.0), nu=rng.uniform(0.0, 0.3),
                           fb0_ratio=rng.uniform(1.02, 1.45), fy_ratio=rng.uniform(0.1, 1.0),
                           psi=rng.uniform(5.0, 50.0), ecc=rng.uniform(0.0, 0.3),
                           Kc=rng.uniform(0.55, 1.0), ft=ft, fc_max=fc_max,
                           Gt=rng.uniform(0.005, 0.2), mu=rng.uniform(0.05, 1.0),
                           kappa_c_fc=rng.uniform(1e-3, 5e-3), rho_c=rng.uniform(0.2, 1.0),
                           wc=rng.uniform(0.0, 1.0), wt=rng.uniform(0.0, 1.0))


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
