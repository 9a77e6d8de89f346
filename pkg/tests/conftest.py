import time
import warnings

import numpy as np
import pytest

from halfns.data import DataSpec, make_initial_data
from halfns.exponents import exponent_family
from halfns.grid import make_grid
from halfns.picard import run_iteration, smallness_amplitude

# wall grid used by every Stokes / Picard test: fine near the wall, uniform
# through the data region, stretched in the far field
ZONES = dict(h0=0.008, ratio=1.1, h_core=0.08, z_core=4.0, far_ratio=1.15)
ROLL = DataSpec(offset=1.2, depth=0.7, width=0.9)


def stokes_grid(**kw):
    args = dict(n=2, M=32, x_max=12.0, time_nodes=24, T=1.0, zones=ZONES)
    args.update(kw)
    return make_grid(**args)


@pytest.fixture(scope="session")
def pgrid():
    return stokes_grid()


@pytest.fixture(scope="session")
def exps223():
    return exponent_family(2, 2, 3)


@pytest.fixture(scope="session")
def small_data(pgrid, exps223):
    spec = smallness_amplitude(ROLL, pgrid, exps223)
    return spec, make_initial_data(spec, pgrid)


@pytest.fixture(scope="session")
def picard_base(pgrid, exps223, small_data):
    """Converged small-data run shared by the acceptance tests; also returns its runtime."""
    _, h = small_data
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        u, tr = run_iteration(h, exps223, pgrid)
    return h, u, tr, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)
