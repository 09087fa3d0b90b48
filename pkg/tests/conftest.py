import warnings

import numpy as np
import pytest

from ghostsim.errors import CoherenceRatioWarning, FarFieldWarning
from ghostsim.grid import make_grid
from ghostsim.source import GaussianSchellParams, SlmParams

LAMBDA0 = 1e-6
K0 = 2 * np.pi / LAMBDA0


@pytest.fixture(autouse=True)
def _quiet_regime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FarFieldWarning)
        warnings.simplefilter("ignore", CoherenceRatioWarning)
        yield


@pytest.fixture
def set_a():
    """Set A: lambda 1 um, L 10 m, a0 1 mm, rho0 100 um."""
    return GaussianSchellParams(1e6, 1e-3, 1e-4)


@pytest.fixture
def set_a_grid():
    return make_grid(256, 32e-6)


@pytest.fixture
def set_b():
    """Set B: d 20 um, M 15 (D 620 um), P 1e6 photons/s."""
    return SlmParams(20e-6, 15, 1e6)


@pytest.fixture
def set_b_grid():
    return make_grid(512, 5e-6)


def small_slm_cfg(shape="point", frames=200, window=8, scan_n=16, **kw):
    """Set B geometry with short runs; sinusoidal schedule sampled after dephasing."""
    from ghostsim.correlator import ScenarioConfig
    from ghostsim.detection import double_slit_mask, point_mask
    from ghostsim.propagation import output_grid
    from ghostsim.source import sinusoidal_scheme

    s = kw.pop("source", SlmParams(20e-6, 15, 1e6))
    g = make_grid(512, 5e-6)
    og = output_grid(g, LAMBDA0, 10.0).crop(window)[0]
    if shape == "point":
        mask = point_mask(og)
    elif shape == "double-slit":
        mask = double_slit_mask(og, 0.04, 0.01, 0.06)
    else:
        mask = shape(og)
    scheme = kw.pop("scheme", sinusoidal_scheme(s, 2 * np.pi * 1000, seed=5))
    base = dict(source=s, lambda0=LAMBDA0, L=10.0, source_grid=g, mask=mask, frames=frames,
                dt=0.1372834, scheme=scheme, dc_block=True, scan_n=scan_n, t0=137.2834, seed=1)
    base.update(kw)
    return ScenarioConfig(**base)


def small_gs_cfg(frames=200, window=8, scan_n=16, mask=None, **kw):
    from ghostsim.correlator import ScenarioConfig
    from ghostsim.detection import point_mask
    from ghostsim.propagation import output_grid

    p = GaussianSchellParams(1e6, 1e-3, 1e-4)
    g = make_grid(256, 32e-6)
    og = output_grid(g, LAMBDA0, 10.0).crop(window)[0]
    base = dict(source=p, lambda0=LAMBDA0, L=10.0, source_grid=g,
                mask=point_mask(og) if mask is None else mask(og), frames=frames, dt=1e-3,
                scan_n=scan_n, seed=2)
    base.update(kw)
    return ScenarioConfig(**base)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
