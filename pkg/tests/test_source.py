import numpy as np
import pytest
from scipy.special import j0

from ghostsim.errors import (CoherenceRatioWarning, InvalidArgument, InvalidScheme,
                             SamplingViolation)
from ghostsim.grid import make_grid, power
from ghostsim.source import (PHI_DEFAULT, GaussianSchellParams, ModulationScheme, SlmParams,
                             default_offsets, export_schedule, gs_frame, gs_frames,
                             import_schedule, phasor_time_average, slm_field, slm_phases,
                             slm_phasors, sinusoidal_scheme, temporal_R)


# --- Gaussian-Schell --------------------------------------------------------

def test_gs_parameter_validation():
    with pytest.raises(InvalidArgument):
        GaussianSchellParams(1.0, 1e-3, 3e-4)          # rho0 > a0/5
    with pytest.raises(InvalidArgument):
        GaussianSchellParams(-1.0, 1e-3, 1e-4)
    with pytest.warns(CoherenceRatioWarning):
        GaussianSchellParams(1.0, 1e-3, 1.5e-4)        # a0/rho0 < 10


def test_gs_grid_validation():
    p = GaussianSchellParams(1.0, 1e-3, 1e-4)
    with pytest.raises(SamplingViolation):
        gs_frame(p, make_grid(64, 32e-6), 0, 0)         # extent < 4 a0
    with pytest.raises(SamplingViolation):
        gs_frame(p, make_grid(128, 40e-6), 0, 0)        # pitch > rho0/3


def test_gs_frames_are_deterministic_and_match_single_frames(set_a, set_a_grid):
    a = next(gs_frames(set_a, set_a_grid, 7, 3))[1]
    b = next(gs_frames(set_a, set_a_grid, 7, 3))[1]
    assert np.array_equal(a, b)
    assert np.array_equal(a[2], gs_frame(set_a, set_a_grid, 2, 7).values)
    assert not np.array_equal(a[0], gs_frame(set_a, set_a_grid, 0, 8).values)


def test_gs_centre_moments(set_a, set_a_grid):
    # mean |E(0)|^2 = 2P / (pi a0^2); circular Gaussian gives <|E|^4> = 2 <|E|^2>^2
    g = set_a_grid
    c = g.n // 2
    vals = []
    for _, E in gs_frames(set_a, g, 11, 400, batch=50):
        vals.append(E[:, c - 2:c + 3, c - 2:c + 3].reshape(E.shape[0], -1))
    v = np.concatenate(vals)
    I = np.abs(v) ** 2
    expect = 2 * set_a.P / (np.pi * set_a.a0**2)
    assert I.mean() == pytest.approx(expect, rel=0.05)
    assert (I**2).mean() / I.mean() ** 2 == pytest.approx(2.0, rel=0.1)


def test_gs_total_power(set_a, set_a_grid):
    E = next(gs_frames(set_a, set_a_grid, 3, 32))[1]
    p = np.mean(np.sum(np.abs(E) ** 2, axis=(1, 2))) * set_a_grid.pitch**2
    assert p == pytest.approx(set_a.P, rel=0.05)


def test_gs_exponential_mode_lag_one_correlation(set_a, set_a_grid):
    dt = set_a.T0
    frames = np.concatenate([E[:, 100:156:4, 100:156:4] for _, E in
                             gs_frames(set_a, set_a_grid, 1, 200, dt=dt, temporal="exponential")])
    num = np.mean(frames[1:] * np.conj(frames[:-1]))
    den = np.mean(np.abs(frames) ** 2)
    assert abs(num / den) == pytest.approx(np.exp(-1), abs=0.05)


def test_gs_exponential_mode_rejects_bad_args(set_a, set_a_grid):
    with pytest.raises(InvalidArgument):
        next(gs_frames(set_a, set_a_grid, 0, 2, temporal="exponential"))
    with pytest.raises(InvalidArgument):
        next(gs_frames(set_a, set_a_grid, 0, 2, temporal="ballistic"))


def test_temporal_R():
    assert temporal_R(0.0, 1e-3) == 1.0
    assert temporal_R(-2e-3, 1e-3) == pytest.approx(np.exp(-2))
    with pytest.raises(InvalidArgument):
        temporal_R(1.0, 0.0)


# --- SLM modulation ---------------------------------------------------------

def test_default_offsets_are_distinct_and_bounded():
    for mode in ("random", "linear", "permuted"):
        dw = default_offsets(3, 100.0, mode, seed=2)
        assert dw.shape == (7, 7)
        assert np.unique(dw).size == 49
        assert np.all((dw > 0) & (dw <= 10.0))
    assert np.array_equal(default_offsets(3, 100.0, seed=5), default_offsets(3, 100.0, seed=5))
    with pytest.raises(InvalidArgument):
        default_offsets(3, 100.0, "spiral")


def test_scheme_validation(set_b):
    with pytest.raises(InvalidScheme):
        ModulationScheme("sawtooth")
    with pytest.raises(InvalidScheme):
        ModulationScheme("sinusoidal", Omega0=1.0)
    with pytest.raises(InvalidScheme):
        ModulationScheme("sinusoidal", Omega0=1.0, DeltaOmega=np.full((3, 3), 0.2))
    with pytest.raises(InvalidScheme):
        ModulationScheme("sinusoidal", Omega0=1.0, DeltaOmega=np.zeros((1, 2)) + [[0.01, 0.01]])
    bad_shape = ModulationScheme("sinusoidal", Omega0=1.0, DeltaOmega=[[0.01, 0.02]])
    with pytest.raises(InvalidScheme):
        slm_phases(set_b, bad_shape, 0.0)


def test_sinusoidal_phases(set_b):
    m = sinusoidal_scheme(set_b, 2 * np.pi, seed=1)
    t = 0.37
    assert np.allclose(slm_phases(set_b, m, t), PHI_DEFAULT * np.cos((m.Omega0 + m.DeltaOmega) * t))
    assert np.allclose(slm_phasors(set_b, m, [t])[0], np.exp(1j * slm_phases(set_b, m, t)))


def test_phasor_time_average_is_J0():
    for Phi in (0.5, 1.0, 2.0, PHI_DEFAULT, 5.0):
        avg = phasor_time_average(Phi, 2 * np.pi, 1000.0)
        assert avg.real == pytest.approx(j0(Phi), abs=1e-9)
        assert abs(avg.imag) < 1e-9
    assert abs(phasor_time_average(PHI_DEFAULT, 2 * np.pi, 100.0)) < 1e-9


def test_stochastic_phases_levels_and_decorrelation(set_b):
    s = SlmParams(20e-6, 15, 1e6, T0=1.0)
    m = ModulationScheme("stochastic-iid", seed=4, levels=8)
    ph = slm_phases(s, m, 3.3)
    assert np.allclose(np.round(ph / (2 * np.pi / 8)), ph / (2 * np.pi / 8))
    with pytest.raises(InvalidArgument):
        slm_phases(s, m, -1.0)
    # phasor correlation e^{-|dt|/T0}; 961 pixels x 300 starting times
    starts = np.arange(300) * 3.1
    a = slm_phasors(s, m, starts)
    for lag in (0.5, 1.0):
        b = slm_phasors(s, m, starts + lag)
        c = np.mean(b * np.conj(a))
        assert c.real == pytest.approx(np.exp(-lag), abs=0.03)
    # distinct pixels are uncorrelated
    cross = np.mean(a[:, 0, 0] * np.conj(a[:, 0, 1]))
    assert abs(cross) < 0.2
    cross_all = np.mean(a[:, :, :-1] * np.conj(a[:, :, 1:]))
    assert abs(cross_all) < 0.05


def test_stochastic_phases_are_reproducible(set_b):
    m = ModulationScheme("stochastic-iid", seed=9)
    assert np.array_equal(slm_phases(set_b, m, 0.0123), slm_phases(set_b, m, 0.0123))


def test_schedule_round_trip(tmp_path, set_b):
    m = sinusoidal_scheme(set_b, 10.0, Phi=1.7, seed=3)
    back = import_schedule(export_schedule(m, tmp_path / "s.csv"))
    assert back.Phi == m.Phi and back.Omega0 == m.Omega0
    assert np.array_equal(back.DeltaOmega, m.DeltaOmega)
    assert back.fingerprint_bytes() == m.fingerprint_bytes()
    with pytest.raises(InvalidScheme):
        export_schedule(ModulationScheme("stochastic-iid"), tmp_path / "x.csv")


# --- SLM field --------------------------------------------------------------

def test_slm_field_power_and_pixel_layout(set_b, set_b_grid):
    rng = np.random.default_rng(0)
    ph = rng.uniform(0, 2 * np.pi, (31, 31))
    f = slm_field(set_b, ph, set_b_grid)
    assert power(f) == pytest.approx(set_b.P, rel=0.005)
    # the centre pixel spans 4 samples per axis and carries its own phase
    g = set_b_grid
    c = g.n // 2
    ph2 = np.zeros((31, 31))
    ph2[15, 15] = np.pi
    v = slm_field(set_b, ph2, g).values
    assert np.allclose(np.angle(v[c, c]), np.pi)
    assert np.allclose(np.angle(v[c - 2:c + 2, c - 2:c + 2]), np.pi)
    assert np.allclose(v[c - 3, c], v[c - 3, c].real) and v[c - 3, c].real > 0


def test_slm_field_checkerboard_and_errors(set_b, set_b_grid):
    ph = np.pi * (np.add.outer(np.arange(31), np.arange(31)) % 2)
    v = slm_field(set_b, ph, set_b_grid).values
    inside = v != 0
    assert np.allclose(np.abs(v[inside]), np.abs(v[inside]).max())
    with pytest.raises(SamplingViolation):
        slm_field(set_b, ph, make_grid(512, 6e-6))
    with pytest.raises(InvalidArgument):
        slm_field(set_b, ph[:-1], set_b_grid)
