import numpy as np
import pytest

from ghostsim.errors import SamplingViolation, SizeExceeded, ZeroDistance
from ghostsim.grid import ComplexField, GridSpec, make_grid, power
from ghostsim.propagation import (SPEED_OF_LIGHT, BlockFresnel, PropagationPlan, direct_oracle,
                                  fresnel_array, fresnel_propagate, output_grid)

LAM = 1e-6


def _random_field(n, pitch, seed=0, center=(0.0, 0.0)):
    rng = np.random.default_rng(seed)
    g = GridSpec(n, pitch, center)
    return ComplexField(g, rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))


def _literal_fresnel(f, L, xo, yo):
    # independent oracle: explicit double sum with the full exp(ik r^2/2L) kernel
    k = 2 * np.pi / LAM
    X, Y = f.grid.mesh()
    out = np.empty((yo.size, xo.size), complex)
    for i, y in enumerate(yo):
        for j, x in enumerate(xo):
            out[i, j] = np.sum(f.values * np.exp(1j * k * ((x - X) ** 2 + (y - Y) ** 2) / (2 * L)))
    return out * k / (2j * np.pi * L) * np.exp(1j * k * L) * f.grid.pitch**2


@pytest.mark.parametrize("n", [16, 32])
def test_single_transform_matches_literal_sum(n):
    f = _random_field(n, 10e-6, seed=n)
    out = fresnel_propagate(f, LAM, 0.1)
    ref = _literal_fresnel(f, 0.1, out.grid.x, out.grid.y)
    assert np.max(np.abs(out.values - ref)) / np.max(np.abs(ref)) < 1e-10


def test_matches_direct_oracle_off_centre_and_negative_distance():
    f = _random_field(16, 10e-6, seed=3, center=(40e-6, -20e-6))
    for L in (0.1, -0.1):
        out = fresnel_propagate(f, LAM, L)
        ref = direct_oracle(f, LAM, L, out.grid)
        assert np.max(np.abs(out.values - ref.values)) / np.max(np.abs(ref.values)) < 1e-10


def test_output_pitch_rule():
    g = make_grid(64, 5e-6)
    assert output_grid(g, LAM, 2.0).pitch == pytest.approx(LAM * 2.0 / (64 * 5e-6))


def test_round_trip_at_critical_sampling_is_identity():
    n, L = 64, 0.05
    pitch = np.sqrt(LAM * L / n)
    f = _random_field(n, pitch, seed=5)
    back = fresnel_propagate(fresnel_propagate(f, LAM, L), LAM, -L)
    assert back.grid.pitch == pytest.approx(pitch)
    assert np.max(np.abs(back.values - f.values)) < 1e-12 * np.max(np.abs(f.values))


def test_power_is_conserved():
    f = _random_field(64, 5e-6, seed=6)
    out = fresnel_propagate(f, LAM, 1.0)
    assert power(out) == pytest.approx(power(f), rel=1e-12)


def test_gaussian_beam_matches_closed_form():
    # Fresnel propagation of e^{-r^2/w0^2}: amplitude (1/q) e^{ik r^2 / 2 q'} form
    w0, L = 0.3e-3, 2.0
    g = make_grid(256, 10e-6)
    f = ComplexField(g, np.exp(-g.r2() / w0**2))
    out = fresnel_propagate(f, LAM, L)
    k = 2 * np.pi / LAM
    zR = k * w0**2 / 2
    q = 1 + 1j * L / zR
    ref = np.exp(1j * k * L) / q * np.exp(-out.grid.r2() / (w0**2 * q))
    assert np.max(np.abs(out.values - ref)) < 1e-9


def test_timestamp_retarded_by_L_over_c():
    f = _random_field(16, 10e-6)
    out = fresnel_propagate(f, LAM, 3.0)
    assert out.timestamp == pytest.approx(3.0 / SPEED_OF_LIGHT)
    assert PropagationPlan(LAM, 3.0, f.grid).retardation == out.timestamp


def test_errors():
    f = _random_field(16, 10e-6)
    with pytest.raises(ZeroDistance):
        fresnel_propagate(f, LAM, 0.0)
    with pytest.raises(SamplingViolation):
        fresnel_propagate(_random_field(64, 1e-4), LAM, 0.1)
    with pytest.raises(SizeExceeded):
        direct_oracle(_random_field(128, 1e-6), LAM, 1.0, make_grid(8, 1e-3))


def test_batched_array_equals_per_frame():
    rng = np.random.default_rng(2)
    g = make_grid(32, 10e-6)
    a = rng.standard_normal((3, 32, 32)) + 0j
    batch = fresnel_array(a, g, LAM, 0.5)
    for i in range(3):
        assert np.array_equal(batch[i], fresnel_array(a[i], g, LAM, 0.5))


def test_block_fresnel_equals_expanded_field():
    g = make_grid(64, 5e-6)
    labels = np.full(64, -1)
    labels[16:48] = np.arange(32) // 4       # 8 blocks of 4 samples
    weight = np.exp(-g.x**2 / (80e-6) ** 2)
    rng = np.random.default_rng(4)
    B = np.exp(1j * rng.uniform(0, 2 * np.pi, (2, 8, 8)))
    L = 0.5
    win = output_grid(g, LAM, L).crop(16, (3, -2))[0]
    bf = BlockFresnel(g, labels, 8, LAM, L, window=win, weight=weight)
    out = bf.apply(B)
    full = np.zeros((2, 64, 64), complex)
    inside = labels >= 0
    for t in range(2):
        blk = B[t][np.clip(labels, 0, None)[:, None], np.clip(labels, 0, None)[None, :]]
        full[t] = np.where(inside[:, None] & inside[None, :], blk, 0) * weight[:, None] * weight[None, :]
    ref = fresnel_array(full, g, LAM, L)
    r, c = output_grid(g, LAM, L).window_slices(win)
    assert np.max(np.abs(out - ref[:, r, c])) < 1e-12 * np.max(np.abs(ref))
