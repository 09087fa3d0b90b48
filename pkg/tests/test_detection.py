import numpy as np
import pytest

from ghostsim.detection import (CurrentSeries, DetectorChannel, DetectorModel, ObjectMask,
                                bucket_flux, disk_mask, double_slit_mask, pinhole_flux,
                                point_mask, rect_mask, to_current)
from ghostsim.errors import (GridMismatch, InvalidArgument, InvalidImpulse, MisalignedSeries)
from ghostsim.grid import ComplexField, make_grid


def test_model_validation():
    with pytest.raises(InvalidArgument):
        DetectorModel(eta=0.0)
    with pytest.raises(InvalidArgument):
        DetectorModel(A1=-1.0)
    with pytest.raises(InvalidImpulse):
        DetectorModel(impulse="gaussian")
    with pytest.raises(InvalidImpulse):
        DetectorModel(impulse="boxcar")
    with pytest.raises(InvalidArgument):
        DetectorModel(shot_noise=True)
    with pytest.raises(InvalidImpulse):
        DetectorModel(impulse="boxcar", width=2.5).taps(1.0)
    assert DetectorModel(impulse="boxcar", width=3e-3).taps(1e-3) == 3


def test_instantaneous_current_scales_by_eta_and_q():
    cur = to_current(np.array([1.0, 2.0, 4.0]), DetectorModel(eta=0.5, q=2.0), dt=1.0)
    assert np.array_equal(cur.samples, [1.0, 2.0, 4.0])
    with pytest.raises(InvalidArgument):
        to_current([1.0, 2.0], DetectorModel())


def test_boxcar_is_a_causal_moving_average_across_batches():
    flux = np.arange(1.0, 11.0)
    m = DetectorModel(impulse="boxcar", width=3.0)
    ref = np.convolve(np.concatenate([[0, 0], flux]), np.ones(3) / 3, mode="valid")
    assert np.allclose(to_current(flux, m, dt=1.0).samples, ref)
    ch = DetectorChannel(m, 1.0)
    parts = [ch.process(np.arange(0, 4), flux[:4]), ch.process(np.arange(4, 5), flux[4:5]),
             ch.process(np.arange(5, 10), flux[5:])]
    assert np.allclose(np.concatenate(parts), ref)


def test_boxcar_preserves_area_on_image_stacks():
    rng = np.random.default_rng(0)
    x = rng.random((50, 3, 3))
    ch = DetectorChannel(DetectorModel(impulse="boxcar", width=5.0), 1.0)
    y = ch.process(np.arange(50), x)
    assert np.allclose(y[4:].mean(), x[:-4].mean(), rtol=0.05)
    assert np.allclose(y[10], x[6:11].mean(axis=0))


def test_shot_noise_mean_and_variance():
    flux = np.full(20000, 500.0)
    m = DetectorModel(shot_noise=True, dt=0.01, eta=0.8)
    cur = to_current(flux, m, dt=0.01, seed=3)
    counts = cur.samples * 0.01
    assert counts.mean() == pytest.approx(4.0, rel=0.02)
    assert counts.var() == pytest.approx(4.0, rel=0.05)
    again = to_current(flux, m, dt=0.01, seed=3)
    assert np.array_equal(cur.samples, again.samples)
    with pytest.raises(InvalidArgument):
        DetectorChannel(m, 0.02)


def test_current_series_csv_round_trip(tmp_path):
    s = CurrentSeries(np.array([0.1, -2.0, 3.5]), 0.25, 1.0)
    back = CurrentSeries.from_csv(s.to_csv(tmp_path / "c.csv"))
    assert np.array_equal(back.samples, s.samples)
    assert back.dt == pytest.approx(0.25) and back.t0 == 1.0
    (tmp_path / "bad.csv").write_text("t,value\n0,1\n1,2\n3,4\n")
    with pytest.raises(MisalignedSeries):
        CurrentSeries.from_csv(tmp_path / "bad.csv")
    with pytest.raises(InvalidArgument):
        CurrentSeries(np.array([np.nan]), 1.0)


def test_masks():
    g = make_grid(16, 1.0)
    p = point_mask(g, (2.0, -3.0))
    assert p.values.sum() == 1 and p.values[5, 10] == 1
    assert disk_mask(g, 2.0).values.sum() == 13
    assert rect_mask(g, 2.0, 4.0).values.sum() == 15
    ds = double_slit_mask(g, 6.0, 2.0, 4.0)
    assert ds.values.sum() == 30
    assert ds.values[8, 8] == 0 and ds.values[8, 5] == 1 and ds.values[8, 11] == 1
    with pytest.raises(InvalidArgument):
        ObjectMask(g, np.full((16, 16), 1.5))
    with pytest.raises(GridMismatch):
        ObjectMask(g, np.zeros((4, 4)))


def test_pinhole_and_bucket_flux():
    g = make_grid(8, 0.5)
    f = ComplexField(g, np.full((8, 8), 2.0 + 0j))
    assert pinhole_flux(f, (0.0, 0.0), DetectorModel(A1=0.1)) == pytest.approx(0.4)
    with pytest.raises(InvalidArgument):
        pinhole_flux(f, (0.0, 0.0), DetectorModel())
    assert bucket_flux(f, rect_mask(g, 1.0, 1.0)) == pytest.approx(4 * 9 * 0.25)
