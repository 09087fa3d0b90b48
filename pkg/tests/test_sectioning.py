import json

import numpy as np
import pytest

from conftest import LAMBDA0, small_gs_cfg, small_slm_cfg
from ghostsim.correlator import GhostImage, compute_reference, predicted_image, run_computational, simulate_bucket
from ghostsim.detection import CurrentSeries, DetectorModel, rect_mask
from ghostsim.errors import (FingerprintMismatch, InvalidArgument, MisalignedSeries, NoPeak,
                            NondeterministicSource, PreconditionViolation)
from ghostsim.grid import make_grid
from ghostsim.sectioning import (FWHM_PER_RADIUS, ReferenceStack, build_stack, depth_profile,
                                 focus_from_widths, psf_width, schedule_fingerprint, section,
                                 write_profile_json)
from ghostsim.source import ModulationScheme, sinusoidal_scheme
from ghostsim.validation import defocus_widths

DEPTHS = (9.0, 10.0, 11.0)


@pytest.fixture(scope="module")
def cfg():
    return small_slm_cfg()


@pytest.fixture(scope="module")
def stack(cfg):
    return build_stack(cfg, DEPTHS)


def test_stack_slice_at_object_depth_equals_computed_reference(cfg, stack):
    ref = compute_reference(cfg)
    deltas = np.concatenate([d for _, d in ref.delta_batches()])
    assert np.array_equal(stack.frames[1], deltas)
    assert stack.grids[1] == cfg.scan_grid
    assert np.allclose(stack.retardations, np.array(DEPTHS) / 299792458.0)


def test_section_reproduces_single_depth_computational_image(cfg, stack):
    images = section(simulate_bucket(cfg), stack)
    comp = run_computational(cfg)
    assert len(images) == 3
    assert np.allclose(images[1].values, comp.values, rtol=1e-9,
                       atol=1e-9 * np.abs(comp.values).max())


def test_one_stack_serves_several_objects(cfg, stack):
    for shape in (lambda g: rect_mask(g, 8e-3, 8e-3, (4e-3, 0.0)),
                  lambda g: rect_mask(g, 4e-3, 12e-3, (-6e-3, 2e-3))):
        other = cfg.replace(mask=shape(cfg.mask.grid))
        assert schedule_fingerprint(other, DEPTHS) == stack.fingerprint
        images = section(simulate_bucket(other), stack, stack.fingerprint)
        comp = run_computational(other)
        assert np.allclose(images[1].values, comp.values, rtol=1e-9,
                           atol=1e-9 * np.abs(comp.values).max())


def test_zero_bucket_gives_zero_slices(cfg, stack):
    b = simulate_bucket(cfg)
    images = section(CurrentSeries(np.zeros(len(b)), b.dt, b.t0), stack)
    assert all(np.all(im.values == 0) for im in images)


def test_fingerprint_tracks_schedule_and_geometry(cfg):
    fp = schedule_fingerprint(cfg, DEPTHS)
    assert fp == schedule_fingerprint(cfg.replace(seed=99), DEPTHS)      # detector seed only
    changed = [cfg.replace(frames=201), cfg.replace(t0=cfg.t0 + 1.0),
               cfg.replace(scheme=sinusoidal_scheme(cfg.source, 2 * np.pi * 1000, seed=6))]
    for c in changed:
        assert schedule_fingerprint(c, DEPTHS) != fp
    assert schedule_fingerprint(cfg, DEPTHS[:2]) != fp


def test_save_load_round_trip_memory_maps(tmp_path, stack):
    root = stack.save(tmp_path)
    assert (root / "frames.bin").read_bytes()[:9] == b"GSTK0001<"
    manifest = (root / "manifest.txt").read_text()
    assert f"fingerprint {stack.fingerprint}" in manifest
    back = ReferenceStack.load(root, expected=stack.fingerprint)
    assert isinstance(back.frames, np.memmap)
    assert np.array_equal(back.frames, stack.frames)
    assert back.depths == stack.depths and back.grids == stack.grids
    assert back.t0 == stack.t0 and back.dt == stack.dt
    with pytest.raises(FingerprintMismatch):
        ReferenceStack.load(root, expected="0" * 64)


def test_cache_is_reused(tmp_path, cfg, stack):
    first = build_stack(cfg, DEPTHS, cache_dir=tmp_path)
    assert not isinstance(first.frames, np.memmap)
    second = build_stack(cfg, DEPTHS, cache_dir=tmp_path)
    assert isinstance(second.frames, np.memmap)
    assert np.array_equal(second.frames, stack.frames)


def test_build_stack_errors(cfg):
    with pytest.raises(NondeterministicSource):
        build_stack(small_slm_cfg(scheme=ModulationScheme("stochastic-iid")), DEPTHS)
    with pytest.raises(NondeterministicSource):
        build_stack(small_gs_cfg(), DEPTHS)
    with pytest.raises(PreconditionViolation):
        build_stack(cfg.replace(pinhole=DetectorModel(impulse="boxcar", width=2 * cfg.dt)), DEPTHS)
    with pytest.raises(InvalidArgument):
        build_stack(cfg, (10.0, 10.0))
    with pytest.raises(InvalidArgument):
        build_stack(cfg, (-1.0, 10.0))


def test_section_errors(cfg, stack):
    b = simulate_bucket(cfg)
    with pytest.raises(FingerprintMismatch):
        section(b, stack, fingerprint="f" * 64)
    with pytest.raises(MisalignedSeries):
        section(CurrentSeries(b.samples[:-1], b.dt, b.t0), stack)
    with pytest.raises(MisalignedSeries):
        section(CurrentSeries(b.samples, b.dt * 2, b.t0), stack)
    with pytest.raises(MisalignedSeries):
        section(CurrentSeries(b.samples, b.dt, b.t0 + b.dt), stack)


# --- point-spread width ---------------------------------------------------------

def _gauss_image(w, n=64, pitch=1e-3, offset=0.0, center=(2e-3, -1e-3)):
    g = make_grid(n, pitch)
    X, Y = g.mesh()
    v = offset + np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / w**2)
    return GhostImage(g, v, "computational", True)


def test_psf_width_recovers_synthetic_gaussian():
    img = _gauss_image(3e-3, offset=0.2)
    assert psf_width(img) == pytest.approx(3e-3, rel=1e-6)
    assert psf_width(_gauss_image(3e-3), "fwhm") == pytest.approx(3e-3, rel=0.03)
    assert FWHM_PER_RADIUS == pytest.approx(1.6651, rel=1e-4)


def test_psf_width_errors():
    g = make_grid(16, 1e-3)
    with pytest.raises(NoPeak):
        psf_width(GhostImage(g, np.zeros((16, 16)), "slm"))
    with pytest.raises(InvalidArgument):
        psf_width(_gauss_image(3e-3), "moments")


def test_focused_psf_width_is_rho_L_at_set_a():
    img = predicted_image(small_gs_cfg(dc_block=True))
    assert psf_width(img) == pytest.approx(3.1831e-3, rel=0.02)


def test_defocused_psf_width_at_one_coherence_range_set_a():
    # Expected value from the depth-of-focus law rho_L sqrt(2) at Delta L = k0 rho_L^2 = 63.66 m.
    # The exact kernel gives about 23 mm here because Delta L >> L (see README).
    dw = defocus_widths(small_gs_cfg().source, LAMBDA0, 10.0, small_gs_cfg().source_grid,
                        32, multiples=(1.0,))
    assert dw["widths"][0] == pytest.approx(4.501e-3, rel=0.05)


def test_focus_from_widths_refines_between_slices():
    z = np.array([1.0, 2.0, 3.0, 4.0])
    assert focus_from_widths(z, (z - 2.4) ** 2 + 1) == pytest.approx(2.4)
    assert focus_from_widths(z, np.array([1.0, 2.0, 3.0, 4.0])) == 1.0


def test_depth_profile_outputs(tmp_path):
    images = [_gauss_image(w) for w in (4e-3, 3e-3, 4.5e-3)]
    prof = depth_profile(images, [1.0, 1.5, 2.0])
    assert np.allclose(prof.psf_width, [4e-3, 3e-3, 4.5e-3], rtol=1e-6)
    assert np.allclose(prof.angular_width, prof.psf_width / [1.0, 1.5, 2.0])
    assert 1.0 < prof.focus_estimate < 2.0
    text = prof.to_csv(tmp_path / "p.csv").read_text().splitlines()
    assert text[0] == "depth,psf_width,angular_width" and len(text) == 4
    data = json.loads(write_profile_json(prof, tmp_path / "p.json").read_text())
    assert data["focus_estimate"] == prof.focus_estimate
