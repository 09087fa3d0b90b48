"""Ghost-image formation for the pseudothermal, SLM and computational set-ups.

Every scan pixel acts as a pinhole on every frame (CCD-style scanning), so all
pixels share one frame set. Images are accumulated as per-block sums of
``i1``, ``i2`` and ``i1*i2``; the DC-blocked estimate is
``<i1 i2> - <i1><i2>`` and standard errors come from a block jackknife.
"""
from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .coherence import (CrossMoments, defocused_corr, far_field_factor_gs,
                        far_field_factor_slm, gs_farfield_corr, jackknife_se,
                        slm_farfield_corr, FAR_FIELD_LIMIT)
from .detection import CurrentSeries, DetectorChannel, DetectorModel, ObjectMask
from .errors import (FarFieldViolation, GridMismatch, InvalidArgument,
                     MisalignedSeries, NondeterministicSource, PreconditionViolation)
from .grid import GridSpec, RealField, export_csv, export_pgm
from .propagation import BlockFresnel, PropagationPlan, SPEED_OF_LIGHT, fresnel_array
from .source import (GaussianSchellParams, ModulationScheme, SlmParams, beam_weight,
                     check_slm_grid, gs_frames, pixel_labels, slm_amplitude, slm_phasors)

MIN_FRAMES = 100


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Everything needed to run one imaging configuration.

    ``scan_n`` selects a centred ``scan_n x scan_n`` window of the arm-1 output
    grid (the full grid when ``None``). ``pinhole_offset`` places the pinhole
    plane at ``L + pinhole_offset`` (pseudothermal defocus). ``mask.grid``
    must be an aligned window of the arm-2 output grid.
    """
    source: GaussianSchellParams | SlmParams
    lambda0: float
    L: float
    source_grid: GridSpec
    mask: ObjectMask
    frames: int
    dt: float
    scheme: ModulationScheme | None = None
    pinhole: DetectorModel = field(default_factory=DetectorModel)
    bucket: DetectorModel = field(default_factory=DetectorModel)
    dc_block: bool = False
    seed: int = 0
    scan_n: int | None = None
    temporal: str = "independent"
    pinhole_offset: float = 0.0
    t0: float = 0.0
    blocks: int = 20
    batch: int = 32
    name: str = "scenario"

    def __post_init__(self):
        if self.frames < MIN_FRAMES:
            raise PreconditionViolation(f"frames = {self.frames} < {MIN_FRAMES}")
        if not self.dt > 0:
            raise PreconditionViolation("dt must be positive")
        if not self.L > 0 or not self.L + self.pinhole_offset > 0:
            raise PreconditionViolation("propagation distances must be positive")
        if isinstance(self.source, SlmParams):
            if self.scheme is None:
                raise PreconditionViolation("SLM source needs a modulation scheme")
            self.scheme.check(self.source)
        ff = self.far_field_factor
        if ff > FAR_FIELD_LIMIT:
            raise FarFieldViolation(f"far-field factor = {ff:.4g} exceeds {FAR_FIELD_LIMIT}")
        self.arm2_grid.window_slices(self.mask.grid)
        self.arm1_grid.window_slices(self.scan_grid)

    @property
    def kind(self) -> str:
        return "gs" if isinstance(self.source, GaussianSchellParams) else "slm"

    @property
    def far_field_factor(self) -> float:
        if self.kind == "gs":
            return far_field_factor_gs(self.source, self.lambda0, self.L)
        s = self.source
        if s.beam_radius is None:
            return far_field_factor_slm(s, self.lambda0, self.L)
        # Gaussian-illuminated SLM: pixels play the role of the coherence cell
        return 2 * np.pi / self.lambda0 * s.beam_radius * s.d / (2 * self.L)

    @property
    def arm2_grid(self) -> GridSpec:
        return PropagationPlan(self.lambda0, self.L, self.source_grid).output_grid

    @property
    def arm1_grid(self) -> GridSpec:
        return PropagationPlan(self.lambda0, self.L + self.pinhole_offset, self.source_grid).output_grid

    @property
    def scan_grid(self) -> GridSpec:
        g = self.arm1_grid
        return g if self.scan_n is None else g.crop(self.scan_n)[0]

    @property
    def A1(self) -> float:
        return self.pinhole.A1 if self.pinhole.A1 is not None else self.scan_grid.pitch**2

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.frames)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


# --- images -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GhostImage:
    grid: GridSpec
    values: np.ndarray
    mode: str
    dc_block: bool = False
    sigma: np.ndarray | None = None
    background_map: np.ndarray | None = None
    frames: int = 0
    loo: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n, self.grid.n) or not np.all(np.isfinite(v)):
            raise InvalidArgument("image values must be finite and match the grid")
        object.__setattr__(self, "values", v)

    @property
    def peak_index(self) -> tuple[int, int]:
        return np.unravel_index(int(np.argmax(self.values)), self.values.shape)

    @property
    def background_estimate(self) -> float:
        """Product of mean currents at the peak pixel (DC block off); otherwise the median pixel."""
        if self.background_map is not None and not self.dc_block:
            return float(self.background_map[self.peak_index])
        return float(np.median(self.values))

    def region_mean(self, region: np.ndarray) -> tuple[float, float]:
        """Mean over a boolean pixel region and its jackknife standard error."""
        region = np.asarray(region, dtype=bool)
        m = float(self.values[region].mean())
        if self.loo is None:
            return m, float("nan")
        return m, float(jackknife_se(self.loo[:, region].mean(axis=1)))

    def fwhm(self) -> tuple[float, float]:
        iy, ix = self.peak_index
        base = self.background_estimate
        return (_fwhm_1d(self.values[iy, :] - base, ix) * self.grid.pitch,
                _fwhm_1d(self.values[:, ix] - base, iy) * self.grid.pitch)

    def metrics(self) -> dict:
        peak = float(self.values.max())
        bg = self.background_estimate
        fx, fy = self.fwhm()
        contrast = (peak - bg) / (peak + bg) if peak + bg != 0 else float("nan")
        return {"peak": peak, "background": bg, "fwhm_x": fx, "fwhm_y": fy, "contrast": contrast}

    def to_field(self) -> RealField:
        return RealField(self.grid, self.values)

    def export(self, stem: str | Path) -> dict:
        """Write ``stem.pgm`` (+ scale sidecar), ``stem.csv`` and ``stem.json``; return the paths."""
        stem = Path(stem)
        pgm, side = export_pgm(self.to_field(), stem.with_suffix(".pgm"))
        csv_path = export_csv(self.to_field(), stem.with_suffix(".csv"))
        js = stem.with_suffix(".json")
        js.write_text(json.dumps({"mode": self.mode, "dc_block": self.dc_block,
                                  "frames": self.frames, "metrics": self.metrics()}, indent=2))
        return {"pgm": str(pgm), "scale": str(side), "csv": str(csv_path), "json": str(js)}


def _fwhm_1d(profile: np.ndarray, i0: int) -> float:
    """Full width at half maximum (in samples) around index ``i0`` by linear interpolation."""
    half = profile[i0] / 2
    if not half > 0:
        return float("nan")

    def crossing(step):
        i = i0
        while 0 <= i + step < profile.size:
            if profile[i + step] <= half:
                a, b = profile[i], profile[i + step]
                return i + step * (a - half) / (a - b)
            i += step
        return float("nan")

    return float(crossing(1) - crossing(-1))


def _image_from(acc: CrossMoments, grid: GridSpec, mode: str, dc_block: bool) -> GhostImage:
    est, se = acc.estimate(centered=dc_block)
    m1, m2 = acc.means()
    return GhostImage(grid, est, mode, dc_block, se, m1 * m2, acc.n, acc.leave_one_out(dc_block))


def correlate(i1: CurrentSeries, i2: CurrentSeries, dc_block: bool = False) -> float:
    """Time-averaged product of two aligned currents, optionally mean-removed."""
    if len(i1) != len(i2) or abs(i1.dt - i2.dt) > 1e-12 * i1.dt or abs(i1.t0 - i2.t0) > i1.dt / 2:
        raise MisalignedSeries("current series differ in length, spacing or start time")
    a, b = i1.samples, i2.samples
    if dc_block:
        return float(np.mean((a - a.mean()) * (b - b.mean())))
    return float(np.mean(a * b))


# --- frame pipelines --------------------------------------------------------

def _bucket_weights(cfg: ScenarioConfig) -> np.ndarray:
    return cfg.mask.values * cfg.mask.grid.pitch**2


def _gs_intensities(cfg: ScenarioConfig) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Yield ``(indices, I1[scan], I2[mask window])`` for Gaussian-Schell frames."""
    g = cfg.source_grid
    r1, c1 = cfg.arm1_grid.window_slices(cfg.scan_grid)
    r2, c2 = cfg.arm2_grid.window_slices(cfg.mask.grid)
    for idx, E in gs_frames(cfg.source, g, cfg.seed, cfg.frames, dt=cfg.dt,
                            temporal=cfg.temporal, batch=cfg.batch):
        E = E / np.sqrt(2)
        F2 = fresnel_array(E, g, cfg.lambda0, cfg.L)
        F1 = F2 if cfg.pinhole_offset == 0 else fresnel_array(E, g, cfg.lambda0, cfg.L + cfg.pinhole_offset)
        w1, w2 = F1[:, r1, c1], F2[:, r2, c2]
        yield idx, w1.real**2 + w1.imag**2, w2.real**2 + w2.imag**2


class SlmArm:
    """Factorised propagation of SLM frames onto one output window."""

    def __init__(self, cfg: ScenarioConfig, distance: float, window: GridSpec):
        s = cfg.source
        g = cfg.source_grid
        check_slm_grid(s, g)
        self.cfg = cfg
        self.bf = BlockFresnel(g, pixel_labels(s, g, "x"), s.npix, cfg.lambda0, distance,
                               window=window, weight=beam_weight(s, g, "x"))
        self.amp = slm_amplitude(s) / np.sqrt(2)

    def intensity(self, times: np.ndarray) -> np.ndarray:
        ph = slm_phasors(self.cfg.source, self.cfg.scheme, times)
        F = self.bf.apply(self.amp * ph)
        return F.real**2 + F.imag**2


def _slm_intensities(cfg: ScenarioConfig):
    arm1 = SlmArm(cfg, cfg.L + cfg.pinhole_offset, cfg.scan_grid)
    arm2 = SlmArm(cfg, cfg.L, cfg.mask.grid)
    times = cfg.times
    for b0 in range(0, cfg.frames, cfg.batch):
        idx = np.arange(b0, min(b0 + cfg.batch, cfg.frames))
        yield idx, arm1.intensity(times[idx]), arm2.intensity(times[idx])


def _accumulate(cfg: ScenarioConfig, stream, mode: str) -> GhostImage:
    scan = cfg.scan_grid
    acc = CrossMoments((scan.n, scan.n), cfg.frames, cfg.blocks)
    ch1 = DetectorChannel(cfg.pinhole, cfg.dt, cfg.seed, 1)
    ch2 = DetectorChannel(cfg.bucket, cfg.dt, cfg.seed, 2)
    wb = _bucket_weights(cfg)
    A1 = cfg.A1
    for idx, I1, I2 in stream:
        i1 = ch1.process(idx, A1 * I1)
        i2 = ch2.process(idx, np.tensordot(I2, wb, axes=([1, 2], [0, 1])))
        acc.add(idx, i1, i2)
    return _image_from(acc, scan, mode, cfg.dc_block)


def run_pseudothermal(cfg: ScenarioConfig) -> GhostImage:
    """Two-detector ghost image with a Gaussian-Schell source."""
    if cfg.kind != "gs":
        raise PreconditionViolation("run_pseudothermal needs a Gaussian-Schell source")
    return _accumulate(cfg, _gs_intensities(cfg), "pseudothermal")


def run_slm(cfg: ScenarioConfig) -> GhostImage:
    """Two-detector ghost image with an SLM source sampled at t_k = t0 + k dt."""
    if cfg.kind != "slm":
        raise PreconditionViolation("run_slm needs an SLM source")
    return _accumulate(cfg, _slm_intensities(cfg), "slm")


def simulate_bucket(cfg: ScenarioConfig) -> CurrentSeries:
    """Physical bucket current for an SLM scenario (arm 2 only)."""
    if cfg.kind != "slm":
        raise PreconditionViolation("bucket simulation needs an SLM source")
    arm2 = SlmArm(cfg, cfg.L, cfg.mask.grid)
    ch2 = DetectorChannel(cfg.bucket, cfg.dt, cfg.seed, 2)
    wb = _bucket_weights(cfg)
    times = cfg.times
    out = np.empty(cfg.frames)
    for b0 in range(0, cfg.frames, cfg.batch):
        idx = np.arange(b0, min(b0 + cfg.batch, cfg.frames))
        I2 = arm2.intensity(times[idx])
        out[idx] = ch2.process(idx, np.tensordot(I2, wb, axes=([1, 2], [0, 1])))
    return CurrentSeries(out, cfg.dt, cfg.t0 + cfg.L / SPEED_OF_LIGHT)


class ReferenceSeries:
    """Computed arm-1 intensities for a deterministic SLM schedule, generated lazily.

    Frames are produced in the same batches as :func:`run_slm`, so they are
    bit-identical to the physical arm-1 intensities of that run.
    """

    def __init__(self, cfg: ScenarioConfig, times=None, distance: float | None = None):
        if cfg.kind != "slm" or not cfg.scheme.deterministic:
            raise NondeterministicSource("computed references need deterministic (sinusoidal) modulation")
        self.cfg = cfg
        self.distance = cfg.L + cfg.pinhole_offset if distance is None else distance
        self.grid = cfg.scan_grid if distance is None else \
            PropagationPlan(cfg.lambda0, distance, cfg.source_grid).output_grid.crop(cfg.scan_grid.n)[0]
        self.times = cfg.times if times is None else np.asarray(times, dtype=float)
        self._arm = SlmArm(cfg, self.distance, self.grid)
        self._mean = None

    def __len__(self) -> int:
        return self.times.size

    @property
    def retardation(self) -> float:
        return self.distance / SPEED_OF_LIGHT

    def batches(self, size: int | None = None):
        size = size or self.cfg.batch
        for b0 in range(0, len(self), size):
            idx = np.arange(b0, min(b0 + size, len(self)))
            yield idx, self._arm.intensity(self.times[idx])

    def __getitem__(self, k: int) -> RealField:
        b0 = (k // self.cfg.batch) * self.cfg.batch
        idx = np.arange(b0, min(b0 + self.cfg.batch, len(self)))
        I = self._arm.intensity(self.times[idx])
        return RealField(self.grid, I[k - b0], self.times[k] + self.retardation)

    @property
    def mean(self) -> RealField:
        if self._mean is None:
            s = np.zeros((self.grid.n, self.grid.n))
            for _, I in self.batches():
                s += I.sum(axis=0)
            self._mean = RealField(self.grid, s / len(self))
        return self._mean

    def delta_batches(self, size: int | None = None):
        m = self.mean.values
        for idx, I in self.batches(size):
            yield idx, I - m


def compute_reference(cfg: ScenarioConfig, times=None) -> ReferenceSeries:
    """Computed reference intensities and their time mean for a deterministic schedule."""
    return ReferenceSeries(cfg, times)


def run_computational(cfg: ScenarioConfig, bucket: CurrentSeries | None = None) -> GhostImage:
    """Single-pixel ghost image: bucket current against computed reference fluctuations.

    <dI~1 i2> is formed as <I~1 i2> - <I~1><i2> through the same accumulator
    as a DC-blocked :func:`run_slm`, so both paths share their arithmetic.
    The reference gains (eta1, A1, impulse) are applied computationally
    without shot noise.
    """
    ref = ReferenceSeries(cfg)
    if bucket is None:
        bucket = simulate_bucket(cfg)
    if len(bucket) != cfg.frames or abs(bucket.dt - cfg.dt) > 1e-12 * cfg.dt:
        raise MisalignedSeries("bucket series does not match the reference schedule")
    scan = cfg.scan_grid
    acc = CrossMoments((scan.n, scan.n), cfg.frames, cfg.blocks)
    ch1 = DetectorChannel(dataclasses.replace(cfg.pinhole, shot_noise=False, dt=None), cfg.dt, cfg.seed, 1)
    A1 = cfg.A1
    for idx, I1 in ref.batches():
        acc.add(idx, ch1.process(idx, A1 * I1), bucket.samples[idx])
    return _image_from(acc, scan, "computational", True)


# --- analytic image ---------------------------------------------------------

def analytic_kernels(cfg: ScenarioConfig):
    """``(K at the pinhole plane vs object plane, K at the object plane, K1 diagonal kernel)``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if cfg.kind == "gs":
            k2 = gs_farfield_corr(cfg.source, cfg.lambda0, cfg.L)
            kd = gs_farfield_corr(cfg.source, cfg.lambda0, cfg.L + cfg.pinhole_offset)
        else:
            if cfg.source.beam_radius is not None:
                raise InvalidArgument("no closed-form kernel for a Gaussian-illuminated SLM")
            k2 = slm_farfield_corr(cfg.source, cfg.lambda0, cfg.L)
            kd = slm_farfield_corr(cfg.source, cfg.lambda0, cfg.L + cfg.pinhole_offset)
    k12 = defocused_corr(k2, cfg.lambda0, cfg.pinhole_offset)
    return k12, k2, kd


def predicted_image(cfg: ScenarioConfig, mode: str = "analytic") -> GhostImage:
    """Closed-form C(rho1): background (unless DC-blocked) plus A1 int |K(rho1, r)|^2 |T(r)|^2 dr.

    Assumes detector responses much shorter than T0 (|R| = 1 at zero lag).
    """
    k12, k2, kd = analytic_kernels(cfg)
    scan, mg = cfg.scan_grid, cfg.mask.grid
    gain = cfg.pinhole.q * cfg.pinhole.eta * cfg.bucket.q * cfg.bucket.eta * cfg.A1
    T = cfg.mask.values * mg.pitch**2
    Fx = np.abs(k12.axis_matrix(scan.x, mg.x)) ** 2
    Fy = np.abs(k12.axis_matrix(scan.y, mg.y)) ** 2
    values = gain * abs(k12.pref) ** 2 * (Fy @ T @ Fx.T)
    d1 = np.real(kd.pref * np.outer(kd.axis(scan.y, scan.y), kd.axis(scan.x, scan.x)))
    d2 = np.real(k2.pref * np.outer(k2.axis(mg.y, mg.y), k2.axis(mg.x, mg.x)))
    background = gain * d1 * float(np.sum(d2 * T))
    if not cfg.dc_block:
        values = values + background
    return GhostImage(scan, values, mode, cfg.dc_block, None, background, 0)
