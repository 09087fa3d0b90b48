"""Semiclassical pinhole and bucket photodetectors.

Currents are in photon-rate units times ``q`` (default 1). The impulse
response has unit area: ``instantaneous`` is the identity filter and
``boxcar`` averages the last ``width/dt`` samples with zero history before
the first sample.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GridMismatch, InvalidArgument, InvalidImpulse, MisalignedSeries
from .grid import ComplexField, GridSpec, RealField, integrate, intensity
from .source import STREAM_DETECTOR, substream


@dataclass(frozen=True)
class DetectorModel:
    eta: float = 1.0
    A1: float | None = None
    impulse: str = "instantaneous"
    width: float = 0.0
    shot_noise: bool = False
    dt: float | None = None
    q: float = 1.0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise InvalidArgument(f"quantum efficiency must be in (0, 1], got {self.eta}")
        if self.A1 is not None and not self.A1 > 0:
            raise InvalidArgument("pinhole area A1 must be positive")
        if self.impulse not in ("instantaneous", "boxcar"):
            raise InvalidImpulse(f"unknown impulse response {self.impulse!r}")
        if self.impulse == "boxcar" and not self.width > 0:
            raise InvalidImpulse("boxcar impulse needs a positive width")
        if self.shot_noise and not (self.dt and self.dt > 0):
            raise InvalidArgument("poisson shot noise needs a bin width dt > 0")

    def taps(self, dt: float) -> int:
        """Number of samples spanned by the impulse response at spacing ``dt``."""
        if self.impulse == "instantaneous":
            return 1
        w = self.width / dt
        if abs(w - round(w)) > 1e-9 * max(1.0, w) or round(w) < 1:
            raise InvalidImpulse(f"boxcar width {self.width:g} s is not a multiple of dt = {dt:g} s")
        return int(round(w))


@dataclass(frozen=True)
class ObjectMask:
    """Intensity transmission |T|^2 sampled on (a window of) the object plane."""
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n, self.grid.n):
            raise GridMismatch(f"mask shape {v.shape} does not match grid n={self.grid.n}")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise InvalidArgument("mask values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def as_field(self) -> RealField:
        return RealField(self.grid, self.values)


def point_mask(g: GridSpec, position=(0.0, 0.0)) -> ObjectMask:
    v = np.zeros((g.n, g.n))
    v[g.index_of(position)] = 1.0
    return ObjectMask(g, v)


def disk_mask(g: GridSpec, radius: float, center=(0.0, 0.0)) -> ObjectMask:
    X, Y = g.mesh()
    return ObjectMask(g, ((X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius**2).astype(float))


def rect_mask(g: GridSpec, width: float, height: float, center=(0.0, 0.0)) -> ObjectMask:
    X, Y = g.mesh()
    inside = (np.abs(X - center[0]) <= width / 2) & (np.abs(Y - center[1]) <= height / 2)
    return ObjectMask(g, inside.astype(float))


def double_slit_mask(g: GridSpec, separation: float, width: float, height: float) -> ObjectMask:
    """Two vertical slits centred at x = +-separation/2."""
    a = rect_mask(g, width, height, (-separation / 2, 0.0)).values
    b = rect_mask(g, width, height, (separation / 2, 0.0)).values
    return ObjectMask(g, np.maximum(a, b))


@dataclass(frozen=True)
class CurrentSeries:
    samples: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        v = np.array(self.samples, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise InvalidArgument("current samples must be a finite 1D array")
        if not self.dt > 0:
            raise InvalidArgument("dt must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "samples", v)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "value"])
            for t, v in zip(self.times, self.samples):
                wr.writerow([repr(float(t)), repr(float(v))])
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> "CurrentSeries":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        t = np.array([float(r["t"]) for r in rows])
        v = np.array([float(r["value"]) for r in rows])
        if t.size < 2:
            raise InvalidArgument("a current series needs at least 2 samples")
        dt = (t[-1] - t[0]) / (t.size - 1)
        if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=0):
            raise MisalignedSeries("CSV samples are not uniformly spaced")
        return cls(v, dt, t[0])


def pinhole_flux(f: ComplexField, position, model: DetectorModel) -> float:
    """A1 |E(position)|^2 at the nearest grid sample."""
    if model.A1 is None:
        raise InvalidArgument("pinhole model needs A1")
    iy, ix = f.grid.index_of(position)
    return float(model.A1 * abs(f.values[iy, ix]) ** 2)


def bucket_flux(f: ComplexField, mask: ObjectMask) -> float:
    """Integral of |E|^2 |T|^2 over the mask window."""
    return integrate(intensity(f), mask.as_field())


class DetectorChannel:
    """Streaming photocurrent for one detector; state carries the boxcar history.

    Fluxes arrive as arrays ``(batch, ...)`` in time order. Shot noise draws
    counts with mean ``eta * flux * dt`` from a substream keyed by the global
    sample index.
    """

    def __init__(self, model: DetectorModel, dt: float, seed: int = 0, channel: int = 0):
        self.model = model
        self.dt = dt
        self.seed = seed
        self.channel = channel
        self.taps = model.taps(dt)
        self.history = None
        if model.shot_noise and abs(model.dt - dt) > 1e-12 * dt:
            raise InvalidArgument("shot-noise bin width must equal the sampling interval")

    def process(self, index: np.ndarray, flux: np.ndarray) -> np.ndarray:
        m = self.model
        flux = np.asarray(flux, dtype=float)
        if m.shot_noise:
            rate = np.empty_like(flux)
            for j, k in enumerate(np.asarray(index)):
                rng = substream(self.seed, STREAM_DETECTOR, self.channel, int(k))
                rate[j] = rng.poisson(m.eta * flux[j] * self.dt) / self.dt
            x = m.q * rate
        else:
            x = m.q * m.eta * flux
        if self.taps == 1:
            return x
        if self.history is None:
            self.history = np.zeros((self.taps - 1,) + x.shape[1:])
        ext = np.concatenate([self.history, x], axis=0)
        c = np.cumsum(ext, axis=0)
        c = np.concatenate([np.zeros((1,) + x.shape[1:]), c], axis=0)
        out = (c[self.taps:] - c[:-self.taps]) / self.taps
        self.history = ext[-(self.taps - 1):]
        return out


def to_current(flux, model: DetectorModel, dt: float | None = None, t0: float = 0.0,
               seed: int = 0, channel: int = 0) -> CurrentSeries:
    """Photocurrent from a uniformly sampled flux series (photons/s)."""
    if isinstance(flux, CurrentSeries):
        dt, t0, flux = flux.dt, flux.t0, flux.samples
    if dt is None:
        raise InvalidArgument("sampling interval dt is required")
    flux = np.asarray(flux, dtype=float)
    ch = DetectorChannel(model, dt, seed, channel)
    return CurrentSeries(ch.process(np.arange(flux.size), flux), dt, t0)
