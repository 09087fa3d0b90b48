"""Field sources at z = 0: Gaussian-Schell pseudothermal light and a pixelated SLM.

All randomness is drawn from named substreams of one integer seed, keyed by
frame index (or time block), so any frame can be regenerated on its own.
"""
from __future__ import annotations

import csv
import functools
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import scipy.fft as sfft
from scipy.special import roots_legendre

from .errors import (CoherenceRatioWarning, InvalidArgument, InvalidScheme,
                     SamplingViolation)
from .grid import ComplexField, GridSpec

# substream identifiers
STREAM_SOURCE = 0
STREAM_DETECTOR = 1
STREAM_SCHEDULE = 2
STREAM_SLM_BLOCK = 3

# first zero of J0
PHI_DEFAULT = 2.404825557695773


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``; identical inputs give identical draws."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


# --- Gaussian-Schell source -------------------------------------------------

@dataclass(frozen=True)
class GaussianSchellParams:
    P: float
    a0: float
    rho0: float
    T0: float = 1e-3

    def __post_init__(self):
        for name in ("P", "a0", "rho0", "T0"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidArgument(f"{name} must be positive, got {v}")
        if self.rho0 > self.a0 / 5 * (1 + 1e-12):
            raise InvalidArgument(f"rho0 = {self.rho0:g} m must be <= a0/5 = {self.a0 / 5:g} m")
        if self.rho0 > self.a0 / 10 * (1 + 1e-12):
            warnings.warn(f"a0/rho0 = {self.a0 / self.rho0:.3g} < 10; closed forms assume rho0 << a0",
                          CoherenceRatioWarning, stacklevel=3)


def temporal_R(tau, T0: float):
    """Field phasor correlation e^{-|tau|/T0}."""
    if not T0 > 0:
        raise InvalidArgument(f"T0 must be positive, got {T0}")
    return np.exp(-np.abs(tau) / T0)


def _check_gs_grid(p: GaussianSchellParams, g: GridSpec):
    if g.extent < 4 * p.a0 * (1 - 1e-12):
        raise SamplingViolation(f"grid extent {g.extent:g} m < 4*a0 = {4 * p.a0:g} m")
    if g.pitch > p.rho0 / 3 * (1 + 1e-12):
        raise SamplingViolation(f"grid pitch {g.pitch:g} m > rho0/3 = {p.rho0 / 3:g} m")


@functools.lru_cache(maxsize=8)
def _speckle_filter(n: int, pitch: float, rho0: float) -> np.ndarray:
    # amplitude filter with |H|^2 ~ e^{-rho0^2 kappa^2 / 2}, normalised so the
    # ortho inverse transform of unit white noise has unit variance
    kappa = 2 * np.pi * sfft.fftfreq(n, d=pitch)
    k2 = kappa[:, None] ** 2 + kappa[None, :] ** 2
    s = np.exp(-0.5 * rho0**2 * k2)
    h = np.sqrt(s * (n * n) / s.sum())
    h.setflags(write=False)
    return h


@functools.lru_cache(maxsize=8)
def _gs_envelope(p: GaussianSchellParams, g: GridSpec) -> np.ndarray:
    env = np.sqrt(2 * p.P / (np.pi * p.a0**2)) * np.exp(-g.r2() / p.a0**2)
    env.setflags(write=False)
    return env


def _white(seed: int, k: int, n: int) -> np.ndarray:
    z = substream(seed, STREAM_SOURCE, k).standard_normal((2, n, n))
    return (z[0] + 1j * z[1]) * np.sqrt(0.5)


def _gs_from_white(p: GaussianSchellParams, g: GridSpec, w: np.ndarray) -> np.ndarray:
    speckle = sfft.ifft2(w * _speckle_filter(g.n, g.pitch, p.rho0), axes=(-2, -1), norm="ortho")
    return _gs_envelope(p, g) * speckle


def gs_frame(p: GaussianSchellParams, g: GridSpec, frame_index: int, seed: int,
             dt: float = 0.0) -> ComplexField:
    """One independent Gaussian-Schell frame: envelope times unit-variance speckle.

    The speckle is circular complex Gaussian with correlation
    e^{-|drho|^2 / 2 rho0^2}, synthesised from white noise drawn directly in
    the spatial-frequency domain.
    """
    _check_gs_grid(p, g)
    v = _gs_from_white(p, g, _white(seed, frame_index, g.n))
    return ComplexField(g, v, frame_index * dt)


def gs_frames(p: GaussianSchellParams, g: GridSpec, seed: int, count: int, *,
              dt: float = 0.0, temporal: str = "independent", start: int = 0,
              batch: int = 32) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Stream frames as ``(frame_indices, values[batch, n, n])``.

    ``temporal="independent"`` reproduces :func:`gs_frame` frame by frame.
    ``temporal="exponential"`` evolves the white noise as an AR(1) process
    with coefficient e^{-dt/T0}, so the field phasor correlation is
    e^{-|t2 - t1|/T0}; it always starts from frame 0 of the seed.
    """
    _check_gs_grid(p, g)
    if temporal not in ("independent", "exponential"):
        raise InvalidArgument(f"unknown temporal mode {temporal!r}")
    if temporal == "exponential":
        if not dt > 0:
            raise InvalidArgument("exponential temporal mode needs dt > 0")
        if start:
            raise InvalidArgument("exponential temporal mode always starts at frame 0")
        r = np.exp(-dt / p.T0)
        state = None
    for b0 in range(start, start + count, batch):
        idx = np.arange(b0, min(b0 + batch, start + count))
        w = np.empty((idx.size, g.n, g.n), dtype=complex)
        for j, k in enumerate(idx):
            z = _white(seed, int(k), g.n)
            if temporal == "exponential":
                state = z if state is None else r * state + np.sqrt(1 - r * r) * z
                z = state
            w[j] = z
        yield idx, _gs_from_white(p, g, w)


# --- SLM source -------------------------------------------------------------

@dataclass(frozen=True)
class SlmParams:
    """Square SLM of (2M+1)^2 pixels of width ``d`` tiling a D x D pupil.

    ``beam_radius`` optionally replaces the uniform illumination by a Gaussian
    beam of intensity radius ``beam_radius`` (same total power before pupil
    truncation).
    """
    d: float
    M: int
    P: float
    T0: float = 1e-3
    lambda0: float = 1e-6
    beam_radius: float | None = None

    def __post_init__(self):
        if not (self.d > 0 and np.isfinite(self.d)):
            raise InvalidArgument(f"pixel width d must be positive, got {self.d}")
        if int(self.M) != self.M or self.M < 1:
            raise InvalidArgument(f"M must be an integer >= 1, got {self.M}")
        object.__setattr__(self, "M", int(self.M))
        for name in ("P", "T0", "lambda0"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.beam_radius is not None and not self.beam_radius > 0:
            raise InvalidArgument("beam_radius must be positive when given")

    @property
    def npix(self) -> int:
        return 2 * self.M + 1

    @property
    def D(self) -> float:
        return self.npix * self.d


def default_offsets(M: int, Omega0: float, assignment: str = "random", seed: int = 0) -> np.ndarray:
    """Distinct per-pixel frequency offsets bounded by Omega0/10.

    ``random`` draws offsets uniformly from (0, Omega0/10] with a seeded
    generator; they are incommensurate, so no group of pixels re-phases
    periodically. ``linear`` gives row-major pixel ``j`` the offset
    delta*(j+1) with delta = Omega0/(10 N); ``permuted`` shuffles those
    linear offsets over the pixels.
    """
    npix = (2 * M + 1) ** 2
    top = Omega0 / 10
    if assignment == "random":
        rng = substream(seed, STREAM_SCHEDULE)
        while True:
            dw = top * (1.0 - rng.random(npix))
            if np.unique(dw).size == npix:
                break
    elif assignment in ("linear", "permuted"):
        j = np.arange(npix)
        if assignment == "permuted":
            j = substream(seed, STREAM_SCHEDULE).permutation(npix)
        dw = top / npix * (j + 1)
    else:
        raise InvalidArgument(f"unknown offset assignment {assignment!r}")
    return dw.reshape(2 * M + 1, 2 * M + 1)


@dataclass(frozen=True, eq=False)
class ModulationScheme:
    """Per-pixel phase drive.

    ``sinusoidal``: phi_nm(t) = Phi cos((Omega0 + DeltaOmega_nm) t).
    ``stochastic-iid``: uniform phases on ``levels`` levels, redrawn at
    Poisson events of mean spacing T0 (taken from the SLM parameters).
    """
    variant: str
    Phi: float = PHI_DEFAULT
    Omega0: float = 0.0
    DeltaOmega: np.ndarray | None = None
    seed: int = 0
    levels: int = 256

    def __post_init__(self):
        if self.variant not in ("sinusoidal", "stochastic-iid"):
            raise InvalidScheme(f"unknown modulation variant {self.variant!r}")
        if self.variant == "sinusoidal":
            if self.DeltaOmega is None:
                raise InvalidScheme("sinusoidal modulation needs DeltaOmega offsets")
            dw = np.array(self.DeltaOmega, dtype=float)
            dw.setflags(write=False)
            object.__setattr__(self, "DeltaOmega", dw)
            if not self.Omega0 > 0:
                raise InvalidScheme(f"Omega0 must be positive, got {self.Omega0}")
            if np.any(self.Omega0 + dw <= 0):
                raise InvalidScheme("all pixel rates Omega0 + DeltaOmega must be positive")
            if np.any(np.abs(dw) > self.Omega0 / 10 * (1 + 1e-12)):
                raise InvalidScheme("|DeltaOmega| must not exceed Omega0/10")
            if np.unique(dw).size != dw.size:
                raise InvalidScheme("DeltaOmega offsets must be pairwise distinct")

    @property
    def deterministic(self) -> bool:
        return self.variant == "sinusoidal"

    def check(self, s: SlmParams):
        if self.variant == "sinusoidal" and self.DeltaOmega.shape != (s.npix, s.npix):
            raise InvalidScheme(f"DeltaOmega shape {self.DeltaOmega.shape} does not match "
                                f"{s.npix}x{s.npix} pixels")

    def fingerprint_bytes(self) -> bytes:
        parts = [self.variant, repr(float(self.Phi)), repr(float(self.Omega0)),
                 str(int(self.seed)), str(int(self.levels))]
        head = "|".join(parts).encode()
        if self.DeltaOmega is not None:
            head += np.ascontiguousarray(self.DeltaOmega, dtype="<f8").tobytes()
        return head


def sinusoidal_scheme(s: SlmParams, Omega0: float, Phi: float = PHI_DEFAULT,
                      assignment: str = "random", seed: int = 0) -> ModulationScheme:
    return ModulationScheme("sinusoidal", Phi, Omega0,
                            default_offsets(s.M, Omega0, assignment, seed), seed)


# stochastic phases: Poisson events per pixel inside fixed time blocks
_BLOCK_T0 = 8.0


@functools.lru_cache(maxsize=64)
def _event_block(seed: int, npix: int, levels: int, T0: float, b: int):
    rng = substream(seed, STREAM_SLM_BLOCK, b + 1)
    span = _BLOCK_T0 * T0
    counts = rng.poisson(_BLOCK_T0, size=npix * npix)
    kmax = max(int(counts.max()), 1)
    times = rng.uniform(b * span, (b + 1) * span, size=(npix * npix, kmax))
    times[np.arange(kmax)[None, :] >= counts[:, None]] = np.inf
    times.sort(axis=1)
    phases = 2 * np.pi * rng.integers(0, levels, size=(npix * npix, kmax)) / levels
    return times, phases


def _initial_phases(seed: int, npix: int, levels: int) -> np.ndarray:
    rng = substream(seed, STREAM_SLM_BLOCK, 0)
    return 2 * np.pi * rng.integers(0, levels, size=npix * npix) / levels


def _stochastic_phases(s: SlmParams, m: ModulationScheme, t: float) -> np.ndarray:
    npix = s.npix
    span = _BLOCK_T0 * s.T0
    b = int(np.floor(t / span))
    out = np.full(npix * npix, np.nan)
    todo = np.arange(npix * npix)
    bound = t
    while todo.size and b >= 0:
        times, phases = _event_block(m.seed, npix, m.levels, s.T0, b)
        # padding slots hold +inf and must never count as events
        last = np.sum(np.isfinite(times[todo]) & (times[todo] <= bound), axis=1) - 1
        hit = last >= 0
        out[todo[hit]] = phases[todo[hit], last[hit]]
        todo = todo[~hit]
        b -= 1
        bound = np.inf
    if todo.size:
        out[todo] = _initial_phases(m.seed, npix, m.levels)[todo]
    return out.reshape(npix, npix)


def slm_phases(s: SlmParams, m: ModulationScheme, t: float) -> np.ndarray:
    """Pixel phases ``phases[row, col]`` (rows along y) at time ``t``."""
    m.check(s)
    if m.variant == "sinusoidal":
        return m.Phi * np.cos((m.Omega0 + m.DeltaOmega) * t)
    if t < 0:
        raise InvalidArgument("stochastic phase process is defined for t >= 0")
    return _stochastic_phases(s, m, float(t))


def slm_phasors(s: SlmParams, m: ModulationScheme, times) -> np.ndarray:
    """``e^{i phi}`` for a sequence of times, shaped ``(len(times), 2M+1, 2M+1)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    m.check(s)
    if m.variant == "sinusoidal":
        ph = m.Phi * np.cos((m.Omega0 + m.DeltaOmega)[None] * times[:, None, None])
    else:
        ph = np.stack([slm_phases(s, m, t) for t in times])
    return np.exp(1j * ph)


def pixel_labels(s: SlmParams, g: GridSpec, axis: str = "x") -> np.ndarray:
    """Pixel column (x) or row (y) index 0..2M for each grid sample, -1 outside the pupil.

    Pixel ``j`` covers the half-open interval [(j - M - 1/2) d, (j - M + 1/2) d).
    """
    u = g.x if axis == "x" else g.y
    j = np.floor(u / s.d + 0.5 + 1e-9).astype(int) + s.M
    j[(j < 0) | (j > 2 * s.M)] = -1
    return j


def beam_weight(s: SlmParams, g: GridSpec, axis: str = "x") -> np.ndarray:
    """Per-axis amplitude profile; the 2D amplitude is ``w(x) * w(y) * amplitude(s)``."""
    u = g.x if axis == "x" else g.y
    if s.beam_radius is None:
        return np.ones(g.n)
    return np.exp(-u**2 / s.beam_radius**2)


def slm_amplitude(s: SlmParams) -> float:
    """Peak field amplitude in sqrt(photons/(m^2 s)) before the arm split."""
    if s.beam_radius is None:
        return np.sqrt(s.P / s.D**2)
    return np.sqrt(2 * s.P / (np.pi * s.beam_radius**2))


def check_slm_grid(s: SlmParams, g: GridSpec):
    if g.extent < s.D * (1 - 1e-12):
        raise SamplingViolation(f"grid extent {g.extent:g} m < pupil D = {s.D:g} m")
    if g.pitch > s.d / 4 * (1 + 1e-12):
        raise SamplingViolation(f"grid pitch {g.pitch:g} m > d/4 = {s.d / 4:g} m")


def slm_field(s: SlmParams, phases: np.ndarray, g: GridSpec, t: float = 0.0) -> ComplexField:
    """Piecewise-constant SLM output field with total power P (uniform illumination)."""
    check_slm_grid(s, g)
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (s.npix, s.npix):
        raise InvalidArgument(f"phases shape {phases.shape} != ({s.npix}, {s.npix})")
    lx, ly = pixel_labels(s, g, "x"), pixel_labels(s, g, "y")
    inside = (ly[:, None] >= 0) & (lx[None, :] >= 0)
    ph = np.exp(1j * phases)[np.clip(ly, 0, None)[:, None], np.clip(lx, 0, None)[None, :]]
    amp = slm_amplitude(s) * beam_weight(s, g, "y")[:, None] * beam_weight(s, g, "x")[None, :]
    return ComplexField(g, np.where(inside, amp * ph, 0.0), t)


@functools.lru_cache(maxsize=4)
def _gauss_legendre(nodes: int):
    return roots_legendre(nodes)


def phasor_time_average(Phi: float, Omega: float, Ta: float, nodes: int = 256) -> complex:
    """Time average of e^{i Phi cos(Omega t)} over [0, Ta] by Gauss-Legendre quadrature.

    The interval is split into whole periods plus a remainder, each integrated
    with ``nodes`` points, so long windows stay accurate.
    """
    period = 2 * np.pi / Omega
    x, w = _gauss_legendre(nodes)
    whole = int(np.floor(Ta / period))

    def seg(a, b):
        t = 0.5 * (b - a) * x + 0.5 * (a + b)
        return 0.5 * (b - a) * np.sum(w * np.exp(1j * Phi * np.cos(Omega * t)))

    total = whole * seg(0.0, period) + (seg(whole * period, Ta) if Ta > whole * period else 0.0)
    return complex(total / Ta)


# --- schedule persistence ---------------------------------------------------

def export_schedule(m: ModulationScheme, path: str | Path) -> Path:
    """CSV of (n, m, delta_omega) with a commented header carrying Phi and Omega0."""
    if m.DeltaOmega is None:
        raise InvalidScheme("only sinusoidal schedules can be exported")
    path = Path(path)
    npix = m.DeltaOmega.shape[0]
    M = (npix - 1) // 2
    with open(path, "w", newline="") as fh:
        fh.write(f"# Phi={m.Phi!r} Omega0={m.Omega0!r} seed={m.seed}\n")
        wr = csv.writer(fh)
        wr.writerow(["n", "m", "delta_omega"])
        for row in range(npix):
            for col in range(npix):
                wr.writerow([col - M, row - M, repr(float(m.DeltaOmega[row, col]))])
    return path


def import_schedule(path: str | Path) -> ModulationScheme:
    path = Path(path)
    lines = path.read_text().splitlines()
    meta = dict(tok.split("=") for tok in lines[0].lstrip("# ").split())
    rows = list(csv.DictReader(lines[1:]))
    ns = np.array([int(r["n"]) for r in rows])
    ms = np.array([int(r["m"]) for r in rows])
    M = int(ns.max())
    dw = np.zeros((2 * M + 1, 2 * M + 1))
    dw[ms + M, ns + M] = [float(r["delta_omega"]) for r in rows]
    return ModulationScheme("sinusoidal", float(meta["Phi"]), float(meta["Omega0"]), dw,
                            int(meta["seed"]))
