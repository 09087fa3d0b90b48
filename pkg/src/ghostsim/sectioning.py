"""Depth sectioning with precomputed reference stacks.

One bucket record is correlated against computed reference fluctuations at
several trial distances. The slice whose point-spread width is smallest in
angle (width / depth) marks the object depth: geometric magnification scales
physical widths with depth, angular widths do not.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .coherence import CrossMoments
from .correlator import GhostImage, ScenarioConfig, SlmArm
from .detection import CurrentSeries
from .errors import (FingerprintMismatch, InvalidArgument, MisalignedSeries, NoPeak,
                     NondeterministicSource, PreconditionViolation)
from .grid import GridSpec
from .propagation import PropagationPlan, SPEED_OF_LIGHT
from .source import slm_phasors

_MAGIC = b"GSTK0001"
FWHM_PER_RADIUS = 2 * np.sqrt(np.log(2))


def schedule_fingerprint(cfg: ScenarioConfig, depths: Sequence[float] = ()) -> str:
    """SHA-256 over the SLM geometry, schedule, wavelength, grids, sample times and depths."""
    s = cfg.source
    h = hashlib.sha256()
    h.update(repr((s.d, s.M, s.P, s.beam_radius, cfg.lambda0)).encode())
    h.update(cfg.scheme.fingerprint_bytes())
    g = cfg.source_grid
    h.update(repr((g.n, g.pitch, g.center, cfg.scan_grid.n)).encode())
    h.update(repr((cfg.t0, cfg.dt, cfg.frames)).encode())
    h.update(repr(tuple(float(z) for z in depths)).encode())
    return h.hexdigest()


@dataclass(eq=False)
class ReferenceStack:
    """Computed reference fluctuations dI~1 at several depths.

    ``frames`` has shape ``(len(depths), frames, n, n)``; slice ``j`` lives on
    ``grids[j]``. Frame ``k`` of every depth belongs to source time
    ``t0 + k dt``; the per-depth propagation delay is kept in
    ``retardations``, so bucket sample ``k`` pairs with frame ``k`` at every
    depth.
    """
    depths: tuple
    grids: tuple
    frames: np.ndarray
    means: np.ndarray
    t0: float
    dt: float
    fingerprint: str
    gain: float = 1.0

    @property
    def retardations(self) -> np.ndarray:
        return np.asarray(self.depths) / SPEED_OF_LIGHT

    @property
    def nframes(self) -> int:
        return self.frames.shape[1]

    def save(self, directory: str | Path) -> Path:
        """Write ``manifest.txt`` and ``frames.bin`` into ``directory/<fingerprint>``."""
        root = Path(directory) / self.fingerprint
        root.mkdir(parents=True, exist_ok=True)
        shape = self.frames.shape
        with open(root / "frames.bin", "wb") as fh:
            fh.write(_MAGIC)
            fh.write(b"<")
            fh.write(np.array(shape, dtype="<u8").tobytes())
            fh.write(np.ascontiguousarray(self.frames, dtype="<f8").tobytes())
        np.save(root / "means.npy", np.asarray(self.means, dtype="<f8"))
        lines = [f"fingerprint {self.fingerprint}",
                 f"depths {' '.join(repr(float(z)) for z in self.depths)}",
                 f"frames {shape[1]}", f"n {shape[2]}",
                 f"pitches {' '.join(repr(g.pitch) for g in self.grids)}",
                 f"t0 {self.t0!r}", f"dt {self.dt!r}", f"gain {self.gain!r}",
                 "container frames.bin: 8-byte magic, 1-byte endianness, 4 x uint64 dims, float64 row-major"]
        (root / "manifest.txt").write_text("\n".join(lines) + "\n")
        return root

    @classmethod
    def load(cls, root: str | Path, expected: str | None = None) -> "ReferenceStack":
        root = Path(root)
        meta = {}
        for line in (root / "manifest.txt").read_text().splitlines():
            key, _, rest = line.partition(" ")
            meta[key] = rest
        fp = meta["fingerprint"]
        if expected is not None and fp != expected:
            raise FingerprintMismatch(f"stack {fp[:12]} does not match expected {expected[:12]}")
        with open(root / "frames.bin", "rb") as fh:
            if fh.read(8) != _MAGIC:
                raise InvalidArgument("not a reference-stack container")
            endian = fh.read(1).decode()
            shape = tuple(int(v) for v in np.frombuffer(fh.read(32), dtype=endian + "u8"))
            offset = fh.tell()
        frames = np.memmap(root / "frames.bin", dtype=endian + "f8", mode="r", offset=offset, shape=shape)
        depths = tuple(float(z) for z in meta["depths"].split())
        pitches = [float(p) for p in meta["pitches"].split()]
        grids = tuple(GridSpec(shape[2], p) for p in pitches)
        return cls(depths, grids, frames, np.load(root / "means.npy"), float(meta["t0"]),
                   float(meta["dt"]), fp, float(meta["gain"]))


def build_stack(cfg: ScenarioConfig, depths: Sequence[float], cache_dir: str | Path | None = None) -> ReferenceStack:
    """Reference fluctuations at each depth for the scenario's deterministic schedule.

    With ``cache_dir`` an existing stack with the same fingerprint is reused
    and a new one is written otherwise.
    """
    if cfg.kind != "slm" or not cfg.scheme.deterministic:
        raise NondeterministicSource("reference stacks need deterministic (sinusoidal) modulation")
    if cfg.pinhole.impulse != "instantaneous":
        raise PreconditionViolation("reference stacks assume an instantaneous reference response")
    depths = tuple(float(z) for z in depths)
    if len(set(depths)) != len(depths) or min(depths) <= 0:
        raise InvalidArgument("depths must be distinct and positive")
    fp = schedule_fingerprint(cfg, depths)
    if cache_dir is not None and (Path(cache_dir) / fp / "manifest.txt").exists():
        return ReferenceStack.load(Path(cache_dir) / fp, expected=fp)
    n = cfg.scan_grid.n
    grids, arms = [], []
    for z in depths:
        og = PropagationPlan(cfg.lambda0, z, cfg.source_grid).output_grid
        grids.append(og.crop(n)[0])
        arms.append(SlmArm(cfg, z, grids[-1]))
    K = cfg.frames
    frames = np.empty((len(depths), K, n, n))
    sums = np.zeros((len(depths), n, n))
    times = cfg.times
    for b0 in range(0, K, cfg.batch):
        idx = np.arange(b0, min(b0 + cfg.batch, K))
        ph = slm_phasors(cfg.source, cfg.scheme, times[idx])
        for j, arm in enumerate(arms):
            F = arm.bf.apply(arm.amp * ph)
            I = F.real**2 + F.imag**2
            frames[j, idx] = I
            sums[j] += I.sum(axis=0)
    means = sums / K
    frames -= means[:, None]
    gain = cfg.pinhole.q * cfg.pinhole.eta
    stack = ReferenceStack(depths, tuple(grids), frames, means, cfg.t0, cfg.dt, fp, gain)
    if cache_dir is not None:
        stack.save(cache_dir)
    return stack


def section(bucket: CurrentSeries, stack: ReferenceStack, fingerprint: str | None = None,
            blocks: int = 20) -> list[GhostImage]:
    """One background-free image per depth from a single bucket record.

    Each slice is gain * A1 * <dI~1(rho1, t_k) i2(t_k)> with A1 the slice pitch
    squared. ``fingerprint``, when given, must match the stack.
    """
    if fingerprint is not None and fingerprint != stack.fingerprint:
        raise FingerprintMismatch("bucket schedule fingerprint does not match the stack")
    K = stack.nframes
    if len(bucket) != K or abs(bucket.dt - stack.dt) > 1e-12 * stack.dt:
        raise MisalignedSeries(f"bucket has {len(bucket)} samples at dt={bucket.dt:g}, "
                               f"stack has {K} at dt={stack.dt:g}")
    # bucket t0 carries its own propagation delay, which is far below dt
    lag = bucket.t0 - (stack.t0 + float(np.mean(stack.retardations)))
    if abs(lag) > stack.dt / 2:
        raise MisalignedSeries(f"bucket start is offset by {lag:g} s from the stack frame times")
    i2 = bucket.samples
    out = []
    for j, g in enumerate(stack.grids):
        acc = CrossMoments((g.n, g.n), K, blocks)
        a1 = stack.gain * g.pitch**2
        for b0 in range(0, K, 256):
            idx = np.arange(b0, min(b0 + 256, K))
            acc.add(idx, a1 * np.asarray(stack.frames[j, idx]), i2[idx])
        est, se = acc.estimate()
        out.append(GhostImage(g, est, "computational", True, se, None, K, acc.leave_one_out()))
    return out


# --- point-spread width -----------------------------------------------------

def _gauss2d(xy, B, A, x0, y0, w):
    x, y = xy
    return B + A * np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / w**2)


def psf_width(img: GhostImage, method: str = "gaussian-fit") -> float:
    """e^{-1} radius of the dominant peak (least-squares Gaussian or FWHM / 1.6651)."""
    v = img.values
    base = img.background_estimate if method == "fwhm" else float(np.median(v))
    if not np.all(np.isfinite(v)) or not v.max() > base:
        raise NoPeak("image has no peak above its background")
    fx, fy = img.fwhm()
    if method == "fwhm":
        if not (np.isfinite(fx) and np.isfinite(fy)):
            raise NoPeak("peak does not fall to half maximum inside the image")
        return float(0.5 * (fx + fy) / FWHM_PER_RADIUS)
    if method != "gaussian-fit":
        raise InvalidArgument(f"unknown psf method {method!r}")
    g = img.grid
    X, Y = g.mesh()
    iy, ix = img.peak_index
    w0 = np.nanmean([fx, fy]) / FWHM_PER_RADIUS
    if not np.isfinite(w0) or w0 <= 0:
        w0 = 3 * g.pitch
    sel = (X - X[iy, ix]) ** 2 + (Y - Y[iy, ix]) ** 2 <= (4 * w0) ** 2
    if sel.sum() < 9:
        sel = np.ones_like(sel)
    p0 = [base, v[iy, ix] - base, X[iy, ix], Y[iy, ix], w0]
    try:
        with warnings.catch_warnings():
            # noise-free images fit exactly and leave the (unused) covariance undefined
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(_gauss2d, (X[sel], Y[sel]), v[sel], p0=p0, maxfev=20000)
    except RuntimeError as exc:
        raise NoPeak(f"Gaussian fit did not converge: {exc}") from exc
    return float(abs(popt[4]))


@dataclass(frozen=True)
class DepthProfile:
    depths: np.ndarray
    psf_width: np.ndarray
    angular_width: np.ndarray
    focus_estimate: float

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        table = np.column_stack([self.depths, self.psf_width, self.angular_width])
        np.savetxt(path, table, delimiter=",", header="depth,psf_width,angular_width",
                   comments="", fmt="%.12g")
        return path


def focus_from_widths(depths: np.ndarray, angular: np.ndarray) -> float:
    """Argmin of angular width, refined by a parabola through the neighbouring slices."""
    order = np.argsort(depths)
    z, a = np.asarray(depths, float)[order], np.asarray(angular, float)[order]
    j = int(np.argmin(a))
    if 0 < j < z.size - 1:
        c = np.polyfit(z[j - 1:j + 2], a[j - 1:j + 2], 2)
        if c[0] > 0:
            return float(np.clip(-c[1] / (2 * c[0]), z[j - 1], z[j + 1]))
    return float(z[j])


def depth_profile(images: Sequence[GhostImage], depths: Sequence[float],
                  method: str = "gaussian-fit") -> DepthProfile:
    depths = np.asarray(depths, dtype=float)
    widths = np.array([psf_width(im, method) for im in images])
    angular = widths / depths
    return DepthProfile(depths, widths, angular, focus_from_widths(depths, angular))


def write_profile_json(profile: DepthProfile, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"depths": profile.depths.tolist(),
                                "psf_width": profile.psf_width.tolist(),
                                "angular_width": profile.angular_width.tolist(),
                                "focus_estimate": profile.focus_estimate}, indent=2))
    return path
