"""Closed-form correlation kernels and Monte-Carlo estimators that test them.

Every kernel here is separable in x and y:
``K(r1, r2) = pref * f(x1, x2) * f(y1, y2)``. That keeps the defocus
integral a 1D quadrature per axis and lets predicted images be built from
two small matrices.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .errors import (FarFieldViolation, FarFieldWarning, InsufficientData,
                     InvalidArgument, OutOfGrid)
from .grid import ComplexField
from .source import GaussianSchellParams, SlmParams, temporal_R

FAR_FIELD_LIMIT = 0.1
FAR_FIELD_COMFORT = 0.03
_SIN_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class CorrelationKernel:
    """Separable mutual-intensity kernel in photons/(m^2 s).

    ``axis(u1, u2)`` broadcasts over arrays. ``coherence_radius`` and
    ``intensity_radius`` are scale hints used by quadrature; ``curvature``
    is the wavefront radius carried by the kernel's phase (``None`` when flat).
    """
    tag: str
    pref: complex
    axis: Callable[[np.ndarray, np.ndarray], np.ndarray]
    coherence_radius: float
    intensity_radius: float
    lambda0: float | None = None
    curvature: float | None = None
    localized: bool = True
    params: dict = field(default_factory=dict)

    def __call__(self, r1, r2) -> np.ndarray:
        r1, r2 = np.asarray(r1, dtype=float), np.asarray(r2, dtype=float)
        return self.pref * self.axis(r1[..., 0], r2[..., 0]) * self.axis(r1[..., 1], r2[..., 1])

    def intensity(self, r) -> np.ndarray:
        return np.real(self(r, r))

    def axis_matrix(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        """``f(u1[i], u2[j])`` as an ``(len(u1), len(u2))`` array."""
        return self.axis(np.asarray(u1, dtype=float)[:, None], np.asarray(u2, dtype=float)[None, :])


def far_field_factor_gs(p: GaussianSchellParams, lambda0: float, L: float) -> float:
    return 2 * np.pi / lambda0 * p.a0 * p.rho0 / (2 * abs(L))


def far_field_factor_slm(s: SlmParams, lambda0: float, L: float) -> float:
    return 2 * np.pi / lambda0 * s.d * s.D / abs(L)


def _check_far_field(value: float, what: str):
    if value > FAR_FIELD_LIMIT:
        raise FarFieldViolation(f"far-field factor {what} = {value:.4g} exceeds {FAR_FIELD_LIMIT}")
    if value > FAR_FIELD_COMFORT:
        warnings.warn(f"far-field factor {what} = {value:.4g} is above {FAR_FIELD_COMFORT}",
                      FarFieldWarning, stacklevel=3)


def gs_source_corr(p: GaussianSchellParams) -> CorrelationKernel:
    a2, r2 = p.a0**2, p.rho0**2

    def axis(u1, u2):
        return np.exp(-(u1**2 + u2**2) / a2 - (u1 - u2) ** 2 / (2 * r2))

    return CorrelationKernel("gs-source", 2 * p.P / (np.pi * a2), axis, p.rho0, p.a0,
                             params={"P": p.P, "a0": p.a0, "rho0": p.rho0})


def gs_radii(p: GaussianSchellParams, lambda0: float, L: float) -> tuple[float, float]:
    """Far-field ``(a_L, rho_L)`` = (2L/k0 rho0, 2L/k0 a0)."""
    k0 = 2 * np.pi / lambda0
    return 2 * abs(L) / (k0 * p.rho0), 2 * abs(L) / (k0 * p.a0)


def gs_farfield_corr(p: GaussianSchellParams, lambda0: float, L: float) -> CorrelationKernel:
    """Far-field Gaussian-Schell kernel of one arm (half the source flux)."""
    _check_far_field(far_field_factor_gs(p, lambda0, L), "k0*a0*rho0/2L")
    k0 = 2 * np.pi / lambda0
    aL, rL = gs_radii(p, lambda0, L)

    def axis(u1, u2):
        return np.exp(1j * k0 * (u2**2 - u1**2) / (2 * L)
                      - (u1**2 + u2**2) / aL**2 - (u1 - u2) ** 2 / (2 * rL**2))

    return CorrelationKernel("gs-farfield", p.P / (np.pi * aL**2), axis, rL, aL, lambda0, L,
                             params={"P": p.P, "a_L": aL, "rho_L": rL, "L": L})


def _sinc(x):
    return np.sinc(x / np.pi)


def dirichlet_ratio(N: int, a: np.ndarray) -> np.ndarray:
    """sin(N a)/sin(a) with the removable singularities filled by their limits (N odd)."""
    a = np.asarray(a, dtype=float)
    s = np.sin(a)
    small = np.abs(s) < _SIN_EPS
    safe = np.where(small, 1.0, s)
    out = np.sin(N * a) / safe
    if np.any(small):
        # at a = j*pi: limit is N * (-1)^(j (N-1))
        j = np.rint(a / np.pi)
        out = np.where(small, N * np.where((j * (N - 1)) % 2 == 0, 1.0, -1.0), out)
    return out


def slm_farfield_corr(s: SlmParams, lambda0: float, L: float) -> CorrelationKernel:
    """Far-field kernel of one arm for an iid-phase SLM with uniform illumination."""
    if s.beam_radius is not None:
        raise InvalidArgument("closed-form SLM kernel assumes uniform illumination")
    _check_far_field(far_field_factor_slm(s, lambda0, L), "k0*d*D/L")
    k0 = 2 * np.pi / lambda0
    d, D, N = s.d, s.D, s.npix
    c = k0 / (2 * L)

    def axis(u1, u2):
        return (np.exp(1j * c * (u2**2 - u1**2)) * _sinc(c * d * u1) * _sinc(c * d * u2)
                * dirichlet_ratio(N, c * d * (u1 - u2)))

    pref = s.P / 2 * (d**2 / (D * lambda0 * L)) ** 2
    return CorrelationKernel("slm-farfield", pref, axis, lambda0 * L / D, lambda0 * L / d,
                             lambda0, L, localized=False,
                             params={"P": s.P, "d": d, "D": D, "L": L})


def slm_pixel_sum_oracle(s: SlmParams, lambda0: float, L: float, r1, r2) -> complex:
    """Bilinear pixel double sum sum_{p,q} h_p*(r1) C_pq h_q(r2) with C = identity.

    ``h_p`` is the Fraunhofer field of pixel p (unit phasor, arm amplitude)
    with the chirp frozen at the pixel centre. Evaluated literally, without the
    geometric-series closed form.
    """
    k0 = 2 * np.pi / lambda0
    amp = np.sqrt(s.P / s.D**2) / np.sqrt(2)
    j = np.arange(-s.M, s.M + 1) * s.d
    cx, cy = np.meshgrid(j, j, indexing="xy")
    cx, cy = cx.ravel(), cy.ravel()

    def h(r):
        x, y = float(r[0]), float(r[1])
        pre = k0 / (2j * np.pi * L) * np.exp(1j * k0 * (x * x + y * y) / (2 * L))
        env = s.d**2 * _sinc(k0 * s.d * x / (2 * L)) * _sinc(k0 * s.d * y / (2 * L))
        return amp * pre * env * np.exp(-1j * k0 * (x * cx + y * cy) / L)

    h1, h2 = h(r1), h(r2)
    corr = np.eye(cx.size)
    return complex(np.conj(h1) @ corr @ h2)


def rho_L_prime(rhoL: float, k0: float, deltaL: float) -> float:
    """Defocused coherence radius rho_L sqrt(1 + (deltaL / k0 rho_L^2)^2)."""
    if not rhoL > 0:
        raise InvalidArgument("rhoL must be positive")
    return rhoL * np.sqrt(1 + (deltaL / (k0 * rhoL**2)) ** 2)


def _resolve_R(R) -> Callable[[float], float]:
    if R is None:
        return lambda tau: 1.0
    if callable(R):
        return R
    return lambda tau: temporal_R(tau, float(R))


def fluct_corr_prediction(k: CorrelationKernel, R, mask, rho1, rho2, t1: float, t2: float) -> float:
    """|K(rho1, rho2)|^2 |R(t2 - t1)|^2 |T(rho2)|^2.

    ``R`` is a callable, a coherence time T0 (exponential model) or ``None``
    for R = 1. ``mask`` is an ObjectMask; rho2 is looked up at its nearest
    sample and must lie on the mask grid.
    """
    iy, ix = mask.grid.index_of(rho2)
    t = mask.values[iy, ix]
    kv = k(np.asarray(rho1, dtype=float), np.asarray(rho2, dtype=float))
    return float(abs(kv) ** 2 * abs(_resolve_R(R)(t2 - t1)) ** 2 * t)


# --- defocus ----------------------------------------------------------------

def _defocus_nodes(k: CorrelationKernel, k0: float, dL: float, u1: np.ndarray, u2: float):
    c, I = k.coherence_radius, k.intensity_radius
    if k.localized:
        lo, hi = u2 - 8 * c, u2 + 8 * c
    else:
        lo, hi = -2 * I, 2 * I
    span = max(abs(lo), abs(hi))
    F = k0 * max(np.max(np.abs(u1 - lo)), np.max(np.abs(u1 - hi))) / abs(dL)
    if k.curvature is not None:
        F += k0 * span / abs(k.curvature)
    h = min(c / 4, np.pi / (2 * F))
    m = int(np.ceil((hi - lo) / h))
    h = (hi - lo) / m
    return lo + (np.arange(m) + 0.5) * h, h


def defocused_corr(k: CorrelationKernel, lambda0: float, deltaL: float) -> CorrelationKernel:
    """Kernel between a plane ``deltaL`` beyond ``k``'s plane (first argument) and ``k``'s plane.

    K''(r1, r2) = int dr K(r, r2) (i k0 / 2 pi dL) e^{-i k0 (dL + |r - r1|^2 / 2 dL)},
    evaluated by a midpoint rule per axis. The nodes cover the coherence
    window around ``u2`` (or the whole intensity footprint for non-local
    kernels) with a pitch below both a quarter coherence radius and a quarter
    period of the fastest local chirp.
    """
    if deltaL == 0:
        return k
    k0 = 2 * np.pi / lambda0
    dL = float(deltaL)

    def axis(u1, u2):
        u1, u2 = np.broadcast_arrays(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
        out = np.empty(u1.shape, dtype=complex)
        f1, f2, fo = u1.ravel(), u2.ravel(), out.reshape(-1)
        for v in np.unique(f2):
            sel = np.nonzero(f2 == v)[0]
            a = f1[sel]
            nodes, h = _defocus_nodes(k, k0, dL, a, v)
            weights = k.axis(nodes, v) * h
            ua = np.unique(a)
            vals = np.exp(-1j * k0 * (nodes[None, :] - ua[:, None]) ** 2 / (2 * dL)) @ weights
            fo[sel] = vals[np.searchsorted(ua, a)]
        return out

    pref = k.pref * (1j * k0 / (2 * np.pi * dL)) * np.exp(-1j * k0 * dL)
    curv = None if k.curvature is None else k.curvature + dL
    return CorrelationKernel("defocused", pref, axis, k.coherence_radius, k.intensity_radius,
                             lambda0, curv, k.localized, params={**k.params, "deltaL": dL})


# --- estimators -------------------------------------------------------------

class CrossMoments:
    """Per-block sums of ``a``, ``b`` and ``a*b`` for block-jackknife errors.

    ``a`` has a fixed per-sample shape; ``b`` is either one scalar per sample
    (broadcast against ``a``) or has ``a``'s shape. Samples are assigned to
    ``blocks`` contiguous blocks by their global index, so the result does not
    depend on how the stream was batched.
    """

    def __init__(self, shape: tuple, total: int, blocks: int = 20, scalar_b: bool = True,
                 dtype=float):
        if total < 2:
            raise InsufficientData("need at least 2 samples")
        self.shape = tuple(shape)
        self.total = int(total)
        self.nb = int(min(blocks, total))
        self.scalar_b = scalar_b
        self.sa = np.zeros((self.nb,) + self.shape, dtype=dtype)
        self.sab = np.zeros((self.nb,) + self.shape, dtype=dtype)
        self.sb = np.zeros((self.nb,) + (() if scalar_b else self.shape), dtype=dtype)
        self.count = np.zeros(self.nb, dtype=np.int64)

    def block_of(self, index: np.ndarray) -> np.ndarray:
        return (np.asarray(index) * self.nb) // self.total

    def add(self, index: np.ndarray, a: np.ndarray, b: np.ndarray):
        index = np.asarray(index)
        blk = self.block_of(index)
        for bb in np.unique(blk):
            sel = blk == bb
            aa, bv = a[sel], b[sel]
            self.sa[bb] += aa.sum(axis=0)
            self.sb[bb] += bv.sum(axis=0)
            if self.scalar_b:
                self.sab[bb] += np.tensordot(bv, aa, axes=(0, 0))
            else:
                self.sab[bb] += (aa * bv).sum(axis=0)
            self.count[bb] += int(sel.sum())

    def merge(self, other: "CrossMoments"):
        for name in ("sa", "sb", "sab", "count"):
            getattr(self, name).__iadd__(getattr(other, name))

    @property
    def n(self) -> int:
        return int(self.count.sum())

    @staticmethod
    def _estimate(n, sa, sb, sab, centered):
        est = sab / n
        if centered:
            est = est - (sa / n) * (sb / n)
        return est

    def estimate(self, centered: bool = False):
        """``(estimate, jackknife standard error)``; ``centered`` removes the product of means."""
        if self.n < 2:
            raise InsufficientData("need at least 2 samples")
        full = self._estimate(self.n, self.sa.sum(0), self.sb.sum(0), self.sab.sum(0), centered)
        used = np.nonzero(self.count)[0]
        if used.size < 2:
            return full, np.zeros(np.shape(full))
        tot = [self.sa.sum(0), self.sb.sum(0), self.sab.sum(0)]
        loo = np.stack([
            self._estimate(self.n - self.count[b], tot[0] - self.sa[b], tot[1] - self.sb[b],
                           tot[2] - self.sab[b], centered)
            for b in used])
        g = used.size
        dev = loo - loo.mean(axis=0)
        var = (g - 1) / g * np.sum(np.abs(dev) ** 2, axis=0)
        return full, np.sqrt(var)

    def leave_one_out(self, centered: bool = False) -> np.ndarray:
        """Stack of leave-one-block-out estimates, for jackknifing derived statistics."""
        tot = [self.sa.sum(0), self.sb.sum(0), self.sab.sum(0)]
        used = np.nonzero(self.count)[0]
        return np.stack([
            self._estimate(self.n - self.count[b], tot[0] - self.sa[b], tot[1] - self.sb[b],
                           tot[2] - self.sab[b], centered)
            for b in used])

    def means(self):
        return self.sa.sum(0) / self.n, self.sb.sum(0) / self.n


def jackknife_se(loo: np.ndarray) -> np.ndarray:
    g = loo.shape[0]
    dev = loo - loo.mean(axis=0)
    return np.sqrt((g - 1) / g * np.sum(np.abs(dev) ** 2, axis=0))


@dataclass(frozen=True)
class CorrEstimate:
    probes: tuple
    values: np.ndarray
    stderr: np.ndarray
    frames: int


def _probe_indices(grid, pts) -> tuple[np.ndarray, np.ndarray]:
    idx = [grid.index_of(p) for p in pts]
    return np.array([i for i, _ in idx]), np.array([j for _, j in idx])


def estimate_corr(frames: Iterable[tuple[ComplexField, ComplexField]], probes: Sequence,
                  blocks: int = 20) -> CorrEstimate:
    """Sample mean of E1*(r1) E2(r2) at probe pairs with block-jackknife errors."""
    frames = list(frames)
    if len(frames) < 2:
        raise InsufficientData(f"need at least 2 frames, got {len(frames)}")
    g1, g2 = frames[0][0].grid, frames[0][1].grid
    iy1, ix1 = _probe_indices(g1, [p[0] for p in probes])
    iy2, ix2 = _probe_indices(g2, [p[1] for p in probes])
    acc = CrossMoments((len(probes),), len(frames), blocks, scalar_b=False, dtype=complex)
    for k, (e1, e2) in enumerate(frames):
        a = np.conj(e1.values[iy1, ix1])[None]
        b = e2.values[iy2, ix2][None]
        acc.add(np.array([k]), a, b)
    est, se = acc.estimate()
    return CorrEstimate(tuple(probes), est, se, len(frames))


class ProbeFluctuations:
    """Streaming <dI1(r1) dI2(r2)> at probe pairs from batched intensity frames."""

    def __init__(self, grid1, grid2, probes: Sequence, total: int, blocks: int = 20):
        self.probes = tuple(probes)
        self.i1 = _probe_indices(grid1, [p[0] for p in probes])
        self.i2 = _probe_indices(grid2, [p[1] for p in probes])
        self.acc = CrossMoments((len(probes),), total, blocks, scalar_b=False)

    def add(self, index, I1: np.ndarray, I2: np.ndarray, T2: np.ndarray | None = None):
        a = I1[:, self.i1[0], self.i1[1]]
        b = I2[:, self.i2[0], self.i2[1]]
        if T2 is not None:
            b = b * T2
        self.acc.add(index, a, b)

    def estimate(self) -> CorrEstimate:
        est, se = self.acc.estimate(centered=True)
        return CorrEstimate(self.probes, est, se, self.acc.n)


class ShiftCoherence:
    """Degree-of-coherence estimate |mu(s)|^2 for pixel shifts along x inside a patch.

    For each shift ``s`` the field pairs (E(x), E(x+s)) are accumulated over a
    central patch; |mu|^2 = |<E1* E2>|^2 / (<|E1|^2> <|E2|^2>) is averaged over
    the patch.
    """

    def __init__(self, grid, patch: int, shifts: Sequence[int], total: int, blocks: int = 20):
        self.grid = grid
        self.shifts = np.asarray(shifts, dtype=int)
        c = grid.n // 2
        self.rows = slice(c - patch // 2, c + patch // 2)
        self.cols = np.arange(c - patch // 2, c + patch // 2)
        shape = (len(self.shifts), patch, patch)
        self.cross = CrossMoments(shape, total, blocks, scalar_b=False, dtype=complex)
        self.p1 = CrossMoments(shape, total, blocks, scalar_b=False)
        self.p2 = CrossMoments(shape, total, blocks, scalar_b=False)

    def add(self, index, E: np.ndarray):
        e = E[:, self.rows]
        e1 = np.stack([e[:, :, self.cols] for _ in self.shifts], axis=1)
        e2 = np.stack([e[:, :, self.cols + s] for s in self.shifts], axis=1)
        one = np.ones(e1.shape)
        self.cross.add(index, np.conj(e1), e2)
        self.p1.add(index, np.abs(e1) ** 2, one)
        self.p2.add(index, np.abs(e2) ** 2, one)

    def mu2(self) -> np.ndarray:
        c, _ = self.cross.estimate()
        a, _ = self.p1.estimate()
        b, _ = self.p2.estimate()
        return np.mean(np.abs(c) ** 2 / (a * b), axis=(1, 2))

    def distances(self) -> np.ndarray:
        return self.shifts * self.grid.pitch


def fit_coherence_radius(dist: np.ndarray, mu2: np.ndarray) -> float:
    """Least-squares fit of |mu|^2 = e^{-s^2 / rho^2}; returns rho."""
    dist, mu2 = np.asarray(dist, float), np.asarray(mu2, float)
    guess = dist[np.argmin(np.abs(mu2 - np.exp(-1)))] or dist.max() / 2
    (rho,), _ = curve_fit(lambda s, r: np.exp(-(s / r) ** 2), dist, mu2, p0=[guess])
    return float(abs(rho))


def fit_intensity_radius(grid, mean_intensity: np.ndarray) -> float:
    """Least-squares fit of A e^{-2 |r|^2 / a^2} to a mean intensity map; returns a."""
    r2 = grid.r2().ravel()
    v = np.asarray(mean_intensity, float).ravel()
    a0 = np.sqrt(2 * np.sum(v * r2) / np.sum(v))
    (A, a), _ = curve_fit(lambda r2, A, a: A * np.exp(-2 * r2 / a**2), r2, v, p0=[v.max(), a0])
    return float(abs(a))


def write_probe_report(path: str | Path, probes: Sequence, analytic: np.ndarray,
                       estimate: CorrEstimate) -> Path:
    """CSV with r1x, r1y, r2x, r2y, analytic re/im, sampled re/im, stderr."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["r1x", "r1y", "r2x", "r2y", "analytic_re", "analytic_im",
                     "sampled_re", "sampled_im", "stderr"])
        for (r1, r2), a, s, e in zip(probes, np.asarray(analytic, complex),
                                     np.asarray(estimate.values, complex), estimate.stderr):
            wr.writerow([r1[0], r1[1], r2[0], r2[1], a.real, a.imag, s.real, s.imag, float(e)])
    return path
