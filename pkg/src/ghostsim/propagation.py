"""Quasimonochromatic paraxial free-space propagation.

The forward path is the single-transform Fresnel method: input chirp, centered
DFT scaled by ``pitch**2``, output chirp and the ``k/(i 2 pi L) e^{ikL}``
prefactor. Its output pitch is ``lambda0 |L| / (n * pitch)``. On that output
grid the method is an exact refactoring of the Fresnel double sum, which
:func:`direct_oracle` evaluates literally.

A negative distance uses the same formula with signed ``L``; this is the
complex-conjugated kernel and makes ``+L`` followed by ``-L`` an identity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import SamplingViolation, SizeExceeded, ZeroDistance
from .grid import ComplexField, GridSpec

SPEED_OF_LIGHT = 299_792_458.0
DIRECT_ORACLE_MAX_N = 64


@dataclass(frozen=True)
class PropagationPlan:
    lambda0: float
    L: float
    input_grid: GridSpec
    method: str = "single-transform"

    def __post_init__(self):
        if self.L == 0:
            raise ZeroDistance("propagation distance must be nonzero")
        if self.method not in ("single-transform", "direct-oracle"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def k0(self) -> float:
        return 2 * np.pi / self.lambda0

    @property
    def output_grid(self) -> GridSpec:
        g = self.input_grid
        return GridSpec(g.n, self.lambda0 * abs(self.L) / (g.n * g.pitch))

    @property
    def retardation(self) -> float:
        return self.L / SPEED_OF_LIGHT

    def check_sampling(self):
        # input chirp must not alias: n * pitch**2 <= lambda0 |L|
        g = self.input_grid
        fresnel = g.n * g.pitch**2 / (self.lambda0 * abs(self.L))
        if fresnel > 1.0 + 1e-9:
            raise SamplingViolation(
                f"input chirp undersampled: n*pitch^2/(lambda0*|L|) = {fresnel:.3g} > 1"
            )


def output_grid(g: GridSpec, lambda0: float, L: float) -> GridSpec:
    return PropagationPlan(lambda0, L, g).output_grid


def _centered_dft(a: np.ndarray, inverse: bool) -> np.ndarray:
    axes = (-2, -1)
    a = sfft.ifftshift(a, axes=axes)
    if inverse:
        out = sfft.ifft2(a, axes=axes, norm="forward")
    else:
        out = sfft.fft2(a, axes=axes)
    return sfft.fftshift(out, axes=axes)


def fresnel_array(values: np.ndarray, g: GridSpec, lambda0: float, L: float) -> np.ndarray:
    """Single-transform Fresnel propagation of raw arrays shaped ``(..., n, n)``.

    Batched frames share the grid. The output lives on ``output_grid(g, lambda0, L)``.
    """
    plan = PropagationPlan(lambda0, L, g)
    plan.check_sampling()
    k = plan.k0
    xin, yin = g.x, g.y
    gout = plan.output_grid
    xo, yo = gout.x, gout.y
    chirp_in = np.exp(1j * k * yin**2 / (2 * L))[:, None] * np.exp(1j * k * xin**2 / (2 * L))[None, :]
    out = _centered_dft(values * chirp_in, inverse=L < 0)
    # linear phase from an off-axis input window, then the output chirp
    phase_x = k * xo**2 / (2 * L) - k * xo * g.center[0] / L
    phase_y = k * yo**2 / (2 * L) - k * yo * g.center[1] / L
    pref = k / (2j * np.pi * L) * np.exp(1j * k * L) * g.pitch**2
    return out * (pref * np.exp(1j * phase_y)[:, None] * np.exp(1j * phase_x)[None, :])


def fresnel_propagate(f: ComplexField, lambda0: float, L: float) -> ComplexField:
    """Propagate a field over signed distance ``L``; the timestamp is retarded by L/c."""
    plan = PropagationPlan(lambda0, L, f.grid)
    out = fresnel_array(f.values, f.grid, lambda0, L)
    return ComplexField(plan.output_grid, out, f.timestamp + plan.retardation)


def direct_oracle(f: ComplexField, lambda0: float, L: float, out: GridSpec) -> ComplexField:
    """Literal quadrature of the Fresnel integral, one output sample at a time.

    Cost is O(n_in^2 * n_out^2); both grids are limited to 64 samples per axis.
    """
    if L == 0:
        raise ZeroDistance("propagation distance must be nonzero")
    if f.grid.n > DIRECT_ORACLE_MAX_N or out.n > DIRECT_ORACLE_MAX_N:
        raise SizeExceeded(f"direct oracle is limited to n <= {DIRECT_ORACLE_MAX_N}")
    k = 2 * np.pi / lambda0
    Xs, Ys = f.grid.mesh()
    src = f.values.ravel()
    xs, ys = Xs.ravel(), Ys.ravel()
    # e^{ik L} is constant over the sum; keeping it inside would cost ~kL*eps of phase
    pref = k / (2j * np.pi * L) * np.exp(1j * k * L) * f.grid.pitch**2
    result = np.empty((out.n, out.n), dtype=complex)
    for iy, y in enumerate(out.y):
        for ix, x in enumerate(out.x):
            r2 = (x - xs) ** 2 + (y - ys) ** 2
            result[iy, ix] = pref * np.sum(src * np.exp(1j * k * r2 / (2 * L)))
    return ComplexField(out, result, f.timestamp + L / SPEED_OF_LIGHT)


class BlockFresnel:
    """Single-transform Fresnel propagation restricted to piecewise-constant inputs.

    The input is described by a per-sample block label along each axis
    (``-1`` for opaque samples) and an optional real per-sample weight (beam
    profile). Because both the transform and the chirps are separable, the
    output on any rectangular window of the output grid is
    ``Gy @ B @ Gx.T`` for a block-amplitude matrix ``B``. This reproduces
    :func:`fresnel_array` of the expanded field on that window exactly, at a
    cost independent of the input sample count.
    """

    def __init__(self, g: GridSpec, labels: np.ndarray, nblocks: int, lambda0: float, L: float,
                 window: GridSpec | None = None, weight: np.ndarray | None = None):
        plan = PropagationPlan(lambda0, L, g)
        plan.check_sampling()
        self.plan = plan
        gout = plan.output_grid
        self.window = window or gout
        rows, cols = gout.window_slices(self.window)
        k = plan.k0
        n = g.n
        p = np.arange(n) - n // 2
        weight = np.ones(n) if weight is None else np.asarray(weight, dtype=float)
        sign = 1.0 if L < 0 else -1.0

        def axis_matrix(u_in, c_in, u_out, sel):
            active = np.nonzero(labels >= 0)[0]
            q = p[active]
            po = p[sel]
            kern = np.exp(sign * 2j * np.pi * np.outer(po, q) / n)
            kern *= (weight[active] * np.exp(1j * k * u_in[active] ** 2 / (2 * L)))[None, :]
            G = np.zeros((po.size, nblocks), dtype=complex)
            np.add.at(G.T, labels[active], kern.T)
            uo = u_out[sel]
            G *= np.exp(1j * (k * uo**2 / (2 * L) - k * uo * c_in / L))[:, None]
            return G

        self.Gx = axis_matrix(g.x, g.center[0], gout.x, cols)
        self.Gy = axis_matrix(g.y, g.center[1], gout.y, rows)
        self.pref = k / (2j * np.pi * L) * np.exp(1j * k * L) * g.pitch**2

    def apply(self, blocks: np.ndarray) -> np.ndarray:
        """Output window values for block amplitudes ``blocks[row_block, col_block]``."""
        return self.pref * (self.Gy @ blocks @ self.Gx.T)

    def propagate(self, blocks: np.ndarray, timestamp: float = 0.0) -> ComplexField:
        return ComplexField(self.window, self.apply(blocks), timestamp + self.plan.retardation)


