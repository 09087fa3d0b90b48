"""Sampled transverse grids and the field containers that live on them.

Grids are square, even-sized and sampled at ``u_k = center + (k - n/2) * pitch``.
Arrays are indexed ``values[iy, ix]``. Photon-unit normalization lives in the
field values; the area element ``pitch**2`` is applied only by :func:`integrate`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch, InvalidArgument, OutOfGrid


@dataclass(frozen=True)
class GridSpec:
    n: int
    pitch: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2 or self.n % 2:
            raise InvalidArgument(f"grid size must be an even integer >= 2, got {self.n}")
        if not (self.pitch > 0 and np.isfinite(self.pitch)):
            raise InvalidArgument(f"grid pitch must be positive, got {self.pitch}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "pitch", float(self.pitch))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def extent(self) -> float:
        return self.n * self.pitch

    @property
    def x(self) -> np.ndarray:
        return self.center[0] + (np.arange(self.n) - self.n // 2) * self.pitch

    @property
    def y(self) -> np.ndarray:
        return self.center[1] + (np.arange(self.n) - self.n // 2) * self.pitch

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X, Y)`` coordinate arrays shaped ``(n, n)``."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    def r2(self) -> np.ndarray:
        X, Y = self.mesh()
        return X**2 + Y**2

    def index_of(self, position) -> tuple[int, int]:
        """Nearest-sample ``(iy, ix)`` for a point ``(x, y)``.

        Raises OutOfGrid when the point lies more than half a pitch outside
        the sampled square.
        """
        x, y = float(position[0]), float(position[1])
        ix = int(np.rint((x - self.center[0]) / self.pitch + self.n // 2))
        iy = int(np.rint((y - self.center[1]) / self.pitch + self.n // 2))
        if not (0 <= ix < self.n and 0 <= iy < self.n):
            raise OutOfGrid(f"point ({x:g}, {y:g}) m lies outside the {self.n}x{self.n} grid")
        return iy, ix

    def crop(self, n: int, offset: tuple[int, int] = (0, 0)) -> tuple["GridSpec", tuple[slice, slice]]:
        """Sub-window of ``n`` samples whose center is shifted by ``offset`` samples (x, y).

        Returns the window grid and the ``(rows, cols)`` slices into this grid.
        """
        if n > self.n or n % 2:
            raise InvalidArgument(f"crop size {n} must be even and <= {self.n}")
        i0 = self.n // 2 - n // 2 + offset[1]
        j0 = self.n // 2 - n // 2 + offset[0]
        if i0 < 0 or j0 < 0 or i0 + n > self.n or j0 + n > self.n:
            raise InvalidArgument("crop window falls outside the grid")
        cx = self.center[0] + offset[0] * self.pitch
        cy = self.center[1] + offset[1] * self.pitch
        return GridSpec(n, self.pitch, (cx, cy)), (slice(i0, i0 + n), slice(j0, j0 + n))

    def window_slices(self, sub: "GridSpec") -> tuple[slice, slice]:
        """Slices locating an aligned sub-grid inside this grid.

        Raises GridMismatch unless ``sub`` has the same pitch and its samples
        coincide with samples of this grid.
        """
        if sub == self:
            return slice(0, self.n), slice(0, self.n)
        if not np.isclose(sub.pitch, self.pitch, rtol=1e-12, atol=0.0):
            raise GridMismatch(f"pitch {sub.pitch:g} does not match {self.pitch:g}")
        j0 = (sub.x[0] - self.x[0]) / self.pitch
        i0 = (sub.y[0] - self.y[0]) / self.pitch
        if abs(j0 - round(j0)) > 1e-6 or abs(i0 - round(i0)) > 1e-6:
            raise GridMismatch("sub-grid samples are not aligned with the parent grid")
        j0, i0 = int(round(j0)), int(round(i0))
        if i0 < 0 or j0 < 0 or i0 + sub.n > self.n or j0 + sub.n > self.n:
            raise GridMismatch("sub-grid extends past the parent grid")
        return slice(i0, i0 + sub.n), slice(j0, j0 + sub.n)


def make_grid(n: int, pitch: float) -> GridSpec:
    """Origin-centered square grid with ``n`` samples per axis."""
    return GridSpec(n, pitch)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ComplexField:
    """Complex amplitude frame in sqrt(photons / (m^2 s))."""

    grid: GridSpec
    values: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.n, self.grid.n):
            raise GridMismatch(f"values shape {v.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    def scaled(self, factor: complex) -> "ComplexField":
        return dataclasses.replace(self, values=self.values * factor)


@dataclass(frozen=True)
class RealField:
    """Real-valued map on a grid, typically a photon-flux density."""

    grid: GridSpec
    values: np.ndarray
    timestamp: float = field(default=0.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n, self.grid.n):
            raise GridMismatch(f"values shape {v.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))


def intensity(f: ComplexField) -> RealField:
    """Pointwise |E|^2 on the same grid."""
    v = f.values
    return RealField(f.grid, v.real**2 + v.imag**2, f.timestamp)


def integrate(f: RealField, mask: RealField | None = None) -> float:
    """Sum of ``f * mask * pitch**2``; an omitted mask means all ones.

    The mask may live on an aligned sub-window of ``f.grid``; samples outside
    that window then count as zero.
    """
    area = f.grid.pitch**2
    if mask is None:
        return float(np.sum(f.values) * area)
    rows, cols = f.grid.window_slices(mask.grid)
    return float(np.sum(f.values[rows, cols] * mask.values) * area)


def power(f: ComplexField) -> float:
    return integrate(intensity(f))


def sample(f: RealField | ComplexField, position) -> complex | float:
    iy, ix = f.grid.index_of(position)
    return f.values[iy, ix]


# --- export -----------------------------------------------------------------

def export_pgm(f: RealField, path: str | Path) -> tuple[Path, Path]:
    """Write a 16-bit binary PGM plus a ``.scale.txt`` sidecar.

    Pixel ``p`` maps back to ``offset + p * scale``. Row 0 of the file is the
    top of the image (largest y).
    """
    path = Path(path)
    v = np.asarray(f.values, dtype=float)[::-1]
    lo, hi = float(v.min()), float(v.max())
    offset = min(lo, 0.0)
    scale = (hi - offset) / 65535.0 if hi > offset else 1.0
    pix = np.clip(np.rint((v - offset) / scale), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{f.grid.n} {f.grid.n}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())
    sidecar = path.with_suffix(path.suffix + ".scale.txt")
    sidecar.write_text(
        f"offset {offset!r}\nscale {scale!r}\npitch {f.grid.pitch!r}\n"
        f"center_x {f.grid.center[0]!r}\ncenter_y {f.grid.center[1]!r}\n"
    )
    return path, sidecar


def read_pgm(path: str | Path) -> RealField:
    """Inverse of :func:`export_pgm` (values recovered to 16-bit precision)."""
    path = Path(path)
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise InvalidArgument(f"{path} is not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    pix = np.frombuffer(parts[3], dtype=">u2", count=w * h).reshape(h, w)[::-1]
    meta = {}
    for line in path.with_suffix(path.suffix + ".scale.txt").read_text().splitlines():
        k, v = line.split()
        meta[k] = float(v)
    grid = GridSpec(w, meta["pitch"], (meta["center_x"], meta["center_y"]))
    return RealField(grid, meta["offset"] + pix.astype(float) * meta["scale"])


def export_csv(f: RealField, path: str | Path) -> Path:
    """Rows of ``x,y,value`` in row-major order, at round-trip precision."""
    path = Path(path)
    X, Y = f.grid.mesh()
    table = np.column_stack([X.ravel(), Y.ravel(), np.asarray(f.values).ravel()])
    np.savetxt(path, table, delimiter=",", header="x,y,value", comments="", fmt="%.17g")
    return path


def read_csv(path: str | Path) -> RealField:
    """Inverse of :func:`export_csv` for square grids."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = int(round(np.sqrt(table.shape[0])))
    if n * n != table.shape[0]:
        raise InvalidArgument(f"{path} does not hold a square grid")
    x = table[:n, 0]
    y = table[::n, 1]
    pitch = float(x[1] - x[0])
    grid = GridSpec(n, pitch, (float(x[n // 2]), float(y[n // 2])))
    return RealField(grid, table[:, 2].reshape(n, n))
