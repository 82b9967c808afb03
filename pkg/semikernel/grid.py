"""Uniform tensor grids and functions sampled on them."""

from collections.abc import Callable, Mapping, Sequence
import csv
import dataclasses
import enum
from functools import cached_property
import json
from pathlib import Path
import typing as t

import numpy as np
from numpy.typing import ArrayLike
from scipy import fft

from .aniso import AnisoStructure, DimensionError, DomainError, FloatArray
from .symbol import ComplexArray

FORMAT_VERSION = 1


class GridMismatchError(Exception):
    """Grid functions are sampled on different grids."""

    def __init__(self, first: "Grid", second: "Grid") -> None:
        super().__init__(f"Grid mismatch: {first} and {second}")


class Lattice(enum.StrEnum):
    """Frequency lattice for discrete Fourier representations.

    On the shifted lattice, frequencies are (q + 1/2) 2 pi / L: zero is
    never a frequency and functions are extended antiperiodically.

    """

    PERIODIC = "periodic"
    SHIFTED = "shifted"


@dataclasses.dataclass(frozen=True)
class Grid:
    """Periodic grid of ``points`` nodes on [-extent, extent) per axis."""

    extents: tuple[float, ...]
    points: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.extents) != len(self.points) or not self.points:
            raise DimensionError(
                f"Extents {self.extents} don't match points {self.points}"
            )
        if any(extent <= 0 for extent in self.extents):
            raise DomainError(f"Extents must be positive: {self.extents}")
        if any(count < 8 for count in self.points):
            raise DomainError(
                f"At least 8 points per axis are required: {self.points}"
            )

    @classmethod
    def anisotropic(
        cls, structure: AnisoStructure, half_width: float, points: int
    ) -> "Grid":
        """Grid with extents half_width^gamma_k and equal point counts."""
        return cls(
            tuple(float(half_width**g) for g in structure.gamma_array),
            (points,) * structure.n,
        )

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @cached_property
    def spacing(self) -> FloatArray:
        return np.array(
            [2 * extent / count for extent, count in self.axes_spec()]
        )

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes_spec(self) -> list[tuple[float, int]]:
        return list(zip(self.extents, self.points, strict=True))

    def axes(self) -> list[FloatArray]:
        """Return node coordinates -extent + j h along each axis."""
        return [
            -extent + np.arange(count) * (2 * extent / count)
            for extent, count in self.axes_spec()
        ]

    def coordinates(self) -> FloatArray:
        """Return all nodes, shape points + (n,)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def interior(self, fraction: float = 0.8) -> t.Any:
        """Return an index selecting nodes with |x_k| <= fraction * X_k."""
        return np.ix_(
            *(
                np.flatnonzero(np.abs(axis) <= fraction * extent)
                for axis, extent in zip(self.axes(), self.extents, strict=True)
            )
        )

    def dilated(self, structure: AnisoStructure, factor: float) -> "Grid":
        """Return the grid with extents scaled by factor^gamma_k."""
        return Grid(
            tuple(
                float(extent * factor**g)
                for extent, g in zip(
                    self.extents, structure.gamma_array, strict=True
                )
            ),
            self.points,
        )

    def frequencies(self, lattice: Lattice = Lattice.SHIFTED) -> FloatArray:
        """Return frequency nodes, shape points + (n,), in FFT order."""
        axes = []
        for extent, count in self.axes_spec():
            index = fft.fftfreq(count) * count
            if lattice == Lattice.SHIFTED:
                index = index + 0.5
            else:
                # zero the Nyquist mode so real data stays real
                index[count // 2] = 0
            axes.append(index * np.pi / extent)
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def _twists(self) -> list[ComplexArray]:
        return [
            np.exp(-1j * np.pi * np.arange(count) / count)
            for count in self.points
        ]

    def _apply_twist(
        self, values: ComplexArray, conjugate: bool
    ) -> ComplexArray:
        result = values
        for axis, twist in enumerate(self._twists()):
            shape = [1] * values.ndim
            shape[axis] = len(twist)
            factor = twist.conj() if conjugate else twist
            result = result * factor.reshape(shape)
        return result

    def transform(
        self,
        values: ComplexArray,
        lattice: Lattice = Lattice.SHIFTED,
        workers: int | None = None,
    ) -> ComplexArray:
        """Return Fourier coefficients over the grid axes."""
        axes = tuple(range(self.n))
        if lattice == Lattice.SHIFTED:
            values = self._apply_twist(values, conjugate=False)
        return t.cast(
            ComplexArray, fft.fftn(values, axes=axes, workers=workers)
        )

    def inverse_transform(
        self,
        coeffs: ComplexArray,
        lattice: Lattice = Lattice.SHIFTED,
        workers: int | None = None,
    ) -> ComplexArray:
        axes = tuple(range(self.n))
        values = fft.ifftn(coeffs, axes=axes, workers=workers)
        if lattice == Lattice.SHIFTED:
            values = self._apply_twist(values, conjugate=True)
        return t.cast(ComplexArray, values)

    def header(self) -> dict[str, t.Any]:
        return {
            "dims": self.n,
            "extents": list(self.extents),
            "points": list(self.points),
        }


@dataclasses.dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex m-vectors at the nodes of a grid, shape points + (m,)."""

    grid: Grid
    values: ComplexArray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim != self.grid.n + 1 or (
            values.shape[:-1] != self.grid.shape
        ):
            raise DimensionError(
                f"Values of shape {values.shape} don't match grid "
                f"{self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("Grid function values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def sample(
        cls,
        grid: Grid,
        func: Callable[[FloatArray], ArrayLike],
        m: int = 1,
    ) -> "GridFunction":
        """Sample func on the grid nodes.

        func gets points of shape (..., n) and returns values of shape
        (..., m), or (...) for scalar functions.

        """
        values = np.asarray(func(grid.coordinates()), dtype=np.complex128)
        if values.shape == grid.shape:
            values = np.repeat(values[..., np.newaxis], m, axis=-1)
        return cls(grid, values)

    @classmethod
    def zeros(cls, grid: Grid, m: int = 1) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape + (m,), dtype=np.complex128))

    @property
    def m(self) -> int:
        return int(self.values.shape[-1])

    def check_grid(self, other: "GridFunction") -> None:
        if self.grid != other.grid:
            raise GridMismatchError(self.grid, other.grid)
        if self.m != other.m:
            raise DimensionError(
                f"Functions have {self.m} and {other.m} components"
            )

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self.check_grid(other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self.check_grid(other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar: complex) -> "GridFunction":
        return GridFunction(self.grid, scalar * self.values)

    __rmul__ = __mul__

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values), initial=0.0))

    def pointwise_norm(self) -> FloatArray:
        """Return the Euclidean norm of the vector at each node."""
        return t.cast(FloatArray, np.linalg.norm(self.values, axis=-1))

    def derivative(
        self,
        alpha: Sequence[int],
        lattice: Lattice = Lattice.SHIFTED,
        workers: int | None = None,
    ) -> "GridFunction":
        """Return the spectral derivative d^alpha."""
        if len(alpha) != self.grid.n:
            raise DimensionError(
                f"Multi-index {tuple(alpha)} must have {self.grid.n} entries"
            )
        kappa = self.grid.frequencies(lattice)
        multiplier = np.prod((1j * kappa) ** np.asarray(alpha), axis=-1)
        coeffs = self.grid.transform(self.values, lattice, workers)
        values = self.grid.inverse_transform(
            coeffs * multiplier[..., np.newaxis], lattice, workers
        )
        return GridFunction(self.grid, values)

    def boundary_magnitude(self) -> float:
        """Return the largest norm on the faces of the box."""
        norm = self.pointwise_norm()
        faces = [
            np.take(norm, index, axis=axis)
            for axis in range(self.grid.n)
            for index in (0, -1)
        ]
        return float(max(np.max(face) for face in faces))

    def save(self, path: Path) -> None:
        """Save as a JSON header line followed by raw little-endian data."""
        header = {
            "format-version": FORMAT_VERSION,
            **self.grid.header(),
            "m": self.m,
            "layout": "complex128-interleaved",
            "axis-order": "row-major",
        }
        with path.open("wb") as fd:
            fd.write(json.dumps(header).encode() + b"\n")
            fd.write(np.ascontiguousarray(self.values, dtype="<c16").tobytes())

    @classmethod
    def load(cls, path: Path) -> "GridFunction":
        with path.open("rb") as fd:
            line = fd.readline()
            data = fd.read()
        try:
            header = json.loads(line)
            version = header.get("format-version")
        except (ValueError, AttributeError):
            raise DomainError(f"Invalid grid function header in {path}")
        if version != FORMAT_VERSION:
            raise DomainError(
                f"Unsupported grid function format version: {version}"
            )
        grid = Grid(tuple(header["extents"]), tuple(header["points"]))
        shape = grid.shape + (header["m"],)
        if len(data) != 16 * np.prod(shape):
            raise DomainError(
                f"Grid function data in {path} doesn't match shape {shape}"
            )
        values = np.frombuffer(data, dtype="<c16").reshape(shape)
        return cls(grid, values.astype(np.complex128))

    def export_csv(
        self, path: Path, fixed: Mapping[int, int] | None = None
    ) -> None:
        """Export a 1-D or 2-D slice as CSV rows.

        ``fixed`` maps axes to the node index at which they're held; at
        most two axes may remain free.

        """
        fixed = dict(fixed or {})
        free = [axis for axis in range(self.grid.n) if axis not in fixed]
        if len(free) > 2:
            raise DimensionError(
                f"CSV slices have at most 2 free axes, got {len(free)}"
            )
        index = tuple(
            fixed.get(axis, slice(None)) for axis in range(self.grid.n)
        )
        coords = self.grid.coordinates()[index].reshape(-1, self.grid.n)
        values = self.values[index].reshape(-1, self.m)
        header = [f"x{k + 1}" for k in range(self.grid.n)]
        for component in range(self.m):
            header += [f"re{component + 1}", f"im{component + 1}"]
        with path.open("w", newline="") as fd:
            writer = csv.writer(fd)
            writer.writerow(header)
            for point, value in zip(coords, values, strict=True):
                row = [repr(float(x)) for x in point]
                for entry in value:
                    row += [repr(float(entry.real)), repr(float(entry.imag))]
                writer.writerow(row)
