"""Solvers for Lu = f on grids."""

from collections.abc import Iterator
import functools
import math
import typing as t

import numpy as np
from numpy.typing import NDArray
from scipy import fft, special
import structlog

from .aniso import AnisoStructure, FloatArray
from .grid import Grid, GridFunction, Lattice
from .symbol import ComplexArray, OperatorSpec
from .table import KernelSource

# sources larger than this at the box faces, relative to their maximum,
# break the free space approximation
BOUNDARY_DECAY = 1e-10

# Gauss-Legendre nodes per axis of each convolution cell
_CELL_POINTS = 3
# Gauss-Legendre nodes per axis on boxes of rough cells
_BOX_POINTS = 3
# boxes with some size_k / rho(center)^gamma_k above this are halved
_SMOOTH_RATIO = 0.1
# halvings of boxes touching the singularity
_MAX_DEPTH = 48


def _multiply(matrices: ComplexArray, vectors: ComplexArray) -> ComplexArray:
    return t.cast(
        ComplexArray, np.einsum("...ij,...j->...i", matrices, vectors)
    )


def apply_operator(
    spec: OperatorSpec,
    u: GridFunction,
    lattice: Lattice = Lattice.SHIFTED,
    workers: int | None = None,
) -> GridFunction:
    """Return sum A_alpha d^alpha u with spectral derivatives.

    The default lattice matches ``solve_fourier``, so the two are inverse
    to rounding.  Functions that don't vanish at the faces, like
    constants, need the periodic lattice.

    """
    grid = u.grid
    symbol = spec.symbol(grid.frequencies(lattice))
    coeffs = grid.transform(u.values, lattice, workers)
    values = grid.inverse_transform(
        _multiply(symbol, coeffs), lattice, workers
    )
    return GridFunction(grid, values)


def _check_source(
    f: GridFunction, logger: structlog.stdlib.BoundLogger
) -> float:
    magnitude = f.boundary_magnitude()
    peak = f.max_norm()
    if magnitude > BOUNDARY_DECAY * peak:
        logger.warning(
            "source not decaying at boundary",
            magnitude=magnitude,
            peak=peak,
        )
    return magnitude


def solve_fourier(
    spec: OperatorSpec,
    f: GridFunction,
    workers: int | None = None,
    logger: structlog.stdlib.BoundLogger | None = None,
) -> GridFunction:
    """Return Sf, dividing Fourier coefficients by the symbol.

    Coefficients live on the shifted lattice, which never contains the
    frequency where L vanishes.

    """
    if logger is None:
        logger = structlog.get_logger()
    grid = f.grid
    _check_source(f, logger)
    inverse = spec.inverse_symbol(grid.frequencies(Lattice.SHIFTED))
    coeffs = grid.transform(f.values, Lattice.SHIFTED, workers)
    values = grid.inverse_transform(
        _multiply(inverse, coeffs), Lattice.SHIFTED, workers
    )
    return GridFunction(grid, values)


class _CellRule(t.NamedTuple):
    """Tensor Gauss-Legendre rule on the unit cell [-1/2, 1/2]^n."""

    points: FloatArray
    weights: FloatArray


def _cell_rule(n: int, count: int) -> _CellRule:
    roots, weights = special.roots_legendre(count)
    points = np.stack(
        np.meshgrid(*([roots / 2] * n), indexing="ij"), axis=-1
    ).reshape(-1, n)
    tensor = functools.reduce(np.multiply.outer, [weights / 2] * n)
    return _CellRule(points, np.ravel(tensor))


def _lagrange_basis(nodes: FloatArray, s: FloatArray) -> FloatArray:
    """Return the Lagrange polynomials of the nodes at s, shape (P, n, q)."""
    basis = np.ones(s.shape + (len(nodes),))
    for e, node in enumerate(nodes):
        for j, other in enumerate(nodes):
            if j != e:
                basis[..., e] *= (s - other) / (node - other)
    return basis


def _tensor_basis(nodes: FloatArray, s: FloatArray) -> FloatArray:
    """Return products of Lagrange polynomials over axes, shape (P, q^n)."""
    basis = _lagrange_basis(nodes, s)
    result = basis[:, 0, :]
    for axis in range(1, s.shape[-1]):
        result = result[:, :, np.newaxis] * basis[:, axis, np.newaxis, :]
        result = result.reshape(len(s), -1)
    return result


def _roughness(
    structure: AnisoStructure, centers: FloatArray, sizes: FloatArray
) -> FloatArray:
    """Return size_k / rho(c)^gamma_k per axis, infinite at the origin."""
    radius = structure.rho(centers)[..., np.newaxis]
    with np.errstate(divide="ignore"):
        return t.cast(FloatArray, sizes / radius**structure.gamma_array)


def _split(
    centers: FloatArray,
    sizes: FloatArray,
    axes: NDArray[np.bool_],
    owners: NDArray[np.intp],
) -> tuple[FloatArray, FloatArray, NDArray[np.intp]]:
    """Halve boxes along the selected axes."""
    for axis in range(centers.shape[-1]):
        chosen = axes[:, axis]
        quarter = sizes[chosen, axis] / 4
        low = centers[chosen]
        low[:, axis] -= quarter
        high = centers[chosen]
        high[:, axis] += quarter
        half = sizes[chosen]
        half[:, axis] /= 2
        centers = np.concatenate([centers[~chosen], low, high])
        sizes = np.concatenate([sizes[~chosen], half, half])
        owners = np.concatenate(
            [owners[~chosen], owners[chosen], owners[chosen]]
        )
        axes = np.concatenate([axes[~chosen], axes[chosen], axes[chosen]])
    return centers, sizes, owners


def _near_rule(
    structure: AnisoStructure, centers: FloatArray, spacing: FloatArray
) -> tuple[FloatArray, FloatArray, NDArray[np.intp]]:
    """Return points, weights and owning cells of rules on rough cells.

    Boxes are halved along each axis where they are large compared to the
    quasi-distance of their center, until the kernel is smooth on them.
    Boxes touching the singular origin are always halved, and dropped
    after the maximum depth.

    """
    n = structure.n
    rule = _cell_rule(n, _BOX_POINTS)
    sizes = np.tile(spacing, (len(centers), 1))
    owners = np.arange(len(centers))
    points = []
    weights = []
    owned = []
    for _ in range(_MAX_DEPTH):
        if not len(centers):
            break
        touching = np.all(np.abs(centers) <= sizes / 2, axis=-1)
        rough = _roughness(structure, centers, sizes) > _SMOOTH_RATIO
        rough |= touching[:, np.newaxis]
        smooth = ~np.any(rough, axis=-1)
        points.append(
            (
                centers[smooth, np.newaxis, :]
                + rule.points * sizes[smooth, np.newaxis, :]
            ).reshape(-1, n)
        )
        weights.append(
            np.outer(np.prod(sizes[smooth], axis=-1), rule.weights).ravel()
        )
        owned.append(np.repeat(owners[smooth], len(rule.weights)))
        centers, sizes, owners = _split(
            centers[~smooth], sizes[~smooth], rough[~smooth], owners[~smooth]
        )
    return (
        np.concatenate(points),
        np.concatenate(weights),
        np.concatenate(owned),
    )


def _offset_index(grid: Grid) -> NDArray[np.intp]:
    """Return cell indices in FFT order over twice the grid points."""
    counts = [2 * count for count in grid.points]
    return np.stack(
        np.meshgrid(
            *(np.rint(fft.fftfreq(c) * c) for c in counts), indexing="ij"
        ),
        axis=-1,
    ).astype(np.intp)


def kernel_weights(
    structure: AnisoStructure, grid: Grid, kernel: KernelSource, m: int
) -> Iterator[tuple[FloatArray, ComplexArray]]:
    """Yield product quadrature weights of the kernel on the offset grid.

    Offsets are j h, with j in FFT order over twice the grid points per
    axis, so convolving a zero padded source doesn't wrap around.  The
    integral of F(y) g(y) over the cell at c is approximated by
    sum_e w_e(c) g(c + e h), e running over the Gauss-Legendre nodes of
    the cell scaled to unit width.  One (e h, w_e) pair is yielded per
    node.

    Where the kernel is smooth on the cell, w_e are the Gauss weights
    times F(c + e h).  On rough cells near the singularity they are the
    integrals of F against the Lagrange polynomials of the nodes, which
    match the moments of F up to degree 2 in each variable.

    """
    spacing = grid.spacing
    index = _offset_index(grid)
    offsets = index * spacing
    rule = _cell_rule(grid.n, _CELL_POINTS)
    rough = np.any(
        _roughness(structure, offsets, spacing) > _SMOOTH_RATIO, axis=-1
    )
    near = offsets[rough]
    points, volumes, owners = _near_rule(structure, near, spacing)
    nodes = special.roots_legendre(_CELL_POINTS)[0] / 2
    basis = _tensor_basis(nodes, (points - near[owners]) / spacing)
    values = kernel.query(points)
    near_weights = np.zeros(
        (len(near), len(rule.weights), m, m), dtype=np.complex128
    )
    np.add.at(
        near_weights,
        owners,
        np.einsum("p,pe,pij->peij", volumes, basis, values),
    )
    far = offsets[~rough]
    for e, (node, weight) in enumerate(
        zip(rule.points, rule.weights, strict=True)
    ):
        shift = node * spacing
        weights = np.zeros(index.shape[:-1] + (m, m), dtype=np.complex128)
        weights[~rough] = kernel.query(far + shift) * (
            weight * grid.cell_volume
        )
        weights[rough] = near_weights[:, e]
        yield shift, weights


def kernel_transfer(
    structure: AnisoStructure,
    grid: Grid,
    kernel: KernelSource,
    m: int,
    workers: int | None = None,
) -> ComplexArray:
    """Return the multiplier of the padded convolution in Fourier space.

    Each node weight is combined with the phase shifting the source by the
    node offset, the source being interpolated between grid points by its
    Fourier series.

    """
    counts = [2 * count for count in grid.points]
    frequencies = np.stack(
        np.meshgrid(
            *(
                2 * math.pi * fft.fftfreq(count, h)
                for count, h in zip(counts, grid.spacing, strict=True)
            ),
            indexing="ij",
        ),
        axis=-1,
    )
    axes = tuple(range(grid.n))
    transfer = np.zeros(tuple(counts) + (m, m), dtype=np.complex128)
    for shift, weights in kernel_weights(structure, grid, kernel, m):
        phase = np.exp(-1j * (frequencies @ shift))
        transfer += (
            fft.fftn(weights, axes=axes, workers=workers)
            * phase[..., np.newaxis, np.newaxis]
        )
    return transfer


def solve_convolution(
    spec: OperatorSpec,
    f: GridFunction,
    kernel: KernelSource,
    workers: int | None = None,
    logger: structlog.stdlib.BoundLogger | None = None,
) -> GridFunction:
    """Return F * f by discrete convolution, with f zero padded.

    The source is taken as zero outside the box, so the result is the
    free space convolution of the kernel with the truncated source.

    """
    if logger is None:
        logger = structlog.get_logger()
    grid = f.grid
    _check_source(f, logger)
    transfer = kernel_transfer(
        spec.structure, grid, kernel, spec.m, workers=workers
    )
    axes = tuple(range(grid.n))
    padded = [2 * count for count in grid.points]
    source_coeffs = fft.fftn(f.values, s=padded, axes=axes, workers=workers)
    values = fft.ifftn(
        _multiply(transfer, source_coeffs), axes=axes, workers=workers
    )
    crop = tuple(slice(0, count) for count in grid.points)
    return GridFunction(grid, values[crop])


def residual(
    spec: OperatorSpec,
    u: GridFunction,
    f: GridFunction,
    interior: float = 0.8,
    lattice: Lattice = Lattice.SHIFTED,
) -> float:
    """Return the max norm of Lu - f on the interior of the box.

    The shifted lattice matches solutions of ``solve_fourier``, which need
    not decay at the faces.  For decaying u, the periodic lattice gives a
    check independent of the solver.

    """
    u.check_grid(f)
    difference = apply_operator(spec, u, lattice) - f
    values = np.abs(difference.values[u.grid.interior(interior)])
    return float(np.max(values, initial=0.0))


def relative_difference(
    first: GridFunction, second: GridFunction, interior: float = 0.8
) -> float:
    """Return max |first - second| / max |second| on the interior."""
    first.check_grid(second)
    region = first.grid.interior(interior)
    difference = np.max(np.abs((first - second).values[region]))
    scale = np.max(np.abs(second.values[region]))
    if scale == 0:
        return math.inf if difference > 0 else 0.0
    return float(difference / scale)
