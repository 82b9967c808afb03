import numpy as np
from numpy.typing import ArrayLike
import pytest
from pytest_structlog import StructuredLogCapture

from semikernel.aniso import AnisoStructure, bump_function
from semikernel.gallery import GalleryEntry, gallery_entry
from semikernel.grid import Grid, GridFunction, GridMismatchError, Lattice
from semikernel.solve import (
    apply_operator,
    kernel_weights,
    relative_difference,
    residual,
    solve_convolution,
    solve_fourier,
)
from semikernel.symbol import ComplexArray


class ConstantKernel:
    degree = 0.0

    def query(self, x: ArrayLike) -> ComplexArray:
        points = np.asarray(x, dtype=float)
        return np.ones(points.shape[:-1] + (1, 1), dtype=np.complex128)


class LinearKernel:
    degree = 1.0

    def query(self, x: ArrayLike) -> ComplexArray:
        points = np.asarray(x, dtype=float)
        return points[..., 0, np.newaxis, np.newaxis].astype(np.complex128)


def gaussian(entry: GalleryEntry, points: int = 64) -> GridFunction:
    structure = entry.spec.structure
    grid = Grid.anisotropic(structure, 2.5, points)
    return GridFunction.sample(
        grid, lambda x: np.exp(-structure.sigma(x)), m=entry.spec.m
    )


class TestApplyOperator:
    def test_constant_periodic(self, heat1d: GalleryEntry) -> None:
        grid = Grid((1.0, 1.0), (8, 8))
        u = GridFunction.sample(grid, lambda x: np.ones(x.shape[:-1]))
        result = apply_operator(heat1d.spec, u, Lattice.PERIODIC)
        assert result.max_norm() < 1e-14

    def test_second_derivative(self, heat1d: GalleryEntry) -> None:
        # d_x^2 sin(x) - d_t sin(x) = -sin(x)
        grid = Grid((np.pi, 1.0), (16, 8))
        u = GridFunction.sample(grid, lambda x: np.sin(x[..., 0]))
        result = apply_operator(heat1d.spec, u, Lattice.PERIODIC)
        np.testing.assert_allclose(result.values, -u.values, atol=1e-12)


class TestSolveFourier:
    def test_inverts_operator(self, heat1d: GalleryEntry) -> None:
        phi = gaussian(heat1d)
        f = apply_operator(heat1d.spec, phi)
        u = solve_fourier(heat1d.spec, f)
        np.testing.assert_allclose(u.values, phi.values, atol=1e-12)

    def test_residual(self, laplace2: GalleryEntry) -> None:
        phi = gaussian(laplace2)
        f = apply_operator(laplace2.spec, phi)
        u = solve_fourier(laplace2.spec, f)
        assert residual(laplace2.spec, u, f) < 1e-10 * f.max_norm()

    def test_periodic_residual(self, heat1d: GalleryEntry) -> None:
        phi = gaussian(heat1d)
        f = apply_operator(heat1d.spec, phi)
        u = solve_fourier(heat1d.spec, f)
        periodic = residual(heat1d.spec, u, f, lattice=Lattice.PERIODIC)
        assert periodic < 1e-6 * f.max_norm()
        scaled = residual(heat1d.spec, u * 1.01, f, lattice=Lattice.PERIODIC)
        assert scaled > 1e-3 * f.max_norm()

    def test_system(self) -> None:
        entry = gallery_entry("heat1d-system2")
        phi = gaussian(entry, points=32)
        u = solve_fourier(entry.spec, apply_operator(entry.spec, phi))
        assert u.m == 2
        assert relative_difference(u, phi) < 1e-10

    def test_source_not_decaying(
        self, log: StructuredLogCapture, heat1d: GalleryEntry
    ) -> None:
        grid = Grid((1.0, 1.0), (8, 8))
        f = GridFunction.sample(grid, lambda x: np.ones(x.shape[:-1]))
        solve_fourier(heat1d.spec, f)
        assert log.has(
            "source not decaying at boundary", magnitude=1.0, level="warning"
        )

    def test_source_compact(
        self, log: StructuredLogCapture, heat1d: GalleryEntry
    ) -> None:
        structure = heat1d.spec.structure
        grid = Grid.anisotropic(structure, 2.0, 32)
        f = GridFunction.sample(
            grid, bump_function(structure, [0.0, 0.0], 0.5)
        )
        solve_fourier(heat1d.spec, f)
        assert not log.has("source not decaying at boundary")


class TestKernelWeights:
    def test_constant_kernel(self, heat_structure: AnisoStructure) -> None:
        grid = Grid((1.0, 2.0), (16, 16))
        weights = list(
            kernel_weights(heat_structure, grid, ConstantKernel(), 1)
        )
        assert len(weights) == 9
        assert weights[0][1].shape == (32, 32, 1, 1)
        # the padded box has twice the extent along each axis
        total = sum(cell.sum() for _, cell in weights)
        assert total.real == pytest.approx(32.0, rel=1e-10)

    def test_linear_moments(self, heat_structure: AnisoStructure) -> None:
        # int y_0^2 over each cell, including the rough ones
        grid = Grid((1.0, 2.0), (16, 16))
        hx, ht = grid.spacing
        index = np.stack(
            np.meshgrid(
                np.fft.fftfreq(32) * 32, np.fft.fftfreq(32) * 32, indexing="ij"
            ),
            axis=-1,
        )
        centers = index * grid.spacing
        total = np.zeros((32, 32))
        for shift, cell in kernel_weights(
            heat_structure, grid, LinearKernel(), 1
        ):
            total += (cell[..., 0, 0] * (centers[..., 0] + shift[0])).real
        expected = hx * ht * (centers[..., 0] ** 2 + hx**2 / 12)
        np.testing.assert_allclose(total, expected, rtol=1e-9, atol=1e-14)


class TestSolveConvolution:
    def test_zero_source(self, heat1d: GalleryEntry) -> None:
        assert heat1d.oracle is not None
        f = GridFunction.zeros(Grid((1.0, 1.0), (16, 16)))
        u = solve_convolution(heat1d.spec, f, heat1d.oracle)
        assert u.max_norm() == 0.0

    def test_translation(self, heat1d: GalleryEntry) -> None:
        assert heat1d.oracle is not None
        phi = gaussian(heat1d, points=32)
        f = apply_operator(heat1d.spec, phi)
        shifted = GridFunction(f.grid, np.roll(f.values, 1, axis=0))
        u = solve_convolution(heat1d.spec, f, heat1d.oracle)
        v = solve_convolution(heat1d.spec, shifted, heat1d.oracle)
        np.testing.assert_allclose(
            v.values[1:], u.values[:-1], atol=1e-10 * u.max_norm()
        )

    @pytest.mark.slow
    def test_matches_fourier(self, heat1d: GalleryEntry) -> None:
        assert heat1d.oracle is not None
        phi = gaussian(heat1d, points=128)
        f = apply_operator(heat1d.spec, phi)
        u = solve_fourier(heat1d.spec, f)
        convolved = solve_convolution(heat1d.spec, f, heat1d.oracle)
        assert relative_difference(convolved, u) < 1e-3


class TestRelativeDifference:
    def test_equal(self) -> None:
        u = GridFunction.sample(Grid((1.0,), (8,)), lambda x: x[..., 0])
        assert relative_difference(u, u) == 0.0

    def test_zero_reference(self) -> None:
        grid = Grid((1.0,), (8,))
        u = GridFunction.sample(grid, lambda x: x[..., 0])
        assert relative_difference(u, GridFunction.zeros(grid)) == np.inf

    def test_grid_mismatch(self, heat1d: GalleryEntry) -> None:
        u = GridFunction.zeros(Grid((1.0, 1.0), (8, 8)))
        f = GridFunction.zeros(Grid((1.0, 2.0), (8, 8)))
        with pytest.raises(GridMismatchError):
            residual(heat1d.spec, u, f)
