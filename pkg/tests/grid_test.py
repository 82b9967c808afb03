import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from semikernel.aniso import AnisoStructure, DimensionError, DomainError
from semikernel.grid import Grid, GridFunction, GridMismatchError, Lattice


@pytest.fixture
def line() -> Grid:
    return Grid((math.pi,), (32,))


class TestGrid:
    @pytest.mark.parametrize(
        "extents,points", [((1.0,), (8, 8)), ((), ())]
    )
    def test_dimension_mismatch(
        self, extents: tuple[float, ...], points: tuple[int, ...]
    ) -> None:
        with pytest.raises(DimensionError):
            Grid(extents, points)

    def test_invalid_extent(self) -> None:
        with pytest.raises(DomainError) as err:
            Grid((1.0, 0.0), (8, 8))
        assert "Extents must be positive" in str(err.value)

    def test_too_few_points(self) -> None:
        with pytest.raises(DomainError) as err:
            Grid((1.0,), (4,))
        assert "At least 8 points per axis" in str(err.value)

    def test_anisotropic(self, heat_structure: AnisoStructure) -> None:
        grid = Grid.anisotropic(heat_structure, 2.0, 16)
        assert grid.extents == (2.0, 4.0)
        assert grid.points == (16, 16)

    def test_spacing(self, line: Grid) -> None:
        np.testing.assert_allclose(line.spacing, [2 * math.pi / 32])
        assert line.cell_volume == pytest.approx(2 * math.pi / 32)

    def test_axes(self) -> None:
        grid = Grid((1.0,), (8,))
        np.testing.assert_allclose(
            grid.axes()[0], np.arange(-1.0, 1.0, 0.25)
        )

    def test_coordinates(self, heat_structure: AnisoStructure) -> None:
        grid = Grid.anisotropic(heat_structure, 1.0, 8)
        coords = grid.coordinates()
        assert coords.shape == (8, 8, 2)
        np.testing.assert_allclose(coords[2, 5], [-0.5, 0.25])

    def test_interior(self) -> None:
        grid = Grid((1.0,), (8,))
        index = grid.interior(0.5)
        np.testing.assert_allclose(
            grid.axes()[0][index], [-0.5, -0.25, 0.0, 0.25, 0.5]
        )

    def test_dilated(self, heat_structure: AnisoStructure) -> None:
        grid = Grid((1.0, 1.0), (8, 8)).dilated(heat_structure, 2.0)
        assert grid.extents == (2.0, 4.0)

    def test_shifted_frequencies_avoid_zero(self, line: Grid) -> None:
        frequencies = line.frequencies(Lattice.SHIFTED)
        assert np.min(np.abs(frequencies)) == pytest.approx(0.5)

    def test_periodic_frequencies(self, line: Grid) -> None:
        frequencies = line.frequencies(Lattice.PERIODIC)[:, 0]
        assert frequencies[0] == 0.0
        assert frequencies[1] == pytest.approx(1.0)
        assert frequencies[16] == 0.0


class TestGridFunction:
    def test_wrong_shape(self, line: Grid) -> None:
        with pytest.raises(DimensionError):
            GridFunction(line, np.zeros((16, 1)))

    def test_non_finite(self, line: Grid) -> None:
        values = np.zeros((32, 1))
        values[3] = np.inf
        with pytest.raises(DomainError):
            GridFunction(line, values)

    def test_sample_scalar(self, line: Grid) -> None:
        func = GridFunction.sample(line, lambda x: x[..., 0], m=2)
        assert func.values.shape == (32, 2)
        np.testing.assert_array_equal(func.values[:, 0], func.values[:, 1])

    def test_arithmetic(self, line: Grid) -> None:
        func = GridFunction.sample(line, lambda x: np.cos(x[..., 0]))
        total = 2 * (func + func) - func
        np.testing.assert_allclose(total.values, 3 * func.values)

    def test_grid_mismatch(self, line: Grid) -> None:
        first = GridFunction.zeros(line)
        second = GridFunction.zeros(Grid((1.0,), (32,)))
        with pytest.raises(GridMismatchError) as err:
            first + second
        assert str(err.value).startswith("Grid mismatch:")

    def test_components_mismatch(self, line: Grid) -> None:
        with pytest.raises(DimensionError):
            GridFunction.zeros(line) - GridFunction.zeros(line, m=2)

    def test_norms(self) -> None:
        grid = Grid((1.0,), (8,))
        func = GridFunction(grid, np.full((8, 2), 3 + 4j))
        assert func.max_norm() == pytest.approx(5.0)
        np.testing.assert_allclose(func.pointwise_norm(), math.sqrt(50))

    def test_derivative_periodic(self, line: Grid) -> None:
        func = GridFunction.sample(line, lambda x: np.sin(x[..., 0]))
        derivative = func.derivative((1,), Lattice.PERIODIC)
        np.testing.assert_allclose(
            derivative.values[:, 0],
            np.cos(line.axes()[0]),
            atol=1e-12,
        )

    def test_derivative_shifted(self, line: Grid) -> None:
        # sin(x / 2) is antiperiodic on [-pi, pi)
        func = GridFunction.sample(line, lambda x: np.sin(x[..., 0] / 2))
        derivative = func.derivative((2,))
        np.testing.assert_allclose(
            derivative.values[:, 0],
            -np.sin(line.axes()[0] / 2) / 4,
            atol=1e-12,
        )

    def test_derivative_mixed(self) -> None:
        grid = Grid((math.pi, math.pi), (16, 16))
        func = GridFunction.sample(
            grid, lambda x: np.sin(x[..., 0]) * np.cos(2 * x[..., 1])
        )
        derivative = func.derivative((1, 1), Lattice.PERIODIC)
        x, y = np.meshgrid(*grid.axes(), indexing="ij")
        np.testing.assert_allclose(
            derivative.values[..., 0],
            -2 * np.cos(x) * np.sin(2 * y),
            atol=1e-11,
        )

    def test_derivative_wrong_index(self, line: Grid) -> None:
        with pytest.raises(DimensionError):
            GridFunction.zeros(line).derivative((1, 0))

    def test_boundary_magnitude(self) -> None:
        grid = Grid((1.0,), (8,))
        func = GridFunction.sample(grid, lambda x: x[..., 0])
        assert func.boundary_magnitude() == pytest.approx(1.0)

    def test_save_load(self, tmp_path: Path) -> None:
        grid = Grid((1.0, 2.0), (8, 16))
        rng = np.random.default_rng(0)
        values = rng.standard_normal((8, 16, 2)) + 1j * rng.standard_normal(
            (8, 16, 2)
        )
        path = tmp_path / "func.grid"
        GridFunction(grid, values).save(path)
        loaded = GridFunction.load(path)
        assert loaded.grid == grid
        np.testing.assert_array_equal(loaded.values, values)

    def test_load_invalid_header(self, tmp_path: Path) -> None:
        path = tmp_path / "func.grid"
        path.write_bytes(b"not json\n")
        with pytest.raises(DomainError) as err:
            GridFunction.load(path)
        assert "Invalid grid function header" in str(err.value)

    def test_load_unsupported_version(self, tmp_path: Path) -> None:
        path = tmp_path / "func.grid"
        path.write_bytes(json.dumps({"format-version": 9}).encode() + b"\n")
        with pytest.raises(DomainError) as err:
            GridFunction.load(path)
        assert "format version: 9" in str(err.value)

    def test_load_truncated(self, tmp_path: Path) -> None:
        path = tmp_path / "func.grid"
        GridFunction.zeros(Grid((1.0,), (8,))).save(path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(DomainError) as err:
            GridFunction.load(path)
        assert "doesn't match shape (8, 1)" in str(err.value)

    def test_export_csv(self, tmp_path: Path) -> None:
        grid = Grid((1.0, 1.0), (8, 8))
        func = GridFunction.sample(grid, lambda x: x[..., 0] + 1j * x[..., 1])
        path = tmp_path / "slice.csv"
        func.export_csv(path, fixed={1: 4})
        with path.open() as fd:
            rows = list(csv.reader(fd))
        assert rows[0] == ["x1", "x2", "re1", "im1"]
        assert len(rows) == 9
        assert [float(value) for value in rows[1]] == [-1.0, 0.0, -1.0, 0.0]

    def test_export_csv_too_many_axes(self, tmp_path: Path) -> None:
        func = GridFunction.zeros(Grid((1.0,) * 3, (8,) * 3))
        with pytest.raises(DimensionError):
            func.export_csv(tmp_path / "slice.csv")
