from fractions import Fraction
import math

import numpy as np
import pytest

from semikernel.aniso import (
    AnisoStructure,
    CutoffSpec,
    DimensionError,
    DivergenceError,
    DomainError,
    ball_volume,
    bump_function,
    cutoff_build,
    finite_difference,
    k_kernel,
    monomial,
    radial_integral,
    shell_integral,
    shell_quadrature,
    smooth_step,
    sphere_points,
    structure_from_orders,
)


@pytest.fixture
def plane() -> AnisoStructure:
    """Isotropic structure of order 1 in R^2, where rho is |x|."""
    return structure_from_orders((1, 1))


class TestAnisoStructure:
    def test_weights(self, heat_structure: AnisoStructure) -> None:
        assert heat_structure.n == 2
        assert heat_structure.ell == 2
        assert heat_structure.gamma == (Fraction(1), Fraction(2))
        assert heat_structure.gamma_norm == 3

    def test_rational_weights(self) -> None:
        structure = structure_from_orders((4, 4, 4, 2))
        assert structure.gamma == (1, 1, 1, 2)
        assert structure_from_orders((3, 2)).gamma == (
            Fraction(1),
            Fraction(3, 2),
        )

    def test_no_orders(self) -> None:
        with pytest.raises(DimensionError):
            AnisoStructure(())

    @pytest.mark.parametrize("orders", [(0, 1), (2, -1)])
    def test_invalid_orders(self, orders: tuple[int, ...]) -> None:
        with pytest.raises(DomainError):
            AnisoStructure(orders)

    def test_invalid_system_size(self) -> None:
        with pytest.raises(DomainError):
            AnisoStructure((2,), m=0)

    def test_weight(self, heat_structure: AnisoStructure) -> None:
        assert heat_structure.weight((1, 1)) == 3
        assert heat_structure.weight((2, 0)) == heat_structure.ell

    def test_weight_wrong_length(self, heat_structure: AnisoStructure) -> None:
        with pytest.raises(DimensionError):
            heat_structure.weight((1,))

    def test_weight_negative(self, heat_structure: AnisoStructure) -> None:
        with pytest.raises(DomainError):
            heat_structure.weight((1, -1))

    def test_rho_dilation(self, heat_structure: AnisoStructure) -> None:
        rng = np.random.default_rng(1)
        x = rng.standard_normal((50, 2))
        np.testing.assert_allclose(
            heat_structure.rho(heat_structure.dilate(3.0, x)),
            3 * heat_structure.rho(x),
            rtol=1e-12,
        )

    def test_dilate_componentwise(
        self, heat_structure: AnisoStructure
    ) -> None:
        np.testing.assert_allclose(
            heat_structure.dilate(2.0, [1.0, 1.0]), [2.0, 4.0]
        )

    def test_dilate_invalid_factor(
        self, heat_structure: AnisoStructure
    ) -> None:
        with pytest.raises(DomainError):
            heat_structure.dilate(0.0, [1.0, 1.0])

    def test_points_wrong_dimension(
        self, heat_structure: AnisoStructure
    ) -> None:
        with pytest.raises(DimensionError):
            heat_structure.rho([1.0, 2.0, 3.0])

    def test_to_shell(self, heat_structure: AnisoStructure) -> None:
        rng = np.random.default_rng(2)
        shell = heat_structure.to_shell(rng.standard_normal((20, 2)))
        np.testing.assert_allclose(heat_structure.rho(shell), 1.0)

    def test_to_shell_origin(self, heat_structure: AnisoStructure) -> None:
        with pytest.raises(DomainError):
            heat_structure.to_shell([0.0, 0.0])

    def test_orbit_direction(self, heat_structure: AnisoStructure) -> None:
        x = np.array([[0.3, -2.0], [5.0, 0.0], [0.0, -0.01]])
        direction = heat_structure.orbit_direction(x)
        np.testing.assert_allclose(np.linalg.norm(direction, axis=-1), 1.0)
        np.testing.assert_allclose(
            heat_structure.to_shell(direction),
            heat_structure.to_shell(x),
            atol=1e-12,
        )

    def test_enumerate_indices(self, heat_structure: AnisoStructure) -> None:
        assert heat_structure.enumerate_indices(2) == [
            (0, 0),
            (0, 1),
            (1, 0),
            (2, 0),
        ]

    def test_enumerate_indices_negative(
        self, heat_structure: AnisoStructure
    ) -> None:
        assert heat_structure.enumerate_indices(-1) == []


def test_monomial() -> None:
    assert monomial((1, 2), [[2.0, 3.0]]) == pytest.approx([18.0])


class TestSpherePoints:
    def test_line(self) -> None:
        np.testing.assert_array_equal(
            sphere_points(1, 10), [[-1.0], [1.0]]
        )

    @pytest.mark.parametrize("n", [2, 3, 5])
    def test_unit_norm(self, n: int) -> None:
        points = sphere_points(n, 64)
        assert points.shape == (64, n)
        np.testing.assert_allclose(np.linalg.norm(points, axis=-1), 1.0)

    def test_seeded(self) -> None:
        np.testing.assert_array_equal(
            sphere_points(4, 30, seed=3), sphere_points(4, 30, seed=3)
        )

    def test_too_few(self) -> None:
        with pytest.raises(DomainError):
            sphere_points(2, 1)


class TestCutoff:
    def test_smooth_step(self) -> None:
        np.testing.assert_allclose(
            smooth_step([-1.0, 0.0, 0.5, 1.0, 2.0]),
            [0.0, 0.0, 0.5, 1.0, 1.0],
        )

    def test_cutoff_values(self, heat_structure: AnisoStructure) -> None:
        cutoff = cutoff_build(heat_structure, CutoffSpec(1.0, 2.0))
        direction = heat_structure.to_shell([1.0, 1.0])
        radii = np.array([0.5, 1.0, 1.5, 2.0, 3.0])
        values = cutoff(heat_structure.dilate(radii, direction))
        assert values[0] == 1.0
        assert values[1] == 1.0
        assert 0 < values[2] < 1
        assert values[3] == 0.0
        assert values[4] == 0.0

    def test_invalid_radii(self) -> None:
        with pytest.raises(DomainError):
            CutoffSpec(2.0, 1.0)

    def test_bump(self, heat_structure: AnisoStructure) -> None:
        center = np.array([0.5, -0.5])
        bump = bump_function(heat_structure, center, 0.5)
        shell = heat_structure.to_shell([1.0, 2.0])
        assert bump(center) == pytest.approx(1.0)
        assert bump(
            center + heat_structure.dilate(0.5, shell)
        ) == pytest.approx(math.exp(-1))

    def test_bump_invalid_width(self, heat_structure: AnisoStructure) -> None:
        with pytest.raises(DomainError):
            bump_function(heat_structure, [0.0, 0.0], 0.0)


def test_finite_difference() -> None:
    value = finite_difference(
        lambda x: x[..., 0] ** 3 * x[..., 1], [2.0, 5.0], (2, 1), 1e-2
    )
    assert float(value) == pytest.approx(12.0, rel=1e-6)


class TestShellIntegral:
    def test_annulus(self, plane: AnisoStructure) -> None:
        assert shell_integral(plane, 1.0, 2.0, 0.0) == pytest.approx(
            3 * math.pi, rel=1e-7
        )

    def test_ball_volume(self, plane: AnisoStructure) -> None:
        assert ball_volume(plane) == pytest.approx(math.pi, rel=1e-8)

    def test_ball_volume_line(self) -> None:
        assert ball_volume(structure_from_orders((1,))) == pytest.approx(2.0)

    def test_scaling(self, heat_structure: AnisoStructure) -> None:
        base = shell_integral(heat_structure, 1.0, 2.0, 0.5)
        scaled = shell_integral(heat_structure, 2.0, 4.0, 0.5)
        assert scaled == pytest.approx(2**3.5 * base, rel=1e-6)

    def test_tail(self, plane: AnisoStructure) -> None:
        # integral of |x|^-3 over |x| >= 1 is 2 pi
        assert shell_integral(plane, 1.0, math.inf, -3.0) == pytest.approx(
            2 * math.pi, rel=1e-7
        )

    def test_ball_with_singularity(self, plane: AnisoStructure) -> None:
        # integral of |x|^-1 over |x| <= 1 is 2 pi
        assert shell_integral(plane, 0.0, 1.0, -1.0) == pytest.approx(
            2 * math.pi, rel=1e-7
        )

    @pytest.mark.parametrize(
        "r,R,s",
        [(1.0, math.inf, -2.0), (0.0, 1.0, -2.0), (0.0, math.inf, -3.0)],
    )
    def test_divergent(
        self, plane: AnisoStructure, r: float, R: float, s: float
    ) -> None:
        with pytest.raises(DivergenceError):
            shell_integral(plane, r, R, s)

    def test_invalid_radii(self, plane: AnisoStructure) -> None:
        with pytest.raises(DomainError):
            shell_integral(plane, 2.0, 1.0, 0.0)

    def test_radial_integral(self, plane: AnisoStructure) -> None:
        value = radial_integral(plane, lambda tau: math.exp(-(tau**2)), 0, 10)
        assert value == pytest.approx(math.pi, rel=1e-7)


class TestShellQuadrature:
    def test_total_weight(self, plane: AnisoStructure) -> None:
        rule = shell_quadrature(plane)
        assert rule.weights.sum() == pytest.approx(2 * math.pi)

    def test_points_on_shell(self, heat_structure: AnisoStructure) -> None:
        rule = shell_quadrature(heat_structure, 12)
        np.testing.assert_allclose(heat_structure.rho(rule.points), 1.0)

    def test_gaussian(self, heat_structure: AnisoStructure) -> None:
        # integral of exp(-sigma) = int exp(-x^4) dx int exp(-t^2) dt
        rule = shell_quadrature(heat_structure, 24)
        expected = 2 * math.gamma(5 / 4) * math.sqrt(math.pi)
        # in polar form the radial integral is Gamma(3/4) / 4
        total = rule.weights.sum() * math.gamma(3 / 4) / 4
        assert total == pytest.approx(expected, rel=1e-8)


class TestKKernel:
    def test_invalid_exponents(self, plane: AnisoStructure) -> None:
        with pytest.raises(DomainError):
            k_kernel(plane, [1.0, 0.0], 0.0, 0.0)

    def test_origin_plane(self, plane: AnisoStructure) -> None:
        # 2 pi B(1, 1/2)
        assert k_kernel(plane, [0.0, 0.0], -1.0, -1.5) == pytest.approx(
            4 * math.pi, rel=1e-6
        )

    def test_origin_heat(self, heat_structure: AnisoStructure) -> None:
        # |gamma| |B_1| B(2, 1/2), with B(2, 1/2) = 4/3
        value = k_kernel(heat_structure, [0.0, 0.0], -1.0, -2.5)
        assert value == pytest.approx(
            4 * ball_volume(heat_structure), rel=1e-6
        )

    def test_decay(self, heat_structure: AnisoStructure) -> None:
        # K(x) is comparable to (1 + rho(x))^(xi + eta + |gamma|)
        xi, eta = -1.0, -2.5
        exponent = xi + eta + 3
        shell = heat_structure.to_shell([0.6, -0.8])
        constant = k_kernel(heat_structure, [0.0, 0.0], xi, eta)
        for radius in (0.5, 1.0, 2.0, 4.0, 8.0):
            x = heat_structure.dilate(radius, shell)
            value = k_kernel(heat_structure, x, xi, eta)
            assert value > 0
            ratio = value / (constant * (1 + radius) ** exponent)
            assert 0.1 < ratio < 10
