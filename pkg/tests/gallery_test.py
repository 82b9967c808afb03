from fractions import Fraction
import math

import numpy as np
import pytest

from semikernel.gallery import (
    GALLERY,
    GalleryEntry,
    HeatKernel,
    ParabolicityError,
    RootLocationError,
    check_root_location,
    family_entry,
    gallery_entry,
    make_elliptic,
    make_parabolic,
    make_r_parabolic,
)
from semikernel.symbol import InvalidOperatorError


class TestHeatKernel:
    def test_values(self) -> None:
        kernel = HeatKernel(1)
        values = kernel.query([[0.0, 1.0], [2.0, 1.0], [1.0, -1.0]])
        assert values.shape == (3, 1, 1)
        np.testing.assert_allclose(
            values[:, 0, 0],
            [
                -((4 * math.pi) ** -0.5),
                -((4 * math.pi) ** -0.5) * math.exp(-1),
                0.0,
            ],
        )

    def test_system(self) -> None:
        values = HeatKernel(1, m=2).query([0.0, 1.0])
        np.testing.assert_allclose(values, values[0, 0] * np.eye(2))

    def test_degree(self) -> None:
        assert HeatKernel(3).degree == -3.0


class TestGallery:
    @pytest.mark.parametrize("name", sorted(GALLERY))
    def test_entries(self, name: str) -> None:
        entry = gallery_entry(name)
        assert entry.name == name
        assert entry.spec.name == name

    def test_unknown(self) -> None:
        with pytest.raises(KeyError) as err:
            gallery_entry("wave")
        assert "Unknown gallery entry: wave" in str(err.value)

    def test_heat(self, heat1d: GalleryEntry) -> None:
        assert heat1d.family == "parabolic"
        assert heat1d.spec.structure.orders == (2, 1)
        assert heat1d.supported
        assert heat1d.oracle is not None
        assert heat1d.check() == pytest.approx(1.0)
        assert heat1d.iso_formula is not None
        assert heat1d.iso_formula(Fraction(2)) == (
            Fraction(-3, 2),
            Fraction(-1, 2),
        )

    def test_backward_heat(self) -> None:
        entry = gallery_entry("backward-heat1d")
        with pytest.raises(ParabolicityError) as err:
            entry.check()
        assert err.value.eigenvalue.real == pytest.approx(1.0)
        assert "has nonnegative real part" in str(err.value)

    def test_laplace2_unsupported(self, laplace2: GalleryEntry) -> None:
        assert not laplace2.supported
        assert laplace2.iso_formula is None
        assert laplace2.check() == math.inf

    def test_laplace3(self, laplace3: GalleryEntry) -> None:
        assert laplace3.supported
        assert laplace3.iso_formula is not None
        assert laplace3.iso_formula(Fraction(2)) == (
            Fraction(-3, 2),
            Fraction(-1, 2),
        )

    def test_biharmonic(self) -> None:
        entry = gallery_entry("biharmonic5")
        assert entry.spec.structure.ell == 4
        # Delta^2 has symbol |x|^4
        np.testing.assert_allclose(
            entry.spec.symbol([1.0, 1.0, 0.0, 0.0, 0.0]), [[4.0]]
        )

    def test_r_parabolic(self) -> None:
        entry = gallery_entry("rparab-k2r2n3")
        assert entry.spec.structure.orders == (4, 4, 4, 2)
        assert entry.supported
        assert entry.check() == pytest.approx(1.0)
        assert entry.iso_formula is not None
        assert entry.iso_formula(Fraction(2)) == (
            Fraction(-5, 2),
            Fraction(-3, 2),
        )


class TestMakeOperators:
    def test_parabolic_wrong_length(self) -> None:
        with pytest.raises(InvalidOperatorError) as err:
            make_parabolic({(2, 0): 1.0}, n=1)
        assert str(err.value) == "Multi-indices must have 1 entries"

    def test_parabolic_mixed_orders(self) -> None:
        with pytest.raises(InvalidOperatorError):
            make_parabolic({(2,): 1.0, (1,): 1.0}, n=1)

    def test_parabolic_not_checked(self) -> None:
        entry = make_parabolic({(2,): -1.0}, n=1, check=False)
        assert entry.family == "parabolic"

    def test_parabolic_checked(self) -> None:
        with pytest.raises(ParabolicityError):
            make_parabolic({(2,): -1.0}, n=1)

    def test_elliptic_unsupported(self) -> None:
        entry = make_elliptic({(2,): 1.0}, n=1)
        assert not entry.supported

    def test_r_parabolic_wrong_index(self) -> None:
        with pytest.raises(InvalidOperatorError) as err:
            make_r_parabolic(2, 2, {(1, 1): 1.0}, n=1)
        assert "isn't of the form (beta, k - j)" in str(err.value)

    def test_root_location(self) -> None:
        # d_t^2 - d_x^4 has roots t = +-i x^2, one below the real axis
        entry = make_r_parabolic(
            2, 2, {(0, 2): 1.0, (4, 0): -1.0}, n=1, check=False
        )
        with pytest.raises(RootLocationError):
            check_root_location(entry.spec, 1, 2)


class TestFamilyEntry:
    def test_generic(self, heat1d: GalleryEntry) -> None:
        entry = family_entry(heat1d.spec, None)
        assert entry.family == "generic"
        assert entry.supported
        assert entry.iso_formula is None

    def test_parabolic(self, heat1d: GalleryEntry) -> None:
        entry = family_entry(heat1d.spec, "parabolic")
        assert entry.space_dims == 1
        assert entry.iso_formula is not None
        assert entry.iso_formula(Fraction(3, 2)) == (-2, -1)

    def test_elliptic(self, laplace3: GalleryEntry) -> None:
        entry = family_entry(laplace3.spec, "elliptic")
        assert entry.iso_formula is not None

    @pytest.mark.parametrize(
        "family,message",
        [
            ("elliptic", "Elliptic operators need equal orders"),
            ("hyperbolic", "Unknown operator family: hyperbolic"),
        ],
    )
    def test_invalid(
        self, heat1d: GalleryEntry, family: str, message: str
    ) -> None:
        with pytest.raises(InvalidOperatorError) as err:
            family_entry(heat1d.spec, family)
        assert message in str(err.value)

    def test_parabolic_orders(self, laplace2: GalleryEntry) -> None:
        with pytest.raises(InvalidOperatorError) as err:
            family_entry(laplace2.spec, "parabolic")
        assert "Parabolic operators need orders (l, ..., l, 1)" in str(
            err.value
        )
