"""Example operators: parabolic, elliptic and r-parabolic families."""

from collections.abc import Callable, Mapping, Sequence
import dataclasses
from fractions import Fraction
import itertools
import math

import numpy as np
from numpy.typing import ArrayLike

from .aniso import (
    FloatArray,
    MultiIndex,
    sphere_points,
    structure_from_orders,
)
from .symbol import (
    ComplexArray,
    InvalidOperatorError,
    OperatorSpec,
    check_semielliptic,
    operator_spec,
)
from .table import KernelSource

IsoFormula = Callable[[Fraction], tuple[Fraction, Fraction]]

# samples of the unit sphere for family conditions
DEFAULT_SAMPLES = 500


class ParabolicityError(Exception):
    """An eigenvalue of the spatial symbol isn't in the left half plane."""

    def __init__(self, point: Sequence[float], eigenvalue: complex) -> None:
        self.point = tuple(float(x) for x in point)
        self.eigenvalue = eigenvalue
        super().__init__(
            f"Parabolicity fails at x={list(self.point)}: eigenvalue "
            f"{eigenvalue:.6g} has nonnegative real part"
        )


class RootLocationError(Exception):
    """A root in the time variable isn't in the upper half plane."""

    def __init__(self, point: Sequence[float], root: complex) -> None:
        self.point = tuple(float(x) for x in point)
        self.root = root
        super().__init__(
            f"Root condition fails at x={list(self.point)}: root "
            f"{root:.6g} has imaginary part {root.imag:.3g}"
        )


class HeatKernel:
    """Closed form fundamental solution of Delta - d_t in R^n x R."""

    def __init__(self, n: int, m: int = 1) -> None:
        self.n = n
        self.m = m
        self.degree = float(-n)

    def query(self, x: ArrayLike) -> ComplexArray:
        points = np.asarray(x, dtype=float)
        space = points[..., :-1]
        time = points[..., -1]
        positive = time > 0
        safe = np.where(positive, time, 1.0)
        value = np.where(
            positive,
            -((4 * np.pi * safe) ** (-self.n / 2))
            * np.exp(-np.sum(space**2, axis=-1) / (4 * safe)),
            0.0,
        )
        return value[..., np.newaxis, np.newaxis] * np.eye(
            self.m, dtype=np.complex128
        )


@dataclasses.dataclass(frozen=True)
class GalleryEntry:
    """An example operator with its known isomorphism window."""

    name: str
    spec: OperatorSpec
    family: str
    #: whether |gamma| > l, so fundamental solution and window exist
    supported: bool
    iso_formula: IsoFormula | None = None
    oracle: KernelSource | None = None
    #: number of spatial variables, for families with a time variable
    space_dims: int = 0
    #: order in time, for r-parabolic operators
    time_order: int = 1

    def check(
        self, samples: int = DEFAULT_SAMPLES, seed: int = 0
    ) -> float:
        """Check the family condition, returning the sampled margin."""
        if self.family == "parabolic":
            return check_parabolicity(
                self.spec, self.space_dims, samples=samples, seed=seed
            )
        if self.family == "r-parabolic" and self.spec.m == 1:
            return check_root_location(
                self.spec,
                self.space_dims,
                self.time_order,
                samples=samples,
                seed=seed,
            )
        return math.inf


def _order(coeffs: Mapping[MultiIndex, ArrayLike]) -> int:
    orders = {sum(alpha) for alpha in coeffs}
    if len(orders) != 1:
        raise InvalidOperatorError(
            f"Multi-indices must all have the same length: {sorted(orders)}"
        )
    return orders.pop()


def _space_points(n: int, samples: int, seed: int) -> FloatArray:
    return sphere_points(n, samples, seed=seed)


def check_parabolicity(
    spec: OperatorSpec,
    space_dims: int,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> float:
    """Check Re lambda(x) < 0 for eigenvalues of the spatial symbol.

    Returns the sampled margin delta = -max Re lambda on |x| = 1.

    """
    points = _space_points(space_dims, samples, seed)
    full = np.concatenate([points, np.zeros((len(points), 1))], axis=-1)
    eigenvalues = np.linalg.eigvals(spec.symbol(full))
    real = eigenvalues.real.max(axis=-1)
    worst = int(np.argmax(real))
    if real[worst] >= 0:
        index = int(np.argmax(eigenvalues[worst].real))
        raise ParabolicityError(
            points[worst], complex(eigenvalues[worst, index])
        )
    return float(-real[worst])


def check_root_location(
    spec: OperatorSpec,
    space_dims: int,
    time_order: int,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> float:
    """Check that roots in t of the scalar symbol have Im t > 0.

    The symbol is normalized to be monic in t.  Returns the sampled
    margin delta = min Im t over |x| = 1.

    """
    points = _space_points(space_dims, samples, seed)
    coefficients = np.zeros((len(points), time_order + 1), dtype=complex)
    for alpha, matrix in spec.coeffs.items():
        power = alpha[-1]
        space = np.prod(points ** np.array(alpha[:-1]), axis=-1)
        coefficients[:, time_order - power] += (
            matrix[0, 0] * 1j ** sum(alpha) * space
        )
    margin = math.inf
    for point, poly in zip(points, coefficients, strict=True):
        roots = np.roots(poly / poly[0])
        lowest = roots[np.argmin(roots.imag)]
        if lowest.imag <= 0:
            raise RootLocationError(point, complex(lowest))
        margin = min(margin, float(lowest.imag))
    return margin


def _window(gamma_norm: int, ell: int) -> IsoFormula:
    def formula(p: Fraction) -> tuple[Fraction, Fraction]:
        share = Fraction(gamma_norm) / Fraction(p)
        return -share, gamma_norm - ell - share

    return formula


def make_parabolic(
    spatial_coeffs: Mapping[Sequence[int], ArrayLike],
    n: int,
    m: int = 1,
    name: str = "",
    check: bool = True,
) -> GalleryEntry:
    """Return sum A_alpha d_x^alpha - I d_t over R^n x R.

    With ``check``, parabolicity and semiellipticity are verified on
    samples.

    """
    keys = {tuple(alpha): value for alpha, value in spatial_coeffs.items()}
    if any(len(alpha) != n for alpha in keys):
        raise InvalidOperatorError(f"Multi-indices must have {n} entries")
    ell = _order(keys)
    structure = structure_from_orders((ell,) * n + (1,), m=m)
    coeffs: dict[Sequence[int], ArrayLike] = {
        alpha + (0,): value for alpha, value in keys.items()
    }
    coeffs[(0,) * n + (1,)] = -np.eye(m)
    spec = operator_spec(structure, coeffs, name=name)
    entry = GalleryEntry(
        name=name,
        spec=spec,
        family="parabolic",
        supported=True,
        iso_formula=_window(n + ell, ell),
        space_dims=n,
    )
    if check:
        entry.check()
        check_semielliptic(spec).require()
    return entry


def make_elliptic(
    coeffs: Mapping[Sequence[int], ArrayLike],
    n: int,
    m: int = 1,
    name: str = "",
) -> GalleryEntry:
    """Return the homogeneous operator sum A_alpha d^alpha on R^n.

    It's only supported for n > l.

    """
    keys = {tuple(alpha): value for alpha, value in coeffs.items()}
    if any(len(alpha) != n for alpha in keys):
        raise InvalidOperatorError(f"Multi-indices must have {n} entries")
    ell = _order(keys)
    structure = structure_from_orders((ell,) * n, m=m)
    spec = operator_spec(structure, keys, name=name)
    check_semielliptic(spec).require()
    supported = n > ell
    return GalleryEntry(
        name=name,
        spec=spec,
        family="elliptic",
        supported=supported,
        iso_formula=_window(n, ell) if supported else None,
    )


def make_r_parabolic(
    k: int,
    r: int,
    coeffs: Mapping[Sequence[int], ArrayLike],
    n: int,
    m: int = 1,
    name: str = "",
    check: bool = True,
) -> GalleryEntry:
    """Return sum A_(beta, k-j) d_x^beta d_t^(k-j) with |beta| = j r.

    Keys are full multi-indices (beta, k - j).  For scalar operators the
    roots in t are checked to lie in the upper half plane.

    """
    keys = {tuple(alpha): value for alpha, value in coeffs.items()}
    for alpha in keys:
        if len(alpha) != n + 1 or sum(alpha[:-1]) + r * alpha[-1] != k * r:
            raise InvalidOperatorError(
                f"Multi-index {alpha} isn't of the form (beta, k - j) with "
                f"|beta| = j r"
            )
    structure = structure_from_orders((k * r,) * n + (k,), m=m)
    spec = operator_spec(structure, keys, name=name)
    supported = n > (k - 1) * r
    entry = GalleryEntry(
        name=name,
        spec=spec,
        family="r-parabolic",
        supported=supported,
        iso_formula=_window(n + r, k * r) if supported else None,
        space_dims=n,
        time_order=k,
    )
    if check:
        entry.check()
        check_semielliptic(spec).require()
    return entry


def family_entry(spec: OperatorSpec, family: str | None) -> GalleryEntry:
    """Return an entry for an operator built outside the gallery.

    The structure orders must match the family: (l, ..., l, 1) for
    parabolic, equal orders for elliptic and (k r, ..., k r, k) for
    r-parabolic operators.  Without a family the entry is "generic".

    """
    structure = spec.structure
    orders = structure.orders
    ell = structure.ell
    supported = structure.gamma_norm > ell
    entry = GalleryEntry(
        name=spec.name,
        spec=spec,
        family=family or "generic",
        supported=supported,
    )
    if family is None:
        return entry
    space = orders[:-1]
    if family == "elliptic":
        if len(set(orders)) != 1:
            raise InvalidOperatorError(
                f"Elliptic operators need equal orders: {orders}"
            )
        formula = _window(len(orders), ell) if supported else None
        return dataclasses.replace(entry, iso_formula=formula)
    if family == "parabolic":
        if orders[-1] != 1 or len(orders) < 2 or len(set(space)) != 1:
            raise InvalidOperatorError(
                f"Parabolic operators need orders (l, ..., l, 1): {orders}"
            )
        return dataclasses.replace(
            entry,
            iso_formula=_window(len(space) + ell, ell),
            space_dims=len(space),
        )
    if family == "r-parabolic":
        k = orders[-1]
        if len(orders) < 2 or len(set(space)) != 1 or space[0] % k:
            raise InvalidOperatorError(
                "r-parabolic operators need orders (k r, ..., k r, k): "
                f"{orders}"
            )
        r = space[0] // k
        return dataclasses.replace(
            entry,
            iso_formula=_window(len(space) + r, ell) if supported else None,
            space_dims=len(space),
            time_order=k,
        )
    raise InvalidOperatorError(f"Unknown operator family: {family}")


def _laplacian(n: int) -> dict[Sequence[int], ArrayLike]:
    return {
        tuple(2 if j == k else 0 for j in range(n)): 1.0 for k in range(n)
    }


def _squared_laplacian(n: int) -> dict[MultiIndex, int]:
    """Coefficients of Delta^2 = sum 2!/beta! d^(2 beta) over |beta| = 2."""
    coeffs = {}
    for beta in itertools.product(range(3), repeat=n):
        if sum(beta) != 2:
            continue
        alpha = tuple(2 * b for b in beta)
        coeffs[alpha] = 2 // math.prod(math.factorial(b) for b in beta)
    return coeffs


def _heat1d() -> GalleryEntry:
    entry = make_parabolic({(2,): 1.0}, n=1, name="heat1d")
    return dataclasses.replace(entry, oracle=HeatKernel(1))


def _heat1d_system() -> GalleryEntry:
    entry = make_parabolic({(2,): np.eye(2)}, n=1, m=2, name="heat1d-system2")
    return dataclasses.replace(entry, oracle=HeatKernel(1, m=2))


def _backward_heat1d() -> GalleryEntry:
    return make_parabolic(
        {(2,): -1.0}, n=1, name="backward-heat1d", check=False
    )


def _rparab_k2r2n3() -> GalleryEntry:
    # -(d_t - Delta)^2 = -d_t^2 + 2 d_t Delta - Delta^2
    coeffs: dict[Sequence[int], ArrayLike] = {(0, 0, 0, 2): -1.0}
    for k in range(3):
        alpha = tuple(2 if j == k else 0 for j in range(3)) + (1,)
        coeffs[alpha] = 2.0
    for alpha, value in _squared_laplacian(3).items():
        coeffs[alpha + (0,)] = -float(value)
    return make_r_parabolic(2, 2, coeffs, n=3, name="rparab-k2r2n3")


GALLERY: dict[str, Callable[[], GalleryEntry]] = {
    "heat1d": _heat1d,
    "heat1d-system2": _heat1d_system,
    "laplace2": lambda: make_elliptic(_laplacian(2), n=2, name="laplace2"),
    "laplace3": lambda: make_elliptic(_laplacian(3), n=3, name="laplace3"),
    "biharmonic5": lambda: make_elliptic(
        _squared_laplacian(5), n=5, name="biharmonic5"
    ),
    "rparab-k2r2n3": _rparab_k2r2n3,
    "backward-heat1d": _backward_heat1d,
}


def gallery_entry(name: str) -> GalleryEntry:
    """Return the gallery entry with the given name."""
    try:
        factory = GALLERY[name]
    except KeyError:
        raise KeyError(f"Unknown gallery entry: {name}") from None
    return factory()
