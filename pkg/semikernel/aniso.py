"""Anisotropic calculus for quasi-homogeneous structures."""

from collections.abc import Callable, Sequence
import dataclasses
from fractions import Fraction
from functools import cached_property, lru_cache
import itertools
import math
import typing as t

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, special

#: A multi-index, with one nonnegative entry per coordinate
MultiIndex = tuple[int, ...]

FloatArray = NDArray[np.float64]

# bisection steps for locating the Euclidean sphere along a dilation orbit
_ORBIT_BISECTION_STEPS = 90


class DimensionError(Exception):
    """Dimensions of an argument don't match the structure."""


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class DivergenceError(Exception):
    """An integral of a power of rho over a shell diverges."""

    def __init__(
        self, r: float, R: float, s: float, gamma_norm: Fraction
    ) -> None:
        super().__init__(
            f"Integral of rho^{s} over {r} <= rho <= {R} diverges "
            f"(gamma norm {gamma_norm})"
        )


def as_fraction(value: int | float | str | Fraction) -> Fraction:
    """Return a value as an exact rational."""
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    return Fraction(value)


@dataclasses.dataclass(frozen=True)
class AnisoStructure:
    """Orders of differentiation and the weights derived from them.

    ``gamma`` holds exact rationals, so anisotropic orders of multi-indices
    are compared exactly.  Point arguments are arrays whose last axis has
    length ``n``; all leading axes are broadcast.

    """

    orders: tuple[int, ...]
    m: int = 1

    def __post_init__(self) -> None:
        if not self.orders:
            raise DimensionError("At least one order is required")
        if any(int(order) != order or order < 1 for order in self.orders):
            raise DomainError(
                f"Orders must be positive integers: {list(self.orders)}"
            )
        if self.m < 1:
            raise DomainError(f"System size must be positive: {self.m}")

    @property
    def n(self) -> int:
        """Spatial dimension."""
        return len(self.orders)

    @cached_property
    def ell(self) -> int:
        """Order of the operator."""
        return max(self.orders)

    @cached_property
    def gamma(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(self.ell, order) for order in self.orders)

    @cached_property
    def gamma_norm(self) -> Fraction:
        """Sum of the weights, the homogeneous dimension."""
        return sum(self.gamma, Fraction(0))

    @cached_property
    def gamma_array(self) -> FloatArray:
        return np.array([float(g) for g in self.gamma])

    @cached_property
    def _exponents(self) -> NDArray[np.int64]:
        return np.array([2 * order for order in self.orders])

    def weight(self, alpha: Sequence[int]) -> Fraction:
        """Return the anisotropic order alpha . gamma."""
        self._check_index(alpha)
        return sum(
            (a * g for a, g in zip(alpha, self.gamma, strict=True)),
            Fraction(0),
        )

    def sigma(self, x: ArrayLike) -> FloatArray:
        points = self.points(x)
        return np.sum(points**self._exponents, axis=-1)

    def rho(self, x: ArrayLike) -> FloatArray:
        """Return the anisotropic weight sigma(x)^(1/2l)."""
        return self.sigma(x) ** (1.0 / (2 * self.ell))

    def dilate(self, factor: ArrayLike, x: ArrayLike) -> FloatArray:
        """Return t^gamma x, componentwise t^gamma_k x_k."""
        scale = np.asarray(factor, dtype=float)
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise DomainError("Dilation factor must be positive")
        return scale[..., np.newaxis] ** self.gamma_array * self.points(x)

    def to_shell(self, x: ArrayLike) -> FloatArray:
        """Return the point of the unit shell on the dilation orbit of x."""
        points = self.points(x)
        radius = self.rho(points)
        if np.any(radius == 0):
            raise DomainError("The origin has no dilation orbit")
        return self.dilate(1.0 / radius, points)

    def orbit_direction(self, x: ArrayLike) -> FloatArray:
        """Return the Euclidean unit vector on the dilation orbit of x.

        Each orbit crosses the Euclidean sphere exactly once, since
        |t^gamma x| increases with t.

        """
        points = self.points(x)
        if np.any(self.sigma(points) == 0):
            raise DomainError("The origin has no dilation orbit")
        gamma = self.gamma_array
        with np.errstate(divide="ignore"):
            logs = np.log(points**2)
            bounds = np.where(
                np.isfinite(logs), -logs / (2 * gamma), np.nan
            )
        high = np.nanmax(bounds, axis=-1)
        low = np.nanmin(bounds, axis=-1) - math.log(self.n) / 2
        for _ in range(_ORBIT_BISECTION_STEPS):
            middle = (low + high) / 2
            value = special.logsumexp(
                2 * gamma * middle[..., np.newaxis] + logs, axis=-1
            )
            above = value > 0
            high = np.where(above, middle, high)
            low = np.where(above, low, middle)
        direction = self.dilate(np.exp((low + high) / 2), points)
        return t.cast(
            FloatArray,
            direction / np.linalg.norm(direction, axis=-1, keepdims=True),
        )

    def enumerate_indices(
        self, r: int | float | str | Fraction
    ) -> list[MultiIndex]:
        """Return all multi-indices with alpha . gamma <= r.

        Indices are in lexicographic order.

        """
        bound = as_fraction(r)
        if bound < 0:
            return []
        ranges = (range(math.floor(bound / g) + 1) for g in self.gamma)
        return [
            alpha
            for alpha in itertools.product(*ranges)
            if self.weight(alpha) <= bound
        ]

    def points(self, x: ArrayLike) -> FloatArray:
        """Return x as a float array of points, checking the last axis."""
        array = np.asarray(x, dtype=float)
        if array.ndim == 0 or array.shape[-1] != self.n:
            raise DimensionError(
                f"Points must have {self.n} coordinates, got shape "
                f"{array.shape}"
            )
        return array

    def _check_index(self, alpha: Sequence[int]) -> None:
        if len(alpha) != self.n:
            raise DimensionError(
                f"Multi-index {tuple(alpha)} must have {self.n} entries"
            )
        if any(a < 0 for a in alpha):
            raise DomainError(
                f"Multi-index {tuple(alpha)} has negative entries"
            )


def structure_from_orders(
    orders: Sequence[int], m: int = 1
) -> AnisoStructure:
    """Return the structure for the given orders of differentiation."""
    return AnisoStructure(tuple(int(order) for order in orders), m=m)


def monomial(alpha: Sequence[int], x: ArrayLike) -> NDArray[t.Any]:
    """Return x^alpha over the last axis of x."""
    points = np.asarray(x)
    return np.prod(points ** np.asarray(alpha), axis=-1)


def sphere_points(n: int, count: int, seed: int = 0) -> FloatArray:
    """Return quasi-uniform points on the Euclidean unit sphere in R^n."""
    if n == 1:
        return np.array([[-1.0], [1.0]])
    if count < 2:
        raise DomainError(f"At least two sphere points needed, got {count}")
    if n == 2:
        angles = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    if n == 3:
        # Fibonacci lattice
        index = np.arange(count) + 0.5
        height = 1 - 2 * index / count
        radius = np.sqrt(1 - height**2)
        angle = np.pi * (3 - np.sqrt(5)) * index
        return np.stack(
            [radius * np.cos(angle), radius * np.sin(angle), height], axis=-1
        )
    rng = np.random.default_rng(seed)
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    normal = rng.standard_normal((max(count - 2 * n, 0), n))
    points = np.concatenate([axes, normal])
    return t.cast(
        FloatArray, points / np.linalg.norm(points, axis=-1, keepdims=True)
    )


def smooth_step(tau: ArrayLike) -> FloatArray:
    """Smooth transition, 0 for tau <= 0 and 1 for tau >= 1."""
    value = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
    rising = _bump_tail(value)
    falling = _bump_tail(1.0 - value)
    return t.cast(FloatArray, rising / (rising + falling))


def _bump_tail(value: FloatArray) -> FloatArray:
    """Return exp(-1/value) for positive values, 0 elsewhere."""
    positive = value > 0
    safe = np.where(positive, value, 1.0)
    return np.where(positive, np.exp(-1.0 / safe), 0.0)


@dataclasses.dataclass(frozen=True)
class CutoffSpec:
    """Radii of a cutoff: 1 inside ``inner`` and 0 beyond ``outer``."""

    inner: float
    outer: float

    def __post_init__(self) -> None:
        if not 0 <= self.inner < self.outer:
            raise DomainError(
                "Cutoff radii must satisfy 0 <= inner < outer, got "
                f"{self.inner}, {self.outer}"
            )


class Cutoff:
    """Smooth cutoff psi = h(sigma(x)) with h a fixed smooth transition."""

    def __init__(self, structure: AnisoStructure, spec: CutoffSpec) -> None:
        self.structure = structure
        self.spec = spec
        two_ell = 2 * structure.ell
        self._low = spec.inner**two_ell
        self._high = spec.outer**two_ell

    def __call__(self, x: ArrayLike) -> FloatArray:
        sigma = self.structure.sigma(x)
        tau = (sigma - self._low) / (self._high - self._low)
        return 1.0 - smooth_step(tau)


def cutoff_build(structure: AnisoStructure, spec: CutoffSpec) -> Cutoff:
    """Return the smooth cutoff for the given radii."""
    return Cutoff(structure, spec)


def bump_function(
    structure: AnisoStructure, center: ArrayLike, width: float
) -> Callable[[ArrayLike], FloatArray]:
    """Return x -> exp(-sigma((x - center) / width^gamma))."""
    offset = structure.points(center)
    if width <= 0:
        raise DomainError(f"Bump width must be positive: {width}")

    def bump(x: ArrayLike) -> FloatArray:
        shifted = structure.points(x) - offset
        return np.exp(-structure.sigma(structure.dilate(1 / width, shifted)))

    return bump


def finite_difference(
    func: Callable[[FloatArray], NDArray[t.Any]],
    x: ArrayLike,
    alpha: Sequence[int],
    step: float | Sequence[float],
) -> NDArray[t.Any]:
    """Return the central finite-difference approximation of d^alpha func.

    The result has second order accuracy in the step.

    """
    point = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(step, dtype=float), (len(alpha),))
    axis_terms = []
    for order, h in zip(alpha, steps, strict=True):
        axis_terms.append(
            [
                (
                    (order / 2 - j) * h,
                    (-1) ** j * math.comb(order, j) / h**order,
                )
                for j in range(order + 1)
            ]
        )
    total: NDArray[t.Any] | float = 0.0
    for combination in itertools.product(*axis_terms):
        shift = np.array([offset for offset, _ in combination])
        weight = math.prod(coeff for _, coeff in combination)
        total = total + weight * func(point + shift)
    return np.asarray(total)


def shell_integral(
    structure: AnisoStructure,
    r: float,
    R: float,
    s: float,
    tol: float = 1e-8,
) -> float:
    """Return the integral of rho^s over the shell r <= rho <= R.

    Bounded shells are integrated by nested adaptive quadrature over the
    positive orthant, with limits solved from sigma.  Shells reaching the
    origin or infinity are summed as geometric series of dyadic shells,
    using I(tr, tR, s) = t^(s + |gamma|) I(r, R, s).

    """
    gamma_norm = structure.gamma_norm
    if not 0 <= r < R:
        raise DomainError(f"Shell radii must satisfy 0 <= r < R: {r}, {R}")
    exponent = s + float(gamma_norm)
    if r == 0 and math.isinf(R):
        raise DivergenceError(r, R, s, gamma_norm)
    if math.isinf(R):
        if exponent >= 0:
            raise DivergenceError(r, R, s, gamma_norm)
        return _orthant_shell_integral(structure, r, 2 * r, s, tol) / (
            1 - 2.0**exponent
        )
    if r == 0:
        if exponent <= 0:
            raise DivergenceError(r, R, s, gamma_norm)
        return _orthant_shell_integral(structure, R / 2, R, s, tol) / (
            1 - 2.0**-exponent
        )
    return _orthant_shell_integral(structure, r, R, s, tol)


def _orthant_shell_integral(
    structure: AnisoStructure, r: float, R: float, s: float, tol: float
) -> float:
    n = structure.n
    orders = structure.orders
    two_ell = 2 * structure.ell
    inner = r**two_ell
    outer = R**two_ell

    def partial_sigma(outer_coords: tuple[float, ...], first: int) -> float:
        return sum(
            x ** (2 * orders[k]) for k, x in enumerate(outer_coords, first)
        )

    def limits(k: int) -> Callable[..., tuple[float, float]]:
        def bounds(*outer_coords: float) -> tuple[float, float]:
            rest = partial_sigma(outer_coords, k + 1)
            high = max(outer - rest, 0.0) ** (1 / (2 * orders[k]))
            low = 0.0
            if k == 0:
                root = max(inner - rest, 0.0) ** (1 / (2 * orders[k]))
                low = min(root, high)
            return low, high

        return bounds

    def options(k: int) -> Callable[..., dict[str, t.Any]]:
        def level_options(*outer_coords: float) -> dict[str, t.Any]:
            opts: dict[str, t.Any] = {
                "epsabs": tol,
                "epsrel": tol,
                "limit": 200,
            }
            if k > 0:
                # kink where the inner limit of the innermost variable opens
                rest = partial_sigma(outer_coords, k + 1)
                if inner > rest:
                    opts["points"] = [
                        (inner - rest) ** (1 / (2 * orders[k]))
                    ]
            return opts

        return level_options

    def integrand(*coords: float) -> float:
        sigma = partial_sigma(coords, 0)
        return float(sigma ** (s / two_ell))

    value, _ = integrate.nquad(
        integrand,
        [limits(k) for k in range(n)],
        opts=[options(k) for k in range(n)],
    )
    return float(2**n * value)


@lru_cache(maxsize=32)
def ball_volume(structure: AnisoStructure, tol: float = 1e-10) -> float:
    """Return the volume of the unit ball rho <= 1."""
    return shell_integral(structure, 0.0, 1.0, 0.0, tol=tol)


def radial_integral(
    structure: AnisoStructure,
    func: Callable[[float], float],
    r: float,
    R: float,
    tol: float = 1e-10,
) -> float:
    """Return the integral of func(rho(x)) over r <= rho <= R.

    Uses the volume element |gamma| |B| tau^(|gamma| - 1) dtau of the
    level sets of rho.

    """
    gamma_norm = float(structure.gamma_norm)
    value, _ = integrate.quad(
        lambda tau: tau ** (gamma_norm - 1) * func(tau),
        r,
        R,
        epsabs=tol,
        epsrel=tol,
        limit=400,
    )
    return gamma_norm * ball_volume(structure) * float(value)


@dataclasses.dataclass(frozen=True)
class ShellQuadrature:
    """Quadrature in anisotropic polar coordinates x = tau^gamma theta.

    For integrable h, the integral of h over R^n equals the integral over
    tau > 0 of tau^(|gamma| - 1) sum_j weights[j] h(tau^gamma points[j]).

    """

    points: FloatArray
    weights: FloatArray


@lru_cache(maxsize=16)
def shell_quadrature(
    structure: AnisoStructure, nodes: int = 24
) -> ShellQuadrature:
    """Return the polar quadrature rule with ``nodes`` points per variable.

    The shell is parametrized by the simplex c_k = theta_k^(2 l_k); the
    Dirichlet density of the change of variables is integrated exactly by
    Gauss-Jacobi rules after stick-breaking.

    """
    n = structure.n
    powers = [1 / (2 * order) for order in structure.orders]
    factor = 2 * structure.ell * math.prod(powers)
    if n == 1:
        simplex = np.ones((1, 1))
        simplex_weights = np.ones(1)
    else:
        axes = []
        for k in range(n - 1):
            a = powers[k]
            rest = sum(powers[k + 1 :])
            roots, weights = special.roots_jacobi(nodes, rest - 1, a - 1)
            axes.append(((1 + roots) / 2, weights / 2 ** (a + rest - 1)))
        grids = np.meshgrid(*(b for b, _ in axes), indexing="ij")
        breaks = np.stack([g.ravel() for g in grids], axis=-1)
        simplex_weights = np.prod(
            np.stack(
                [
                    g.ravel()
                    for g in np.meshgrid(*(w for _, w in axes), indexing="ij")
                ],
                axis=-1,
            ),
            axis=-1,
        )
        simplex = np.empty((breaks.shape[0], n))
        remaining = np.ones(breaks.shape[0])
        for k in range(n - 1):
            simplex[:, k] = remaining * breaks[:, k]
            remaining = remaining * (1 - breaks[:, k])
        simplex[:, n - 1] = remaining
    base = simplex ** np.array(powers)
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=n)))
    points = (signs[:, np.newaxis, :] * base[np.newaxis, :, :]).reshape(-1, n)
    weights = np.tile(factor * simplex_weights, len(signs))
    return ShellQuadrature(points=points, weights=weights)


def k_kernel(
    structure: AnisoStructure,
    x: ArrayLike,
    xi: float,
    eta: float,
    nodes: int = 24,
    tol: float = 1e-9,
) -> float:
    """Return K(x, xi, eta), the integral of rho(x-y)^xi (1+rho(y))^eta.

    The integral is taken in polar coordinates centered at the singular
    point y = x, split into the region near the singularity, the
    intermediate region and the far region.

    """
    gamma_norm = float(structure.gamma_norm)
    if not (
        xi + gamma_norm > 0
        and eta + gamma_norm > 0
        and xi + eta + gamma_norm < 0
    ):
        raise DomainError(
            "Kernel exponents must satisfy xi + |gamma| > 0, "
            f"eta + |gamma| > 0 and xi + eta + |gamma| < 0: {xi}, {eta}"
        )
    point = structure.points(x)
    rule = shell_quadrature(structure, nodes)

    def angular(tau: float) -> float:
        # quadrature rules may sample the endpoint tau = 0
        y = point - structure.dilate(tau, rule.points) if tau > 0 else point
        radius = np.broadcast_to(structure.rho(y), rule.weights.shape)
        return float(np.dot(rule.weights, (1 + radius) ** eta))

    split = max(float(structure.rho(point)), 1.0)
    options = {"epsabs": tol, "epsrel": tol, "limit": 200}
    near, _ = integrate.quad(
        angular,
        0.0,
        split / 2,
        weight="alg",
        wvar=(xi + gamma_norm - 1, 0.0),
        **options,
    )
    power = xi + gamma_norm - 1
    middle, _ = integrate.quad(
        lambda tau: tau**power * angular(tau), split / 2, 2 * split, **options
    )
    far, _ = integrate.quad(
        lambda tau: tau**power * angular(tau), 2 * split, np.inf, **options
    )
    return float(near + middle + far)
