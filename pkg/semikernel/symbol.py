"""Operator specifications, their symbols and semiellipticity checks."""

from collections.abc import Callable, Iterable, Mapping, Sequence
import dataclasses
from functools import cached_property
import hashlib
import json
import math
import typing as t

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize
import structlog

from .aniso import (
    AnisoStructure,
    DomainError,
    FloatArray,
    MultiIndex,
    finite_difference,
    sphere_points,
)

ComplexArray = NDArray[np.complex128]

# radii of the shells used to sample growth constants
_GROWTH_RADII = (0.5, 1.0, 2.0)


class InvalidOperatorError(Exception):
    """Operator coefficients don't define a valid operator."""


class SemiellipticityError(Exception):
    """The symbol is singular at a nonzero point."""

    def __init__(self, point: Sequence[float], singular_value: float) -> None:
        self.point = tuple(float(x) for x in point)
        self.singular_value = singular_value
        super().__init__(
            f"Symbol is singular at {list(self.point)} "
            f"(smallest singular value {singular_value:.3g})"
        )


def matrix_norm(matrix: ArrayLike) -> FloatArray:
    """Return the Frobenius norm over the last two axes."""
    return t.cast(
        FloatArray, np.linalg.norm(np.asarray(matrix), axis=(-2, -1))
    )


def _as_matrix(value: ArrayLike, m: int) -> ComplexArray:
    matrix = np.array(value, dtype=np.complex128)
    if matrix.ndim == 0:
        matrix = matrix * np.eye(m, dtype=np.complex128)
    if matrix.shape != (m, m):
        raise InvalidOperatorError(
            f"Coefficient must be a {m}x{m} matrix, got shape {matrix.shape}"
        )
    if not np.all(np.isfinite(matrix)):
        raise InvalidOperatorError("Coefficient entries must be finite")
    matrix.setflags(write=False)
    return matrix


@dataclasses.dataclass(frozen=True, eq=False)
class OperatorSpec:
    """A constant coefficient operator sum A_alpha d^alpha.

    Every multi-index has anisotropic order exactly ``ell``, and each pure
    derivative ``l_k e_k`` has an invertible coefficient.

    """

    structure: AnisoStructure
    coeffs: Mapping[MultiIndex, ComplexArray]
    name: str = ""

    def __post_init__(self) -> None:
        structure = self.structure
        coeffs: dict[MultiIndex, ComplexArray] = {}
        for alpha, matrix in self.coeffs.items():
            key = tuple(int(a) for a in alpha)
            if len(key) != structure.n or any(a < 0 for a in key):
                raise InvalidOperatorError(
                    f"Invalid multi-index {key} for dimension {structure.n}"
                )
            if structure.weight(key) != structure.ell:
                raise InvalidOperatorError(
                    f"Multi-index {key} has anisotropic order "
                    f"{structure.weight(key)}, expected {structure.ell}"
                )
            coeffs[key] = _as_matrix(matrix, structure.m)
        for k, order in enumerate(structure.orders):
            pure = tuple(order if j == k else 0 for j in range(structure.n))
            matrix = coeffs.get(pure)
            if matrix is None:
                raise InvalidOperatorError(
                    f"Missing coefficient for pure derivative {pure}"
                )
            if np.linalg.matrix_rank(matrix) < structure.m:
                raise InvalidOperatorError(
                    f"Coefficient for pure derivative {pure} is not "
                    "invertible"
                )
        object.__setattr__(self, "coeffs", dict(sorted(coeffs.items())))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OperatorSpec):
            return NotImplemented
        return (
            self.structure == other.structure
            and self.coeffs.keys() == other.coeffs.keys()
            and all(
                np.array_equal(matrix, other.coeffs[alpha])
                for alpha, matrix in self.coeffs.items()
            )
        )

    def __hash__(self) -> int:
        return hash(self.digest)

    @property
    def m(self) -> int:
        return self.structure.m

    @cached_property
    def digest(self) -> str:
        """Hash identifying the operator, independent of its name."""
        payload = {
            "orders": list(self.structure.orders),
            "m": self.structure.m,
            "coefficients": [
                [
                    list(alpha),
                    matrix.real.tolist(),
                    matrix.imag.tolist(),
                ]
                for alpha, matrix in self.coeffs.items()
            ],
        }
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()
        ).hexdigest()

    def symbol(self, x: ArrayLike) -> ComplexArray:
        """Return L(x) = sum A_alpha (ix)^alpha, shape (..., m, m)."""
        return self.symbol_derivative(x, (0,) * self.structure.n)

    def symbol_derivative(
        self, x: ArrayLike, delta: Sequence[int]
    ) -> ComplexArray:
        """Return d^delta L(x) by exact differentiation of monomials."""
        points = self.structure.points(x)
        result = np.zeros(
            points.shape[:-1] + (self.m, self.m), dtype=np.complex128
        )
        for alpha, matrix in self.coeffs.items():
            if any(d > a for a, d in zip(alpha, delta, strict=True)):
                continue
            factor = 1j ** sum(alpha) * math.prod(
                math.perm(a, d) for a, d in zip(alpha, delta, strict=True)
            )
            power = np.array(alpha) - np.array(delta)
            values = factor * np.prod(points**power, axis=-1)
            result += values[..., np.newaxis, np.newaxis] * matrix
        return result

    def inverse_symbol(self, x: ArrayLike) -> ComplexArray:
        """Return L(x)^-1, checking invertibility at every point."""
        points = self.structure.points(x)
        if np.any(self.structure.sigma(points) == 0):
            raise DomainError("The symbol is not invertible at the origin")
        symbol = self.symbol(points)
        singular = np.linalg.svd(symbol, compute_uv=False)
        scale = self.structure.rho(points) ** self.structure.ell
        relative = singular[..., -1] / scale
        if np.any(relative < 1e-13):
            index = np.unravel_index(np.argmin(relative), relative.shape)
            raise SemiellipticityError(
                points[index], float(singular[..., -1][index])
            )
        return invert(symbol)

    def adjoint(self) -> "OperatorSpec":
        """Return the formal adjoint, sum (-1)^|alpha| A_alpha^* d^alpha."""
        return OperatorSpec(
            self.structure,
            {
                alpha: (-1) ** sum(alpha) * matrix.conj().T
                for alpha, matrix in self.coeffs.items()
            },
            name=f"{self.name}*" if self.name else "",
        )


def invert(symbol: ComplexArray) -> ComplexArray:
    """Invert a stack of matrices without checks."""
    if symbol.shape[-1] == 1:
        return 1.0 / symbol
    return t.cast(ComplexArray, np.linalg.inv(symbol))


def operator_spec(
    structure: AnisoStructure,
    coeffs: Mapping[Sequence[int], ArrayLike],
    name: str = "",
) -> OperatorSpec:
    """Return an operator, accepting scalars for multiples of identity."""
    return OperatorSpec(
        structure,
        {tuple(alpha): np.asarray(value) for alpha, value in coeffs.items()},
        name=name,
    )


def symbol_eval(spec: OperatorSpec, x: ArrayLike) -> ComplexArray:
    return spec.symbol(x)


def symbol_inverse(spec: OperatorSpec, x: ArrayLike) -> ComplexArray:
    return spec.inverse_symbol(x)


def adjoint(spec: OperatorSpec) -> OperatorSpec:
    return spec.adjoint()


@dataclasses.dataclass(frozen=True)
class ShellSampling:
    """Sampling of the unit shell for symbol extrema."""

    samples: int = 2000
    seed: int = 0
    refine_iterations: int = 200
    threshold: float = 1e-10

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise DomainError(f"Invalid sample count: {self.samples}")
        if self.refine_iterations < 0:
            raise DomainError(
                f"Invalid refinement iterations: {self.refine_iterations}"
            )


@dataclasses.dataclass(frozen=True)
class SymbolConstants:
    """Extrema of |L| and |L^-1| on the unit shell."""

    c1: float
    c2: float
    c3: float
    c4: float

    def __post_init__(self) -> None:
        if not (0 < self.c1 <= self.c2 and 0 < self.c3 <= self.c4):
            raise DomainError(f"Inconsistent symbol constants: {self}")


@dataclasses.dataclass(frozen=True)
class SemiellipticReport:
    """Outcome of sampling the smallest singular value on the shell."""

    semielliptic: bool
    min_singular_value: float
    worst_point: tuple[float, ...]
    samples: int
    constants: SymbolConstants | None = None

    def require(self) -> SymbolConstants:
        """Return the constants, raising if the symbol is singular."""
        if self.constants is None:
            raise SemiellipticityError(
                self.worst_point, self.min_singular_value
            )
        return self.constants


class _ShellSearch:
    """Extremize a function of the symbol over the unit shell."""

    def __init__(
        self, structure: AnisoStructure, sampling: ShellSampling
    ) -> None:
        self.structure = structure
        self.sampling = sampling
        directions = sphere_points(
            structure.n, sampling.samples, seed=sampling.seed
        )
        self.directions = directions
        self.points = structure.to_shell(directions)

    def minimize(
        self,
        func: Callable[[FloatArray], FloatArray],
        sampled: FloatArray,
    ) -> tuple[float, FloatArray]:
        """Return the minimum of func and where it's attained.

        The best sample is refined by derivative-free local search over
        directions, which are projected onto the shell.

        """
        index = int(np.argmin(sampled))
        best_value = float(sampled[index])
        best_point = self.points[index]
        if self.structure.n == 1 or self.sampling.refine_iterations == 0:
            return best_value, best_point

        def objective(direction: FloatArray) -> float:
            length = np.linalg.norm(direction)
            if length == 0 or not np.isfinite(length):
                return math.inf
            point = self.structure.to_shell(direction / length)
            return float(func(point[np.newaxis, :])[0])

        result = optimize.minimize(
            objective,
            self.directions[index],
            method="Nelder-Mead",
            options={
                "maxiter": self.sampling.refine_iterations,
                "xatol": 1e-10,
                "fatol": 1e-14,
            },
        )
        if result.fun < best_value:
            direction = result.x / np.linalg.norm(result.x)
            return float(result.fun), self.structure.to_shell(direction)
        return best_value, best_point


def check_semielliptic(
    spec: OperatorSpec,
    sampling: ShellSampling | None = None,
    logger: structlog.stdlib.BoundLogger | None = None,
) -> SemiellipticReport:
    """Estimate the shell extrema of the symbol and its inverse.

    Semiellipticity is only certified up to the sampling density: the
    report holds the smallest singular value found and where.

    """
    if sampling is None:
        sampling = ShellSampling()
    if logger is None:
        logger = structlog.get_logger()
    search = _ShellSearch(spec.structure, sampling)

    def smallest_singular(points: FloatArray) -> FloatArray:
        singular = np.linalg.svd(spec.symbol(points), compute_uv=False)
        return t.cast(FloatArray, singular[..., -1])

    min_singular, worst = search.minimize(
        smallest_singular, smallest_singular(search.points)
    )
    logger.debug(
        "shell sampled",
        samples=len(search.points),
        min_singular_value=min_singular,
    )
    if min_singular < sampling.threshold:
        logger.warning(
            "symbol singular on shell",
            point=worst.tolist(),
            min_singular_value=min_singular,
        )
        return SemiellipticReport(
            semielliptic=False,
            min_singular_value=min_singular,
            worst_point=tuple(worst.tolist()),
            samples=len(search.points),
        )

    def symbol_norm(points: FloatArray) -> FloatArray:
        return matrix_norm(spec.symbol(points))

    def inverse_norm(points: FloatArray) -> FloatArray:
        return matrix_norm(invert(spec.symbol(points)))

    norms = symbol_norm(search.points)
    inverse_norms = inverse_norm(search.points)
    c1, _ = search.minimize(symbol_norm, norms)
    c2, _ = search.minimize(lambda p: -symbol_norm(p), -norms)
    c3, _ = search.minimize(inverse_norm, inverse_norms)
    c4, _ = search.minimize(lambda p: -inverse_norm(p), -inverse_norms)
    constants = SymbolConstants(c1=c1, c2=-c2, c3=c3, c4=-c4)
    logger.debug("symbol constants", **dataclasses.asdict(constants))
    return SemiellipticReport(
        semielliptic=True,
        min_singular_value=min_singular,
        worst_point=tuple(worst.tolist()),
        samples=len(search.points),
        constants=constants,
    )


@dataclasses.dataclass(frozen=True)
class GrowthBound:
    """Sampled constants for the derivatives of L and L^-1."""

    alpha: MultiIndex
    symbol_constant: float
    inverse_constant: float


def verify_growth_bounds(
    spec: OperatorSpec,
    alphas: Iterable[Sequence[int]],
    sampling: ShellSampling | None = None,
) -> list[GrowthBound]:
    """Estimate the growth constants of d^alpha L and d^alpha L^-1.

    The constants are the sampled suprema of |d^alpha L| rho^(a - l) and
    |d^alpha L^-1| rho^(l + a), with a the anisotropic order of alpha.
    Derivatives of L are exact, those of L^-1 are finite differences.

    """
    if sampling is None:
        sampling = ShellSampling()
    structure = spec.structure
    directions = sphere_points(structure.n, sampling.samples, sampling.seed)
    shell = structure.to_shell(directions)
    bounds = []
    for alpha in alphas:
        key = tuple(int(a) for a in alpha)
        order = float(structure.weight(key))
        symbol_constant = 0.0
        inverse_constant = 0.0
        for radius in _GROWTH_RADII:
            points = structure.dilate(radius, shell)
            derivative = spec.symbol_derivative(points, key)
            symbol_constant = max(
                symbol_constant,
                float(
                    np.max(
                        matrix_norm(derivative)
                        * radius ** (order - structure.ell)
                    )
                ),
            )
            step = 1e-3 * radius ** structure.gamma_array
            inverse = finite_difference(
                spec.inverse_symbol, points, key, step
            )
            inverse_constant = max(
                inverse_constant,
                float(
                    np.max(
                        matrix_norm(inverse)
                        * radius ** (structure.ell + order)
                    )
                ),
            )
        bounds.append(GrowthBound(key, symbol_constant, inverse_constant))
    return bounds
