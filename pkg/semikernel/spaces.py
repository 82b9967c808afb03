"""Weighted Sobolev norms, isomorphism windows and counterexamples."""

from collections.abc import Sequence
import dataclasses
from fractions import Fraction
import math
import typing as t

import numpy as np
from scipy import fft

from .aniso import (
    AnisoStructure,
    CutoffSpec,
    DomainError,
    FloatArray,
    as_fraction,
    cutoff_build,
    radial_integral,
)
from .fundsol import UnsupportedOperatorError
from .grid import Grid, GridFunction, Lattice
from .solve import apply_operator, solve_fourier
from .symbol import OperatorSpec

# fraction of each half-width forming the boundary layer of a norm
_TAIL_LAYER = 0.1
# tails above this fraction of the norm mark it as truncated
_TRUNCATION = 1e-6
# dyadic radii 2^k, k <= _MAX_DOUBLINGS, for expanding-ball norms
_MAX_DOUBLINGS = 24
# relative increment below which an expanding-ball norm has converged
_CONVERGENCE = 1e-4

Exponent = int | float | Fraction


class DegenerateInputError(Exception):
    """A ratio has a zero denominator."""

    def __init__(self, quantity: str) -> None:
        super().__init__(f"Zero denominator in {quantity}")


def _structure(spec: OperatorSpec | AnisoStructure) -> AnisoStructure:
    if isinstance(spec, OperatorSpec):
        return spec.structure
    return spec


def _exponent(p: Exponent) -> Exponent:
    if isinstance(p, float) and math.isinf(p):
        return p
    return as_fraction(p)


@dataclasses.dataclass(frozen=True)
class WeightedNormParams:
    """Order ``r``, exponent ``p`` and weight ``s`` of a weighted norm."""

    r: Fraction
    p: Exponent
    s: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "r", as_fraction(self.r))
        object.__setattr__(self, "p", _exponent(self.p))
        if self.r < 0:
            raise DomainError(f"Norm order must be nonnegative: {self.r}")
        if not self.p > 1:
            raise DomainError(f"Norm exponent must exceed 1: {self.p}")


class NormResult(t.NamedTuple):
    """A norm on the box and the part of it from the boundary layer."""

    value: float
    tail: float

    @property
    def truncated(self) -> bool:
        return self.tail > _TRUNCATION * self.value


def _lp(values: FloatArray, p: Exponent, cell: float) -> float:
    if math.isinf(p):
        return float(np.max(values, initial=0.0))
    power = float(p)
    return float((np.sum(values**power) * cell) ** (1 / power))


def _boundary_layer(grid: Grid) -> FloatArray:
    coords = grid.coordinates()
    relative = np.abs(coords) / np.array(grid.extents)
    return t.cast(FloatArray, np.max(relative, axis=-1) > 1 - _TAIL_LAYER)


def weighted_norm(
    u: GridFunction,
    params: WeightedNormParams,
    spec: OperatorSpec | AnisoStructure,
    lattice: Lattice = Lattice.SHIFTED,
) -> NormResult:
    """Return the sum of |(1 + rho)^(s + a) d^alpha u|_p over a <= r.

    ``a`` is the anisotropic order of alpha.  Derivatives are spectral
    and integrals use the grid's product rule.

    """
    structure = _structure(spec)
    grid = u.grid
    one_plus_rho = 1 + structure.rho(grid.coordinates())
    layer = _boundary_layer(grid)
    value = 0.0
    tail = 0.0
    for alpha in structure.enumerate_indices(params.r):
        derivative = u if not any(alpha) else u.derivative(alpha, lattice)
        order = float(structure.weight(alpha))
        weighted = one_plus_rho ** (params.s + order) * (
            derivative.pointwise_norm()
        )
        value += _lp(weighted, params.p, grid.cell_volume)
        tail += _lp(
            np.where(layer, weighted, 0.0), params.p, grid.cell_volume
        )
    return NormResult(value=value, tail=tail)


def weighted_lp(
    u: GridFunction,
    p: Exponent,
    s: float,
    spec: OperatorSpec | AnisoStructure,
) -> NormResult:
    """Return |(1 + rho)^s u|_p."""
    return weighted_norm(u, WeightedNormParams(Fraction(0), p, s), spec)


def pairing(u: GridFunction, v: GridFunction) -> complex:
    """Return the integral of <u, v> over the box."""
    u.check_grid(v)
    total = np.sum(u.values * v.values.conj()) * u.grid.cell_volume
    return complex(total)


def _check_supported(structure: AnisoStructure) -> None:
    if structure.gamma_norm <= structure.ell:
        raise UnsupportedOperatorError(structure)


def dual_exponent(p: Exponent) -> Exponent:
    """Return q with 1/p + 1/q = 1, exactly for rational p."""
    p = _exponent(p)
    if math.isinf(p):
        return Fraction(1)
    if p <= 1:
        raise DomainError(f"Exponent must exceed 1: {p}")
    return p / (p - 1)


def iso_range(spec: OperatorSpec, p: Exponent) -> tuple[Fraction, Fraction]:
    """Return the open interval of s where L is an isomorphism.

    L maps the order-l space with weight s onto the order-0 space with
    weight s + l isomorphically exactly for
    -|gamma|/p < s < |gamma| - l - |gamma|/p.

    """
    structure = spec.structure
    _check_supported(structure)
    p = _exponent(p)
    if math.isinf(p) or p <= 1:
        raise DomainError(f"Exponent must be in (1, inf): {p}")
    share = structure.gamma_norm / Fraction(p)
    return -share, structure.gamma_norm - structure.ell - share


def in_window(spec: OperatorSpec, p: Exponent, s: Exponent) -> bool:
    low, high = iso_range(spec, p)
    return bool(low < as_fraction(s) < high)


def adjoint_window(
    spec: OperatorSpec, p: Exponent
) -> tuple[Fraction, Fraction]:
    """Return the window of the adjoint on the dual scale.

    The adjoint maps the order-l space with exponent q and weight
    -s - l to the order-0 space with weight -s, so its window is the
    image of the window of L under s -> -s - l.

    """
    return iso_range(spec.adjoint(), dual_exponent(p))


def identity_case_applies(spec: OperatorSpec, p: Exponent) -> bool:
    """Return whether s = -l lies in the window, i.e. l < |gamma|/p."""
    low, high = iso_range(spec, p)
    return bool(low < -spec.structure.ell < high)


def apriori_ratio(
    spec: OperatorSpec, u: GridFunction, p: Exponent, s: float
) -> float:
    """Return |u|_(l,p,s) / (|(1+rho)^s u|_p + |(1+rho)^(s+l) Lu|_p)."""
    structure = spec.structure
    ell = structure.ell
    numerator = weighted_norm(u, WeightedNormParams(ell, p, s), spec)
    lower = weighted_lp(u, p, s, spec)
    image = weighted_lp(apply_operator(spec, u), p, s + ell, spec)
    denominator = lower.value + image.value
    if denominator == 0:
        raise DegenerateInputError("apriori ratio")
    return numerator.value / denominator


def boundedness_ratio(
    spec: OperatorSpec, u: GridFunction, p: Exponent, s: float
) -> float:
    """Return |Lu|_(0,p,s+l) / |u|_(l,p,s)."""
    ell = spec.structure.ell
    denominator = weighted_norm(u, WeightedNormParams(ell, p, s), spec)
    if denominator.value == 0:
        raise DegenerateInputError("boundedness ratio")
    image = weighted_lp(apply_operator(spec, u), p, s + ell, spec)
    return image.value / denominator.value


def mapping_bound_ratio(
    spec: OperatorSpec, f: GridFunction, p: Exponent, s: float
) -> float:
    """Return |Sf|_(l,p,s) / |f|_(0,p,s+l)."""
    ell = spec.structure.ell
    denominator = weighted_lp(f, p, s + ell, spec)
    if denominator.value == 0:
        raise DegenerateInputError("mapping bound ratio")
    solution = solve_fourier(spec, f)
    return (
        weighted_norm(solution, WeightedNormParams(ell, p, s), spec).value
        / denominator.value
    )


@dataclasses.dataclass(frozen=True)
class ConstantReport:
    """Norms of a constant over the balls rho <= 2^k."""

    p: Exponent
    s: float
    #: whether the weighted Lp criterion sp < -|gamma| holds
    expected: bool
    converges: bool
    radii: tuple[float, ...]
    norms: tuple[float, ...]

    @property
    def kernel_nontrivial(self) -> bool:
        """Constants are then nonzero elements of the kernel of L."""
        return self.converges


def counterexample_constant(
    spec: OperatorSpec, p: Exponent, s: float
) -> ConstantReport:
    """Check whether constants have finite weighted norm.

    Norms over expanding balls are computed by radial integrals.  They
    converge when the last dyadic increment is below a relative
    threshold.

    """
    structure = spec.structure
    p = _exponent(p)
    radii = tuple(2.0**k for k in range(_MAX_DOUBLINGS + 1))
    if math.isinf(p):
        norms = tuple(max(1.0, (1 + radius) ** s) for radius in radii)
        return ConstantReport(
            p=p,
            s=s,
            expected=s <= 0,
            converges=s <= 0,
            radii=radii,
            norms=norms,
        )
    power = s * float(p)
    total = 0.0
    powers = []
    previous = 0.0
    increment = math.inf
    for radius in radii:
        increment = radial_integral(
            structure, lambda tau: (1 + tau) ** power, previous, radius
        )
        total += increment
        powers.append(total)
        previous = radius
    gamma_norm = float(structure.gamma_norm)
    return ConstantReport(
        p=p,
        s=s,
        expected=power < -gamma_norm,
        converges=increment < _CONVERGENCE * total,
        radii=radii,
        norms=tuple(value ** (1 / float(p)) for value in powers),
    )


@dataclasses.dataclass(frozen=True)
class CutoffRatio:
    radius: float
    numerator: float
    denominator: float

    @property
    def ratio(self) -> float:
        return self.numerator / self.denominator


def counterexample_cutoff_family(
    spec: OperatorSpec,
    p: Exponent,
    radii: Sequence[float],
    grid: Grid,
) -> list[CutoffRatio]:
    """Return |L u_R|_(0,p,s+l) / |u_R|_(l,p,s) at s = -|gamma|/p.

    u_R is a cutoff equal to a unit vector for rho <= R and vanishing for
    rho >= 2R.  ``grid`` is the grid for R = 1, dilated for other radii.

    """
    structure = spec.structure
    p = _exponent(p)
    s = float(-structure.gamma_norm / Fraction(p))
    ell = structure.ell
    unit = np.zeros(structure.m)
    unit[0] = 1.0
    results = []
    for radius in radii:
        scaled = grid.dilated(structure, radius)
        boundary = min(
            extent ** (1 / g)
            for extent, g in zip(
                scaled.extents, structure.gamma_array, strict=True
            )
        )
        if boundary <= 2 * radius:
            raise DomainError(
                f"Grid with boundary radius {boundary:.3g} doesn't contain "
                f"the cutoff support {2 * radius}"
            )
        cutoff = cutoff_build(structure, CutoffSpec(radius, 2 * radius))
        u = GridFunction.sample(
            scaled, lambda x: cutoff(x)[..., np.newaxis] * unit
        )
        numerator = weighted_lp(apply_operator(spec, u), p, s + ell, spec)
        denominator = weighted_norm(u, WeightedNormParams(ell, p, s), spec)
        results.append(
            CutoffRatio(
                radius=radius,
                numerator=numerator.value,
                denominator=denominator.value,
            )
        )
    return results


@dataclasses.dataclass(frozen=True)
class OntoObstruction:
    """Quantities showing L misses f = (1 + rho)^-(s+l+|gamma|) v."""

    q: Exponent
    source_norm: float
    witness_norm: float
    pairing: float
    #: exponent -(s + l) q of the witness norm, below -|gamma|
    witness_exponent: float


def counterexample_onto_obstruction(
    spec: OperatorSpec, p: Exponent, s: float
) -> OntoObstruction:
    """Build the source outside the range of L and its dual witness.

    The witness is a constant unit vector v, annihilated by the adjoint;
    the pairing of f with v is positive, so f isn't in the range.

    """
    structure = spec.structure
    p = _exponent(p)
    q = dual_exponent(p)
    ell = structure.ell
    gamma_norm = float(structure.gamma_norm)
    if not s > gamma_norm / float(q) - ell:
        raise DomainError(
            f"Weight {s} must exceed |gamma|/q - l = "
            f"{gamma_norm / float(q) - ell}"
        )
    decay = s + ell + gamma_norm
    if math.isinf(p):
        source_norm = 1.0
    else:
        source_norm = radial_integral(
            structure,
            lambda tau: (1 + tau) ** (-gamma_norm * float(p)),
            0.0,
            math.inf,
        ) ** (1 / float(p))
    witness_exponent = -(s + ell) * float(q)
    witness_norm = radial_integral(
        structure, lambda tau: (1 + tau) ** witness_exponent, 0.0, math.inf
    ) ** (1 / float(q))
    pairing_value = radial_integral(
        structure, lambda tau: (1 + tau) ** -decay, 0.0, math.inf
    )
    return OntoObstruction(
        q=q,
        source_norm=source_norm,
        witness_norm=witness_norm,
        pairing=pairing_value,
        witness_exponent=witness_exponent,
    )


def mollify_approximate(u: GridFunction, radius: float) -> GridFunction:
    """Return the convolution of u with a bump supported in |x| <= radius.

    The bump is normalized to unit discrete mass, so constants are kept
    away from the faces of the box.

    """
    grid = u.grid
    if not 0 < radius < min(grid.extents) / 2:
        raise DomainError(
            f"Mollifier radius must be in (0, {min(grid.extents) / 2}): "
            f"{radius}"
        )
    offsets = np.stack(
        np.meshgrid(
            *(
                fft.fftfreq(count) * count * h
                for count, h in zip(grid.points, grid.spacing, strict=True)
            ),
            indexing="ij",
        ),
        axis=-1,
    )
    distance = np.sum((offsets / radius) ** 2, axis=-1)
    inside = distance < 1
    bump = np.zeros(grid.shape)
    bump[inside] = np.exp(-1 / (1 - distance[inside]))
    bump /= bump.sum()
    axes = tuple(range(grid.n))
    kernel = fft.fftn(bump, axes=axes)
    values = fft.ifftn(
        fft.fftn(u.values, axes=axes) * kernel[..., np.newaxis], axes=axes
    )
    return GridFunction(grid, values)
