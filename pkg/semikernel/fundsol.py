"""Fundamental solutions of semielliptic operators.

The fundamental solution is the iterated integral

    F_beta(x) = (2 pi)^-n  int_0^inf J_beta(x, t) dt,

    J_beta(x, t) = int e^{i x.z} (iz)^beta sigma(z) e^{-t sigma(z)} L(z)^-1 dz,

where the z-integral is always evaluated first: the integral in t of the
z-integrand does not converge absolutely, so the order can't be exchanged.

"""

from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
import dataclasses
import math
from pathlib import Path
import typing as t

import numpy as np
from numpy.typing import ArrayLike
from scipy import integrate, special
import structlog

from .aniso import (
    AnisoStructure,
    DimensionError,
    DomainError,
    FloatArray,
    MultiIndex,
    sphere_points,
)
from .symbol import ComplexArray, OperatorSpec, invert, matrix_norm
from .table import KernelSource, KernelTable, TableError

# maximum number of inner nodes evaluated at once
_CHUNK_POINTS = 2**17
# Taylor terms of J at the outer floor integrated over [0, t_floor]
_HEAD_TERMS = 3


class UnsupportedOperatorError(Exception):
    """The construction doesn't apply to the operator."""

    def __init__(self, structure: AnisoStructure) -> None:
        super().__init__(
            "Fundamental solution requires |gamma| > l, got "
            f"|gamma| = {structure.gamma_norm}, l = {structure.ell}"
        )


class AccuracyError(Exception):
    """A quadrature didn't reach the requested accuracy."""

    def __init__(self, what: str, change: float, tolerance: float) -> None:
        self.change = change
        self.tolerance = tolerance
        super().__init__(
            f"Quadrature for {what} not converged: change {change:.3g} "
            f"exceeds {tolerance:.3g}"
        )


@dataclasses.dataclass(frozen=True)
class QuadratureConfig:
    """Truncation and node counts for the inner and outer integrals."""

    #: truncation of the inner integral where sigma(z) > sigma_cutoff / t
    sigma_cutoff: float = 30.0
    inner_nodes: int = 48
    outer_nodes: int = 20
    #: nodes per wavelength of e^{i x.z} is 2 * oscillation_factor
    oscillation_factor: float = 4.0
    #: accepted change on node doubling, relative to the L1 envelope
    tolerance: float = 1e-6
    refine_check: bool = True
    #: outer variable below which the t-integral is approximated
    outer_floor: float = 0.1
    max_inner_nodes: int = 4096
    #: double outer node counts until F changes by less than outer_tolerance
    outer_check: bool = True
    outer_tolerance: float = 1e-5
    max_outer_nodes: int = 320
    threads: int = 1

    def __post_init__(self) -> None:
        if self.sigma_cutoff < 20:
            raise DomainError(
                f"Sigma cutoff must be at least 20: {self.sigma_cutoff}"
            )
        if min(self.inner_nodes, self.outer_nodes) < 8:
            raise DomainError("Node counts must be at least 8")
        if self.max_inner_nodes < self.inner_nodes:
            raise DomainError("Inner node cap is below the inner node count")
        if self.max_outer_nodes < 2 * self.outer_nodes:
            raise DomainError(
                "Outer node cap is below twice the outer node count"
            )
        if min(
            self.oscillation_factor, self.tolerance, self.outer_tolerance
        ) <= 0:
            raise DomainError(
                "Oscillation factor and tolerances must be positive"
            )
        if not 0 < self.outer_floor < 1:
            raise DomainError(
                f"Outer floor must be in (0, 1): {self.outer_floor}"
            )
        if self.threads < 1:
            raise DomainError(f"Invalid thread count: {self.threads}")


class _InnerIntegral:
    """Midpoint quadrature of the z-integral on a box.

    The box is |z_k| <= (cutoff / t)^(1/2l_k), outside of which
    e^{-t sigma} is below e^-cutoff.  Node counts are even so the origin,
    where the integrand is only continuous, is never a node.

    """

    def __init__(
        self,
        spec: OperatorSpec,
        beta: Sequence[int],
        x: FloatArray,
        cfg: QuadratureConfig,
        time_order: int = 0,
    ) -> None:
        self.spec = spec
        self.beta = np.array(beta)
        self.x = x
        self.cfg = cfg
        self.time_order = time_order

    def axis_nodes(
        self, t: float, refine: int = 1
    ) -> list[tuple[FloatArray, float]]:
        cfg = self.cfg
        axes = []
        for order, coord in zip(
            self.spec.structure.orders, self.x, strict=True
        ):
            bound = (cfg.sigma_cutoff / t) ** (1 / (2 * order))
            count = max(
                cfg.inner_nodes,
                math.ceil(
                    2 * bound * cfg.oscillation_factor * abs(coord) / math.pi
                ),
            )
            count += count % 2
            if count > cfg.max_inner_nodes:
                raise AccuracyError(
                    f"J at t={t:.3g}", count, cfg.max_inner_nodes
                )
            count *= refine
            step = 2 * bound / count
            axes.append((-bound + (np.arange(count) + 0.5) * step, step))
        return axes

    def integrate(
        self, t: float, refine: int = 1
    ) -> tuple[ComplexArray, float]:
        """Return the integral and the integral of the integrand norm."""
        spec = self.spec
        axes = self.axis_nodes(t, refine)
        cell = math.prod(step for _, step in axes)
        if len(axes) == 1:
            rest = np.zeros((1, 0))
        else:
            grids = np.meshgrid(
                *(nodes for nodes, _ in axes[1:]), indexing="ij"
            )
            rest = np.stack([grid.ravel() for grid in grids], axis=-1)
        first = axes[0][0]
        chunk = max(1, _CHUNK_POINTS // len(rest))
        sign = (-1) ** self.time_order
        beta_factor = 1j ** int(self.beta.sum())
        total = np.zeros((spec.m, spec.m), dtype=np.complex128)
        envelope = 0.0
        for start in range(0, len(first), chunk):
            block = first[start : start + chunk]
            z = np.concatenate(
                [
                    np.repeat(block, len(rest))[:, np.newaxis],
                    np.tile(rest, (len(block), 1)),
                ],
                axis=1,
            )
            sigma = spec.structure.sigma(z)
            scalar = (
                sign
                * beta_factor
                * np.exp(1j * (z @ self.x))
                * np.prod(z**self.beta, axis=-1)
                * sigma ** (self.time_order + 1)
                * np.exp(-t * sigma)
            )
            values = scalar[:, np.newaxis, np.newaxis] * invert(
                spec.symbol(z)
            )
            total += values.sum(axis=0)
            envelope += float(matrix_norm(values).sum())
        return total * cell, envelope * cell

    def value(self, t: float, check: bool = False) -> ComplexArray:
        """Return the integral, comparing against doubled nodes if checked."""
        coarse, envelope = self.integrate(t)
        if not check:
            return coarse
        fine, _ = self.integrate(t, refine=2)
        change = float(matrix_norm(fine - coarse))
        if change > self.cfg.tolerance * envelope:
            raise AccuracyError(
                f"J at t={t:.3g}", change, self.cfg.tolerance * envelope
            )
        return fine


def _point(structure: AnisoStructure, x: ArrayLike) -> FloatArray:
    point = structure.points(x)
    if point.ndim != 1:
        raise DimensionError(f"Expected a single point, got {point.shape}")
    return point


def j_eval(
    spec: OperatorSpec,
    beta: Sequence[int],
    x: ArrayLike,
    t: float,
    cfg: QuadratureConfig | None = None,
    time_order: int = 0,
) -> ComplexArray:
    """Return d_t^k d_x^beta J(x, t) for k = ``time_order``.

    Time derivatives insert (-sigma(z))^k in the integrand.

    """
    if cfg is None:
        cfg = QuadratureConfig()
    if t <= 0:
        raise DomainError(f"Time must be positive: {t}")
    if time_order < 0:
        raise DomainError(f"Invalid time derivative order: {time_order}")
    spec.structure.weight(beta)
    point = _point(spec.structure, x)
    inner = _InnerIntegral(spec, beta, point, cfg, time_order=time_order)
    return inner.value(t, check=cfg.refine_check)


def j_envelope(
    structure: AnisoStructure, beta: Sequence[int], x: ArrayLike, t: float
) -> FloatArray:
    """Return the decay envelope t^-1/2 (t^(1/2l) + rho(x))^-(b + |gamma|).

    ``b`` is the anisotropic order of beta.  |J_beta(x, t)| is bounded by
    a constant times the envelope.

    """
    exponent = float(structure.weight(beta) + structure.gamma_norm)
    base = t ** (1 / (2 * structure.ell)) + structure.rho(x)
    return t ** -0.5 * base**-exponent


def _outer_rule(
    structure: AnisoStructure, order: float, nodes: int, floor: float
) -> tuple[FloatArray, FloatArray]:
    """Return times and weights of the t-integral for rho(x) = 1.

    The rule covers [floor^2l, inf).  With t = s^2l it's Gauss-Legendre
    on s in [floor, 1], and Gauss-Jacobi in u = 1/s for s >= 1, where the
    weight absorbs the algebraic decay of J in t.

    """
    two_ell = 2 * structure.ell
    roots, weights = special.roots_legendre(nodes)
    s = floor + (1 - floor) * (roots + 1) / 2
    middle = weights * (1 - floor) / 2 * two_ell * s ** (two_ell - 1)
    power = float(structure.gamma_norm) + order - structure.ell - 1
    roots, weights = special.roots_jacobi(nodes, 0.0, power)
    u = (1 + roots) / 2
    tail = 2 ** (-power - 1) * weights * two_ell * u ** (-two_ell - 1 - power)
    return (
        np.concatenate([s**two_ell, u**-two_ell]),
        np.concatenate([middle, tail]),
    )


def f_eval(
    spec: OperatorSpec,
    beta: Sequence[int],
    x: ArrayLike,
    cfg: QuadratureConfig | None = None,
) -> ComplexArray:
    """Return the fundamental solution F_beta(x) at a nonzero point.

    The outer integral over t >= t_floor uses the rule from _outer_rule,
    scaled by rho(x)^2l.  J is smooth in t near 0 for x != 0, so below the
    floor it's replaced by its Taylor expansion at t_floor, with time
    derivatives of J as coefficients.

    If ``cfg.outer_check`` is set, outer node counts are doubled until F
    changes by less than ``cfg.outer_tolerance``, relative to the L1 norm
    of the integrand.

    """
    if cfg is None:
        cfg = QuadratureConfig()
    structure = spec.structure
    if structure.gamma_norm <= structure.ell:
        raise UnsupportedOperatorError(structure)
    point = _point(structure, x)
    radius = float(structure.rho(point))
    if radius == 0:
        raise DomainError("The fundamental solution is undefined at 0")
    order = float(structure.weight(beta))
    inner = _InnerIntegral(spec, beta, point, cfg)
    zero = np.zeros((spec.m, spec.m), dtype=np.complex128)

    scale = radius ** (2 * structure.ell)
    floor_time = scale * cfg.outer_floor ** (2 * structure.ell)
    head_terms = [
        (-1) ** k
        * floor_time ** (k + 1)
        / math.factorial(k + 1)
        * _InnerIntegral(spec, beta, point, cfg, time_order=k).value(
            floor_time
        )
        for k in range(_HEAD_TERMS)
    ]
    head = sum(head_terms, zero)

    def outer(nodes: int) -> tuple[ComplexArray, float]:
        times, weights = _outer_rule(
            structure, order, nodes, cfg.outer_floor
        )
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            values = list(pool.map(inner.value, scale * times))
        pairs = list(zip(scale * weights, values, strict=True))
        total = sum((w * value for w, value in pairs), zero)
        envelope = sum(
            abs(w) * float(matrix_norm(value)) for w, value in pairs
        )
        return total, envelope

    nodes = cfg.outer_nodes
    total, _ = outer(nodes)
    while cfg.outer_check:
        fine, envelope = outer(2 * nodes)
        change = float(matrix_norm(fine - total)) + float(
            matrix_norm(head_terms[-1])
        )
        bound = cfg.outer_tolerance * (envelope + float(matrix_norm(head)))
        total = fine
        nodes *= 2
        if change <= bound:
            break
        if 2 * nodes > cfg.max_outer_nodes:
            raise AccuracyError(f"F at x={point.tolist()}", change, bound)
    if cfg.refine_check:
        times, _ = _outer_rule(structure, order, nodes, cfg.outer_floor)
        inner.value(floor_time, check=True)
        inner.value(scale * float(times.max()), check=True)
    return t.cast(ComplexArray, (head + total) / (2 * math.pi) ** structure.n)


def g_kernel(
    k: int, s: float, t: float, cfg: QuadratureConfig | None = None
) -> float:
    """Return g_k(s, t), the fundamental solution of d_t + (-d_s^2)^k.

    It's (2 pi)^-1 int e^{isr} e^{-t r^2k} dr, truncated where t r^2k
    exceeds the sigma cutoff.

    """
    if cfg is None:
        cfg = QuadratureConfig()
    if k < 1:
        raise DomainError(f"Kernel order must be positive: {k}")
    if t <= 0:
        raise DomainError(f"Time must be positive: {t}")
    bound = (cfg.sigma_cutoff / t) ** (1 / (2 * k))
    if s == 0:
        value, _ = integrate.quad(
            lambda r: math.exp(-t * r ** (2 * k)),
            0,
            bound,
            epsabs=1e-13,
            epsrel=1e-11,
            limit=200,
        )
    else:
        value, _ = integrate.quad(
            lambda r: math.exp(-t * r ** (2 * k)),
            0,
            bound,
            weight="cos",
            wvar=abs(s),
            epsabs=1e-13,
            epsrel=1e-11,
            limit=200,
        )
    return float(value) / math.pi


def homogeneity_degree(spec: OperatorSpec, beta: Sequence[int]) -> float:
    """Return l - beta.gamma - |gamma|, the degree of F_beta."""
    structure = spec.structure
    return float(
        structure.ell - structure.weight(beta) - structure.gamma_norm
    )


def fit_homogeneity(
    structure: AnisoStructure, points: ArrayLike, values: ArrayLike
) -> float:
    """Return the log-log slope of |values| against rho(points).

    Points are expected on one dilation orbit, where a homogeneous
    kernel has slope equal to its degree.

    """
    radius = structure.rho(structure.points(points))
    magnitude = np.asarray(values)
    if magnitude.ndim > 1:
        magnitude = matrix_norm(magnitude)
    magnitude = np.abs(magnitude)
    if len(radius) < 2 or np.any(magnitude == 0) or np.any(radius == 0):
        raise DomainError("Fitting needs two or more nonzero samples")
    slope, _ = np.polyfit(np.log(radius), np.log(magnitude), 1)
    return float(slope)


class DirectKernel:
    """Kernel source evaluating F_beta by quadrature at every query."""

    def __init__(
        self,
        spec: OperatorSpec,
        beta: Sequence[int],
        cfg: QuadratureConfig | None = None,
    ) -> None:
        self.spec = spec
        self.beta = tuple(beta)
        self.cfg = cfg or QuadratureConfig()
        self.degree = homogeneity_degree(spec, beta)

    def query(self, x: ArrayLike) -> ComplexArray:
        points = self.spec.structure.points(x)
        flat = points.reshape(-1, self.spec.structure.n)
        values = [f_eval(self.spec, self.beta, p, self.cfg) for p in flat]
        m = self.spec.m
        return np.array(values).reshape(points.shape[:-1] + (m, m))


def kernel_tabulate(
    spec: OperatorSpec,
    beta: Sequence[int],
    samples: int,
    cfg: QuadratureConfig | None = None,
    seed: int = 0,
    cache_dir: Path | None = None,
    logger: structlog.stdlib.BoundLogger | None = None,
) -> KernelTable:
    """Tabulate F_beta on the unit shell.

    With ``cache_dir``, a table saved for the same operator, beta, sample
    count and configuration is loaded instead of recomputed.

    """
    if cfg is None:
        cfg = QuadratureConfig()
    if logger is None:
        logger = structlog.get_logger()
    structure = spec.structure
    beta = tuple(int(b) for b in beta)
    header = {
        "spec": spec.digest,
        "beta": list(beta),
        "samples": samples,
        "seed": seed,
        "config": dataclasses.asdict(cfg),
    }
    path = None
    if cache_dir is not None:
        path = cache_dir / KernelTable.cache_name(header)
        if path.exists():
            try:
                table = KernelTable.load(path)
            except TableError as e:
                logger.warning(
                    "ignoring kernel cache", path=str(path), error=str(e)
                )
            else:
                logger.debug("kernel table loaded", path=str(path))
                return table

    directions = sphere_points(structure.n, samples, seed=seed)
    shell = structure.to_shell(directions)
    single = dataclasses.replace(cfg, threads=1)
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        values = list(
            pool.map(lambda p: f_eval(spec, beta, p, single), shell)
        )
    table = KernelTable(
        orders=structure.orders,
        m=structure.m,
        spec_digest=spec.digest,
        beta=beta,
        degree=homogeneity_degree(spec, beta),
        directions=directions,
        shell_points=shell,
        values=np.array(values),
        config=dataclasses.asdict(cfg),
        seed=seed,
    )
    logger.info("kernel tabulated", beta=list(beta), points=len(shell))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.save(path)
    return table


class Annihilation(t.NamedTuple):
    """Residual of sum A_alpha F_alpha and the size of its terms."""

    residual: float
    magnitude: float


def verify_annihilation(
    spec: OperatorSpec,
    kernels: Mapping[MultiIndex, KernelSource],
    points: Iterable[ArrayLike],
) -> Annihilation:
    """Evaluate sum A_alpha F_alpha at nonzero points.

    ``kernels`` maps every multi-index of the operator to a kernel source
    for F_alpha.

    """
    structure = spec.structure
    array = structure.points(np.array(list(points), dtype=float))
    if np.any(structure.sigma(array) == 0):
        raise DomainError("Annihilation is only checked away from 0")
    total = np.zeros(array.shape[:-1] + (spec.m, spec.m), dtype=np.complex128)
    magnitude = 0.0
    for alpha, matrix in spec.coeffs.items():
        if alpha not in kernels:
            raise DomainError(f"Missing kernel for multi-index {alpha}")
        values = kernels[alpha].query(array)
        magnitude = max(magnitude, float(np.max(matrix_norm(values))))
        total += matrix @ values
    return Annihilation(
        residual=float(np.max(matrix_norm(total))), magnitude=magnitude
    )
