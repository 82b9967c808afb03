"""Property suites measuring an operator against its theory."""

from collections.abc import Callable, Iterator
import csv
import dataclasses
import enum
from fractions import Fraction
import math
from pathlib import Path
import typing as t

import numpy as np
from numpy.typing import ArrayLike
import structlog

from .aniso import (
    CutoffSpec,
    DivergenceError,
    DomainError,
    FloatArray,
    MultiIndex,
    bump_function,
    cutoff_build,
    finite_difference,
    k_kernel,
    monomial,
    shell_integral,
    sphere_points,
)
from .config import SpecConfig
from .fundsol import (
    DirectKernel,
    UnsupportedOperatorError,
    f_eval,
    fit_homogeneity,
    homogeneity_degree,
    j_eval,
    kernel_tabulate,
    verify_annihilation,
)
from .grid import Grid, GridFunction, Lattice
from .solve import (
    apply_operator,
    relative_difference,
    residual,
    solve_convolution,
    solve_fourier,
)
from .spaces import (
    Exponent,
    adjoint_window,
    apriori_ratio,
    counterexample_constant,
    counterexample_cutoff_family,
    counterexample_onto_obstruction,
    iso_range,
    mapping_bound_ratio,
)
from .symbol import (
    ShellSampling,
    check_semielliptic,
    matrix_norm,
    verify_growth_bounds,
)
from .table import KernelSource, KernelTable

REPORT_HEADER = ("spec", "suite", "quantity", "value", "bound", "passed")

# dilation factor for the exact scaling laws
_SCALING_FACTOR = 3.0
# radius pairs for cutoff derivative bounds
_CUTOFF_RADII = ((1.0, 2.0), (2.0, 4.0), (4.0, 8.0))
# levels between the radii where cutoff derivatives are sampled
_CUTOFF_LEVELS = (1.1, 1.3, 1.5, 1.7, 1.9)
# quasi-distances where the K kernel is compared with its bound
_K_RADII = (0.5, 1.0, 2.0, 4.0, 8.0)
# exponents p for the window arithmetic
_WINDOW_EXPONENTS = (Fraction(3, 2), Fraction(2), Fraction(3))
# grid points per axis by dimension, when not configured
_GRID_POINTS = {1: 512, 2: 256, 3: 64}


class VerificationFailure(Exception):
    """A measured property of the operator doesn't hold."""

    def __init__(self, measurement: "Measurement") -> None:
        self.measurement = measurement
        super().__init__(
            f"{measurement.suite}: {measurement.quantity} = "
            f"{measurement.value:.6g} fails bound {measurement.bound:.6g}"
        )


class Suite(enum.StrEnum):
    SCALING = "scaling"
    KERNEL = "kernel"
    SOLVER = "solver"
    SPACES = "spaces"
    COUNTEREXAMPLES = "counterexamples"
    ALL = "all"


@dataclasses.dataclass(frozen=True)
class VerifySettings:
    """Sample counts and tolerances of the suites."""

    seed: int = 0
    scaling_samples: int = 1000
    scaling_tolerance: float = 1e-11
    growth_samples: int = 200
    cutoff_samples: int = 64
    #: allowed factor between cutoff derivative bounds and their fit
    cutoff_slack: float = 2.0
    shell_tolerance: float = 1e-6
    #: shell integrals are checked up to this dimension
    shell_max_dims: int = 3
    #: allowed factor between the K kernel and its bound fit at 0
    k_slack: float = 10.0
    kernel_points: int = 20
    j_tolerance: float = 1e-6
    orbit_points: int = 5
    homogeneity_tolerance: float = 0.01
    oracle_tolerance: float = 1e-4
    annihilation_points: int = 4
    annihilation_tolerance: float = 1e-3
    grid_points: int | None = None
    half_width: float = 2.5
    interior: float = 0.8
    solver_tolerance: float = 1e-6
    agreement_interior: float = 0.8
    agreement_tolerance: float = 1e-3
    table_samples: int = 256
    bump_count: int = 50
    #: sanity bound for ratios whose constant isn't known
    ratio_bound: float = 1e3
    reseed_tolerance: float = 0.2
    dilations: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    cutoff_half_width: float = 4.0
    p: Exponent = Fraction(2)
    #: weight for the spaces suite, the middle of the window if unset
    s: float | None = None

    def __post_init__(self) -> None:
        counts = (
            self.scaling_samples,
            self.growth_samples,
            self.kernel_points,
            self.orbit_points,
            self.annihilation_points,
            self.bump_count,
        )
        if min(counts) < 1:
            raise DomainError("Sample counts must be positive")
        if self.cutoff_samples < 2 or self.table_samples < 2:
            raise DomainError("Shell samples must be at least 2")
        if not (
            0 < self.interior <= 1 and 0 < self.agreement_interior <= 1
        ):
            raise DomainError("Interior fractions must be in (0, 1]")
        if self.half_width <= 0 or self.cutoff_half_width <= 2:
            raise DomainError("Invalid grid half widths")
        if not self.p > 1:
            raise DomainError(f"Norm exponent must exceed 1: {self.p}")


@dataclasses.dataclass(frozen=True)
class Measurement:
    suite: str
    quantity: str
    value: float
    bound: float
    passed: bool


@dataclasses.dataclass(frozen=True)
class VerificationReport:
    """Measurements of one or more suites for an operator."""

    spec: str
    measurements: tuple[Measurement, ...]

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.measurements)

    def require(self) -> None:
        """Raise for the first failed measurement."""
        for item in self.measurements:
            if not item.passed:
                raise VerificationFailure(item)

    def write_csv(self, fd: t.TextIO) -> None:
        writer = csv.writer(fd)
        writer.writerow(REPORT_HEADER)
        for item in self.measurements:
            writer.writerow(
                [
                    self.spec,
                    item.suite,
                    item.quantity,
                    repr(float(item.value)),
                    repr(float(item.bound)),
                    str(item.passed).lower(),
                ]
            )


class _Recorder:
    """Collect the measurements of a suite."""

    def __init__(
        self, suite: Suite, logger: structlog.stdlib.BoundLogger
    ) -> None:
        self.suite = suite
        self.measurements: list[Measurement] = []
        self._logger = logger.bind(suite=str(suite))

    def record(
        self, quantity: str, value: float, bound: float, passed: bool
    ) -> None:
        measurement = Measurement(
            str(self.suite), quantity, float(value), float(bound), passed
        )
        self.measurements.append(measurement)
        if passed:
            self._logger.debug("measured", quantity=quantity, value=value)
        else:
            self._logger.warning(
                "property failed", quantity=quantity, value=value, bound=bound
            )

    def at_most(self, quantity: str, value: float, bound: float) -> None:
        self.record(quantity, value, bound, bool(value <= bound))

    def holds(self, quantity: str, condition: bool) -> None:
        self.record(quantity, float(condition), 1.0, condition)


def _relative(value: ArrayLike, reference: ArrayLike) -> float:
    difference = np.abs(np.asarray(value) - np.asarray(reference))
    scale = np.abs(np.asarray(reference))
    ratio = np.divide(
        difference,
        scale,
        out=np.where(difference > 0, np.inf, 0.0),
        where=scale > 0,
    )
    return float(np.max(ratio, initial=0.0))


def _label(values: MultiIndex) -> str:
    return "(" + ",".join(str(v) for v in values) + ")"


class Verifier:
    """Run property suites against an operator."""

    def __init__(
        self,
        config: SpecConfig,
        settings: VerifySettings | None = None,
        cache_dir: Path | None = None,
        logger: structlog.stdlib.BoundLogger | None = None,
    ) -> None:
        self.config = config
        self.entry = config.entry
        self.spec = config.entry.spec
        self.structure = self.spec.structure
        self.settings = settings or VerifySettings()
        self.cache_dir = cache_dir
        if logger is None:
            logger = structlog.get_logger()
        self._logger = logger.bind(spec=config.name)
        self._workers = config.quadrature.threads
        self._suites: dict[Suite, Callable[[_Recorder], None]] = {
            Suite.SCALING: self.scaling,
            Suite.KERNEL: self.kernel,
            Suite.SOLVER: self.solver,
            Suite.SPACES: self.spaces,
            Suite.COUNTEREXAMPLES: self.counterexamples,
        }

    def gate(self) -> None:
        """Check the family condition and semiellipticity."""
        self.entry.check(seed=self.settings.seed)
        sampling = ShellSampling(seed=self.settings.seed)
        check_semielliptic(
            self.spec, sampling=sampling, logger=self._logger
        ).require()

    def run(self, suite: Suite) -> VerificationReport:
        """Run a suite, or all of them, after the gate."""
        self.gate()
        suites = list(self._suites) if suite == Suite.ALL else [suite]
        measurements: list[Measurement] = []
        for name in suites:
            recorder = _Recorder(name, self._logger)
            self._logger.info("running suite", suite=str(name))
            self._suites[name](recorder)
            measurements.extend(recorder.measurements)
        return VerificationReport(self.config.name, tuple(measurements))

    def _rng(self) -> np.random.Generator:
        return np.random.default_rng(self.settings.seed)

    def _require_supported(self) -> None:
        if self.structure.gamma_norm <= self.structure.ell:
            raise UnsupportedOperatorError(self.structure)

    def _grid(self, half_width: float | None = None) -> Grid:
        n = self.structure.n
        points = self.settings.grid_points or _GRID_POINTS.get(n, 16)
        return Grid.anisotropic(
            self.structure, half_width or self.settings.half_width, points
        )

    def _weight(self) -> float:
        if self.settings.s is not None:
            return self.settings.s
        low, high = iso_range(self.spec, self.settings.p)
        return float((low + high) / 2)

    def _shell_points(self, count: int) -> FloatArray:
        directions = sphere_points(
            self.structure.n, count, seed=self.settings.seed
        )
        return self.structure.to_shell(directions)

    def scaling(self, rec: _Recorder) -> None:
        """Exact dilation laws, growth constants and cutoff bounds."""
        structure = self.structure
        spec = self.spec
        settings = self.settings
        factor = _SCALING_FACTOR
        x = self._rng().standard_normal(
            (settings.scaling_samples, structure.n)
        )
        scaled = structure.dilate(factor, x)
        rec.at_most(
            "rho dilation",
            _relative(structure.rho(scaled), factor * structure.rho(x)),
            settings.scaling_tolerance,
        )
        monomial_error = max(
            _relative(
                monomial(alpha, scaled),
                factor ** float(structure.weight(alpha)) * monomial(alpha, x),
            )
            for alpha in spec.coeffs
        )
        rec.at_most(
            "monomial dilation", monomial_error, settings.scaling_tolerance
        )
        reference = factor**structure.ell * spec.symbol(x)
        symbol_error = matrix_norm(spec.symbol(scaled) - reference) / (
            matrix_norm(reference)
        )
        rec.at_most(
            "symbol dilation",
            float(np.max(symbol_error)),
            settings.scaling_tolerance,
        )
        self._growth(rec)
        self._cutoff_bounds(rec)
        if structure.n <= settings.shell_max_dims:
            self._shell_scaling(rec)
            self._k_bound(rec)

    def _growth(self, rec: _Recorder) -> None:
        structure = self.structure
        bounds = verify_growth_bounds(
            self.spec,
            structure.enumerate_indices(structure.ell),
            ShellSampling(
                samples=self.settings.growth_samples, seed=self.settings.seed
            ),
        )
        symbol_constant = max(bound.symbol_constant for bound in bounds)
        inverse_constant = max(bound.inverse_constant for bound in bounds)
        rec.record(
            "symbol growth constant",
            symbol_constant,
            math.inf,
            math.isfinite(symbol_constant),
        )
        rec.record(
            "inverse growth constant",
            inverse_constant,
            math.inf,
            math.isfinite(inverse_constant),
        )

    def _cutoff_bounds(self, rec: _Recorder) -> None:
        """Check sup |d^alpha phi| (S - R)^(alpha.gamma) is constant."""
        structure = self.structure
        shell = self._shell_points(self.settings.cutoff_samples)
        alphas = [
            tuple(j if k == axis else 0 for k in range(structure.n))
            for axis, order in enumerate(structure.orders)
            for j in range(1, order + 1)
        ]
        for alpha in alphas:
            order = float(structure.weight(alpha))
            sups = []
            for inner, outer in _CUTOFF_RADII:
                cutoff = cutoff_build(structure, CutoffSpec(inner, outer))
                points = np.concatenate(
                    [
                        structure.dilate(inner * level, shell)
                        for level in _CUTOFF_LEVELS
                    ]
                )
                step = 1e-2 * inner**structure.gamma_array
                derivative = finite_difference(cutoff, points, alpha, step)
                sups.append(
                    float(np.max(np.abs(derivative)))
                    * (outer - inner) ** order
                )
            fit = sups[0]
            spread = max(max(sups) / fit, fit / min(sups))
            rec.at_most(
                f"cutoff derivative {_label(alpha)}",
                spread,
                self.settings.cutoff_slack,
            )

    def _k_bound(self, rec: _Recorder) -> None:
        """Check K(x) against (1 + rho(x))^(xi + eta + |gamma|)."""
        structure = self.structure
        gamma_norm = float(structure.gamma_norm)
        xi, eta = -gamma_norm / 2, -3 * gamma_norm / 4
        exponent = xi + eta + gamma_norm
        constant = k_kernel(structure, np.zeros(structure.n), xi, eta)
        shell = self._shell_points(1)[0]
        ratios = [
            k_kernel(structure, structure.dilate(radius, shell), xi, eta)
            / (constant * (1 + radius) ** exponent)
            for radius in _K_RADII
        ]
        rec.at_most(
            "K kernel bound",
            max(max(ratios), 1 / min(ratios)),
            self.settings.k_slack,
        )

    def _shell_scaling(self, rec: _Recorder) -> None:
        structure = self.structure
        gamma_norm = float(structure.gamma_norm)
        factor = 2.0
        tolerance = self.settings.shell_tolerance
        for s in (-1.0, 0.0, 1.0):
            expected = factor ** (s + gamma_norm) * shell_integral(
                structure, 1.0, 2.0, s
            )
            value = shell_integral(structure, factor, 2 * factor, s)
            rec.at_most(
                f"shell integral scaling s={s:g}",
                _relative(value, expected),
                tolerance,
            )
        for s in (-gamma_norm - 1, -gamma_norm - 2):
            expected = factor ** (s + gamma_norm) * shell_integral(
                structure, 1.0, math.inf, s
            )
            value = shell_integral(structure, factor, math.inf, s)
            rec.at_most(
                f"shell tail scaling s={s:g}",
                _relative(value, expected),
                tolerance,
            )
        try:
            shell_integral(structure, 0.0, 1.0, -gamma_norm)
        except DivergenceError:
            detected = True
        else:
            detected = False
        rec.holds("shell divergence detected", detected)

    def kernel(self, rec: _Recorder) -> None:
        """Scaling of J, homogeneity of F, oracle and annihilation."""
        self._require_supported()
        self._j_scaling(rec)
        self._homogeneity(rec)
        if self.entry.oracle is not None and self.entry.space_dims:
            self._oracle(rec, self.entry.oracle)
        self._annihilation(rec)

    def _j_scaling(self, rec: _Recorder) -> None:
        structure = self.structure
        cfg = self.config.quadrature
        n = structure.n
        rng = self._rng()
        first = tuple(1 if k == 0 else 0 for k in range(n))
        for beta in ((0,) * n, first):
            exponent = float(
                structure.weight(beta) + structure.gamma_norm + structure.ell
            )
            for s in (0.5, 2.0):
                difference = 0.0
                scale = 0.0
                for _ in range(self.settings.kernel_points):
                    direction = structure.to_shell(rng.standard_normal(n))
                    x = structure.dilate(rng.uniform(0.05, 1.0), direction)
                    time = rng.uniform(0.5, 2.0)
                    value = j_eval(self.spec, beta, x, time, cfg)
                    other = s**exponent * j_eval(
                        self.spec,
                        beta,
                        structure.dilate(s, x),
                        s ** (2 * structure.ell) * time,
                        cfg,
                    )
                    difference = max(
                        difference, float(matrix_norm(value - other))
                    )
                    scale = max(scale, float(matrix_norm(value)))
                rec.at_most(
                    f"J scaling beta={_label(beta)} s={s:g}",
                    difference / scale if scale else math.inf,
                    self.settings.j_tolerance,
                )

    def _homogeneity(self, rec: _Recorder) -> None:
        structure = self.structure
        beta = (0,) * structure.n
        degree = homogeneity_degree(self.spec, beta)
        factors = np.array([0.5, 1.0, 2.0])
        worst = 0.0
        for point in self._shell_points(max(self.settings.orbit_points, 2)):
            orbit = structure.dilate(factors, point)
            values = np.array(
                [
                    f_eval(self.spec, beta, x, self.config.quadrature)
                    for x in orbit
                ]
            )
            slope = fit_homogeneity(structure, orbit, values)
            worst = max(worst, abs(slope - degree) / abs(degree))
        rec.at_most(
            "kernel homogeneity", worst, self.settings.homogeneity_tolerance
        )

    def _oracle(self, rec: _Recorder, oracle: KernelSource) -> None:
        """Compare F with a closed form at times t > 0 and t < 0."""
        space = self.entry.space_dims

        def point(x: float, time: float) -> list[float]:
            return [x] + [0.0] * (space - 1) + [time]

        beta = (0,) * self.structure.n
        cfg = self.config.quadrature
        positive = np.array([point(0, 1), point(1, 1), point(2, 0.5)])
        negative = np.array([point(0, -1), point(1, -1), point(0.5, -2)])
        values = np.array([f_eval(self.spec, beta, x, cfg) for x in positive])
        expected = oracle.query(positive)
        rec.at_most(
            "kernel oracle",
            float(
                np.max(matrix_norm(values - expected) / matrix_norm(expected))
            ),
            self.settings.oracle_tolerance,
        )
        backward = max(
            float(matrix_norm(f_eval(self.spec, beta, x, cfg)))
            for x in negative
        )
        rec.at_most(
            "kernel before time zero",
            backward,
            self.settings.oracle_tolerance,
        )

    def _annihilation(self, rec: _Recorder) -> None:
        structure = self.structure
        rng = self._rng()
        shell = self._shell_points(max(self.settings.annihilation_points, 2))
        radii = rng.uniform(0.5, 4.0, size=len(shell))
        points = structure.dilate(radii, shell)
        kernels: dict[MultiIndex, KernelSource] = {
            alpha: DirectKernel(self.spec, alpha, self.config.quadrature)
            for alpha in self.spec.coeffs
        }
        result = verify_annihilation(self.spec, kernels, points)
        rec.at_most(
            "annihilation residual",
            result.residual / result.magnitude,
            self.settings.annihilation_tolerance,
        )

    def kernel_table(self) -> KernelTable:
        """Tabulate the kernel on the unit shell, through the cache if set."""
        return kernel_tabulate(
            self.spec,
            (0,) * self.structure.n,
            self.settings.table_samples,
            cfg=self.config.quadrature,
            seed=self.settings.seed,
            cache_dir=self.cache_dir,
            logger=self._logger,
        )

    def solver(self, rec: _Recorder) -> None:
        """Solve L u = L phi for a decaying phi with both solvers."""
        self._require_supported()
        structure = self.structure
        settings = self.settings
        grid = self._grid()
        phi = GridFunction.sample(
            grid,
            lambda x: np.exp(-structure.sigma(x)),
            m=self.spec.m,
        )
        f = apply_operator(self.spec, phi, workers=self._workers)
        u = solve_fourier(
            self.spec, f, workers=self._workers, logger=self._logger
        )
        # phi decays, so periodic derivatives check u independently
        rec.at_most(
            "fourier residual",
            residual(
                self.spec, u, f, settings.interior, lattice=Lattice.PERIODIC
            )
            / f.max_norm(),
            settings.solver_tolerance,
        )
        rec.at_most(
            "fourier error",
            relative_difference(u, phi, settings.interior),
            settings.solver_tolerance,
        )
        convolved = solve_convolution(
            self.spec,
            f,
            self.kernel_table(),
            workers=self._workers,
            logger=self._logger,
        )
        rec.at_most(
            "convolution agreement",
            relative_difference(convolved, u, settings.agreement_interior),
            settings.agreement_tolerance,
        )

    def _bumps(self, grid: Grid, seed: int) -> Iterator[GridFunction]:
        structure = self.structure
        rng = np.random.default_rng(seed)
        for _ in range(self.settings.bump_count):
            direction = structure.to_shell(rng.standard_normal(structure.n))
            center = structure.dilate(rng.uniform(0.05, 0.5), direction)
            width = rng.uniform(0.25, 0.5)
            yield GridFunction.sample(
                grid, bump_function(structure, center, width), m=self.spec.m
            )

    def spaces(self, rec: _Recorder) -> None:
        """Mapping bound of the solution operator and apriori ratios."""
        self._require_supported()
        settings = self.settings
        p = settings.p
        s = self._weight()
        grid = self._grid()
        seed = settings.seed
        maxima = [
            max(
                mapping_bound_ratio(self.spec, f, p, s)
                for f in self._bumps(grid, current)
            )
            for current in (seed, seed + 1)
        ]
        rec.at_most("mapping bound ratio", maxima[0], settings.ratio_bound)
        rec.at_most(
            "mapping bound reseed change",
            abs(maxima[1] - maxima[0]) / maxima[0],
            settings.reseed_tolerance,
        )
        apriori = max(
            apriori_ratio(self.spec, u, p, s) for u in self._bumps(grid, seed)
        )
        rec.at_most("apriori ratio", apriori, settings.ratio_bound)
        structure = self.structure
        origin = np.zeros(structure.n)
        for factor in settings.dilations:
            u = GridFunction.sample(
                grid.dilated(structure, factor),
                bump_function(structure, origin, factor * 0.5),
                m=self.spec.m,
            )
            rec.at_most(
                f"apriori ratio dilation={factor:g}",
                apriori_ratio(self.spec, u, p, s),
                settings.ratio_bound,
            )

    def counterexamples(self, rec: _Recorder) -> None:
        """Failure of the isomorphism outside the window."""
        self._require_supported()
        spec = self.spec
        structure = self.structure
        p = self.settings.p
        low, high = iso_range(spec, p)
        ell = structure.ell

        below = float(low) - 0.5
        report = counterexample_constant(spec, p, below)
        rec.holds(
            f"constant norm finite s={below:g}",
            report.converges and report.expected,
        )
        above = float(high) + 0.5
        report = counterexample_constant(spec, p, above)
        rec.holds(
            f"constant norm divergent s={above:g}",
            not report.converges and not report.expected,
        )

        grid = self._grid(self.settings.cutoff_half_width)
        ratios = counterexample_cutoff_family(
            spec, p, self.settings.dilations, grid
        )
        previous = math.inf
        for item in ratios:
            rec.record(
                f"cutoff ratio R={item.radius:g}",
                item.ratio,
                previous,
                item.ratio < previous,
            )
            previous = item.ratio

        obstruction = counterexample_onto_obstruction(spec, p, above)
        rec.record(
            f"onto pairing s={above:g}",
            obstruction.pairing,
            0.0,
            obstruction.pairing > 0,
        )
        gamma_norm = float(structure.gamma_norm)
        rec.record(
            "witness exponent",
            obstruction.witness_exponent,
            -gamma_norm,
            obstruction.witness_exponent < -gamma_norm,
        )

        for exponent in _WINDOW_EXPONENTS:
            window = iso_range(spec, exponent)
            if self.entry.iso_formula is not None:
                rec.holds(
                    f"window formula p={exponent}",
                    window == self.entry.iso_formula(exponent),
                )
            dual = adjoint_window(spec, exponent)
            rec.holds(
                f"adjoint window p={exponent}",
                dual == (-window[1] - ell, -window[0] - ell),
            )


def run_suite(
    config: SpecConfig,
    suite: Suite,
    settings: VerifySettings | None = None,
    cache_dir: Path | None = None,
    logger: structlog.stdlib.BoundLogger | None = None,
) -> VerificationReport:
    """Run a verification suite for an operator."""
    verifier = Verifier(
        config, settings=settings, cache_dir=cache_dir, logger=logger
    )
    return verifier.run(suite)
