"""Script entry point."""

from collections.abc import Callable
import dataclasses
from fractions import Fraction
from functools import wraps
import logging
import math
from pathlib import Path
import sys
import typing as t

import click
import numpy as np
import structlog

from . import __version__
from .aniso import (
    DimensionError,
    DivergenceError,
    DomainError,
    bump_function,
)
from .config import ConfigError, SpecConfig, resolve_spec
from .fundsol import (
    AccuracyError,
    UnsupportedOperatorError,
    f_eval,
    fit_homogeneity,
    homogeneity_degree,
    kernel_tabulate,
)
from .gallery import ParabolicityError, RootLocationError
from .grid import Grid, GridFunction, GridMismatchError
from .solve import residual, solve_convolution, solve_fourier
from .spaces import DegenerateInputError, iso_range
from .symbol import (
    InvalidOperatorError,
    SemiellipticityError,
    ShellSampling,
    check_semielliptic,
)
from .table import KernelSource, KernelTable, TableError
from .verify import (
    Suite,
    VerificationFailure,
    VerifySettings,
    run_suite,
)

EXIT_FAILURE = 1
EXIT_INVALID = 2

# errors for operators failing a mathematical property
_PROPERTY_ERRORS = (
    AccuracyError,
    DivergenceError,
    ParabolicityError,
    RootLocationError,
    SemiellipticityError,
    UnsupportedOperatorError,
    VerificationFailure,
)
# errors for invalid input
_INPUT_ERRORS = (
    ConfigError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    GridMismatchError,
    InvalidOperatorError,
    OSError,
    TableError,
)

# dilation factors for kernel samples along an orbit
_RAY_FACTORS = 2.0 ** (np.arange(-4, 5) / 2)

P = t.ParamSpec("P")
R = t.TypeVar("R")


@dataclasses.dataclass(frozen=True)
class _Options:
    threads: int
    seed: int


class _FractionType(click.ParamType):
    name = "fraction"

    def convert(
        self,
        value: t.Any,
        param: click.Parameter | None,
        ctx: click.Context | None,
    ) -> Fraction:
        if isinstance(value, Fraction):
            return value
        try:
            return Fraction(str(value))
        except (ValueError, ZeroDivisionError):
            self.fail(f"{value!r} is not a rational number", param, ctx)


class _NumberList(click.ParamType):
    """Comma separated numbers."""

    def __init__(self, name: str, kind: Callable[[str], t.Any]) -> None:
        self.name = name
        self._kind = kind

    def convert(
        self,
        value: t.Any,
        param: click.Parameter | None,
        ctx: click.Context | None,
    ) -> tuple[t.Any, ...]:
        if isinstance(value, tuple):
            return value
        try:
            return tuple(self._kind(item) for item in str(value).split(","))
        except ValueError:
            self.fail(f"{value!r} is not a list of {self.name}", param, ctx)


_FRACTION = _FractionType()
_MULTI_INDEX = _NumberList("integers", int)
_POINT = _NumberList("numbers", float)


def _exit_codes(func: Callable[P, R]) -> Callable[P, R]:
    """Turn errors into exit codes, 1 for failed properties, 2 for input."""

    @wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        logger = structlog.get_logger()
        try:
            return func(*args, **kwargs)
        except _PROPERTY_ERRORS as error:
            logger.error("property failed", error=str(error))
            raise SystemExit(EXIT_FAILURE)
        except _INPUT_ERRORS as error:
            logger.error("invalid input", error=str(error))
            raise SystemExit(EXIT_INVALID)

    return wrapper


def _configure_logging(level: str) -> None:
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.KeyValueRenderer(
                key_order=["timestamp", "level", "event"]
            ),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.getLevelName(level.upper())
        ),
        logger_factory=structlog.PrintLoggerFactory(sys.stderr),
        cache_logger_on_first_use=False,
    )


def _quadrature_options(func: Callable[P, R]) -> Callable[P, R]:
    options = [
        click.option(
            "--sigma-cutoff",
            type=click.FloatRange(min=20),
            help="truncate the inner integral where sigma t exceeds this",
        ),
        click.option(
            "--nodes",
            type=click.IntRange(min=8),
            help="inner quadrature nodes per axis",
        ),
        click.option(
            "--outer-nodes",
            type=click.IntRange(min=8),
            help="outer quadrature nodes",
        ),
        click.option(
            "--cache-dir",
            type=click.Path(file_okay=False, path_type=Path),
            envvar="SEMIKERNEL_CACHE",
            show_envvar=True,
            help="directory caching kernel tables",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _load(
    spec: str,
    options: _Options,
    sigma_cutoff: float | None = None,
    nodes: int | None = None,
    outer_nodes: int | None = None,
) -> SpecConfig:
    """Resolve the spec, applying quadrature overrides."""
    config = resolve_spec(spec)
    changes: dict[str, t.Any] = {"threads": options.threads}
    if sigma_cutoff is not None:
        changes["sigma_cutoff"] = sigma_cutoff
    if nodes is not None:
        changes["inner_nodes"] = nodes
        changes["max_inner_nodes"] = max(
            config.quadrature.max_inner_nodes, nodes
        )
    if outer_nodes is not None:
        changes["outer_nodes"] = outer_nodes
        changes["max_outer_nodes"] = max(
            config.quadrature.max_outer_nodes, 2 * outer_nodes
        )
    quadrature = dataclasses.replace(config.quadrature, **changes)
    return dataclasses.replace(config, quadrature=quadrature)


def _gate(
    config: SpecConfig, options: _Options, require_supported: bool = True
) -> None:
    """Check the family condition, semiellipticity and |gamma| > l."""
    entry = config.entry
    entry.check(seed=options.seed)
    check_semielliptic(
        entry.spec, sampling=ShellSampling(seed=options.seed)
    ).require()
    structure = entry.spec.structure
    if require_supported and structure.gamma_norm <= structure.ell:
        raise UnsupportedOperatorError(structure)


def _format_window(low: Fraction, high: Fraction) -> str:
    return f"({float(low):g}, {float(high):g}) exact ({low}, {high})"


@click.group(context_settings={"auto_envvar_prefix": "SEMIKERNEL"})
@click.version_option(__version__)
@click.option(
    "--log-level",
    type=click.Choice(["debug", "info", "warning", "error"]),
    default="info",
    show_default=True,
    help="minimum level of log messages",
)
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    default=1,
    show_default=True,
    help="worker threads for quadrature and FFTs",
)
@click.option(
    "--seed",
    type=int,
    default=0,
    show_default=True,
    help="seed for all sampling",
)
@click.pass_context
def script(
    ctx: click.Context, log_level: str, threads: int, seed: int
) -> None:
    """Fundamental solutions of semielliptic operators.

    SPEC arguments are spec files or names of built-in operators.

    """
    _configure_logging(log_level)
    ctx.obj = _Options(threads=threads, seed=seed)


@script.command()
@click.argument("spec")
@click.option(
    "--p",
    "exponents",
    type=_FRACTION,
    multiple=True,
    help="exponent for the isomorphism window, like 2 or 3/2",
)
@click.pass_obj
@_exit_codes
def check(options: _Options, spec: str, exponents: tuple[Fraction]) -> None:
    """Check semiellipticity and print the isomorphism window."""
    config = _load(spec, options)
    entry = config.entry
    structure = entry.spec.structure
    click.echo(f"name: {config.name}")
    click.echo(f"orders: {' '.join(str(o) for o in structure.orders)}")
    click.echo(f"ell: {structure.ell}")
    click.echo(f"gamma: {' '.join(str(g) for g in structure.gamma)}")
    click.echo(f"gamma-norm: {structure.gamma_norm}")
    supported = structure.gamma_norm > structure.ell
    if supported:
        click.echo("supported: yes")
    else:
        click.echo("supported: no (gamma-norm ≤ order)")

    margin = entry.check(seed=options.seed)
    if math.isfinite(margin):
        click.echo(f"family: {entry.family} (margin {margin:.6g})")
    report = check_semielliptic(
        entry.spec, sampling=ShellSampling(seed=options.seed)
    )
    if report.constants is None:
        click.echo(
            "semielliptic: no "
            f"(min singular value {report.min_singular_value:.6g} at "
            f"{list(report.worst_point)})"
        )
    else:
        click.echo(
            "semielliptic: yes "
            f"(min singular value {report.min_singular_value:.6g})"
        )
        constants = report.constants
        click.echo(
            f"constants: c1={constants.c1:.6g} c2={constants.c2:.6g} "
            f"c3={constants.c3:.6g} c4={constants.c4:.6g}"
        )
    if supported:
        for p in exponents or (Fraction(2),):
            low, high = iso_range(entry.spec, p)
            click.echo(f"iso-range p={p}: {_format_window(low, high)}")
    if not (supported and report.semielliptic):
        raise SystemExit(EXIT_FAILURE)


@script.command()
@click.argument("spec")
@click.option(
    "--beta",
    type=_MULTI_INDEX,
    help="multi-index of the derivative kernel, like 1,0",
)
@click.option(
    "--output",
    type=click.Path(dir_okay=False, path_type=Path),
    help="file for the kernel table",
)
@click.option(
    "--samples",
    type=click.IntRange(min=2),
    default=256,
    show_default=True,
    help="shell points in the table",
)
@click.option(
    "--ray",
    type=_POINT,
    help="print the kernel along the dilation orbit of this point",
)
@_quadrature_options
@click.pass_obj
@_exit_codes
def kernel(
    options: _Options,
    spec: str,
    beta: tuple[int, ...] | None,
    output: Path | None,
    samples: int,
    ray: tuple[float, ...] | None,
    sigma_cutoff: float | None,
    nodes: int | None,
    outer_nodes: int | None,
    cache_dir: Path | None,
) -> None:
    """Tabulate the fundamental solution on the unit shell."""
    if output is None and ray is None:
        raise click.UsageError("Either --output or --ray is required")
    config = _load(spec, options, sigma_cutoff, nodes, outer_nodes)
    operator = config.entry.spec
    structure = operator.structure
    index = beta or (0,) * structure.n
    structure.weight(index)
    _gate(config, options)
    logger = structlog.get_logger().bind(spec=config.name)
    if output is not None:
        table = kernel_tabulate(
            operator,
            index,
            samples,
            cfg=config.quadrature,
            seed=options.seed,
            cache_dir=cache_dir,
            logger=logger,
        )
        table.save(output)
        click.echo(
            f"table: {output} ({len(table.directions)} points, "
            f"degree {table.degree:g})"
        )
    if ray is not None:
        orbit = structure.dilate(_RAY_FACTORS, structure.points(ray))
        values = np.array(
            [f_eval(operator, index, x, config.quadrature) for x in orbit]
        )
        click.echo("scale,rho,abs")
        for factor, x, value in zip(_RAY_FACTORS, orbit, values, strict=True):
            click.echo(
                f"{factor!r},{float(structure.rho(x))!r},"
                f"{float(np.linalg.norm(value))!r}"
            )
        slope = fit_homogeneity(structure, orbit, values)
        degree = homogeneity_degree(operator, index)
        click.echo(f"fitted exponent: {slope:.3f} (expected {degree:.3f})")


@script.command()
@click.argument("spec")
@click.argument("output", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--grid",
    "points",
    type=click.IntRange(min=8),
    default=128,
    show_default=True,
    help="grid points per axis",
)
@click.option(
    "--extent",
    type=click.FloatRange(min=0, min_open=True),
    default=2.5,
    show_default=True,
    help="anisotropic half width of the box",
)
@click.option(
    "--width",
    type=click.FloatRange(min=0, min_open=True),
    default=0.5,
    show_default=True,
    help="anisotropic width of the bump",
)
@click.pass_obj
@_exit_codes
def bump(
    options: _Options,
    spec: str,
    output: Path,
    points: int,
    extent: float,
    width: float,
) -> None:
    """Write a smooth bump source centered at the origin."""
    config = _load(spec, options)
    structure = config.entry.spec.structure
    grid = Grid.anisotropic(structure, extent, points)
    source = GridFunction.sample(
        grid,
        bump_function(structure, np.zeros(structure.n), width),
        m=structure.m,
    )
    source.save(output)
    boundary = source.boundary_magnitude()
    click.echo(f"source: {output} (boundary {boundary:.3e})")


@script.command()
@click.argument("spec")
@click.argument(
    "source", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.argument("output", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--method",
    type=click.Choice(["fourier", "convolution"]),
    default="fourier",
    show_default=True,
    help="solver to use",
)
@click.option(
    "--kernel",
    "kernel_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="kernel table for the convolution solver",
)
@click.option(
    "--samples",
    type=click.IntRange(min=2),
    default=256,
    show_default=True,
    help="shell points of a tabulated kernel",
)
@click.option(
    "--csv",
    "csv_path",
    type=click.Path(dir_okay=False, path_type=Path),
    help="export a central slice of the solution as CSV",
)
@_quadrature_options
@click.pass_obj
@_exit_codes
def solve(
    options: _Options,
    spec: str,
    source: Path,
    output: Path,
    method: str,
    kernel_path: Path | None,
    samples: int,
    csv_path: Path | None,
    sigma_cutoff: float | None,
    nodes: int | None,
    outer_nodes: int | None,
    cache_dir: Path | None,
) -> None:
    """Solve L u = f for the source in a grid function file."""
    config = _load(spec, options, sigma_cutoff, nodes, outer_nodes)
    operator = config.entry.spec
    f = GridFunction.load(source)
    if f.m != operator.m or f.grid.n != operator.structure.n:
        raise DimensionError(
            f"Source with {f.grid.n} variables and {f.m} components "
            f"doesn't match the operator"
        )
    convolution = method == "convolution"
    _gate(config, options, require_supported=convolution)
    logger = structlog.get_logger().bind(spec=config.name)
    if convolution:
        kernel_source = _kernel_source(
            config, options, kernel_path, samples, cache_dir, logger
        )
        u = solve_convolution(
            operator, f, kernel_source, workers=options.threads, logger=logger
        )
    else:
        u = solve_fourier(operator, f, workers=options.threads, logger=logger)
    u.save(output)
    error = residual(operator, u, f)
    peak = f.max_norm()
    relative = error / peak if peak else 0.0
    click.echo(f"residual: {error:.3e} (relative {relative:.3e})")
    click.echo(f"boundary tail: {u.boundary_magnitude():.3e}")
    if csv_path is not None:
        u.export_csv(
            csv_path,
            fixed={
                axis: f.grid.points[axis] // 2 for axis in range(2, f.grid.n)
            },
        )


def _kernel_source(
    config: SpecConfig,
    options: _Options,
    path: Path | None,
    samples: int,
    cache_dir: Path | None,
    logger: structlog.stdlib.BoundLogger,
) -> KernelSource:
    operator = config.entry.spec
    if path is not None:
        table = KernelTable.load(path)
        if table.spec_digest != operator.digest or any(table.beta):
            raise TableError(f"Kernel table {path} is for another operator")
        return table
    if config.entry.oracle is not None:
        return config.entry.oracle
    return kernel_tabulate(
        operator,
        (0,) * operator.structure.n,
        samples,
        cfg=config.quadrature,
        seed=options.seed,
        cache_dir=cache_dir,
        logger=logger,
    )


@script.command()
@click.argument("spec")
@click.option(
    "--suite",
    type=click.Choice([suite.value for suite in Suite]),
    default=Suite.ALL.value,
    show_default=True,
    help="property suite to run",
)
@click.option(
    "--output",
    type=click.Path(dir_okay=False, path_type=Path),
    help="file for the CSV report, standard output if not given",
)
@click.option(
    "--p",
    "exponent",
    type=_FRACTION,
    default="2",
    show_default=True,
    help="exponent of the weighted spaces",
)
@click.option(
    "--s",
    "weight",
    type=float,
    help="weight of the spaces suite, the middle of the window by default",
)
@click.option(
    "--grid",
    "points",
    type=click.IntRange(min=8),
    help="grid points per axis",
)
@click.option(
    "--extent",
    type=click.FloatRange(min=0, min_open=True),
    default=2.5,
    show_default=True,
    help="anisotropic half width of the box",
)
@_quadrature_options
@click.pass_obj
@_exit_codes
def verify(
    options: _Options,
    spec: str,
    suite: str,
    output: Path | None,
    exponent: Fraction,
    weight: float | None,
    points: int | None,
    extent: float,
    sigma_cutoff: float | None,
    nodes: int | None,
    outer_nodes: int | None,
    cache_dir: Path | None,
) -> None:
    """Run property suites and write a CSV report."""
    config = _load(spec, options, sigma_cutoff, nodes, outer_nodes)
    settings = VerifySettings(
        seed=options.seed,
        p=exponent,
        s=weight,
        grid_points=points,
        half_width=extent,
    )
    report = run_suite(config, Suite(suite), settings, cache_dir=cache_dir)
    if output is None:
        report.write_csv(sys.stdout)
    else:
        with output.open("w", newline="") as fd:
            report.write_csv(fd)
    report.require()
