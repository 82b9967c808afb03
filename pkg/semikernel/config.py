"""Operator spec files."""

import dataclasses
from importlib import resources
from pathlib import Path
import typing as t

import jsonschema
import numpy as np
import structlog
import yaml

from .aniso import (
    DimensionError,
    DomainError,
    MultiIndex,
    structure_from_orders,
)
from .fundsol import QuadratureConfig
from .gallery import GALLERY, GalleryEntry, family_entry, gallery_entry
from .symbol import ComplexArray, InvalidOperatorError, operator_spec
from .yaml import load_yaml_spec


class ConfigError(Exception):
    """Operator spec is invalid."""


@dataclasses.dataclass(frozen=True)
class SpecConfig:
    """An operator with the settings to compute its kernel."""

    entry: GalleryEntry
    quadrature: QuadratureConfig
    #: gallery name or file path the operator was loaded from
    source: str

    @property
    def name(self) -> str:
        return self.entry.name or self.source


def resolve_spec(
    value: str,
    logger: structlog.stdlib.BoundLogger | None = None,
) -> SpecConfig:
    """Return the spec for a gallery name or a spec file path."""
    if value in GALLERY:
        return SpecConfig(gallery_entry(value), QuadratureConfig(), value)
    path = Path(value)
    if not path.is_file():
        known = ", ".join(sorted(GALLERY))
        raise ConfigError(
            f"Not a spec file or gallery name: {value} (known: {known})"
        )
    return load_spec(path, logger=logger)


def load_spec(
    path: Path,
    logger: structlog.stdlib.BoundLogger | None = None,
) -> SpecConfig:
    """Load an operator spec from a YAML file."""
    if logger is None:
        logger = structlog.get_logger()

    try:
        data = load_yaml_spec(path)
    except yaml.YAMLError as e:
        raise ConfigError(str(e))
    except OSError as e:
        raise ConfigError(f"Unable to read spec {path}: {e.strerror}")
    if not isinstance(data, dict):
        raise ConfigError(f"File content is not a mapping: {path}")
    _validate_spec(data)

    m = data.get("system-size", 1)
    coeffs = _get_coefficients(data["coefficients"], m, logger)
    try:
        structure = structure_from_orders(tuple(data["orders"]), m=m)
        spec = operator_spec(structure, coeffs, name=data.get("name", ""))
        entry = family_entry(spec, data.get("family"))
    except (DimensionError, DomainError, InvalidOperatorError) as e:
        raise ConfigError(f"Invalid operator in {path}: {e}")
    return SpecConfig(
        entry, _get_quadrature(data.get("quadrature", {})), str(path)
    )


def _validate_spec(data: dict[str, t.Any]) -> None:
    schema_file = resources.files("semikernel") / "schemas" / "spec.yaml"
    schema = yaml.safe_load(schema_file.read_bytes())
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as e:
        path = "/".join(str(item) for item in e.absolute_path)
        raise ConfigError(f"Invalid spec at {path}: {e.message}")


def _parse_number(value: float | list[float]) -> complex:
    if isinstance(value, list):
        return complex(value[0], value[1])
    return complex(value)


def _parse_matrix(value: t.Any, m: int, alpha: MultiIndex) -> ComplexArray:
    """Return the coefficient matrix, or a 0-d array for a multiple of I."""
    if not isinstance(value, list) or not isinstance(value[0], list):
        return np.array(_parse_number(value), dtype=np.complex128)
    rows = [[_parse_number(entry) for entry in row] for row in value]
    if len(rows) != m or any(len(row) != m for row in rows):
        raise ConfigError(f"Matrix for alpha {list(alpha)} must be {m}x{m}")
    return np.array(rows, dtype=np.complex128)


def _get_coefficients(
    configs: list[dict[str, t.Any]],
    m: int,
    logger: structlog.stdlib.BoundLogger,
) -> dict[MultiIndex, ComplexArray]:
    """Return a dict mapping multi-indices to coefficient matrices."""
    coeffs: dict[MultiIndex, ComplexArray] = {}
    zeros = []
    for config in configs:
        alpha = tuple(config["alpha"])
        if alpha in coeffs or alpha in zeros:
            raise ConfigError(
                f"Duplicated coefficient for alpha {list(alpha)}"
            )
        matrix = _parse_matrix(config["matrix"], m, alpha)
        if not np.any(matrix):
            zeros.append(alpha)
            continue
        coeffs[alpha] = matrix
    if zeros:
        logger.warning(
            "zero coefficient entries", alphas=[list(a) for a in zeros]
        )
    return coeffs


def _get_quadrature(config: dict[str, t.Any]) -> QuadratureConfig:
    try:
        return QuadratureConfig(
            **{key.replace("-", "_"): value for key, value in config.items()}
        )
    except DomainError as e:
        raise ConfigError(f"Invalid quadrature settings: {e}")
