import os
from pathlib import Path
import typing as t

import yaml


def load_yaml_spec(path: Path) -> t.Any:
    """Load a YAML document from a file."""

    with path.open() as fd:
        return yaml.load(fd, _spec_loader(path.parent))


class _SpecLoader(yaml.SafeLoader):
    """YAML loader supporting tags for operator spec files."""

    base_path: t.ClassVar[Path]


def _spec_loader(path: Path) -> type[_SpecLoader]:
    class SpecLoaderWithPath(_SpecLoader):
        base_path = path

    return SpecLoaderWithPath


def _scan_error(loader: _SpecLoader, tag: str, problem: str) -> t.NoReturn:
    raise yaml.scanner.ScannerError(
        f"while processing '{tag}' tag",
        None,
        problem,
        loader.get_mark(),  # type: ignore
    )


def _tag_env(loader: _SpecLoader, node: yaml.nodes.ScalarNode) -> t.Any:
    env = loader.construct_scalar(node)
    value = os.getenv(env)
    if value is None:
        _scan_error(loader, "env", f"variable {env} undefined")
    return yaml.safe_load(value)


def _tag_include(loader: _SpecLoader, node: yaml.nodes.ScalarNode) -> t.Any:
    path = loader.base_path / loader.construct_scalar(node)
    if not path.is_file():
        _scan_error(loader, "include", f"file {path} not found")
    with path.open() as fd:
        return yaml.load(fd, _spec_loader(path.parent))


def _tag_identity(
    loader: _SpecLoader, node: yaml.nodes.ScalarNode
) -> list[list[list[float]]]:
    """Return the m x m identity matrix as [re, im] pairs."""
    value = loader.construct_scalar(node)
    try:
        size = int(value)
    except ValueError:
        _scan_error(loader, "identity", f"invalid size {value!r}")
    if size < 1:
        _scan_error(loader, "identity", f"invalid size {size}")
    return [
        [[1.0 if row == col else 0.0, 0.0] for col in range(size)]
        for row in range(size)
    ]


def _tag_complex(
    loader: _SpecLoader, node: yaml.nodes.ScalarNode
) -> list[float]:
    value = loader.construct_scalar(node)
    try:
        number = complex(value.replace(" ", ""))
    except ValueError:
        _scan_error(loader, "complex", f"invalid complex number {value!r}")
    return [number.real, number.imag]


_SpecLoader.add_constructor("!env", _tag_env)
_SpecLoader.add_constructor("!include", _tag_include)
_SpecLoader.add_constructor("!identity", _tag_identity)
_SpecLoader.add_constructor("!complex", _tag_complex)
