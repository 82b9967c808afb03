from collections.abc import Callable, Iterator
from pathlib import Path
import typing as t
import uuid

import pytest
from pytest_structlog import StructuredLogCapture
import yaml

from semikernel.aniso import AnisoStructure, structure_from_orders
from semikernel.fundsol import QuadratureConfig
from semikernel.gallery import GalleryEntry, gallery_entry

SpecWriter = Callable[[dict[str, t.Any]], Path]


@pytest.fixture(autouse=True)
def _autouse(log: StructuredLogCapture) -> Iterator[None]:
    """Autouse dependent fixtures."""
    yield None


@pytest.fixture(scope="session")
def heat1d() -> GalleryEntry:
    return gallery_entry("heat1d")


@pytest.fixture(scope="session")
def laplace2() -> GalleryEntry:
    return gallery_entry("laplace2")


@pytest.fixture(scope="session")
def laplace3() -> GalleryEntry:
    return gallery_entry("laplace3")


@pytest.fixture
def heat_structure() -> AnisoStructure:
    """Structure of d_x^2 - d_t: gamma = (1, 2), |gamma| = 3, l = 2."""
    return structure_from_orders((2, 1))


@pytest.fixture(scope="session")
def quick_quadrature() -> QuadratureConfig:
    """Coarse settings for tests that only need rough kernel values."""
    return QuadratureConfig(
        inner_nodes=24,
        outer_nodes=10,
        refine_check=False,
        outer_check=False,
    )


@pytest.fixture
def write_spec(tmp_path: Path) -> Iterator[SpecWriter]:
    def write(data: dict[str, t.Any]) -> Path:
        path = tmp_path / f"{uuid.uuid4()}.yaml"
        path.write_text(yaml.dump(data), "utf-8")
        return path

    yield write


HEAT_SPEC: dict[str, t.Any] = {
    "name": "heat",
    "orders": [2, 1],
    "family": "parabolic",
    "coefficients": [
        {"alpha": [2, 0], "matrix": 1},
        {"alpha": [0, 1], "matrix": -1},
    ],
}
