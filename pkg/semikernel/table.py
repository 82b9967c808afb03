"""Kernels tabulated on the unit shell and extended by homogeneity."""

import dataclasses
from functools import cached_property
import hashlib
import json
from pathlib import Path
import typing as t

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import ConvexHull

from .aniso import AnisoStructure, DomainError, FloatArray, MultiIndex
from .symbol import ComplexArray

FORMAT_VERSION = 1

# barycentric weight above which a query is taken to hit a node
_NODE_HIT = 1 - 1e-12
# queries interpolated at once
_QUERY_CHUNK = 4096


class TableError(Exception):
    """A kernel table is inconsistent or can't be read."""


class KernelSource(t.Protocol):
    """Anything returning kernel values at nonzero points."""

    degree: float

    def query(self, x: ArrayLike) -> ComplexArray: ...


class _Facets(t.NamedTuple):
    normals: FloatArray
    offsets: FloatArray
    simplices: NDArray[np.intp]
    # inverse of the transposed vertex matrix of each facet
    inverses: FloatArray


@dataclasses.dataclass(frozen=True, eq=False)
class KernelTable:
    """Values of a homogeneous kernel at points of the unit shell.

    Queries at x != 0 locate the Euclidean direction on the dilation orbit
    of x, interpolate linearly over the facet of the convex hull of the
    stored directions containing it, and scale by rho(x)^degree.

    """

    orders: tuple[int, ...]
    m: int
    spec_digest: str
    beta: MultiIndex
    degree: float
    directions: FloatArray
    shell_points: FloatArray
    values: ComplexArray
    config: dict[str, t.Any] = dataclasses.field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        count = len(self.directions)
        if self.shell_points.shape != self.directions.shape:
            raise TableError("Shell points don't match directions")
        if self.values.shape != (count, self.m, self.m):
            raise TableError(
                f"Expected {count} values of shape {(self.m, self.m)}, "
                f"got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise TableError("Table values must be finite")
        radius = self.structure.rho(self.shell_points)
        if np.any(np.abs(radius - 1) > 1e-12):
            raise TableError("Table points must lie on the unit shell")

    @cached_property
    def structure(self) -> AnisoStructure:
        return AnisoStructure(tuple(self.orders), m=self.m)

    @cached_property
    def _facets(self) -> _Facets:
        hull = ConvexHull(self.directions)
        simplices = hull.simplices
        vertices = self.directions[simplices]
        return _Facets(
            normals=hull.equations[:, :-1],
            offsets=hull.equations[:, -1],
            simplices=simplices,
            inverses=np.linalg.inv(np.transpose(vertices, (0, 2, 1))),
        )

    def query(self, x: ArrayLike) -> ComplexArray:
        """Return kernel values at nonzero points, shape (..., m, m)."""
        structure = self.structure
        points = structure.points(x)
        flat = points.reshape(-1, structure.n)
        if np.any(structure.sigma(flat) == 0):
            raise DomainError("Kernel tables are only defined away from 0")
        values = self.interpolate(structure.orbit_direction(flat))
        scale = structure.rho(flat) ** self.degree
        result = values * scale[:, np.newaxis, np.newaxis]
        return result.reshape(points.shape[:-1] + (self.m, self.m))

    def interpolate(self, directions: FloatArray) -> ComplexArray:
        """Interpolate values at Euclidean unit directions."""
        if self.structure.n == 1:
            index = np.argmax(directions @ self.directions.T, axis=1)
            return t.cast(ComplexArray, self.values[index])
        chunks = [
            self._interpolate_chunk(directions[start : start + _QUERY_CHUNK])
            for start in range(0, len(directions), _QUERY_CHUNK)
        ]
        if not chunks:
            return np.zeros((0, self.m, self.m), dtype=np.complex128)
        return np.concatenate(chunks)

    def _interpolate_chunk(self, directions: FloatArray) -> ComplexArray:
        facets = self._facets
        # the ray through a direction leaves the hull through the facet
        # with the nearest supporting plane
        scores = (directions @ facets.normals.T) / -facets.offsets
        facet = np.argmax(scores, axis=1)
        weights = np.einsum(
            "mij,mj->mi", facets.inverses[facet], directions
        )
        weights /= weights.sum(axis=1, keepdims=True)
        vertices = facets.simplices[facet]
        result = np.einsum("mi,mijk->mjk", weights, self.values[vertices])
        nearest = np.argmax(weights, axis=1)
        hit = weights[np.arange(len(weights)), nearest] >= _NODE_HIT
        rows = np.flatnonzero(hit)
        result[rows] = self.values[vertices[rows, nearest[rows]]]
        return t.cast(ComplexArray, result)

    def header(self) -> dict[str, t.Any]:
        return {
            "format-version": FORMAT_VERSION,
            "orders": list(self.orders),
            "m": self.m,
            "spec": self.spec_digest,
            "beta": list(self.beta),
            "degree": self.degree,
            "samples": len(self.directions),
            "seed": self.seed,
            "config": self.config,
        }

    def save(self, path: Path) -> None:
        """Save the table as a NumPy archive with a JSON header."""
        with path.open("wb") as fd:
            np.savez(
                fd,
                header=np.array(json.dumps(self.header())),
                directions=self.directions,
                shell_points=self.shell_points,
                values=self.values,
            )

    @classmethod
    def load(cls, path: Path) -> "KernelTable":
        """Load a table saved by ``save``."""
        try:
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data["header"]))
                arrays = {
                    name: np.array(data[name])
                    for name in ("directions", "shell_points", "values")
                }
        except (OSError, KeyError, ValueError) as e:
            raise TableError(f"Can't read kernel table {path}: {e}") from e
        version = header.get("format-version")
        if version != FORMAT_VERSION:
            raise TableError(
                f"Unsupported kernel table format version: {version}"
            )
        return cls(
            orders=tuple(header["orders"]),
            m=header["m"],
            spec_digest=header["spec"],
            beta=tuple(header["beta"]),
            degree=header["degree"],
            directions=arrays["directions"],
            shell_points=arrays["shell_points"],
            values=arrays["values"],
            config=header["config"],
            seed=header["seed"],
        )

    @staticmethod
    def cache_name(key: dict[str, t.Any]) -> str:
        """Return the cache file name for a tabulation key."""
        digest = hashlib.sha256(
            json.dumps(key, sort_keys=True).encode()
        ).hexdigest()
        return f"kernel-{digest[:24]}.npz"
