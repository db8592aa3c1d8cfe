"""
Lattice geometry and walker-state containers.

Amplitudes are stored as arrays of shape ``extent + (2,)``: site-major,
spin-minor, row-major over (x, y). Flattening in C order therefore yields the
basis index ``site_index * 2 + spin``. States are value-like; operations in
``app.services`` return new instances instead of mutating their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Callable, Iterable, Optional, Tuple

import numpy as np

from app.core.exceptions import GeometryMismatchException


class Spin(IntEnum):
    """Internal walker state; the value is the spin-minor basis offset."""
    UP = 0
    DOWN = 1


class Boundary(str, Enum):
    """Boundary handling per lattice axis."""
    PERIODIC = "periodic"
    ABSORBING_GUARD = "absorbing-guard"


@dataclass(frozen=True)
class LatticeGeometry:
    """Cubic lattice in one or two dimensions with a two-level walker."""
    dimension: int
    extent: Tuple[int, ...]
    boundary: Tuple[Boundary, ...] = ()
    lattice_constant: float = 1.0

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"Lattice dimension must be 1 or 2, got {self.dimension}")
        extent = tuple(int(n) for n in self.extent)
        if len(extent) != self.dimension:
            raise ValueError(f"Expected {self.dimension} extents, got {len(extent)}")
        if any(n < 2 for n in extent):
            raise ValueError(f"Every extent must be at least 2, got {extent}")
        boundary = tuple(Boundary(b) for b in self.boundary) or (Boundary.PERIODIC,) * self.dimension
        if len(boundary) != self.dimension:
            raise ValueError(f"Expected {self.dimension} boundary entries, got {len(boundary)}")
        if self.lattice_constant <= 0:
            raise ValueError("Lattice constant must be positive")
        object.__setattr__(self, 'extent', extent)
        object.__setattr__(self, 'boundary', boundary)

    @classmethod
    def line(cls, sites: int, boundary: Boundary = Boundary.PERIODIC) -> "LatticeGeometry":
        return cls(dimension=1, extent=(sites,), boundary=(boundary,))

    @classmethod
    def plane(cls, nx: int, ny: int, boundary: Boundary = Boundary.PERIODIC) -> "LatticeGeometry":
        return cls(dimension=2, extent=(nx, ny), boundary=(boundary, boundary))

    @property
    def site_count(self) -> int:
        return int(np.prod(self.extent))

    @property
    def basis_size(self) -> int:
        return 2 * self.site_count

    @property
    def shape(self) -> Tuple[int, ...]:
        """Array shape of an amplitude container."""
        return self.extent + (2,)

    def axis_coordinates(self, axis: int) -> np.ndarray:
        """Integer coordinates along one axis, centred so that index N//2 is 0."""
        if not 0 <= axis < self.dimension:
            raise GeometryMismatchException(
                f"Axis {axis} out of range for a {self.dimension}D lattice",
                expected=f"0..{self.dimension - 1}", actual=axis
            )
        n = self.extent[axis]
        return np.arange(n) - n // 2

    def coordinate_grids(self) -> Tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``extent``, one per axis."""
        axes = [self.axis_coordinates(d) for d in range(self.dimension)]
        return tuple(np.meshgrid(*axes, indexing='ij'))

    def site_index(self, site: Tuple[int, ...]) -> Tuple[int, ...]:
        """Array index of a site given in centred coordinates."""
        site = tuple(int(s) for s in site)
        if len(site) != self.dimension:
            raise GeometryMismatchException(
                "Site coordinate has the wrong dimension",
                expected=self.dimension, actual=len(site)
            )
        index = []
        for d, s in enumerate(site):
            i = s + self.extent[d] // 2
            if not 0 <= i < self.extent[d]:
                raise GeometryMismatchException(
                    f"Site {site} lies outside the lattice", expected=self.extent, actual=site
                )
            index.append(i)
        return tuple(index)

    def site_coordinates(self) -> np.ndarray:
        """All site coordinates in basis order, shape (site_count, dimension)."""
        grids = self.coordinate_grids()
        return np.stack([g.ravel() for g in grids], axis=1)

    def minimum_image(self, displacement: np.ndarray, axis: int) -> np.ndarray:
        """Wrap displacements along a periodic axis into [-N/2, N/2)."""
        n = self.extent[axis]
        if self.boundary[axis] is Boundary.PERIODIC:
            return (displacement + n / 2) % n - n / 2
        return displacement

    def require_same(self, other: "LatticeGeometry") -> None:
        if self != other:
            raise GeometryMismatchException(
                "Operands are defined on different lattices", expected=self, actual=other
            )


@dataclass(frozen=True, eq=False)
class SpinorState:
    """Pure walker state with one complex amplitude per (site, spin)."""
    geometry: LatticeGeometry
    amplitudes: np.ndarray

    def __post_init__(self):
        amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if amplitudes.shape != self.geometry.shape:
            if amplitudes.size == self.geometry.basis_size:
                amplitudes = amplitudes.reshape(self.geometry.shape)
            else:
                raise GeometryMismatchException(
                    "Amplitude array does not match the lattice",
                    expected=self.geometry.shape, actual=amplitudes.shape
                )
        amplitudes = amplitudes.copy()
        amplitudes.setflags(write=False)
        object.__setattr__(self, 'amplitudes', amplitudes)

    @classmethod
    def localized(cls, geometry: LatticeGeometry, site: Tuple[int, ...], spin: Spin) -> "SpinorState":
        """Single basis state |x, s>."""
        amplitudes = np.zeros(geometry.shape, dtype=complex)
        amplitudes[geometry.site_index(site) + (int(spin),)] = 1.0
        return cls(geometry, amplitudes)

    @classmethod
    def from_vector(cls, geometry: LatticeGeometry, vector: np.ndarray) -> "SpinorState":
        return cls(geometry, np.asarray(vector, dtype=complex).reshape(geometry.shape))

    @property
    def vector(self) -> np.ndarray:
        """Flat amplitude vector in basis order."""
        return self.amplitudes.reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def normalized(self) -> "SpinorState":
        norm = self.norm()
        if norm == 0:
            raise ValueError("Cannot normalize the zero state")
        return SpinorState(self.geometry, self.amplitudes / norm)

    def spin_populations(self) -> np.ndarray:
        """Total probability per spin, summed over sites."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=tuple(range(self.geometry.dimension)))

    def to_density(self) -> "DensityOperator":
        v = self.vector
        return DensityOperator(self.geometry, np.outer(v, v.conj()))


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Mixed walker state as a dense matrix over the (site, spin) basis."""
    geometry: LatticeGeometry
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        n = self.geometry.basis_size
        if matrix.shape != (n, n):
            raise GeometryMismatchException(
                "Density matrix does not match the lattice basis", expected=(n, n), actual=matrix.shape
            )
        matrix = matrix.copy()
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def maximally_mixed(cls, geometry: LatticeGeometry) -> "DensityOperator":
        n = geometry.basis_size
        return cls(geometry, np.eye(n, dtype=complex) / n)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def smallest_eigenvalue(self) -> float:
        """Smallest eigenvalue of the Hermitian part (full diagonalization)."""
        hermitian = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(hermitian)[0])

    def diagonal(self) -> np.ndarray:
        """Populations reshaped to ``extent + (2,)``."""
        return np.real(np.diag(self.matrix)).reshape(self.geometry.shape)

    def expectation(self, state: SpinorState) -> float:
        """<psi| rho |psi> for a pure reference state."""
        self.geometry.require_same(state.geometry)
        v = state.vector
        return float(np.real(np.vdot(v, self.matrix @ v)))


@dataclass(frozen=True, eq=False)
class Region:
    """Set of lattice sites stored as a boolean mask of shape ``extent``."""
    geometry: LatticeGeometry
    mask: np.ndarray
    name: str = "region"

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.geometry.extent:
            raise GeometryMismatchException(
                "Region mask does not match the lattice", expected=self.geometry.extent, actual=mask.shape
            )
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, 'mask', mask)

    @classmethod
    def from_sites(cls, geometry: LatticeGeometry, sites: Iterable[Tuple[int, ...]], name: str = "region") -> "Region":
        mask = np.zeros(geometry.extent, dtype=bool)
        for site in sites:
            mask[geometry.site_index(site)] = True
        return cls(geometry, mask, name)

    @classmethod
    def from_predicate(cls, geometry: LatticeGeometry, predicate: Callable[..., np.ndarray],
                       name: str = "region") -> "Region":
        """Build a region from a vectorized predicate over coordinate grids."""
        mask = np.broadcast_to(np.asarray(predicate(*geometry.coordinate_grids()), dtype=bool), geometry.extent)
        return cls(geometry, mask, name)

    @classmethod
    def whole(cls, geometry: LatticeGeometry) -> "Region":
        return cls(geometry, np.ones(geometry.extent, dtype=bool), "lattice")

    @classmethod
    def empty(cls, geometry: LatticeGeometry) -> "Region":
        return cls(geometry, np.zeros(geometry.extent, dtype=bool), "empty")

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.mask))

    def sites(self) -> np.ndarray:
        """Member coordinates, shape (size, dimension)."""
        grids = self.geometry.coordinate_grids()
        return np.stack([g[self.mask] for g in grids], axis=1)

    def intersection(self, other: "Region", name: Optional[str] = None) -> "Region":
        self.geometry.require_same(other.geometry)
        return Region(self.geometry, self.mask & other.mask, name or f"{self.name}&{other.name}")

    def is_disjoint(self, other: "Region") -> bool:
        self.geometry.require_same(other.geometry)
        return not np.any(self.mask & other.mask)
