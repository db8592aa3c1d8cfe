"""
Elementary walk operators and step protocols.

A protocol is an ordered tuple of primitives, listed in the order in which they
act on the state (the first primitive is applied first). One application of
the whole tuple is one time step.

Primitives:
    Coin       spin rotation exp(-i sigma_2 theta / 2) with a site-dependent angle
               taken from the coin field (theta1 or theta2, times an exact
               rational scale) or a fixed angle.
    ShiftUp    moves the up component one site along +e_axis.
    ShiftDown  moves the down component one site along -e_axis.

State vectors are stepped with index permutations (np.roll) and blocked 2x2
coin updates. A sparse matrix of the same step exists for diagonalization.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from app.core.exceptions import GeometryMismatchException
from app.models.lattice import Boundary, LatticeGeometry, Spin, SpinorState
from app.services.coin_field import CoinField

logger = logging.getLogger(__name__)


class CoinComponent(str, Enum):
    THETA1 = "theta1"
    THETA2 = "theta2"
    FIXED = "fixed"


@dataclass(frozen=True)
class Coin:
    component: CoinComponent
    scale: Fraction = Fraction(1)
    angle: float = 0.0  # used by FIXED coins only

    def angles(self, field: CoinField) -> np.ndarray:
        if self.component is CoinComponent.FIXED:
            return np.full(field.geometry.extent, self.angle)
        values = field.component(self.component.value)
        if self.scale == 1:
            return values
        return values * self.scale.numerator / self.scale.denominator


@dataclass(frozen=True)
class ShiftUp:
    axis: int


@dataclass(frozen=True)
class ShiftDown:
    axis: int


Primitive = Union[Coin, ShiftUp, ShiftDown]


@dataclass(frozen=True)
class WalkProtocol:
    name: str
    dimension: int
    primitives: Tuple[Primitive, ...]

    def __post_init__(self):
        for primitive in self.primitives:
            if isinstance(primitive, (ShiftUp, ShiftDown)) and primitive.axis >= self.dimension:
                raise GeometryMismatchException(
                    f"Protocol '{self.name}' shifts along axis {primitive.axis} in {self.dimension}D",
                    expected=f"axis < {self.dimension}", actual=primitive.axis
                )

    def require_geometry(self, geometry: LatticeGeometry) -> None:
        if geometry.dimension != self.dimension:
            raise GeometryMismatchException(
                f"Protocol '{self.name}' is {self.dimension}D but the lattice is {geometry.dimension}D",
                expected=self.dimension, actual=geometry.dimension
            )


class ProtocolName(str, Enum):
    SPLIT_STEP_1D = "split_step_1d"
    FRAME_PRIME = "frame_prime"
    FRAME_DOUBLE_PRIME = "frame_double_prime"
    SIGMA_Z_FRAME = "sigma_z_frame"
    WALK_2D = "walk_2d"


SIGMA_1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_3 = np.array([[1, 0], [0, -1]], dtype=complex)


class ChiralFrame(str, Enum):
    """Time frames of the 1D split-step walk with a chiral symmetry."""
    PRIME = "frame_prime"
    DOUBLE_PRIME = "frame_double_prime"
    SIGMA_Z = "sigma_z_frame"

    @property
    def gamma(self) -> np.ndarray:
        """Single-site chiral symmetry operator."""
        return SIGMA_3 if self is ChiralFrame.SIGMA_Z else SIGMA_1


HALF = Fraction(1, 2)

_SPLIT_STEP = (Coin(CoinComponent.THETA1), ShiftUp(0), Coin(CoinComponent.THETA2), ShiftDown(0))
_FRAME_PRIME = (Coin(CoinComponent.THETA1, HALF), ShiftUp(0), Coin(CoinComponent.THETA2), ShiftDown(0),
                Coin(CoinComponent.THETA1, HALF))
_FRAME_DOUBLE_PRIME = (Coin(CoinComponent.THETA2, HALF), ShiftDown(0), Coin(CoinComponent.THETA1), ShiftUp(0),
                       Coin(CoinComponent.THETA2, HALF))
_SIGMA_Z = (Coin(CoinComponent.FIXED, angle=-math.pi / 2),) + _FRAME_PRIME + \
           (Coin(CoinComponent.FIXED, angle=math.pi / 2),)
_WALK_2D = (Coin(CoinComponent.THETA1), ShiftUp(0), ShiftDown(0), Coin(CoinComponent.THETA2),
            ShiftUp(1), ShiftDown(1))

PROTOCOLS = {
    ProtocolName.SPLIT_STEP_1D: WalkProtocol(ProtocolName.SPLIT_STEP_1D.value, 1, _SPLIT_STEP),
    ProtocolName.FRAME_PRIME: WalkProtocol(ProtocolName.FRAME_PRIME.value, 1, _FRAME_PRIME),
    ProtocolName.FRAME_DOUBLE_PRIME: WalkProtocol(ProtocolName.FRAME_DOUBLE_PRIME.value, 1, _FRAME_DOUBLE_PRIME),
    ProtocolName.SIGMA_Z_FRAME: WalkProtocol(ProtocolName.SIGMA_Z_FRAME.value, 1, _SIGMA_Z),
    ProtocolName.WALK_2D: WalkProtocol(ProtocolName.WALK_2D.value, 2, _WALK_2D),
}


def get_protocol(name: Union[str, ProtocolName]) -> WalkProtocol:
    try:
        return PROTOCOLS[ProtocolName(name)]
    except ValueError:
        raise ValueError(f"Unknown protocol '{name}'; choose one of {[p.value for p in ProtocolName]}")


def frame_operator(frame: ChiralFrame, field: Optional[CoinField] = None) -> WalkProtocol:
    """
    Primitive sequence of a chiral time frame of the 1D split-step walk.

    The frames are cyclic permutations (or a fixed-coin conjugation) of the
    split-step primitives, so homogeneous spectra coincide with the split step.
    """
    if field is not None and field.geometry.dimension != 1:
        raise GeometryMismatchException("Chiral frames are defined for 1D walks only",
                                        expected=1, actual=field.geometry.dimension)
    return PROTOCOLS[ProtocolName(ChiralFrame(frame).value)]


def coin_matrix(theta: float) -> np.ndarray:
    """exp(-i sigma_2 theta/2) in the (up, down) basis."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _spatial_axis(amplitudes: np.ndarray, geometry: LatticeGeometry, axis: int) -> int:
    return amplitudes.ndim - 1 - geometry.dimension + axis


class CompiledStep:
    """
    A protocol bound to a coin field, with coin cosines/sines precomputed.

    ``apply`` works on amplitude arrays of shape ``batch + extent + (2,)`` so
    trajectory ensembles can be stepped together.
    """

    def __init__(self, protocol: WalkProtocol, field: CoinField):
        protocol.require_geometry(field.geometry)
        self.protocol = protocol
        self.field = field
        self.geometry = field.geometry
        self._operations: List[tuple] = []
        for primitive in protocol.primitives:
            if isinstance(primitive, Coin):
                theta = primitive.angles(field)
                self._operations.append(('coin', np.cos(theta / 2), np.sin(theta / 2)))
            elif isinstance(primitive, ShiftUp):
                self._operations.append(('shift', primitive.axis, int(Spin.UP), 1))
            else:
                self._operations.append(('shift', primitive.axis, int(Spin.DOWN), -1))

    def __len__(self):
        return len(self._operations)

    def apply_operation(self, amplitudes: np.ndarray, index: int) -> Tuple[np.ndarray, float]:
        """Apply one primitive; returns (new amplitudes, leaked probability)."""
        operation = self._operations[index]
        if operation[0] == 'coin':
            _, c, s = operation
            up, down = amplitudes[..., 0], amplitudes[..., 1]
            out = np.empty_like(amplitudes)
            out[..., 0] = c * up - s * down
            out[..., 1] = s * up + c * down
            return out, 0.0

        _, axis, spin, direction = operation
        array_axis = _spatial_axis(amplitudes, self.geometry, axis)
        out = amplitudes.copy()
        component = amplitudes[..., spin]
        moved = np.roll(component, direction, axis=array_axis)
        leaked = 0.0
        if self.geometry.boundary[axis] is Boundary.ABSORBING_GUARD:
            n = self.geometry.extent[axis]
            edge_in = 0 if direction > 0 else n - 1
            wrapped = np.take(moved, [edge_in], axis=array_axis)
            leaked = float(np.sum(np.abs(wrapped) ** 2))
            index_tuple = [slice(None)] * moved.ndim
            index_tuple[array_axis] = edge_in
            moved[tuple(index_tuple)] = 0.0
        out[..., spin] = moved
        return out, leaked

    def apply(self, amplitudes: np.ndarray) -> Tuple[np.ndarray, float]:
        """One full step; returns (amplitudes, leaked probability)."""
        leaked_total = 0.0
        for index in range(len(self._operations)):
            amplitudes, leaked = self.apply_operation(amplitudes, index)
            leaked_total += leaked
        return amplitudes, leaked_total


def apply_coin(state: SpinorState, field: CoinField, which: str, scale: Union[Fraction, int, str] = 1) -> SpinorState:
    """Rotate the spinor at every site by scale * field angle ``which``."""
    field.require_geometry(state.geometry)
    coin = Coin(CoinComponent(which), Fraction(scale))
    theta = coin.angles(field)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    up, down = state.amplitudes[..., 0], state.amplitudes[..., 1]
    return SpinorState(state.geometry, np.stack([c * up - s * down, s * up + c * down], axis=-1))


def apply_shift(state: SpinorState, axis: int, spin: Spin) -> SpinorState:
    """
    Spin-dependent shift: up moves to +e_axis, down moves to -e_axis; the other
    component is untouched. Periodic wrap, or absorption on guarded axes.
    """
    geometry = state.geometry
    if not 0 <= axis < geometry.dimension:
        raise GeometryMismatchException(f"Shift axis {axis} out of range for a {geometry.dimension}D lattice",
                                        expected=f"0..{geometry.dimension - 1}", actual=axis)
    primitive = ShiftUp(axis) if Spin(spin) is Spin.UP else ShiftDown(axis)
    protocol = WalkProtocol("shift", geometry.dimension, (primitive,))
    compiled = CompiledStep(protocol, CoinField(geometry, np.zeros(geometry.extent), np.zeros(geometry.extent)))
    amplitudes, _ = compiled.apply(np.asarray(state.amplitudes))
    return SpinorState(geometry, amplitudes)


def step(state: SpinorState, protocol: WalkProtocol, field: CoinField, n_steps: int = 1) -> SpinorState:
    """Apply the protocol ``n_steps`` times."""
    return step_with_leak(state, protocol, field, n_steps)[0]


def step_with_leak(state: SpinorState, protocol: WalkProtocol, field: CoinField,
                   n_steps: int = 1) -> Tuple[SpinorState, float]:
    """Apply the protocol and report probability absorbed by guarded boundaries."""
    if n_steps < 0:
        raise ValueError("Number of steps cannot be negative")
    field.require_geometry(state.geometry)
    compiled = CompiledStep(protocol, field)
    amplitudes = np.asarray(state.amplitudes)
    leaked_total = 0.0
    for _ in range(n_steps):
        amplitudes, leaked = compiled.apply(amplitudes)
        leaked_total += leaked
    return SpinorState(state.geometry, amplitudes), leaked_total


def _primitive_matrix(primitive: Primitive, field: CoinField) -> sp.csr_matrix:
    geometry = field.geometry
    n = geometry.basis_size
    if isinstance(primitive, Coin):
        theta = primitive.angles(field).ravel()
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        sites = np.arange(geometry.site_count)
        rows = np.concatenate([2 * sites, 2 * sites, 2 * sites + 1, 2 * sites + 1])
        cols = np.concatenate([2 * sites, 2 * sites + 1, 2 * sites, 2 * sites + 1])
        data = np.concatenate([c, -s, s, c]).astype(complex)
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    spin = int(Spin.UP) if isinstance(primitive, ShiftUp) else int(Spin.DOWN)
    direction = 1 if isinstance(primitive, ShiftUp) else -1
    index = np.arange(n).reshape(geometry.shape)
    # destination j receives the amplitude of source[j]
    source = index.copy()
    source[..., spin] = np.roll(index[..., spin], direction, axis=primitive.axis)
    keep = np.ones(geometry.shape, dtype=bool)
    if geometry.boundary[primitive.axis] is Boundary.ABSORBING_GUARD:
        edge_in = 0 if direction > 0 else geometry.extent[primitive.axis] - 1
        sl = [slice(None)] * geometry.dimension + [spin]
        sl[primitive.axis] = edge_in
        keep[tuple(sl)] = False
    rows = np.arange(n)[keep.ravel()]
    cols = source.ravel()[keep.ravel()]
    return sp.csr_matrix((np.ones(rows.size, dtype=complex), (rows, cols)), shape=(n, n))


def step_matrix(protocol: WalkProtocol, field: CoinField) -> sp.csr_matrix:
    """Sparse one-step operator over the (site, spin) basis."""
    protocol.require_geometry(field.geometry)
    n = field.geometry.basis_size
    matrix = sp.identity(n, dtype=complex, format='csr')
    for primitive in protocol.primitives:
        matrix = _primitive_matrix(primitive, field) @ matrix
    return matrix.tocsr()


def primitive_matrices(protocol: WalkProtocol, field: CoinField) -> List[sp.csr_matrix]:
    """Sparse matrices of the individual primitives in application order."""
    protocol.require_geometry(field.geometry)
    return [_primitive_matrix(primitive, field) for primitive in protocol.primitives]


def unitarity_error(protocol: WalkProtocol, field: CoinField) -> float:
    """max |W^dagger W - 1| (dense; small lattices only)."""
    dense = step_matrix(protocol, field).toarray()
    return float(np.max(np.abs(dense.conj().T @ dense - np.eye(dense.shape[0]))))


def chiral_symmetry_error(frame: ChiralFrame, field: CoinField) -> float:
    """max |Gamma W Gamma^dagger - W^dagger| for a chiral frame (dense)."""
    protocol = frame_operator(frame, field)
    dense = step_matrix(protocol, field).toarray()
    gamma = sp.kron(sp.identity(field.geometry.site_count), ChiralFrame(frame).gamma).toarray()
    return float(np.max(np.abs(gamma @ dense @ gamma.conj().T - dense.conj().T)))


def classical_transition_matrix(protocol: WalkProtocol, field: CoinField) -> np.ndarray:
    """
    Markov matrix T[j, i] = |<j|W|i>|^2 on (site, spin).

    It reproduces fully spin-dephased dynamics when W maps every basis state to
    at most one site per spin component, e.g. split-step walks with theta2 = 0.
    """
    dense = step_matrix(protocol, field).toarray()
    return np.abs(dense) ** 2


def light_cone_steps(geometry: LatticeGeometry, protocol: WalkProtocol) -> int:
    """
    Steps after which a wavefront launched from one site reaches half the
    circumference of some periodic axis; each shifted axis moves one site per step.
    """
    shifted = {p.axis for p in protocol.primitives if isinstance(p, (ShiftUp, ShiftDown))}
    limits = [geometry.extent[d] // 2 for d in sorted(shifted)
              if d < geometry.dimension and geometry.boundary[d] is Boundary.PERIODIC]
    return min(limits) if limits else sys.maxsize
