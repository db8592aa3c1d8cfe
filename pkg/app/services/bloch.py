"""
Momentum-space analysis of walks.

Homogeneous walks are block diagonal in quasimomentum: every shift becomes a
phase (S_up(k) = diag(e^{-ik}, 1), S_down(k) = diag(1, e^{ik})) and the step
reduces to a 2x2 unitary W(k) = a0 - i a.sigma. The quasienergy is
eps = arccos(a0) and the eigenspinor direction is n = a/|a|.

Strips that are homogeneous along x and structured along y are treated in a
mixed representation: k_x is a good quantum number and y stays in real space.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from app.core.config import settings
from app.core.exceptions import AmbiguousCrossingException, NumericalInvariantException, SpectralGapException
from app.services.coin_field import AnglePair, StripProfile
from app.services.protocol import (
    ChiralFrame, Coin, CoinComponent, ProtocolName, ShiftDown, ShiftUp, WalkProtocol, coin_matrix,
    frame_operator, get_protocol
)

logger = logging.getLogger(__name__)

MIN_GRID_POINTS = 64
EDGE_WINDOW_SITES = 10
VELOCITY_STEP = 1e-4
MAX_WINDING_POINTS = 1 << 16

PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)

# plane spanned by the eigenspinor of each chiral frame, as (first, second) Pauli indices
_WINDING_PLANE = {
    ChiralFrame.PRIME: (1, 2),
    ChiralFrame.DOUBLE_PRIME: (1, 2),
    ChiralFrame.SIGMA_Z: (0, 1),
}


def k_grid(n_points: int) -> np.ndarray:
    """n_points quasimomenta on (-pi, pi], including pi (and 0 for even n)."""
    if n_points < 2:
        raise ValueError("A k grid needs at least two points")
    return -math.pi + 2.0 * math.pi * np.arange(1, n_points + 1) / n_points


def gap_tolerance(n_points: int) -> float:
    """Gap below which a walk counts as gapless at this sampling."""
    return math.pi * 1e-3 * max(1.0, 256.0 / n_points)


def _coin_angle(coin: Coin, theta1, theta2):
    if coin.component is CoinComponent.FIXED:
        return coin.angle
    value = theta1 if coin.component is CoinComponent.THETA1 else theta2
    return value * coin.scale.numerator / coin.scale.denominator


def bloch_matrix(protocol: WalkProtocol, theta1: float, theta2: float,
                 momenta: Sequence[np.ndarray]) -> np.ndarray:
    """
    W(k) for homogeneous angles, shape ``broadcast(momenta) + (2, 2)``.

    ``momenta`` holds one array per lattice axis.
    """
    if len(momenta) != protocol.dimension:
        raise ValueError(f"Protocol '{protocol.name}' needs {protocol.dimension} momentum components")
    momenta = np.broadcast_arrays(*[np.asarray(k, dtype=float) for k in momenta])
    shape = momenta[0].shape
    matrix = np.broadcast_to(np.eye(2, dtype=complex), shape + (2, 2)).copy()
    for primitive in protocol.primitives:
        if isinstance(primitive, Coin):
            matrix = coin_matrix(_coin_angle(primitive, theta1, theta2)) @ matrix
        elif isinstance(primitive, ShiftUp):
            matrix[..., 0, :] *= np.exp(-1j * momenta[primitive.axis])[..., None]
        else:
            matrix[..., 1, :] *= np.exp(1j * momenta[primitive.axis])[..., None]
    return matrix


def pauli_components(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(a0, a) with W = e^{i phi} (a0 - i a.sigma), the phase removed via det W."""
    phase = np.sqrt(np.linalg.det(matrix))
    special = matrix / phase[..., None, None]
    a0 = np.real(np.trace(special, axis1=-2, axis2=-1)) / 2.0
    a = -np.imag(np.einsum('...ij,pji->...p', special, PAULI)) / 2.0
    return a0, a


@dataclass
class QuasienergySpectrum:
    """Two-band spectrum on a k grid; ``epsilon[..., 0] = -eps``, ``epsilon[..., 1] = +eps``."""
    momenta: Tuple[np.ndarray, ...]
    epsilon: np.ndarray
    spinor: np.ndarray  # unit vector n(k) of the +eps band; zero where the gap closes
    gap_zero: float
    gap_pi: float

    @property
    def is_gapped(self) -> bool:
        n_points = self.momenta[0].shape[0]
        tolerance = gap_tolerance(n_points)
        return self.gap_zero >= tolerance and self.gap_pi >= tolerance


def bloch_bands(protocol: WalkProtocol, theta1: float, theta2: float,
                n_points: int = 256) -> QuasienergySpectrum:
    """Quasienergy bands, eigenspinors and gap widths on an n_points^dimension grid."""
    if n_points < MIN_GRID_POINTS:
        raise ValueError(f"Brillouin zone sampling needs at least {MIN_GRID_POINTS} points per axis")
    k = k_grid(n_points)
    momenta = (k,) if protocol.dimension == 1 else tuple(np.meshgrid(k, k, indexing='ij'))
    matrix = bloch_matrix(protocol, theta1, theta2, momenta)

    error = np.max(np.abs(np.conj(np.swapaxes(matrix, -1, -2)) @ matrix - np.eye(2)))
    if error > 1e-12:
        raise NumericalInvariantException("Bloch matrix is not unitary", quantity='bloch_unitarity',
                                          value=float(error), tolerance=1e-12)

    a0, a = pauli_components(matrix)
    eps = np.arccos(np.clip(a0, -1.0, 1.0))
    length = np.linalg.norm(a, axis=-1, keepdims=True)
    spinor = np.divide(a, length, out=np.zeros_like(a), where=length > 1e-14)
    return QuasienergySpectrum(
        momenta=momenta,
        epsilon=np.stack([-eps, eps], axis=-1),
        spinor=spinor,
        gap_zero=float(2.0 * np.min(eps)),
        gap_pi=float(2.0 * np.min(math.pi - eps)),
    )


def _winding_on_grid(frame: ChiralFrame, theta1: float, theta2: float, n_points: int,
                     reverse: bool) -> Optional[float]:
    k = k_grid(n_points)
    if reverse:
        k = k[::-1]
    a0, a = pauli_components(bloch_matrix(frame_operator(frame), theta1, theta2, (k,)))
    eps = np.arccos(np.clip(a0, -1.0, 1.0))
    min_gap = float(2.0 * min(np.min(eps), np.min(math.pi - eps)))
    tolerance = gap_tolerance(n_points)
    if min_gap < tolerance:
        raise SpectralGapException(
            f"ill-defined winding: gap {min_gap:.3e} below {tolerance:.3e} at ({theta1:.4f}, {theta2:.4f})",
            min_gap=min_gap, tolerance=tolerance
        )
    first, second = _WINDING_PLANE[frame]
    angle = np.arctan2(a[:, second], a[:, first])
    increments = np.diff(np.concatenate([angle, angle[:1]]))
    increments = (increments + math.pi) % (2.0 * math.pi) - math.pi
    if np.max(np.abs(increments)) >= math.pi / 2:
        return None
    return float(np.sum(increments) / (2.0 * math.pi))


def winding_number(frame: ChiralFrame, theta1: float, theta2: float, n_points: int = 256,
                   reverse: bool = False) -> int:
    """
    Winding of the eigenspinor around the origin of its chiral plane as k runs
    once through the Brillouin zone (increasing k unless ``reverse``).

    Raises:
        SpectralGapException: the walk is gapless at this sampling
    """
    frame = ChiralFrame(frame)
    if n_points < MIN_GRID_POINTS:
        raise ValueError(f"Winding numbers need at least {MIN_GRID_POINTS} k points")
    points = n_points
    while True:
        winding = _winding_on_grid(frame, theta1, theta2, points, reverse)
        if winding is not None:
            break
        if points >= MAX_WINDING_POINTS:
            raise SpectralGapException(f"ill-defined winding: spinor turns too fast even at {points} k points")
        points *= 2
        logger.debug(f"Refining winding grid to {points} points for {frame.value}")
    nearest = round(winding)
    if abs(winding - nearest) > 1e-6:
        raise NumericalInvariantException(f"Non-integral winding {winding:.9f}", quantity='winding',
                                          value=abs(winding - nearest), tolerance=1e-6)
    return int(nearest)


@dataclass
class TopologicalClassification:
    """Frame windings, the derived 1D invariant pair, and edge-mode counts for 2D strips."""
    nu_prime: Optional[int] = None
    nu_double_prime: Optional[int] = None
    nu_zero: Optional[int] = None
    nu_pi: Optional[int] = None
    edge_counts: Dict[str, Dict[str, int]] = field(default_factory=dict)

    @property
    def invariants(self) -> Tuple[Optional[int], Optional[int]]:
        return self.nu_zero, self.nu_pi


def classify_1d(theta1: float, theta2: float, n_points: int = 256) -> TopologicalClassification:
    nu_prime = winding_number(ChiralFrame.PRIME, theta1, theta2, n_points)
    nu_double_prime = winding_number(ChiralFrame.DOUBLE_PRIME, theta1, theta2, n_points)
    if (nu_prime + nu_double_prime) % 2 == 0:
        raise NumericalInvariantException(
            f"Frame windings ({nu_prime}, {nu_double_prime}) give non-integral invariants",
            quantity='invariant_parity', value=float(nu_prime + nu_double_prime), tolerance=0.0
        )
    return TopologicalClassification(
        nu_prime=nu_prime,
        nu_double_prime=nu_double_prime,
        nu_zero=(nu_prime + nu_double_prime + 1) // 2,
        nu_pi=(nu_prime - nu_double_prime + 1) // 2,
    )


def invariants_1d(theta1: float, theta2: float, n_points: int = 256) -> Tuple[int, int]:
    """(nu_0, nu_pi) of the 1D split-step walk."""
    return classify_1d(theta1, theta2, n_points).invariants


def _parallel_map(function, items: List, max_workers: Optional[int]) -> List:
    workers = max(1, min(max_workers or settings.max_threads, len(items) or 1))
    if workers == 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, items))


@dataclass
class PhaseDiagramPoint:
    theta1: float
    theta2: float
    nu_zero: Optional[int]
    nu_pi: Optional[int]

    @property
    def gapless(self) -> bool:
        return self.nu_zero is None


def phase_diagram_1d(theta1_values: Sequence[float], theta2_values: Sequence[float], n_points: int = 128,
                     max_workers: Optional[int] = None) -> List[PhaseDiagramPoint]:
    """(nu_0, nu_pi) over an angle grid; gapless points carry None."""
    pairs = [(float(t1), float(t2)) for t1 in theta1_values for t2 in theta2_values]

    def classify(pair):
        try:
            nu_zero, nu_pi = invariants_1d(pair[0], pair[1], n_points)
        except SpectralGapException:
            return PhaseDiagramPoint(pair[0], pair[1], None, None)
        return PhaseDiagramPoint(pair[0], pair[1], nu_zero, nu_pi)

    points = _parallel_map(classify, pairs, max_workers)
    logger.info(f"1D phase diagram: {len(points)} angle pairs, {sum(p.gapless for p in points)} gapless")
    return points


@dataclass
class GapScan:
    """Minimum quasienergy gaps at 0 and pi over an angle grid."""
    theta1: np.ndarray
    theta2: np.ndarray
    gap_zero: np.ndarray
    gap_pi: np.ndarray
    n_points: int

    def closed(self, tolerance: Optional[float] = None) -> np.ndarray:
        """Mask of angle pairs where either gap is below ``tolerance``."""
        tolerance = gap_tolerance(self.n_points) if tolerance is None else tolerance
        return (self.gap_zero < tolerance) | (self.gap_pi < tolerance)


def bulk_gaps(protocol: WalkProtocol, theta1: float, theta2: float, n_points: int = 64) -> Tuple[float, float]:
    spectrum = bloch_bands(protocol, theta1, theta2, n_points)
    return spectrum.gap_zero, spectrum.gap_pi


def gap_scan_2d(theta1_values: Sequence[float], theta2_values: Sequence[float], n_points: int = 64,
                max_workers: Optional[int] = None) -> GapScan:
    """Gaps of the 2D walk for every (theta1, theta2) pair of the grid."""
    protocol = get_protocol(ProtocolName.WALK_2D)
    theta1_values = np.asarray(theta1_values, dtype=float)
    theta2_values = np.asarray(theta2_values, dtype=float)
    pairs = [(t1, t2) for t1 in theta1_values for t2 in theta2_values]
    gaps = _parallel_map(lambda pair: bulk_gaps(protocol, pair[0], pair[1], n_points), pairs, max_workers)
    gaps = np.asarray(gaps).reshape(len(theta1_values), len(theta2_values), 2)
    return GapScan(theta1_values, theta2_values, gaps[..., 0], gaps[..., 1], n_points)


def segment_gap_scan(start: AnglePair, end: AnglePair, samples: int = 41, n_points: int = 64,
                     max_workers: Optional[int] = None) -> GapScan:
    """Gaps along the straight segment from ``start`` to ``end`` in angle space."""
    s = np.linspace(0.0, 1.0, samples)
    theta1 = start.theta1 + s * (end.theta1 - start.theta1)
    theta2 = start.theta2 + s * (end.theta2 - start.theta2)
    protocol = get_protocol(ProtocolName.WALK_2D)
    gaps = np.asarray(_parallel_map(lambda pair: bulk_gaps(protocol, pair[0], pair[1], n_points),
                                    list(zip(theta1, theta2)), max_workers))
    return GapScan(theta1, theta2, gaps[:, 0], gaps[:, 1], n_points)


# strip geometry

def strip_step_matrix(protocol: WalkProtocol, profile: StripProfile, kx: float) -> np.ndarray:
    """
    Mixed-space one-step operator of a strip at quasimomentum kx.

    Basis index y*2 + spin over a periodic column of ``profile.y_extent`` sites.
    """
    if protocol.dimension != 2:
        raise ValueError("Strip spectra need a 2D protocol")
    ny = profile.y_extent
    columns = np.eye(2 * ny, dtype=complex).reshape(ny, 2, 2 * ny)
    for primitive in protocol.primitives:
        if isinstance(primitive, Coin):
            theta = _coin_angle(primitive, profile.theta1, profile.theta2)
            c = (np.cos(np.asarray(theta) / 2) * np.ones(ny))[:, None]
            s = (np.sin(np.asarray(theta) / 2) * np.ones(ny))[:, None]
            up, down = columns[:, 0, :], columns[:, 1, :]
            columns = np.stack([c * up - s * down, s * up + c * down], axis=1)
        elif isinstance(primitive, ShiftUp):
            if primitive.axis == 0:
                columns[:, 0, :] *= np.exp(-1j * kx)
            else:
                columns[:, 0, :] = np.roll(columns[:, 0, :], 1, axis=0)
        elif isinstance(primitive, ShiftDown):
            if primitive.axis == 0:
                columns[:, 1, :] *= np.exp(1j * kx)
            else:
                columns[:, 1, :] = np.roll(columns[:, 1, :], -1, axis=0)
    return columns.reshape(2 * ny, 2 * ny)


def _wrap_phase(value):
    return (np.asarray(value) + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class StripSpectrum:
    """
    Dispersion of a strip with two walls.

    Per (kx, state): quasienergy, in-gap label ('0', 'pi' or ''), nearest wall
    ('lower'/'upper') for in-gap states or 'bulk', group velocity (NaN for bulk
    states) and the probability within EDGE_WINDOW_SITES of the assigned wall.
    """
    kx: np.ndarray
    epsilon: np.ndarray
    gap_label: np.ndarray
    edge_label: np.ndarray
    velocity: np.ndarray
    wall_weight: np.ndarray
    walls: Tuple[float, float]
    half_gaps: Dict[str, float]

    @property
    def k_step(self) -> float:
        return float(self.kx[1] - self.kx[0]) if len(self.kx) > 1 else 2.0 * math.pi

    def in_gap(self, gap: str) -> np.ndarray:
        return self.gap_label == gap


def _distance_to(y: np.ndarray, wall: float, ny: int) -> np.ndarray:
    d = np.abs(y - wall)
    return np.minimum(d, ny - d)


def _strip_point(protocol: WalkProtocol, profile: StripProfile, kx: float,
                 half_gaps: Dict[str, float]) -> Tuple[np.ndarray, ...]:
    ny = profile.y_extent
    step = strip_step_matrix(protocol, profile, kx)
    _, vectors = la.schur(step, output='complex')
    phases = np.einsum('ij,ij->j', vectors.conj(), step @ vectors)
    eps = -np.angle(phases)

    gap_label = np.full(eps.shape, '', dtype=object)
    gap_label[np.abs(eps) < half_gaps['0']] = '0'
    gap_label[math.pi - np.abs(eps) < half_gaps['pi']] = 'pi'

    density = (np.abs(vectors) ** 2).reshape(ny, 2, -1).sum(axis=1)
    y = np.arange(ny, dtype=float)
    near_lower = _distance_to(y, profile.walls[0], ny) <= EDGE_WINDOW_SITES
    near_upper = _distance_to(y, profile.walls[1], ny) <= EDGE_WINDOW_SITES
    lower_weight = density[near_lower].sum(axis=0)
    upper_weight = density[near_upper].sum(axis=0)
    is_edge = gap_label != ''
    edge_label = np.where(is_edge, np.where(lower_weight >= upper_weight, 'lower', 'upper'), 'bulk').astype(object)
    wall_weight = np.maximum(lower_weight, upper_weight)

    velocity = np.full(eps.shape, np.nan)
    if np.any(is_edge):
        selected = vectors[:, is_edge]
        forward = np.einsum('ij,ij->j', selected.conj(),
                            strip_step_matrix(protocol, profile, kx + VELOCITY_STEP) @ selected)
        backward = np.einsum('ij,ij->j', selected.conj(),
                             strip_step_matrix(protocol, profile, kx - VELOCITY_STEP) @ selected)
        velocity[is_edge] = _wrap_phase(np.angle(backward) - np.angle(forward)) / (2.0 * VELOCITY_STEP)

    order = np.argsort(eps)
    return (eps[order], gap_label[order], edge_label[order], velocity[order], wall_weight[order])


def strip_spectrum(profile: StripProfile, n_kx: int = 256, protocol: Optional[WalkProtocol] = None,
                   gap_points: int = 64, max_workers: Optional[int] = None) -> StripSpectrum:
    """
    Diagonalize the strip step for every kx of a half-step-offset grid and
    label in-gap states by wall and group velocity.

    In-gap means inside the common gap of both bulks, whose widths come from
    the homogeneous 2D bands of the inside and outside angle pairs.
    """
    protocol = protocol or get_protocol(ProtocolName.WALK_2D)
    ny = profile.y_extent
    lower, upper = profile.walls
    inner = upper - lower
    if min(inner, ny - inner) < EDGE_WINDOW_SITES:
        logger.warning(f"hybridized edges: only {min(inner, ny - inner):.0f} sites between the strip walls")

    gaps_in = bulk_gaps(protocol, profile.inside.theta1, profile.inside.theta2, gap_points)
    gaps_out = bulk_gaps(protocol, profile.outside.theta1, profile.outside.theta2, gap_points)
    half_gaps = {'0': 0.5 * min(gaps_in[0], gaps_out[0]), 'pi': 0.5 * min(gaps_in[1], gaps_out[1])}

    kx = k_grid(n_kx) - math.pi / n_kx
    results = _parallel_map(lambda k: _strip_point(protocol, profile, float(k), half_gaps), list(kx), max_workers)
    columns = [np.stack([r[i] for r in results]) for i in range(5)]
    spectrum = StripSpectrum(kx=kx, epsilon=columns[0], gap_label=columns[1], edge_label=columns[2],
                             velocity=columns[3], wall_weight=columns[4], walls=profile.walls,
                             half_gaps=half_gaps)
    logger.info(f"Strip spectrum: {n_kx} kx points, {np.count_nonzero(columns[1] != '')} in-gap states")
    return spectrum


def edge_mode_count(spectrum: StripSpectrum, gap: str) -> Dict[str, int]:
    """
    Net chirality of the modes that cross the centre of ``gap`` on each edge.

    A state at k_j contributes sign(v) to its edge when its linearized band
    eps_j + v (k - k_j) meets the reference quasienergy for k in [k_j, k_j + dk).

    Raises:
        AmbiguousCrossingException: a crossing lies at a grid boundary or a
            band moves by more than the gap between neighbouring k points
    """
    if gap not in ('0', 'pi'):
        raise ValueError("gap must be '0' or 'pi'")
    reference = 0.0 if gap == '0' else math.pi
    dk = spectrum.k_step
    counts = {'lower': 0, 'upper': 0}
    if spectrum.half_gaps[gap] <= 0:
        return counts

    mask = spectrum.in_gap(gap)
    for j, m in zip(*np.nonzero(mask)):
        v = spectrum.velocity[j, m]
        if not np.isfinite(v) or v == 0:
            continue
        if abs(v) * dk > 2.0 * spectrum.half_gaps[gap]:
            raise AmbiguousCrossingException(
                f"Band moves by {abs(v) * dk:.3f} between k points, more than the gap; refine the kx grid",
                grid_points=len(spectrum.kx)
            )
        distance = float(_wrap_phase(reference - spectrum.epsilon[j, m]))
        position = distance / v
        if min(abs(position), abs(position - dk)) < 1e-9 * dk:
            raise AmbiguousCrossingException(
                f"Crossing at a grid boundary near kx={spectrum.kx[j]:.6f}; refine the kx grid",
                grid_points=len(spectrum.kx)
            )
        if 0.0 <= position < dk:
            counts[spectrum.edge_label[j, m]] += int(np.sign(v))
    return counts


def strip_classification(spectrum: StripSpectrum) -> TopologicalClassification:
    """Edge-mode counts per gap and edge."""
    return TopologicalClassification(edge_counts={gap: edge_mode_count(spectrum, gap) for gap in ('0', 'pi')})
