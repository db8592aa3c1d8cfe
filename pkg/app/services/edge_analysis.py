"""
Edge states of inhomogeneous walks and their response to decoherence.

1D: eigenstates of the one-step operator pinned to a gap centre and localized
at a domain wall; their size, spin factor and decay under the stroboscopic
channels. 2D: transport of a walker launched next to a droplet-shaped island.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
from scipy.ndimage import maximum_filter, uniform_filter1d
from scipy.signal import find_peaks
from scipy.spatial import cKDTree

from app.core.config import Settings
from app.core.exceptions import GeometryMismatchException
from app.core.monitoring import InvariantMonitor
from app.models.lattice import LatticeGeometry, Region, Spin, SpinorState
from app.services.coin_field import (
    AnglePair, CoinField, DropletShape, OpticsConfig, wall_field_1d, wall_positions_1d
)
from app.services.decoherence import (
    ChannelKind, DecoherenceConfig, DistributionObserver, EvolutionMethod, OverlapObserver, RegionObserver,
    evolve
)
from app.services.protocol import ProtocolName, WalkProtocol, get_protocol, step_matrix

logger = logging.getLogger(__name__)

WALL_CAPTURE_SITES = 5
WALL_WEIGHT_WINDOW = 10
DEGENERACY_TOLERANCE = 1e-7
CLUSTER_TOLERANCE = 1e-4

# trivial bulk (nu_0, nu_pi) = (0, 0) on the left, (1, 0) on the right
WALL_LEFT = AnglePair(-math.pi / 2, math.pi / 4)
WALL_RIGHT = AnglePair(-math.pi / 2, 3 * math.pi / 4)


@dataclass
class EdgeState:
    state: SpinorState
    epsilon: float
    center: float
    wall: float
    rms_size: float
    spin_factor: np.ndarray
    factorization_fidelity: float
    residual: float

    @property
    def is_factorized(self) -> bool:
        return self.factorization_fidelity >= 1.0 - 1e-6

    def spin_populations(self) -> np.ndarray:
        return self.state.spin_populations()

    def position_populations(self) -> np.ndarray:
        return np.sum(np.abs(self.state.amplitudes) ** 2, axis=-1)


@dataclass
class DecayPrediction:
    channel: ChannelKind
    probability: float
    rate: float

    def survival(self, steps) -> np.ndarray:
        """Predicted edge-state population (1 - gamma)^n."""
        return (1.0 - self.rate) ** np.asarray(steps, dtype=float)


def _ring_centroid(positions: np.ndarray, probabilities: np.ndarray, n_sites: int) -> float:
    phase = np.sum(probabilities * np.exp(2j * math.pi * positions / n_sites))
    return float(n_sites * np.angle(phase) / (2.0 * math.pi))


def _minimum_image(displacement, n_sites: int):
    return (np.asarray(displacement) + n_sites / 2.0) % n_sites - n_sites / 2.0


def _spin_factor(amplitudes: np.ndarray) -> Tuple[np.ndarray, float]:
    """Dominant eigenvector of the reduced spin density matrix and its weight."""
    flat = amplitudes.reshape(-1, 2)
    reduced = flat.T @ flat.conj()
    weights, vectors = np.linalg.eigh(reduced)
    spin = vectors[:, -1]
    pivot = spin[np.argmax(np.abs(spin))]
    spin = spin * np.conj(pivot) / abs(pivot)
    return spin, float(weights[-1] / max(np.trace(reduced).real, 1e-300))


def _localize_cluster(vectors: np.ndarray, geometry: LatticeGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Rotate a degenerate cluster so that states sit on one side of the ring."""
    x = geometry.axis_coordinates(0)
    n = geometry.extent[0]
    side = (np.abs(_minimum_image(x, n)) < n / 4.0).astype(float)
    side = np.repeat(side, 2)
    projected = vectors.conj().T @ (side[:, None] * vectors)
    weights, rotation = np.linalg.eigh(0.5 * (projected + projected.conj().T))
    return vectors @ rotation, weights


def find_edge_states(protocol: WalkProtocol, field: CoinField, gap: str = '0', tolerance: float = 0.05,
                     walls: Optional[Sequence[float]] = None) -> List[EdgeState]:
    """
    Eigenstates of the step with quasienergy within ``tolerance`` of the gap
    centre (0 or pi) whose centroid lies within WALL_CAPTURE_SITES of a wall.

    In-gap states within CLUSTER_TOLERANCE of each other are treated as one
    cluster and separated by diagonalizing the half-ring indicator inside it.
    A cluster split by more than DEGENERACY_TOLERANCE means the walls are
    hybridized; the rotated states are then only approximate eigenstates.
    """
    geometry = field.geometry
    if geometry.dimension != 1:
        raise GeometryMismatchException("Edge-state search needs a 1D lattice", expected=1, actual=geometry.dimension)
    if gap not in ('0', 'pi'):
        raise ValueError("gap must be '0' or 'pi'")
    walls = tuple(walls) if walls is not None else wall_positions_1d(geometry)
    n_sites = geometry.extent[0]

    matrix = step_matrix(protocol, field).toarray()
    _, vectors = la.schur(matrix, output='complex')
    eps = -np.angle(np.einsum('ij,ij->j', vectors.conj(), matrix @ vectors))
    centre = 0.0 if gap == '0' else math.pi
    offset = np.abs(_minimum_image(eps - centre, 2.0 * math.pi))
    candidates = np.nonzero(offset < tolerance)[0]
    if candidates.size == 0:
        logger.info(f"No eigenstate within {tolerance} of quasienergy {centre:.4f}")
        return []

    relative = _minimum_image(eps - centre, 2.0 * math.pi)
    order = candidates[np.argsort(relative[candidates])]
    clusters: List[List[int]] = [[order[0]]]
    for index in order[1:]:
        if abs(relative[index] - relative[clusters[-1][-1]]) <= CLUSTER_TOLERANCE:
            clusters[-1].append(index)
        else:
            clusters.append([index])

    x = geometry.axis_coordinates(0).astype(float)
    states: List[EdgeState] = []
    for cluster in clusters:
        block = vectors[:, cluster]
        if len(cluster) > 1:
            splitting = float(np.ptp(relative[cluster]))
            block, side_weights = _localize_cluster(block, geometry)
            if splitting > DEGENERACY_TOLERANCE or np.any(np.minimum(side_weights, 1.0 - side_weights) > 0.1):
                logger.warning(f"Hybridized edge-state pair near quasienergy {eps[cluster[0]]:.3e}, "
                               f"splitting {splitting:.2e}")
        for column in block.T:
            probabilities = np.sum(np.abs(column.reshape(geometry.shape)) ** 2, axis=-1)
            center = _ring_centroid(x, probabilities, n_sites)
            distances = [abs(float(_minimum_image(center - wall, n_sites))) for wall in walls]
            nearest = int(np.argmin(distances))
            if distances[nearest] > WALL_CAPTURE_SITES:
                continue
            near_wall = np.abs(_minimum_image(x - walls[nearest], n_sites)) <= WALL_WEIGHT_WINDOW
            if probabilities[near_wall].sum() < 0.5:
                logger.warning(f"In-gap state at {center:.1f} is not bound to the wall at {walls[nearest]}")
                continue
            expectation = np.vdot(column, matrix @ column)
            epsilon = float(-np.angle(expectation))
            residual = float(np.linalg.norm(matrix @ column - np.exp(-1j * epsilon) * column))
            displacement = _minimum_image(x - center, n_sites)
            rms = float(np.sqrt(np.sum(probabilities * displacement ** 2)))
            spin, fidelity = _spin_factor(column)
            states.append(EdgeState(
                state=SpinorState.from_vector(geometry, column),
                epsilon=epsilon,
                center=center,
                wall=float(walls[nearest]),
                rms_size=rms,
                spin_factor=spin,
                factorization_fidelity=fidelity,
                residual=residual,
            ))
    states.sort(key=lambda s: (s.wall, s.epsilon))
    logger.info(f"Found {len(states)} edge states in gap {gap} of '{protocol.name}'")
    return states


def decay_rate(edge: EdgeState, channel: ChannelKind, probability: float) -> DecayPrediction:
    """
    Predicted per-step loss of edge-state population.

    spin:     gamma = p [1 - sum_s (sum_x |<x,s|E>|^2)^2]
    position: gamma = p [1 - sum_x (sum_s |<x,s|E>|^2)^2]
    """
    channel = ChannelKind(channel)
    if channel is ChannelKind.NONE:
        return DecayPrediction(channel, probability, 0.0)
    populations = np.abs(edge.state.amplitudes) ** 2
    populations = populations / populations.sum()
    if channel is ChannelKind.SPIN:
        marginal = populations.reshape(-1, 2).sum(axis=0)
    else:
        marginal = populations.reshape(-1, 2).sum(axis=1)
    rate = probability * (1.0 - float(np.sum(marginal ** 2)))
    return DecayPrediction(channel, probability, min(max(rate, 0.0), probability))


@dataclass
class DecayMeasurement:
    steps: np.ndarray
    survival: np.ndarray
    fitted_rate: float
    predicted: DecayPrediction
    fit_window: Tuple[int, int]

    def relative_error(self) -> float:
        if self.predicted.rate == 0:
            return abs(self.fitted_rate)
        return abs(self.fitted_rate - self.predicted.rate) / self.predicted.rate


def fit_decay_rate(steps: np.ndarray, survival: np.ndarray, window: Tuple[int, int] = (5, 50)) -> float:
    """1 - exp(slope) of a straight-line fit of log survival over the window."""
    steps = np.asarray(steps)
    selected = (steps >= window[0]) & (steps <= window[1])
    if np.count_nonzero(selected) < 2:
        raise ValueError(f"Decay fit window {window} holds fewer than two samples")
    logs = np.log(np.clip(np.asarray(survival)[selected], 1e-300, None))
    slope, _ = np.polyfit(steps[selected].astype(float), logs, 1)
    return float(1.0 - math.exp(slope))


def measure_decay(edge: EdgeState, protocol: WalkProtocol, field: CoinField, channel: ChannelKind,
                  probability: float, n_max: int = 100, fit_window: Tuple[int, int] = (5, 50),
                  kraus_per_primitive: bool = False, monitor: Optional[InvariantMonitor] = None,
                  settings: Optional[Settings] = None) -> DecayMeasurement:
    """Evolve rho_0 = |E><E| under the dense channel and record tr(|E><E| rho_n)."""
    config = DecoherenceConfig(channel=channel, probability=probability, method=EvolutionMethod.DENSE,
                               kraus_per_primitive=kraus_per_primitive)
    observer = OverlapObserver(edge.state, name="edge_population")
    result = evolve(edge.state.to_density(), protocol, field, config, n_max, [observer],
                    monitor=monitor, settings=settings)
    steps = np.asarray(result.steps)
    survival = result.series(observer.name)
    window = (fit_window[0], min(fit_window[1], n_max))
    return DecayMeasurement(
        steps=steps,
        survival=survival,
        fitted_rate=fit_decay_rate(steps, survival, window),
        predicted=decay_rate(edge, channel, probability),
        fit_window=window,
    )


# droplet transport

def droplet_regions(field: CoinField, shape: DropletShape, band: Tuple[float, float] = (0.05, 0.95),
                    dilation: int = 3) -> Tuple[Region, Region]:
    """
    Boundary band F (smoothed indicator inside ``band``, dilated by ``dilation``
    sites in Chebyshev distance) and its lower half L (below the disc centre).
    """
    if field.indicator is None:
        raise ValueError("Droplet regions need a field built from a shape indicator")
    s = field.indicator
    core = (s >= band[0]) & (s <= band[1])
    if dilation > 0:
        core = maximum_filter(core.astype(np.uint8), size=2 * dilation + 1, mode='wrap').astype(bool)
    f_region = Region(field.geometry, core, "F")
    _, y = field.geometry.coordinate_grids()
    l_region = Region(field.geometry, core & (y < shape.center[1]), "L")
    return f_region, l_region


@dataclass
class DropletTransport:
    steps: np.ndarray
    band_population: np.ndarray
    band_population_stderr: np.ndarray
    lower_ratio: np.ndarray
    front: np.ndarray
    front_speed: float
    oscillation_period: Optional[float]
    perimeter: float
    method: str
    trajectories: int
    extra: Dict[str, float] = field(default_factory=dict)

    def plateau(self, start: int, stop: int) -> float:
        selected = (self.steps >= start) & (self.steps <= stop)
        return float(np.mean(self.band_population[selected]))


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, quantile: float) -> float:
    order = np.argsort(values)
    cumulative = np.cumsum(weights[order])
    if cumulative[-1] <= 0:
        return float('nan')
    index = int(np.searchsorted(cumulative, quantile * cumulative[-1]))
    return float(values[order][min(index, len(values) - 1)])


def oscillation_period(series: np.ndarray, skip: int = 20, smoothing: int = 2,
                       min_spacing: int = 5) -> Optional[float]:
    """
    Median spacing of the peaks of ``series`` after ``skip`` samples.

    The series is first averaged over ``smoothing`` consecutive steps to remove
    the even/odd step flicker; peaks closer than ``min_spacing`` are merged.
    """
    series = np.asarray(series, dtype=float)[skip:]
    if series.size < 3 or np.ptp(series) == 0:
        return None
    if smoothing > 1:
        series = uniform_filter1d(series, size=smoothing, mode='nearest')
    peaks, _ = find_peaks(series, prominence=0.1 * np.ptp(series), distance=min_spacing)
    if len(peaks) < 2:
        return None
    return float(np.median(np.diff(peaks)))


def front_positions(distributions: np.ndarray, f_region: Region, shape: DropletShape,
                    start: Tuple[float, float], quantile: float = 0.9, direction_step: int = 10) -> np.ndarray:
    """
    Arc-length position of the leading ``quantile`` of band probability,
    measured from the projection of ``start`` in the direction of propagation.
    """
    points, arc = shape.contour_points()
    perimeter = shape.perimeter
    tree = cKDTree(points)
    sites = f_region.sites().astype(float)
    _, nearest = tree.query(sites)
    _, start_index = tree.query(np.asarray(start, dtype=float))
    relative = _minimum_image(arc[nearest] - arc[start_index], perimeter)

    band_weights = distributions[:, f_region.mask]
    reference = band_weights[min(direction_step, len(band_weights) - 1)]
    direction = 1.0 if np.sum(reference * relative) >= 0 else -1.0
    return np.array([_weighted_quantile(direction * relative, w, quantile) for w in band_weights])


def _front_speed(steps: np.ndarray, front: np.ndarray, perimeter: float) -> float:
    """Slope of the front over its first pass, before it reaches 0.4 of the perimeter."""
    limit = 0.4 * perimeter
    passed = np.nonzero(np.isfinite(front) & (front >= limit) & (steps > 0))[0]
    first_pass = np.arange(len(steps)) < (passed[0] if passed.size else len(steps))
    selected = first_pass & (steps >= 5) & np.isfinite(front)
    if np.count_nonzero(selected) < 2:
        return float('nan')
    slope, _ = np.polyfit(steps[selected].astype(float), front[selected], 1)
    return float(slope)


def droplet_transport(field: CoinField, shape: DropletShape, config: DecoherenceConfig, n_max: int = 400,
                      initial_site: Tuple[int, int] = (-15, 0), initial_spin: Spin = Spin.DOWN,
                      band: Tuple[float, float] = (0.05, 0.95), dilation: int = 3,
                      protocol: Optional[WalkProtocol] = None, monitor: Optional[InvariantMonitor] = None,
                      settings: Optional[Settings] = None, max_workers: Optional[int] = None) -> DropletTransport:
    """Band population, lower-half ratio and front position of a walker launched next to the island."""
    protocol = protocol or get_protocol(ProtocolName.WALK_2D)
    f_region, l_region = droplet_regions(field, shape, band, dilation)
    initial = SpinorState.localized(field.geometry, initial_site, initial_spin)
    observers = [RegionObserver(f_region, "P_F"), RegionObserver(l_region, "P_L"),
                 DistributionObserver("distribution")]
    result = evolve(initial, protocol, field, config, n_max, observers, monitor=monitor, settings=settings,
                    max_workers=max_workers)
    steps = np.asarray(result.steps)
    band_population = result.series("P_F")
    ratio = np.divide(result.series("P_L"), band_population, out=np.zeros_like(band_population),
                      where=band_population > 0)
    front = front_positions(result.series("distribution"), f_region, shape, initial_site)
    transport = DropletTransport(
        steps=steps,
        band_population=band_population,
        band_population_stderr=result.stderr["P_F"],
        lower_ratio=ratio,
        front=front,
        front_speed=_front_speed(steps, front, shape.perimeter),
        oscillation_period=oscillation_period(ratio),
        perimeter=shape.perimeter,
        method=result.method,
        trajectories=result.trajectories,
    )
    logger.info(f"Droplet transport: speed {transport.front_speed:.3f} sites/step, "
                f"period {transport.oscillation_period}, perimeter {shape.perimeter:.1f}")
    return transport


# edge-state size versus optical resolution

@dataclass
class SizeSweepRow:
    ratio: float
    abbe_ratio: float
    rms_size: float
    initial_overlap: float
    found: bool


def wall_edge_state(optics: OpticsConfig, sites: int = 120, protocol: Optional[WalkProtocol] = None,
                    left: AnglePair = WALL_LEFT, right: AnglePair = WALL_RIGHT) -> Optional[EdgeState]:
    """The eps = 0 edge state at the x = 0 wall of a ring with two smoothed walls."""
    protocol = protocol or get_protocol(ProtocolName.SPLIT_STEP_1D)
    geometry = LatticeGeometry.line(sites)
    field = wall_field_1d(left, right, optics, geometry)
    states = [s for s in find_edge_states(protocol, field, '0') if s.wall == 0.0]
    return states[0] if states else None


def initial_overlap(edge: EdgeState, site: Tuple[int, ...] = (0,)) -> float:
    """|<E|x0, s_E>|^2 for the walker prepared at ``site`` with the edge state's spin."""
    geometry = edge.state.geometry
    amplitudes = np.asarray(edge.state.amplitudes)[geometry.site_index(site)]
    return float(np.abs(np.vdot(edge.spin_factor, amplitudes)) ** 2)


def edge_state_size_sweep(ratios: Sequence[float], sites: int = 120,
                          protocol: Optional[WalkProtocol] = None) -> List[SizeSweepRow]:
    """RMS size and initial overlap of the wall edge state for each a/R_A."""
    rows = []
    for ratio in ratios:
        if ratio <= 0:
            raise ValueError(f"Resolution ratio a/R_A must be positive, got {ratio}")
        optics = OpticsConfig.for_abbe_ratio(1.0 / ratio)
        edge = wall_edge_state(optics, sites, protocol)
        if edge is None:
            logger.warning(f"No wall edge state found for a/R_A = {ratio}")
            rows.append(SizeSweepRow(ratio, 1.0 / ratio, float('nan'), float('nan'), False))
            continue
        rows.append(SizeSweepRow(ratio, 1.0 / ratio, edge.rms_size, initial_overlap(edge), True))
        logger.debug(f"a/R_A = {ratio}: RMS size {edge.rms_size:.3f}")
    return rows
