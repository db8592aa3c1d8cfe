"""
Stroboscopic decoherence.

After every step (or, optionally, after every primitive) the walker is
measured with probability p in a pointer basis:

    rho' = (1 - p) W rho W^dagger + p sum_i P_i (W rho W^dagger) P_i

with P_i the projectors on one spin (spin channel) or on one site (position
channel). Dense stepping applies this superoperator to a density matrix; for
large lattices the same channel is unravelled into pure-state trajectories
whose ensemble average reproduces rho.

Trajectory randomness is counter based: the draws of trajectory t at step n
come from Philox keyed by the seed with counter (0, primitive, n, t), so every
trajectory is reproducible on its own and results do not depend on how
trajectories are scheduled over threads.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from app.core.config import Settings, settings as default_settings
from app.core.exceptions import DenseStorageLimitException, GeometryMismatchException
from app.core.monitoring import InvariantMonitor
from app.core.validation import InputValidator
from app.models.lattice import Boundary, DensityOperator, LatticeGeometry, Region, SpinorState
from app.services.coin_field import CoinField
from app.services.protocol import CompiledStep, WalkProtocol, primitive_matrices, step_matrix

logger = logging.getLogger(__name__)


class ChannelKind(str, Enum):
    NONE = "none"
    SPIN = "spin"
    POSITION = "position"


class EvolutionMethod(str, Enum):
    AUTO = "auto"
    DENSE = "dense"
    TRAJECTORIES = "trajectories"


@dataclass(frozen=True)
class DecoherenceConfig:
    channel: ChannelKind = ChannelKind.NONE
    probability: float = 0.0
    seed: int = 0
    trajectories: int = 1000
    method: EvolutionMethod = EvolutionMethod.AUTO
    kraus_per_primitive: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'channel', ChannelKind(self.channel))
        object.__setattr__(self, 'method', EvolutionMethod(self.method))
        InputValidator.validate_probability(self.probability, "decoherence probability")
        if self.trajectories < 1:
            raise ValueError("At least one trajectory is required")
        if self.seed < 0:
            raise ValueError("Seed must be non-negative")

    @property
    def is_coherent(self) -> bool:
        return self.channel is ChannelKind.NONE or self.probability == 0.0


def check_model_validity(config: DecoherenceConfig, settings: Optional[Settings] = None) -> bool:
    """Warn when p is outside the small-decoherence regime; returns True if a warning was emitted."""
    settings = settings or default_settings
    if not config.is_coherent and config.probability > settings.decoherence_warning_threshold:
        logger.warning(
            f"Decoherence probability {config.probability} exceeds {settings.decoherence_warning_threshold}: "
            f"the stroboscopic model assumes p << 1, results are model-limited"
        )
        return True
    return False


def coherence_mask(geometry: LatticeGeometry, channel: ChannelKind) -> np.ndarray:
    """Entries of rho that survive a complete measurement in the channel's pointer basis."""
    index = np.arange(geometry.basis_size)
    if ChannelKind(channel) is ChannelKind.SPIN:
        return (index[:, None] % 2) == (index[None, :] % 2)
    if ChannelKind(channel) is ChannelKind.POSITION:
        return (index[:, None] // 2) == (index[None, :] // 2)
    return np.ones((geometry.basis_size, geometry.basis_size), dtype=bool)


class DensityStepper:
    """Dense channel stepping with the operators of one protocol and field prepared once."""

    def __init__(self, protocol: WalkProtocol, field: CoinField, config: DecoherenceConfig,
                 settings: Optional[Settings] = None):
        settings = settings or default_settings
        geometry = field.geometry
        if geometry.basis_size > settings.dense_basis_limit:
            raise DenseStorageLimitException(geometry.basis_size, settings.dense_basis_limit)
        self.geometry = geometry
        self.config = config
        if config.kraus_per_primitive:
            self.operators: List[sp.csr_matrix] = primitive_matrices(protocol, field)
        else:
            self.operators = [step_matrix(protocol, field)]
        self._damping = None
        if not config.is_coherent:
            self._damping = ~coherence_mask(geometry, config.channel)

    def _dephase(self, matrix: np.ndarray) -> np.ndarray:
        if self._damping is not None:
            matrix[self._damping] *= (1.0 - self.config.probability)
        return matrix

    def step(self, matrix: np.ndarray) -> np.ndarray:
        for operator in self.operators:
            # U rho U^dagger = U (U rho)^dagger for Hermitian rho
            half = operator @ matrix
            matrix = np.asarray(operator @ half.conj().T)
            matrix = self._dephase(matrix)
        return matrix


def channel_step(rho: DensityOperator, protocol: WalkProtocol, field: CoinField, config: DecoherenceConfig,
                 settings: Optional[Settings] = None) -> DensityOperator:
    """
    One step of the decohering walk on a dense density matrix.

    Raises:
        DenseStorageLimitException: basis too large for a dense matrix
    """
    field.require_geometry(rho.geometry)
    stepper = DensityStepper(protocol, field, config, settings)
    return DensityOperator(rho.geometry, stepper.step(np.array(rho.matrix)))


def trajectory_rng(seed: int, trajectory: int, step: int, primitive: int = 0) -> np.random.Generator:
    """Generator for the draws of one trajectory at one step."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, primitive, step, trajectory]))


def _outcome_weights(amplitudes: np.ndarray, channel: ChannelKind) -> np.ndarray:
    """Born weights per outcome, shape (batch, outcomes)."""
    populations = np.abs(amplitudes) ** 2
    batch = populations.shape[0]
    if channel is ChannelKind.SPIN:
        return populations.reshape(batch, -1, 2).sum(axis=1)
    return populations.reshape(batch, -1, 2).sum(axis=2)


def _measure(amplitudes: np.ndarray, config: DecoherenceConfig,
             generators: Sequence[np.random.Generator]) -> np.ndarray:
    """With probability p per trajectory, project onto a sampled outcome and renormalize."""
    p = config.probability
    measured = [t for t, rng in enumerate(generators) if rng.random() < p]
    if not measured:
        return amplitudes
    weights = _outcome_weights(amplitudes[measured], config.channel)
    flat = amplitudes.reshape(amplitudes.shape[0], -1, 2)
    for row, t in enumerate(measured):
        w = weights[row]
        total = w.sum()
        cumulative = np.cumsum(w) / total
        outcome = None
        while outcome is None or w[outcome] <= 0.0:
            if outcome is not None:
                logger.warning(f"Zero-weight measurement outcome drawn for trajectory {t}; resampling")
            outcome = min(int(np.searchsorted(cumulative, generators[t].random(), side='right')), len(w) - 1)
        scale = 1.0 / math.sqrt(w[outcome])
        if config.channel is ChannelKind.SPIN:
            flat[t, :, 1 - outcome] = 0.0
            flat[t, :, outcome] *= scale
        else:
            kept = flat[t, outcome].copy()
            flat[t] = 0.0
            flat[t, outcome] = kept * scale
    return flat.reshape(amplitudes.shape)


def _require_trajectory_boundaries(geometry: LatticeGeometry) -> None:
    if any(b is not Boundary.PERIODIC for b in geometry.boundary):
        raise GeometryMismatchException("Trajectory unraveling needs periodic boundaries",
                                        expected=Boundary.PERIODIC.value, actual=geometry.boundary)


class _TrajectoryKernel:
    """Steps a batch of trajectory amplitudes including the measurement draws."""

    def __init__(self, protocol: WalkProtocol, field: CoinField, config: DecoherenceConfig):
        self.compiled = CompiledStep(protocol, field)
        self.config = config

    def step(self, amplitudes: np.ndarray, step_index: int, trajectory_ids: Sequence[int],
             generators: Optional[Sequence[np.random.Generator]] = None) -> np.ndarray:
        if self.config.is_coherent:
            return self.compiled.apply(amplitudes)[0]
        if self.config.kraus_per_primitive:
            for index in range(len(self.compiled)):
                amplitudes = self.compiled.apply_operation(amplitudes, index)[0]
                draws = generators or [trajectory_rng(self.config.seed, t, step_index, index + 1)
                                       for t in trajectory_ids]
                amplitudes = _measure(amplitudes, self.config, draws)
            return amplitudes
        amplitudes = self.compiled.apply(amplitudes)[0]
        draws = generators or [trajectory_rng(self.config.seed, t, step_index) for t in trajectory_ids]
        return _measure(amplitudes, self.config, draws)


def trajectory_step(psi: SpinorState, protocol: WalkProtocol, field: CoinField, config: DecoherenceConfig,
                    rng: np.random.Generator) -> SpinorState:
    """One step of a single quantum trajectory using draws from ``rng``."""
    field.require_geometry(psi.geometry)
    _require_trajectory_boundaries(psi.geometry)
    kernel = _TrajectoryKernel(protocol, field, config)
    amplitudes = np.array(psi.amplitudes)[None, ...]
    amplitudes = kernel.step(amplitudes, 0, [0], generators=[rng])
    return SpinorState(psi.geometry, amplitudes[0])


# observers

class Observer(ABC):
    """Quantity recorded during an evolution, for pure batches and density matrices."""

    def __init__(self, name: str):
        self.name = name

    @abstractmethod
    def pure(self, amplitudes: np.ndarray) -> np.ndarray:
        """Values for a batch of amplitude arrays, leading axis = trajectory."""

    @abstractmethod
    def mixed(self, matrix: np.ndarray, geometry: LatticeGeometry) -> np.ndarray:
        """Value for a dense density matrix."""

    @property
    def is_distribution(self) -> bool:
        return False


class RegionObserver(Observer):
    """Probability inside a region."""

    def __init__(self, region: Region, name: Optional[str] = None):
        super().__init__(name or f"P({region.name})")
        self.region = region

    def pure(self, amplitudes):
        populations = (np.abs(amplitudes) ** 2).sum(axis=-1)
        return populations[:, self.region.mask].sum(axis=-1)

    def mixed(self, matrix, geometry):
        populations = np.real(np.diag(matrix)).reshape(geometry.shape).sum(axis=-1)
        return np.asarray(populations[self.region.mask].sum())


class OverlapObserver(Observer):
    """|<reference|psi>|^2 or <reference|rho|reference>."""

    def __init__(self, reference: SpinorState, name: str = "overlap"):
        super().__init__(name)
        self.reference = reference

    def pure(self, amplitudes):
        batch = amplitudes.shape[0]
        inner = amplitudes.reshape(batch, -1) @ self.reference.vector.conj()
        return np.abs(inner) ** 2

    def mixed(self, matrix, geometry):
        v = self.reference.vector
        return np.asarray(np.real(np.vdot(v, matrix @ v)))


class DistributionObserver(Observer):
    """Full position distribution P(x)."""

    def __init__(self, name: str = "distribution"):
        super().__init__(name)

    @property
    def is_distribution(self) -> bool:
        return True

    def pure(self, amplitudes):
        return (np.abs(amplitudes) ** 2).sum(axis=-1)

    def mixed(self, matrix, geometry):
        return np.real(np.diag(matrix)).reshape(geometry.shape).sum(axis=-1)


@dataclass
class EvolutionResult:
    """Recorded observables; ``stderr`` is zero for exact (pure or dense) runs."""
    steps: List[int]
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    stderr: Dict[str, np.ndarray] = field(default_factory=dict)
    method: str = "pure"
    trajectories: int = 1
    final_state: Optional[Union[SpinorState, DensityOperator]] = None
    leaked_norm: float = 0.0

    def series(self, name: str) -> np.ndarray:
        return self.values[name]


def record_steps(n_steps: int, interval: int) -> List[int]:
    if interval < 1:
        raise ValueError("Observer interval must be at least 1")
    return sorted(set(range(0, n_steps + 1, interval)) | {n_steps})


def _resolve_method(geometry: LatticeGeometry, config: DecoherenceConfig, initial, settings: Settings) -> str:
    if isinstance(initial, DensityOperator):
        if config.method is EvolutionMethod.TRAJECTORIES:
            raise ValueError("Trajectory evolution needs a pure initial state")
        return "dense"
    if config.method is EvolutionMethod.DENSE:
        return "dense"
    if config.method is EvolutionMethod.TRAJECTORIES:
        return "trajectories" if not config.is_coherent else "pure"
    if config.is_coherent:
        return "pure"
    return "dense" if geometry.basis_size <= settings.dense_basis_limit else "trajectories"


def evolve(initial: Union[SpinorState, DensityOperator], protocol: WalkProtocol, field: CoinField,
           config: DecoherenceConfig, n_steps: int, observers: Sequence[Observer] = (), interval: int = 1,
           monitor: Optional[InvariantMonitor] = None, settings: Optional[Settings] = None,
           max_workers: Optional[int] = None) -> EvolutionResult:
    """
    Evolve ``initial`` for ``n_steps`` and record every observer at step 0,
    every ``interval`` steps and at the last step.

    Pure states with decoherence are evolved as a dense density matrix when the
    basis fits the dense limit (or when ``config.method`` is dense) and as a
    trajectory ensemble otherwise.
    """
    if n_steps < 0:
        raise ValueError("Number of steps cannot be negative")
    settings = settings or default_settings
    monitor = monitor or InvariantMonitor(settings)
    field.require_geometry(initial.geometry)
    check_model_validity(config, settings)
    steps = record_steps(n_steps, interval)
    method = _resolve_method(initial.geometry, config, initial, settings)
    logger.info(f"Evolving {n_steps} steps of '{protocol.name}' on {initial.geometry.extent} ({method})")

    if method == "dense":
        return _evolve_dense(initial, protocol, field, config, n_steps, observers, steps, monitor, settings)
    if method == "pure":
        return _evolve_pure(initial, protocol, field, n_steps, observers, steps, monitor)
    return _evolve_trajectories(initial, protocol, field, config, n_steps, observers, steps, monitor,
                                settings, max_workers)


def _store(result: EvolutionResult, observers: Sequence[Observer], samples: List[List[np.ndarray]],
           errors: Optional[List[List[np.ndarray]]] = None):
    for i, observer in enumerate(observers):
        result.values[observer.name] = np.asarray(samples[i])
        result.stderr[observer.name] = (np.asarray(errors[i]) if errors is not None
                                        else np.zeros_like(result.values[observer.name]))


def _evolve_pure(initial: SpinorState, protocol, field, n_steps, observers, steps, monitor) -> EvolutionResult:
    compiled = CompiledStep(protocol, field)
    amplitudes = np.array(initial.amplitudes)[None, ...]
    samples: List[List[np.ndarray]] = [[] for _ in observers]
    wanted = set(steps)
    for n in range(n_steps + 1):
        if n > 0:
            amplitudes, leaked = compiled.apply(amplitudes)
            monitor.record_leak(leaked)
            monitor.check_norm(n, float(np.sum(np.abs(amplitudes) ** 2)))
        if n in wanted:
            for i, observer in enumerate(observers):
                samples[i].append(observer.pure(amplitudes)[0])
    result = EvolutionResult(steps=steps, method="pure",
                             final_state=SpinorState(initial.geometry, amplitudes[0]),
                             leaked_norm=monitor.leaked_norm)
    _store(result, observers, samples)
    return result


def _evolve_dense(initial, protocol, field, config, n_steps, observers, steps, monitor, settings) -> EvolutionResult:
    if any(b is not Boundary.PERIODIC for b in initial.geometry.boundary):
        raise GeometryMismatchException("Dense channel evolution needs periodic boundaries",
                                        expected=Boundary.PERIODIC.value, actual=initial.geometry.boundary)
    stepper = DensityStepper(protocol, field, config, settings)
    rho = initial if isinstance(initial, DensityOperator) else initial.to_density()
    matrix = np.array(rho.matrix)
    geometry = rho.geometry
    samples: List[List[np.ndarray]] = [[] for _ in observers]
    wanted = set(steps)
    for n in range(n_steps + 1):
        if n > 0:
            matrix = stepper.step(matrix)
            monitor.check_density(n, DensityOperator(geometry, matrix))
        if n in wanted:
            for i, observer in enumerate(observers):
                samples[i].append(observer.mixed(matrix, geometry))
    result = EvolutionResult(steps=steps, method="dense", final_state=DensityOperator(geometry, matrix))
    _store(result, observers, samples)
    return result


def _evolve_trajectories(initial: SpinorState, protocol, field, config, n_steps, observers, steps, monitor,
                         settings, max_workers) -> EvolutionResult:
    _require_trajectory_boundaries(initial.geometry)
    kernel = _TrajectoryKernel(protocol, field, config)
    chunk_size = settings.trajectory_chunk_size
    chunks = [list(range(start, min(start + chunk_size, config.trajectories)))
              for start in range(0, config.trajectories, chunk_size)]
    wanted = set(steps)

    def run_chunk(ids: List[int]):
        amplitudes = np.repeat(np.array(initial.amplitudes)[None, ...], len(ids), axis=0)
        sums: List[List[np.ndarray]] = [[] for _ in observers]
        squares: List[List[np.ndarray]] = [[] for _ in observers]
        for n in range(n_steps + 1):
            if n > 0:
                amplitudes = kernel.step(amplitudes, n, ids)
                monitor.check_batch_norms(n, np.sum(np.abs(amplitudes.reshape(len(ids), -1)) ** 2, axis=1))
            if n in wanted:
                for i, observer in enumerate(observers):
                    values = observer.pure(amplitudes)
                    sums[i].append(values.sum(axis=0))
                    squares[i].append((values ** 2).sum(axis=0))
        return sums, squares

    workers = max(1, min(max_workers or settings.max_threads, len(chunks)))
    if workers == 1:
        partials = [run_chunk(ids) for ids in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            partials = list(executor.map(run_chunk, chunks))

    count = config.trajectories
    means: List[List[np.ndarray]] = [[] for _ in observers]
    errors: List[List[np.ndarray]] = [[] for _ in observers]
    for i in range(len(observers)):
        for r in range(len(steps)):
            total = sum(p[0][i][r] for p in partials)
            total_sq = sum(p[1][i][r] for p in partials)
            mean = total / count
            variance = np.maximum(total_sq / count - mean ** 2, 0.0)
            means[i].append(mean)
            errors[i].append(np.sqrt(variance / count))
    result = EvolutionResult(steps=steps, method="trajectories", trajectories=count)
    _store(result, observers, means, errors)
    logger.info(f"Trajectory ensemble finished: {count} trajectories in {len(chunks)} chunks")
    return result
