"""
Scenario execution.

``run_scenario`` turns a validated ScenarioConfig into a pipeline (lattice,
coin field, protocol, initial state, decoherence, observers), runs the
requested analysis, and writes every artifact plus a ``manifest.json``
through the output store. Failures are mapped onto process exit codes:
0 success, 1 configuration or storage-limit errors, 2 numerical invariant
violations.
"""

import asyncio
import hashlib
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import reduce
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import psutil
import pydantic
import scipy

import app
from app.core.config import Settings, settings as default_settings
from app.core.exceptions import ConfigurationException, SimulationException, safe_str, wrap_exception
from app.core.monitoring import InvariantMonitor
from app.core.storage import OutputStore, init_storage
from app.models.lattice import LatticeGeometry, Region, SpinorState
from app.models.scenario import (
    AnalysisKind,
    DropletFieldSpec,
    OpticsSpec,
    RegionSpec,
    ScenarioConfig,
    WallFieldSpec,
    load_scenario,
)
from app.services import serializers
from app.services.bloch import (
    bloch_bands,
    classify_1d,
    edge_mode_count,
    gap_scan_2d,
    phase_diagram_1d,
    segment_gap_scan,
    strip_spectrum,
)
from app.services.coin_field import (
    AnglePair,
    CoinField,
    DropletShape,
    OpticsConfig,
    homogeneous_field,
    island_field,
    strip_profile,
    wall_field_1d,
)
from app.services.decoherence import (
    ChannelKind,
    DecoherenceConfig,
    DistributionObserver,
    EvolutionMethod,
    Observer,
    OverlapObserver,
    RegionObserver,
    evolve,
    record_steps,
)
from app.services.edge_analysis import (
    EdgeState,
    droplet_regions,
    droplet_transport,
    edge_state_size_sweep,
    find_edge_states,
    measure_decay,
)
from app.services.protocol import ChiralFrame, ProtocolName, WalkProtocol, get_protocol, light_cone_steps

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunOutcome:
    """Exit status, written artifact paths and the manifest of one run."""
    exit_code: int
    output_dir: Path
    artifacts: List[str] = field(default_factory=list)
    manifest: Dict[str, Any] = field(default_factory=dict)
    error: Optional[Dict[str, Any]] = None

    @property
    def succeeded(self) -> bool:
        return self.exit_code == 0


def config_hash(config: ScenarioConfig) -> str:
    """sha256 of the canonical JSON form of the resolved plan."""
    canonical = json.dumps(config.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def library_versions() -> Dict[str, str]:
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pydantic': pydantic.VERSION,
        'app': app.__version__,
    }


def build_optics(spec: OpticsSpec) -> OpticsConfig:
    if spec.setup == "one_d":
        return OpticsConfig.one_d_setup()
    if spec.setup == "two_d":
        return OpticsConfig.two_d_setup()
    if spec.abbe_ratio is not None:
        return OpticsConfig.for_abbe_ratio(spec.abbe_ratio)
    return OpticsConfig(numerical_aperture=spec.numerical_aperture, wavelength=spec.wavelength,
                        lattice_constant=spec.lattice_constant)


def _pair(spec) -> AnglePair:
    return AnglePair(*spec.to_tuple())


def _droplet_shape(spec: DropletFieldSpec) -> DropletShape:
    return DropletShape(center=tuple(spec.shape.center), radius=spec.shape.radius,
                        apex_distance=spec.shape.apex_distance)


def _region_name(name: str) -> str:
    """Observer names become file names."""
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name).strip("_") or "observer"


class ScenarioRunner:
    """Builds and runs the pipeline of one scenario, collecting text artifacts."""

    def __init__(self, config: ScenarioConfig, settings: Optional[Settings] = None,
                 max_workers: Optional[int] = None):
        self.config = config
        self.settings = settings or default_settings
        self.max_workers = max(1, min(max_workers or self.settings.max_threads, self.settings.max_threads))
        self.monitor = InvariantMonitor(self.settings)
        self.artifacts: Dict[str, str] = {}
        self.summary: Dict[str, Any] = {}
        self.warnings: List[str] = []
        self._edge_cache: Dict[Tuple[str, float], EdgeState] = {}

    def warn(self, message: str):
        logger.warning(message)
        self.warnings.append(message)

    # pipeline construction

    def build_geometry(self) -> LatticeGeometry:
        return self.config.geometry.to_geometry()

    def build_protocol(self) -> WalkProtocol:
        return get_protocol(self.config.protocol)

    def build_field(self, geometry: LatticeGeometry) -> CoinField:
        spec = self.config.field
        if spec.kind == "homogeneous":
            return homogeneous_field(geometry, spec.theta1, spec.theta2)
        if isinstance(spec, WallFieldSpec):
            return wall_field_1d(_pair(spec.left), _pair(spec.right), build_optics(spec.optics), geometry)
        return island_field(geometry, _droplet_shape(spec), _pair(spec.inside), _pair(spec.outside),
                            build_optics(spec.optics), supersampling=spec.supersampling)

    def build_decoherence(self) -> DecoherenceConfig:
        spec = self.config.decoherence
        return DecoherenceConfig(
            channel=ChannelKind(spec.channel),
            probability=spec.probability,
            seed=self.config.seed,
            trajectories=spec.trajectories,
            method=EvolutionMethod(spec.method),
            kraus_per_primitive=spec.kraus_per_primitive,
        )

    def edge_state(self, protocol: WalkProtocol, coin_field: CoinField, gap: str = '0',
                   wall: float = 0.0) -> EdgeState:
        """Edge state of ``gap`` bound to the wall nearest ``wall``."""
        key = (gap, wall)
        if key not in self._edge_cache:
            states = find_edge_states(protocol, coin_field, gap)
            if not states:
                raise ConfigurationException(f"No edge state in gap {gap} of this field", key="edge_state")
            self._edge_cache[key] = min(states, key=lambda s: (abs(s.wall - wall), abs(s.epsilon)))
        return self._edge_cache[key]

    def build_initial_state(self, protocol: WalkProtocol, coin_field: CoinField) -> SpinorState:
        spec = self.config.initial_state
        if spec.edge_state is not None:
            edge = self.edge_state(protocol, coin_field, spec.edge_state.gap, spec.edge_state.wall)
            return edge.state
        return SpinorState.localized(coin_field.geometry, tuple(spec.site), spec.spin_value)

    def build_region(self, spec: RegionSpec, coin_field: CoinField) -> Region:
        geometry = coin_field.geometry
        if spec.kind == "sites":
            return Region.from_sites(geometry, [tuple(site) for site in spec.sites], spec.name)
        if spec.kind == "box":
            lower, upper = spec.lower, spec.upper
            if len(lower) != geometry.dimension or len(upper) != geometry.dimension:
                raise ConfigurationException("Box corners have the wrong dimension", key=spec.name)

            def inside(*grids):
                mask = np.ones(geometry.extent, dtype=bool)
                for grid, lo, hi in zip(grids, lower, upper):
                    mask &= (grid >= lo) & (grid <= hi)
                return mask

            return Region.from_predicate(geometry, inside, spec.name)
        f_region, l_region = droplet_regions(coin_field, _droplet_shape(self.config.field))
        chosen = f_region if spec.kind == "droplet_band" else l_region
        return Region(geometry, chosen.mask, spec.name)

    def build_observers(self, protocol: WalkProtocol, coin_field: CoinField) -> List[Tuple[Observer, int]]:
        observers: List[Tuple[Observer, int]] = []
        taken = set()
        for index, spec in enumerate(self.config.observers):
            if spec.kind == "distribution":
                name = spec.name or "distribution"
                observer: Observer = DistributionObserver(name)
            elif spec.kind == "site_probability":
                name = spec.name or f"P(x={','.join(str(c) for c in spec.site)})"
                region = Region.from_sites(coin_field.geometry, [tuple(spec.site)], name)
                observer = RegionObserver(region, name)
            elif spec.kind == "region_probability":
                name = spec.name or f"P({spec.region.name})"
                observer = RegionObserver(self.build_region(spec.region, coin_field), name)
            else:
                reference = self.config.initial_state.edge_state if self.config.initial_state else None
                gap, wall = (reference.gap, reference.wall) if reference else ('0', 0.0)
                name = spec.name or "edge_population"
                observer = OverlapObserver(self.edge_state(protocol, coin_field, gap, wall).state, name)
            if name in taken:
                raise ConfigurationException(f"Duplicate observer name '{name}'", key=f"observers.{index}.name")
            taken.add(name)
            observers.append((observer, spec.interval))
        return observers

    def check_light_cone(self, geometry: LatticeGeometry, protocol: WalkProtocol, steps: int):
        limit = light_cone_steps(geometry, protocol)
        if steps > limit:
            self.warn(f"Wavefront reaches half the lattice circumference after {limit} steps; "
                      f"{steps} steps requested, so it wraps around the periodic boundary")

    def check_probability(self, probability: float):
        # evolve() logs the same condition; only the manifest entry is added here
        if probability > self.settings.decoherence_warning_threshold:
            self.warnings.append(f"Decoherence probability {probability} exceeds "
                                 f"{self.settings.decoherence_warning_threshold}")

    # analyses

    def run(self):
        handlers = {
            AnalysisKind.EVOLUTION: self.run_evolution,
            AnalysisKind.BLOCH_BANDS: self.run_bloch_bands,
            AnalysisKind.PHASE_DIAGRAM_1D: self.run_phase_diagram,
            AnalysisKind.GAP_SCAN_2D: self.run_gap_scan,
            AnalysisKind.STRIP_SPECTRUM: self.run_strip_spectrum,
            AnalysisKind.EDGE_DECAY: self.run_edge_decay,
            AnalysisKind.DROPLET_TRANSPORT: self.run_droplet_transport,
            AnalysisKind.EDGE_SIZE_SWEEP: self.run_size_sweep,
        }
        kind = self.config.analysis_kind
        logger.info(f"Running scenario '{self.config.name}' ({kind.value})")
        handlers[kind]()

    def run_evolution(self):
        config = self.config
        geometry = self.build_geometry()
        protocol = self.build_protocol()
        coin_field = self.build_field(geometry)
        decoherence = self.build_decoherence()
        self.check_light_cone(geometry, protocol, config.steps)
        if not decoherence.is_coherent:
            self.check_probability(decoherence.probability)

        initial = self.build_initial_state(protocol, coin_field)
        observers = self.build_observers(protocol, coin_field)
        interval = reduce(math.gcd, (i for _, i in observers), 0) or 1
        result = evolve(initial, protocol, coin_field, decoherence, config.steps,
                        [observer for observer, _ in observers], interval=interval,
                        monitor=self.monitor, settings=self.settings, max_workers=self.max_workers)

        scalar_steps = {}
        for observer, every in observers:
            wanted = record_steps(config.steps, every)
            if observer.is_distribution:
                series = result.series(observer.name)
                for row, step_number in enumerate(result.steps):
                    if step_number in wanted:
                        path = f"{_region_name(observer.name)}_n{step_number:05d}.csv"
                        self.artifacts[path] = serializers.distribution_csv(geometry, series[row])
            else:
                scalar_steps[observer.name] = wanted
        if scalar_steps:
            self.artifacts["timeseries.csv"] = serializers.time_series_csv(result, list(scalar_steps),
                                                                         scalar_steps)
        if config.analysis.snapshot_final_state and isinstance(result.final_state, SpinorState):
            self.artifacts["state_final.txt"] = serializers.state_snapshot(result.final_state, config.steps)
        for (gap, wall), edge in self._edge_cache.items():
            stem = f"edge_state_gap{gap}_x{wall:g}"
            self.artifacts[f"{stem}.txt"] = serializers.state_snapshot(edge.state)
            self.artifacts[f"{stem}.json"] = serializers.edge_sidecar(edge, decoherence.probability or 1.0)

        self.summary.update({
            'method': result.method,
            'trajectories': result.trajectories,
            'recorded_steps': len(result.steps),
            'leaked_norm': result.leaked_norm,
        })

    def run_bloch_bands(self):
        analysis = self.config.analysis
        theta1, theta2 = analysis.angles.to_tuple()
        for frame in (ChiralFrame.PRIME, ChiralFrame.DOUBLE_PRIME):
            spectrum = bloch_bands(get_protocol(frame.value), theta1, theta2, analysis.k_points)
            self.artifacts[f"bands_{frame.value}.csv"] = serializers.bands_csv(spectrum)
            self.summary.setdefault('gap_zero', spectrum.gap_zero)
            self.summary.setdefault('gap_pi', spectrum.gap_pi)
        classification = classify_1d(theta1, theta2, analysis.k_points)
        self.summary.update({
            'windings': {
                ChiralFrame.PRIME.value: classification.nu_prime,
                ChiralFrame.DOUBLE_PRIME.value: classification.nu_double_prime,
            },
            'nu_zero': classification.nu_zero,
            'nu_pi': classification.nu_pi,
        })

    def run_phase_diagram(self):
        analysis = self.config.analysis
        theta1 = np.linspace(analysis.theta1.start, analysis.theta1.stop, analysis.theta1.num)
        theta2 = np.linspace(analysis.theta2.start, analysis.theta2.stop, analysis.theta2.num)
        points = phase_diagram_1d(theta1, theta2, analysis.k_points, max_workers=self.max_workers)
        self.artifacts["phase_diagram.csv"] = serializers.phase_diagram_csv(points)
        self.summary['gapless_points'] = sum(p.gapless for p in points)
        self.summary['phases'] = sorted({f"({p.nu_zero},{p.nu_pi})" for p in points if not p.gapless})

    def run_gap_scan(self):
        analysis = self.config.analysis
        theta1 = np.linspace(analysis.theta1.start, analysis.theta1.stop, analysis.theta1.num)
        theta2 = np.linspace(analysis.theta2.start, analysis.theta2.stop, analysis.theta2.num)
        scan = gap_scan_2d(theta1, theta2, analysis.k_points, max_workers=self.max_workers)
        self.artifacts["gap_scan.csv"] = serializers.gap_scan_csv(scan)
        self.summary['closed_points'] = int(np.count_nonzero(scan.closed()))
        if analysis.segment is not None:
            segment = segment_gap_scan(_pair(analysis.segment.start), _pair(analysis.segment.end),
                                       analysis.segment.samples, analysis.k_points, max_workers=self.max_workers)
            self.artifacts["gap_segment.csv"] = serializers.gap_scan_csv(segment)
            self.summary['segment_closures'] = int(np.count_nonzero(segment.closed()))

    def run_strip_spectrum(self):
        analysis = self.config.analysis
        optics = build_optics(analysis.optics) if analysis.optics is not None else None
        profile = strip_profile(analysis.y_extent, analysis.inner_width, _pair(analysis.inside),
                                _pair(analysis.outside), optics)
        spectrum = strip_spectrum(profile, analysis.kx_points)
        self.artifacts["strip_spectrum.csv"] = serializers.strip_spectrum_csv(spectrum)
        self.summary['edge_counts'] = {gap: edge_mode_count(spectrum, gap) for gap in ('0', 'pi')}
        self.summary['walls'] = list(profile.walls)

    def run_edge_decay(self):
        analysis = self.config.analysis
        geometry = self.build_geometry()
        protocol = self.build_protocol()
        coin_field = self.build_field(geometry)
        self.check_light_cone(geometry, protocol, analysis.n_max)
        edge = self.edge_state(protocol, coin_field, analysis.gap, analysis.wall)
        stem = f"edge_state_gap{analysis.gap}_x{analysis.wall:g}"
        self.artifacts[f"{stem}.txt"] = serializers.state_snapshot(edge.state)
        self.artifacts[f"{stem}.json"] = serializers.edge_sidecar(edge)

        channel = ChannelKind(analysis.channel)
        rates = []
        for probability in analysis.probabilities:
            self.check_probability(probability)
            measurement = measure_decay(edge, protocol, coin_field, channel, probability, analysis.n_max,
                                        analysis.fit_window, analysis.kraus_per_primitive,
                                        monitor=self.monitor, settings=self.settings)
            predicted = measurement.predicted.survival(measurement.steps)
            self.artifacts[f"decay_p{probability:g}.csv"] = serializers.series_csv(
                measurement.steps, {'edge_population': measurement.survival, 'predicted': predicted})
            rates.append({
                'probability': probability,
                'fitted_rate': measurement.fitted_rate,
                'predicted_rate': measurement.predicted.rate,
                'relative_error': measurement.relative_error(),
            })
        self.summary.update({'channel': channel.value, 'rates': rates, 'edge_rms_size': edge.rms_size})

    def run_droplet_transport(self):
        config = self.config
        analysis = config.analysis
        geometry = self.build_geometry()
        coin_field = self.build_field(geometry)
        decoherence = self.build_decoherence()
        protocol = self.build_protocol()
        self.check_light_cone(geometry, protocol, config.steps)
        if not decoherence.is_coherent:
            self.check_probability(decoherence.probability)

        transport = droplet_transport(
            coin_field, _droplet_shape(config.field), decoherence, n_max=config.steps,
            initial_site=tuple(config.initial_state.site), initial_spin=config.initial_state.spin_value,
            band=tuple(analysis.band), dilation=analysis.dilation, protocol=protocol,
            monitor=self.monitor, settings=self.settings, max_workers=self.max_workers,
        )
        stderr = None
        if transport.method == "trajectories":
            stderr = {'P_F': transport.band_population_stderr}
        self.artifacts["droplet_series.csv"] = serializers.series_csv(
            transport.steps,
            {'P_F': transport.band_population, 'L_over_F': transport.lower_ratio, 'front': transport.front},
            stderr,
        )
        self.artifacts["field.csv"] = serializers.field_csv(coin_field)

        start, stop = analysis.plateau_window
        plateau = transport.plateau(start, stop) if transport.steps[-1] >= start else None
        self.summary.update({
            'method': transport.method,
            'trajectories': transport.trajectories,
            'front_speed': None if math.isnan(transport.front_speed) else transport.front_speed,
            'oscillation_period': transport.oscillation_period,
            'perimeter': transport.perimeter,
            'band_plateau': plateau,
        })

    def run_size_sweep(self):
        analysis = self.config.analysis
        protocol = get_protocol(ProtocolName.SPLIT_STEP_1D)
        rows = edge_state_size_sweep(analysis.ratios, analysis.sites, protocol)
        self.artifacts["size_sweep.csv"] = serializers.size_sweep_csv(rows)
        missing = [row.ratio for row in rows if not row.found]
        if missing:
            self.warn(f"No wall edge state found for a/R_A in {missing}")
        self.summary['found'] = len(rows) - len(missing)


async def _write_artifacts(store: OutputStore, artifacts: Dict[str, str]) -> List[str]:
    results = await store.save_all(artifacts)
    failed = [path for path, ok in results.items() if not ok]
    if failed:
        raise SimulationException(f"Could not write artifacts: {', '.join(failed)}", context={'paths': failed})
    return sorted(results)


def _manifest(config: ScenarioConfig, runner: Optional[ScenarioRunner], started: datetime, elapsed: float,
              artifacts: List[str], error: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    process = psutil.Process()
    manifest = {
        'name': config.name,
        'description': config.description,
        'analysis': config.analysis_kind.value,
        'config_sha256': config_hash(config),
        'config': config.model_dump(mode='json'),
        'seed': config.seed,
        'versions': library_versions(),
        'started_at': started.isoformat(),
        'wall_clock_seconds': elapsed,
        'memory_rss_bytes': process.memory_info().rss,
        'status': 'failed' if error else 'succeeded',
        'artifacts': artifacts,
    }
    if runner is not None:
        manifest.update({
            'threads': runner.max_workers,
            'summary': runner.summary,
            'warnings': runner.warnings,
            'invariants': runner.monitor.summary(),
        })
    if error:
        manifest['error'] = error
    return manifest


def run_config(config: ScenarioConfig, output_dir: Optional[Union[str, Path]] = None,
               threads: Optional[int] = None, settings: Optional[Settings] = None) -> RunOutcome:
    """Run a validated scenario and write its artifacts and manifest."""
    settings = settings or default_settings
    target = Path(output_dir or config.output_dir or Path(settings.output_dir) / config.name)
    store = init_storage(str(target))
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()

    runner = ScenarioRunner(config, settings, threads)
    error = None
    exit_code = 0
    try:
        runner.run()
    except SimulationException as e:
        logger.error(f"Scenario '{config.name}' failed: {e}")
        error, exit_code = e.to_dict(), e.exit_code
    except (ValueError, TypeError) as e:
        wrapped = wrap_exception(e, f"Scenario '{config.name}' was rejected", analysis=config.analysis_kind.value)
        logger.error(safe_str(wrapped))
        error, exit_code = wrapped.to_dict(), wrapped.exit_code

    artifacts = dict(runner.artifacts) if error is None else {}
    elapsed = time.perf_counter() - clock
    written = asyncio.run(_write_artifacts(store, artifacts)) if artifacts else []
    manifest = _manifest(config, runner, started, elapsed, written, error)
    asyncio.run(_write_artifacts(store, {MANIFEST_NAME: json.dumps(manifest, indent=2, default=str)}))
    logger.info(f"Scenario '{config.name}' finished in {elapsed:.2f}s with exit code {exit_code} "
                f"({len(written)} artifacts in {target})")
    return RunOutcome(exit_code, target, written + [MANIFEST_NAME], manifest, error)


def run_scenario(config: Union[str, Path, ScenarioConfig], output_dir: Optional[Union[str, Path]] = None,
                 threads: Optional[int] = None, settings: Optional[Settings] = None) -> RunOutcome:
    """
    Run a scenario given as a config path or a ScenarioConfig.

    An unreadable or invalid config yields exit code 1 without writing anything.
    """
    if not isinstance(config, ScenarioConfig):
        try:
            config = load_scenario(config)
        except ConfigurationException as e:
            logger.error(f"Invalid scenario: {e}")
            return RunOutcome(e.exit_code, Path(output_dir or "."), error=e.to_dict())
    return run_config(config, output_dir, threads, settings)
