"""
Text formats of run artifacts.

    state snapshot   header ``# dim extent... n`` then ``x [y] s re im`` per basis element
    distribution     CSV ``x[,y],p``
    coin field       CSV ``x[,y],theta1,theta2``
    time series      CSV ``n,observable_name,value[,stderr]``
    spectrum         CSV ``k[,m],epsilon[,edge_label,v_g]``
    phase scan       CSV ``theta1,theta2,gap0,gappi``
    edge sidecar     JSON ``{epsilon, center, rms_size, spin_factor, gamma_spin, gamma_position}``
"""

import csv
import io
import json
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.core.exceptions import ConfigurationException
from app.models.lattice import LatticeGeometry, SpinorState
from app.services.bloch import GapScan, PhaseDiagramPoint, QuasienergySpectrum, StripSpectrum
from app.services.coin_field import CoinField
from app.services.decoherence import ChannelKind, EvolutionResult
from app.services.edge_analysis import EdgeState, SizeSweepRow, decay_rate

FLOAT_FORMAT = "{:.17g}"


def _fmt(value) -> str:
    return FLOAT_FORMAT.format(float(value))


def _axis_names(dimension: int) -> List[str]:
    return ['x', 'y'][:dimension]


def _write_rows(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def state_snapshot(state: SpinorState, step: int = 0) -> str:
    geometry = state.geometry
    lines = [f"# {geometry.dimension} {' '.join(str(n) for n in geometry.extent)} {step}"]
    coordinates = geometry.site_coordinates()
    flat = state.amplitudes.reshape(-1, 2)
    for site, amplitudes in zip(coordinates, flat):
        position = ' '.join(str(int(c)) for c in site)
        for spin in (0, 1):
            value = amplitudes[spin]
            lines.append(f"{position} {spin} {_fmt(value.real)} {_fmt(value.imag)}")
    return '\n'.join(lines) + '\n'


def parse_state_snapshot(text: str) -> SpinorState:
    """Inverse of :func:`state_snapshot` (periodic geometry)."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith('#'):
        raise ConfigurationException("State snapshot lacks the '# dim extent... n' header", line=1)
    header = lines[0][1:].split()
    try:
        dimension = int(header[0])
        extent = tuple(int(n) for n in header[1:1 + dimension])
    except (ValueError, IndexError) as e:
        raise ConfigurationException(f"Malformed snapshot header: {lines[0]}", line=1, original_exception=e)
    geometry = LatticeGeometry(dimension=dimension, extent=extent)
    amplitudes = np.zeros(geometry.shape, dtype=complex)
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) != dimension + 3:
            raise ConfigurationException(f"Expected {dimension + 3} columns, got {len(fields)}", line=number)
        site = tuple(int(v) for v in fields[:dimension])
        spin = int(fields[dimension])
        amplitudes[geometry.site_index(site) + (spin,)] = complex(float(fields[-2]), float(fields[-1]))
    return SpinorState(geometry, amplitudes)


def distribution_csv(geometry: LatticeGeometry, distribution: np.ndarray) -> str:
    coordinates = geometry.site_coordinates()
    rows = ([*(int(c) for c in site), _fmt(p)] for site, p in zip(coordinates, np.asarray(distribution).ravel()))
    return _write_rows(_axis_names(geometry.dimension) + ['p'], rows)


def field_csv(field: CoinField) -> str:
    geometry = field.geometry
    rows = ([*(int(c) for c in site), _fmt(t1), _fmt(t2)]
            for site, t1, t2 in zip(geometry.site_coordinates(), field.theta1.ravel(), field.theta2.ravel()))
    return _write_rows(_axis_names(geometry.dimension) + ['theta1', 'theta2'], rows)


def time_series_csv(result: EvolutionResult, names: Optional[Sequence[str]] = None,
                    steps_by_name: Optional[Dict[str, Iterable[int]]] = None) -> str:
    """
    Scalar observables in long format; stderr only for trajectory runs.

    ``steps_by_name`` restricts an observable to a subset of the recorded steps.
    """
    names = [n for n in (names or result.values) if np.ndim(result.values[n]) == 1]
    with_error = result.method == "trajectories"
    selected = {name: set(steps_by_name[name]) for name in names if steps_by_name and name in steps_by_name}
    header = ['n', 'observable_name', 'value'] + (['stderr'] if with_error else [])
    rows = []
    for index, step in enumerate(result.steps):
        for name in names:
            if name in selected and step not in selected[name]:
                continue
            row = [step, name, _fmt(result.values[name][index])]
            if with_error:
                row.append(_fmt(result.stderr[name][index]))
            rows.append(row)
    return _write_rows(header, rows)


def series_csv(steps: Sequence[int], series: Dict[str, np.ndarray], stderr: Optional[Dict[str, np.ndarray]] = None) -> str:
    """Long-format time series from plain arrays."""
    header = ['n', 'observable_name', 'value'] + (['stderr'] if stderr else [])
    rows = []
    for index, step in enumerate(steps):
        for name, values in series.items():
            row = [int(step), name, _fmt(values[index])]
            if stderr:
                row.append(_fmt(stderr.get(name, np.zeros(len(steps)))[index]))
            rows.append(row)
    return _write_rows(header, rows)


def bands_csv(spectrum: QuasienergySpectrum) -> str:
    """1D bands: ``k,m,epsilon`` plus the eigenspinor of the band."""
    k = spectrum.momenta[0]
    rows = []
    for j in range(len(k)):
        for m, sign in ((0, -1.0), (1, 1.0)):
            n = sign * spectrum.spinor[j]
            rows.append([_fmt(k[j]), m, _fmt(spectrum.epsilon[j, m]), _fmt(n[0]), _fmt(n[1]), _fmt(n[2])])
    return _write_rows(['k', 'm', 'epsilon', 'n_x', 'n_y', 'n_z'], rows)


def strip_spectrum_csv(spectrum: StripSpectrum) -> str:
    rows = []
    for j, k in enumerate(spectrum.kx):
        for m in range(spectrum.epsilon.shape[1]):
            velocity = spectrum.velocity[j, m]
            rows.append([_fmt(k), m, _fmt(spectrum.epsilon[j, m]), spectrum.edge_label[j, m],
                         '' if np.isnan(velocity) else _fmt(velocity)])
    return _write_rows(['k', 'm', 'epsilon', 'edge_label', 'v_g'], rows)


def gap_scan_csv(scan: GapScan) -> str:
    rows = []
    if scan.gap_zero.ndim == 2:
        for i, t1 in enumerate(scan.theta1):
            for j, t2 in enumerate(scan.theta2):
                rows.append([_fmt(t1), _fmt(t2), _fmt(scan.gap_zero[i, j]), _fmt(scan.gap_pi[i, j])])
    else:
        for t1, t2, g0, gp in zip(scan.theta1, scan.theta2, scan.gap_zero, scan.gap_pi):
            rows.append([_fmt(t1), _fmt(t2), _fmt(g0), _fmt(gp)])
    return _write_rows(['theta1', 'theta2', 'gap0', 'gappi'], rows)


def phase_diagram_csv(points: Sequence[PhaseDiagramPoint]) -> str:
    rows = ([_fmt(p.theta1), _fmt(p.theta2), '' if p.gapless else p.nu_zero, '' if p.gapless else p.nu_pi]
            for p in points)
    return _write_rows(['theta1', 'theta2', 'nu_0', 'nu_pi'], rows)


def size_sweep_csv(rows: Sequence[SizeSweepRow]) -> str:
    return _write_rows(['a_over_RA', 'RA_over_a', 'rms_size', 'P_init'],
                       ([_fmt(r.ratio), _fmt(r.abbe_ratio), _fmt(r.rms_size), _fmt(r.initial_overlap)] for r in rows))


def edge_sidecar(edge: EdgeState, probability: float = 1.0) -> str:
    """JSON description of an edge state; decay rates are per unit measurement probability by default."""
    payload = {
        'epsilon': edge.epsilon,
        'center': edge.center,
        'rms_size': edge.rms_size,
        'spin_factor': [[float(c.real), float(c.imag)] for c in edge.spin_factor],
        'gamma_spin': decay_rate(edge, ChannelKind.SPIN, probability).rate,
        'gamma_position': decay_rate(edge, ChannelKind.POSITION, probability).rate,
    }
    return json.dumps(payload, indent=2)
