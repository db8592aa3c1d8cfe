"""
Numerical invariant monitoring for time evolution.

Every stepping loop reports norm or trace after each step. The monitor keeps a
bounded history of drift samples, counts checks, and raises
NumericalInvariantException once a quantity leaves its tolerance.
"""

import logging
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from app.core.config import Settings, settings as default_settings
from app.core.exceptions import NumericalInvariantException
from app.models.lattice import DensityOperator

logger = logging.getLogger(__name__)


@dataclass
class MetricCounter:
    """Counter for monitored events."""
    count: int = 0
    worst: float = 0.0

    def record(self, value: float):
        self.count += 1
        self.worst = max(self.worst, value)

    def reset(self):
        self.count = 0
        self.worst = 0.0


@dataclass
class DriftEvent:
    """A single invariant sample that exceeded half its tolerance."""
    step: int
    quantity: str
    deviation: float
    tolerance: float
    context: Dict[str, Any] = field(default_factory=dict)


class InvariantMonitor:
    """Track norm, trace, Hermiticity and leaked norm during a run."""

    def __init__(self, settings: Optional[Settings] = None, max_events: int = 100):
        self.settings = settings or default_settings
        self.drift_events: deque = deque(maxlen=max_events)
        self.metrics = defaultdict(MetricCounter)
        self.leaked_norm = 0.0
        self._lock = threading.Lock()

    def _record(self, step: int, quantity: str, deviation: float, tolerance: float, **context):
        with self._lock:
            self.metrics[quantity].record(deviation)
            if deviation > 0.5 * tolerance:
                self.drift_events.append(DriftEvent(step, quantity, deviation, tolerance, context))
        if deviation > tolerance:
            logger.error(f"Invariant violated at step {step}: {quantity} deviation {deviation:.3e} > {tolerance:.1e}")
            raise NumericalInvariantException(
                f"{quantity} drifted by {deviation:.3e} at step {step} (tolerance {tolerance:.1e})",
                quantity=quantity, value=deviation, tolerance=tolerance, step=step
            )

    def record_leak(self, amount: float):
        """Accumulate probability removed by an absorbing guard."""
        with self._lock:
            self.leaked_norm += float(amount)

    def check_norm(self, step: int, norm_squared: float, expected: Optional[float] = None):
        """Pure-state norm check; leaked norm counts towards the total."""
        target = 1.0 - self.leaked_norm if expected is None else expected
        self._record(step, 'norm', abs(norm_squared - target), self.settings.norm_tolerance)

    def check_batch_norms(self, step: int, norms_squared: np.ndarray):
        """Norm check over a trajectory batch."""
        deviation = float(np.max(np.abs(norms_squared - 1.0))) if norms_squared.size else 0.0
        self._record(step, 'trajectory_norm', deviation, self.settings.norm_tolerance)

    def check_density(self, step: int, rho: DensityOperator):
        """Trace and Hermiticity check; positivity on small instances."""
        tolerance = self.settings.trace_tolerance
        self._record(step, 'trace', abs(rho.trace() - (1.0 - self.leaked_norm)), tolerance)
        self._record(step, 'hermiticity', rho.hermiticity_error(), tolerance)
        if rho.geometry.basis_size <= self.settings.positivity_check_limit:
            self._record(step, 'positivity', max(0.0, -rho.smallest_eigenvalue()), tolerance)

    def summary(self) -> Dict[str, Any]:
        """Statistics for the run manifest."""
        with self._lock:
            return {
                'checks': {
                    name: {'count': metric.count, 'worst_deviation': metric.worst}
                    for name, metric in self.metrics.items()
                },
                'leaked_norm': self.leaked_norm,
                'drift_events': [
                    {
                        'step': event.step,
                        'quantity': event.quantity,
                        'deviation': event.deviation,
                        'tolerance': event.tolerance,
                    }
                    for event in list(self.drift_events)[-10:]
                ]
            }

    def reset(self):
        with self._lock:
            for metric in self.metrics.values():
                metric.reset()
            self.drift_events.clear()
            self.leaked_norm = 0.0
