"""
Custom exceptions for the quantum walk simulator.

Every exception carries a context dictionary so that the scenario runner can
write a structured diagnostic into the run manifest and map the failure onto
a process exit code.
"""

import traceback
from typing import Dict, Any, Optional


class SimulationException(Exception):
    """
    Base exception carrying a message, an optional wrapped exception and context.
    """

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        original_exception: Optional[Exception] = None,
        context: Optional[Dict[str, Any]] = None,
        capture_traceback: bool = True
    ):
        super().__init__(message)
        self.message = message
        self.original_type = original_exception.__class__.__name__ if original_exception else None
        self.original_message = str(original_exception) if original_exception else None
        self.context = context or {}

        if capture_traceback and original_exception:
            self.traceback_str = traceback.format_exc()
        else:
            self.traceback_str = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to a dictionary for manifests and JSON logs."""
        return {
            'type': self.__class__.__name__,
            'message': self.message,
            'original_type': self.original_type,
            'original_message': self.original_message,
            'context': self.context,
            'traceback': self.traceback_str,
            'exit_code': self.exit_code,
        }

    def __str__(self) -> str:
        if self.original_type:
            return f"{self.message} (Original: {self.original_type}: {self.original_message})"
        return self.message

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__name__}("
            f"message='{self.message}', "
            f"original_type='{self.original_type}', "
            f"context={self.context})"
        )


class ConfigurationException(SimulationException):
    """Invalid scenario file or preset, reported with a line anchor when known."""

    def __init__(
        self,
        message: str,
        source: Optional[str] = None,
        line: Optional[int] = None,
        key: Optional[str] = None,
        original_exception: Optional[Exception] = None
    ):
        context = {}
        if source:
            context['source'] = source
        if line is not None:
            context['line'] = line
        if key:
            context['key'] = key

        super().__init__(
            message=message,
            original_exception=original_exception,
            context=context
        )

        self.source = source
        self.line = line
        self.key = key

    def __str__(self) -> str:
        location = ""
        if self.source:
            location = self.source
            if self.line is not None:
                location = f"{location}:{self.line}"
            location = f"{location}: "
        elif self.line is not None:
            location = f"line {self.line}: "
        return f"{location}{self.message}"


class GeometryMismatchException(SimulationException):
    """States, fields or operators defined on incompatible lattices or axes."""

    def __init__(
        self,
        message: str,
        expected: Optional[Any] = None,
        actual: Optional[Any] = None
    ):
        context = {}
        if expected is not None:
            context['expected'] = str(expected)
        if actual is not None:
            context['actual'] = str(actual)

        super().__init__(message=message, context=context)

        self.expected = expected
        self.actual = actual


class NormalizationException(SimulationException):
    """Input state is not normalized within the rejection tolerance."""

    def __init__(self, message: str, norm: Optional[float] = None, tolerance: Optional[float] = None):
        context = {}
        if norm is not None:
            context['norm'] = norm
        if tolerance is not None:
            context['tolerance'] = tolerance

        super().__init__(message=message, context=context)

        self.norm = norm
        self.tolerance = tolerance


class DenseStorageLimitException(SimulationException):
    """Dense density matrix requested for a basis larger than the configured cap."""

    def __init__(self, basis_size: int, limit: int):
        super().__init__(
            message=(
                f"Basis size {basis_size} exceeds the dense density-matrix limit {limit}; "
                f"use trajectory unraveling (decoherence.method = 'trajectories') instead"
            ),
            context={'basis_size': basis_size, 'limit': limit}
        )
        self.basis_size = basis_size
        self.limit = limit


class SpectralGapException(SimulationException):
    """A topological quantity was requested for a gapless walk."""

    def __init__(self, message: str, min_gap: Optional[float] = None, tolerance: Optional[float] = None):
        context = {}
        if min_gap is not None:
            context['min_gap'] = min_gap
        if tolerance is not None:
            context['tolerance'] = tolerance

        super().__init__(message=message, context=context)

        self.min_gap = min_gap
        self.tolerance = tolerance


class AmbiguousCrossingException(SimulationException):
    """Edge-mode crossings cannot be resolved at the current k grid."""

    def __init__(self, message: str, grid_points: Optional[int] = None):
        context = {}
        if grid_points is not None:
            context['grid_points'] = grid_points

        super().__init__(message=message, context=context)

        self.grid_points = grid_points


class NumericalInvariantException(SimulationException):
    """Norm, trace or Hermiticity drifted beyond tolerance during a run."""

    exit_code: int = 2

    def __init__(
        self,
        message: str,
        quantity: Optional[str] = None,
        value: Optional[float] = None,
        tolerance: Optional[float] = None,
        step: Optional[int] = None
    ):
        context = {}
        if quantity:
            context['quantity'] = quantity
        if value is not None:
            context['value'] = value
        if tolerance is not None:
            context['tolerance'] = tolerance
        if step is not None:
            context['step'] = step

        super().__init__(message=message, context=context)

        self.quantity = quantity
        self.value = value
        self.tolerance = tolerance
        self.step = step


def wrap_exception(
    original_exception: Exception,
    context_message: str,
    **context_data
) -> SimulationException:
    """
    Wrap any exception as a SimulationException.

    Args:
        original_exception: The original exception to wrap
        context_message: Descriptive message about the context
        **context_data: Additional context data to include

    Returns:
        SimulationException with the original exception wrapped
    """
    return SimulationException(
        message=context_message,
        original_exception=original_exception,
        context=context_data
    )


def safe_str(obj: Any) -> str:
    """Convert any object to string without raising."""
    try:
        return str(obj)
    except (UnicodeEncodeError, UnicodeDecodeError):
        return repr(obj)
    except Exception:
        return f"<Error converting {type(obj).__name__} to string>"
