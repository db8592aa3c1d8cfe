"""
Unit tests for the exception hierarchy.

This module tests context capture, exit codes, string forms and the
wrapping helpers used by the scenario runner.
"""

import pytest

from app.core.exceptions import (
    AmbiguousCrossingException,
    ConfigurationException,
    DenseStorageLimitException,
    GeometryMismatchException,
    NormalizationException,
    NumericalInvariantException,
    SimulationException,
    SpectralGapException,
    safe_str,
    wrap_exception,
)


class TestSimulationException:
    """Test cases for the base exception."""

    def test_message_and_context(self):
        """Test that message and context are stored."""
        error = SimulationException("boom", context={'step': 3})

        assert str(error) == "boom"
        assert error.context == {'step': 3}
        assert error.exit_code == 1

    def test_wrapped_original_in_string(self):
        """Test that the original exception appears in the string form."""
        error = SimulationException("outer", original_exception=ValueError("inner"))

        assert "ValueError" in str(error)
        assert "inner" in str(error)

    def test_to_dict(self):
        """Test the manifest form of an exception."""
        payload = SimulationException("boom", context={'a': 1}).to_dict()

        assert payload['type'] == "SimulationException"
        assert payload['message'] == "boom"
        assert payload['context'] == {'a': 1}
        assert payload['exit_code'] == 1


class TestExitCodes:
    """Test cases for the process exit codes carried by exceptions."""

    def test_configuration_errors_exit_with_one(self):
        """Test configuration error exit code."""
        assert ConfigurationException("bad").exit_code == 1

    def test_dense_storage_limit_exits_with_one(self):
        """Test dense storage guard exit code and message."""
        error = DenseStorageLimitException(basis_size=8192, limit=4096)

        assert error.exit_code == 1
        assert "trajectory" in error.message
        assert error.context == {'basis_size': 8192, 'limit': 4096}

    def test_numerical_invariant_exits_with_two(self):
        """Test numerical invariant exit code."""
        error = NumericalInvariantException("drift", quantity='norm', value=1e-9, tolerance=1e-12, step=4)

        assert error.exit_code == 2
        assert error.context['quantity'] == 'norm'
        assert error.context['step'] == 4


class TestTypedContext:
    """Test cases for subclasses with typed context."""

    def test_configuration_location_in_string(self):
        """Test that source and line prefix the message."""
        error = ConfigurationException("unknown key", source="run.json", line=7, key="foo")

        assert str(error) == "run.json:7: unknown key"
        assert error.context == {'source': "run.json", 'line': 7, 'key': "foo"}

    def test_configuration_line_without_source(self):
        """Test the line-only prefix."""
        assert str(ConfigurationException("bad", line=2)) == "line 2: bad"

    def test_geometry_mismatch(self):
        """Test expected/actual context."""
        error = GeometryMismatchException("mismatch", expected=(10,), actual=(12,))

        assert error.context == {'expected': "(10,)", 'actual': "(12,)"}

    def test_other_subclasses(self):
        """Test that every subclass derives from SimulationException."""
        errors = [
            NormalizationException("n", norm=1.1, tolerance=1e-6),
            SpectralGapException("ill-defined winding", min_gap=0.0, tolerance=1e-3),
            AmbiguousCrossingException("refine", grid_points=64),
        ]
        for error in errors:
            assert isinstance(error, SimulationException)
            assert error.exit_code == 1
        assert errors[2].grid_points == 64


class TestHelpers:
    """Test cases for wrap_exception and safe_str."""

    def test_wrap_exception(self):
        """Test wrapping of a foreign exception."""
        wrapped = wrap_exception(KeyError("x"), "lookup failed", analysis="evolution")

        assert isinstance(wrapped, SimulationException)
        assert wrapped.original_type == "KeyError"
        assert wrapped.context == {'analysis': "evolution"}

    def test_safe_str_never_raises(self):
        """Test safe_str on an object whose __str__ fails."""
        class Broken:
            def __str__(self):
                raise RuntimeError("no")

        assert "Broken" in safe_str(Broken())
        assert safe_str(3) == "3"
