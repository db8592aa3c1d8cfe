import os
import pytest
from unittest.mock import patch
from pydantic import ValidationError

from app.core.config import CISettings, Settings, get_settings, validate_and_log_configuration


class TestSettings:
    """Test cases for Settings class."""

    def test_default_settings(self):
        """Test that default settings are correctly set."""
        with patch.dict(os.environ, {}, clear=True):
            settings = Settings(_env_file=None)

        assert settings.environment == "workstation"
        assert settings.debug is False
        assert settings.log_level == "INFO"
        assert settings.log_format == "text"
        assert settings.output_dir == "./results"
        assert settings.max_threads == 4
        assert settings.trajectory_chunk_size == 256
        assert settings.dense_basis_limit == 4096
        assert settings.positivity_check_limit == 256
        assert settings.norm_tolerance == 1e-12
        assert settings.trace_tolerance == 1e-10
        assert settings.normalization_reject_tolerance == 1e-6
        assert settings.decoherence_warning_threshold == 0.2

    def test_custom_settings(self):
        """Test that custom settings override defaults."""
        settings = Settings(max_threads=8, log_format="json", dense_basis_limit=1024)

        assert settings.max_threads == 8
        assert settings.log_format == "json"
        assert settings.dense_basis_limit == 1024

    def test_environment_prefix(self):
        """Test that QWALK_ environment variables are picked up."""
        with patch.dict(os.environ, {"QWALK_OUTPUT_DIR": "/tmp/qwalk-out", "QWALK_MAX_THREADS": "2"}):
            settings = Settings(_env_file=None)

        assert settings.output_dir == "/tmp/qwalk-out"
        assert settings.max_threads == 2

    def test_log_level_is_normalized(self):
        """Test that lower-case level names are accepted."""
        assert Settings(log_level="debug").log_level == "DEBUG"


class TestSettingsValidation:
    """Test cases for field validators."""

    @pytest.mark.parametrize("field,value", [
        ("max_threads", 0),
        ("max_threads", 1000),
        ("trajectory_chunk_size", 0),
        ("dense_basis_limit", 1),
        ("norm_tolerance", 0.0),
        ("trace_tolerance", 0.5),
        ("decoherence_warning_threshold", 1.5),
        ("log_format", "xml"),
        ("log_level", "LOUD"),
    ])
    def test_out_of_range_values_are_rejected(self, field, value):
        """Test that out-of-range settings raise validation errors."""
        with pytest.raises(ValidationError):
            Settings(**{field: value})

    def test_validate_all_settings_default(self):
        """Test that the defaults pass the cross-field checks."""
        results = Settings().validate_all_settings()

        assert results['valid'] is True
        assert 'tolerances' in results['checks_performed']
        assert 'storage_limits' in results['checks_performed']

    def test_positivity_limit_above_dense_limit_is_an_error(self):
        """Test that positivity checks cannot cover more than dense storage."""
        results = Settings(dense_basis_limit=512, positivity_check_limit=1024).validate_all_settings()

        assert results['valid'] is False
        assert any('positivity_check_limit' in e for e in results['errors'])

    def test_validate_and_log_configuration(self, caplog):
        """Test that invalid configurations are logged and reported."""
        settings = Settings(dense_basis_limit=512, positivity_check_limit=1024)

        assert validate_and_log_configuration(settings) is False
        assert "Configuration validation failed" in caplog.text


class TestGetSettings:
    """Test cases for the settings factory."""

    def test_workstation_environment(self):
        """Test that the default environment yields Settings."""
        with patch.dict(os.environ, {"ENVIRONMENT": "workstation"}):
            settings = get_settings()

        assert type(settings) is Settings

    def test_ci_environment(self):
        """Test that the ci environment yields CISettings."""
        with patch.dict(os.environ, {"ENVIRONMENT": "ci"}):
            settings = get_settings()

        assert isinstance(settings, CISettings)
        assert settings.log_format == "json"
        assert settings.max_threads == 2
