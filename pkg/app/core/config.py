from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator
from typing import Optional
import os
import logging

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Base settings for the quantum walk simulator."""

    # Environment
    environment: str = "workstation"
    debug: bool = False

    # Logging
    log_level: str = "INFO"
    log_format: str = "text"  # text or json

    # Output
    output_dir: str = "./results"

    # Parallelism
    max_threads: int = 4
    trajectory_chunk_size: int = 256

    # Dense storage
    dense_basis_limit: int = 4096
    positivity_check_limit: int = 256

    # Numerical tolerances
    norm_tolerance: float = 1e-12
    trace_tolerance: float = 1e-10
    normalization_reject_tolerance: float = 1e-6

    # Decoherence model validity
    decoherence_warning_threshold: float = 0.2

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v):
        """Validate the logging level name."""
        level = v.upper()
        if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValueError(f'Unknown log level: {v}')
        return level

    @field_validator('log_format')
    @classmethod
    def validate_log_format(cls, v):
        """Validate the log output format."""
        if v not in ('text', 'json'):
            raise ValueError("Log format must be 'text' or 'json'")
        return v

    @field_validator('max_threads')
    @classmethod
    def validate_max_threads(cls, v):
        """Validate the thread cap."""
        if v < 1:
            raise ValueError('max_threads must be at least 1')
        if v > 256:
            raise ValueError('max_threads should not exceed 256')
        return v

    @field_validator('trajectory_chunk_size')
    @classmethod
    def validate_chunk_size(cls, v):
        """Validate the trajectory reduction chunk size."""
        if v < 1:
            raise ValueError('trajectory_chunk_size must be at least 1')
        return v

    @field_validator('dense_basis_limit', 'positivity_check_limit')
    @classmethod
    def validate_basis_limits(cls, v):
        """Validate basis-size limits."""
        if v < 2:
            raise ValueError('Basis limits must be at least 2')
        if v > 65536:
            raise ValueError('Basis limits above 65536 exceed dense storage on any workstation')
        return v

    @field_validator('norm_tolerance', 'trace_tolerance', 'normalization_reject_tolerance')
    @classmethod
    def validate_tolerance(cls, v):
        """Validate numerical tolerances."""
        if v <= 0:
            raise ValueError('Tolerances must be positive')
        if v > 1e-2:
            raise ValueError('Tolerances above 1e-2 make the invariant checks meaningless')
        return v

    @field_validator('decoherence_warning_threshold')
    @classmethod
    def validate_warning_threshold(cls, v):
        """Validate the decoherence warning threshold."""
        if not 0.0 <= v <= 1.0:
            raise ValueError('decoherence_warning_threshold must lie in [0, 1]')
        return v

    def validate_all_settings(self) -> dict:
        """
        Comprehensive validation of all settings with detailed results.

        Returns:
            dict: Complete validation results
        """
        validation_results = {
            'valid': True,
            'warnings': [],
            'errors': [],
            'recommendations': [],
            'checks_performed': []
        }

        # Tolerance ordering
        if self.norm_tolerance > self.trace_tolerance:
            validation_results['warnings'].append(
                'norm_tolerance is looser than trace_tolerance; pure-state checks will be weaker than mixed-state checks'
            )
        if self.normalization_reject_tolerance < self.trace_tolerance:
            validation_results['errors'].append(
                'normalization_reject_tolerance must not be tighter than trace_tolerance'
            )
            validation_results['valid'] = False
        validation_results['checks_performed'].append('tolerances')

        # Storage limits
        if self.positivity_check_limit > self.dense_basis_limit:
            validation_results['errors'].append(
                'positivity_check_limit cannot exceed dense_basis_limit'
            )
            validation_results['valid'] = False
        if self.dense_basis_limit > 8192:
            validation_results['recommendations'].append(
                'Dense density matrices above 8192 basis states need more than 1 GiB each'
            )
        validation_results['checks_performed'].append('storage_limits')

        # Parallelism
        cpu_count = os.cpu_count() or 1
        if self.max_threads > cpu_count:
            validation_results['warnings'].append(
                f'max_threads={self.max_threads} exceeds the {cpu_count} available CPUs'
            )
        if self.trajectory_chunk_size > 4096:
            validation_results['recommendations'].append(
                'Large trajectory chunks reduce parallel load balancing'
            )
        validation_results['checks_performed'].append('parallelism')

        # Output directory
        parent = os.path.dirname(os.path.abspath(self.output_dir)) or '.'
        if not os.path.isdir(parent):
            validation_results['warnings'].append(
                f'Parent of output_dir does not exist yet: {parent}'
            )
        validation_results['checks_performed'].append('output_directory')

        if self.debug and self.environment == 'ci':
            validation_results['warnings'].append('Debug mode enabled in CI environment')

        return validation_results

    model_config = SettingsConfigDict(env_file=".env", env_prefix="QWALK_", extra="ignore")


class CISettings(Settings):
    """Settings for continuous-integration runs."""

    environment: str = "ci"
    debug: bool = False
    log_format: str = "json"
    max_threads: int = 2


def get_settings() -> Settings:
    """Get settings based on environment."""
    environment = os.getenv("ENVIRONMENT", "workstation")

    if environment == "ci":
        return CISettings()
    else:
        return Settings()


def validate_and_log_configuration(settings: Settings, logger: Optional[logging.Logger] = None) -> bool:
    """
    Validate configuration and log results.

    Args:
        settings: Settings instance to validate
        logger: Logger instance for output

    Returns:
        bool: True if configuration is valid
    """
    if logger is None:
        logger = logging.getLogger(__name__)

    validation_results = settings.validate_all_settings()

    if validation_results['valid']:
        logger.info(f"Configuration validation passed ({len(validation_results['checks_performed'])} checks)")
    else:
        logger.error("Configuration validation failed")
        for error in validation_results['errors']:
            logger.error(f"Configuration error: {error}")

    for warning in validation_results['warnings']:
        logger.warning(f"Configuration warning: {warning}")

    for recommendation in validation_results['recommendations']:
        logger.info(f"Configuration recommendation: {recommendation}")

    config_summary = {
        'environment': settings.environment,
        'output_dir': settings.output_dir,
        'max_threads': settings.max_threads,
        'dense_basis_limit': settings.dense_basis_limit,
        'checks_performed': validation_results['checks_performed']
    }
    logger.debug(f"Configuration summary: {config_summary}")

    return validation_results['valid']


# Global settings instance
settings = get_settings()
