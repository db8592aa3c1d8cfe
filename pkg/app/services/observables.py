"""
Observables of walker states: position distributions, region populations and
state overlaps. Pure and density-matrix states are accepted alike.
"""

import logging
from typing import Optional, Union

import numpy as np

from app.core.config import Settings, settings as default_settings
from app.core.exceptions import NormalizationException
from app.models.lattice import DensityOperator, Region, SpinorState

logger = logging.getLogger(__name__)

WalkerState = Union[SpinorState, DensityOperator]


def _populations(state: WalkerState) -> np.ndarray:
    if isinstance(state, SpinorState):
        return np.abs(state.amplitudes) ** 2
    if isinstance(state, DensityOperator):
        return state.diagonal()
    raise TypeError(f"Unsupported state type {type(state).__name__}")


def position_distribution(state: WalkerState, settings: Optional[Settings] = None) -> np.ndarray:
    """
    P(x) = sum over spins of the (x, s) population, as an array of shape ``extent``.

    Raises:
        NormalizationException: total probability deviates from 1 by more than
            the rejection tolerance
    """
    settings = settings or default_settings
    populations = _populations(state)
    total = float(np.sum(populations))
    tolerance = settings.normalization_reject_tolerance
    if abs(total - 1.0) > tolerance:
        raise NormalizationException(
            f"State is not normalized: total probability {total:.9f}", norm=total, tolerance=tolerance
        )
    return np.clip(np.sum(populations, axis=-1), 0.0, None)


def region_probability(state: WalkerState, region: Region, settings: Optional[Settings] = None) -> float:
    """Probability of finding the walker inside ``region``; 0 for an empty region."""
    region.geometry.require_same(state.geometry)
    if region.size == 0:
        return 0.0
    return float(np.sum(position_distribution(state, settings)[region.mask]))


def overlap_probability(state: SpinorState, reference: SpinorState) -> float:
    """|<reference|state>|^2."""
    state.geometry.require_same(reference.geometry)
    return float(np.abs(np.vdot(reference.vector, state.vector)) ** 2)


def spin_resolved_distribution(state: WalkerState) -> np.ndarray:
    """Populations per (site, spin), shape ``extent + (2,)``."""
    return _populations(state).copy()
