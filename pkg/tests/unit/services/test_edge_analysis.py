"""
Unit tests for edge states, their decay, and droplet transport.
"""

import logging
import math

import numpy as np
import pytest

from app.core.exceptions import GeometryMismatchException
from app.models.lattice import LatticeGeometry, SpinorState
from app.services.coin_field import (
    AnglePair, DropletShape, OpticsConfig, homogeneous_field, island_field, wall_field_1d
)
from app.services.decoherence import ChannelKind, DecoherenceConfig
from app.services.edge_analysis import (
    WALL_LEFT,
    WALL_RIGHT,
    DecayPrediction,
    EdgeState,
    _front_speed,
    decay_rate,
    droplet_regions,
    droplet_transport,
    edge_state_size_sweep,
    find_edge_states,
    fit_decay_rate,
    initial_overlap,
    measure_decay,
    oscillation_period,
)


def synthetic_edge(amplitudes):
    geometry = LatticeGeometry.line(len(amplitudes))
    state = SpinorState(geometry, np.asarray(amplitudes, dtype=complex)).normalized()
    return EdgeState(state=state, epsilon=0.0, center=0.0, wall=0.0, rms_size=0.0,
                     spin_factor=np.array([1.0, 0.0]), factorization_fidelity=1.0, residual=0.0)


class TestDecayRate:
    """Test cases for the predicted decay rates."""

    def test_spin_polarized_state_is_immune_to_spin_dephasing(self):
        """Test gamma_S = 0 for a state with a single spin component."""
        edge = synthetic_edge([[1, 0], [1, 0], [1, 0], [1, 0]])

        assert decay_rate(edge, ChannelKind.SPIN, 0.1).rate == 0.0
        assert decay_rate(edge, ChannelKind.POSITION, 0.1).rate == pytest.approx(0.1 * (1 - 4 / 16))

    def test_single_site_is_immune_to_position_dephasing(self):
        """Test gamma_X = 0 for a state on one site."""
        edge = synthetic_edge([[0, 0], [1, 1], [0, 0]])

        assert decay_rate(edge, ChannelKind.POSITION, 0.2).rate == pytest.approx(0.0)
        assert decay_rate(edge, ChannelKind.SPIN, 0.2).rate == pytest.approx(0.1)

    def test_no_channel(self):
        """Test that the coherent channel never decays."""
        edge = synthetic_edge([[1, 1], [1, 0]])

        assert decay_rate(edge, "none", 0.5).rate == 0.0

    def test_rate_bounded_by_probability(self):
        """Test 0 <= gamma <= p for a spread-out state."""
        rng = np.random.default_rng(0)
        edge = synthetic_edge(rng.normal(size=(30, 2)))

        for channel in (ChannelKind.SPIN, ChannelKind.POSITION):
            assert 0.0 <= decay_rate(edge, channel, 0.3).rate <= 0.3

    def test_survival(self):
        """Test the predicted survival curve (1 - gamma)^n."""
        prediction = DecayPrediction(ChannelKind.SPIN, 0.1, 0.05)

        assert prediction.survival([0, 1, 2]) == pytest.approx([1.0, 0.95, 0.9025])


class TestFitDecayRate:
    """Test cases for fit_decay_rate."""

    def test_exact_exponential(self):
        """Test that a pure exponential returns its rate."""
        steps = np.arange(0, 101)
        survival = 0.98 ** steps

        assert fit_decay_rate(steps, survival) == pytest.approx(0.02)

    def test_window_applies(self):
        """Test that samples outside the window are ignored."""
        steps = np.arange(0, 101)
        survival = np.where(steps < 5, 1.0, 0.5 * 0.9 ** steps)

        assert fit_decay_rate(steps, survival, (5, 50)) == pytest.approx(0.1)

    def test_window_too_small(self):
        """Test that fewer than two samples are rejected."""
        with pytest.raises(ValueError):
            fit_decay_rate(np.arange(10), np.ones(10), (20, 30))


class TestWallEdgeStates:
    """Test cases for edge states at a domain wall."""

    def test_edge_state_properties(self, wall_edge):
        """Test that the zero-energy state sits at the wall and is an eigenstate."""
        assert abs(wall_edge.epsilon) < 0.05
        assert wall_edge.wall == 0.0
        assert abs(wall_edge.center) <= 5
        assert wall_edge.residual < 1e-6
        assert wall_edge.state.norm() == pytest.approx(1.0)
        assert 0.0 < wall_edge.rms_size < 10.0

    def test_both_walls_bind_states(self, wall_ring, split_step):
        """Test that the antipodal wall of the ring hosts its own zero mode."""
        walls = {state.wall for state in find_edge_states(split_step, wall_ring, '0')}

        assert walls == {0.0, 40.0}

    def test_hybridized_walls_are_separated(self, split_step, caplog):
        """Test that walls close enough to tunnel still yield one state each, with a warning."""
        geometry = LatticeGeometry.line(60)
        field = wall_field_1d(AnglePair(*WALL_LEFT), AnglePair(*WALL_RIGHT), OpticsConfig.for_abbe_ratio(0.5), geometry)

        with caplog.at_level(logging.WARNING, logger="app.services.edge_analysis"):
            states = find_edge_states(split_step, field, '0')

        assert {state.wall for state in states} == {0.0, 30.0}
        assert all(state.residual < 1e-5 for state in states)
        assert "Hybridized edge-state pair" in caplog.text

    def test_homogeneous_bulk_has_no_edge_states(self, split_step):
        """Test that a gapped homogeneous ring has no in-gap states."""
        field = homogeneous_field(LatticeGeometry.line(40), -math.pi / 2, math.pi / 4)

        assert find_edge_states(split_step, field, '0') == []

    def test_invalid_arguments(self, wall_ring, split_step, plane):
        """Test the gap label and the lattice dimension."""
        with pytest.raises(ValueError):
            find_edge_states(split_step, wall_ring, 'half')
        with pytest.raises(GeometryMismatchException):
            find_edge_states(split_step, homogeneous_field(plane, 1, 1), '0')

    def test_first_step_survival_matches_rate(self, wall_edge, wall_ring, split_step):
        """Test tr(|E><E| rho_1) = 1 - gamma exactly for an eigenstate."""
        for channel in (ChannelKind.SPIN, ChannelKind.POSITION):
            measurement = measure_decay(wall_edge, split_step, wall_ring, channel, 0.1, n_max=10,
                                        fit_window=(1, 10))

            assert measurement.survival[0] == pytest.approx(1.0, abs=1e-8)
            assert measurement.survival[1] == pytest.approx(1.0 - measurement.predicted.rate, abs=1e-8)
            assert measurement.fit_window == (1, 10)

    def test_initial_overlap_is_a_probability(self, wall_edge):
        """Test |<E|x0, s_E>|^2 lies in [0, 1]."""
        assert 0.0 <= initial_overlap(wall_edge) <= 1.0 + 1e-12

    @pytest.mark.slow
    def test_size_grows_with_blur(self):
        """Test that worse optical resolution widens the edge state."""
        sharp, blurred = edge_state_size_sweep([2.0, 0.25], sites=80)

        assert sharp.found and blurred.found
        assert blurred.rms_size > sharp.rms_size
        assert sharp.abbe_ratio == pytest.approx(0.5)

    def test_size_sweep_rejects_non_positive_ratio(self):
        """Test the resolution ratio validation."""
        with pytest.raises(ValueError):
            edge_state_size_sweep([0.0])


class TestOscillationPeriod:
    """Test cases for oscillation_period."""

    def test_sine(self):
        """Test the peak spacing of a clean oscillation."""
        n = np.arange(200)

        assert oscillation_period(np.sin(2 * math.pi * n / 20)) == pytest.approx(20.0)

    def test_step_parity_flicker_is_ignored(self):
        """Test that an even/odd alternation on top of a slow oscillation does not set the period."""
        n = np.arange(400)
        series = 0.5 + 0.2 * np.sin(2 * math.pi * n / 40) + 0.15 * (-1.0) ** n

        assert oscillation_period(series) == pytest.approx(40.0, abs=1.0)

    def test_flat_series(self):
        """Test that a constant series has no period."""
        assert oscillation_period(np.ones(100)) is None

    def test_short_series(self):
        """Test that too few samples after the skip give no period."""
        assert oscillation_period(np.arange(10.0)) is None


class TestFrontSpeed:
    """Test cases for the front-speed fit."""

    def test_wrapped_front_is_excluded(self):
        """Test that samples after the front wraps around the contour are not fitted."""
        steps = np.arange(201)
        front = (steps + 50.0) % 100.0 - 50.0

        assert _front_speed(steps, front, 100.0) == pytest.approx(1.0)

    def test_too_few_samples(self):
        """Test that a front passing the limit immediately gives no speed."""
        steps = np.arange(10)

        assert math.isnan(_front_speed(steps, np.full(10, 90.0), 100.0))


class TestDroplet:
    """Test cases for droplet regions and transport."""

    @pytest.fixture
    def droplet(self):
        geometry = LatticeGeometry.plane(48, 48)
        shape = DropletShape(radius=8.0, apex_distance=16.0)
        field = island_field(geometry, shape, AnglePair(math.pi / 5, 4 * math.pi / 5),
                             AnglePair(4 * math.pi / 5, math.pi / 5), OpticsConfig.two_d_setup())
        return field, shape

    def test_regions(self, droplet):
        """Test that L is the lower half of the boundary band F."""
        field, shape = droplet
        f_region, l_region = droplet_regions(field, shape)

        assert f_region.size > 0
        assert l_region.size > 0
        assert not np.any(l_region.mask & ~f_region.mask)
        assert np.all(l_region.sites()[:, 1] < 0)
        assert f_region.mask[field.geometry.site_index((-10, 0))]
        assert not f_region.mask[field.geometry.site_index((0, 0))]

    def test_regions_need_indicator(self, plane):
        """Test that analytic fields cannot define a band."""
        with pytest.raises(ValueError):
            droplet_regions(homogeneous_field(plane, 1, 1), DropletShape())

    def test_transport_series(self, droplet):
        """Test the shape and range of the coherent transport series."""
        field, shape = droplet
        transport = droplet_transport(field, shape, DecoherenceConfig(), n_max=30, initial_site=(-10, 0))

        assert transport.method == "pure"
        assert len(transport.steps) == 31
        assert transport.band_population[0] == pytest.approx(1.0)
        assert np.all((transport.band_population >= 0) & (transport.band_population <= 1 + 1e-12))
        assert np.all((transport.lower_ratio >= 0) & (transport.lower_ratio <= 1 + 1e-12))
        assert transport.perimeter == pytest.approx(shape.perimeter)
        assert transport.plateau(0, 0) == pytest.approx(1.0)
