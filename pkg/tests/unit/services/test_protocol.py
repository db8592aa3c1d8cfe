"""
Unit tests for walk primitives and step protocols.
"""

import math
import sys

import numpy as np
import pytest

from app.core.exceptions import GeometryMismatchException
from app.models.lattice import Boundary, LatticeGeometry, Spin, SpinorState
from app.services.coin_field import CoinField, homogeneous_field
from app.services.observables import position_distribution
from app.services.protocol import (
    ChiralFrame,
    Coin,
    CoinComponent,
    ProtocolName,
    ShiftUp,
    WalkProtocol,
    apply_coin,
    apply_shift,
    chiral_symmetry_error,
    classical_transition_matrix,
    coin_matrix,
    frame_operator,
    get_protocol,
    light_cone_steps,
    primitive_matrices,
    step,
    step_matrix,
    step_with_leak,
    unitarity_error,
)


@pytest.fixture
def random_field():
    def make(geometry, seed=0):
        rng = np.random.default_rng(seed)
        return CoinField(geometry, rng.uniform(-math.pi, math.pi, geometry.extent),
                         rng.uniform(-math.pi, math.pi, geometry.extent))
    return make


def _same_spectrum(a, b, tolerance=1e-8):
    eig_a = np.linalg.eigvals(a)
    eig_b = np.linalg.eigvals(b)
    return all(np.min(np.abs(eig_b - value)) < tolerance for value in eig_a)


class TestCoin:
    """Test cases for the coin rotation."""

    def test_coin_matrix(self):
        """Test exp(-i sigma_2 theta/2) entries and unitarity."""
        matrix = coin_matrix(math.pi / 2)
        h = 1 / math.sqrt(2)

        assert matrix == pytest.approx(np.array([[h, -h], [h, h]]))
        assert np.allclose(matrix.conj().T @ matrix, np.eye(2))

    def test_zero_angle_is_identity(self):
        """Test that theta = 0 leaves the state unchanged."""
        assert np.allclose(coin_matrix(0.0), np.eye(2))

    def test_apply_coin_uses_field_component(self, ring, localized_down):
        """Test that apply_coin rotates each site by the chosen angle."""
        field = homogeneous_field(ring, math.pi / 2, 0.0)
        rotated = apply_coin(localized_down, field, 'theta1')
        site = ring.site_index((0,))

        assert rotated.amplitudes[site] == pytest.approx([-1 / math.sqrt(2), 1 / math.sqrt(2)])
        assert apply_coin(localized_down, field, 'theta2').amplitudes[site] == pytest.approx([0, 1])

    def test_apply_coin_with_scale(self, ring, localized_down):
        """Test that a half scale equals a coin of half the angle."""
        field = homogeneous_field(ring, math.pi, 0.0)
        half = apply_coin(localized_down, field, 'theta1', scale='1/2')
        expected = coin_matrix(math.pi / 2) @ np.array([0, 1])

        assert half.amplitudes[ring.site_index((0,))] == pytest.approx(expected)

    def test_fixed_coin_ignores_field(self, ring):
        """Test that fixed coins use their own angle."""
        coin = Coin(CoinComponent.FIXED, angle=0.4)

        assert np.all(coin.angles(homogeneous_field(ring, 1.0, 2.0)) == 0.4)


class TestShift:
    """Test cases for spin-dependent shifts."""

    def test_up_moves_right(self, ring):
        """Test that the up component moves to +x."""
        state = SpinorState.localized(ring, (0,), Spin.UP)
        shifted = apply_shift(state, 0, Spin.UP)

        assert shifted.amplitudes[ring.site_index((1,)) + (0,)] == 1.0

    def test_down_moves_left(self, localized_down, ring):
        """Test that the down component moves to -x."""
        shifted = apply_shift(localized_down, 0, Spin.DOWN)

        assert shifted.amplitudes[ring.site_index((-1,)) + (1,)] == 1.0

    def test_other_component_untouched(self, localized_down):
        """Test that shifting up leaves the down component in place."""
        shifted = apply_shift(localized_down, 0, Spin.UP)

        assert np.array_equal(shifted.amplitudes, localized_down.amplitudes)

    def test_periodic_wrap(self, ring):
        """Test wrapping around the ring."""
        state = SpinorState.localized(ring, (10,), Spin.UP)

        assert apply_shift(state, 0, Spin.UP).amplitudes[ring.site_index((-10,)) + (0,)] == 1.0

    def test_2d_shift_axes(self, plane):
        """Test shifts along y in two dimensions."""
        state = SpinorState.localized(plane, (0, 0), Spin.DOWN)
        shifted = apply_shift(state, 1, Spin.DOWN)

        assert shifted.amplitudes[plane.site_index((0, -1)) + (1,)] == 1.0

    def test_bad_axis(self, localized_down):
        """Test that shifts beyond the lattice dimension are rejected."""
        with pytest.raises(GeometryMismatchException):
            apply_shift(localized_down, 1, Spin.UP)

    def test_absorbing_guard_leaks(self):
        """Test that amplitude leaving a guarded line is absorbed and reported."""
        geometry = LatticeGeometry.line(5, Boundary.ABSORBING_GUARD)
        state = SpinorState.localized(geometry, (2,), Spin.UP)
        protocol = WalkProtocol("shift", 1, (ShiftUp(0),))
        field = homogeneous_field(geometry, 0.0, 0.0)

        shifted, leaked = step_with_leak(state, protocol, field)

        assert leaked == pytest.approx(1.0)
        assert shifted.norm() == 0.0


class TestProtocols:
    """Test cases for protocol definitions and stepping."""

    def test_registry(self):
        """Test that every protocol name resolves."""
        for name in ProtocolName:
            assert get_protocol(name).name == name.value
        assert get_protocol("walk_2d").dimension == 2

    def test_unknown_protocol(self):
        """Test that unknown names are rejected."""
        with pytest.raises(ValueError, match="Unknown protocol"):
            get_protocol("triple_step")

    def test_shift_axis_beyond_dimension(self):
        """Test that a 1D protocol cannot shift along y."""
        with pytest.raises(GeometryMismatchException):
            WalkProtocol("bad", 1, (ShiftUp(1),))

    def test_dimension_mismatch(self, plane, split_step):
        """Test that a 1D protocol refuses a 2D field."""
        with pytest.raises(GeometryMismatchException):
            step(SpinorState.localized(plane, (0, 0), Spin.UP), split_step,
                 homogeneous_field(plane, 1.0, 1.0))

    def test_hadamard_first_step(self, localized_down, split_step, hadamard_field, ring):
        """Test that one Hadamard step splits the walker evenly to x = +-1."""
        distribution = position_distribution(step(localized_down, split_step, hadamard_field))

        assert distribution[ring.site_index((1,))] == pytest.approx(0.5)
        assert distribution[ring.site_index((-1,))] == pytest.approx(0.5)

    def test_hadamard_third_step(self, localized_down, split_step, hadamard_field, ring):
        """Test the asymmetric Hadamard distribution after three steps."""
        distribution = position_distribution(step(localized_down, split_step, hadamard_field, 3))
        probabilities = {x: distribution[ring.site_index((x,))] for x in (-3, -1, 1, 3)}

        assert sum(probabilities.values()) == pytest.approx(1.0)
        assert probabilities == pytest.approx({-3: 0.125, -1: 0.625, 1: 0.125, 3: 0.125})

    def test_negative_steps(self, localized_down, split_step, hadamard_field):
        """Test that negative step counts are rejected."""
        with pytest.raises(ValueError):
            step(localized_down, split_step, hadamard_field, -1)

    def test_zero_steps(self, localized_down, split_step, hadamard_field):
        """Test that zero steps return the same state."""
        assert np.array_equal(step(localized_down, split_step, hadamard_field, 0).amplitudes,
                              localized_down.amplitudes)

    def test_norm_is_preserved(self, ring, split_step, random_field, random_state):
        """Test norm conservation over many steps of an inhomogeneous walk."""
        state = step(random_state(ring, seed=2), split_step, random_field(ring), 50)

        assert state.norm() == pytest.approx(1.0, abs=1e-12)

    def test_2d_walk_norm(self, plane, walk_2d, random_field, random_state):
        """Test norm conservation in two dimensions."""
        state = step(random_state(plane), walk_2d, random_field(plane, seed=4), 20)

        assert state.norm() == pytest.approx(1.0, abs=1e-12)


class TestStepMatrix:
    """Test cases for the sparse step operator."""

    @pytest.mark.parametrize("name", list(ProtocolName))
    def test_unitary(self, name, ring, plane, random_field):
        """Test that every protocol is unitary on a periodic lattice."""
        protocol = get_protocol(name)
        geometry = plane if protocol.dimension == 2 else ring

        assert unitarity_error(protocol, random_field(geometry)) < 1e-12

    def test_matches_vector_stepping(self, ring, split_step, random_field, random_state):
        """Test that the sparse matrix and the permutation kernel agree."""
        field = random_field(ring, seed=5)
        state = random_state(ring, seed=6)

        expected = step(state, split_step, field).vector
        assert step_matrix(split_step, field) @ state.vector == pytest.approx(expected)

    def test_2d_matches_vector_stepping(self, plane, walk_2d, random_field, random_state):
        """Test the 2D step operator against the kernel."""
        field = random_field(plane, seed=7)
        state = random_state(plane, seed=8)

        assert step_matrix(walk_2d, field) @ state.vector == pytest.approx(step(state, walk_2d, field).vector)

    def test_primitive_product(self, ring, split_step, random_field):
        """Test that the primitives multiply to the step operator."""
        field = random_field(ring)
        product = np.eye(ring.basis_size)
        for matrix in primitive_matrices(split_step, field):
            product = matrix.toarray() @ product

        assert product == pytest.approx(step_matrix(split_step, field).toarray())

    def test_guarded_step_is_not_unitary(self, split_step):
        """Test that absorbing boundaries make the step sub-unitary."""
        geometry = LatticeGeometry.line(11, Boundary.ABSORBING_GUARD)

        assert unitarity_error(split_step, homogeneous_field(geometry, 0.5, 0.5)) > 0.1


class TestChiralFrames:
    """Test cases for the chiral time frames."""

    @pytest.mark.parametrize("frame", list(ChiralFrame))
    def test_chiral_symmetry_inhomogeneous(self, frame, ring, random_field):
        """Test Gamma W Gamma^dagger = W^dagger for site-dependent angles."""
        assert chiral_symmetry_error(frame, random_field(ring, seed=11)) < 1e-12

    def test_split_step_is_not_chiral(self, ring, split_step, random_field):
        """Test that the plain split step lacks the sigma_1 symmetry."""
        field = random_field(ring, seed=12)
        dense = step_matrix(split_step, field).toarray()
        gamma = np.kron(np.eye(ring.site_count), ChiralFrame.PRIME.gamma)

        assert np.max(np.abs(gamma @ dense @ gamma.conj().T - dense.conj().T)) > 1e-3

    @pytest.mark.parametrize("frame", list(ChiralFrame))
    def test_frames_share_the_split_step_spectrum(self, frame, ring, split_step):
        """Test that the frames are unitarily equivalent to the split step."""
        field = homogeneous_field(ring, 0.7, -1.1)

        assert _same_spectrum(step_matrix(frame_operator(frame, field), field).toarray(),
                              step_matrix(split_step, field).toarray())

    def test_frames_are_1d_only(self, plane):
        """Test that chiral frames reject 2D fields."""
        with pytest.raises(GeometryMismatchException):
            frame_operator(ChiralFrame.PRIME, homogeneous_field(plane, 1.0, 1.0))


class TestClassicalTransitionMatrix:
    """Test cases for the classical transition matrix."""

    def test_columns_are_stochastic(self, ring, split_step, random_field):
        """Test that |W|^2 has unit column sums for a unitary W."""
        matrix = classical_transition_matrix(split_step, random_field(ring))

        assert matrix.sum(axis=0) == pytest.approx(np.ones(ring.basis_size))
        assert np.all(matrix >= 0)

    def test_deterministic_shift(self, ring, split_step):
        """Test the zero-coin walk: up moves right, down moves left."""
        matrix = classical_transition_matrix(split_step, homogeneous_field(ring, 0.0, 0.0))
        source = 2 * (ring.site_count // 2)

        assert matrix[source + 2, source] == 1.0
        assert matrix[source - 1, source + 1] == 1.0


class TestLightCone:
    """Test cases for light_cone_steps."""

    def test_ring(self, ring, split_step):
        """Test half the circumference of a ring."""
        assert light_cone_steps(ring, split_step) == 10

    def test_plane(self, walk_2d):
        """Test the smaller periodic axis of a rectangle."""
        assert light_cone_steps(LatticeGeometry.plane(30, 12), walk_2d) == 6

    def test_guarded_axes_do_not_wrap(self, split_step):
        """Test that guarded lattices never wrap."""
        geometry = LatticeGeometry.line(21, Boundary.ABSORBING_GUARD)

        assert light_cone_steps(geometry, split_step) == sys.maxsize
