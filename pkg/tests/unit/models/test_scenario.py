"""
Unit tests for the scenario schema.

Tests validation of scenario files, discriminated field and analysis blocks,
and line-anchored diagnostics.
"""

import json
import math

import pytest

from app.core.exceptions import ConfigurationException
from app.models.lattice import Boundary, Spin
from app.models.scenario import (
    AnalysisKind,
    OpticsSpec,
    ScenarioConfig,
    load_scenario,
    parse_scenario,
)


def evolution_scenario(**overrides):
    data = {
        "name": "wall",
        "analysis": {"kind": "evolution"},
        "geometry": {"extent": [41]},
        "field": {
            "kind": "wall_1d",
            "left": {"theta1": "-pi/2", "theta2": "pi/4"},
            "right": {"theta1": "-pi/2", "theta2": "3*pi/4"},
            "optics": {"setup": "one_d"},
        },
        "initial_state": {"site": [0], "spin": "down"},
        "steps": 10,
    }
    data.update(overrides)
    return data


class TestScenarioConfig:
    """Test cases for ScenarioConfig validation."""

    def test_minimal_evolution(self):
        """Test a complete evolution scenario and its defaults."""
        config = ScenarioConfig.model_validate(evolution_scenario())

        assert config.analysis_kind is AnalysisKind.EVOLUTION
        assert config.protocol == "split_step_1d"
        assert config.geometry.to_geometry().extent == (41,)
        assert config.geometry.boundary is Boundary.PERIODIC
        assert config.field.left.theta2 == pytest.approx(math.pi / 4)
        assert config.initial_state.spin_value is Spin.DOWN
        assert config.decoherence.channel == "none"
        assert config.observers == []
        assert config.seed == 0

    def test_unknown_keys_are_errors(self):
        """Test that extra keys are rejected, not ignored."""
        with pytest.raises(ValueError):
            ScenarioConfig.model_validate(evolution_scenario(colour="blue"))

    def test_unknown_nested_keys_are_errors(self):
        """Test that extra keys inside blocks are rejected."""
        data = evolution_scenario()
        data["decoherence"] = {"channel": "spin", "probability": 0.1, "strength": 2}
        with pytest.raises(ValueError):
            ScenarioConfig.model_validate(data)

    def test_protocol_dimension_must_match(self):
        """Test that a 2D protocol on a 1D lattice is rejected."""
        with pytest.raises(ValueError, match="does not match"):
            ScenarioConfig.model_validate(evolution_scenario(protocol="walk_2d"))

    def test_lattice_analysis_needs_field(self):
        """Test that evolution without a field block is rejected."""
        data = evolution_scenario()
        del data["field"]
        with pytest.raises(ValueError, match="needs 'geometry' and 'field'"):
            ScenarioConfig.model_validate(data)

    def test_initial_site_dimension(self):
        """Test that the initial site must match the lattice dimension."""
        with pytest.raises(ValueError, match="wrong dimension"):
            ScenarioConfig.model_validate(evolution_scenario(initial_state={"site": [0, 0], "spin": "up"}))

    @pytest.mark.parametrize("initial_state", [
        {},
        {"site": [0]},
        {"site": [0], "spin": "up", "edge_state": {"gap": "0"}},
    ])
    def test_initial_state_forms(self, initial_state):
        """Test that exactly one of site+spin or edge_state is accepted."""
        with pytest.raises(ValueError):
            ScenarioConfig.model_validate(evolution_scenario(initial_state=initial_state))

    def test_edge_state_initial_state(self):
        """Test an edge-state initial state on a wall field."""
        config = ScenarioConfig.model_validate(
            evolution_scenario(initial_state={"edge_state": {"gap": "pi", "wall": 0}}))

        assert config.initial_state.edge_state.gap == "pi"

    def test_edge_overlap_needs_wall_field(self):
        """Test that edge_overlap observers need a wall field."""
        data = evolution_scenario(field={"kind": "homogeneous", "theta1": "pi/2", "theta2": 0},
                                  observers=[{"kind": "edge_overlap"}])
        with pytest.raises(ValueError, match="edge_overlap"):
            ScenarioConfig.model_validate(data)

    def test_observer_requirements(self):
        """Test that site and region observers need their members."""
        with pytest.raises(ValueError):
            ScenarioConfig.model_validate(evolution_scenario(observers=[{"kind": "site_probability"}]))
        with pytest.raises(ValueError):
            ScenarioConfig.model_validate(evolution_scenario(observers=[{"kind": "distribution", "interval": 0}]))

    def test_trajectories_need_periodic_boundaries(self):
        """Test that trajectory runs on guarded lattices are rejected."""
        data = evolution_scenario(geometry={"extent": [41], "boundary": "absorbing-guard"},
                                  decoherence={"channel": "spin", "probability": 0.1, "method": "trajectories"})
        with pytest.raises(ValueError, match="periodic"):
            ScenarioConfig.model_validate(data)

    def test_probability_range(self):
        """Test that probabilities outside [0, 1] are rejected."""
        with pytest.raises(ValueError):
            ScenarioConfig.model_validate(evolution_scenario(decoherence={"channel": "spin", "probability": 1.5}))

    def test_droplet_transport_needs_droplet_field(self):
        """Test the field kind required by droplet transport."""
        data = evolution_scenario(analysis={"kind": "droplet_transport"}, geometry={"extent": [32, 32]},
                                  protocol="walk_2d",
                                  field={"kind": "homogeneous", "theta1": 1.0, "theta2": 2.0},
                                  initial_state={"site": [0, 0], "spin": "up"})
        with pytest.raises(ValueError, match="droplet"):
            ScenarioConfig.model_validate(data)

    def test_analysis_only_scenarios(self):
        """Test analyses that need no lattice."""
        config = ScenarioConfig.model_validate({
            "name": "bands",
            "analysis": {"kind": "bloch_bands", "angles": {"theta1": "pi/2", "theta2": 0}},
        })

        assert config.analysis.k_points == 256
        assert config.geometry is None

    def test_k_points_minimum(self):
        """Test that Brillouin-zone sampling below 64 points is rejected."""
        with pytest.raises(ValueError):
            ScenarioConfig.model_validate({
                "name": "bands",
                "analysis": {"kind": "bloch_bands", "angles": {"theta1": 1, "theta2": 0}, "k_points": 32},
            })

    def test_strip_inner_width(self):
        """Test that the inner domain must fit in the strip."""
        with pytest.raises(ValueError):
            ScenarioConfig.model_validate({
                "name": "strip",
                "analysis": {"kind": "strip_spectrum", "inside": {"theta1": 1, "theta2": 2},
                             "outside": {"theta1": 2, "theta2": 1}, "y_extent": 40, "inner_width": 40},
            })

    def test_droplet_supersampling_must_be_even(self):
        """Test the supersampling factor of droplet fields."""
        data = {
            "name": "island",
            "analysis": {"kind": "droplet_transport"},
            "geometry": {"extent": [32, 32]},
            "protocol": "walk_2d",
            "field": {"kind": "droplet", "inside": {"theta1": 1, "theta2": 2},
                      "outside": {"theta1": 2, "theta2": 1}, "optics": {"setup": "two_d"},
                      "supersampling": 5},
            "initial_state": {"site": [-10, 0], "spin": "down"},
            "steps": 5,
        }
        with pytest.raises(ValueError, match="even"):
            ScenarioConfig.model_validate(data)


class TestOpticsSpec:
    """Test cases for optics blocks."""

    @pytest.mark.parametrize("data", [
        {"setup": "two_d"},
        {"abbe_ratio": 0.8},
        {"numerical_aperture": 0.5, "wavelength": 800},
    ])
    def test_exactly_one_source(self, data):
        """Test accepted optics sources."""
        OpticsSpec.model_validate(data)

    @pytest.mark.parametrize("data", [{}, {"setup": "one_d", "abbe_ratio": 1.0}])
    def test_ambiguous_sources(self, data):
        """Test that zero or several sources are rejected."""
        with pytest.raises(ValueError):
            OpticsSpec.model_validate(data)


class TestParseScenario:
    """Test cases for JSON parsing with line-anchored diagnostics."""

    def test_round_trip(self):
        """Test parsing a valid scenario."""
        config = parse_scenario(json.dumps(evolution_scenario(), indent=2))

        assert config.name == "wall"

    def test_invalid_json_reports_line(self):
        """Test JSON syntax errors carry the line number."""
        text = '{\n  "name": "x",\n  "steps": ,\n}'
        with pytest.raises(ConfigurationException) as excinfo:
            parse_scenario(text, source="bad.json")

        assert excinfo.value.line == 3
        assert str(excinfo.value).startswith("bad.json:3:")

    def test_validation_error_reports_key_line(self):
        """Test that schema errors point at the offending key."""
        data = evolution_scenario(decoherence={"channel": "spin", "probability": 2.0})
        text = json.dumps(data, indent=2)
        expected = text.splitlines().index('    "probability": 2.0') + 1

        with pytest.raises(ConfigurationException) as excinfo:
            parse_scenario(text)

        assert excinfo.value.line == expected
        assert excinfo.value.key == "decoherence.probability"

    def test_non_object(self):
        """Test that a JSON array is rejected."""
        with pytest.raises(ConfigurationException):
            parse_scenario("[1, 2]")

    def test_load_scenario(self, temp_dir):
        """Test loading from a file and a missing file."""
        path = f"{temp_dir}/scenario.json"
        with open(path, "w") as f:
            json.dump(evolution_scenario(), f)

        assert load_scenario(path).steps == 10
        with pytest.raises(ConfigurationException):
            load_scenario(f"{temp_dir}/missing.json")
