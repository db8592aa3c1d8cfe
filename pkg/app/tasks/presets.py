"""
Named scenario presets.

Each preset is a plain JSON-compatible dictionary so it can be written next to
its results and re-run with ``run``. ``get_preset`` validates it into a
ScenarioConfig.
"""

import copy
from typing import Dict, List, Optional, Tuple

from app.core.exceptions import ConfigurationException
from app.models.scenario import ScenarioConfig

# bulk angle pairs
WALL_LEFT = {"theta1": "-pi/2", "theta2": "pi/4"}
WALL_RIGHT = {"theta1": "-pi/2", "theta2": "3*pi/4"}
ISLAND_INSIDE = {"theta1": "pi/5", "theta2": "4*pi/5"}
ISLAND_OUTSIDE = {"theta1": "4*pi/5", "theta2": "pi/5"}

_WALL_FIELD = {"kind": "wall_1d", "left": WALL_LEFT, "right": WALL_RIGHT, "optics": {"setup": "two_d"}}
_DROPLET_FIELD = {
    "kind": "droplet",
    "inside": ISLAND_INSIDE,
    "outside": ISLAND_OUTSIDE,
    "optics": {"setup": "two_d"},
    "shape": {"center": [0.0, 0.0], "radius": 14.0, "apex_distance": 24.0},
}
_WALL_OBSERVERS = [
    {"kind": "distribution", "interval": 10},
    {"kind": "site_probability", "name": "P(x=0)", "site": [0]},
    {"kind": "edge_overlap", "name": "edge_population"},
]

PRESETS: Dict[str, Tuple[str, dict]] = {
    "fig1": (
        "Bloch bands, eigenspinors and frame windings of the Hadamard walk",
        {
            "name": "fig1",
            "analysis": {"kind": "bloch_bands", "angles": {"theta1": "pi/2", "theta2": 0}, "k_points": 256},
        },
    ),
    "fig2a": (
        "Phase diagram (nu_0, nu_pi) of the 1D split-step walk",
        {
            "name": "fig2a",
            "analysis": {
                "kind": "phase_diagram_1d",
                "theta1": {"start": "-pi", "stop": "pi", "num": 41},
                "theta2": {"start": "-pi", "stop": "pi", "num": 41},
                "k_points": 128,
            },
        },
    ),
    "fig2b": (
        "Gap map of the 2D walk and the gap closing between the island angle pairs",
        {
            "name": "fig2b",
            "analysis": {
                "kind": "gap_scan_2d",
                "theta1": {"start": 0, "stop": "pi", "num": 33},
                "theta2": {"start": 0, "stop": "pi", "num": 33},
                "k_points": 64,
                "segment": {"start": ISLAND_INSIDE, "end": ISLAND_OUTSIDE, "samples": 41},
            },
        },
    ),
    "fig3b": (
        "Decoherence-free walk from the domain wall of a 201-site ring",
        {
            "name": "fig3b",
            "analysis": {"kind": "evolution"},
            "geometry": {"extent": [201]},
            "field": _WALL_FIELD,
            "protocol": "split_step_1d",
            "initial_state": {"site": [0], "spin": "down"},
            "steps": 100,
            "observers": _WALL_OBSERVERS,
        },
    ),
    "fig3c": (
        "Domain-wall walk with stroboscopic spin decoherence",
        {
            "name": "fig3c",
            "analysis": {"kind": "evolution"},
            "geometry": {"extent": [201]},
            "field": _WALL_FIELD,
            "protocol": "split_step_1d",
            "initial_state": {"site": [0], "spin": "down"},
            "decoherence": {"channel": "spin", "probability": 0.02, "method": "dense"},
            "steps": 100,
            "observers": _WALL_OBSERVERS,
        },
    ),
    "fig4": (
        "Strip spectrum with two walls between the island angle pairs",
        {
            "name": "fig4",
            "analysis": {
                "kind": "strip_spectrum",
                "inside": ISLAND_INSIDE,
                "outside": ISLAND_OUTSIDE,
                "y_extent": 100,
                "inner_width": 40,
                "kx_points": 256,
            },
        },
    ),
    "fig5a": (
        "Edge transport around the droplet island without decoherence",
        {
            "name": "fig5a",
            "analysis": {"kind": "droplet_transport", "band": [0.05, 0.95], "dilation": 3},
            "geometry": {"extent": [64, 64]},
            "field": _DROPLET_FIELD,
            "protocol": "walk_2d",
            "initial_state": {"site": [-15, 0], "spin": "down"},
            "steps": 400,
        },
    ),
    "fig5b": (
        "Edge transport around the droplet island with spin decoherence (trajectories)",
        {
            "name": "fig5b",
            "analysis": {"kind": "droplet_transport", "band": [0.05, 0.95], "dilation": 3},
            "geometry": {"extent": [64, 64]},
            "field": _DROPLET_FIELD,
            "protocol": "walk_2d",
            "initial_state": {"site": [-15, 0], "spin": "down"},
            "decoherence": {"channel": "spin", "probability": 0.05, "trajectories": 2000,
                            "method": "trajectories"},
            "steps": 400,
            "seed": 2017,
        },
    ),
    "fig6": (
        "Edge-state population decay against the predicted rate",
        {
            "name": "fig6",
            "analysis": {
                "kind": "edge_decay",
                "channel": "spin",
                "probabilities": [0.01, 0.02, 0.05, 0.5],
                "n_max": 100,
                "fit_window": [5, 50],
            },
            "geometry": {"extent": [201]},
            "field": _WALL_FIELD,
            "protocol": "split_step_1d",
        },
    ),
    "fig7": (
        "Edge-state size and initial overlap versus optical resolution",
        {
            "name": "fig7",
            "analysis": {"kind": "edge_size_sweep", "ratios": [0.2, 0.5, 1.0, 1.25, 2.0], "sites": 120},
        },
    ),
}


def list_presets() -> List[Tuple[str, str]]:
    """(name, one-line description) for every preset."""
    return [(name, description) for name, (description, _) in PRESETS.items()]


def preset_data(name: str, seed: Optional[int] = None, output_dir: Optional[str] = None) -> dict:
    if name not in PRESETS:
        raise ConfigurationException(f"Unknown preset '{name}'; available: {', '.join(PRESETS)}", key=name)
    data = copy.deepcopy(PRESETS[name][1])
    data.setdefault("description", PRESETS[name][0])
    if seed is not None:
        data["seed"] = seed
    if output_dir is not None:
        data["output_dir"] = output_dir
    return data


def get_preset(name: str, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ScenarioConfig:
    return ScenarioConfig.model_validate(preset_data(name, seed, output_dir))
