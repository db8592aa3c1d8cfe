import json
from enum import Enum
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigurationException
from app.core.validation import InputValidator
from app.models.lattice import Boundary, LatticeGeometry, Spin

Angle = Annotated[float, BeforeValidator(InputValidator.parse_angle)]
SpinLabel = Annotated[int, BeforeValidator(InputValidator.parse_spin)]


class StrictModel(BaseModel):
    """Scenario blocks reject unknown keys."""
    model_config = ConfigDict(extra='forbid')


class AnalysisKind(str, Enum):
    EVOLUTION = "evolution"
    BLOCH_BANDS = "bloch_bands"
    PHASE_DIAGRAM_1D = "phase_diagram_1d"
    GAP_SCAN_2D = "gap_scan_2d"
    STRIP_SPECTRUM = "strip_spectrum"
    EDGE_DECAY = "edge_decay"
    DROPLET_TRANSPORT = "droplet_transport"
    EDGE_SIZE_SWEEP = "edge_size_sweep"


class AnglePairSpec(StrictModel):
    theta1: Angle = Field(..., description="First coin angle (radians or pi expression)", examples=["pi/5"])
    theta2: Angle = Field(..., description="Second coin angle (radians or pi expression)", examples=["4*pi/5"])

    def to_tuple(self) -> Tuple[float, float]:
        return self.theta1, self.theta2


class AngleRange(StrictModel):
    start: Angle
    stop: Angle
    num: int = Field(..., ge=1, le=4096)


class OpticsSpec(StrictModel):
    """Either a named setup, a target Abbe ratio, or explicit optics."""

    setup: Optional[Literal["one_d", "two_d"]] = None
    abbe_ratio: Optional[float] = Field(None, gt=0, description="Target R_A / a")
    numerical_aperture: Optional[float] = Field(None, gt=0, le=1)
    wavelength: float = Field(894.0, gt=0, description="Coin-light wavelength in nm")
    lattice_constant: float = Field(433.0, gt=0, description="Lattice constant in nm")

    @model_validator(mode='after')
    def exactly_one_source(self):
        chosen = [self.setup is not None, self.abbe_ratio is not None, self.numerical_aperture is not None]
        if sum(chosen) != 1:
            raise ValueError("optics needs exactly one of 'setup', 'abbe_ratio' or 'numerical_aperture'")
        return self


class GeometrySpec(StrictModel):
    extent: List[int] = Field(..., min_length=1, max_length=2, description="Sites per axis")
    boundary: Boundary = Field(default=Boundary.PERIODIC)

    @field_validator('extent')
    @classmethod
    def validate_extent(cls, v):
        if any(n < 2 for n in v):
            raise ValueError(f"every extent must be at least 2, got {v}")
        return v

    @property
    def dimension(self) -> int:
        return len(self.extent)

    def to_geometry(self) -> LatticeGeometry:
        return LatticeGeometry(dimension=self.dimension, extent=tuple(self.extent),
                               boundary=(self.boundary,) * self.dimension)


class HomogeneousFieldSpec(StrictModel):
    kind: Literal["homogeneous"]
    theta1: Angle
    theta2: Angle


class WallFieldSpec(StrictModel):
    kind: Literal["wall_1d"]
    left: AnglePairSpec
    right: AnglePairSpec
    optics: OpticsSpec


class DropletSpec(StrictModel):
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = Field(14.0, gt=0)
    apex_distance: float = Field(24.0, gt=0)

    @model_validator(mode='after')
    def apex_outside_disc(self):
        if self.apex_distance <= self.radius:
            raise ValueError("apex_distance must exceed the radius")
        return self


class DropletFieldSpec(StrictModel):
    kind: Literal["droplet"]
    inside: AnglePairSpec
    outside: AnglePairSpec
    optics: OpticsSpec
    shape: DropletSpec = Field(default_factory=DropletSpec)
    supersampling: int = Field(8, ge=2, le=32)

    @field_validator('supersampling')
    @classmethod
    def validate_supersampling(cls, v):
        if v % 2:
            raise ValueError("supersampling must be even")
        return v


FieldSpec = Annotated[Union[HomogeneousFieldSpec, WallFieldSpec, DropletFieldSpec], Field(discriminator='kind')]


class EdgeStateRef(StrictModel):
    gap: Literal["0", "pi"] = "0"
    wall: float = 0.0


class InitialStateSpec(StrictModel):
    site: Optional[List[int]] = None
    spin: Optional[SpinLabel] = None
    edge_state: Optional[EdgeStateRef] = None

    @model_validator(mode='after')
    def site_or_edge(self):
        if (self.edge_state is None) == (self.site is None):
            raise ValueError("initial_state needs either 'site' (with 'spin') or 'edge_state'")
        if self.site is not None and self.spin is None:
            raise ValueError("initial_state with a 'site' needs a 'spin'")
        return self

    @property
    def spin_value(self) -> Spin:
        return Spin(self.spin)


class DecoherenceSpec(StrictModel):
    channel: Literal["none", "spin", "position"] = "none"
    probability: float = Field(0.0, ge=0.0, le=1.0)
    trajectories: int = Field(1000, ge=1)
    method: Literal["auto", "dense", "trajectories"] = "auto"
    kraus_per_primitive: bool = False


class RegionSpec(StrictModel):
    kind: Literal["sites", "box", "droplet_band", "droplet_lower"]
    name: str = "region"
    sites: Optional[List[List[int]]] = None
    lower: Optional[List[int]] = None
    upper: Optional[List[int]] = None

    @model_validator(mode='after')
    def required_members(self):
        if self.kind == "sites" and not self.sites:
            raise ValueError("a 'sites' region needs a non-empty 'sites' list")
        if self.kind == "box" and (self.lower is None or self.upper is None):
            raise ValueError("a 'box' region needs 'lower' and 'upper' corners")
        return self


class ObserverSpec(StrictModel):
    kind: Literal["distribution", "site_probability", "region_probability", "edge_overlap"]
    name: Optional[str] = None
    interval: int = Field(1, ge=1)
    site: Optional[List[int]] = None
    region: Optional[RegionSpec] = None

    @model_validator(mode='after')
    def required_members(self):
        if self.kind == "site_probability" and self.site is None:
            raise ValueError("a 'site_probability' observer needs a 'site'")
        if self.kind == "region_probability" and self.region is None:
            raise ValueError("a 'region_probability' observer needs a 'region'")
        return self


class EvolutionAnalysis(StrictModel):
    kind: Literal["evolution"]
    snapshot_final_state: bool = False


class BlochBandsAnalysis(StrictModel):
    kind: Literal["bloch_bands"]
    angles: AnglePairSpec
    k_points: int = Field(256, ge=64)


class PhaseDiagramAnalysis(StrictModel):
    kind: Literal["phase_diagram_1d"]
    theta1: AngleRange
    theta2: AngleRange
    k_points: int = Field(128, ge=64)


class SegmentSpec(StrictModel):
    start: AnglePairSpec
    end: AnglePairSpec
    samples: int = Field(41, ge=2)


class GapScanAnalysis(StrictModel):
    kind: Literal["gap_scan_2d"]
    theta1: AngleRange
    theta2: AngleRange
    k_points: int = Field(64, ge=64)
    segment: Optional[SegmentSpec] = None


class StripAnalysis(StrictModel):
    kind: Literal["strip_spectrum"]
    inside: AnglePairSpec
    outside: AnglePairSpec
    y_extent: int = Field(100, ge=4)
    inner_width: int = Field(40, ge=1)
    kx_points: int = Field(256, ge=8)
    optics: Optional[OpticsSpec] = None

    @model_validator(mode='after')
    def inner_fits(self):
        if self.inner_width >= self.y_extent:
            raise ValueError("inner_width must be smaller than y_extent")
        return self


class EdgeDecayAnalysis(StrictModel):
    kind: Literal["edge_decay"]
    channel: Literal["spin", "position"] = "spin"
    probabilities: List[float] = Field(..., min_length=1)
    n_max: int = Field(100, ge=2)
    fit_window: Tuple[int, int] = (5, 50)
    gap: Literal["0", "pi"] = "0"
    wall: float = 0.0
    kraus_per_primitive: bool = False

    @field_validator('probabilities')
    @classmethod
    def validate_probabilities(cls, v):
        return [InputValidator.validate_probability(p, "decay probability") for p in v]


class DropletAnalysis(StrictModel):
    kind: Literal["droplet_transport"]
    band: Tuple[float, float] = (0.05, 0.95)
    dilation: int = Field(3, ge=0)
    plateau_window: Tuple[int, int] = (200, 400)


class SizeSweepAnalysis(StrictModel):
    kind: Literal["edge_size_sweep"]
    ratios: List[float] = Field(..., min_length=1, description="Values of a / R_A")
    sites: int = Field(120, ge=82)

    @field_validator('ratios')
    @classmethod
    def positive_ratios(cls, v):
        if any(r <= 0 for r in v):
            raise ValueError("ratios must be positive")
        return v


AnalysisSpec = Annotated[
    Union[EvolutionAnalysis, BlochBandsAnalysis, PhaseDiagramAnalysis, GapScanAnalysis, StripAnalysis,
          EdgeDecayAnalysis, DropletAnalysis, SizeSweepAnalysis],
    Field(discriminator='kind')
]

# protocols and the lattice dimension they need
PROTOCOL_DIMENSIONS = {
    "split_step_1d": 1,
    "frame_prime": 1,
    "frame_double_prime": 1,
    "sigma_z_frame": 1,
    "walk_2d": 2,
}

_NEEDS_LATTICE = {AnalysisKind.EVOLUTION, AnalysisKind.EDGE_DECAY, AnalysisKind.DROPLET_TRANSPORT}


class ScenarioConfig(StrictModel):
    """A fully resolved simulation plan."""

    name: str = Field(..., min_length=1)
    description: str = ""
    analysis: AnalysisSpec
    geometry: Optional[GeometrySpec] = None
    field: Optional[FieldSpec] = None
    protocol: Literal["split_step_1d", "frame_prime", "frame_double_prime", "sigma_z_frame", "walk_2d"] = \
        "split_step_1d"
    initial_state: Optional[InitialStateSpec] = None
    decoherence: DecoherenceSpec = Field(default_factory=DecoherenceSpec)
    steps: int = Field(0, ge=0)
    observers: List[ObserverSpec] = Field(default_factory=list)
    output_dir: Optional[str] = None
    seed: int = Field(0, ge=0)

    @property
    def analysis_kind(self) -> AnalysisKind:
        return AnalysisKind(self.analysis.kind)

    @model_validator(mode='after')
    def consistent_plan(self):
        kind = self.analysis_kind
        if kind in _NEEDS_LATTICE:
            if self.geometry is None or self.field is None:
                raise ValueError(f"analysis '{kind.value}' needs 'geometry' and 'field' blocks")
            if PROTOCOL_DIMENSIONS[self.protocol] != self.geometry.dimension:
                raise ValueError(f"protocol '{self.protocol}' does not match a {self.geometry.dimension}D lattice")
            field_dimension = 2 if self.field.kind == "droplet" else (1 if self.field.kind == "wall_1d" else None)
            if field_dimension is not None and field_dimension != self.geometry.dimension:
                raise ValueError(f"field '{self.field.kind}' needs a {field_dimension}D lattice")
        if kind in (AnalysisKind.EVOLUTION, AnalysisKind.DROPLET_TRANSPORT):
            if self.initial_state is None:
                raise ValueError(f"analysis '{kind.value}' needs an 'initial_state'")
            if self.initial_state.site is not None and len(self.initial_state.site) != self.geometry.dimension:
                raise ValueError("initial_state.site has the wrong dimension")
        if kind is AnalysisKind.EDGE_DECAY and self.field.kind != "wall_1d":
            raise ValueError("edge_decay needs a 'wall_1d' field")
        if kind is AnalysisKind.DROPLET_TRANSPORT and self.field.kind != "droplet":
            raise ValueError("droplet_transport needs a 'droplet' field")
        if self.initial_state is not None and self.initial_state.edge_state is not None:
            if self.field is None or self.field.kind != "wall_1d":
                raise ValueError("an edge-state initial state needs a 'wall_1d' field")
        for observer in self.observers:
            if observer.kind == "edge_overlap" and (self.field is None or self.field.kind != "wall_1d"):
                raise ValueError("'edge_overlap' observers need a 'wall_1d' field")
            if observer.region is not None and observer.region.kind.startswith("droplet") and \
                    (self.field is None or self.field.kind != "droplet"):
                raise ValueError("droplet regions need a 'droplet' field")
        if self.decoherence.method == "trajectories" and self.geometry is not None and \
                self.geometry.boundary is not Boundary.PERIODIC:
            raise ValueError("trajectory unraveling needs periodic boundaries")
        return self


def parse_scenario(text: str, source: str = "<config>") -> ScenarioConfig:
    """
    Parse and validate a JSON scenario.

    Raises:
        ConfigurationException: with the line of the offending key when it can be located
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationException(f"Invalid JSON: {e.msg}", source=source, line=e.lineno, original_exception=e)
    if not isinstance(data, dict):
        raise ConfigurationException("Scenario must be a JSON object", source=source, line=1)

    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = tuple(first.get('loc', ()))
        line = InputValidator.locate_config_line(text, location)
        key = '.'.join(str(part) for part in location) or None
        raise ConfigurationException(first.get('msg', str(e)), source=source, line=line, key=key,
                                     original_exception=e)


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigurationException(f"Cannot read scenario file: {e}", source=str(path), original_exception=e)
    return parse_scenario(text, source=str(path))
