"""
Spatial coin-angle landscapes.

A coin field assigns the angle pair (theta1, theta2) to every lattice site.
Boundaries between bulk phases are never sharp in practice: the coin light is
imaged through optics of finite numerical aperture, so the indicator of a
region is blurred by a Gaussian point spread function whose width follows from
the Abbe radius. Angle pairs are interpolated along the straight segment that
joins the inside and outside pairs in the (theta1, theta2) plane.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Protocol, Tuple

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import erf

from app.core.exceptions import GeometryMismatchException
from app.models.lattice import Boundary, LatticeGeometry

logger = logging.getLogger(__name__)

LATTICE_WAVELENGTH_NM = 866.0
COIN_WAVELENGTH_NM = 894.0
ANGLE_WINDOW = 2.0 * math.pi


class AnglePair(NamedTuple):
    theta1: float
    theta2: float


class StripProfile(NamedTuple):
    """y-dependent angles of a strip that is homogeneous along x."""
    theta1: np.ndarray
    theta2: np.ndarray
    walls: Tuple[float, float]
    inside: AnglePair
    outside: AnglePair

    @property
    def y_extent(self) -> int:
        return len(self.theta1)


@dataclass(frozen=True)
class OpticsConfig:
    """Imaging optics of the coin light; lengths in nanometres."""
    numerical_aperture: float
    wavelength: float = COIN_WAVELENGTH_NM
    lattice_constant: float = LATTICE_WAVELENGTH_NM / 2

    def __post_init__(self):
        if not 0.0 < self.numerical_aperture <= 1.0:
            raise ValueError(f"Numerical aperture must lie in (0, 1], got {self.numerical_aperture}")
        if self.wavelength <= 0:
            raise ValueError("Coin wavelength must be positive")
        if self.lattice_constant < 0:
            raise ValueError("Lattice constant cannot be negative")

    @classmethod
    def one_d_setup(cls) -> "OpticsConfig":
        """Moderate-NA objective imaging a 1D lattice (a = lambda_L / 2)."""
        return cls(numerical_aperture=0.22, lattice_constant=LATTICE_WAVELENGTH_NM / 2)

    @classmethod
    def two_d_setup(cls) -> "OpticsConfig":
        """High-NA objective imaging a 2D lattice (a = sqrt(2) lambda_L / 2)."""
        return cls(numerical_aperture=0.92, lattice_constant=math.sqrt(2) * LATTICE_WAVELENGTH_NM / 2)

    @classmethod
    def for_abbe_ratio(cls, ratio: float, numerical_aperture: float = 0.5) -> "OpticsConfig":
        """Optics whose Abbe radius equals ``ratio`` lattice constants."""
        if ratio <= 0:
            raise ValueError(f"Abbe ratio must be positive, got {ratio}")
        return cls(numerical_aperture=numerical_aperture,
                   wavelength=2.0 * numerical_aperture * ratio, lattice_constant=1.0)

    @property
    def abbe_radius(self) -> float:
        return self.wavelength / (2.0 * self.numerical_aperture)

    @property
    def psf_sigma(self) -> float:
        """Standard deviation of the Gaussian PSF (same units as the wavelength)."""
        return math.sqrt(2.0) / math.pi * self.abbe_radius

    @property
    def psf_sigma_sites(self) -> float:
        return self.psf_sigma / self.lattice_constant


@dataclass(frozen=True, eq=False)
class CoinField:
    """
    Per-site coin angles.

    ``indicator`` holds the smoothed inside-fraction s in [0, 1] for fields
    built from a region; it is None for analytic profiles.

    Coin rotations are 4pi-periodic, so angles are stored in the window
    [-2pi, 2pi); values already inside it are kept unchanged.
    """
    geometry: LatticeGeometry
    theta1: np.ndarray
    theta2: np.ndarray
    indicator: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ('theta1', 'theta2', 'indicator'):
            value = getattr(self, name)
            if value is None:
                continue
            array = np.broadcast_to(np.asarray(value, dtype=float), self.geometry.extent).copy()
            if name != 'indicator':
                outside = (array < -ANGLE_WINDOW) | (array >= ANGLE_WINDOW)
                array = np.where(outside, np.mod(array + ANGLE_WINDOW, 2 * ANGLE_WINDOW) - ANGLE_WINDOW, array)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    def component(self, which: str) -> np.ndarray:
        if which == 'theta1':
            return self.theta1
        if which == 'theta2':
            return self.theta2
        raise ValueError(f"Unknown coin component '{which}'")

    def is_homogeneous(self, tolerance: float = 0.0) -> bool:
        return bool(np.ptp(self.theta1) <= tolerance and np.ptp(self.theta2) <= tolerance)

    def angles_at(self, site: Tuple[int, ...]) -> AnglePair:
        index = self.geometry.site_index(site)
        return AnglePair(float(self.theta1[index]), float(self.theta2[index]))

    def require_geometry(self, geometry: LatticeGeometry) -> None:
        if geometry != self.geometry:
            raise GeometryMismatchException(
                "Coin field and state live on different lattices", expected=self.geometry, actual=geometry
            )


class Shape(Protocol):
    """Closed planar region used to build island fields."""

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    @property
    def area(self) -> float: ...


@dataclass(frozen=True)
class DiscShape:
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 12.0

    def contains(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 < self.radius ** 2

    @property
    def area(self) -> float:
        return math.pi * self.radius ** 2 if self.radius > 0 else 0.0

    @property
    def perimeter(self) -> float:
        return 2 * math.pi * self.radius


@dataclass(frozen=True)
class HalfPlaneShape:
    """Points with x < offset (a straight boundary through x = offset)."""
    offset: float = 0.0

    def contains(self, x, y):
        return np.broadcast_to(x < self.offset, np.broadcast(x, y).shape)

    @property
    def area(self) -> float:
        return math.inf


@dataclass(frozen=True)
class DropletShape:
    """
    Disc with a triangular cap whose apex forms a single sharp corner.

    The cap sides are tangent to the circle, so the contour is smooth everywhere
    except at the apex, which sits ``apex_distance`` above the centre.
    """
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 14.0
    apex_distance: float = 24.0

    def __post_init__(self):
        if self.radius > 0 and self.apex_distance <= self.radius:
            raise ValueError("Droplet apex must lie outside the disc")

    @property
    def _half_angle(self) -> float:
        return math.acos(self.radius / self.apex_distance)

    @property
    def _tangent_length(self) -> float:
        return math.sqrt(self.apex_distance ** 2 - self.radius ** 2)

    @property
    def apex(self) -> Tuple[float, float]:
        return (self.center[0], self.center[1] + self.apex_distance)

    def tangent_points(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        phi = self._half_angle
        cx, cy = self.center
        right = (cx + self.radius * math.sin(phi), cy + self.radius * math.cos(phi))
        left = (cx - self.radius * math.sin(phi), cy + self.radius * math.cos(phi))
        return right, left

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.radius <= 0:
            return np.zeros(np.broadcast(x, y).shape, dtype=bool)
        in_disc = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 < self.radius ** 2
        (x1, y1), (x2, y2) = self.tangent_points()
        x3, y3 = self.apex

        def side(ax, ay, bx, by):
            return (bx - ax) * (y - ay) - (by - ay) * (x - ax)

        d1 = side(x1, y1, x2, y2)
        d2 = side(x2, y2, x3, y3)
        d3 = side(x3, y3, x1, y1)
        in_cap = ((d1 > 0) & (d2 > 0) & (d3 > 0)) | ((d1 < 0) & (d2 < 0) & (d3 < 0))
        return in_disc | in_cap

    @property
    def area(self) -> float:
        if self.radius <= 0:
            return 0.0
        r = self.radius
        return math.pi * r ** 2 + r * self._tangent_length - r ** 2 * self._half_angle

    @property
    def perimeter(self) -> float:
        return (2 * math.pi - 2 * self._half_angle) * self.radius + 2 * self._tangent_length

    def contour_points(self, spacing: float = 0.25) -> Tuple[np.ndarray, np.ndarray]:
        """
        Points along the contour and their arc-length coordinate.

        The path runs clockwise from the right tangent point around the bottom
        of the disc, then along the cap through the apex.
        """
        phi = self._half_angle
        cx, cy = self.center
        arc_length = (2 * math.pi - 2 * phi) * self.radius
        n_arc = max(8, int(math.ceil(arc_length / spacing)))
        alpha = np.linspace(phi, 2 * math.pi - phi, n_arc, endpoint=False)
        arc = np.stack([cx + self.radius * np.sin(alpha), cy + self.radius * np.cos(alpha)], axis=1)

        (xr, yr), (xl, yl) = self.tangent_points()
        xa, ya = self.apex
        n_side = max(4, int(math.ceil(self._tangent_length / spacing)))
        t = np.linspace(0.0, 1.0, n_side, endpoint=False)[:, None]
        up = np.array([xl, yl]) + t * (np.array([xa, ya]) - np.array([xl, yl]))
        down = np.array([xa, ya]) + t * (np.array([xr, yr]) - np.array([xa, ya]))

        points = np.concatenate([arc, up, down])
        steps = np.linalg.norm(np.diff(np.concatenate([points, points[:1]]), axis=0), axis=1)
        arc_coordinate = np.concatenate([[0.0], np.cumsum(steps)[:-1]])
        return points, arc_coordinate


def abbe_ratio(optics: OpticsConfig) -> float:
    """Abbe radius in lattice constants, lambda_C / (2 NA a)."""
    if optics.lattice_constant == 0:
        raise ValueError("Lattice constant must be non-zero to express the Abbe radius in sites")
    return optics.abbe_radius / optics.lattice_constant


def interpolate_angles(weight: np.ndarray, inside: AnglePair,
                       outside: AnglePair) -> Tuple[np.ndarray, np.ndarray]:
    """Angles at ``weight`` along the segment from ``outside`` (0) to ``inside`` (1); the ends are exact."""
    weight = np.asarray(weight, dtype=float)
    angles = []
    for a, b in zip(inside, outside):
        mixed = b + weight * (a - b)
        angles.append(np.where(weight == 1.0, a, np.where(weight == 0.0, b, mixed)))
    return angles[0], angles[1]


def _erf_slope(optics: OpticsConfig) -> float:
    # argument of erf per lattice site: a*pi / (2 R_A)
    return math.pi / (2.0 * abbe_ratio(optics))


def erf_crossover(theta_left: float, theta_right: float, optics: OpticsConfig,
                  x: np.ndarray) -> np.ndarray:
    """Coin angle across a straight boundary at x = 0, evaluated at sites ``x``."""
    x = np.asarray(x, dtype=float)
    return theta_left + 0.5 * (theta_right - theta_left) * (1.0 + erf(_erf_slope(optics) * x))


def _ring_weight(x: np.ndarray, n_sites: int, slope: float) -> np.ndarray:
    """Smoothed indicator of the half ring [0, N/2) including periodic images."""
    half = n_sites / 2.0
    weight = np.zeros_like(x, dtype=float)
    for image in (-1, 0, 1):
        shifted = x + image * n_sites
        weight += 0.5 * (erf(slope * shifted) - erf(slope * (shifted - half)))
    return np.clip(weight, 0.0, 1.0)


def homogeneous_field(geometry: LatticeGeometry, theta1: float, theta2: float) -> CoinField:
    return CoinField(geometry, np.full(geometry.extent, float(theta1)), np.full(geometry.extent, float(theta2)))


def wall_field_1d(left: AnglePair, right: AnglePair, optics: OpticsConfig,
                  geometry: LatticeGeometry) -> CoinField:
    """
    Two bulks meeting at x = 0.

    On an open (absorbing-guard) line this is the plain erf crossover. On a ring
    the right bulk occupies the half ring [0, N/2) and the antipodal wall is
    smoothed by the same PSF.
    """
    if geometry.dimension != 1:
        raise GeometryMismatchException("wall_field_1d needs a 1D lattice", expected=1, actual=geometry.dimension)
    x = geometry.axis_coordinates(0).astype(float)
    if geometry.boundary[0] is Boundary.PERIODIC:
        weight = _ring_weight(x, geometry.extent[0], _erf_slope(optics))
    else:
        weight = 0.5 * (1.0 + erf(_erf_slope(optics) * x))
    theta1, theta2 = interpolate_angles(weight, right, left)
    return CoinField(geometry, theta1, theta2, indicator=weight)


def wall_positions_1d(geometry: LatticeGeometry) -> Tuple[float, ...]:
    """Wall coordinates of a wall_field_1d field."""
    if geometry.boundary[0] is Boundary.PERIODIC:
        return (0.0, geometry.extent[0] / 2.0)
    return (0.0,)


def _smoothed_indicator(geometry: LatticeGeometry, shape: Shape, sigma_sites: float,
                        supersampling: int, truncation: float) -> np.ndarray:
    """Inside-fraction of each site after Gaussian PSF blurring, by direct summation."""
    if supersampling < 2 or supersampling % 2:
        raise ValueError("Supersampling factor must be an even integer >= 2")
    ss = supersampling
    offsets = (np.arange(ss) + 0.5) / ss - 0.5
    fine = [(geometry.axis_coordinates(d)[:, None] + offsets[None, :]).ravel() for d in range(2)]
    fx, fy = np.meshgrid(fine[0], fine[1], indexing='ij')
    indicator = np.asarray(shape.contains(fx, fy), dtype=float)
    if not indicator.any():
        raise ValueError("Island shape covers no lattice area")

    half_width = max(1, int(math.ceil(truncation * sigma_sites * ss)))
    m = np.arange(-half_width, half_width)
    kernel = np.exp(-((m + 0.5) / ss) ** 2 / (2.0 * max(sigma_sites, 1e-12) ** 2))
    kernel /= kernel.sum()

    # kernel tap m weighs fine sample k + m; site i is read at k = i*ss + ss/2
    smoothed = indicator
    for axis in (0, 1):
        smoothed = correlate1d(smoothed, kernel, axis=axis, mode='wrap')
        smoothed = np.take(smoothed, np.arange(ss // 2, smoothed.shape[axis], ss), axis=axis)
    return np.clip(smoothed, 0.0, 1.0)


def island_field(geometry: LatticeGeometry, shape: Shape, inside: AnglePair, outside: AnglePair,
                 optics: OpticsConfig, supersampling: int = 8, truncation: float = 5.0) -> CoinField:
    """
    2D field with ``inside`` angles within ``shape`` and ``outside`` elsewhere.

    The shape indicator is sampled on a supersampled grid, blurred with the
    PSF (kernel truncated at ``truncation`` standard deviations) and used as the
    interpolation weight s along the straight segment between the angle pairs.
    """
    if geometry.dimension != 2:
        raise GeometryMismatchException("island_field needs a 2D lattice", expected=2, actual=geometry.dimension)
    if not shape.area > 0:
        raise ValueError("Island shape is degenerate (zero area)")

    s = _smoothed_indicator(geometry, shape, optics.psf_sigma_sites, supersampling, truncation)
    theta1, theta2 = interpolate_angles(s, inside, outside)
    logger.debug(f"Island field built: {np.count_nonzero(s > 0.5)} inside sites, sigma={optics.psf_sigma_sites:.3f} sites")
    return CoinField(geometry, theta1, theta2, indicator=s)


def strip_profile(y_extent: int, inner_width: int, inside: AnglePair, outside: AnglePair,
                  optics: Optional[OpticsConfig] = None) -> "StripProfile":
    """
    y-dependent angles of a strip: ``inner_width`` sites of ``inside`` angles
    centred in a periodic column of ``y_extent`` sites.

    Walls sit half-way between sites and are sharp unless optics are given,
    in which case both are erf-smoothed with periodic images.
    """
    if not 0 < inner_width < y_extent:
        raise ValueError("Inner domain must be narrower than the strip")
    y = np.arange(y_extent, dtype=float)
    lower = (y_extent - inner_width) / 2.0 - 0.5
    upper = lower + inner_width
    if optics is None:
        weight = ((y > lower) & (y < upper)).astype(float)
    else:
        slope = _erf_slope(optics)
        weight = np.zeros(y_extent)
        for image in (-1, 0, 1):
            shifted = y + image * y_extent
            weight += 0.5 * (erf(slope * (shifted - lower)) - erf(slope * (shifted - upper)))
        weight = np.clip(weight, 0.0, 1.0)
    theta1, theta2 = interpolate_angles(weight, inside, outside)
    return StripProfile(theta1, theta2, (lower, upper), AnglePair(*inside), AnglePair(*outside))
