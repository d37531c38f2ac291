"""
Spherical geometry for equirectangular panoramas.

Maps ERP pixel coordinates to latitude/longitude and back, and implements the
forward and inverse gnomonic (tangent-plane) projection used to render
viewports. Scalar functions work on SphericalPoint/PlanePoint; the ``*_array``
variants take numpy arrays and broadcast.

Conventions: latitude in [-pi/2, pi/2] (row 0 is next to the north pole),
longitude in [-pi, pi), pixel centers at half-integer offsets.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from panorama_iqa.exceptions import BehindTangentPlaneError, DomainError

# Smallest cos(c) accepted by the forward projection.
HEMISPHERE_EPSILON = 1e-6

_LAT_SLACK = 1e-12


def normalize_lon(lon):
    """Wrap longitude into [-pi, pi)."""
    wrapped = np.mod(np.asarray(lon, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    # np.mod of a tiny negative number can round up to exactly 2*pi
    wrapped = np.where(wrapped >= np.pi, wrapped - 2.0 * np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class SphericalPoint:
    """A point on the unit sphere, angles in radians."""

    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        lon = float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise DomainError(f"non-finite spherical point ({lat}, {lon})")
        if abs(lat) > math.pi / 2 + _LAT_SLACK:
            raise DomainError(f"latitude {lat} outside [-pi/2, pi/2]")
        object.__setattr__(self, "lat", min(max(lat, -math.pi / 2), math.pi / 2))
        object.__setattr__(self, "lon", normalize_lon(lon))


@dataclass(frozen=True)
class PlanePoint:
    """Dimensionless coordinates on a tangent plane."""

    x: float
    y: float


@dataclass(frozen=True)
class TangentPlane:
    """Square tangent plane: center, field of view and pixels per side."""

    center: SphericalPoint
    fov: float
    resolution: int

    def __post_init__(self):
        if not 0.0 < self.fov < math.pi:
            raise DomainError(f"fov {self.fov} must lie in (0, pi)")
        if int(self.resolution) != self.resolution or self.resolution < 1:
            raise DomainError(f"resolution {self.resolution} must be a positive int")

    @property
    def half_extent(self) -> float:
        """tan(fov / 2): the largest plane coordinate on the grid."""
        return math.tan(self.fov / 2.0)


@dataclass(frozen=True)
class TangentGrid:
    """Spherical coordinates of every pixel of a tangent viewport."""

    plane: TangentPlane
    lat: np.ndarray
    lon: np.ndarray

    def point(self, i: int, j: int) -> SphericalPoint:
        return SphericalPoint(float(self.lat[i, j]), float(self.lon[i, j]))


# ==================== ERP <-> sphere ====================


def _check_dims(height: int, width: int) -> None:
    if height < 1 or width < 1:
        raise DomainError(f"image dimensions must be positive, got {height}x{width}")


def erp_to_sphere_array(rows, cols, height: int, width: int):
    """
    Vectorised pixel -> (lat, lon); no range checks.

    Rows within half a pixel of the bottom edge lie past the south pole under
    the pixel-center convention; their latitude is clamped to -pi/2.
    """
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    lat = np.clip(np.pi * (0.5 - (rows + 0.5) / height), -np.pi / 2, np.pi / 2)
    lon = 2.0 * np.pi * ((cols + 0.5) / width - 0.5)
    return lat, lon


def sphere_to_erp_array(lat, lon, height: int, width: int):
    """Vectorised (lat, lon) -> continuous (row, col)."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    rows = (0.5 - lat / np.pi) * height - 0.5
    cols = (lon / (2.0 * np.pi) + 0.5) * width - 0.5
    return rows, cols


def erp_to_sphere(row: float, col: float, height: int, width: int) -> SphericalPoint:
    """
    Map a continuous ERP pixel coordinate to the sphere.

    Args:
        row: Pixel row, 0 <= row < height
        col: Pixel column, 0 <= col < width
        height: Image height in pixels
        width: Image width in pixels

    Returns:
        The spherical point under the pixel-center convention

    Raises:
        DomainError: Non-positive dimensions or out-of-range coordinates
    """
    _check_dims(height, width)
    if not (0.0 <= row < height and 0.0 <= col < width):
        raise DomainError(f"pixel ({row}, {col}) outside {height}x{width} image")
    lat, lon = erp_to_sphere_array(row, col, height, width)
    return SphericalPoint(float(lat), float(lon))


def sphere_to_erp(p: SphericalPoint, height: int, width: int) -> Tuple[float, float]:
    """Exact inverse of erp_to_sphere; returns fractional (row, col)."""
    _check_dims(height, width)
    rows, cols = sphere_to_erp_array(p.lat, p.lon, height, width)
    return float(rows), float(cols)


# ==================== Gnomonic projection ====================


def gnomonic_forward_array(lat0: float, lon0: float, lat, lon):
    """Vectorised forward projection; returns (x, y, cos_c)."""
    lat = np.asarray(lat, dtype=np.float64)
    dlon = np.asarray(lon, dtype=np.float64) - lon0
    sin_lat0, cos_lat0 = math.sin(lat0), math.cos(lat0)
    cos_c = sin_lat0 * np.sin(lat) + cos_lat0 * np.cos(lat) * np.cos(dlon)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.cos(lat) * np.sin(dlon) / cos_c
        y = (cos_lat0 * np.sin(lat) - sin_lat0 * np.cos(lat) * np.cos(dlon)) / cos_c
    return x, y, cos_c


def gnomonic_inverse_array(lat0: float, lon0: float, x, y):
    """Vectorised inverse projection; returns (lat, lon) with lon normalised."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rho = np.hypot(x, y)
    c = np.arctan(rho)
    sin_c, cos_c = np.sin(c), np.cos(c)
    sin_lat0, cos_lat0 = math.sin(lat0), math.cos(lat0)
    at_origin = rho == 0.0
    safe_rho = np.where(at_origin, 1.0, rho)
    sin_lat = cos_c * sin_lat0 + np.where(
        at_origin, 0.0, y * sin_c * cos_lat0 / safe_rho
    )
    lat = np.arcsin(np.clip(sin_lat, -1.0, 1.0))
    dlon = np.arctan2(x * sin_c, rho * cos_lat0 * cos_c - y * sin_lat0 * sin_c)
    lon = normalize_lon(lon0 + np.where(at_origin, 0.0, dlon))
    return lat, lon


def gnomonic_forward(center: SphericalPoint, p: SphericalPoint) -> PlanePoint:
    """
    Project ``p`` onto the plane tangent to the sphere at ``center``.

    Raises:
        BehindTangentPlaneError: If ``p`` is not strictly in front of the plane
    """
    x, y, cos_c = gnomonic_forward_array(center.lat, center.lon, p.lat, p.lon)
    if not float(cos_c) > HEMISPHERE_EPSILON:
        raise BehindTangentPlaneError(
            f"point ({p.lat:.6f}, {p.lon:.6f}) is behind the plane tangent at "
            f"({center.lat:.6f}, {center.lon:.6f})"
        )
    return PlanePoint(float(x), float(y))


def gnomonic_inverse(center: SphericalPoint, q: PlanePoint) -> SphericalPoint:
    """Map a tangent-plane point back to the sphere (total on the plane)."""
    lat, lon = gnomonic_inverse_array(center.lat, center.lon, q.x, q.y)
    return SphericalPoint(float(lat), float(lon))


def plane_coordinates(plane: TangentPlane) -> np.ndarray:
    """Pixel-center plane coordinates along one axis, ascending."""
    res = int(plane.resolution)
    return (2.0 * (np.arange(res) + 0.5) / res - 1.0) * plane.half_extent


def tangent_grid(plane: TangentPlane) -> TangentGrid:
    """
    Spherical coordinates for every pixel of a tangent viewport.

    Row-major; the top row has the largest y, the left column the smallest x.
    """
    axis = plane_coordinates(plane)
    x = np.broadcast_to(axis[np.newaxis, :], (axis.size, axis.size))
    y = np.broadcast_to(axis[::-1, np.newaxis], (axis.size, axis.size))
    lat, lon = gnomonic_inverse_array(plane.center.lat, plane.center.lon, x, y)
    lat.setflags(write=False)
    lon.setflags(write=False)
    return TangentGrid(plane=plane, lat=lat, lon=lon)
