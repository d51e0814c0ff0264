"""WGS-84 geodetic <-> ECEF <-> local East-North-Up conversions.

The internal pipeline runs in ``numpy.longdouble``: ECEF coordinates are
~6.4e6 m, so a float64 ulp is already ~1e-9 m and sub-nanometre round trips
need the extra mantissa bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

_LD = np.longdouble
_A = _LD(6378137)
_F = _LD(1) / _LD("298.257223563")
_E2 = _F * (2 - _F)
_B = _A * (1 - _F)
_MAX_ITER = 10
_LAT_TOL = _LD(1e-12)


def _deg2rad(x) -> np.longdouble:
    return _LD(x) * (np.arccos(_LD(-1)) / _LD(180))


def _rad2deg(x) -> np.longdouble:
    return x * (_LD(180) / np.arccos(_LD(-1)))


@dataclass(frozen=True)
class GeodeticPoint:
    """Fields may hold ``numpy.longdouble`` when produced by :func:`from_enu`."""

    lat: float  # deg
    lon: float  # deg
    alt: float = 0.0  # m above ellipsoid

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class EnuPoint:
    east: float
    north: float
    up: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.east, self.north, self.up)):
            raise ValueError("ENU components must be finite")

    def planar(self) -> np.ndarray:
        return np.array([self.east, self.north])


def _ecef(p: GeodeticPoint) -> np.ndarray:
    lat = _deg2rad(p.lat)
    lon = _deg2rad(p.lon)
    slat, clat = np.sin(lat), np.cos(lat)
    n = _A / np.sqrt(1 - _E2 * slat * slat)
    h = _LD(p.alt)
    return np.array([
        (n + h) * clat * np.cos(lon),
        (n + h) * clat * np.sin(lon),
        (n * (1 - _E2) + h) * slat,
    ], dtype=_LD)


def _geodetic(xyz: np.ndarray) -> GeodeticPoint:
    x, y, z = (_LD(c) for c in xyz)
    r = np.hypot(x, y)
    if r < 1e-9:
        lat_deg = math.copysign(90.0, float(z)) if z != 0 else 0.0
        return GeodeticPoint(_LD(lat_deg), _LD(0), abs(z) - _B)
    lon = np.arctan2(y, x)
    lat = np.arctan2(z, r * (1 - _E2))
    for _ in range(_MAX_ITER):
        s = np.sin(lat)
        n = _A / np.sqrt(1 - _E2 * s * s)
        alt = r * np.cos(lat) + z * s - _A * _A / n
        new_lat = np.arctan2(z, r * (1 - _E2 * n / (n + alt)))
        step = abs(new_lat - lat)
        lat = new_lat
        if step < _LAT_TOL * 1e-6:
            break
    s, c = np.sin(lat), np.cos(lat)
    n = _A / np.sqrt(1 - _E2 * s * s)
    alt = r * c + z * s - _A * _A / n
    return GeodeticPoint(_rad2deg(lat), _rad2deg(lon), alt)


def geodetic_to_ecef(p: GeodeticPoint) -> np.ndarray:
    """ECEF position [m] of a geodetic point on the WGS-84 ellipsoid."""
    return _ecef(p).astype(float)


def ecef_to_geodetic(xyz) -> GeodeticPoint:
    """Inverse of :func:`geodetic_to_ecef` by bounded fixed-point iteration on latitude."""
    return _geodetic(np.asarray(xyz, dtype=_LD))


def _enu_rotation(lat_deg: float, lon_deg: float) -> np.ndarray:
    lat = _deg2rad(lat_deg)
    lon = _deg2rad(lon_deg)
    sl, cl = np.sin(lat), np.cos(lat)
    so, co = np.sin(lon), np.cos(lon)
    return np.array([
        [-so, co, 0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ], dtype=_LD)


@dataclass(frozen=True)
class EnuFrame:
    """Local tangent frame anchored at ``origin``; rows of ``rotation`` are E, N, U in ECEF."""

    origin: GeodeticPoint
    origin_ecef: np.ndarray = field(init=False, repr=False, compare=False)
    rotation: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "origin_ecef", _ecef(self.origin))
        object.__setattr__(self, "rotation", _enu_rotation(self.origin.lat, self.origin.lon))


def to_enu(frame: EnuFrame, p: GeodeticPoint) -> EnuPoint:
    e, n, u = frame.rotation @ (_ecef(p) - frame.origin_ecef)
    return EnuPoint(float(e), float(n), float(u))


def from_enu(frame: EnuFrame, p: EnuPoint) -> GeodeticPoint:
    d = frame.rotation.T @ np.array([p.east, p.north, p.up], dtype=_LD)
    return _geodetic(frame.origin_ecef + d)
