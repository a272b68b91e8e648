"""Distances and bearings between points.

Points are ``(lat, lon)`` pairs in degrees.  In planar mode the same two
slots hold ``(north, east)`` coordinates in meters, so bearings keep the
"clockwise from north" convention in both modes.
"""

from __future__ import annotations

import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
MODES = ("geodesic", "planar")


class UndefinedBearingError(ValueError):
    pass


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown coordinate mode {mode!r}; expected one of {MODES}")
    return mode


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters.  Works on scalars and numpy arrays."""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def geodesic_distance(a, b, mode: str = "geodesic") -> float:
    if mode == "planar":
        return math.hypot(b[0] - a[0], b[1] - a[1])
    check_mode(mode)
    return float(haversine(a[0], a[1], b[0], b[1]))


def distances_from(point, coords: np.ndarray, mode: str = "geodesic") -> np.ndarray:
    """Distances in meters from ``point`` to every row of ``coords``."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    if mode == "planar":
        return np.hypot(coords[:, 0] - point[0], coords[:, 1] - point[1])
    check_mode(mode)
    return haversine(point[0], point[1], coords[:, 0], coords[:, 1])


def bearing(a, b, mode: str = "geodesic") -> float:
    """Initial bearing from ``a`` to ``b`` in degrees, clockwise from north, in [0, 360)."""
    if a[0] == b[0] and a[1] == b[1]:
        raise UndefinedBearingError(f"bearing undefined for coincident points {tuple(a)}")
    if mode == "planar":
        theta = math.atan2(b[1] - a[1], b[0] - a[0])
    else:
        check_mode(mode)
        lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
        dlon = lon2 - lon1
        y = math.sin(dlon) * math.cos(lat2)
        x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
        theta = math.atan2(y, x)
    deg = math.degrees(theta) % 360.0
    # -tiny % 360 rounds to 360.0
    return 0.0 if deg >= 360.0 else deg
