"""
oamlink - Noll-indexed Zernike polynomials

Polynomials are Noll normalized: the disc average of Z_j^2 is one, so a
coefficient vector is directly the RMS phase per mode.

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from dataclasses import dataclass
from functools import lru_cache
from oamlink import constants
from oamlink.field import Aperture, GridSpec, Point
from scipy.special import factorial
from typing import Tuple

import numpy as np


class ZernikeError(Exception):
    """Zernike Error"""


def noll_to_nm(j: int) -> Tuple[int, int]:
    """Radial and azimuthal orders (n, m) of Noll index j; m > 0 is a cosine term.

    >>> [noll_to_nm(j) for j in range(1, 7)]
    [(0, 0), (1, 1), (1, -1), (2, 0), (2, -2), (2, 2)]
    """
    if j < 1:
        raise ZernikeError(f"Noll index starts at 1, got {j}")
    n = 0
    j1 = j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1)**j * ((n % 2) + 2 * int((j1 + ((n + 1) % 2)) / 2))
    return n, m


def _radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    m = abs(m)
    result = np.zeros_like(rho, dtype=np.float64)
    for s in range((n - m) // 2 + 1):
        coefficient = (-1)**s * factorial(n - s) / (
            factorial(s) * factorial((n + m) // 2 - s) * factorial((n - m) // 2 - s)
        )
        result += coefficient * rho**(n - 2 * s)
    return result


def zernike_polynomial(j: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Z_j at polar coordinates, not truncated to the unit disc."""
    n, m = noll_to_nm(j)
    rho = np.asarray(rho, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if m == 0:
        return np.sqrt(n + 1) * _radial(n, 0, rho)
    norm = np.sqrt(2 * (n + 1))
    if m > 0:
        return norm * _radial(n, m, rho) * np.cos(m * theta)
    return norm * _radial(n, m, rho) * np.sin(-m * theta)


@dataclass(frozen=True, eq=False)
class ZernikeCoeffs:
    """Coefficients in radians RMS; element 0 is Noll j=1 (piston)."""
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 1:
            raise ZernikeError("Zernike coefficients must be a vector")
        if not np.all(np.isfinite(coeffs)):
            raise ZernikeError("Zernike coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, n_terms: int) -> "ZernikeCoeffs":
        return cls(np.zeros(n_terms))

    @classmethod
    def single(cls, j: int, value: float, n_terms: int = 0) -> "ZernikeCoeffs":
        coeffs = np.zeros(max(j, n_terms))
        coeffs[j - 1] = value
        return cls(coeffs)

    @property
    def n_terms(self) -> int:
        return int(self.coeffs.size)

    def noll(self, j: int) -> float:
        return float(self.coeffs[j - 1])

    def rms(self, first: int = 2) -> float:
        """RMS over the pupil of the modes from Noll index `first` upwards."""
        return float(np.sqrt(np.sum(self.coeffs[first - 1:]**2)))


def _check_pupil(grid: GridSpec, diameter: float, center: Point) -> None:
    if not diameter > 0:
        raise ZernikeError(f"Pupil diameter must be positive, got {diameter}")
    reach = diameter / 2 + max(abs(center[0]), abs(center[1]))
    if reach > grid.extent / 2:
        raise ZernikeError(f"Pupil of diameter {diameter} m at {center} exceeds grid extent {grid.extent} m")


def pupil_polar(grid: GridSpec, diameter: float, center: Point = (0.0, 0.0)) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized radius and angle of every sample relative to the pupil."""
    x, y = grid.coordinates()
    dx = x - center[0]
    dy = y - center[1]
    return np.hypot(dx, dy) / (diameter / 2), np.arctan2(dy, dx)


def zernike_eval(j: int, grid: GridSpec, pupil_diameter: float, center: Point = (0.0, 0.0)) -> np.ndarray:
    _check_pupil(grid, pupil_diameter, center)
    rho, theta = pupil_polar(grid, pupil_diameter, center)
    return np.where(rho <= 1, zernike_polynomial(j, rho, theta), 0.0)


@lru_cache(maxsize=32)
def _fit_basis(grid: GridSpec, diameter: float, center: Point, n_terms: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rho, theta = pupil_polar(grid, diameter, center)
    mask = rho <= 1
    matrix = np.stack([zernike_polynomial(j, rho[mask], theta[mask]) for j in range(1, n_terms + 1)], axis=1)
    solver = np.linalg.pinv(matrix)
    for array in (mask, matrix, solver):
        array.setflags(write=False)
    return mask, matrix, solver


def zernike_fit(phase: np.ndarray, grid: GridSpec, pupil: Aperture, n_terms: int) -> ZernikeCoeffs:
    """Least-squares projection of a phase map onto the first n_terms Noll modes over the pupil samples."""
    if n_terms < 1:
        raise ZernikeError(f"At least one term is required, got {n_terms}")
    if np.shape(phase) != (grid.n, grid.n):
        raise ZernikeError(f"Phase map shape {np.shape(phase)} does not match grid of {grid.n} samples")
    _check_pupil(grid, pupil.diameter, pupil.center_offset)
    if pupil.diameter / grid.pitch < constants.MIN_PUPIL_SAMPLES:
        raise ZernikeError(
            f"Pupil spans {pupil.diameter / grid.pitch:.1f} samples, at least {constants.MIN_PUPIL_SAMPLES} are needed"
        )
    mask, _, solver = _fit_basis(grid, float(pupil.diameter), pupil.center_offset, int(n_terms))
    return ZernikeCoeffs(solver @ np.asarray(phase)[mask])


def zernike_reconstruct(
    c: ZernikeCoeffs, grid: GridSpec, pupil_diameter: float, center: Point = (0.0, 0.0)
) -> np.ndarray:
    _check_pupil(grid, pupil_diameter, center)
    mask, matrix, _ = _fit_basis(grid, float(pupil_diameter), (float(center[0]), float(center[1])), c.n_terms)
    result = np.zeros((grid.n, grid.n))
    result[mask] = matrix @ c.coeffs
    return result


def remove_tip_tilt(phase: np.ndarray, grid: GridSpec, pupil: Aperture) -> np.ndarray:
    """Subtract the fitted piston, tip and tilt inside the pupil."""
    low_order = zernike_fit(phase, grid, pupil, 3)
    return np.asarray(phase) - zernike_reconstruct(low_order, grid, pupil.diameter, pupil.center_offset)


def pupil_rms(phase: np.ndarray, grid: GridSpec, pupil: Aperture) -> float:
    """Piston-removed RMS of a phase map over the pupil."""
    samples = np.asarray(phase)[pupil.mask(grid)]
    if samples.size == 0:
        raise ZernikeError("Pupil contains no samples")
    return float(np.std(samples))
