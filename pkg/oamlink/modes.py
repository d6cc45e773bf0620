"""
oamlink - OAM and ANG encoding states

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from dataclasses import dataclass
from enum import Enum, unique
from functools import lru_cache
from oamlink import constants
from oamlink.field import ComplexField, GridSpec, Point, power
from typing import List, Tuple

import numpy as np
import scipy.special as sp


class ModeError(Exception):
    """Mode construction error"""


@unique
class BasisKind(str, Enum):
    OAM = "OAM"
    ANG = "ANG"


@dataclass(frozen=True)
class ModeSpec:
    ell: int
    waist: float
    center: Point = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not self.waist > 0:
            raise ModeError(f"Mode waist must be positive, got {self.waist}")
        object.__setattr__(self, "ell", int(self.ell))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))


@dataclass(frozen=True)
class EncodingSpace:
    basis_kind: BasisKind
    max_ell: int
    spacing: int
    waist: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "basis_kind", BasisKind(self.basis_kind))
        if self.max_ell < 1:
            raise ModeError(f"max_ell must be at least 1, got {self.max_ell}")
        if self.spacing < 1:
            raise ModeError(f"Mode spacing must be at least 1, got {self.spacing}")
        if self.max_ell % self.spacing:
            raise ModeError(f"max_ell {self.max_ell} is not divisible by spacing {self.spacing}")
        if not self.waist > 0:
            raise ModeError(f"Mode waist must be positive, got {self.waist}")
        if self.basis_kind is BasisKind.ANG and self.spacing != 1:
            raise ModeError("ANG basis is only mutually unbiased with the OAM basis for spacing 1")

    @property
    def members(self) -> Tuple[int, ...]:
        return tuple(range(-self.max_ell, self.max_ell + 1, self.spacing))

    @property
    def dimension(self) -> int:
        return 2 * (self.max_ell // self.spacing) + 1

    def with_kind(self, kind: BasisKind) -> "EncodingSpace":
        return EncodingSpace(basis_kind=kind, max_ell=self.max_ell, spacing=self.spacing, waist=self.waist)

    def labels(self) -> Tuple[int, ...]:
        """Row labels of the basis: OAM quantum numbers, or ANG indices j."""
        if self.basis_kind is BasisKind.OAM:
            return self.members
        return tuple(range(self.dimension))


@dataclass(frozen=True)
class HybridSpace:
    spatial: EncodingSpace
    pol_fidelity: float
    pol_dimension: int = 2

    def __post_init__(self) -> None:
        if not 0.5 <= self.pol_fidelity <= 1:
            raise ModeError(f"Polarization fidelity must be in [0.5, 1], got {self.pol_fidelity}")
        if self.pol_dimension != 2:
            raise ModeError("Only a two-dimensional polarization ancilla is supported")

    @property
    def dimension(self) -> int:
        return self.spatial.dimension * self.pol_dimension

    def joint_fidelity(self, spatial_fidelity: float) -> float:
        """Product model: spatial and polarization errors are independent."""
        return spatial_fidelity * self.pol_fidelity


def lg_amplitude(ell: int, waist: float, x: np.ndarray, y: np.ndarray, p: int = 0) -> np.ndarray:
    """Analytic LG_{p,ell} amplitude at the waist plane, unit power in the continuum."""
    r2 = x**2 + y**2
    abs_ell = abs(ell)
    norm = np.sqrt(2 * sp.factorial(p) / (np.pi * sp.factorial(p + abs_ell))) / waist
    radial = (np.sqrt(2 * r2) / waist)**abs_ell * sp.eval_genlaguerre(p, abs_ell, 2 * r2 / waist**2)
    return norm * radial * np.exp(-r2 / waist**2) * np.exp(1j * ell * np.arctan2(y, x))


def oam_field(spec: ModeSpec, grid: GridSpec) -> ComplexField:
    if spec.waist < constants.MIN_SAMPLES_PER_WAIST * grid.pitch:
        raise ModeError(
            f"Waist {spec.waist} m is sampled by fewer than {constants.MIN_SAMPLES_PER_WAIST} pixels "
            f"of pitch {grid.pitch} m"
        )
    return _oam_field(spec, grid)


@lru_cache(maxsize=128)
def _oam_field(spec: ModeSpec, grid: GridSpec) -> ComplexField:
    x, y = grid.coordinates()
    amplitude = lg_amplitude(spec.ell, spec.waist, x - spec.center[0], y - spec.center[1])
    field = ComplexField(grid, amplitude)
    normalized = field.scaled(1 / np.sqrt(power(field)))
    normalized.amplitude.setflags(write=False)
    return normalized


def build_space(L: int, spacing: int, waist: float, kind: BasisKind = BasisKind.OAM) -> EncodingSpace:
    return EncodingSpace(basis_kind=kind, max_ell=L, spacing=spacing, waist=waist)


def ang_coefficients(j: int, space: EncodingSpace) -> np.ndarray:
    """Coefficients of ANG state j on the OAM members, periodic in j with period d."""
    if space.spacing != 1:
        raise ModeError("ANG states are only defined for spacing 1")
    ells = np.asarray(space.members)
    d = space.dimension
    return np.exp(-2j * np.pi * j * ells / (2 * space.max_ell + 1)) / np.sqrt(d)


def ang_field(j: int, space: EncodingSpace, grid: GridSpec) -> ComplexField:
    if not 0 <= j < space.dimension:
        raise ModeError(f"ANG index {j} outside [0, {space.dimension})")
    coefficients = ang_coefficients(j, space)
    amplitude = np.zeros((grid.n, grid.n), dtype=np.complex128)
    for coefficient, ell in zip(coefficients, space.members):
        amplitude += coefficient * oam_field(ModeSpec(ell, space.waist), grid).amplitude
    field = ComplexField(grid, amplitude)
    return field.scaled(1 / np.sqrt(power(field)))


def basis_fields(space: EncodingSpace, grid: GridSpec) -> List[ComplexField]:
    if space.basis_kind is BasisKind.OAM:
        return [oam_field(ModeSpec(ell, space.waist), grid) for ell in space.members]
    return [ang_field(j, space, grid) for j in range(space.dimension)]


def hybrid_space(spatial: EncodingSpace, pol_fidelity: float) -> HybridSpace:
    return HybridSpace(spatial=spatial, pol_fidelity=pol_fidelity)


def beam_radius(waist: float, distance: float, wavelength: float) -> float:
    """Gaussian 1/e^2 radius after free-space propagation.

    >>> beam_radius(1e-3, 0.0, 633e-9)
    0.001
    """
    rayleigh = np.pi * waist**2 / wavelength
    return float(waist * np.sqrt(1 + (distance / rayleigh)**2))


def lg_power_in_aperture(ell: int, radius_at_plane: float, aperture_radius: float) -> float:
    """Fraction of an LG_{0,ell} beam of 1/e^2 radius `radius_at_plane` inside a centered disc.

    >>> round(lg_power_in_aperture(0, 1.0, 1.0), 4)
    0.8647
    """
    return float(sp.gammainc(abs(ell) + 1, 2 * aperture_radius**2 / radius_at_plane**2))
