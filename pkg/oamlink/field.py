"""
oamlink - sampled scalar fields, apertures and angular-spectrum propagation

All types are immutable after construction and every operation returns a new
value, so fields can be shared freely between Monte Carlo workers.

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from dataclasses import dataclass
from functools import lru_cache
from oamlink import constants
from typing import Tuple

import numpy as np


Point = Tuple[float, float]


class FieldError(Exception):
    """Field Error"""


class GridMismatch(FieldError):
    """Fields sampled on different grids"""


class AliasingError(FieldError):
    """Propagation would wrap energy around the periodic window"""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class GridSpec:
    n: int
    extent: float
    wavelength: float

    def __post_init__(self) -> None:
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise FieldError(f"Grid sample count must be an integer, got {self.n!r}")
        if self.n < constants.MIN_GRID_SAMPLES or not _is_power_of_two(int(self.n)):
            raise FieldError(f"Grid sample count must be a power of two >= {constants.MIN_GRID_SAMPLES}, got {self.n}")
        if not self.extent > 0:
            raise FieldError(f"Grid extent must be positive, got {self.extent}")
        if not self.wavelength > 0:
            raise FieldError(f"Wavelength must be positive, got {self.wavelength}")

    @property
    def pitch(self) -> float:
        return self.extent / self.n

    @property
    def pixel_area(self) -> float:
        return self.pitch**2

    @property
    def k(self) -> float:
        return 2 * np.pi / self.wavelength

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Sample coordinates in meters; the sample at index n // 2 sits on the optical axis."""
        return _coordinates(int(self.n), float(self.extent))

    def frequencies(self) -> Tuple[np.ndarray, np.ndarray]:
        """Spatial frequencies in FFT order, cycles per meter."""
        return _frequencies(int(self.n), float(self.extent))


@lru_cache(maxsize=32)
def _coordinates(n: int, extent: float) -> Tuple[np.ndarray, np.ndarray]:
    axis = (np.arange(n) - n // 2) * (extent / n)
    x, y = np.meshgrid(axis, axis)
    x.setflags(write=False)
    y.setflags(write=False)
    return x, y


@lru_cache(maxsize=32)
def _frequencies(n: int, extent: float) -> Tuple[np.ndarray, np.ndarray]:
    axis = np.fft.fftfreq(n, d=extent / n)
    fx, fy = np.meshgrid(axis, axis)
    fx.setflags(write=False)
    fy.setflags(write=False)
    return fx, fy


@lru_cache(maxsize=32)
def _radial_frequency_order(n: int, extent: float) -> Tuple[np.ndarray, np.ndarray]:
    fx, fy = _frequencies(n, extent)
    radius = np.hypot(fx, fy).ravel()
    order = np.argsort(radius, kind="stable")
    return order, radius[order]


@lru_cache(maxsize=64)
def _transfer_function(n: int, extent: float, wavelength: float, distance: float) -> np.ndarray:
    fx, fy = _frequencies(n, extent)
    k = 2 * np.pi / wavelength
    q2 = (2 * np.pi)**2 * (fx**2 + fy**2)
    kz = np.sqrt((k**2 - q2).astype(np.complex128))
    # carrier exp(ikz) removed, written so that large k*z keeps full precision
    transfer = np.exp(-1j * distance * q2 / (kz + k))
    transfer.setflags(write=False)
    return transfer


def make_grid(n: int, extent: float, wavelength: float) -> GridSpec:
    """
    >>> make_grid(256, 0.1, 633e-9).pitch
    0.000390625
    """
    return GridSpec(n=n, extent=extent, wavelength=wavelength)


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: GridSpec
    amplitude: np.ndarray

    def __post_init__(self) -> None:
        amplitude = np.asarray(self.amplitude, dtype=np.complex128)
        if amplitude.shape != (self.grid.n, self.grid.n):
            raise FieldError(f"Field shape {amplitude.shape} does not match grid of {self.grid.n} samples")
        object.__setattr__(self, "amplitude", amplitude)

    @property
    def intensity(self) -> np.ndarray:
        return self.amplitude.real**2 + self.amplitude.imag**2

    def scaled(self, factor: complex) -> "ComplexField":
        return ComplexField(self.grid, self.amplitude * factor)


def zero_field(grid: GridSpec) -> ComplexField:
    return ComplexField(grid, np.zeros((grid.n, grid.n), dtype=np.complex128))


@dataclass(frozen=True)
class Aperture:
    diameter: float
    center_offset: Point = (0.0, 0.0)
    kind: str = "hard-disc"

    def __post_init__(self) -> None:
        if not self.diameter > 0:
            raise FieldError(f"Aperture diameter must be positive, got {self.diameter}")
        if self.kind != "hard-disc":
            raise FieldError(f"Unsupported aperture kind {self.kind!r}")
        object.__setattr__(self, "center_offset", (float(self.center_offset[0]), float(self.center_offset[1])))

    @property
    def radius(self) -> float:
        return self.diameter / 2

    def mask(self, grid: GridSpec) -> np.ndarray:
        return _disc_mask(grid, self.diameter, self.center_offset)


@lru_cache(maxsize=64)
def _disc_mask(grid: GridSpec, diameter: float, center: Point) -> np.ndarray:
    x, y = grid.coordinates()
    mask = (x - center[0])**2 + (y - center[1])**2 <= (diameter / 2)**2
    mask.setflags(write=False)
    return mask


def power(f: ComplexField) -> float:
    return float(np.sum(f.intensity) * f.grid.pixel_area)


def overlap(a: ComplexField, b: ComplexField) -> complex:
    """Inner product <a|b> weighted by the pixel area.

    The real and imaginary sums are formed from separate element-wise products
    so that overlap(a, b) == conj(overlap(b, a)) holds bit for bit.
    """
    if a.grid != b.grid:
        raise GridMismatch(f"Cannot overlap fields on {a.grid} and {b.grid}")
    ar, ai = a.amplitude.real, a.amplitude.imag
    br, bi = b.amplitude.real, b.amplitude.imag
    re = np.sum(ar * br + ai * bi)
    im = np.sum(ar * bi - ai * br)
    area = a.grid.pixel_area
    return complex(re * area, im * area)


def centroid(f: ComplexField) -> Point:
    intensity = f.intensity
    total = np.sum(intensity)
    if not total > 0:
        raise FieldError("Centroid of a zero-power field is undefined")
    x, y = f.grid.coordinates()
    return float(np.sum(intensity * x) / total), float(np.sum(intensity * y) / total)


def beam_diameter(f: ComplexField) -> float:
    """Second-moment (D4 sigma) diameter, the larger of the two axes."""
    cx, cy = centroid(f)
    intensity = f.intensity
    total = np.sum(intensity)
    x, y = f.grid.coordinates()
    var_x = np.sum(intensity * (x - cx)**2) / total
    var_y = np.sum(intensity * (y - cy)**2) / total
    return float(4 * np.sqrt(max(var_x, var_y)))


def occupied_bandwidth(f: ComplexField, fraction: float = constants.ALIASING_POWER_FRACTION) -> float:
    """Radius in cycles per meter of the disc holding `fraction` of the angular spectrum power."""
    spectrum = np.fft.fft2(f.amplitude)
    return _occupied_bandwidth(f.grid, spectrum, fraction)


def _occupied_bandwidth(grid: GridSpec, spectrum: np.ndarray, fraction: float) -> float:
    order, radius = _radial_frequency_order(int(grid.n), float(grid.extent))
    psd = (spectrum.real**2 + spectrum.imag**2).ravel()[order]
    cumulative = np.cumsum(psd)
    index = int(np.searchsorted(cumulative, fraction * cumulative[-1]))
    return float(radius[min(index, radius.size - 1)])


def propagate(
    f: ComplexField, distance: float, *, power_fraction: float = constants.ALIASING_POWER_FRACTION
) -> ComplexField:
    """Angular-spectrum propagation with the exact transfer function.

    The grid pitch is preserved. Before propagating, the spread of the field's
    occupied angular spectrum over `distance` is added to its current diameter
    and compared with the grid extent; exceeding it raises AliasingError
    instead of letting energy wrap around the window.
    """
    if distance < 0:
        raise FieldError(f"Propagation distance must be non-negative, got {distance}")
    if distance == 0:
        return f
    grid = f.grid
    spectrum = np.fft.fft2(f.amplitude)
    if np.any(spectrum):
        needed = beam_diameter(f) + 2 * grid.wavelength * distance * _occupied_bandwidth(grid, spectrum, power_fraction)
        if needed > grid.extent:
            raise AliasingError(
                f"Propagating {distance} m requires grid extent >= {needed:.6g} m, grid extent is {grid.extent:.6g} m"
            )
    transfer = _transfer_function(int(grid.n), float(grid.extent), float(grid.wavelength), float(distance))
    return ComplexField(grid, np.fft.ifft2(spectrum * transfer))


def apply_aperture(f: ComplexField, a: Aperture) -> ComplexField:
    return ComplexField(f.grid, np.where(a.mask(f.grid), f.amplitude, 0))


def with_phase(f: ComplexField, phase: np.ndarray) -> ComplexField:
    if np.shape(phase) != f.amplitude.shape:
        raise FieldError(f"Phase map shape {np.shape(phase)} does not match field shape {f.amplitude.shape}")
    return ComplexField(f.grid, f.amplitude * np.exp(1j * phase))


def shift_field(f: ComplexField, dx: float, dy: float) -> ComplexField:
    """Translate a field by (dx, dy) meters with a spectral phase ramp (circular)."""
    if dx == 0 and dy == 0:
        return f
    fx, fy = f.grid.frequencies()
    ramp = np.exp(-2j * np.pi * (fx * dx + fy * dy))
    return ComplexField(f.grid, np.fft.ifft2(np.fft.fft2(f.amplitude) * ramp))


def focal_plane(f: ComplexField, focal_length: float, pad: int = 1) -> ComplexField:
    """Field in the back focal plane of a thin lens (Fraunhofer transform).

    The input is zero-padded to `pad` times its sample count, so the output
    pitch is wavelength * focal_length / (pad * extent). Power is conserved.
    """
    if not focal_length > 0:
        raise FieldError(f"Focal length must be positive, got {focal_length}")
    if isinstance(pad, bool) or not isinstance(pad, (int, np.integer)) or not _is_power_of_two(int(pad)):
        raise FieldError(f"Focal plane padding must be a power of two, got {pad!r}")
    grid = f.grid
    n = grid.n * int(pad)
    amplitude = f.amplitude
    if pad > 1:
        amplitude = np.zeros((n, n), dtype=np.complex128)
        start = n // 2 - grid.n // 2
        amplitude[start:start + grid.n, start:start + grid.n] = f.amplitude
    focal_pitch = grid.wavelength * focal_length / (grid.extent * pad)
    focal_grid = GridSpec(n=n, extent=focal_pitch * n, wavelength=grid.wavelength)
    spectrum = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(amplitude)))
    return ComplexField(focal_grid, spectrum * (grid.pitch / (focal_pitch * n)))


def fresnel_number_product(d_tx: float, d_rx: float, length: float, wavelength: float) -> float:
    """N_f = d_tx * d_rx / (4 * wavelength * length).

    >>> round(fresnel_number_product(0.0762, 0.0762, 340.0, 633e-9), 2)
    6.74
    """
    for name, value in (("d_tx", d_tx), ("d_rx", d_rx), ("length", length), ("wavelength", wavelength)):
        if not value > 0:
            raise FieldError(f"{name} must be positive, got {value}")
    return d_tx * d_rx / (4 * wavelength * length)
