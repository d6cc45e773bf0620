"""
oamlink - Kolmogorov turbulence

Phase screens are synthesized in the Fourier domain (random complex weights
shaped by the cell-averaged Kolmogorov/von Karman phase PSD). The cells around
DC are drawn as off-grid plane waves, refined by three levels of 3x3
subharmonics, and the remaining innermost cell enters as a random tilt, which
keeps the large-scale statistics of a periodic FFT screen unbiased.
Random draws come from numpy's PCG64 Generator seeded by
SeedSequence([seed, layer]), so (params, seed) fully determines every screen.

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from dataclasses import dataclass
from functools import lru_cache
from oamlink import constants
from oamlink.field import GridSpec, Point
from oamlink.utils import json_encode
from pathlib import Path
from scipy.integrate import quad
from typing import List, Optional, Sequence, Tuple, Union

import json
import logging
import math
import numpy as np

LOG = logging.getLogger(__name__)

SCREEN_DTYPE = "<f8"
# FFT cells within this many samples of DC are replaced by off-grid plane waves
LOW_ORDER_BLOCK = 2
# sub-samples per axis when averaging the PSD over an FFT cell
PSD_CELL_SAMPLES = 4


class TurbulenceError(Exception):
    """Turbulence Error"""


def cn2_to_r0(cn2: float, path_length: float, wavelength: float) -> float:
    """Plane-wave Fried parameter for a uniform Cn2 path.

    >>> round(cn2_to_r0(1.9e-14, 340.0, 633e-9), 4)
    0.0348
    """
    if not cn2 > 0:
        raise TurbulenceError(f"Cn2 of {cn2} gives an infinite r0")
    if not path_length > 0 or not wavelength > 0:
        raise TurbulenceError("Path length and wavelength must be positive")
    k = 2 * math.pi / wavelength
    return (constants.PLANE_WAVE_R0_COEFFICIENT * k**2 * cn2 * path_length)**(-3 / 5)


def r0_to_cn2(r0: float, path_length: float, wavelength: float) -> float:
    if not r0 > 0:
        raise TurbulenceError(f"r0 must be positive, got {r0}")
    k = 2 * math.pi / wavelength
    return r0**(-5 / 3) / (constants.PLANE_WAVE_R0_COEFFICIENT * k**2 * path_length)


def rytov_variance(cn2: float, path_length: float, wavelength: float) -> float:
    """Plane-wave Rytov variance, reported as context for the scintillation regime."""
    k = 2 * math.pi / wavelength
    return 1.23 * cn2 * k**(7 / 6) * path_length**(11 / 6)


@dataclass(frozen=True)
class TurbulenceParams:
    cn2: float
    path_length: float
    wavelength: float
    wind_velocity: Point = (0.0, 0.0)
    n_screens: int = 1
    outer_scale: float = math.inf

    def __post_init__(self) -> None:
        if self.cn2 < 0:
            raise TurbulenceError(f"Cn2 must be non-negative, got {self.cn2}")
        if not self.path_length > 0:
            raise TurbulenceError(f"Path length must be positive, got {self.path_length}")
        if not self.wavelength > 0:
            raise TurbulenceError(f"Wavelength must be positive, got {self.wavelength}")
        if self.n_screens < 1:
            raise TurbulenceError(f"At least one screen is required, got {self.n_screens}")
        if not self.outer_scale > 0:
            raise TurbulenceError(f"Outer scale must be positive, got {self.outer_scale}")
        object.__setattr__(self, "wind_velocity", (float(self.wind_velocity[0]), float(self.wind_velocity[1])))

    @property
    def r0(self) -> float:
        if self.cn2 == 0:
            return math.inf
        return cn2_to_r0(self.cn2, self.path_length, self.wavelength)

    @property
    def layer_r0(self) -> float:
        """r0 of one of n_screens equal slabs; n layers combine back to r0."""
        if self.cn2 == 0:
            return math.inf
        return cn2_to_r0(self.cn2, self.path_length / self.n_screens, self.wavelength)

    @property
    def wind_speed(self) -> float:
        return math.hypot(*self.wind_velocity)


@dataclass(frozen=True, eq=False)
class PhaseScreen:
    grid: GridSpec
    phase: np.ndarray
    r0: float
    wind: Point = (0.0, 0.0)

    def __post_init__(self) -> None:
        phase = np.asarray(self.phase, dtype=np.float64)
        if phase.shape != (self.grid.n, self.grid.n):
            raise TurbulenceError(f"Screen shape {phase.shape} does not match grid of {self.grid.n} samples")
        object.__setattr__(self, "phase", phase)


def _phase_psd(f: np.ndarray, r0: float, outer_scale: float) -> np.ndarray:
    f0 = 0.0 if math.isinf(outer_scale) else 1 / outer_scale
    with np.errstate(divide="ignore"):
        return constants.PSD_COEFFICIENT * r0**(-5 / 3) * (f**2 + f0**2)**(-11 / 6)


@lru_cache(maxsize=16)
def _fft_amplitude(n: int, pitch: float, r0: float, outer_scale: float) -> np.ndarray:
    """Scale of every FFT weight: the PSD averaged over its cell, times the cell side."""
    del_f = 1 / (n * pitch)
    axis = np.arange(-n // 2, n // 2) * del_f
    fx, fy = np.meshgrid(axis, axis)
    offsets = ((np.arange(PSD_CELL_SAMPLES) + 0.5) / PSD_CELL_SAMPLES - 0.5) * del_f
    psd = np.zeros((n, n))
    for ox in offsets:
        for oy in offsets:
            psd += _phase_psd(np.hypot(fx + ox, fy + oy), r0, outer_scale)
    psd /= PSD_CELL_SAMPLES**2
    block = slice(n // 2 - LOW_ORDER_BLOCK, n // 2 + LOW_ORDER_BLOCK + 1)
    psd[block, block] = 0
    amplitude = np.sqrt(psd) * del_f
    amplitude.setflags(write=False)
    return amplitude


def _fft_screen(n: int, pitch: float, r0: float, outer_scale: float, rng: np.random.Generator) -> np.ndarray:
    amplitude = _fft_amplitude(n, pitch, r0, outer_scale)
    weights = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) * amplitude
    return np.real(np.fft.ifftshift(np.fft.ifft2(np.fft.ifftshift(weights))) * n**2)


def _cells(half: int) -> np.ndarray:
    k = np.arange(-half, half + 1, dtype=np.float64)
    kx, ky = np.meshgrid(k, k)
    keep = (kx != 0) | (ky != 0)
    return np.stack([kx[keep], ky[keep]], axis=1)


@lru_cache(maxsize=64)
def residual_tilt_variance(half_width: float, r0: float, outer_scale: float = math.inf) -> float:
    """Per-axis variance of the phase gradient, rad^2/m^2, carried by frequencies in [-half_width, half_width]^2.

    Over a screen much smaller than 1/half_width these frequencies act as a random tilt.
    """
    scale = constants.PSD_COEFFICIENT * r0**(-5 / 3)

    def radial(theta: float) -> float:
        edge = half_width / math.cos(theta)
        if math.isinf(outer_scale):
            return 3 * scale * edge**(1 / 3)
        f0_squared = outer_scale**-2
        value, _ = quad(lambda rho: scale * (rho**2 + f0_squared)**(-11 / 6) * rho**3, 0.0, edge)
        return value

    octant, _ = quad(radial, 0.0, math.pi / 4)
    return 16 * math.pi**2 * octant


def _low_order(
    n: int, pitch: float, r0: float, outer_scale: float, levels: int, rng: np.random.Generator
) -> np.ndarray:
    """Off-grid plane waves for the FFT block around DC, refined by `levels` 3x3 subharmonic subdivisions."""
    axis = (np.arange(n) - n // 2) * pitch
    del_f = 1 / (n * pitch)
    centers = [_cells(LOW_ORDER_BLOCK) * del_f]
    widths = [np.full(len(centers[0]), del_f)]
    ring = _cells(1)
    for _ in range(levels):
        del_f /= 3
        centers.append(ring * del_f)
        widths.append(np.full(len(ring), del_f))
    center = np.concatenate(centers)
    width = np.concatenate(widths)
    # uniform position inside each cell: the ensemble power then integrates the PSD over the cell
    f = center + (rng.random(center.shape) - 0.5) * width[:, None]
    psd = _phase_psd(np.hypot(f[:, 0], f[:, 1]), r0, outer_scale)
    weights = (rng.standard_normal(len(f)) + 1j * rng.standard_normal(len(f))) * np.sqrt(psd) * width
    waves_x = np.exp(2j * np.pi * np.outer(f[:, 0], axis))
    waves_y = np.exp(2j * np.pi * np.outer(f[:, 1], axis))
    low = np.real((waves_y.T * weights) @ waves_x)
    # innermost cell left after the last subdivision
    gx, gy = rng.standard_normal(2) * math.sqrt(residual_tilt_variance(del_f / 2, r0, outer_scale))
    low += gx * axis[None, :] + gy * axis[:, None]
    return low - np.mean(low)


def _band_limit(phase: np.ndarray) -> np.ndarray:
    # zero piston and the Nyquist row/column so spectral shifts stay exactly real and unitary
    n = phase.shape[0]
    spectrum = np.fft.fft2(phase)
    spectrum[0, 0] = 0
    spectrum[n // 2, :] = 0
    spectrum[:, n // 2] = 0
    return np.real(np.fft.ifft2(spectrum))


def synthesize_phase(
    grid: GridSpec,
    r0: float,
    rng: np.random.Generator,
    *,
    outer_scale: float = math.inf,
    subharmonic_levels: int = constants.SUBHARMONIC_LEVELS,
) -> np.ndarray:
    n = int(grid.n)
    if subharmonic_levels < 0:
        raise TurbulenceError(f"Subharmonic levels must be non-negative, got {subharmonic_levels}")
    phase = _fft_screen(n, grid.pitch, r0, outer_scale, rng)
    phase = phase + _low_order(n, grid.pitch, r0, outer_scale, subharmonic_levels, rng)
    return _band_limit(phase)


def screen_rng(seed: int, layer: int = 0) -> np.random.Generator:
    if seed < 0 or layer < 0:
        raise TurbulenceError(f"Seeds must be non-negative, got seed={seed} layer={layer}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(layer)]))


def make_screen(
    params: TurbulenceParams,
    grid: GridSpec,
    seed: int,
    *,
    layer: int = 0,
    subharmonic_levels: int = constants.SUBHARMONIC_LEVELS,
) -> PhaseScreen:
    r0 = params.layer_r0
    if math.isinf(r0):
        return PhaseScreen(grid, np.zeros((grid.n, grid.n)), r0, params.wind_velocity)
    if grid.extent < 8 * r0:
        LOG.debug("Grid extent %.4g m is below 8 r0 (r0=%.4g m); low-order statistics are approximate", grid.extent, r0)
    phase = synthesize_phase(
        grid,
        r0,
        screen_rng(seed, layer),
        outer_scale=params.outer_scale,
        subharmonic_levels=subharmonic_levels,
    )
    return PhaseScreen(grid, phase, r0, params.wind_velocity)


def make_screens(
    params: TurbulenceParams,
    grid: GridSpec,
    seed: int,
    *,
    subharmonic_levels: int = constants.SUBHARMONIC_LEVELS,
) -> List[PhaseScreen]:
    return [
        make_screen(params, grid, seed, layer=layer, subharmonic_levels=subharmonic_levels)
        for layer in range(params.n_screens)
    ]


def evolve_screen(s: PhaseScreen, dt: float) -> PhaseScreen:
    """Frozen-flow translation by wind * dt.

    The best-fit plane is carried analytically; the remainder moves through a
    spectral phase ramp, so it wraps around the grid edges.
    """
    if dt < 0:
        raise TurbulenceError(f"Time step must be non-negative, got {dt}")
    dx = s.wind[0] * dt
    dy = s.wind[1] * dt
    if dx == 0 and dy == 0:
        return s
    x, y = s.grid.coordinates()
    design = np.stack([np.ones(x.size), x.ravel(), y.ravel()], axis=1)
    (piston, gx, gy), *_ = np.linalg.lstsq(design, s.phase.ravel(), rcond=None)
    plane = piston + gx * x + gy * y
    fx, fy = s.grid.frequencies()
    ramp = np.exp(-2j * np.pi * (fx * dx + fy * dy))
    rest = np.real(np.fft.ifft2(np.fft.fft2(s.phase - plane) * ramp))
    return PhaseScreen(s.grid, rest + plane - gx * dx - gy * dy, s.r0, s.wind)


def greenwood_frequency(wind_speed: float, r0: float) -> float:
    """
    >>> round(greenwood_frequency(10.0, 0.0712), 1)
    60.0
    """
    if not r0 > 0:
        raise TurbulenceError(f"r0 must be positive, got {r0}")
    return constants.GREENWOOD_COEFFICIENT * wind_speed / r0


def structure_function(phase: np.ndarray, lags: Sequence[int]) -> np.ndarray:
    """Phase structure function at integer pixel lags, averaged over x and y separations."""
    values = []
    for lag in lags:
        if lag < 1 or lag >= phase.shape[0]:
            raise TurbulenceError(f"Lag {lag} outside the screen")
        dx = phase[:, lag:] - phase[:, :-lag]
        dy = phase[lag:, :] - phase[:-lag, :]
        values.append(0.5 * (np.mean(dx**2) + np.mean(dy**2)))
    return np.asarray(values)


def kolmogorov_structure_function(separation: Union[float, np.ndarray], r0: float) -> np.ndarray:
    return constants.STRUCTURE_FUNCTION_COEFFICIENT * (np.asarray(separation) / r0)**(5 / 3)


def estimate_r0_from_wander(
    centroid_series: Sequence[Tuple[float, float]],
    beam_diameter: float,
    wavelength: float,
    lever_arm: float,
) -> float:
    """Invert the one-axis tilt variance 0.182 (D/r0)^(5/3) (lambda/D)^2.

    `lever_arm` converts centroid displacement to angle: the propagation
    distance for a near-field measurement, the focal length for a focal-plane one.
    """
    points = np.asarray(centroid_series, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise TurbulenceError("Centroid series must be a sequence of (x, y) pairs")
    if points.shape[0] < 100:
        raise TurbulenceError(f"At least 100 centroid samples are needed, got {points.shape[0]}")
    if not beam_diameter > 0 or not wavelength > 0 or not lever_arm > 0:
        raise TurbulenceError("Beam diameter, wavelength and lever arm must be positive")
    if np.ptp(points, axis=0).max() == 0:
        raise TurbulenceError("Centroid series shows no measurable wander")
    variance = 0.5 * (np.var(points[:, 0], ddof=1) + np.var(points[:, 1], ddof=1))
    if not variance > 0:
        raise TurbulenceError("Centroid series shows no measurable wander")
    angle_variance = variance / lever_arm**2
    ratio = angle_variance / (constants.TILT_VARIANCE_COEFFICIENT * (wavelength / beam_diameter)**2)
    return float(beam_diameter * ratio**(-3 / 5))


def export_screen(screen: PhaseScreen, stem: Union[str, Path]) -> Tuple[Path, Path]:
    """Write `<stem>.bin` (row-major little-endian float64) and `<stem>.json` (header)."""
    stem = Path(stem)
    data_path = stem.with_suffix(".bin")
    header_path = stem.with_suffix(".json")
    data_path.write_bytes(np.ascontiguousarray(screen.phase, dtype=SCREEN_DTYPE).tobytes(order="C"))
    header = {
        "dtype": SCREEN_DTYPE,
        "extent": screen.grid.extent,
        "n": screen.grid.n,
        "order": "C",
        "r0": None if math.isinf(screen.r0) else screen.r0,
        "wavelength": screen.grid.wavelength,
        "wind": list(screen.wind),
    }
    header_path.write_text(json_encode(header, compact=False))
    return data_path, header_path


def import_screen(stem: Union[str, Path]) -> PhaseScreen:
    stem = Path(stem)
    try:
        header = json.loads(stem.with_suffix(".json").read_text())
        raw = stem.with_suffix(".bin").read_bytes()
    except (OSError, ValueError) as e:
        raise TurbulenceError(f"Cannot read screen {stem}: {e}") from e
    n = int(header["n"])
    phase = np.frombuffer(raw, dtype=header.get("dtype", SCREEN_DTYPE))
    if phase.size != n * n:
        raise TurbulenceError(f"Screen {stem} holds {phase.size} samples, header says {n}x{n}")
    grid = GridSpec(n=n, extent=float(header["extent"]), wavelength=float(header["wavelength"]))
    r0: Optional[float] = header.get("r0")
    return PhaseScreen(
        grid,
        phase.reshape(n, n).astype(np.float64),
        math.inf if r0 is None else float(r0),
        tuple(header.get("wind", (0.0, 0.0))),  # type: ignore
    )
