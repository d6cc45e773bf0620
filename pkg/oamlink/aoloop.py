"""
oamlink - adaptive-optics chain

Shack-Hartmann sensing on the beacon, modal Zernike reconstruction, a
Gaussian-influence deformable mirror, quad-cell driven tip/tilt and the
discrete integrator loop tying them together.

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field as dataclass_field
from functools import lru_cache
from oamlink import constants
from oamlink.field import (
    Aperture, centroid, ComplexField, focal_plane, GridSpec, Point, power, shift_field, with_phase
)
from oamlink.statsd import StatsClient
from oamlink.turbatmos import evolve_screen, PhaseScreen
from oamlink.zernike import pupil_rms, zernike_polynomial, zernike_reconstruct, ZernikeCoeffs
from pathlib import Path
from scipy.linalg import cho_factor, cho_solve
from scipy.special import erfinv
from typing import Callable, Deque, List, Optional, Sequence, Tuple, Union

import csv
import logging
import math
import numpy as np

LOG = logging.getLogger(__name__)

Seed = Union[None, int, np.random.Generator]

TELEMETRY_COLUMNS = (
    "frame",
    "time_s",
    "residual_rms_rad",
    "centroid_x_m",
    "centroid_y_m",
    "saturated_actuators",
)


class AoError(Exception):
    """Adaptive optics error"""


class AoConfigError(AoError):
    """Inconsistent adaptive optics configuration"""


class WfsError(AoError):
    """Wavefront sensing failed"""


class ReconstructionError(AoError):
    """Slope-to-Zernike system cannot be solved"""


class QuadCellError(AoError):
    """Quad-cell measurement failed"""


def _rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@lru_cache(maxsize=32)
def usable_subapertures(n_lenslets: int, min_fill: float = 0.5) -> int:
    """Lenslets of a square array inscribing a circular pupil with at least `min_fill` of their area inside it."""
    oversample = 16
    axis = (np.arange(n_lenslets * oversample) + 0.5) / (n_lenslets * oversample) * 2 - 1
    x, y = np.meshgrid(axis, axis)
    inside = (x**2 + y**2 <= 1).reshape(n_lenslets, oversample, n_lenslets, oversample)
    fill = inside.mean(axis=(1, 3))
    return int(np.count_nonzero(fill >= min_fill))


@dataclass(frozen=True)
class WfsConfig:
    n_lenslets: int
    pupil_diameter: float
    n_terms: int = constants.DEFAULT_ZERNIKE_TERMS
    frame_rate: float = constants.WFS_REFERENCE_FRAME_RATE
    # phase difference across one subaperture, radians, at reference_frame_rate
    slope_noise_rms: float = 0.0
    center: Point = (0.0, 0.0)
    reference_frame_rate: float = constants.WFS_REFERENCE_FRAME_RATE

    def __post_init__(self) -> None:
        if self.n_lenslets < 4:
            raise AoConfigError(f"At least 4 lenslets per side are required, got {self.n_lenslets}")
        if not self.pupil_diameter > 0:
            raise AoConfigError(f"Pupil diameter must be positive, got {self.pupil_diameter}")
        if not self.frame_rate > 0:
            raise AoConfigError(f"WFS frame rate must be positive, got {self.frame_rate}")
        if self.slope_noise_rms < 0:
            raise AoConfigError(f"Slope noise must be non-negative, got {self.slope_noise_rms}")
        if self.n_terms < 1:
            raise AoConfigError(f"At least one Zernike term is required, got {self.n_terms}")
        usable = usable_subapertures(self.n_lenslets)
        if self.n_terms > usable:
            raise AoConfigError(f"{self.n_terms} Zernike terms exceed the {usable} usable subapertures")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def subaperture_size(self) -> float:
        return self.pupil_diameter / self.n_lenslets

    @property
    def effective_noise_rms(self) -> float:
        """Slope noise at the configured frame rate; shorter exposures collect fewer photons."""
        return self.slope_noise_rms * math.sqrt(self.frame_rate / self.reference_frame_rate)

    @property
    def pupil(self) -> Aperture:
        return Aperture(self.pupil_diameter, self.center)


@dataclass(frozen=True)
class _LensletLayout:
    labels: np.ndarray
    usable: np.ndarray
    pairs_x: np.ndarray
    pairs_y: np.ndarray
    scale: float


@lru_cache(maxsize=16)
def _lenslet_layout(grid: GridSpec, cfg: WfsConfig) -> _LensletLayout:
    size = cfg.subaperture_size
    if size < 2 * grid.pitch:
        raise AoConfigError(f"Subaperture of {size:.4g} m spans fewer than 2 samples of pitch {grid.pitch:.4g} m")
    if cfg.pupil_diameter / 2 + max(abs(cfg.center[0]), abs(cfg.center[1])) > grid.extent / 2:
        raise AoConfigError(f"WFS pupil of {cfg.pupil_diameter} m does not fit the grid extent {grid.extent} m")
    n = cfg.n_lenslets
    radius = cfg.pupil_diameter / 2
    x, y = grid.coordinates()
    dx = x - cfg.center[0]
    dy = y - cfg.center[1]
    ix = np.floor((dx + radius) / size).astype(int)
    iy = np.floor((dy + radius) / size).astype(int)
    in_square = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)
    in_pupil = in_square & (dx**2 + dy**2 <= radius**2)
    index = iy * n + ix
    labels = np.where(in_pupil, index, -1)
    square_count = np.bincount(index[in_square], minlength=n * n)
    pupil_count = np.bincount(labels[in_pupil], minlength=n * n)
    usable = (square_count > 0) & (pupil_count >= 0.5 * square_count)
    labels = np.where(usable[np.clip(labels, 0, None)] & in_pupil, labels, -1)
    pairs_x = (labels[:, :-1] >= 0) & (labels[:, :-1] == labels[:, 1:])
    pairs_y = (labels[:-1, :] >= 0) & (labels[:-1, :] == labels[1:, :])
    for array in (labels, usable, pairs_x, pairs_y):
        array.setflags(write=False)
    # per-sample phase difference to phase difference across one subaperture
    return _LensletLayout(labels, usable, pairs_x, pairs_y, size / grid.pitch)


@dataclass(frozen=True, eq=False)
class WfsMeasurement:
    """Slopes are phase differences across one subaperture, radians, row-major over the lenslet array."""
    slopes_x: np.ndarray
    slopes_y: np.ndarray
    valid: np.ndarray
    grid: GridSpec
    config: WfsConfig

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))


def _per_lenslet_sum(labels: np.ndarray, weights: np.ndarray, count: int) -> np.ndarray:
    return np.bincount(labels, weights=weights, minlength=count)


def wfs_measure(beacon: ComplexField, cfg: WfsConfig, seed: Seed = None) -> WfsMeasurement:
    """Intensity-weighted mean phase gradient per subaperture, plus Gaussian read noise."""
    if not power(beacon) > 0:
        raise WfsError("Beacon carries no power")
    layout = _lenslet_layout(beacon.grid, cfg)
    count = cfg.n_lenslets**2
    u = beacon.amplitude
    products_x = np.conj(u[:, :-1]) * u[:, 1:]
    products_y = np.conj(u[:-1, :]) * u[1:, :]
    labels_x = layout.labels[:, :-1][layout.pairs_x]
    labels_y = layout.labels[:-1, :][layout.pairs_y]
    px = products_x[layout.pairs_x]
    py = products_y[layout.pairs_y]
    sum_x = _per_lenslet_sum(labels_x, px.real, count) + 1j * _per_lenslet_sum(labels_x, px.imag, count)
    sum_y = _per_lenslet_sum(labels_y, py.real, count) + 1j * _per_lenslet_sum(labels_y, py.imag, count)

    inside = layout.labels >= 0
    lenslet_power = _per_lenslet_sum(layout.labels[inside], beacon.intensity[inside], count)
    mean_power = float(np.mean(lenslet_power[layout.usable]))
    valid = layout.usable & (lenslet_power >= constants.INVALID_SUBAPERTURE_FRACTION * mean_power)
    valid &= (np.abs(sum_x) > 0) & (np.abs(sum_y) > 0)
    if not np.any(valid):
        raise WfsError("All subapertures are below the power threshold")

    slopes_x = np.where(valid, np.angle(sum_x) * layout.scale, 0.0)
    slopes_y = np.where(valid, np.angle(sum_y) * layout.scale, 0.0)
    noise = cfg.effective_noise_rms
    if noise > 0:
        rng = _rng(seed)
        slopes_x = slopes_x + np.where(valid, rng.normal(0.0, noise, count), 0.0)
        slopes_y = slopes_y + np.where(valid, rng.normal(0.0, noise, count), 0.0)
    return WfsMeasurement(slopes_x, slopes_y, valid, beacon.grid, cfg)


@lru_cache(maxsize=16)
def _interaction_matrix(grid: GridSpec, cfg: WfsConfig, n_terms: int) -> np.ndarray:
    """Expected slopes of unit Z_2..Z_n_terms, rows x-slopes then y-slopes."""
    layout = _lenslet_layout(grid, cfg)
    count = cfg.n_lenslets**2
    x, y = grid.coordinates()
    dx = x - cfg.center[0]
    dy = y - cfg.center[1]
    rho = np.hypot(dx, dy) / (cfg.pupil_diameter / 2)
    theta = np.arctan2(dy, dx)
    labels_x = layout.labels[:, :-1][layout.pairs_x]
    labels_y = layout.labels[:-1, :][layout.pairs_y]
    pairs_per_x = np.maximum(np.bincount(labels_x, minlength=count), 1)
    pairs_per_y = np.maximum(np.bincount(labels_y, minlength=count), 1)
    columns = []
    for j in range(2, n_terms + 1):
        z = zernike_polynomial(j, rho, theta)
        diff_x = (z[:, 1:] - z[:, :-1])[layout.pairs_x]
        diff_y = (z[1:, :] - z[:-1, :])[layout.pairs_y]
        gx = np.bincount(labels_x, weights=diff_x, minlength=count) / pairs_per_x * layout.scale
        gy = np.bincount(labels_y, weights=diff_y, minlength=count) / pairs_per_y * layout.scale
        columns.append(np.concatenate([gx, gy]))
    matrix = np.stack(columns, axis=1)
    matrix.setflags(write=False)
    return matrix


def reconstruct(m: WfsMeasurement, n_terms: int) -> ZernikeCoeffs:
    """Least-squares modal reconstruction; piston is unobservable and returned as 0."""
    if n_terms < 2:
        raise ReconstructionError(f"At least tip and tilt must be reconstructed, got n_terms={n_terms}")
    if m.valid_count < n_terms:
        raise ReconstructionError(f"{m.valid_count} valid subapertures cannot determine {n_terms} terms")
    matrix = _interaction_matrix(m.grid, m.config, int(n_terms))
    rows = np.concatenate([m.valid, m.valid])
    system = matrix[rows]
    slopes = np.concatenate([m.slopes_x[m.valid], m.slopes_y[m.valid]])
    if np.linalg.matrix_rank(system) < n_terms - 1:
        raise ReconstructionError(f"Slope system for {n_terms} terms is rank deficient")
    solution, *_ = np.linalg.lstsq(system, slopes, rcond=None)
    slope_norm = float(np.linalg.norm(slopes))
    if slope_norm > 0:
        unexplained = float(np.linalg.norm(slopes - system @ solution)) / slope_norm
        LOG.debug("Reconstruction with %d terms leaves %.3f of the slope norm unexplained", n_terms, unexplained)
    return ZernikeCoeffs(np.concatenate([[0.0], solution]))


@dataclass(frozen=True)
class DmConfig:
    n_act: int
    pitch: float
    coupling: float = constants.DEFAULT_DM_COUPLING
    stroke_limit: float = 4 * math.pi
    center: Point = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.n_act < 3:
            raise AoConfigError(f"At least 3 actuators per side are required, got {self.n_act}")
        if not self.pitch > 0:
            raise AoConfigError(f"Actuator pitch must be positive, got {self.pitch}")
        if not 0 < self.coupling < 1:
            raise AoConfigError(f"Inter-actuator coupling must be in (0, 1), got {self.coupling}")
        if not self.stroke_limit > 0:
            raise AoConfigError(f"Stroke limit must be positive, got {self.stroke_limit}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def n_actuators(self) -> int:
        return self.n_act**2 - 4

    @property
    def footprint_radius(self) -> float:
        return (self.n_act - 1) / 2 * self.pitch

    def axis(self) -> np.ndarray:
        return (np.arange(self.n_act) - (self.n_act - 1) / 2) * self.pitch

    def active(self) -> np.ndarray:
        """Boolean n_act x n_act lattice with the four corners removed."""
        lattice = np.ones((self.n_act, self.n_act), dtype=bool)
        last = self.n_act - 1
        for row, col in ((0, 0), (0, last), (last, 0), (last, last)):
            lattice[row, col] = False
        return lattice

    def actuator_positions(self) -> np.ndarray:
        axis = self.axis()
        ax, ay = np.meshgrid(axis + self.center[0], axis + self.center[1])
        active = self.active()
        return np.stack([ax[active], ay[active]], axis=1)


@dataclass(frozen=True, eq=False)
class DmState:
    commands: np.ndarray
    saturated: np.ndarray

    @classmethod
    def zeros(cls, cfg: DmConfig) -> "DmState":
        return cls(np.zeros(cfg.n_actuators), np.zeros(cfg.n_actuators, dtype=bool))

    @property
    def saturated_count(self) -> int:
        return int(np.count_nonzero(self.saturated))


@lru_cache(maxsize=16)
def _influence_axes(cfg: DmConfig, grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    # coupling ** (r / pitch)**2 separates into a product of one-dimensional factors
    x, y = grid.coordinates()
    axis = cfg.axis()
    log_coupling = math.log(cfg.coupling)
    ex = np.exp(log_coupling * ((x[0][None, :] - cfg.center[0] - axis[:, None]) / cfg.pitch)**2)
    ey = np.exp(log_coupling * ((y[:, 0][None, :] - cfg.center[1] - axis[:, None]) / cfg.pitch)**2)
    ex.setflags(write=False)
    ey.setflags(write=False)
    return ex, ey


def dm_surface(state: DmState, cfg: DmConfig, grid: GridSpec) -> np.ndarray:
    """Phase added by the mirror, radians."""
    commands = np.asarray(state.commands, dtype=np.float64)
    if commands.shape != (cfg.n_actuators, ):
        raise AoConfigError(f"Expected {cfg.n_actuators} actuator commands, got {commands.shape}")
    ex, ey = _influence_axes(cfg, grid)
    lattice = np.zeros((cfg.n_act, cfg.n_act))
    lattice[cfg.active()] = commands
    return ey.T @ lattice @ ex


@lru_cache(maxsize=16)
def _dm_solver(cfg: DmConfig, grid: GridSpec, pupil: Aperture) -> Tuple[np.ndarray, Tuple[np.ndarray, bool]]:
    ex, ey = _influence_axes(cfg, grid)
    mask = pupil.mask(grid)
    rows, cols = np.nonzero(mask)
    act_rows, act_cols = np.nonzero(cfg.active())
    responses = ey[act_rows][:, rows] * ex[act_cols][:, cols]
    gram = responses @ responses.T
    gram += 1e-6 * np.mean(np.diag(gram)) * np.eye(gram.shape[0])
    return mask, cho_factor(gram)


def dm_fit(target_phase: np.ndarray, cfg: DmConfig, grid: GridSpec, pupil: Aperture) -> DmState:
    """Commands minimizing the RMS of target - surface over the pupil, clamped to the stroke."""
    if np.shape(target_phase) != (grid.n, grid.n):
        raise AoConfigError(f"Target shape {np.shape(target_phase)} does not match grid of {grid.n} samples")
    offset = math.hypot(pupil.center_offset[0] - cfg.center[0], pupil.center_offset[1] - cfg.center[1])
    if pupil.radius + offset > cfg.footprint_radius + cfg.pitch / 2:
        raise AoConfigError(
            f"Pupil of diameter {pupil.diameter} m exceeds the actuator footprint of {cfg.n_act} x {cfg.pitch} m"
        )
    mask, factor = _dm_solver(cfg, grid, pupil)
    ex, ey = _influence_axes(cfg, grid)
    projected = ey @ np.where(mask, target_phase, 0.0) @ ex.T
    commands = cho_solve(factor, projected[cfg.active()])
    saturated = np.abs(commands) > cfg.stroke_limit
    if np.any(saturated):
        LOG.debug("%d of %d actuators saturated", np.count_nonzero(saturated), saturated.size)
    return DmState(np.clip(commands, -cfg.stroke_limit, cfg.stroke_limit), saturated)


@dataclass(frozen=True)
class QuadCellConfig:
    spot_radius: float
    noise_rms: float = 0.0
    center: Point = (0.0, 0.0)
    max_signal: float = 0.99

    def __post_init__(self) -> None:
        if not self.spot_radius > 0:
            raise AoConfigError(f"Quad-cell spot radius must be positive, got {self.spot_radius}")
        if self.noise_rms < 0:
            raise AoConfigError(f"Quad-cell noise must be non-negative, got {self.noise_rms}")
        if not 0 < self.max_signal < 1:
            raise AoConfigError(f"Quad-cell signal clip must be in (0, 1), got {self.max_signal}")


def quadcell_measure(beam: ComplexField, cfg: QuadCellConfig, seed: Seed = None) -> Point:
    """Position from the normalized quadrant differences, inverted through the Gaussian transfer curve.

    Samples on a dividing line count half to each side. Signals beyond
    max_signal are clipped, so large offsets saturate with the correct sign.
    """
    intensity = beam.intensity
    total = float(np.sum(intensity))
    if not total > 0:
        raise QuadCellError("Quad-cell sees no power")
    x, y = beam.grid.coordinates()
    signal_x = float(np.sum(intensity * np.sign(x - cfg.center[0]))) / total
    signal_y = float(np.sum(intensity * np.sign(y - cfg.center[1]))) / total
    scale = cfg.spot_radius / math.sqrt(2)
    estimate_x = scale * float(erfinv(np.clip(signal_x, -cfg.max_signal, cfg.max_signal)))
    estimate_y = scale * float(erfinv(np.clip(signal_y, -cfg.max_signal, cfg.max_signal)))
    if cfg.noise_rms > 0:
        noise = _rng(seed).normal(0.0, cfg.noise_rms, 2)
        estimate_x += float(noise[0])
        estimate_y += float(noise[1])
    return estimate_x, estimate_y


def tip_tilt_step(measured: Point, state: Point, gain: float, scale: float = 1.0) -> Point:
    """Integrator: state <- state - gain * scale * measured."""
    return state[0] - gain * scale * measured[0], state[1] - gain * scale * measured[1]


@dataclass(frozen=True)
class LoopConfig:
    gain: float = constants.DEFAULT_LOOP_GAIN
    loop_rate: float = constants.WFS_REFERENCE_FRAME_RATE
    latency_frames: int = constants.DEFAULT_LATENCY_FRAMES
    tip_tilt_gain: float = constants.DEFAULT_LOOP_GAIN

    def __post_init__(self) -> None:
        if not 0 < self.gain <= 1:
            raise AoConfigError(f"Loop gain must be in (0, 1], got {self.gain}")
        if not 0 < self.tip_tilt_gain <= 1:
            raise AoConfigError(f"Tip/tilt gain must be in (0, 1], got {self.tip_tilt_gain}")
        if not self.loop_rate > 0:
            raise AoConfigError(f"Loop rate must be positive, got {self.loop_rate}")
        if self.latency_frames < 1:
            raise AoConfigError(f"Latency must be at least one frame, got {self.latency_frames}")


@dataclass(frozen=True)
class AoConfig:
    wfs: WfsConfig
    dm: DmConfig
    loop: LoopConfig = LoopConfig()
    # far-field position detector behind a lens of this focal length
    focal_length: float = 0.2
    # zero padding of the lens transform, keeps the far-field spot several samples wide
    focal_padding: int = 4
    beacon_waist: float = 0.0
    # meters on either position detector
    quadcell_noise_rms: float = 0.0
    tip_tilt: bool = True
    two_stage_tip_tilt: bool = False
    dm_enabled: bool = True

    def __post_init__(self) -> None:
        if self.loop.loop_rate > self.wfs.frame_rate:
            raise AoConfigError(f"Loop rate {self.loop.loop_rate} Hz exceeds the WFS frame rate {self.wfs.frame_rate} Hz")
        if not self.focal_length > 0:
            raise AoConfigError(f"Focal length must be positive, got {self.focal_length}")
        if self.focal_padding < 1 or self.focal_padding & (self.focal_padding - 1):
            raise AoConfigError(f"Focal padding must be a power of two, got {self.focal_padding}")
        if (self.tip_tilt or self.two_stage_tip_tilt) and not self.beacon_waist > 0:
            raise AoConfigError("Tip/tilt sensing needs a positive beacon waist")
        if self.two_stage_tip_tilt and not self.tip_tilt:
            raise AoConfigError("The position stage requires the tip/tilt stage")

    @property
    def pupil(self) -> Aperture:
        return self.wfs.pupil


@dataclass(frozen=True, eq=False)
class Correction:
    """What the loop applies to a field: a translation, then a phase map (tilt plus mirror)."""
    phase: np.ndarray
    shift: Point = (0.0, 0.0)
    saturated_actuators: int = 0

    def apply(self, f: ComplexField) -> ComplexField:
        return with_phase(shift_field(f, *self.shift), self.phase)


def flat_correction(grid: GridSpec) -> Correction:
    return Correction(np.zeros((grid.n, grid.n)))


@dataclass(frozen=True)
class TelemetryRow:
    frame: int
    time_s: float
    residual_rms_rad: float
    centroid_x_m: float
    centroid_y_m: float
    saturated_actuators: int


@dataclass
class Telemetry:
    rows: List[TelemetryRow] = dataclass_field(default_factory=list)

    def append(self, row: TelemetryRow) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        if name not in TELEMETRY_COLUMNS:
            raise KeyError(name)
        return np.array([getattr(row, name) for row in self.rows])

    def settled_residual(self, settle_frames: int = 0) -> float:
        residual = self.column("residual_rms_rad")[settle_frames:]
        if residual.size == 0:
            raise AoError(f"No telemetry after {settle_frames} settling frames")
        return float(np.mean(residual))

    def saturation_events(self) -> int:
        return int(np.count_nonzero(self.column("saturated_actuators")))

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(TELEMETRY_COLUMNS)
            for row in self.rows:
                writer.writerow([getattr(row, name) for name in TELEMETRY_COLUMNS])


class TurbulenceStream(ABC):
    """Time-ordered channel seen by the loop at the wavefront-sensor plane."""

    grid: GridSpec

    @abstractmethod
    def beacon(self, frame: int, time_s: float) -> ComplexField:
        """Uncorrected beacon field for the given frame"""

    def phase(self, frame: int, time_s: float) -> Optional[np.ndarray]:
        """True pupil phase, when the stream knows it"""
        return None


class StaticPhaseStream(TurbulenceStream):
    def __init__(self, beacon: ComplexField, phase: np.ndarray) -> None:
        self.grid = beacon.grid
        self._phase = np.asarray(phase, dtype=np.float64)
        self._beacon = with_phase(beacon, self._phase)

    def beacon(self, frame: int, time_s: float) -> ComplexField:
        return self._beacon

    def phase(self, frame: int, time_s: float) -> Optional[np.ndarray]:
        return self._phase


class FrozenFlowStream(TurbulenceStream):
    """Thin-screen stream: every layer translates with its own wind and the phases add in the pupil."""

    def __init__(self, beacon: ComplexField, screens: Sequence[PhaseScreen]) -> None:
        if not screens:
            raise AoConfigError("At least one screen is required")
        for screen in screens:
            if screen.grid != beacon.grid:
                raise AoConfigError("Screens and beacon must share a grid")
        self.grid = beacon.grid
        self._beacon = beacon
        self._screens = list(screens)
        self._last: Optional[Tuple[float, np.ndarray]] = None

    def phase(self, frame: int, time_s: float) -> Optional[np.ndarray]:
        if self._last is None or self._last[0] != time_s:
            total = np.sum([evolve_screen(screen, time_s).phase for screen in self._screens], axis=0)
            self._last = (time_s, total)
        return self._last[1]

    def beacon(self, frame: int, time_s: float) -> ComplexField:
        return with_phase(self._beacon, self.phase(frame, time_s))


class AdaptiveOpticsLoop:
    """Stateful single-conjugate controller.

    The correction used at frame k was computed from the measurement at
    frame k - latency_frames; until then a flat correction is applied.
    """

    def __init__(self, config: AoConfig, grid: GridSpec, seed: int, stats: Optional[StatsClient] = None) -> None:
        self.log = logging.getLogger("AdaptiveOpticsLoop")
        self.config = config
        self.grid = grid
        self.stats = stats
        self._rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA0]))
        self._pupil = config.pupil
        self._far_field = QuadCellConfig(
            spot_radius=grid.wavelength * config.focal_length / (math.pi * config.beacon_waist)
            if config.beacon_waist > 0 else 1.0,
            noise_rms=config.quadcell_noise_rms,
        )
        self._near_field = QuadCellConfig(
            spot_radius=config.beacon_waist if config.beacon_waist > 0 else 1.0,
            noise_rms=config.quadcell_noise_rms,
        )
        self._n_terms = config.wfs.n_terms
        self._modal_state = np.zeros(self._n_terms)
        self._tilt: Point = (0.0, 0.0)
        self._position: Point = (0.0, 0.0)
        self._dm_state = DmState.zeros(config.dm)
        self._pending: Deque[Correction] = deque(flat_correction(grid) for _ in range(config.loop.latency_frames))
        self.frame = 0
        x, y = grid.coordinates()
        self._x = x
        self._y = y

    @property
    def current(self) -> Correction:
        """Correction the next step will apply."""
        return self._pending[0]

    @property
    def dm_state(self) -> DmState:
        return self._dm_state

    def step(self, beacon: ComplexField, true_phase: Optional[np.ndarray] = None) -> TelemetryRow:
        if beacon.grid != self.grid:
            raise AoConfigError("Beacon grid does not match the loop grid")
        if self.stats is not None:
            with self.stats.timing_manager("oamlink.ao_step"):
                return self._step(beacon, true_phase)
        return self._step(beacon, true_phase)

    def _step(self, beacon: ComplexField, true_phase: Optional[np.ndarray]) -> TelemetryRow:
        cfg = self.config
        applied = self._pending.popleft()
        corrected = applied.apply(beacon)
        far_field = focal_plane(corrected, cfg.focal_length, cfg.focal_padding)
        spot_x, spot_y = centroid(far_field)

        if cfg.tip_tilt:
            measured = quadcell_measure(far_field, self._far_field, self._rng)
            self._tilt = tip_tilt_step(measured, self._tilt, cfg.loop.tip_tilt_gain, 1 / cfg.focal_length)
        if cfg.two_stage_tip_tilt:
            measured = quadcell_measure(corrected, self._near_field, self._rng)
            self._position = tip_tilt_step(measured, self._position, cfg.loop.tip_tilt_gain)

        residual_coeffs = None
        if cfg.dm_enabled:
            measurement = wfs_measure(corrected, cfg.wfs, self._rng)
            residual_coeffs = reconstruct(measurement, self._n_terms)
            update = residual_coeffs.coeffs.copy()
            if cfg.tip_tilt:
                # offloaded to the steering mirror
                update[1:3] = 0.0
            self._modal_state -= cfg.loop.gain * update
            target = zernike_reconstruct(ZernikeCoeffs(self._modal_state), self.grid, self._pupil.diameter,
                                         self._pupil.center_offset)
            self._dm_state = dm_fit(target, cfg.dm, self.grid, self._pupil)

        phase = self.grid.k * (self._tilt[0] * self._x + self._tilt[1] * self._y)
        if cfg.dm_enabled:
            phase = phase + dm_surface(self._dm_state, cfg.dm, self.grid)
        self._pending.append(Correction(phase, self._position, self._dm_state.saturated_count))

        if true_phase is not None:
            residual = pupil_rms(np.asarray(true_phase) + applied.phase, self.grid, self._pupil)
        elif residual_coeffs is not None:
            residual = residual_coeffs.rms()
        else:
            residual = math.nan
        row = TelemetryRow(
            frame=self.frame,
            time_s=self.frame / cfg.loop.loop_rate,
            residual_rms_rad=float(residual),
            centroid_x_m=spot_x,
            centroid_y_m=spot_y,
            saturated_actuators=applied.saturated_actuators,
        )
        self.frame += 1
        return row


@dataclass(frozen=True, eq=False)
class LoopRun:
    telemetry: Telemetry
    final_correction: Correction
    dm_state: DmState


FrameCallback = Callable[[int, float, Correction], None]


def run_closed_loop(
    channel: TurbulenceStream,
    ao: AoConfig,
    duration: float,
    seed: int,
    *,
    on_frame: Optional[FrameCallback] = None,
    stats: Optional[StatsClient] = None,
) -> LoopRun:
    """Drive the loop at ao.loop.loop_rate for `duration` seconds.

    `on_frame(frame, time_s, correction)` receives the correction in force
    during each frame, which is how callers build the corrected signal stream.
    """
    if not duration > 0:
        raise AoConfigError(f"Duration must be positive, got {duration}")
    n_frames = int(round(duration * ao.loop.loop_rate))
    if n_frames < 1:
        raise AoConfigError(f"Duration {duration} s is shorter than one loop period")
    loop = AdaptiveOpticsLoop(ao, channel.grid, seed, stats=stats)
    telemetry = Telemetry()
    for frame in range(n_frames):
        time_s = frame / ao.loop.loop_rate
        applied = loop.current
        if on_frame is not None:
            on_frame(frame, time_s, applied)
        telemetry.append(loop.step(channel.beacon(frame, time_s), channel.phase(frame, time_s)))
    LOG.info(
        "Closed loop ran %d frames, mean residual %.4f rad, %d frames with saturation",
        n_frames,
        telemetry.settled_residual(),
        telemetry.saturation_events(),
    )
    return LoopRun(telemetry, loop.current, loop.dm_state)
