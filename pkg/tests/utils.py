"""
oamlink - shared test builders

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from oamlink.aoloop import AoConfig, DmConfig, LoopConfig, WfsConfig
from oamlink.field import ComplexField, GridSpec, make_grid
from oamlink.harness.scenario import aperture_step, LinkScenario, propagate_step, screen_step, with_d_over_r0
from oamlink.modes import BasisKind, EncodingSpace
from oamlink.turbatmos import TurbulenceParams
from typing import Optional, Tuple

import numpy as np

WAVELENGTH = 633e-9
WAIST = 2e-3

# pupil and lenslet geometry shared by the AO tests
PUPIL_DIAMETER = 12e-3
N_LENSLETS = 23


def small_grid(n: int = 128, extent: float = 0.02) -> GridSpec:
    return make_grid(n, extent, WAVELENGTH)


def ao_grid() -> GridSpec:
    return make_grid(256, 0.03, WAVELENGTH)


def random_field(grid: GridSpec, seed: int) -> ComplexField:
    rng = np.random.default_rng(seed)
    return ComplexField(grid, rng.standard_normal((grid.n, grid.n)) + 1j * rng.standard_normal((grid.n, grid.n)))


def uniform_field(grid: GridSpec) -> ComplexField:
    return ComplexField(grid, np.ones((grid.n, grid.n), dtype=np.complex128))


def ao_config(
    *,
    n_act: int = 12,
    tip_tilt: bool = False,
    dm_enabled: bool = True,
    beacon_waist: float = 0.0,
    latency_frames: int = 1,
    gain: float = 0.3,
    slope_noise_rms: float = 0.0,
) -> AoConfig:
    return AoConfig(
        wfs=WfsConfig(n_lenslets=N_LENSLETS, pupil_diameter=PUPIL_DIAMETER, slope_noise_rms=slope_noise_rms),
        dm=DmConfig(n_act=n_act, pitch=PUPIL_DIAMETER / (n_act - 1)),
        loop=LoopConfig(gain=gain, latency_frames=latency_frames, tip_tilt_gain=gain),
        beacon_waist=beacon_waist,
        tip_tilt=tip_tilt,
        dm_enabled=dm_enabled,
    )


def tiny_scenario(
    d_over_r0: float = 1.0,
    *,
    n_realizations: int = 2,
    frames_per_realization: int = 1,
    seed: int = 0,
    aperture: Optional[float] = None,
    segments: Tuple[float, float] = (0.5, 0.5),
) -> LinkScenario:
    """Three-dimensional OAM link with one screen halfway, sized for fast unit tests."""
    encoding = EncodingSpace(BasisKind.OAM, max_ell=1, spacing=1, waist=WAIST)
    grid = make_grid(128, 4 * 2 * WAIST * np.sqrt(2), WAVELENGTH)
    path = [propagate_step(segments[0]), screen_step(0), propagate_step(segments[1])]
    if aperture is not None:
        path.append(aperture_step(aperture))
    length = sum(segments)
    scenario = LinkScenario(
        name="tiny",
        grid=grid,
        tx_waist=WAIST,
        path=tuple(path),
        turbulence=TurbulenceParams(cn2=0.0, path_length=length, wavelength=WAVELENGTH),
        encoding=encoding,
        link_length=length,
        reference_diameter=2 * WAIST,
        n_realizations=n_realizations,
        frames_per_realization=frames_per_realization,
        seed=seed,
    )
    return with_d_over_r0(scenario, d_over_r0)
