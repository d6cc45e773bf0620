from hypothesis import given
from hypothesis import strategies as st
from oamlink.aoloop import (
    AdaptiveOpticsLoop, AoConfig, AoConfigError, Correction, DmConfig, DmState, dm_fit, dm_surface, flat_correction,
    FrozenFlowStream, LoopConfig, QuadCellConfig, QuadCellError, quadcell_measure, reconstruct, ReconstructionError,
    run_closed_loop, StaticPhaseStream, Telemetry, TELEMETRY_COLUMNS, TelemetryRow, tip_tilt_step, usable_subapertures,
    WfsConfig, WfsError, WfsMeasurement, wfs_measure
)
from oamlink.field import Aperture, ComplexField, make_grid, power, shift_field, zero_field
from oamlink.modes import ModeSpec, oam_field
from oamlink.statsd import StatsClient
from oamlink.turbatmos import PhaseScreen
from oamlink.zernike import pupil_polar, pupil_rms, zernike_eval, zernike_fit, zernike_polynomial
from tests.utils import ao_config, ao_grid, N_LENSLETS, PUPIL_DIAMETER, uniform_field, WAVELENGTH

import csv
import math
import numpy as np
import pytest

PUPIL = Aperture(PUPIL_DIAMETER)
CENTRAL_LENSLET = (N_LENSLETS // 2) * N_LENSLETS + N_LENSLETS // 2


def zernike_phase(coefficients: dict) -> np.ndarray:
    """Smooth phase over the whole grid from Noll coefficients on the AO pupil."""
    grid = ao_grid()
    rho, theta = pupil_polar(grid, PUPIL_DIAMETER)
    return sum(value * zernike_polynomial(j, rho, theta) for j, value in coefficients.items())


@pytest.fixture(name="wfs")
def fixture_wfs() -> WfsConfig:
    return WfsConfig(n_lenslets=N_LENSLETS, pupil_diameter=PUPIL_DIAMETER)


def test_usable_subapertures() -> None:
    assert usable_subapertures(4) == 12
    assert usable_subapertures(N_LENSLETS) > 15


def test_wfs_config_validation() -> None:
    with pytest.raises(AoConfigError):
        WfsConfig(n_lenslets=3, pupil_diameter=PUPIL_DIAMETER)
    with pytest.raises(AoConfigError):
        WfsConfig(n_lenslets=4, pupil_diameter=PUPIL_DIAMETER, n_terms=15)
    with pytest.raises(AoConfigError):
        WfsConfig(n_lenslets=N_LENSLETS, pupil_diameter=PUPIL_DIAMETER, frame_rate=0.0)


def test_slope_noise_grows_with_frame_rate() -> None:
    cfg = WfsConfig(n_lenslets=N_LENSLETS, pupil_diameter=PUPIL_DIAMETER, slope_noise_rms=0.1, frame_rate=4000.0)
    assert cfg.effective_noise_rms == pytest.approx(0.2)


def test_flat_wavefront_gives_zero_slopes(wfs: WfsConfig) -> None:
    m = wfs_measure(uniform_field(ao_grid()), wfs)
    assert m.valid_count >= 0.9 * usable_subapertures(N_LENSLETS)
    assert np.allclose(m.slopes_x, 0.0)
    assert np.allclose(m.slopes_y, 0.0)


def test_tilt_gives_uniform_slopes(wfs: WfsConfig) -> None:
    grid = ao_grid()
    x, _ = grid.coordinates()
    gradient = 200.0
    m = wfs_measure(ComplexField(grid, np.exp(1j * gradient * x)), wfs)
    np.testing.assert_allclose(m.slopes_x[m.valid], gradient * wfs.subaperture_size, rtol=1e-9)
    np.testing.assert_allclose(m.slopes_y[m.valid], 0.0, atol=1e-12)


def test_wfs_noise_level() -> None:
    cfg = WfsConfig(n_lenslets=N_LENSLETS, pupil_diameter=PUPIL_DIAMETER, slope_noise_rms=0.1, frame_rate=4000.0)
    m = wfs_measure(uniform_field(ao_grid()), cfg, seed=5)
    noise = np.concatenate([m.slopes_x[m.valid], m.slopes_y[m.valid]])
    assert np.std(noise) == pytest.approx(0.2, rel=0.1)


def test_wfs_rejects_dark_beacon(wfs: WfsConfig) -> None:
    with pytest.raises(WfsError):
        wfs_measure(zero_field(ao_grid()), wfs)


def test_vortex_beacon_leaves_central_subaperture_invalid(wfs: WfsConfig) -> None:
    vortex = oam_field(ModeSpec(1, PUPIL_DIAMETER / 1.5), ao_grid())
    m = wfs_measure(vortex, wfs)
    flat = wfs_measure(uniform_field(ao_grid()), wfs)
    assert flat.valid[CENTRAL_LENSLET]
    assert not m.valid[CENTRAL_LENSLET]
    assert m.valid_count < flat.valid_count


def test_subaperture_must_span_two_samples() -> None:
    coarse = make_grid(64, 0.03, WAVELENGTH)
    with pytest.raises(AoConfigError):
        wfs_measure(uniform_field(coarse), WfsConfig(n_lenslets=N_LENSLETS, pupil_diameter=PUPIL_DIAMETER))


def test_reconstruction_recovers_modes(wfs: WfsConfig) -> None:
    coefficients = {2: 0.3, 4: 0.5, 7: -0.2, 11: 0.1}
    m = wfs_measure(ComplexField(ao_grid(), np.exp(1j * zernike_phase(coefficients))), wfs)
    recovered = reconstruct(m, 15)
    expected = np.zeros(15)
    for j, value in coefficients.items():
        expected[j - 1] = value
    np.testing.assert_allclose(recovered.coeffs, expected, atol=1e-3)


def test_reconstruction_needs_enough_subapertures(wfs: WfsConfig) -> None:
    grid = ao_grid()
    count = N_LENSLETS**2
    valid = np.zeros(count, dtype=bool)
    valid[CENTRAL_LENSLET:CENTRAL_LENSLET + 5] = True
    m = WfsMeasurement(np.zeros(count), np.zeros(count), valid, grid, wfs)
    with pytest.raises(ReconstructionError):
        reconstruct(m, 15)
    with pytest.raises(ReconstructionError):
        reconstruct(m, 1)


def test_dm_geometry() -> None:
    dm = DmConfig(n_act=6, pitch=1e-3)
    assert dm.n_actuators == 32
    active = dm.active()
    assert not active[0, 0] and not active[5, 5] and active[0, 1]
    assert dm.actuator_positions().shape == (32, 2)
    assert dm.footprint_radius == pytest.approx(2.5e-3)


@pytest.mark.parametrize("kwargs", [{"n_act": 2}, {"coupling": 1.0}, {"coupling": 0.0}, {"pitch": 0.0}])
def test_dm_config_validation(kwargs) -> None:
    values = {"n_act": 6, "pitch": 1e-3}
    values.update(kwargs)
    with pytest.raises(AoConfigError):
        DmConfig(**values)


def test_dm_reproduces_its_own_surface() -> None:
    grid = ao_grid()
    dm = DmConfig(n_act=12, pitch=PUPIL_DIAMETER / 11)
    commands = np.random.default_rng(2).normal(0.0, 0.5, dm.n_actuators)
    surface = dm_surface(DmState(commands, np.zeros(dm.n_actuators, dtype=bool)), dm, grid)
    fitted = dm_surface(dm_fit(surface, dm, grid, PUPIL), dm, grid)
    assert pupil_rms(surface - fitted, grid, PUPIL) < 1e-2 * pupil_rms(surface, grid, PUPIL)


def test_dm_fits_low_order_modes() -> None:
    grid = ao_grid()
    dm = DmConfig(n_act=12, pitch=PUPIL_DIAMETER / 11)
    target = 0.5 * zernike_eval(4, grid, PUPIL_DIAMETER)
    fitted = dm_surface(dm_fit(target, dm, grid, PUPIL), dm, grid)
    assert pupil_rms(target - fitted, grid, PUPIL) < 0.1 * 0.5


def test_dm_poke_couples_to_neighbours() -> None:
    # actuator centers fall on grid samples, ten samples apart
    grid = make_grid(128, 0.0128, WAVELENGTH)
    dm = DmConfig(n_act=5, pitch=1e-3)
    poked = np.argmin(np.hypot(*dm.actuator_positions().T))
    commands = np.zeros(dm.n_actuators)
    commands[poked] = 1.0
    surface = dm_surface(DmState(commands, np.zeros(dm.n_actuators, dtype=bool)), dm, grid)
    middle = grid.n // 2
    assert surface[middle, middle] == pytest.approx(1.0)
    assert surface[middle, middle + 10] == pytest.approx(dm.coupling, abs=1e-3)
    assert surface[middle - 10, middle] == pytest.approx(dm.coupling, abs=1e-3)
    assert surface[middle + 10, middle + 10] == pytest.approx(dm.coupling**2, abs=1e-3)


def test_lab_mirror_cannot_shape_high_orders_across_the_signal_beam() -> None:
    # 2.4 mm pitch against a 4 mm beam: Z15 needs commands far beyond the stroke
    grid = ao_grid()
    beam = Aperture(4e-3)
    dm = DmConfig(n_act=6, pitch=2.4e-3)
    target = math.pi * zernike_eval(15, grid, beam.diameter)
    state = dm_fit(target, dm, grid, beam)
    fitted = dm_surface(state, dm, grid)
    assert state.saturated_count > 0
    assert pupil_rms(target - fitted, grid, beam) > 0.5 * pupil_rms(target, grid, beam)


def test_dm_stroke_saturates() -> None:
    grid = ao_grid()
    dm = DmConfig(n_act=12, pitch=PUPIL_DIAMETER / 11)
    state = dm_fit(np.full((grid.n, grid.n), 50.0), dm, grid, PUPIL)
    assert state.saturated_count > 0
    assert np.max(np.abs(state.commands)) <= dm.stroke_limit


def test_dm_footprint_must_cover_pupil() -> None:
    grid = ao_grid()
    with pytest.raises(AoConfigError):
        dm_fit(np.zeros((grid.n, grid.n)), DmConfig(n_act=6, pitch=1e-3), grid, PUPIL)
    with pytest.raises(AoConfigError):
        dm_surface(DmState(np.zeros(3), np.zeros(3, dtype=bool)), DmConfig(n_act=6, pitch=1e-3), grid)


def test_quadcell_reads_small_offsets() -> None:
    grid = ao_grid()
    waist = 1e-3
    beam = shift_field(oam_field(ModeSpec(0, waist), grid), 0.2e-3, -0.1e-3)
    x, y = quadcell_measure(beam, QuadCellConfig(spot_radius=waist))
    assert x == pytest.approx(0.2e-3, abs=5e-6)
    assert y == pytest.approx(-0.1e-3, abs=5e-6)


def test_quadcell_saturates_with_correct_sign() -> None:
    grid = ao_grid()
    waist = 1e-3
    beam = shift_field(oam_field(ModeSpec(0, waist), grid), 3e-3, 0.0)
    x, _ = quadcell_measure(beam, QuadCellConfig(spot_radius=waist))
    assert 0 < x < 3e-3


def test_quadcell_needs_light() -> None:
    with pytest.raises(QuadCellError):
        quadcell_measure(zero_field(ao_grid()), QuadCellConfig(spot_radius=1e-3))


@given(
    st.floats(min_value=-1e-3, max_value=1e-3, allow_nan=False),
    st.floats(min_value=-1e-3, max_value=1e-3, allow_nan=False),
    st.floats(min_value=0.01, max_value=1.0),
    st.integers(min_value=1, max_value=30),
)
def test_integrator_decays_geometrically(x: float, y: float, gain: float, steps: int) -> None:
    state = (x, y)
    for _ in range(steps):
        state = tip_tilt_step(state, state, gain)
    assert state[0] == pytest.approx(x * (1 - gain)**steps, rel=1e-9, abs=1e-300)
    assert state[1] == pytest.approx(y * (1 - gain)**steps, rel=1e-9, abs=1e-300)
    assert abs(state[0]) <= abs(x)


def test_loop_config_validation(wfs: WfsConfig) -> None:
    dm = DmConfig(n_act=12, pitch=PUPIL_DIAMETER / 11)
    with pytest.raises(AoConfigError):
        LoopConfig(gain=0.0)
    with pytest.raises(AoConfigError):
        LoopConfig(latency_frames=0)
    with pytest.raises(AoConfigError):
        AoConfig(wfs=wfs, dm=dm, loop=LoopConfig(loop_rate=2000.0), tip_tilt=False)
    with pytest.raises(AoConfigError):
        AoConfig(wfs=wfs, dm=dm)
    with pytest.raises(AoConfigError):
        AoConfig(wfs=wfs, dm=dm, beacon_waist=1e-3, tip_tilt=False, two_stage_tip_tilt=True)
    with pytest.raises(AoConfigError):
        AoConfig(wfs=wfs, dm=dm, beacon_waist=1e-3, focal_padding=3)


def test_flat_correction_is_identity() -> None:
    beam = oam_field(ModeSpec(1, 2e-3), ao_grid())
    applied = flat_correction(beam.grid).apply(beam)
    np.testing.assert_array_equal(applied.amplitude, beam.amplitude)
    shifted = Correction(np.zeros((beam.grid.n, beam.grid.n)), (1e-3, 0.0)).apply(beam)
    assert power(shifted) == pytest.approx(power(beam))


def test_telemetry(tmp_path) -> None:
    telemetry = Telemetry()
    for frame, residual in enumerate([1.0, 0.5, 0.2, 0.2]):
        telemetry.append(TelemetryRow(frame, frame / 1000, residual, 0.0, 0.0, 1 if frame == 1 else 0))
    assert len(telemetry) == 4
    assert telemetry.settled_residual(2) == pytest.approx(0.2)
    assert telemetry.saturation_events() == 1
    with pytest.raises(KeyError):
        telemetry.column("gain")
    path = tmp_path / "telemetry.csv"
    telemetry.write_csv(path)
    with open(path, newline="") as fp:
        rows = list(csv.reader(fp))
    assert tuple(rows[0]) == TELEMETRY_COLUMNS
    assert len(rows) == 5


def test_frozen_flow_stream_sums_layers() -> None:
    grid = ao_grid()
    beacon = oam_field(ModeSpec(0, 8e-3), grid)
    first = PhaseScreen(grid, np.full((grid.n, grid.n), 0.1), 0.05)
    second = PhaseScreen(grid, np.full((grid.n, grid.n), 0.2), 0.05)
    stream = FrozenFlowStream(beacon, [first, second])
    np.testing.assert_allclose(stream.phase(0, 0.0), 0.3)
    with pytest.raises(AoConfigError):
        FrozenFlowStream(beacon, [])
    with pytest.raises(AoConfigError):
        FrozenFlowStream(beacon, [PhaseScreen(make_grid(64, 0.03, WAVELENGTH), np.zeros((64, 64)), 0.05)])


def test_static_aberration_converges() -> None:
    grid = ao_grid()
    # terms 2..10 at 1 rad RMS in total
    phase = zernike_phase({j: 1 / 3 for j in range(2, 11)})
    beacon = oam_field(ModeSpec(0, PUPIL_DIAMETER / 1.5), grid)
    run = run_closed_loop(StaticPhaseStream(beacon, phase), ao_config(n_act=12), 0.06, seed=0)
    residual = run.telemetry.column("residual_rms_rad")
    assert residual[0] == pytest.approx(pupil_rms(phase, grid, PUPIL))
    assert np.mean(residual[-10:]) <= 0.2 * residual[0]


def test_latency_delays_the_first_correction() -> None:
    grid = ao_grid()
    phase = zernike_phase({4: 0.5, 6: 0.3})
    beacon = oam_field(ModeSpec(0, PUPIL_DIAMETER / 1.5), grid)
    run = run_closed_loop(StaticPhaseStream(beacon, phase), ao_config(latency_frames=2), 0.004, seed=0)
    residual = run.telemetry.column("residual_rms_rad")
    assert residual[0] == residual[1]
    assert residual[2] < residual[0]


def test_tip_tilt_stage_removes_only_tilt() -> None:
    grid = ao_grid()
    phase = zernike_phase({2: 0.5, 3: -0.4, 4: 0.5, 5: 0.3, 6: 0.3})
    beacon = oam_field(ModeSpec(0, 3e-3), grid)
    ao = ao_config(tip_tilt=True, dm_enabled=False, beacon_waist=3e-3)
    run = run_closed_loop(StaticPhaseStream(beacon, phase), ao, 0.06, seed=0)
    before = zernike_fit(phase, grid, PUPIL, 6)
    after = zernike_fit(phase + run.final_correction.phase, grid, PUPIL, 6)
    for j in (2, 3):
        assert abs(after.noll(j)) <= 0.2 * abs(before.noll(j))
    for j in (4, 5, 6):
        assert after.noll(j) == pytest.approx(before.noll(j), rel=0.05)


def test_position_stage_recenters_the_beacon() -> None:
    grid = ao_grid()
    waist = 3e-3
    beacon = oam_field(ModeSpec(0, waist, (0.5e-3, 0.0)), grid)
    ao = AoConfig(
        wfs=WfsConfig(n_lenslets=N_LENSLETS, pupil_diameter=PUPIL_DIAMETER),
        dm=DmConfig(n_act=12, pitch=PUPIL_DIAMETER / 11),
        beacon_waist=waist,
        two_stage_tip_tilt=True,
        dm_enabled=False,
    )
    run = run_closed_loop(StaticPhaseStream(beacon, np.zeros((grid.n, grid.n))), ao, 0.04, seed=0)
    assert run.final_correction.shift[0] == pytest.approx(-0.5e-3, abs=0.05e-3)
    assert run.final_correction.shift[1] == pytest.approx(0.0, abs=0.05e-3)


def test_run_closed_loop_reports_every_frame() -> None:
    grid = ao_grid()
    beacon = oam_field(ModeSpec(0, PUPIL_DIAMETER / 1.5), grid)
    frames = []
    run = run_closed_loop(
        StaticPhaseStream(beacon, zernike_phase({4: 0.2})),
        ao_config(),
        0.005,
        seed=1,
        on_frame=lambda frame, time_s, correction: frames.append((frame, time_s)),
        stats=StatsClient(host=None),
    )
    assert [frame for frame, _ in frames] == [0, 1, 2, 3, 4]
    assert frames[1][1] == pytest.approx(1e-3)
    assert len(run.telemetry) == 5
    assert run.dm_state.commands.shape == (ao_config().dm.n_actuators, )
    with pytest.raises(AoConfigError):
        run_closed_loop(StaticPhaseStream(beacon, np.zeros((grid.n, grid.n))), ao_config(), 0.0, seed=1)


def test_loop_rejects_foreign_grid() -> None:
    loop = AdaptiveOpticsLoop(ao_config(), ao_grid(), seed=0)
    with pytest.raises(AoConfigError):
        loop.step(oam_field(ModeSpec(0, 8e-3), make_grid(512, 0.03, WAVELENGTH)))
