"""
oamlink - end-to-end Monte Carlo runs

Realizations are independent: each draws fresh screens from
SeedSequence([seed, realization]) and a separate sensor-noise stream, so
runs that differ only in AO settings or encoding see identical turbulence.

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from oamlink import constants
from oamlink.aoloop import AoError, Correction, run_closed_loop, Telemetry, TurbulenceStream
from oamlink.config import Config, default_config
from oamlink.field import (
    apply_aperture, centroid, ComplexField, FieldError, Point, power, propagate, with_phase
)
from oamlink.harness.report import ModeEfficiency, RunReport
from oamlink.harness.scenario import (
    LinkScenario, PathElementKind, scenario_to_dict, ScenarioError, with_cn2, with_d_over_r0
)
from oamlink.modes import basis_fields, BasisKind, EncodingSpace, HybridSpace, ModeError, ModeSpec, oam_field
from oamlink.qkdsec import (
    crosstalk, CrosstalkMatrix, fidelity, fidelity_threshold, FidelityStats, mean_matrix, SecurityInputError
)
from oamlink.statsd import StatsClient
from oamlink.turbatmos import estimate_r0_from_wander, evolve_screen, make_screens, PhaseScreen, TurbulenceError
from oamlink.zernike import ZernikeError
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import logging
import math
import numpy as np

LOG = logging.getLogger(__name__)

MODULE_ERRORS = (AoError, FieldError, ModeError, SecurityInputError, TurbulenceError, ZernikeError)
SWEEP_PARAMETERS: Dict[str, Callable[[LinkScenario, float], LinkScenario]] = {
    "d_over_r0": with_d_over_r0,
    "cn2": with_cn2,
}


class RealizationError(Exception):
    """A realization failed; the message carries its realization and frame indices"""


def realization_seed(seed: int, realization: int, stream: int = 0) -> int:
    """Independent 32-bit seeds per (run seed, realization, stream); stream 0 drives the screens."""
    return int(np.random.SeedSequence([int(seed), int(realization), int(stream)]).generate_state(1)[0])


class LinkChannel(TurbulenceStream):
    """The scenario path with one realization's screens, evolved by frozen flow."""

    def __init__(
        self,
        scenario: LinkScenario,
        screens: Sequence[PhaseScreen],
        beacon: Optional[ComplexField] = None,
        *,
        power_fraction: float = constants.ALIASING_POWER_FRACTION,
    ):
        self.scenario = scenario
        self.power_fraction = power_fraction
        self.grid = scenario.grid
        self._screens = list(screens)
        self._beacon = beacon
        self._time: Optional[float] = None
        self._phases: List[np.ndarray] = []

    def _screen_phases(self, time_s: float) -> List[np.ndarray]:
        if self._time != time_s:
            self._phases = [evolve_screen(screen, time_s).phase for screen in self._screens]
            self._time = time_s
        return self._phases

    def transmit(self, f: ComplexField, time_s: float) -> ComplexField:
        phases = self._screen_phases(time_s)
        for element in self.scenario.path:
            if element.kind is PathElementKind.PROPAGATE:
                f = propagate(f, element.distance, power_fraction=self.power_fraction)
            elif element.kind is PathElementKind.SCREEN:
                f = with_phase(f, phases[element.layer])
            else:
                assert element.aperture is not None
                f = apply_aperture(f, element.aperture)
        return f

    def beacon(self, frame: int, time_s: float) -> ComplexField:
        if self._beacon is None:
            raise ScenarioError("Scenario has no beacon")
        return self.transmit(self._beacon, time_s)


def vacuum_reference(
    scenario: LinkScenario, f: ComplexField, power_fraction: float = constants.ALIASING_POWER_FRACTION
) -> ComplexField:
    """Turbulence-free, unclipped propagation over the link: what the receiver projects onto."""
    for element in scenario.path:
        if element.kind is PathElementKind.PROPAGATE:
            f = propagate(f, element.distance, power_fraction=power_fraction)
    return f


@dataclass
class _Bases:
    spaces: Dict[str, EncodingSpace]
    references: Dict[str, List[ComplexField]]
    zero_index: int


@dataclass
class RealizationResult:
    realization: int
    frames: List[int] = field(default_factory=list)
    matrices: Dict[str, List[CrosstalkMatrix]] = field(default_factory=dict)
    # per OAM member, per frame
    efficiency: List[List[float]] = field(default_factory=list)
    centroids: List[Point] = field(default_factory=list)
    telemetry: Optional[Telemetry] = None


def _prepare_bases(s: LinkScenario, config: Config) -> _Bases:
    spatial = s.spatial
    spaces: Dict[str, EncodingSpace] = {"oam": spatial.with_kind(BasisKind.OAM)}
    if spatial.spacing == 1:
        spaces["ang"] = spatial.with_kind(BasisKind.ANG)
    references = {
        basis: [vacuum_reference(s, f, float(config["aliasing_power_fraction"])) for f in basis_fields(space, s.grid)]
        for basis, space in spaces.items()
    }
    return _Bases(spaces, references, spatial.members.index(0))


def _run_realization(
    s: LinkScenario,
    realization: int,
    bases: _Bases,
    config: Config,
    stats: Optional[StatsClient],
) -> RealizationResult:
    LOG.info("Starting realization %d of %s", realization, s.name)
    frame = 0
    try:
        screens = make_screens(
            s.turbulence,
            s.grid,
            realization_seed(s.seed, realization),
            subharmonic_levels=int(config["subharmonic_levels"]),
        )
        beacon = None
        if s.ao is not None:
            beacon = oam_field(ModeSpec(0, s.ao.beacon_waist), s.grid)
        channel = LinkChannel(s, screens, beacon, power_fraction=float(config["aliasing_power_fraction"]))
        result = RealizationResult(realization)
        result.efficiency = [[] for _ in s.spatial.members]

        def measure(index: int, time_s: float, correction: Optional[Correction]) -> None:
            nonlocal frame
            frame = index
            if index < s.settle_frames:
                return

            def received(state: ComplexField) -> ComplexField:
                out = channel.transmit(state, time_s)
                return out if correction is None else correction.apply(out)

            oam_outputs: List[ComplexField] = []

            def recording(state: ComplexField) -> ComplexField:
                raw = channel.transmit(state, time_s)
                oam_outputs.append(raw)
                return raw if correction is None else correction.apply(raw)

            result.frames.append(index)
            for basis, space in bases.spaces.items():
                matrix = crosstalk(
                    space,
                    s.grid,
                    recording if basis == "oam" else received,
                    bases.references[basis],
                )
                result.matrices.setdefault(basis, []).append(matrix)
            for member, out in enumerate(oam_outputs):
                result.efficiency[member].append(power(out))
            result.centroids.append(centroid(oam_outputs[bases.zero_index]))

        if s.ao is None:
            for index in range(s.frames_per_realization):
                measure(index, index / s.frame_rate, None)
        else:
            run = run_closed_loop(
                channel,
                s.ao,
                s.frames_per_realization / s.frame_rate,
                realization_seed(s.seed, realization, 1),
                on_frame=measure,
                stats=stats,
            )
            result.telemetry = run.telemetry
            if stats is not None:
                stats.increase(
                    "oamlink.saturation_events", run.telemetry.saturation_events(), tags={"scenario": s.name}
                )
    except MODULE_ERRORS as e:
        if stats is not None:
            stats.unexpected_exception(e, where="realization", tags={"scenario": s.name})
        raise RealizationError(f"Realization {realization} failed at frame {frame}: {e}") from e
    LOG.info("Finished realization %d of %s", realization, s.name)
    return result


def _wander_r0(s: LinkScenario, centroids: List[Point]) -> Optional[float]:
    if s.turbulence.cn2 == 0:
        return None
    # distance from the mean screen position to the receiver
    position = 0.0
    screen_positions = []
    for element in s.path:
        if element.kind is PathElementKind.PROPAGATE:
            position += element.distance
        elif element.kind is PathElementKind.SCREEN:
            screen_positions.append(position)
    lever_arm = s.link_length - float(np.mean(screen_positions))
    try:
        return estimate_r0_from_wander(centroids, 2 * s.tx_waist, s.grid.wavelength, lever_arm)
    except TurbulenceError as e:
        LOG.debug("No wander r0 estimate: %s", e)
        return None


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _reduce(s: LinkScenario, results: List[RealizationResult], config: Config) -> RunReport:
    d = s.spatial.dimension
    threshold = fidelity_threshold(d)
    report = RunReport(
        name=s.name,
        seed=s.seed,
        d_over_r0=s.d_over_r0,
        ao_enabled=s.ao is not None,
        dimension=d,
        scenario=scenario_to_dict(s),
        config=dict(config),
    )
    if not results or not results[0].frames:
        return report

    series: Dict[str, List[float]] = {}
    matrices: Dict[str, List[CrosstalkMatrix]] = {}
    for result in results:
        report.series_index.extend((result.realization, frame) for frame in result.frames)
        for basis, basis_matrices in result.matrices.items():
            series.setdefault(basis, []).extend(fidelity(m) for m in basis_matrices)
            matrices.setdefault(basis, []).extend(basis_matrices)
    if "ang" in series:
        series["mub"] = list(np.mean([series["oam"], series["ang"]], axis=0))
    for basis, values in series.items():
        report.fidelity[basis] = FidelityStats.from_series(values, threshold)
        report.verdicts[basis] = report.fidelity[basis].mean > threshold
    if isinstance(s.encoding, HybridSpace):
        hybrid_threshold = fidelity_threshold(s.encoding.dimension)
        joint = [s.encoding.joint_fidelity(value) for value in series.get("mub", series["oam"])]
        report.fidelity["hybrid"] = FidelityStats.from_series(joint, hybrid_threshold)
        report.verdicts["hybrid"] = report.fidelity["hybrid"].mean > hybrid_threshold
    report.crosstalk = {basis: mean_matrix(basis_matrices) for basis, basis_matrices in matrices.items()}

    for member, ell in enumerate(s.spatial.members):
        values = np.concatenate([result.efficiency[member] for result in results])
        report.efficiency.append(ModeEfficiency(ell, float(np.mean(values)), float(np.std(values))))

    telemetry = [result.telemetry for result in results if result.telemetry is not None]
    report.telemetry = telemetry
    if telemetry:
        settled = [t.settled_residual(s.settle_frames) for t in telemetry]
        report.telemetry_summary = {
            "settled_residual_rms_rad": _finite_or_none(float(np.mean(settled))),
            "saturation_events": int(sum(t.saturation_events() for t in telemetry)),
            "frames": int(sum(len(t) for t in telemetry)),
        }
    report.wander_r0 = _wander_r0(s, [c for result in results for c in result.centroids])
    return report


def run_scenario(s: LinkScenario, config: Optional[Config] = None, stats: Optional[StatsClient] = None) -> RunReport:
    """Run every realization and reduce them in realization order."""
    config = config or default_config()
    workers = int(config["realization_workers"])
    LOG.info(
        "Running %s: %d realizations x %d frames, D/r0 %.3f, AO %s, %d workers",
        s.name,
        s.n_realizations,
        s.frames_per_realization,
        s.d_over_r0,
        "on" if s.ao is not None else "off",
        workers,
    )
    bases = _prepare_bases(s, config)

    def work(realization: int) -> RealizationResult:
        if stats is not None:
            with stats.timing_manager("oamlink.realization", tags={"scenario": s.name}):
                return _run_realization(s, realization, bases, config, stats)
        return _run_realization(s, realization, bases, config, stats)

    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="realization") as executor:
        results = list(executor.map(work, range(s.n_realizations)))
    report = _reduce(s, results, config)
    if stats is not None:
        for basis, basis_stats in report.fidelity.items():
            stats.gauge("oamlink.fidelity", basis_stats.mean, tags={"basis": basis, "scenario": s.name})
    return report


def mode_efficiency(s: LinkScenario, ell: int, config: Optional[Config] = None) -> Tuple[float, float]:
    """Mean and standard deviation of the power of LG_{0,ell} left after the path's apertures."""
    config = config or default_config()
    if s.n_realizations < 1:
        raise ScenarioError("Mode efficiency needs at least one realization")
    state = oam_field(ModeSpec(ell, s.spatial.waist), s.grid)
    values = []
    for realization in range(s.n_realizations):
        screens = make_screens(
            s.turbulence,
            s.grid,
            realization_seed(s.seed, realization),
            subharmonic_levels=int(config["subharmonic_levels"]),
        )
        channel = LinkChannel(s, screens, power_fraction=float(config["aliasing_power_fraction"]))
        for frame in range(s.frames_per_realization):
            values.append(power(channel.transmit(state, frame / s.frame_rate)))
    return float(np.mean(values)), float(np.std(values))


def sweep(
    s: LinkScenario,
    param: str,
    values: Sequence[float],
    config: Optional[Config] = None,
    stats: Optional[StatsClient] = None,
) -> List[Tuple[float, RunReport]]:
    try:
        update = SWEEP_PARAMETERS[param]
    except KeyError as e:
        raise ScenarioError(f"Cannot sweep {param!r}, choose from {', '.join(sorted(SWEEP_PARAMETERS))}") from e
    return [(float(value), run_scenario(update(s, value), config, stats)) for value in values]
