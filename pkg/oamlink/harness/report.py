"""
oamlink - run reports

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from dataclasses import dataclass, field
from oamlink import constants
from oamlink.aoloop import Telemetry, TELEMETRY_COLUMNS
from oamlink.modes import BasisKind
from oamlink.qkdsec import CrosstalkMatrix, FidelityStats
from oamlink.utils import isoformat, json_encode
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import csv
import json
import logging

LOG = logging.getLogger(__name__)

REPORT_FILE = "report.json"
SERIES_FILE = "fidelity_series.csv"
TELEMETRY_FILE = "telemetry.csv"

REFERENCE_CONTEXT = {
    "fidelity_thresholds": {str(d): value for d, value in constants.REPORTED_FIDELITY_THRESHOLDS.items()},
    "fidelity_model_coefficient": constants.REPORTED_FIDELITY_MODEL_COEFFICIENT,
    "no_turbulence_mub_fidelity": constants.REPORTED_NO_TURBULENCE_MUB_FIDELITY,
    "polarization_fidelity": constants.REPORTED_POLARIZATION_FIDELITY,
    "polarization_fidelity_ao": constants.REPORTED_POLARIZATION_FIDELITY_AO,
    "greenwood_frequency_hz": constants.REPORTED_GREENWOOD_FREQUENCY,
    "aperture_efficiency_theory": {
        "0": constants.REPORTED_GAUSSIAN_THEORETICAL_EFFICIENCY,
        "3": constants.REPORTED_ELL3_THEORETICAL_EFFICIENCY,
    },
    "note": "measured values include hardware effects not simulated here; context only",
}


class ReportError(Exception):
    """Report could not be written or read"""


@dataclass(frozen=True)
class ModeEfficiency:
    ell: int
    mean: float
    std: float


@dataclass(eq=False)
class RunReport:
    name: str
    seed: int
    d_over_r0: float
    ao_enabled: bool
    dimension: int
    scenario: Dict[str, Any]
    config: Dict[str, Any]
    fidelity: Dict[str, FidelityStats] = field(default_factory=dict)
    # (realization, frame) of every series entry
    series_index: List[Tuple[int, int]] = field(default_factory=list)
    verdicts: Dict[str, bool] = field(default_factory=dict)
    efficiency: List[ModeEfficiency] = field(default_factory=list)
    crosstalk: Dict[str, CrosstalkMatrix] = field(default_factory=dict)
    telemetry: List[Telemetry] = field(default_factory=list)
    telemetry_summary: Dict[str, Any] = field(default_factory=dict)
    wander_r0: Optional[float] = None
    generated_at: str = field(default_factory=isoformat)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "d_over_r0": self.d_over_r0,
            "ao_enabled": self.ao_enabled,
            "dimension": self.dimension,
            "fidelity": {
                basis: dict(stats.to_dict(), series=stats.series.tolist())
                for basis, stats in self.fidelity.items()
            },
            "series_index": [list(index) for index in self.series_index],
            "verdicts": dict(self.verdicts),
            "efficiency": [{"ell": e.ell, "mean": e.mean, "std": e.std} for e in self.efficiency],
            "crosstalk": {
                basis: {
                    "basis_kind": matrix.basis_kind.value,
                    "labels": list(matrix.labels),
                    "probabilities": matrix.probabilities.tolist(),
                    "raw": matrix.raw.tolist(),
                    "efficiency": matrix.efficiency.tolist(),
                }
                for basis, matrix in self.crosstalk.items()
            },
            "telemetry_summary": dict(self.telemetry_summary),
            "wander_r0": self.wander_r0,
            "scenario": self.scenario,
            "config": self.config,
            "reference_context": REFERENCE_CONTEXT,
            "generated_at": self.generated_at,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunReport":
        try:
            return cls(
                name=data["name"],
                seed=data["seed"],
                d_over_r0=data["d_over_r0"],
                ao_enabled=data["ao_enabled"],
                dimension=data["dimension"],
                scenario=data["scenario"],
                config=data["config"],
                fidelity={
                    basis: FidelityStats.from_series(stats["series"], stats["threshold"])
                    for basis, stats in data["fidelity"].items()
                },
                series_index=[(int(r), int(f)) for r, f in data["series_index"]],
                verdicts=data["verdicts"],
                efficiency=[ModeEfficiency(e["ell"], e["mean"], e["std"]) for e in data["efficiency"]],
                crosstalk={
                    basis: CrosstalkMatrix.from_raw(BasisKind(matrix["basis_kind"]), matrix["labels"], matrix["raw"])
                    for basis, matrix in data["crosstalk"].items()
                },
                telemetry_summary=data["telemetry_summary"],
                wander_r0=data["wander_r0"],
                generated_at=data["generated_at"],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ReportError(f"Malformed report: {e!r}") from e


def _write_series(r: RunReport, path: Path) -> None:
    bases = list(r.fidelity)
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["realization", "frame"] + bases)
        for position, (realization, frame) in enumerate(r.series_index):
            writer.writerow([realization, frame] + [repr(float(r.fidelity[basis].series[position])) for basis in bases])


def _write_telemetry(r: RunReport, path: Path) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(("realization", ) + TELEMETRY_COLUMNS)
        for realization, telemetry in enumerate(r.telemetry):
            for row in telemetry.rows:
                writer.writerow([realization] + [getattr(row, name) for name in TELEMETRY_COLUMNS])


def emit_report(r: RunReport, directory: Union[str, Path]) -> List[Path]:
    """Write report.json and the CSV side files; returns the written paths."""
    directory = Path(directory)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        report_path = directory / REPORT_FILE
        report_path.write_text(json_encode(r.to_dict(), compact=False))
        written.append(report_path)
        series_path = directory / SERIES_FILE
        _write_series(r, series_path)
        written.append(series_path)
        for basis, matrix in r.crosstalk.items():
            matrix_path = directory / f"crosstalk_{basis}.csv"
            matrix.write_csv(matrix_path)
            written.append(matrix_path)
        telemetry_path = directory / TELEMETRY_FILE
        _write_telemetry(r, telemetry_path)
        written.append(telemetry_path)
    except OSError as e:
        raise ReportError(f"Cannot write report to {directory}: {e}") from e
    LOG.info("Wrote %d report files to %s", len(written), directory)
    return written


def read_report(directory: Union[str, Path]) -> RunReport:
    path = Path(directory) / REPORT_FILE
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError) as e:
        raise ReportError(f"Cannot read report {path}: {e}") from e
    return RunReport.from_dict(data)
