"""
oamlink - command line interface

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from contextlib import closing
from dataclasses import replace
from oamlink import version as oamlink_version
from oamlink.config import Config, DEFAULT_LOG_FORMAT_JOURNAL, default_config, read_config
from oamlink.harness import run_scenario, sweep
from oamlink.harness.report import emit_report, RunReport
from oamlink.harness.scenario import (
    LinkScenario, load_scenario, preset, PRESETS, ScenarioError, with_ao, with_d_over_r0
)
from oamlink.qkdsec import fidelity_threshold, FidelityModelVariant, fit_fidelity_model, ModelFitError
from oamlink.statsd import StatsClient
from oamlink.turbatmos import export_screen, make_screen
from pathlib import Path
from typing import List, Optional, Tuple

import argparse
import csv
import logging
import sys

LOG = logging.getLogger("oamlink")


def _values(text: str) -> List[float]:
    try:
        return [float(value) for value in text.split(",") if value.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"Expected a comma separated list of numbers, got {text!r}") from e


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="oamlink", description="OAM QKD link turbulence and adaptive optics simulator")
    parser.add_argument("--version", action="version", help="show program version", version=oamlink_version.__version__)
    parser.add_argument("--config", help="Configuration file path", type=argparse.FileType(), default=None)
    subparsers = parser.add_subparsers(help="Command", dest="command", required=True)

    parser_run = subparsers.add_parser("run", help="Run a scenario and write its report")
    parser_sweep = subparsers.add_parser("sweep", help="Run a scenario over a list of parameter values")
    for p in (parser_run, parser_sweep):
        p.add_argument("--scenario", required=True, help="Preset name or scenario JSON file")
        p.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
        p.add_argument("--out", required=True, help="Output directory")
        p.add_argument("--ao", action="store_true", help="Enable adaptive optics on a preset")
        p.add_argument("--realizations", type=int, default=None, help="Override the realization count")
        p.add_argument("--frames", type=int, default=None, help="Override the frames per realization")
    parser_run.add_argument("--d-over-r0", type=float, default=None, help="Rescale turbulence to this D/r0")
    parser_run.add_argument(
        "--compare-ao", action="store_true", help="Run with and without AO on identical turbulence"
    )
    parser_sweep.add_argument("--param", required=True, help="Parameter to sweep: d_over_r0 or cn2")
    parser_sweep.add_argument("--values", required=True, type=_values, help="Comma separated values")

    parser_threshold = subparsers.add_parser("threshold", help="Print the fidelity threshold of dimension d")
    parser_threshold.add_argument("--d", type=int, nargs="+", required=True, help="Dimension(s)")

    parser_fit = subparsers.add_parser("fit", help="Fit the fidelity-vs-turbulence model")
    parser_fit.add_argument("--input", required=True, help="CSV with d_over_r0 and fidelity columns")
    parser_fit.add_argument("--model", choices=[variant.value for variant in FidelityModelVariant], default="B")

    subparsers.add_parser("presets", help="List the built-in scenarios")

    parser_export = subparsers.add_parser("export-screen", help="Write one phase screen as binary + JSON header")
    parser_export.add_argument("--scenario", required=True, help="Preset name or scenario JSON file")
    parser_export.add_argument("--seed", type=int, default=0)
    parser_export.add_argument("--layer", type=int, default=0)
    parser_export.add_argument("--out", required=True, help="Output path stem")
    return parser.parse_args(argv)


def _scenario(args: argparse.Namespace, config: Config, ao: Optional[bool] = None) -> LinkScenario:
    use_ao = args.ao if ao is None else ao
    if args.scenario in PRESETS:
        s = preset(args.scenario, config=config, ao=use_ao)
    else:
        s = load_scenario(args.scenario, config)
        if ao is False:
            s = with_ao(s, None)
        elif ao and s.ao is None:
            raise ScenarioError(f"Scenario {args.scenario} defines no AO chain to compare against")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.realizations is not None:
        overrides["n_realizations"] = args.realizations
    if args.frames is not None:
        overrides["frames_per_realization"] = args.frames
        overrides["settle_frames"] = min(s.settle_frames, args.frames - 1)
    return replace(s, **overrides) if overrides else s


def _summary(r: RunReport) -> str:
    parts = [f"{r.name} D/r0={r.d_over_r0:.3f} AO={'on' if r.ao_enabled else 'off'}"]
    for basis, stats in r.fidelity.items():
        parts.append(f"{basis}: F={stats.mean:.4f}+-{stats.std:.4f} above={stats.fraction_above_threshold:.3f}")
    return "  ".join(parts)


def cmd_run(args: argparse.Namespace, config: Config, stats: StatsClient) -> int:
    out = Path(args.out)
    runs: List[Tuple[str, LinkScenario]] = []
    if args.compare_ao:
        runs.append(("ao_off", _scenario(args, config, ao=False)))
        runs.append(("ao_on", _scenario(args, config, ao=True)))
    else:
        runs.append(("", _scenario(args, config)))
    for subdir, s in runs:
        if args.d_over_r0 is not None:
            s = with_d_over_r0(s, args.d_over_r0)
        report = run_scenario(s, config, stats)
        emit_report(report, out / subdir if subdir else out)
        print(_summary(report))
    return 0


def cmd_sweep(args: argparse.Namespace, config: Config, stats: StatsClient) -> int:
    out = Path(args.out)
    results = sweep(_scenario(args, config), args.param, args.values, config, stats)
    out.mkdir(parents=True, exist_ok=True)
    bases = sorted({basis for _, report in results for basis in report.fidelity})
    with open(out / "sweep.csv", "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow([args.param] + [f"{basis}_{column}" for basis in bases for column in ("mean", "std", "above")])
        for value, report in results:
            row: List[object] = [value]
            for basis in bases:
                basis_stats = report.fidelity.get(basis)
                if basis_stats is None:
                    row.extend(["", "", ""])
                else:
                    row.extend([basis_stats.mean, basis_stats.std, basis_stats.fraction_above_threshold])
            writer.writerow(row)
            emit_report(report, out / f"{args.param}_{value:g}")
            print(_summary(report))
    return 0


def cmd_threshold(args: argparse.Namespace) -> int:
    for d in args.d:
        print(f"d={d} fidelity_threshold={fidelity_threshold(d):.6f}")
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    points = []
    with open(args.input, newline="") as fp:
        for row in csv.DictReader(fp):
            try:
                points.append((float(row["d_over_r0"]), float(row["fidelity"])))
            except (KeyError, ValueError) as e:
                raise ModelFitError(f"Bad row in {args.input}: {row}") from e
    coefficient = fit_fidelity_model(points, FidelityModelVariant(args.model))
    print(f"model={args.model} c={coefficient:.6g} points={len(points)}")
    return 0


def cmd_presets() -> int:
    for name, (_, description) in sorted(PRESETS.items()):
        print(f"{name}\t{description}")
    return 0


def cmd_export_screen(args: argparse.Namespace, config: Config) -> int:
    s = load_scenario(args.scenario, config)
    screen = make_screen(
        s.turbulence, s.grid, args.seed, layer=args.layer, subharmonic_levels=int(config["subharmonic_levels"])
    )
    data_path, header_path = export_screen(screen, args.out)
    print(f"{data_path}\n{header_path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    if args.config is not None:
        with closing(args.config):
            config = read_config(args.config)
    else:
        config = default_config()

    logging.basicConfig(level=logging.INFO, format=DEFAULT_LOG_FORMAT_JOURNAL)
    logging.getLogger().setLevel(str(config["log_level"]).upper())

    stats = StatsClient.from_config(config, tags={"command": args.command})
    try:
        if args.command == "run":
            return cmd_run(args, config, stats)
        if args.command == "sweep":
            return cmd_sweep(args, config, stats)
        if args.command == "threshold":
            return cmd_threshold(args)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "presets":
            return cmd_presets()
        if args.command == "export-screen":
            return cmd_export_screen(args, config)
    except Exception as ex:  # pylint: disable=broad-except
        LOG.error("%s failed: %s: %s", args.command, ex.__class__.__name__, ex)
        return 1
    finally:
        stats.close()
    return 1


if __name__ == "__main__":
    sys.exit(main())
