"""
oamlink - configuration validation

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from oamlink import constants
from pathlib import Path
from typing import Dict, IO, Optional, Union

import json
import logging
import os

Config = Dict[str, Optional[Union[str, int, float, bool]]]

DEFAULTS: Config = {
    "log_level": "INFO",
    "statsd_host": None,
    "statsd_port": 8125,
    "realization_workers": 1,
    "grid_samples": 512,
    "subharmonic_levels": constants.SUBHARMONIC_LEVELS,
    "aliasing_power_fraction": constants.ALIASING_POWER_FRACTION,
    "loop_gain": constants.DEFAULT_LOOP_GAIN,
    "tip_tilt_gain": constants.DEFAULT_LOOP_GAIN,
    "latency_frames": constants.DEFAULT_LATENCY_FRAMES,
    "dm_coupling": constants.DEFAULT_DM_COUPLING,
    "zernike_terms": constants.DEFAULT_ZERNIKE_TERMS,
    "wfs_frame_rate": constants.WFS_REFERENCE_FRAME_RATE,
    "wfs_slope_noise_rms": 0.02,
    "quadcell_noise_rms": 0.0,
    "two_stage_tip_tilt": False,
}
DEFAULT_LOG_FORMAT_JOURNAL = "%(name)-20s\t%(threadName)s\t%(levelname)-8s\t%(message)s"


class InvalidConfiguration(Exception):
    pass


def parse_env_value(value: str) -> Union[str, int, float, bool]:
    # ints, floats, strings and bools only
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    if value.lower() == "false":
        return False
    if value.lower() == "true":
        return True
    return value


def set_config_defaults(config: Config) -> Config:
    for k, v in DEFAULTS.items():
        env_name = f"oamlink_{k}".upper()
        if env_name in os.environ:
            val = os.environ[env_name]
            print(f"Populating config value {k} from env var {env_name} with {val} instead of config file")
            config[k] = parse_env_value(os.environ[env_name])
        config.setdefault(k, v)
    unknown = sorted(set(config) - set(DEFAULTS))
    if unknown:
        raise InvalidConfiguration(f"Unknown configuration keys: {', '.join(unknown)}")
    level = config["log_level"]
    if not isinstance(level, str) or logging.getLevelName(level.upper()) == f"Level {level.upper()}":
        raise InvalidConfiguration(f"Invalid log level: {level!r}")
    gain = config["loop_gain"]
    if not isinstance(gain, (int, float)) or not 0 < gain <= 1:
        raise InvalidConfiguration(f"loop_gain must be in (0, 1], got {gain!r}")
    fraction = config["aliasing_power_fraction"]
    if not isinstance(fraction, (int, float)) or not 0 < fraction <= 1:
        raise InvalidConfiguration(f"aliasing_power_fraction must be in (0, 1], got {fraction!r}")
    workers = config["realization_workers"]
    if not isinstance(workers, int) or workers < 1:
        raise InvalidConfiguration(f"realization_workers must be a positive integer, got {workers!r}")
    return config


def default_config() -> Config:
    return set_config_defaults({})


def write_config(config_path: Path, custom_values: Config) -> None:
    config_path.write_text(json.dumps(custom_values))


def read_config(config_handler: IO) -> Config:
    try:
        config = json.load(config_handler)
        config = set_config_defaults(config)
        return config
    except Exception as ex:
        raise InvalidConfiguration(ex)
