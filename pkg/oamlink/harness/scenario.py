"""
oamlink - link scenarios and presets

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from dataclasses import dataclass, replace
from enum import Enum, unique
from jsonschema import Draft7Validator
from jsonschema.exceptions import ValidationError
from oamlink import constants
from oamlink.aoloop import AoConfig, AoConfigError, DmConfig, LoopConfig, WfsConfig
from oamlink.config import Config, default_config
from oamlink.field import Aperture, FieldError, fresnel_number_product, GridSpec
from oamlink.modes import BasisKind, EncodingSpace, HybridSpace, ModeError
from oamlink.turbatmos import r0_to_cn2, TurbulenceError, TurbulenceParams
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import json
import logging
import math

LOG = logging.getLogger(__name__)

Encoding = Union[EncodingSpace, HybridSpace]
Range = Tuple[float, float]

LAB_TX_WAIST = 2e-3
LAB_SEGMENTS = (1.5, 0.15, 0.15, 0.15, 0.15)
LAB_TX_APERTURE = 0.0381
LAB_WIND = (0.1, 0.0)
CAMPUS_TX_WAIST = 0.021
CAMPUS_CN2 = 1.9e-14
CAMPUS_WIND = (5.0, 0.0)
CAMPUS_SCREENS = 5


class ScenarioError(Exception):
    """Invalid scenario"""


@unique
class PathElementKind(str, Enum):
    PROPAGATE = "propagate"
    SCREEN = "screen"
    APERTURE = "aperture"


@dataclass(frozen=True)
class PathElement:
    kind: PathElementKind
    distance: float = 0.0
    layer: int = 0
    aperture: Optional[Aperture] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PathElementKind(self.kind))
        if self.kind is PathElementKind.PROPAGATE and not self.distance > 0:
            raise ScenarioError(f"Propagation distance must be positive, got {self.distance}")
        if self.kind is PathElementKind.SCREEN and self.layer < 0:
            raise ScenarioError(f"Screen layer must be non-negative, got {self.layer}")
        if self.kind is PathElementKind.APERTURE and self.aperture is None:
            raise ScenarioError("Aperture element without an aperture")


def propagate_step(distance: float) -> PathElement:
    return PathElement(PathElementKind.PROPAGATE, distance=distance)


def screen_step(layer: int) -> PathElement:
    return PathElement(PathElementKind.SCREEN, layer=layer)


def aperture_step(diameter: float, center: Tuple[float, float] = (0.0, 0.0)) -> PathElement:
    return PathElement(PathElementKind.APERTURE, aperture=Aperture(diameter, center))


@dataclass(frozen=True)
class LinkScenario:
    name: str
    grid: GridSpec
    tx_waist: float
    path: Tuple[PathElement, ...]
    turbulence: TurbulenceParams
    encoding: Encoding
    link_length: float
    # the D in D/r0
    reference_diameter: float
    ao: Optional[AoConfig] = None
    n_realizations: int = 10
    frames_per_realization: int = 1
    settle_frames: int = 0
    frame_rate: float = constants.WFS_REFERENCE_FRAME_RATE
    seed: int = 0
    fresnel_number_product: Optional[float] = None
    d_over_r0_range: Optional[Range] = None
    cn2_range: Optional[Range] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "path", tuple(self.path))
        if not self.tx_waist > 0:
            raise ScenarioError(f"Transmit waist must be positive, got {self.tx_waist}")
        if not self.reference_diameter > 0:
            raise ScenarioError(f"Reference diameter must be positive, got {self.reference_diameter}")
        total = sum(element.distance for element in self.path if element.kind is PathElementKind.PROPAGATE)
        if not math.isclose(total, self.link_length, rel_tol=1e-9):
            raise ScenarioError(f"Path distances sum to {total} m, link length is {self.link_length} m")
        layers = sorted(element.layer for element in self.path if element.kind is PathElementKind.SCREEN)
        if layers != list(range(self.turbulence.n_screens)):
            raise ScenarioError(
                f"Path must reference each of the {self.turbulence.n_screens} screen layers exactly once, got {layers}"
            )
        if self.n_realizations < 0:
            raise ScenarioError(f"Realization count must be non-negative, got {self.n_realizations}")
        if self.frames_per_realization < 1:
            raise ScenarioError(f"At least one frame per realization is required, got {self.frames_per_realization}")
        if not 0 <= self.settle_frames < self.frames_per_realization:
            raise ScenarioError(
                f"Settling frames {self.settle_frames} must leave at least one of {self.frames_per_realization} frames"
            )
        if not self.frame_rate > 0:
            raise ScenarioError(f"Frame rate must be positive, got {self.frame_rate}")
        if self.seed < 0:
            raise ScenarioError(f"Seed must be non-negative, got {self.seed}")
        if self.ao is not None and not math.isclose(self.ao.loop.loop_rate, self.frame_rate):
            raise ScenarioError(f"AO loop rate {self.ao.loop.loop_rate} Hz differs from the frame rate {self.frame_rate} Hz")
        if self.cn2_range is not None and self.turbulence.cn2 > 0:
            low, high = self.cn2_range
            if not low <= self.turbulence.cn2 <= high:
                raise ScenarioError(f"Cn2 {self.turbulence.cn2} outside [{low}, {high}]")
        if self.d_over_r0_range is not None and self.turbulence.cn2 > 0:
            low, high = self.d_over_r0_range
            # tolerance for the cn2 round trip
            if not low * (1 - 1e-9) <= self.d_over_r0 <= high * (1 + 1e-9):
                raise ScenarioError(f"D/r0 {self.d_over_r0:.4g} outside [{low}, {high}]")

    @property
    def spatial(self) -> EncodingSpace:
        if isinstance(self.encoding, HybridSpace):
            return self.encoding.spatial
        return self.encoding

    @property
    def d_over_r0(self) -> float:
        return self.reference_diameter / self.turbulence.r0

    @property
    def greenwood_ratio(self) -> float:
        """Greenwood frequency over the frame rate."""
        if self.turbulence.cn2 == 0:
            return 0.0
        return constants.GREENWOOD_COEFFICIENT * self.turbulence.wind_speed / self.turbulence.r0 / self.frame_rate


def with_d_over_r0(s: LinkScenario, d_over_r0: float) -> LinkScenario:
    """Rescale Cn2 so that reference_diameter / r0 hits the requested value; 0 removes the turbulence."""
    if d_over_r0 < 0:
        raise ScenarioError(f"D/r0 must be non-negative, got {d_over_r0}")
    turbulence = s.turbulence
    if d_over_r0 == 0:
        cn2 = 0.0
    else:
        cn2 = r0_to_cn2(s.reference_diameter / d_over_r0, turbulence.path_length, turbulence.wavelength)
    return replace(s, turbulence=replace(turbulence, cn2=cn2))


def with_cn2(s: LinkScenario, cn2: float) -> LinkScenario:
    return replace(s, turbulence=replace(s.turbulence, cn2=cn2))


def with_ao(s: LinkScenario, ao: Optional[AoConfig]) -> LinkScenario:
    return replace(s, ao=ao)


def build_ao(
    *,
    config: Config,
    n_act: int,
    pupil_diameter: float,
    n_lenslets: int,
    beacon_waist: float,
) -> AoConfig:
    """AO chain whose WFS pupil spans the outer actuator centers of the mirror."""
    pitch = pupil_diameter / (n_act - 1)
    return AoConfig(
        wfs=WfsConfig(
            n_lenslets=n_lenslets,
            pupil_diameter=pupil_diameter,
            n_terms=int(config["zernike_terms"]),
            frame_rate=float(config["wfs_frame_rate"]),
            slope_noise_rms=float(config["wfs_slope_noise_rms"]),
        ),
        dm=DmConfig(n_act=n_act, pitch=pitch, coupling=float(config["dm_coupling"])),
        loop=LoopConfig(
            gain=float(config["loop_gain"]),
            loop_rate=float(config["wfs_frame_rate"]),
            latency_frames=int(config["latency_frames"]),
            tip_tilt_gain=float(config["tip_tilt_gain"]),
        ),
        beacon_waist=beacon_waist,
        quadcell_noise_rms=float(config["quadcell_noise_rms"]),
        two_stage_tip_tilt=bool(config["two_stage_tip_tilt"]),
    )


def _grid_for(max_ell: int, waist: float, wavelength: float, samples: int, margin: float = 4.0) -> GridSpec:
    widest = 2 * waist * math.sqrt(max_ell + 1)
    return GridSpec(n=samples, extent=margin * widest, wavelength=wavelength)


def lab(
    d_over_r0: float = 0.884,
    *,
    ao: bool = False,
    config: Optional[Config] = None,
    n_realizations: int = 20,
    frames_per_realization: int = 10,
    seed: int = 0,
) -> LinkScenario:
    """Short link with four co-located screens in front of the mirrors, five-dimensional OAM encoding."""
    config = config or default_config()
    low, high = constants.LAB_D_OVER_R0_RANGE
    if d_over_r0 != 0 and not low <= d_over_r0 <= high:
        raise ScenarioError(f"Lab D/r0 must be 0 or within [{low}, {high}], got {d_over_r0}")
    wavelength = constants.SIGNAL_WAVELENGTH
    encoding = EncodingSpace(BasisKind.OAM, max_ell=2, spacing=1, waist=LAB_TX_WAIST)
    grid = _grid_for(encoding.max_ell, LAB_TX_WAIST, wavelength, int(config["grid_samples"]))
    path: List[PathElement] = [propagate_step(LAB_SEGMENTS[0])]
    for layer, distance in enumerate(LAB_SEGMENTS[1:]):
        path.extend([screen_step(layer), propagate_step(distance)])
    link_length = sum(LAB_SEGMENTS)
    # actuator pitch of 1.2 waists, signal spans about 3x3 actuators
    pupil_diameter = (constants.LAB_DM_ACTUATORS - 1) * 1.2 * LAB_TX_WAIST
    ao_config = build_ao(
        config=config,
        n_act=constants.LAB_DM_ACTUATORS,
        pupil_diameter=pupil_diameter,
        n_lenslets=constants.LAB_WFS_LENSLETS,
        beacon_waist=pupil_diameter / 1.5,
    ) if ao else None
    scenario = LinkScenario(
        name="lab",
        grid=grid,
        tx_waist=LAB_TX_WAIST,
        path=tuple(path),
        turbulence=TurbulenceParams(
            cn2=0.0,
            path_length=link_length,
            wavelength=wavelength,
            wind_velocity=LAB_WIND,
            n_screens=len(LAB_SEGMENTS) - 1,
        ),
        encoding=encoding,
        link_length=link_length,
        reference_diameter=2 * LAB_TX_WAIST,
        ao=ao_config,
        n_realizations=n_realizations,
        frames_per_realization=frames_per_realization,
        settle_frames=min(20, frames_per_realization - 1) if ao else 0,
        frame_rate=float(config["wfs_frame_rate"]),
        seed=seed,
        fresnel_number_product=fresnel_number_product(LAB_TX_APERTURE, LAB_TX_APERTURE, link_length, wavelength),
        d_over_r0_range=constants.LAB_D_OVER_R0_RANGE,
    )
    return with_d_over_r0(scenario, d_over_r0)


def campus(
    cn2: float = CAMPUS_CN2,
    *,
    ao: bool = False,
    config: Optional[Config] = None,
    n_realizations: int = 10,
    frames_per_realization: int = 10,
    seed: int = 0,
) -> LinkScenario:
    """340 m one-way link, five distributed screens, seven-dimensional OAM encoding into a 3-inch aperture."""
    config = config or default_config()
    low, high = constants.CAMPUS_CN2_RANGE
    if cn2 != 0 and not low <= cn2 <= high:
        raise ScenarioError(f"Campus Cn2 must be 0 or within [{low}, {high}], got {cn2}")
    wavelength = constants.SIGNAL_WAVELENGTH
    encoding = EncodingSpace(BasisKind.OAM, max_ell=3, spacing=1, waist=CAMPUS_TX_WAIST)
    grid = _grid_for(encoding.max_ell, CAMPUS_TX_WAIST, wavelength, int(config["grid_samples"]))
    length = constants.CAMPUS_LINK_LENGTH
    spacing = length / CAMPUS_SCREENS
    path: List[PathElement] = [propagate_step(spacing / 2)]
    for layer in range(CAMPUS_SCREENS):
        path.append(screen_step(layer))
        path.append(propagate_step(spacing if layer < CAMPUS_SCREENS - 1 else spacing / 2))
    path.append(aperture_step(constants.CAMPUS_APERTURE))
    ao_config = build_ao(
        config=config,
        n_act=constants.CAMPUS_DM_ACTUATORS,
        pupil_diameter=constants.CAMPUS_APERTURE,
        n_lenslets=constants.LAB_WFS_LENSLETS,
        beacon_waist=constants.CAMPUS_APERTURE / 1.5,
    ) if ao else None
    return LinkScenario(
        name="campus",
        grid=grid,
        tx_waist=CAMPUS_TX_WAIST,
        path=tuple(path),
        turbulence=TurbulenceParams(
            cn2=cn2,
            path_length=length,
            wavelength=wavelength,
            wind_velocity=CAMPUS_WIND,
            n_screens=CAMPUS_SCREENS,
        ),
        encoding=encoding,
        link_length=length,
        reference_diameter=constants.CAMPUS_APERTURE,
        ao=ao_config,
        n_realizations=n_realizations,
        frames_per_realization=frames_per_realization,
        settle_frames=min(20, frames_per_realization - 1) if ao else 0,
        frame_rate=float(config["wfs_frame_rate"]),
        seed=seed,
        fresnel_number_product=constants.CAMPUS_FRESNEL_NUMBER_PRODUCT,
        cn2_range=constants.CAMPUS_CN2_RANGE,
    )


PRESETS: Dict[str, Tuple[Callable[..., LinkScenario], str]] = {
    "lab": (lab, "2.1 m table-top link, 4 screens, d=5, 6x6 DM, D/r0 in [0.11, 3.06]"),
    "campus": (campus, "340 m link, 5 screens, d=7, 7.62 cm aperture, 12x12 DM, Cn2 in [5.4e-15, 3.2e-14]"),
}


def preset(name: str, **kwargs: Any) -> LinkScenario:
    try:
        factory, _ = PRESETS[name]
    except KeyError as e:
        raise ScenarioError(f"Unknown preset {name!r}, choose from {', '.join(sorted(PRESETS))}") from e
    return factory(**kwargs)


_NUMBER = {"type": "number"}
_POINT = {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}
_RANGE = {"oneOf": [{"type": "null"}, _POINT]}

SCENARIO_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "grid", "tx_waist", "path", "turbulence", "encoding", "link_length", "reference_diameter"],
    "properties": {
        "name": {"type": "string"},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "extent", "wavelength"],
            "properties": {"n": {"type": "integer"}, "extent": _NUMBER, "wavelength": _NUMBER},
        },
        "tx_waist": _NUMBER,
        "path": {
            "type": "array",
            "items": {
                "oneOf": [
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind", "distance"],
                        "properties": {"kind": {"const": "propagate"}, "distance": _NUMBER},
                    },
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind", "layer"],
                        "properties": {"kind": {"const": "screen"}, "layer": {"type": "integer"}},
                    },
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind", "diameter"],
                        "properties": {"kind": {"const": "aperture"}, "diameter": _NUMBER, "center": _POINT},
                    },
                ]
            },
        },
        "turbulence": {
            "type": "object",
            "additionalProperties": False,
            "required": ["cn2", "path_length", "wavelength"],
            "properties": {
                "cn2": _NUMBER,
                "path_length": _NUMBER,
                "wavelength": _NUMBER,
                "wind_velocity": _POINT,
                "n_screens": {"type": "integer"},
                "outer_scale": {"type": ["number", "null"]},
            },
        },
        "encoding": {
            "type": "object",
            "additionalProperties": False,
            "required": ["basis", "max_ell", "spacing", "waist"],
            "properties": {
                "basis": {"enum": [kind.value for kind in BasisKind]},
                "max_ell": {"type": "integer"},
                "spacing": {"type": "integer"},
                "waist": _NUMBER,
                "pol_fidelity": {"type": ["number", "null"]},
            },
        },
        "link_length": _NUMBER,
        "reference_diameter": _NUMBER,
        "ao": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["wfs", "dm"],
                    "properties": {
                        "wfs": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["n_lenslets", "pupil_diameter"],
                            "properties": {
                                "n_lenslets": {"type": "integer"},
                                "pupil_diameter": _NUMBER,
                                "n_terms": {"type": "integer"},
                                "frame_rate": _NUMBER,
                                "slope_noise_rms": _NUMBER,
                                "center": _POINT,
                                "reference_frame_rate": _NUMBER,
                            },
                        },
                        "dm": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["n_act", "pitch"],
                            "properties": {
                                "n_act": {"type": "integer"},
                                "pitch": _NUMBER,
                                "coupling": _NUMBER,
                                "stroke_limit": _NUMBER,
                                "center": _POINT,
                            },
                        },
                        "loop": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "gain": _NUMBER,
                                "loop_rate": _NUMBER,
                                "latency_frames": {"type": "integer"},
                                "tip_tilt_gain": _NUMBER,
                            },
                        },
                        "focal_length": _NUMBER,
                        "focal_padding": {"type": "integer"},
                        "beacon_waist": _NUMBER,
                        "quadcell_noise_rms": _NUMBER,
                        "tip_tilt": {"type": "boolean"},
                        "two_stage_tip_tilt": {"type": "boolean"},
                        "dm_enabled": {"type": "boolean"},
                    },
                },
            ]
        },
        "n_realizations": {"type": "integer"},
        "frames_per_realization": {"type": "integer"},
        "settle_frames": {"type": "integer"},
        "frame_rate": _NUMBER,
        "seed": {"type": "integer"},
        "fresnel_number_product": {"type": ["number", "null"]},
        "d_over_r0_range": _RANGE,
        "cn2_range": _RANGE,
    },
}
SCENARIO_VALIDATOR = Draft7Validator(SCENARIO_SCHEMA)


def _element_to_dict(element: PathElement) -> Dict[str, Any]:
    if element.kind is PathElementKind.PROPAGATE:
        return {"kind": element.kind.value, "distance": element.distance}
    if element.kind is PathElementKind.SCREEN:
        return {"kind": element.kind.value, "layer": element.layer}
    assert element.aperture is not None
    return {
        "kind": element.kind.value,
        "diameter": element.aperture.diameter,
        "center": list(element.aperture.center_offset),
    }


def _ao_to_dict(ao: AoConfig) -> Dict[str, Any]:
    return {
        "wfs": {
            "n_lenslets": ao.wfs.n_lenslets,
            "pupil_diameter": ao.wfs.pupil_diameter,
            "n_terms": ao.wfs.n_terms,
            "frame_rate": ao.wfs.frame_rate,
            "slope_noise_rms": ao.wfs.slope_noise_rms,
            "center": list(ao.wfs.center),
            "reference_frame_rate": ao.wfs.reference_frame_rate,
        },
        "dm": {
            "n_act": ao.dm.n_act,
            "pitch": ao.dm.pitch,
            "coupling": ao.dm.coupling,
            "stroke_limit": ao.dm.stroke_limit,
            "center": list(ao.dm.center),
        },
        "loop": {
            "gain": ao.loop.gain,
            "loop_rate": ao.loop.loop_rate,
            "latency_frames": ao.loop.latency_frames,
            "tip_tilt_gain": ao.loop.tip_tilt_gain,
        },
        "focal_length": ao.focal_length,
        "focal_padding": ao.focal_padding,
        "beacon_waist": ao.beacon_waist,
        "quadcell_noise_rms": ao.quadcell_noise_rms,
        "tip_tilt": ao.tip_tilt,
        "two_stage_tip_tilt": ao.two_stage_tip_tilt,
        "dm_enabled": ao.dm_enabled,
    }


def scenario_to_dict(s: LinkScenario) -> Dict[str, Any]:
    spatial = s.spatial
    turbulence = s.turbulence
    return {
        "name": s.name,
        "grid": {"n": s.grid.n, "extent": s.grid.extent, "wavelength": s.grid.wavelength},
        "tx_waist": s.tx_waist,
        "path": [_element_to_dict(element) for element in s.path],
        "turbulence": {
            "cn2": turbulence.cn2,
            "path_length": turbulence.path_length,
            "wavelength": turbulence.wavelength,
            "wind_velocity": list(turbulence.wind_velocity),
            "n_screens": turbulence.n_screens,
            "outer_scale": None if math.isinf(turbulence.outer_scale) else turbulence.outer_scale,
        },
        "encoding": {
            "basis": spatial.basis_kind.value,
            "max_ell": spatial.max_ell,
            "spacing": spatial.spacing,
            "waist": spatial.waist,
            "pol_fidelity": s.encoding.pol_fidelity if isinstance(s.encoding, HybridSpace) else None,
        },
        "link_length": s.link_length,
        "reference_diameter": s.reference_diameter,
        "ao": None if s.ao is None else _ao_to_dict(s.ao),
        "n_realizations": s.n_realizations,
        "frames_per_realization": s.frames_per_realization,
        "settle_frames": s.settle_frames,
        "frame_rate": s.frame_rate,
        "seed": s.seed,
        "fresnel_number_product": s.fresnel_number_product,
        "d_over_r0_range": None if s.d_over_r0_range is None else list(s.d_over_r0_range),
        "cn2_range": None if s.cn2_range is None else list(s.cn2_range),
    }


def _point(value: Optional[List[float]]) -> Tuple[float, float]:
    if value is None:
        return 0.0, 0.0
    return float(value[0]), float(value[1])


def _element_from_dict(data: Dict[str, Any]) -> PathElement:
    kind = PathElementKind(data["kind"])
    if kind is PathElementKind.PROPAGATE:
        return propagate_step(data["distance"])
    if kind is PathElementKind.SCREEN:
        return screen_step(data["layer"])
    return aperture_step(data["diameter"], _point(data.get("center")))


def _ao_from_dict(data: Dict[str, Any]) -> AoConfig:
    wfs = dict(data["wfs"])
    dm = dict(data["dm"])
    for section in (wfs, dm):
        if "center" in section:
            section["center"] = _point(section["center"])
    options = {key: value for key, value in data.items() if key not in ("wfs", "dm", "loop")}
    return AoConfig(wfs=WfsConfig(**wfs), dm=DmConfig(**dm), loop=LoopConfig(**data.get("loop", {})), **options)


def scenario_from_dict(data: Dict[str, Any]) -> LinkScenario:
    errors = sorted(SCENARIO_VALIDATOR.iter_errors(data), key=lambda error: [str(part) for part in error.path])
    if errors:
        messages = "; ".join(
            f"{'/'.join(str(part) for part in error.path) or '<root>'}: {error.message}" for error in errors
        )
        raise ScenarioError(f"Invalid scenario: {messages}")
    try:
        turbulence_data = dict(data["turbulence"])
        if turbulence_data.get("outer_scale") is None:
            turbulence_data["outer_scale"] = math.inf
        if "wind_velocity" in turbulence_data:
            turbulence_data["wind_velocity"] = _point(turbulence_data["wind_velocity"])
        encoding_data = data["encoding"]
        spatial = EncodingSpace(
            basis_kind=BasisKind(encoding_data["basis"]),
            max_ell=encoding_data["max_ell"],
            spacing=encoding_data["spacing"],
            waist=encoding_data["waist"],
        )
        pol_fidelity = encoding_data.get("pol_fidelity")
        encoding: Encoding = spatial if pol_fidelity is None else HybridSpace(spatial, pol_fidelity)
        optional = {
            key: data[key]
            for key in ("n_realizations", "frames_per_realization", "settle_frames", "frame_rate", "seed",
                        "fresnel_number_product")
            if key in data
        }
        for key in ("d_over_r0_range", "cn2_range"):
            if data.get(key) is not None:
                optional[key] = _point(data[key])
        return LinkScenario(
            name=data["name"],
            grid=GridSpec(**data["grid"]),
            tx_waist=data["tx_waist"],
            path=tuple(_element_from_dict(element) for element in data["path"]),
            turbulence=TurbulenceParams(**turbulence_data),
            encoding=encoding,
            link_length=data["link_length"],
            reference_diameter=data["reference_diameter"],
            ao=None if data.get("ao") is None else _ao_from_dict(data["ao"]),
            **optional,
        )
    except (AoConfigError, FieldError, ModeError, TurbulenceError, ValidationError) as e:
        raise ScenarioError(f"Invalid scenario: {e}") from e


def load_scenario(source: Union[str, Path], config: Optional[Config] = None) -> LinkScenario:
    """A preset name or the path of a scenario JSON file."""
    if str(source) in PRESETS:
        return preset(str(source), config=config)
    path = Path(source)
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError) as e:
        raise ScenarioError(f"Cannot read scenario {path}: {e}") from e
    s = scenario_from_dict(data)
    LOG.info("Loaded scenario %r from %s, D/r0=%.3f", s.name, path, s.d_over_r0)
    return s
