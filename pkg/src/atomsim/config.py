"""Configuration documents: JSON in, validated dataclasses out.

The document is strict: unknown keys are rejected by name, the camera
section is a tagged union with exactly one variant, and every constraint
violation names the offending field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .cameras import CameraConfigCMOS, CameraConfigEMCCD
from .errors import ConfigError
from .experiment import ExperimentConfig, LatticeSpec, build_site_map
from .optics import OpticalConfig

__all__ = ["SimulationConfig", "SCHEMA_VERSION", "parse_config", "load_config"]

SCHEMA_VERSION = 1


@dataclass
class SimulationConfig:
    experiment: ExperimentConfig
    optics: OpticalConfig
    camera_kind: str                      # "emccd" | "cmos"
    camera: CameraConfigEMCCD | CameraConfigCMOS
    seed: int = 0
    count: int = 1
    output_dir: str | None = None

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.camera.image_shape

    def validate(self) -> None:
        self.experiment.validate()
        self.optics.validate()
        self.camera.validate()
        if self.count < 1:
            raise ConfigError("must be >= 1", "count")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("must be a 64-bit unsigned integer", "seed")
        build_site_map(self.experiment, resolution=self.image_shape)


def _reject_unknown(section: dict, allowed: set[str], context: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", context)


def _number(section: dict, key: str, context: str, default=None):
    if key not in section:
        if default is None:
            raise ConfigError("required field missing", f"{context}.{key}")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("must be a number", f"{context}.{key}")
    return value


def _pair(value, context: str) -> tuple[float, float]:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
    ):
        raise ConfigError("must be a pair of numbers", context)
    return (float(value[0]), float(value[1]))


def _int_pair(value, context: str) -> tuple[int, int]:
    pair = _pair(value, context)
    if any(v != int(v) for v in pair):
        raise ConfigError("must be a pair of integers", context)
    return (int(pair[0]), int(pair[1]))


def _parse_experiment(section) -> ExperimentConfig:
    if not isinstance(section, dict):
        raise ConfigError("must be an object", "experiment")
    allowed = {
        "sites",
        "lattice",
        "filling_ratio",
        "survival_probability",
        "scattering_rate",
        "exposure_time",
        "explicit_occupancy",
    }
    _reject_unknown(section, allowed, "experiment")
    sites = None
    lattice = None
    if "sites" in section:
        raw = section["sites"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("must be a non-empty list of [row, col]", "experiment.sites")
        sites = [_int_pair(s, "experiment.sites") for s in raw]
    if "lattice" in section:
        block = section["lattice"]
        if not isinstance(block, dict):
            raise ConfigError("must be an object", "experiment.lattice")
        _reject_unknown(block, {"origin", "spacing", "counts", "rotation"}, "experiment.lattice")
        lattice = LatticeSpec(
            origin=_pair(block.get("origin", (0, 0)), "experiment.lattice.origin"),
            spacing=_pair(block.get("spacing", (1, 1)), "experiment.lattice.spacing"),
            counts=_int_pair(block.get("counts", (1, 1)), "experiment.lattice.counts"),
            rotation=float(_number(block, "rotation", "experiment.lattice", 0.0)),
        )
    explicit = section.get("explicit_occupancy")
    if explicit is not None:
        if not isinstance(explicit, list) or any(not isinstance(v, bool) for v in explicit):
            raise ConfigError("must be a list of booleans", "experiment.explicit_occupancy")
    return ExperimentConfig(
        sites=sites,
        lattice=lattice,
        filling_ratio=float(_number(section, "filling_ratio", "experiment", 1.0)),
        survival_probability=float(_number(section, "survival_probability", "experiment", 1.0)),
        scattering_rate=float(_number(section, "scattering_rate", "experiment", 0.0)),
        exposure_time=float(_number(section, "exposure_time", "experiment", 0.0)),
        explicit_occupancy=explicit,
    )


def _parse_optics(section) -> OpticalConfig:
    if section is None:
        return OpticalConfig()
    if not isinstance(section, dict):
        raise ConfigError("must be an object", "optics")
    allowed = {
        "zernike",
        "pupil_radius_fraction",
        "supersampling",
        "numerical_aperture",
        "wavelength",
        "magnification",
        "physical_pixel_size",
    }
    _reject_unknown(section, allowed, "optics")
    zernike = section.get("zernike", {})
    if not isinstance(zernike, dict):
        raise ConfigError("must be an object of term: amplitude", "optics.zernike")
    defaults = OpticalConfig()
    return OpticalConfig(
        zernike={k: float(v) for k, v in zernike.items()},
        pupil_radius_fraction=float(
            _number(section, "pupil_radius_fraction", "optics", defaults.pupil_radius_fraction)
        ),
        supersampling=int(_number(section, "supersampling", "optics", defaults.supersampling)),
        numerical_aperture=float(
            _number(section, "numerical_aperture", "optics", defaults.numerical_aperture)
        ),
        wavelength=float(_number(section, "wavelength", "optics", defaults.wavelength)),
        magnification=float(_number(section, "magnification", "optics", defaults.magnification)),
        physical_pixel_size=float(
            _number(section, "physical_pixel_size", "optics", defaults.physical_pixel_size)
        ),
    )


_EMCCD_FIELDS = {
    "quantum_efficiency",
    "dark_current",
    "cic_rate",
    "scic_rate",
    "stray_rate",
    "em_gain",
    "preamp_gain",
    "bias_clamp",
    "readout_sigma",
    "exposure",
    "resolution",
    "binning",
}

_CMOS_FIELDS = {
    "quantum_efficiency",
    "exposure",
    "resolution",
    "offset_nominal",
    "offset_sigma_pixel",
    "offset_sigma_row",
    "offset_sigma_column",
    "gain",
    "gain_sigma",
    "dark_rate_shape",
    "dark_rate_scale",
    "column_flicker_beta",
    "row_noise_sigma",
    "read_noise_sigma",
    "stray_rate",
}


def _parse_camera(section) -> tuple[str, CameraConfigEMCCD | CameraConfigCMOS]:
    if not isinstance(section, dict):
        raise ConfigError("must be an object with one of 'emccd' or 'cmos'", "camera")
    _reject_unknown(section, {"emccd", "cmos"}, "camera")
    if "emccd" in section and "cmos" in section:
        raise ConfigError("exactly one camera variant allowed, found both", "camera")
    if "emccd" in section:
        block = section["emccd"]
        if not isinstance(block, dict):
            raise ConfigError("must be an object", "camera.emccd")
        _reject_unknown(block, _EMCCD_FIELDS, "camera.emccd")
        kwargs = {}
        for key in _EMCCD_FIELDS:
            if key not in block:
                continue
            if key == "resolution":
                kwargs[key] = _int_pair(block[key], "camera.emccd.resolution")
            elif key == "binning":
                kwargs[key] = int(_number(block, key, "camera.emccd"))
            else:
                kwargs[key] = float(_number(block, key, "camera.emccd"))
        return "emccd", CameraConfigEMCCD(**kwargs)
    if "cmos" in section:
        block = section["cmos"]
        if not isinstance(block, dict):
            raise ConfigError("must be an object", "camera.cmos")
        _reject_unknown(block, _CMOS_FIELDS, "camera.cmos")
        kwargs = {}
        for key in _CMOS_FIELDS:
            if key not in block:
                continue
            if key == "resolution":
                kwargs[key] = _int_pair(block[key], "camera.cmos.resolution")
            else:
                kwargs[key] = float(_number(block, key, "camera.cmos"))
        return "cmos", CameraConfigCMOS(**kwargs)
    raise ConfigError("one of 'emccd' or 'cmos' required", "camera")


def parse_config(document: dict) -> SimulationConfig:
    """Validate a parsed JSON document and build the simulation config."""
    if not isinstance(document, dict):
        raise ConfigError("top level must be an object")
    allowed = {
        "schema_version",
        "seed",
        "count",
        "output_dir",
        "experiment",
        "optics",
        "camera",
    }
    _reject_unknown(document, allowed, "config")
    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"expected {SCHEMA_VERSION}, got {version!r}", "schema_version")
    if "experiment" not in document:
        raise ConfigError("required section missing", "experiment")
    if "camera" not in document:
        raise ConfigError("required section missing", "camera")
    experiment = _parse_experiment(document["experiment"])
    optics = _parse_optics(document.get("optics"))
    camera_kind, camera = _parse_camera(document["camera"])
    seed = document.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("must be an integer", "seed")
    count = document.get("count", 1)
    if isinstance(count, bool) or not isinstance(count, int):
        raise ConfigError("must be an integer", "count")
    output_dir = document.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("must be a string", "output_dir")
    config = SimulationConfig(
        experiment=experiment,
        optics=optics,
        camera_kind=camera_kind,
        camera=camera,
        seed=seed,
        count=count,
        output_dir=output_dir,
    )
    config.validate()
    return config


def load_config(path) -> SimulationConfig:
    """Read, parse and validate a configuration file."""
    text = Path(path).read_text()
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(document)
