"""Frame generation: one validated config, any number of reproducible frames.

A :class:`FrameGenerator` precomputes everything immutable (site map, MTF,
photon budget, CMOS fixed-pattern state per seed); each frame then owns a
forked random stream derived from (seed, frame index), so a frame's bytes
depend only on the configuration, the seed and its index.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cameras import init_cmos_sensor, simulate_cmos, simulate_emccd
from .config import SimulationConfig, load_config, parse_config
from .errors import ConfigError
from .experiment import GroundTruth, apply_imaging_loss, build_site_map, sample_occupancy
from .optics import apply_optics, build_mtf, solid_angle
from .rng import RandomState

__all__ = ["SENSOR_FORK_INDEX", "FrameGenerator", "make_generator", "generate_frame"]

# fork index reserved for the static sensor state; frame indices stay below
SENSOR_FORK_INDEX = 2**63


class FrameGenerator:
    """Immutable after construction; safe to share for concurrent frames."""

    def __init__(self, config: SimulationConfig):
        config.validate()
        self.config = config
        self.image_shape = config.image_shape
        self.sites = build_site_map(config.experiment, resolution=self.image_shape)
        self.supersampling = config.optics.supersampling
        self.mtf = build_mtf(config.optics, self.image_shape)
        self.photons_per_atom = (
            config.experiment.scattering_rate
            * config.experiment.exposure_time
            * solid_angle(config.optics.numerical_aperture)
        )
        self._sensor_cache: dict[int, object] = {}

    def _sensor_characteristics(self, seed: int):
        if seed not in self._sensor_cache:
            sensor_state = RandomState(seed).fork(SENSOR_FORK_INDEX)
            self._sensor_cache[seed] = init_cmos_sensor(self.config.camera, sensor_state)
        return self._sensor_cache[seed]

    def frame(self, seed: int, frame_index: int) -> tuple[np.ndarray, GroundTruth]:
        """Generate one frame; bit-identical for equal (seed, frame_index)."""
        if not (0 <= frame_index < SENSOR_FORK_INDEX):
            raise ConfigError(f"frame index must lie in [0, 2**63), got {frame_index}")
        state = RandomState(seed).fork(frame_index)
        truth = sample_occupancy(state, self.sites, self.config.experiment)
        truth, atoms = apply_imaging_loss(
            state,
            truth,
            self.config.experiment.survival_probability,
            self.image_shape,
            self.supersampling,
        )
        photon_map = apply_optics(atoms, self.mtf, self.photons_per_atom, self.supersampling)
        if self.config.camera_kind == "emccd":
            image = simulate_emccd(photon_map, self.config.camera, state)
        else:
            characteristics = self._sensor_characteristics(seed)
            image = simulate_cmos(photon_map, self.config.camera, characteristics, state)
        truth.seed = seed
        truth.frame_index = frame_index
        return image, truth


def make_generator(source) -> FrameGenerator:
    """Build a generator from a config path or an already-parsed document."""
    if isinstance(source, dict):
        return FrameGenerator(parse_config(source))
    if isinstance(source, (str, Path)):
        return FrameGenerator(load_config(source))
    if isinstance(source, SimulationConfig):
        return FrameGenerator(source)
    raise ConfigError(f"cannot build a generator from {type(source).__name__}")


def generate_frame(generator: FrameGenerator, seed: int, frame_index: int):
    """Functional alias for :meth:`FrameGenerator.frame`."""
    return generator.frame(seed, frame_index)
