"""Sensor models: expected photons in, quantized 16-bit frames out.

The EMCCD pipeline adds spurious-charge sources per binned pixel, draws
Poisson primaries, amplifies them through the stochastic EM register, adds
spontaneous serial-register charges (each amplified as a single primary),
and reads out through preamp scale, bias offset and Gaussian noise.

The CMOS pipeline has no charge amplification; it combines per-pixel
fixed-pattern state (offset, gain, dark rate, static column structure)
with shot noise, temporal row noise and Gaussian read noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError
from .rng import RandomState
from .sampling import (
    sample_em_gain,
    sample_gamma,
    sample_gaussian,
    sample_gumbel_zero_mean,
    sample_poisson,
)

__all__ = [
    "CameraConfigEMCCD",
    "CameraConfigCMOS",
    "PixelCharacteristics",
    "quantize",
    "simulate_emccd",
    "init_cmos_sensor",
    "simulate_cmos",
]


@dataclass
class CameraConfigEMCCD:
    quantum_efficiency: float = 0.9
    dark_current: float = 0.0       # electrons / physical pixel / second
    cic_rate: float = 0.0           # events / physical pixel / frame
    scic_rate: float = 0.0          # events / readout pixel / frame
    stray_rate: float = 0.0         # photons / physical pixel / second
    em_gain: float = 1.0
    preamp_gain: float = 1.0        # electrons per count
    bias_clamp: float = 0.0         # counts
    readout_sigma: float = 0.0      # counts
    exposure: float = 0.0           # seconds
    resolution: tuple[int, int] = (512, 512)  # (width, height), physical pixels
    binning: int = 1

    def validate(self) -> None:
        if not (0.0 <= self.quantum_efficiency <= 1.0):
            raise ConfigError("must lie in [0, 1]", "quantum_efficiency")
        for name in ("dark_current", "cic_rate", "scic_rate", "stray_rate"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", name)
        if self.em_gain < 1.0:
            raise ConfigError("must be >= 1", "em_gain")
        if self.preamp_gain <= 0.0:
            raise ConfigError("must be > 0", "preamp_gain")
        if self.readout_sigma < 0.0:
            raise ConfigError("must be >= 0", "readout_sigma")
        if self.exposure < 0.0:
            raise ConfigError("must be >= 0", "exposure")
        width, height = self.resolution
        if width < 1 or height < 1:
            raise ConfigError("resolution must be positive", "resolution")
        if int(self.binning) != self.binning or self.binning < 1:
            raise ConfigError("must be a positive integer", "binning")
        if width % self.binning or height % self.binning:
            raise ConfigError(
                f"resolution {width}x{height} not divisible by binning {self.binning}",
                "binning",
            )

    @property
    def image_shape(self) -> tuple[int, int]:
        """(height, width) of the emitted frame, in binned pixels."""
        width, height = self.resolution
        return height // self.binning, width // self.binning


@dataclass
class CameraConfigCMOS:
    quantum_efficiency: float = 0.9
    exposure: float = 0.0
    resolution: tuple[int, int] = (512, 512)   # (width, height)
    offset_nominal: float = 0.0                # counts
    offset_sigma_pixel: float = 0.0            # counts, static per pixel
    offset_sigma_row: float = 0.0              # counts, static per row
    offset_sigma_column: float = 0.0           # counts, static per column
    gain: float = 1.0                          # counts per electron
    gain_sigma: float = 0.0                    # counts per electron, static per pixel
    dark_rate_shape: float = 0.0               # Gamma shape of per-pixel dark rate
    dark_rate_scale: float = 0.0               # Gamma scale, electrons/pixel/second
    column_flicker_beta: float = 0.0           # counts, static Gumbel column term
    row_noise_sigma: float = 0.0               # counts, temporal per row per frame
    read_noise_sigma: float = 0.0              # counts, temporal per pixel
    stray_rate: float = 0.0                    # photons/pixel/second

    def validate(self) -> None:
        if not (0.0 <= self.quantum_efficiency <= 1.0):
            raise ConfigError("must lie in [0, 1]", "quantum_efficiency")
        if self.exposure < 0.0:
            raise ConfigError("must be >= 0", "exposure")
        width, height = self.resolution
        if width < 1 or height < 1:
            raise ConfigError("resolution must be positive", "resolution")
        if self.gain <= 0.0:
            raise ConfigError("must be > 0", "gain")
        for name in (
            "offset_sigma_pixel",
            "offset_sigma_row",
            "offset_sigma_column",
            "gain_sigma",
            "dark_rate_shape",
            "dark_rate_scale",
            "column_flicker_beta",
            "row_noise_sigma",
            "read_noise_sigma",
            "stray_rate",
        ):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", name)

    @property
    def image_shape(self) -> tuple[int, int]:
        width, height = self.resolution
        return height, width


@dataclass
class PixelCharacteristics:
    """Fixed-pattern state, frozen at sensor initialization."""

    offset: np.ndarray          # (H, W) counts: nominal + row/column/pixel terms
    column_gumbel: np.ndarray   # (W,) counts: static zero-mean Gumbel column draw
    gain: np.ndarray            # (H, W) counts per electron
    dark_rate: np.ndarray       # (H, W) electrons per second

    def effective_offset(self) -> np.ndarray:
        return self.offset + self.column_gumbel[None, :]


def quantize(values) -> np.ndarray | int:
    """Round half to even and clamp into the 16-bit range."""
    clipped = np.clip(np.rint(values), 0, 65535)
    if np.ndim(values) == 0:
        return int(clipped)
    return clipped.astype(np.uint16)


def simulate_emccd(
    photon_map: np.ndarray, config: CameraConfigEMCCD, state: RandomState
) -> np.ndarray:
    """One EMCCD frame for an expected-photon map at binned resolution.

    Draw order per frame: Poisson primaries (row-major), one EM-gain uniform
    per pixel with at least one primary, spontaneous serial charges, then
    readout Gaussians.
    """
    config.validate()
    shape = config.image_shape
    if photon_map.shape != shape:
        raise ParameterError(
            f"photon map shape {photon_map.shape} does not match binned resolution {shape}"
        )
    area = float(config.binning) ** 2
    rate = (
        config.quantum_efficiency
        * (photon_map + config.stray_rate * config.exposure * area)
        + config.dark_current * config.exposure * area
        + config.cic_rate * area
    )
    primaries = sample_poisson(state, rate)
    electrons = sample_em_gain(state, primaries, config.em_gain)

    if config.scic_rate > 0.0:
        # spontaneous serial-register charges: each one amplified on its own
        # as a single primary electron
        events = sample_poisson(state, np.full(shape, config.scic_rate))
        total_events = int(events.sum())
        if total_events:
            draws = sample_em_gain(state, np.ones(total_events, dtype=np.int64), config.em_gain)
            flat = np.zeros(events.size)
            np.add.at(flat, np.repeat(np.arange(events.size), events.reshape(-1)), draws)
            electrons = electrons + flat.reshape(shape)

    counts = electrons / config.preamp_gain + config.bias_clamp
    if config.readout_sigma > 0.0:
        counts = counts + sample_gaussian(state, 0.0, config.readout_sigma, size=shape)
    return quantize(counts)


def init_cmos_sensor(config: CameraConfigCMOS, sensor_state: RandomState) -> PixelCharacteristics:
    """Draw the static per-pixel state; same sensor seed, same bits.

    Draw order: row offsets, Gaussian column offsets, Gumbel column offsets,
    pixel offsets, pixel gains, dark rates.
    """
    config.validate()
    height, width = config.image_shape
    offset = np.full((height, width), float(config.offset_nominal))
    row_terms = sample_gaussian(sensor_state, 0.0, config.offset_sigma_row, size=height)
    column_terms = sample_gaussian(sensor_state, 0.0, config.offset_sigma_column, size=width)
    if config.column_flicker_beta > 0.0:
        column_gumbel = sample_gumbel_zero_mean(sensor_state, config.column_flicker_beta, size=width)
    else:
        column_gumbel = np.zeros(width)
    pixel_terms = sample_gaussian(
        sensor_state, 0.0, config.offset_sigma_pixel, size=(height, width)
    )
    offset += row_terms[:, None] + column_terms[None, :] + pixel_terms
    gain = sample_gaussian(sensor_state, config.gain, config.gain_sigma, size=(height, width))
    if config.dark_rate_shape > 0.0 and config.dark_rate_scale > 0.0:
        dark = sample_gamma(
            sensor_state, config.dark_rate_shape, config.dark_rate_scale, size=(height, width)
        )
    else:
        dark = np.zeros((height, width))
    return PixelCharacteristics(
        offset=offset,
        column_gumbel=np.asarray(column_gumbel, dtype=np.float64),
        gain=np.asarray(gain, dtype=np.float64),
        dark_rate=dark,
    )


def simulate_cmos(
    photon_map: np.ndarray,
    config: CameraConfigCMOS,
    characteristics: PixelCharacteristics,
    state: RandomState,
) -> np.ndarray:
    """One CMOS frame: shot noise, dark current and readout terms only.

    Draw order per frame: Poisson electrons (row-major), per-row temporal
    noise, per-pixel read noise.
    """
    config.validate()
    shape = config.image_shape
    if photon_map.shape != shape:
        raise ParameterError(
            f"photon map shape {photon_map.shape} does not match resolution {shape}"
        )
    if characteristics.offset.shape != shape:
        raise ParameterError(
            f"sensor characteristics shape {characteristics.offset.shape} "
            f"does not match resolution {shape}"
        )
    rate = (
        config.quantum_efficiency * (photon_map + config.stray_rate * config.exposure)
        + characteristics.dark_rate * config.exposure
    )
    electrons = sample_poisson(state, rate)
    counts = characteristics.effective_offset() + characteristics.gain * electrons
    if config.row_noise_sigma > 0.0:
        counts = counts + sample_gaussian(state, 0.0, config.row_noise_sigma, size=shape[0])[:, None]
    if config.read_noise_sigma > 0.0:
        counts = counts + sample_gaussian(state, 0.0, config.read_noise_sigma, size=shape)
    return quantize(counts)
