"""Atom-array state: site map, occupancy, and imaging loss.

This stage produces two coupled artifacts for every frame: the ground truth
(per-site occupancy, loss flag, loss time) and the pre-optics atom array,
a supersampled grid holding 0 at empty positions, 1 at surviving atoms and
the survived exposure fraction at lost atoms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import RandomState
from .sampling import sample_loss_time

__all__ = [
    "LatticeSpec",
    "ExperimentConfig",
    "SiteTruth",
    "GroundTruth",
    "build_site_map",
    "sample_occupancy",
    "apply_imaging_loss",
]


@dataclass(frozen=True)
class LatticeSpec:
    """Rectangular grid of sites, rotated about the pattern center."""

    origin: tuple[float, float]        # (row, col) of the unrotated corner site
    spacing: tuple[float, float]       # (col step, row step) in pixels
    counts: tuple[int, int]            # (columns, rows)
    rotation: float = 0.0              # radians, about the pattern center


@dataclass
class ExperimentConfig:
    sites: list[tuple[int, int]] | None = None
    lattice: LatticeSpec | None = None
    filling_ratio: float = 1.0
    survival_probability: float = 1.0
    scattering_rate: float = 0.0       # photons per second per atom
    exposure_time: float = 0.0         # seconds
    explicit_occupancy: list[bool] | None = None

    def validate(self) -> None:
        if (self.sites is None) == (self.lattice is None):
            raise ConfigError("exactly one of sites or lattice must be given", "experiment")
        if not (0.0 <= self.filling_ratio <= 1.0):
            raise ConfigError(f"must lie in [0, 1], got {self.filling_ratio}", "filling_ratio")
        if not (0.0 < self.survival_probability <= 1.0):
            raise ConfigError(
                f"must lie in (0, 1], got {self.survival_probability}", "survival_probability"
            )
        if self.scattering_rate < 0:
            raise ConfigError("must be >= 0", "scattering_rate")
        if self.exposure_time < 0:
            raise ConfigError("must be >= 0", "exposure_time")


@dataclass
class SiteTruth:
    row: int
    col: int
    occupied: bool = False
    lost: bool = False
    loss_time: float | None = None


@dataclass
class GroundTruth:
    sites: list[SiteTruth] = field(default_factory=list)
    seed: int = 0
    frame_index: int = 0


def _expand_lattice(spec: LatticeSpec) -> list[tuple[int, int]]:
    ncols, nrows = spec.counts
    if ncols < 1 or nrows < 1:
        raise ConfigError("lattice counts must be >= 1", "lattice.counts")
    sx, sy = spec.spacing
    origin_row, origin_col = spec.origin
    # Rotation about the pattern center keeps a square lattice invariant
    # under quarter turns.
    center_col = (ncols - 1) * sx / 2.0
    center_row = (nrows - 1) * sy / 2.0
    cos_t, sin_t = math.cos(spec.rotation), math.sin(spec.rotation)
    sites = []
    for b in range(nrows):
        for a in range(ncols):
            dc = a * sx - center_col
            dr = b * sy - center_row
            col = origin_col + center_col + dc * cos_t - dr * sin_t
            row = origin_row + center_row + dc * sin_t + dr * cos_t
            sites.append((int(np.rint(row)), int(np.rint(col))))
    return sites


def build_site_map(
    config: ExperimentConfig, resolution: tuple[int, int] | None = None
) -> list[tuple[int, int]]:
    """Deterministic list of (row, col) integer camera coordinates.

    ``resolution`` is (height, width); when given, out-of-bounds sites are
    rejected.  Duplicate sites are always rejected.
    """
    config.validate()
    if config.sites is not None:
        sites = [(int(r), int(c)) for r, c in config.sites]
    else:
        sites = _expand_lattice(config.lattice)
    seen = set()
    for site in sites:
        if site in seen:
            raise ConfigError(f"duplicate site {site}", "sites")
        seen.add(site)
    if resolution is not None:
        height, width = resolution
        for row, col in sites:
            if not (0 <= row < height and 0 <= col < width):
                raise ConfigError(
                    f"site ({row}, {col}) outside resolution {width}x{height}", "sites"
                )
    if config.explicit_occupancy is not None and len(config.explicit_occupancy) != len(sites):
        raise ConfigError(
            f"explicit_occupancy has {len(config.explicit_occupancy)} entries "
            f"for {len(sites)} sites",
            "explicit_occupancy",
        )
    return sites


def sample_occupancy(
    state: RandomState, sites: list[tuple[int, int]], config: ExperimentConfig
) -> GroundTruth:
    """Fill each site independently with probability ``filling_ratio``.

    ``explicit_occupancy`` overrides sampling entirely (no draws consumed).
    """
    truth = GroundTruth(sites=[SiteTruth(row=r, col=c) for r, c in sites])
    if config.explicit_occupancy is not None:
        if len(config.explicit_occupancy) != len(sites):
            raise ConfigError("explicit_occupancy length mismatch", "explicit_occupancy")
        for site, occ in zip(truth.sites, config.explicit_occupancy):
            site.occupied = bool(occ)
        return truth
    if sites:
        u = np.atleast_1d(state.uniform(len(sites)))
        for site, draw in zip(truth.sites, u):
            site.occupied = bool(draw < config.filling_ratio)
    return truth


def apply_imaging_loss(
    state: RandomState,
    truth: GroundTruth,
    p: float,
    resolution: tuple[int, int],
    supersampling: int = 1,
) -> tuple[GroundTruth, np.ndarray]:
    """Decide losses and render the atom array.

    Each occupied site survives the exposure with probability ``p``; lost
    sites get a loss time drawn from the exponential-decay model and that
    value becomes the site's brightness (survived fraction of the exposure,
    linear in collected photons).  Draw order: one survival uniform per
    occupied site in site-index order, then one loss-time draw per lost
    site in site-index order.

    Returns the updated truth plus the atom array of shape
    ``(height*supersampling, width*supersampling)``.
    """
    if not (0.0 < p <= 1.0):
        raise ConfigError(f"must lie in (0, 1], got {p}", "survival_probability")
    height, width = resolution
    ss = int(supersampling)
    if ss < 1:
        raise ConfigError("supersampling must be >= 1", "supersampling")
    array = np.zeros((height * ss, width * ss), dtype=np.float64)

    occupied = [site for site in truth.sites if site.occupied]
    if occupied:
        survival = np.atleast_1d(state.uniform(len(occupied)))
        lost_sites = []
        for site, u in zip(occupied, survival):
            if u >= p:
                site.lost = True
                lost_sites.append(site)
        for site in lost_sites:
            site.loss_time = sample_loss_time(state, p)

    for site in truth.sites:
        if not site.occupied:
            continue
        value = site.loss_time if site.lost else 1.0
        _deposit(array, site.row, site.col, value, ss)
    return truth, array


def _deposit(array: np.ndarray, row: int, col: int, value: float, ss: int) -> None:
    """Write a site's brightness at its exact center on the supersampled grid.

    The center of camera pixel k sits at subpixel (k + 0.5)*ss - 0.5.  For
    odd factors this is an integer subpixel and the full value lands there;
    for even factors it is a half-integer, so the value splits bilinearly
    over the two straddling subpixels per axis (weights are exact powers of
    two, keeping the array total exact).
    """
    pos_r = (row + 0.5) * ss - 0.5
    pos_c = (col + 0.5) * ss - 0.5

    def axis_weights(pos: float):
        low = math.floor(pos)
        if pos == low:
            return [(low, 1.0)]
        return [(low, 0.5), (low + 1, 0.5)]

    for r_idx, wr in axis_weights(pos_r):
        for c_idx, wc in axis_weights(pos_c):
            array[r_idx, c_idx] += value * wr * wc
