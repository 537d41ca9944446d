"""Fourier-optics image formation.

The optical response is built once per configuration: Zernike aberration
coefficients define the pupil phase, the squared Fourier transform of the
pupil gives the PSF, and the normalized magnitude of the PSF's transform
gives the MTF.  Atom arrays are then convolved by multiplication with the
MTF in frequency space and scaled to an expected-photon map.

Conventions
-----------
* Zernike polynomials use RMS (Noll) normalization; ``zernike_eval`` covers
  radial degrees one through four plus the two tilts.
* Coefficient amplitudes are in half-wave units: one coefficient unit
  advances the pupil phase by 4*pi.
* ``pupil_radius_fraction`` is the cutoff as a fraction of the half-grid at
  camera resolution, so PSF shape in camera pixels does not depend on the
  supersampling factor.
* Convolution is circular; grids are padded up to powers of two, and sites
  close to an edge of a non-padded-size frame see wrap-around leakage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError

__all__ = [
    "ZERNIKE_TERMS",
    "ABERRATION_TERMS",
    "TILT_TERMS",
    "PHASE_PER_UNIT",
    "OpticalConfig",
    "zernike_eval",
    "build_pupil",
    "pupil_to_psf",
    "psf_to_mtf",
    "build_mtf",
    "apply_optics",
    "encircled_energy",
    "airy_roi_radius",
    "solid_angle",
    "optical_grid_shape",
]

# phase advance per unit coefficient: coefficients are half-waves
PHASE_PER_UNIT = 4.0 * math.pi

# term -> (radial degree n, azimuthal order m); m >= 0 selects cos(m*theta),
# m < 0 selects sin(|m|*theta)
ZERNIKE_TERMS: dict[str, tuple[int, int]] = {
    "tilt_x": (1, 1),
    "tilt_y": (1, -1),
    "defocus": (2, 0),
    "oblique_astigmatism": (2, -2),
    "vertical_astigmatism": (2, 2),
    "vertical_coma": (3, -1),
    "horizontal_coma": (3, 1),
    "vertical_trefoil": (3, -3),
    "oblique_trefoil": (3, 3),
    "primary_spherical": (4, 0),
    "vertical_secondary_astigmatism": (4, 2),
    "oblique_secondary_astigmatism": (4, -2),
    "vertical_quadrafoil": (4, 4),
    "oblique_quadrafoil": (4, -4),
}

TILT_TERMS = ("tilt_x", "tilt_y")
ABERRATION_TERMS = tuple(t for t in ZERNIKE_TERMS if t not in TILT_TERMS)


def _radial(n: int, m: int, rho):
    if (n, m) == (1, 1):
        return rho
    if (n, m) == (2, 0):
        return 2.0 * rho**2 - 1.0
    if (n, m) == (2, 2):
        return rho**2
    if (n, m) == (3, 1):
        return 3.0 * rho**3 - 2.0 * rho
    if (n, m) == (3, 3):
        return rho**3
    if (n, m) == (4, 0):
        return 6.0 * rho**4 - 6.0 * rho**2 + 1.0
    if (n, m) == (4, 2):
        return 4.0 * rho**4 - 3.0 * rho**2
    if (n, m) == (4, 4):
        return rho**4
    raise ParameterError(f"no radial polynomial for (n={n}, m={m})")


def zernike_eval(term: str, rho, theta):
    """RMS-normalized Zernike polynomial of the named term at (rho, theta)."""
    if term not in ZERNIKE_TERMS:
        raise ParameterError(f"unknown Zernike term {term!r}")
    if np.any(np.asarray(rho) > 1.0 + 1e-12) or np.any(np.asarray(rho) < 0.0):
        raise ParameterError("rho must lie in [0, 1]")
    n, m = ZERNIKE_TERMS[term]
    norm = math.sqrt(n + 1.0) if m == 0 else math.sqrt(2.0 * (n + 1.0))
    angular = np.cos(m * np.asarray(theta)) if m >= 0 else np.sin(-m * np.asarray(theta))
    return norm * _radial(n, abs(m), rho) * angular


@dataclass
class OpticalConfig:
    zernike: dict[str, float] = field(default_factory=dict)
    pupil_radius_fraction: float = 0.5
    supersampling: int = 1
    numerical_aperture: float = 0.65
    wavelength: float = 461e-9
    magnification: float = 156.25
    physical_pixel_size: float = 16e-6

    def validate(self) -> None:
        for term in self.zernike:
            if term not in ZERNIKE_TERMS:
                raise ConfigError(f"unknown Zernike term {term!r}", "optics.zernike")
        if not (0.0 < self.pupil_radius_fraction <= 1.0):
            raise ConfigError("must lie in (0, 1]", "pupil_radius_fraction")
        if int(self.supersampling) != self.supersampling or self.supersampling < 1:
            raise ConfigError("must be a positive integer", "supersampling")
        if not (0.0 < self.numerical_aperture < 1.0):
            raise ConfigError("must lie in (0, 1)", "numerical_aperture")
        if self.wavelength <= 0:
            raise ConfigError("must be > 0", "wavelength")
        if self.magnification <= 0:
            raise ConfigError("must be > 0", "magnification")
        if self.physical_pixel_size <= 0:
            raise ConfigError("must be > 0", "physical_pixel_size")


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def optical_grid_shape(resolution: tuple[int, int], supersampling: int = 1) -> tuple[int, int]:
    """Supersampled FFT grid for a camera resolution, padded to powers of two."""
    height, width = resolution
    return (_next_pow2(height) * supersampling, _next_pow2(width) * supersampling)


def build_pupil(config: OpticalConfig, shape: tuple[int, int]) -> np.ndarray:
    """Complex pupil on the given (supersampled) grid.

    Unit magnitude inside the cutoff with the aberration phase, zero
    outside.  The cutoff radius per axis is ``pupil_radius_fraction`` of
    the camera-resolution half-grid, independent of supersampling.
    """
    config.validate()
    height, width = shape
    ss = int(config.supersampling)
    radius_y = config.pupil_radius_fraction * (height / ss) / 2.0
    radius_x = config.pupil_radius_fraction * (width / ss) / 2.0
    y = (np.arange(height) - height // 2)[:, None]
    x = (np.arange(width) - width // 2)[None, :]
    rho = np.sqrt((y / radius_y) ** 2 + (x / radius_x) ** 2)
    inside = rho <= 1.0
    theta = np.arctan2(y, np.broadcast_to(x, (height, width)))
    phase = np.zeros(shape, dtype=np.float64)
    rho_in = np.where(inside, rho, 0.0)
    for term, amplitude in config.zernike.items():
        if amplitude != 0.0:
            phase += amplitude * zernike_eval(term, rho_in, theta)
    pupil = np.zeros(shape, dtype=np.complex128)
    pupil[inside] = np.exp(1j * PHASE_PER_UNIT * phase[inside])
    return pupil


def pupil_to_psf(pupil: np.ndarray) -> np.ndarray:
    """PSF = |FFT(pupil)|^2, normalized to unit total, peak-centered."""
    field_ = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(pupil)))
    psf = np.abs(field_) ** 2
    total = psf.sum()
    if total == 0:
        raise ParameterError("pupil is empty; PSF undefined")
    return psf / total


def psf_to_mtf(psf: np.ndarray) -> np.ndarray:
    """MTF = |FFT(PSF)| normalized to 1 at DC, zero frequency at index (0, 0)."""
    otf = np.fft.fft2(np.fft.ifftshift(psf))
    mtf = np.abs(otf)
    return mtf / mtf[0, 0]


def build_mtf(config: OpticalConfig, resolution: tuple[int, int]) -> np.ndarray:
    """Pupil -> PSF -> MTF on the padded supersampled grid for a camera size."""
    shape = optical_grid_shape(resolution, config.supersampling)
    return psf_to_mtf(pupil_to_psf(build_pupil(config, shape)))


def apply_optics(
    atom_array: np.ndarray,
    mtf: np.ndarray,
    photons_per_atom: float,
    supersampling: int = 1,
) -> np.ndarray:
    """Convolve the atom array with the optical response and scale to photons.

    The atom array (camera resolution x supersampling) is embedded in the
    MTF grid, filtered in frequency space, cropped back, rescaled so the
    grid total matches the atom-array total times ``photons_per_atom``, and
    finally binned down to camera resolution by summation.
    """
    ss = int(supersampling)
    array_h, array_w = atom_array.shape
    if array_h % ss or array_w % ss:
        raise ParameterError("atom array shape must be a multiple of the supersampling factor")
    grid_h, grid_w = mtf.shape
    if grid_h < array_h or grid_w < array_w:
        raise ParameterError(
            f"MTF grid {mtf.shape} smaller than atom array {atom_array.shape}"
        )
    if (grid_h, grid_w) != (array_h, array_w):
        padded = np.zeros((grid_h, grid_w), dtype=np.float64)
        padded[:array_h, :array_w] = atom_array
    else:
        padded = atom_array
    # real transforms: the atom array is real and the MTF is an even filter,
    # so the half-spectrum carries everything
    spectrum = np.fft.rfft2(padded) * mtf[:, : grid_w // 2 + 1]
    filtered = np.abs(np.fft.irfft2(spectrum, s=(grid_h, grid_w)))
    cropped = filtered[:array_h, :array_w]
    total_in = atom_array.sum()
    total_out = cropped.sum()
    if total_in == 0.0 or total_out == 0.0:
        scaled = np.zeros_like(cropped)
    else:
        scaled = cropped * (photons_per_atom * total_in / total_out)
    return scaled.reshape(array_h // ss, ss, array_w // ss, ss).sum(axis=(1, 3))


def encircled_energy(field_2d: np.ndarray, center: tuple[float, float], radius: float) -> float:
    """Fraction of total intensity in pixels whose centers lie within radius."""
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    total = field_2d.sum()
    if total == 0:
        return 0.0
    height, width = field_2d.shape
    y = (np.arange(height) - center[0])[:, None]
    x = (np.arange(width) - center[1])[None, :]
    mask = y * y + x * x <= radius * radius
    return float(field_2d[mask].sum() / total)


def airy_roi_radius(
    wavelength: float, numerical_aperture: float, magnification: float, binned_pixel_size: float
) -> tuple[float, float]:
    """Bounds on the first-dark-ring radius at the sensor, in binned pixels.

    The focal-plane radius lies between 1.22*lambda/(2*NA) and sqrt(2)
    times that; multiplying by the magnification and dividing by the pixel
    pitch converts to pixels.
    """
    if not (0.0 < numerical_aperture < 1.0):
        raise ParameterError("numerical aperture must lie in (0, 1)")
    base = 1.22 * wavelength / (2.0 * numerical_aperture)
    scale = magnification / binned_pixel_size
    return base * scale, base * math.sqrt(2.0) * scale


def solid_angle(numerical_aperture: float) -> float:
    """Fraction of isotropic emission collected: (1 - sqrt(1 - NA^2)) / 2."""
    na = float(numerical_aperture)
    if not (0.0 <= na <= 1.0):
        raise ParameterError("numerical aperture must lie in [0, 1]")
    return (1.0 - math.sqrt(1.0 - na * na)) / 2.0
