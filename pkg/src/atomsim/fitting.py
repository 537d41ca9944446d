"""Parameter extraction from image corpora.

Covers the calibration workflows: ROI-sum histograms and their
three-component occupancy mixture (empty / occupied / lost-during-exposure),
EM-gain recovery from exponential pixel-histogram tails, and Zernike
coefficient measurement from averaged single-site spots.

The occupancy mixture ties its shape parameter to its weights: the
lost-atom component's survival probability equals b/(b+c), the fraction of
initially loaded atoms that kept fluorescing to the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import erf

from .errors import FitError, ParameterError
from .optics import OpticalConfig, build_pupil, optical_grid_shape, pupil_to_psf

__all__ = [
    "Histogram",
    "build_histogram",
    "roi_disk_offsets",
    "roi_sums",
    "pdf_exp_decay",
    "pdf_lost",
    "ThreeComponentFit",
    "initial_three_component_guess",
    "fit_three_component",
    "EmTailFit",
    "fit_em_tail",
    "ZernikeFit",
    "average_spot",
    "fit_zernike",
    "photons_from_separation",
]


# ---------------------------------------------------------------------------
# Histograms and ROI sums
# ---------------------------------------------------------------------------

@dataclass
class Histogram:
    bin_width: float
    origin: float
    counts: np.ndarray  # nonnegative integers

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (np.arange(self.counts.size) + 0.5) * self.bin_width

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def build_histogram(values, bin_width: float, origin: float | None = None) -> Histogram:
    """Half-open bins [origin + i*w, origin + (i+1)*w); every value counted."""
    if bin_width <= 0:
        raise ParameterError("bin_width must be > 0")
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ParameterError("cannot build a histogram from no values")
    if origin is None:
        origin = math.floor(arr.min() / bin_width) * bin_width
    idx = np.floor((arr - origin) / bin_width).astype(np.int64)
    if np.any(idx < 0):
        raise ParameterError("histogram origin lies above some values")
    counts = np.bincount(idx)
    return Histogram(bin_width=float(bin_width), origin=float(origin), counts=counts)


def roi_disk_offsets(radius: float) -> np.ndarray:
    """(row, col) offsets of pixels whose centers lie within the radius."""
    if radius < 0:
        raise ParameterError("radius must be >= 0")
    reach = int(math.floor(radius))
    offsets = [
        (dr, dc)
        for dr in range(-reach, reach + 1)
        for dc in range(-reach, reach + 1)
        if dr * dr + dc * dc <= radius * radius
    ]
    return np.asarray(offsets, dtype=np.int64).reshape(-1, 2)


def roi_sums(images, sites, radius_pixels: float) -> np.ndarray:
    """Per-(image, site) sums of the pixel disk; ordered image-major."""
    offsets = roi_disk_offsets(radius_pixels)
    image_list = [np.asarray(img) for img in images]
    if not image_list:
        return np.empty(0)
    height, width = image_list[0].shape
    reach = int(math.floor(radius_pixels))
    for row, col in sites:
        if not (reach <= row < height - reach and reach <= col < width - reach):
            raise ParameterError(
                f"site ({row}, {col}) too close to the border for radius {radius_pixels}"
            )
    rows = np.asarray([s[0] for s in sites])[:, None] + offsets[:, 0][None, :]
    cols = np.asarray([s[1] for s in sites])[:, None] + offsets[:, 1][None, :]
    out = np.empty(len(image_list) * len(sites))
    for i, img in enumerate(image_list):
        if img.shape != (height, width):
            raise ParameterError("images must share one shape")
        out[i * len(sites) : (i + 1) * len(sites)] = img[rows, cols].sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# Mixture-component densities
# ---------------------------------------------------------------------------

def pdf_exp_decay(x, p: float, mu0: float, mu1: float):
    """Brightness density of atoms lost mid-exposure, before readout blur.

    Supported on [mu0, mu1]; p -> 1 degenerates to the uniform density.
    """
    d = mu1 - mu0
    if d <= 0:
        raise ParameterError("mu1 must exceed mu0")
    x = np.asarray(x, dtype=np.float64)
    if p == 1.0:
        inside = (x >= mu0) & (x <= mu1)
        return np.where(inside, 1.0 / d, 0.0)
    if not (0.0 < p < 1.0):
        raise ParameterError(f"survival probability must lie in (0, 1), got {p}")
    inside = (x >= mu0) & (x <= mu1)
    t = np.where(inside, (x - mu0) / d, 0.0)
    return np.where(inside, p**t * math.log(p) / (d * (p - 1.0)), 0.0)


def pdf_lost(x, p: float, mu0: float, mu1: float, sigma: float):
    """Lost-atom density convolved with the Gaussian readout blur.

    Closed form: ln(p) * p^((x-mu0)/d) * exp(sigma^2 ln(p)^2 / (2 d^2))
    * (f(mu0) - f(mu1)) / (2 d (p-1)), where
    f(t) = erf((x-t)/(sqrt(2) sigma) + sigma*ln(p)/(sqrt(2) d)) and d = mu1-mu0.
    """
    d = mu1 - mu0
    if d <= 0:
        raise ParameterError("mu1 must exceed mu0")
    if sigma <= 0:
        raise ParameterError("sigma must be > 0")
    x = np.asarray(x, dtype=np.float64)
    sqrt2 = math.sqrt(2.0)
    if p == 1.0:
        # uniform density blurred by the Gaussian
        bracket = erf((x - mu0) / (sqrt2 * sigma)) - erf((x - mu1) / (sqrt2 * sigma))
        return bracket / (2.0 * d)
    if not (0.0 < p < 1.0):
        raise ParameterError(f"survival probability must lie in (0, 1), got {p}")
    a = math.log(p) / d
    shift = sigma * a / sqrt2
    bracket = erf((x - mu0) / (sqrt2 * sigma) + shift) - erf((x - mu1) / (sqrt2 * sigma) + shift)
    prefactor = math.log(p) / (d * (p - 1.0)) * math.exp(0.5 * (sigma * a) ** 2)
    out = prefactor * np.exp(a * (x - mu0)) * bracket / 2.0
    return np.where(bracket <= 0.0, 0.0, out)


# ---------------------------------------------------------------------------
# Simplex driver shared by the fits
# ---------------------------------------------------------------------------

def _simplex_around(x0: np.ndarray, steps: np.ndarray) -> np.ndarray:
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] += steps[i]
    return simplex


def _minimize_simplex(fun, x0, steps, max_restarts=2, xatol=1e-8, maxiter=100_000):
    """Nelder-Mead with restart on stagnation."""
    x = np.asarray(x0, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.float64)
    best_val = np.inf
    best_x = x
    for restart in range(max_restarts + 1):
        res = minimize(
            fun,
            best_x if restart else x,
            method="Nelder-Mead",
            options=dict(
                maxiter=maxiter,
                maxfev=maxiter,
                xatol=xatol,
                fatol=1e-12,
                initial_simplex=_simplex_around(best_x if restart else x, steps / (4**restart)),
            ),
        )
        if res.fun >= best_val * (1.0 - 1e-10):
            if res.fun < best_val:
                best_val, best_x = res.fun, res.x
            break
        best_val, best_x = res.fun, res.x
    if not np.isfinite(best_val):
        raise FitError("simplex search did not reach a finite objective")
    return best_x, best_val


def _fd_hessian(fun, x, steps):
    n = x.size
    hessian = np.empty((n, n))
    f0 = fun(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        hessian[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / steps[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = steps[j]
            hessian[i, j] = hessian[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return hessian


def _covariance_from_chi2(fun, x, steps, dof):
    """Parameter covariance from the local quadratic model of a chi-square."""
    hessian = _fd_hessian(fun, x, steps)
    scale = max(fun(x) / max(dof, 1), 1e-300)
    try:
        cov = 2.0 * scale * np.linalg.pinv(hessian)
    except np.linalg.LinAlgError:  # pragma: no cover
        return np.full((x.size, x.size), np.nan)
    return cov


# ---------------------------------------------------------------------------
# Three-component occupancy mixture
# ---------------------------------------------------------------------------

@dataclass
class ThreeComponentFit:
    a: float                     # unoccupied fraction
    b: float                     # occupied-and-kept fraction
    c: float                     # lost-during-exposure fraction
    mu0: float                   # unoccupied peak position
    mu1: float                   # occupied peak position
    sigma0: float                # unoccupied peak width
    sigma1: float                # occupied peak width (shot noise widens it)
    p: float                     # survival probability, b / (b + c)
    d: float                     # peak separation, mu1 - mu0
    uncertainties: dict = field(default_factory=dict)
    chi2: float = float("nan")
    n_bins: int = 0

    @property
    def sigma(self) -> float:
        """Single Gaussian blur assigned to the lost component."""
        return math.sqrt(0.5 * (self.sigma0**2 + self.sigma1**2))


def _gaussian_pdf(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))


def _mixture_pdf(x, a, c, mu0, mu1, sigma0, sigma1):
    b = 1.0 - a - c
    p = 1.0 if (b + c) <= 0 else b / (b + c)
    out = a * _gaussian_pdf(x, mu0, sigma0) + b * _gaussian_pdf(x, mu1, sigma1)
    if c > 0:
        sigma_mid = math.sqrt(0.5 * (sigma0**2 + sigma1**2))
        out = out + c * pdf_lost(x, p, mu0, mu1, sigma_mid)
    return out


def initial_three_component_guess(hist: Histogram) -> dict:
    """Crude two-peak starting point for the mixture fit.

    Raises :class:`FitError` when the histogram does not show two local
    maxima separated by a clear valley.
    """
    counts = hist.counts.astype(np.float64)
    if counts.size < 8:
        raise FitError("histogram too coarse to locate two peaks")
    kernel = np.ones(5) / 5.0
    smooth = np.convolve(counts, kernel, mode="same")
    top = smooth.max()
    maxima = [
        i
        for i in range(smooth.size)
        if smooth[i] >= 0.02 * top
        and smooth[i] == smooth[max(0, i - 2) : i + 3].max()
    ]
    maxima.sort(key=lambda i: -smooth[i])
    peak0 = maxima[0] if maxima else int(np.argmax(smooth))
    peak1 = None
    min_gap = max(3, counts.size // 20)
    for candidate in maxima[1:]:
        if abs(candidate - peak0) < min_gap:
            continue
        lo_idx, hi_idx = sorted((peak0, candidate))
        valley = smooth[lo_idx : hi_idx + 1].min()
        if valley < 0.7 * min(smooth[peak0], smooth[candidate]):
            peak1 = candidate
            break
    if peak1 is None:
        raise FitError("histogram does not show two discernible peaks")
    lo_idx, hi_idx = sorted((peak0, peak1))
    centers = hist.centers
    mu0, mu1 = centers[lo_idx], centers[hi_idx]
    half = smooth[lo_idx] / 2.0
    width = np.count_nonzero(smooth[max(0, lo_idx - 20) : lo_idx + 20] >= half)
    sigma = max(width, 2.0) * hist.bin_width / 2.355
    midpoint = 0.5 * (mu0 + mu1)
    frac_low = counts[centers < midpoint].sum() / counts.sum()
    return {
        "a": min(max(frac_low - 0.05, 0.05), 0.9),
        "c": 0.10,
        "mu0": float(mu0),
        "mu1": float(mu1),
        "sigma": float(sigma),
    }


def fit_three_component(hist: Histogram, init: dict | None = None) -> ThreeComponentFit:
    """Weighted least-squares fit of the occupancy mixture to a histogram.

    Parameters are (a, c, mu0, mu1, sigma0, sigma1) with b = 1 - a - c and
    the survival probability tied to the weights as p = b/(b+c).  The two
    peaks carry independent widths because charge amplification adds
    brightness-dependent spread; the lost component is blurred with their
    root-mean-square.  Weights are 1/max(count, 1); uncertainties come from
    the local quadratic model of the chi-square surface.
    """
    if init is None:
        init = initial_three_component_guess(hist)
    required = ("a", "c", "mu0", "mu1")
    missing = [k for k in required if k not in init]
    if missing or ("sigma" not in init and "sigma0" not in init):
        raise ParameterError(f"init guesses missing {missing or ['sigma']}")
    sigma0_init = float(init.get("sigma0", init.get("sigma")))
    sigma1_init = float(init.get("sigma1", 1.5 * sigma0_init))
    centers = hist.centers
    counts = hist.counts.astype(np.float64)
    weights = 1.0 / np.maximum(counts, 1.0)
    norm = hist.total * hist.bin_width
    scale = max(abs(init["mu1"]), 1.0)

    def unpack(theta):
        a, c, mu0s, mu1s, s0s, s1s = theta
        return a, c, mu0s * scale, mu1s * scale, s0s * scale, s1s * scale

    def objective(theta):
        a, c, mu0, mu1, sigma0, sigma1 = unpack(theta)
        b = 1.0 - a - c
        penalty = 0.0
        for value in (a, b, c):
            if value < 0:
                penalty += 1e8 * (1.0 + value**2)
        if sigma0 <= 0 or sigma1 <= 0 or mu1 - mu0 <= sigma0 * 0.1:
            penalty += 1e8
        if penalty:
            return penalty
        p = 1.0 if (b + c) <= 0 else b / (b + c)
        if p <= 1e-9:
            return 1e8
        model = norm * _mixture_pdf(centers, a, c, mu0, mu1, sigma0, sigma1)
        return float(np.sum(weights * (counts - model) ** 2))

    x0 = np.array(
        [
            init["a"],
            init["c"],
            init["mu0"] / scale,
            init["mu1"] / scale,
            sigma0_init / scale,
            sigma1_init / scale,
        ]
    )
    steps = np.array([0.05, 0.05, 0.02, 0.02, 0.01, 0.01])
    best_x, best_val = _minimize_simplex(objective, x0, steps)
    a, c, mu0, mu1, sigma0, sigma1 = unpack(best_x)
    b = 1.0 - a - c
    if not (0 <= a <= 1 and 0 <= c <= 1 and b >= 0 and mu1 > mu0 and sigma0 > 0 and sigma1 > 0):
        raise FitError("mixture fit converged outside the physical domain")
    p = 1.0 if (b + c) <= 0 else b / (b + c)

    dof = max(int(np.count_nonzero(counts > 0)) - 6, 1)
    cov = _covariance_from_chi2(objective, best_x, steps * 2e-3, dof)
    jac_scale = np.array([1.0, 1.0, scale, scale, scale, scale])
    cov_nat = cov * np.outer(jac_scale, jac_scale)
    sd = np.sqrt(np.maximum(np.diag(cov_nat), 0.0))
    var_b = cov_nat[0, 0] + cov_nat[1, 1] + 2.0 * cov_nat[0, 1]
    sd_b = math.sqrt(max(var_b, 0.0))
    # delta method for p = b/(b+c) in terms of (a, c)
    if (b + c) > 0:
        # p = (1-a-c)/(1-a): dp/da = -c/(b+c)^2, dp/dc = -1/(b+c)
        dp_da = -c / (b + c) ** 2
        dp_dc = -1.0 / (b + c)
        grad = np.array([dp_da, dp_dc])
        var_p = grad @ cov_nat[:2, :2] @ grad
        sd_p = math.sqrt(max(var_p, 0.0))
    else:
        sd_p = float("nan")
    sd_d = math.sqrt(max(cov_nat[2, 2] + cov_nat[3, 3] - 2.0 * cov_nat[2, 3], 0.0))
    uncertainties = {
        "a": sd[0],
        "c": sd[1],
        "mu0": sd[2],
        "mu1": sd[3],
        "sigma0": sd[4],
        "sigma1": sd[5],
        "b": sd_b,
        "p": sd_p,
        "d": sd_d,
    }
    return ThreeComponentFit(
        a=a,
        b=b,
        c=c,
        mu0=mu0,
        mu1=mu1,
        sigma0=sigma0,
        sigma1=sigma1,
        p=p,
        d=mu1 - mu0,
        uncertainties=uncertainties,
        chi2=best_val,
        n_bins=int(np.count_nonzero(counts > 0)),
    )


# ---------------------------------------------------------------------------
# EM-gain tail
# ---------------------------------------------------------------------------

@dataclass
class EmTailFit:
    gain_counts: float          # exponential scale of the tail, in counts
    gain_uncertainty: float
    log_intercept: float
    n_bins: int

    def electron_gain(self, preamp_gain: float) -> float:
        return self.gain_counts * preamp_gain


def fit_em_tail(hist: Histogram, fit_range: tuple[float, float]) -> EmTailFit:
    """Log-linear least squares on the decaying tail of a pixel histogram."""
    lo, hi = fit_range
    if hi <= lo:
        raise ParameterError("fit range must satisfy lo < hi")
    centers = hist.centers
    mask = (centers >= lo) & (centers <= hi) & (hist.counts > 0)
    if np.count_nonzero(mask) < 3:
        raise FitError("fit range holds fewer than three populated bins")
    x = centers[mask]
    y = np.log(hist.counts[mask].astype(np.float64))
    (slope, intercept), cov = np.polyfit(x, y, 1, cov=True)
    if slope >= 0:
        raise FitError("histogram tail is not decaying; cannot fit a gain")
    gain = -1.0 / slope
    gain_sd = math.sqrt(max(cov[0, 0], 0.0)) * gain * gain
    return EmTailFit(
        gain_counts=float(gain),
        gain_uncertainty=float(gain_sd),
        log_intercept=float(intercept),
        n_bins=int(mask.sum()),
    )


# ---------------------------------------------------------------------------
# Zernike coefficients from an averaged spot
# ---------------------------------------------------------------------------

@dataclass
class ZernikeFit:
    coefficients: dict           # aberration terms
    tilt: dict                   # alignment-only, not physical aberrations
    uncertainties: dict          # per term, aberrations and tilt alike
    scale: float
    offset: float
    chi2: float


def average_spot(images, site, half_size: int, background_radius: float | None = None) -> np.ndarray:
    """Background-subtracted mean window around one site."""
    stack = np.stack([np.asarray(img, dtype=np.float64) for img in images])
    mean_image = stack.mean(axis=0)
    row, col = site
    height, width = mean_image.shape
    if not (half_size <= row < height - half_size and half_size <= col < width - half_size):
        raise ParameterError("site window extends beyond the image")
    window = mean_image[
        row - half_size : row + half_size + 1, col - half_size : col + half_size + 1
    ].copy()
    if background_radius is None:
        background_radius = 0.7 * half_size
    yy, xx = np.mgrid[-half_size : half_size + 1, -half_size : half_size + 1]
    annulus = yy * yy + xx * xx > background_radius**2
    window -= np.median(window[annulus])
    return window


class _SpotModel:
    """Renders candidate PSF windows on a fixed grid for the spot fit.

    The pupil geometry and the per-term polynomial values are precomputed
    once, so an evaluation costs one phase synthesis plus one FFT.
    """

    def __init__(
        self,
        optics_config: OpticalConfig,
        window_shape,
        terms,
        grid_size: int | None = None,
    ):
        from .optics import PHASE_PER_UNIT, zernike_eval

        self.ss = int(optics_config.supersampling)
        if grid_size is None:
            grid_size = optical_grid_shape((max(window_shape) * 2,) * 2, 1)[0]
        self.n = int(grid_size)
        self.window_shape = window_shape
        self.phase_scale = PHASE_PER_UNIT
        height = width = self.n * self.ss
        radius = optics_config.pupil_radius_fraction * self.n / 2.0
        y = (np.arange(height) - height // 2)[:, None]
        x = (np.arange(width) - width // 2)[None, :]
        rho = np.sqrt((y / radius) ** 2 + (x / radius) ** 2)
        self.inside = rho <= 1.0
        theta = np.arctan2(np.broadcast_to(y, rho.shape), np.broadcast_to(x, rho.shape))
        rho_in = rho[self.inside]
        theta_in = theta[self.inside]
        self.term_values = np.stack([zernike_eval(t, rho_in, theta_in) for t in terms])
        self.shape = (height, width)

    def render(self, theta_vector: np.ndarray) -> np.ndarray:
        phase = theta_vector @ self.term_values
        pupil = np.zeros(self.shape, dtype=np.complex128)
        pupil[self.inside] = np.exp(1j * self.phase_scale * phase)
        field_ = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(pupil)))
        psf = np.abs(field_) ** 2
        cam = psf.reshape(self.n, self.ss, self.n, self.ss).sum(axis=(1, 3))
        cam /= cam.sum()
        hh = self.window_shape[0] // 2
        hw = self.window_shape[1] // 2
        center = self.n // 2
        return cam[center - hh : center + hh + 1, center - hw : center + hw + 1]


def fit_zernike(
    mean_spot: np.ndarray,
    optics_config: OpticalConfig,
    init: dict | None = None,
    grid_size: int | None = None,
) -> ZernikeFit:
    """Least-squares Zernike coefficients from a background-subtracted spot.

    The model is the PSF rendered directly from a candidate pupil (one
    Fourier transform per evaluation), binned to camera pixels; tilt terms
    are free alignment parameters whose values are reported separately and
    carry no physical meaning.  Amplitude and residual background offset
    are solved linearly at every evaluation.

    The search runs in two stages: dominant even terms plus tilt first
    (seeded from a small defocus scan, since the even landscape is locally
    flat at zero), then all terms together.
    """
    from .optics import ABERRATION_TERMS, TILT_TERMS

    spot = np.asarray(mean_spot, dtype=np.float64)
    if spot.ndim != 2 or spot.shape[0] % 2 == 0 or spot.shape[1] % 2 == 0:
        raise ParameterError("mean_spot must be a 2D window with odd side lengths")
    core_diameter = 2.0 * 1.22 / optics_config.pupil_radius_fraction
    if min(spot.shape) < core_diameter:
        raise FitError(
            f"spot window {spot.shape} smaller than the PSF core (~{core_diameter:.1f} px)"
        )
    terms = list(ABERRATION_TERMS) + list(TILT_TERMS)
    model = _SpotModel(optics_config, spot.shape, terms, grid_size)
    flat_spot = spot.reshape(-1)
    n_pix = flat_spot.size
    s_mean = flat_spot.mean()
    centered_spot = flat_spot - s_mean

    def objective(theta):
        if np.any(np.abs(theta) > 2.0):
            return 1e12
        rendered = model.render(theta).reshape(-1)
        dm = rendered - rendered.mean()
        denom = float(dm @ dm)
        if denom <= 0:
            return 1e12
        amp = float(dm @ centered_spot) / denom
        resid = centered_spot - amp * dm
        return float(resid @ resid)

    x0 = np.array([(init or {}).get(t, 0.0) for t in terms])

    # stage 0: pick the defocus basin (the even-term landscape is symmetric
    # around zero, so a cold start needs a seed)
    defocus_idx = terms.index("defocus")
    if init is None or "defocus" not in init:
        best_seed, best_seed_val = 0.0, np.inf
        for seed in (0.0, 0.04, 0.08, 0.15, -0.04, -0.08):
            trial = x0.copy()
            trial[defocus_idx] = seed
            val = objective(trial)
            if val < best_seed_val:
                best_seed, best_seed_val = seed, val
        x0[defocus_idx] = best_seed

    # stage 1: dominant even terms plus alignment
    stage1 = [
        terms.index(t)
        for t in (
            "defocus",
            "vertical_astigmatism",
            "oblique_astigmatism",
            "primary_spherical",
            "tilt_x",
            "tilt_y",
        )
    ]

    def stage1_objective(sub):
        theta = x0.copy()
        theta[stage1] = sub
        return objective(theta)

    sub_best, _ = _minimize_simplex(
        stage1_objective, x0[stage1], np.full(len(stage1), 0.02), max_restarts=1, xatol=1e-6
    )
    x0[stage1] = sub_best

    # stage 2: every term
    best_x, best_val = _minimize_simplex(
        objective, x0, np.full(len(terms), 0.005), max_restarts=2, xatol=1e-7
    )

    dof = max(n_pix - len(terms) - 2, 1)
    cov = _covariance_from_chi2(objective, best_x, np.full(len(terms), 2e-4), dof)
    sd = np.sqrt(np.maximum(np.diag(cov), 0.0))

    rendered = model.render(best_x).reshape(-1)
    dm = rendered - rendered.mean()
    amp = float(dm @ centered_spot) / float(dm @ dm)
    off = float(s_mean - amp * rendered.mean())

    coefficients = {t: float(v) for t, v in zip(terms, best_x) if t not in TILT_TERMS}
    tilt = {t: float(v) for t, v in zip(terms, best_x) if t in TILT_TERMS}
    uncertainties = {t: float(s) for t, s in zip(terms, sd)}
    return ZernikeFit(
        coefficients=coefficients,
        tilt=tilt,
        uncertainties=uncertainties,
        scale=amp,
        offset=off,
        chi2=best_val,
    )


# ---------------------------------------------------------------------------
# Photon-budget arithmetic
# ---------------------------------------------------------------------------

def photons_from_separation(
    d: float,
    quantum_efficiency: float,
    em_gain: float,
    preamp_gain: float,
    exposure: float,
    solid_angle_fraction: float,
    roi_fraction: float,
) -> float:
    """Scattering rate (photons/atom/second) from a fitted peak separation."""
    factors = {
        "d": d,
        "quantum_efficiency": quantum_efficiency,
        "em_gain": em_gain,
        "preamp_gain": preamp_gain,
        "exposure": exposure,
        "solid_angle_fraction": solid_angle_fraction,
        "roi_fraction": roi_fraction,
    }
    for name, value in factors.items():
        if value <= 0:
            raise ParameterError(f"{name} must be > 0")
    return (
        d
        * preamp_gain
        / (quantum_efficiency * em_gain * exposure * solid_angle_fraction * roi_fraction)
    )
