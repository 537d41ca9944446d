"""Distribution samplers used throughout the imaging pipeline.

All samplers are deterministic functions of an explicit
:class:`~atomsim.rng.RandomState` plus parameters: replaying with an equal
(seed, stream) key reproduces bit-identical values.  Scalar calls and
vectorized calls (``size=...`` or array parameters) consume the underlying
uniform stream in a fixed, documented order.

Methods:

* Poisson           -- Knuth inter-arrival counting; transformed rejection
                       (Hormann's PTRS) above ``mean = 500`` where counting
                       would cost O(mean) per draw.
* Gaussian          -- Box-Muller transform.
* Gamma             -- Marsaglia-Tsang; shapes < 1 via the boost transform
                       (draw at shape+1, multiply by u**(1/shape)).
* Gumbel            -- inverse CDF, x = mu - beta*ln(-ln(r)).
* loss time         -- inverse CDF of the exponential-decay survival model.
* EM gain           -- inverse of the upper regularized incomplete gamma
                       function via third-order Schroder iteration.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .errors import NumericError, ParameterError
from .rng import RandomState, uniform_next

__all__ = [
    "uniform_next",
    "sample_poisson",
    "sample_gaussian",
    "sample_gamma",
    "sample_gumbel",
    "sample_gumbel_zero_mean",
    "sample_loss_time",
    "loss_time_from_uniform",
    "gumbel_from_uniform",
    "inverse_regularized_gamma_upper",
    "sample_em_gain",
]

# Above this mean, Knuth's method is both slow (O(mean) uniforms per draw)
# and at risk of double underflow (exp(-745) is the smallest normal power).
_KNUTH_MAX = 500.0
_TINY = np.finfo(np.float64).tiny


def _as_1d(values, dtype=np.float64):
    arr = np.asarray(values, dtype=dtype)
    return arr.reshape(-1), arr.shape


# ---------------------------------------------------------------------------
# Gaussian (Box-Muller)
# ---------------------------------------------------------------------------

def _standard_normals(state: RandomState, n: int) -> np.ndarray:
    """n standard normals; consumes 2*ceil(n/2) uniforms."""
    m = (n + 1) // 2
    u1 = np.atleast_1d(state.uniform(m))
    u2 = np.atleast_1d(state.uniform(m))
    # 1-u1 lies in (0, 1]: the log never sees zero.
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = (2.0 * np.pi) * u2
    z = np.empty(2 * m)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n]


def sample_gaussian(state: RandomState, mean: float, std: float, size=None):
    """Draw from Normal(mean, std**2); std=0 returns the mean exactly."""
    if not np.isfinite(mean):
        raise ParameterError(f"gaussian mean must be finite, got {mean}")
    if not np.isfinite(std) or std < 0:
        raise ParameterError(f"gaussian std must be finite and >= 0, got {std}")
    if size is None:
        return float(mean + std * _standard_normals(state, 1)[0])
    n = int(np.prod(size))
    z = _standard_normals(state, n).reshape(size)
    return mean + std * z


# ---------------------------------------------------------------------------
# Poisson
# ---------------------------------------------------------------------------

def _poisson_knuth(state: RandomState, lam: np.ndarray) -> np.ndarray:
    out = np.zeros(lam.size, dtype=np.int64)
    limit = np.exp(-lam)
    prod = np.ones(lam.size)
    active = np.arange(lam.size)
    while active.size:
        u = np.atleast_1d(state.uniform(active.size))
        prod[active] *= u
        done = prod[active] <= limit[active]
        out[active[~done]] += 1
        active = active[~done]
    return out


def _poisson_ptrs(state: RandomState, lam: np.ndarray) -> np.ndarray:
    """Hormann's transformed rejection with squeeze; exact for lam >= 10."""
    out = np.empty(lam.size, dtype=np.int64)
    b = 0.931 + 2.53 * np.sqrt(lam)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    v_r = 0.9277 - 3.6224 / (b - 2.0)
    log_lam = np.log(lam)
    active = np.arange(lam.size)
    while active.size:
        u = np.atleast_1d(state.uniform(active.size)) - 0.5
        v = np.atleast_1d(state.uniform(active.size))
        us = np.maximum(0.5 - np.abs(u), 1e-12)
        k = np.floor((2.0 * a[active] / us + b[active]) * u + lam[active] + 0.43)
        accept = (us >= 0.07) & (v <= v_r[active])
        rest = ~accept
        if np.any(rest):
            in_domain = (k >= 0) & ~((us < 0.013) & (v > us))
            with np.errstate(divide="ignore"):
                log_v = np.log(v * inv_alpha[active] / (a[active] / (us * us) + b[active]))
            ok = log_v <= (-lam[active] + k * log_lam[active] - gammaln(k + 1.0))
            accept |= rest & in_domain & ok
        out[active[accept]] = k[accept].astype(np.int64)
        active = active[~accept]
    return out


def sample_poisson(state: RandomState, mean, size=None):
    """Draw from Poisson(mean); ``mean`` may be an array for per-element rates."""
    scalar = size is None and np.ndim(mean) == 0
    if size is not None and np.ndim(mean) != 0:
        raise ParameterError("pass either an array mean or a size, not both")
    lam, shape = _as_1d(np.broadcast_to(mean, size) if size is not None else mean)
    if lam.size and (not np.all(np.isfinite(lam)) or np.any(lam < 0)):
        raise ParameterError("poisson mean must be finite and >= 0")
    out = np.zeros(lam.size, dtype=np.int64)
    # Fixed consumption order: counting for small means first, then rejection.
    small = lam <= _KNUTH_MAX
    if np.any(small):
        out[small] = _poisson_knuth(state, lam[small])
    if np.any(~small):
        out[~small] = _poisson_ptrs(state, lam[~small])
    if scalar:
        return int(out[0])
    return out.reshape(shape if size is None else size)


# ---------------------------------------------------------------------------
# Gamma (Marsaglia-Tsang)
# ---------------------------------------------------------------------------

def _gamma_marsaglia(state: RandomState, shape: float, n: int) -> np.ndarray:
    """Unit-scale Gamma(shape) for shape >= 1."""
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n)
    active = np.arange(n)
    while active.size:
        x = _standard_normals(state, active.size)
        v = (1.0 + c * x) ** 3
        u = np.atleast_1d(state.uniform(active.size))
        positive = v > 0
        squeeze = positive & (u < 1.0 - 0.0331 * x**4)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ok = positive & ~squeeze & (
                np.log(np.maximum(u, _TINY))
                < 0.5 * x * x + d * (1.0 - v + np.log(np.where(positive, v, 1.0)))
            )
        accept = squeeze | log_ok
        out[active[accept]] = d * v[accept]
        active = active[~accept]
    return out


def sample_gamma(state: RandomState, shape: float, scale: float, size=None):
    """Draw from Gamma(shape, scale) (mean shape*scale)."""
    if not np.isfinite(shape) or shape <= 0:
        raise ParameterError(f"gamma shape must be finite and > 0, got {shape}")
    if not np.isfinite(scale) or scale <= 0:
        raise ParameterError(f"gamma scale must be finite and > 0, got {scale}")
    n = 1 if size is None else int(np.prod(size))
    if shape >= 1.0:
        out = scale * _gamma_marsaglia(state, shape, n)
    else:
        # Boost transform: Gamma(shape) = Gamma(shape+1) * U**(1/shape).
        boosted = _gamma_marsaglia(state, shape + 1.0, n)
        u = np.maximum(np.atleast_1d(state.uniform(n)), _TINY)
        out = scale * boosted * u ** (1.0 / shape)
    if size is None:
        return float(out[0])
    return out.reshape(size)


# ---------------------------------------------------------------------------
# Gumbel (inverse CDF)
# ---------------------------------------------------------------------------

def gumbel_from_uniform(r, mu: float, beta: float):
    """Inverse Gumbel CDF: mu - beta*ln(-ln(r)) for r in (0, 1)."""
    return mu - beta * np.log(-np.log(r))


def sample_gumbel(state: RandomState, mu: float, beta: float, size=None):
    if not np.isfinite(beta) or beta <= 0:
        raise ParameterError(f"gumbel beta must be finite and > 0, got {beta}")
    if size is None:
        r = max(state.uniform(), _TINY)
        return float(gumbel_from_uniform(r, mu, beta))
    r = np.maximum(state.uniform(size), _TINY)
    return gumbel_from_uniform(r, mu, beta)


def sample_gumbel_zero_mean(state: RandomState, beta: float, size=None):
    """Gumbel with location -beta*euler_gamma, so the mean is zero."""
    return sample_gumbel(state, -beta * np.euler_gamma, beta, size=size)


# ---------------------------------------------------------------------------
# Imaging-loss time (inverse CDF of the exponential-decay model)
# ---------------------------------------------------------------------------

def loss_time_from_uniform(r, p: float):
    """Map uniform r to the survived exposure fraction t = log_p((p-1)*r + 1).

    p is the probability of surviving the whole exposure; p = 1 degenerates
    to the uniform limit t = r.
    """
    if p == 1.0:
        return np.asarray(r, dtype=np.float64) if np.ndim(r) else float(r)
    return np.log1p((p - 1.0) * np.asarray(r, dtype=np.float64)) / np.log(p)


def sample_loss_time(state: RandomState, p: float, size=None):
    if not np.isfinite(p) or p <= 0 or p > 1:
        raise ParameterError(f"survival probability must be in (0, 1], got {p}")
    r = state.uniform(size)
    out = loss_time_from_uniform(r, p)
    return float(out) if size is None else out


# ---------------------------------------------------------------------------
# Inverse upper regularized incomplete gamma (Schroder iteration)
# ---------------------------------------------------------------------------

def _schroder_terms(t, x: int, r):
    """f/f' and f''/f' for f(t) = r - Q(x, t), for one integer x >= 1.

    f/f' = r*(x-1)!*t**(1-x)*exp(t) - sum_{k=0}^{x-1} (x-1)!/(t**(x-k-1)*k!).
    Both parts accumulate factor-by-factor so factorials and large powers of
    t never appear on their own; exp(t) is folded in as x factors exp(t/x).
    """
    ex = np.exp(t / x)
    inv_t = 1.0 / t
    minuend = r * ex
    subtrahend = np.ones_like(t)
    term = np.ones_like(t)
    for j in range(1, x):
        minuend *= (j * ex) * inv_t
        term *= (x - j) * inv_t
        subtrahend += term
    f_over_fp = minuend - subtrahend
    fpp_over_fp = (x - 1.0) * inv_t - 1.0
    return f_over_fp, fpp_over_fp


def _invert_q_fixed_x(x: int, r: np.ndarray, step_tol_sq: float, max_iterations: int):
    """Schroder iteration for one primary count; returns (t, iterations)."""
    t = np.full(r.shape, float(x))
    done = np.zeros(t.size, dtype=bool)
    iterations = 0
    while not done.all():
        if iterations >= max_iterations:
            raise NumericError(
                f"Schroder iteration did not converge within {max_iterations} steps "
                f"for {int((~done).sum())} of {t.size} elements (x={x})"
            )
        idx = np.flatnonzero(~done)
        f_over_fp, fpp_over_fp = _schroder_terms(t[idx], x, r[idx])
        step = f_over_fp * (1.0 + 0.5 * f_over_fp * fpp_over_fp)
        t_next = t[idx] - step
        # Keep iterates in the domain; a wild step shrinks toward zero.
        bad = ~np.isfinite(t_next) | (t_next <= 0)
        t_next = np.where(bad, t[idx] / 8.0, t_next)
        converged = (t_next - t[idx]) ** 2 < step_tol_sq
        t[idx] = t_next
        done[idx] = converged & ~bad
        iterations += 1
    return t, iterations


def inverse_regularized_gamma_upper(
    x,
    r,
    step_tol_sq: float = 1e-8,
    max_iterations: int = 64,
    return_iterations: bool = False,
):
    """Solve Q(x, t) = r for t >= 0, with integer x >= 1 and r in (0, 1).

    Third-order Schroder iteration started at t0 = x (the mean of the
    distribution whose CDF is 1 - Q).  Each element iterates until the
    squared step drops below ``step_tol_sq``; exceeding ``max_iterations``
    raises :class:`NumericError`.
    """
    scalar = np.ndim(x) == 0 and np.ndim(r) == 0
    x_arr = np.atleast_1d(np.asarray(x))
    r_arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
    if x_arr.shape != r_arr.shape:
        x_arr, r_arr = np.broadcast_arrays(x_arr, r_arr)
        x_arr = np.ascontiguousarray(x_arr)
        r_arr = np.ascontiguousarray(r_arr)
    if x_arr.size == 0:
        empty = np.empty(0)
        return (empty, 0) if return_iterations else empty
    if not np.issubdtype(x_arr.dtype, np.integer):
        if not np.all(x_arr == np.floor(x_arr)):
            raise ParameterError("x must be a positive integer")
        x_arr = x_arr.astype(np.int64)
    if np.any(x_arr < 1):
        raise ParameterError("x must be >= 1")
    if np.any((r_arr <= 0) | (r_arr >= 1)):
        raise ParameterError("r must lie strictly inside (0, 1)")
    if not np.isfinite(step_tol_sq) or step_tol_sq <= 0:
        raise ParameterError("step_tol_sq must be positive")

    x_flat = x_arr.reshape(-1)
    rf = r_arr.reshape(-1)
    t = np.empty(rf.size, dtype=np.float64)
    iterations = 0
    # Elements sharing one primary count iterate together: the factor loops
    # inside the Schroder terms then run exactly x-1 times per group.
    for x_value in np.unique(x_flat):
        idx = np.flatnonzero(x_flat == x_value)
        t_group, used = _invert_q_fixed_x(int(x_value), rf[idx], step_tol_sq, max_iterations)
        t[idx] = t_group
        iterations = max(iterations, used)
    if not np.all(np.isfinite(t)):
        raise NumericError("Schroder iteration produced non-finite values")
    result = t.reshape(x_arr.shape)
    if scalar:
        result = float(result[0])
    if return_iterations:
        return result, iterations
    return result


# ---------------------------------------------------------------------------
# EM gain
# ---------------------------------------------------------------------------

def sample_em_gain(state: RandomState, primaries, gain: float, size=None):
    """Secondary-electron count after avalanche multiplication.

    ``primaries`` is the integer number of primary electrons (scalar or
    array).  Zero primaries produce zero output; exactly one primary is the
    closed-form case -gain*ln(r); larger counts invert Q(x, n/gain) = r by
    Schroder iteration with step tolerance 1/(100*gain**2), then scale by
    the gain.
    """
    if not np.isfinite(gain) or gain < 1.0:
        raise ParameterError(f"EM gain must be finite and >= 1, got {gain}")
    scalar = size is None and np.ndim(primaries) == 0
    if size is not None and np.ndim(primaries) != 0:
        raise ParameterError("pass either an array of primaries or a size, not both")
    x = np.broadcast_to(primaries, size) if size is not None else primaries
    raw = np.asarray(x).reshape(-1)
    if raw.size and (not np.all(np.isfinite(raw.astype(np.float64))) or np.any(raw != np.floor(raw))):
        raise ParameterError("primaries must be integers")
    x_arr, shape = _as_1d(x, dtype=np.int64)
    if np.any(x_arr < 0):
        raise ParameterError("primaries must be >= 0")

    out = np.zeros(x_arr.size, dtype=np.float64)
    amplified = np.flatnonzero(x_arr >= 1)
    if amplified.size:
        r = np.maximum(np.atleast_1d(state.uniform(amplified.size)), _TINY)
        ones = x_arr[amplified] == 1
        if np.any(ones):
            out[amplified[ones]] = -gain * np.log(r[ones])
        many = ~ones
        if np.any(many):
            t = inverse_regularized_gamma_upper(
                x_arr[amplified[many]],
                r[many],
                step_tol_sq=1.0 / (100.0 * gain * gain),
            )
            out[amplified[many]] = gain * np.asarray(t)
    if scalar:
        return float(out[0])
    return out.reshape(shape if size is None else size)
