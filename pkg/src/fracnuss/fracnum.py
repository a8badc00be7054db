r"""Fractional-calculus numerics.

Gamma and two-parameter Mittag-Leffler functions on the real line, the
Grünwald-Letnikov (GL) time stepper for Caputo equations
:math:`D^\alpha x = f`, and product-integration quadrature for the weakly
singular convolution

.. math::

    \int_0^t v(s)\,(t-s)^{\alpha-1} E_{\alpha,\alpha}(-\lambda (t-s)^\alpha)\,ds .
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import mpmath
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import integrate, signal, special

from .errors import ContractViolation, DomainError, NumericError

# Mittag-Leffler evaluation budget.
SERIES_RADIUS = 10.0
MAX_TERMS = 500
TERM_CUTOFF = 1e-14
# Target absolute accuracy on the negative axis; drives the choice of method.
ML_TARGET = 1e-12

_EPS = np.finfo(float).eps


class FracOrder(float):
    """Differentiation order ``alpha`` in ``(0, 1]``.

    A validated ``float``; any function taking an order accepts either.
    """

    def __new__(cls, alpha: float) -> "FracOrder":
        alpha = float(alpha)
        if not (0.0 < alpha <= 1.0) or math.isnan(alpha):
            raise DomainError(f"fractional order must lie in (0, 1], got {alpha}")
        return super().__new__(cls, alpha)


def check_order(alpha: float) -> float:
    return float(FracOrder(alpha))


@dataclass(frozen=True)
class MLParams:
    """Parameters ``(a, b)`` of :math:`E_{a,b}`."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise DomainError(f"Mittag-Leffler parameter a must be positive, got {self.a}")


# {{{ gamma

def gamma(x: float) -> float:
    """Euler Gamma function, raising :class:`DomainError` at the poles."""
    x = float(x)
    if x <= 0 and x == math.floor(x):
        raise DomainError(f"Gamma has a pole at {x}")
    return math.gamma(x)

# }}}


# {{{ Mittag-Leffler

def _log_terms(a: float, b: float, nu: float, nterms: int) -> tuple[np.ndarray, np.ndarray]:
    """Log-magnitudes and signs of ``nu**k / Gamma(a k + b)``, k < nterms."""
    k = np.arange(nterms, dtype=float)
    arg = a * k + b
    rg_sign = special.gammasgn(arg)
    with np.errstate(divide="ignore"):
        logmag = -special.gammaln(arg)
        if nu != 0.0:
            logmag = logmag + k * math.log(abs(nu))
        else:
            logmag = np.where(k == 0, logmag, -np.inf)
    # 1/Gamma vanishes at non-positive integers
    pole = (arg <= 0) & (arg == np.floor(arg))
    logmag[pole] = -np.inf
    sign = rg_sign * (np.sign(nu) ** k if nu != 0.0 else 1.0)
    sign[pole] = 0.0
    return logmag, sign


def _series_length(logmag: np.ndarray, cutoff: float) -> int | None:
    """Number of terms summed before the tail drops below ``cutoff``."""
    peak = int(np.argmax(logmag))
    idx = np.arange(len(logmag))
    small = logmag < math.log(cutoff)
    with np.errstate(invalid="ignore"):
        decreasing = np.r_[False, np.diff(logmag) <= 0] | np.isneginf(logmag)
    ok = np.nonzero(small & decreasing & (idx > peak))[0]
    return int(ok[0]) if len(ok) else None


_LOG_MAX = math.log(np.finfo(float).max)


@lru_cache(maxsize=64)
def _mp_coefficients(a: float, b: float, nterms: int, dps: int) -> tuple:
    with mpmath.workdps(dps):
        A, B = mpmath.mpf(a), mpmath.mpf(b)
        return tuple(mpmath.rgamma(A * k + B) for k in range(nterms))


def ml_power_series(a: float, b: float, nu: float, *, extended: bool | None = None) -> tuple[float, float]:
    """Power series of :math:`E_{a,b}(\\nu)`; returns ``(value, error_estimate)``.

    With ``extended=None`` the sum is carried out in double precision unless
    cancellation between terms would spoil the target accuracy, in which
    case it is redone in extended precision with mpmath.
    """
    logmag, sign = _log_terms(a, b, nu, MAX_TERMS)
    with np.errstate(over="ignore"):
        terms = sign * np.exp(logmag)
    biggest = float(np.max(logmag))
    if nu > 0 and biggest > _LOG_MAX:
        raise NumericError(f"E_{{{a},{b}}}({nu}) overflows double precision",
                           value=math.inf, bound=math.inf)
    # negative-axis values are O(1); positive-axis values exceed every term
    scale = math.exp(biggest) if nu > 0 else 1.0
    n = _series_length(logmag, TERM_CUTOFF * max(scale, 1.0))
    if n is None:
        partial = float(np.sum(terms[np.isfinite(terms)]))
        raise NumericError(
            f"Mittag-Leffler series E_{{{a},{b}}}({nu}) did not converge in {MAX_TERMS} terms",
            value=partial,
            bound=math.exp(min(float(logmag[-1]), _LOG_MAX)),
        )
    terms = terms[:n]
    cancellation = math.exp(biggest) * _EPS * 4
    if extended is None:
        extended = nu < 0 and cancellation > ML_TARGET
    if not extended:
        return float(math.fsum(terms)), cancellation + math.exp(logmag[n])

    dps = int(biggest / math.log(10)) + 25
    coeffs = _mp_coefficients(float(a), float(b), n, dps)
    with mpmath.workdps(dps):
        x = mpmath.mpf(nu)
        acc = mpmath.mpf(0)
        for c in reversed(coeffs):
            acc = acc * x + c
        return float(acc), float(math.exp(logmag[n])) + _EPS * abs(float(acc))


def ml_asymptotic(a: float, b: float, nu: float) -> tuple[float, float]:
    """Negative-axis asymptotic series of :math:`E_{a,b}(\\nu)` for ``nu < 0``.

    Uses :math:`E_{a,b}(\\nu) \\sim -\\sum_{k\\ge1} \\nu^{-k}/\\Gamma(b-ak)`,
    truncated where the envelope of its terms is smallest. The returned
    error estimate adds the size of the exponentially small contributions
    the series omits, which dominate for ``a`` close to 1.
    """
    if nu >= 0:
        raise DomainError("asymptotic expansion is only used on the negative axis")
    x = abs(nu)
    k = np.arange(1, MAX_TERMS + 1, dtype=float)
    arg = b - a * k
    pole = (arg <= 0) & (arg == np.floor(arg))
    with np.errstate(divide="ignore", invalid="ignore"):
        logmag = np.where(pole, -np.inf, -special.gammaln(arg) - k * math.log(x))
        sign = np.where(pole, 0.0, -special.gammasgn(arg) * (-1.0) ** k)
    exp_part = x ** ((1.0 - b) / a) * math.exp(-(x ** (1.0 / a))) / a
    if np.all(pole):
        return 0.0, exp_part
    # envelope over a short window so that near-pole dips are not mistaken
    # for the optimal truncation point
    win = sliding_window_view(np.r_[logmag, np.full(3, np.inf)], 4).max(axis=1)
    stop = int(np.argmin(win))
    terms = sign[:stop] * np.exp(logmag[:stop])
    return math.fsum(terms), math.exp(win[stop]) + exp_part


def mittag_leffler(p: MLParams | tuple[float, float], nu: float) -> float:
    r"""Two-parameter Mittag-Leffler function :math:`E_{a,b}(\nu)` for real ``nu``.

    The sum starts at ``k = 0``, so :math:`E_{a,b}(0) = 1/\Gamma(b)`.
    For ``|nu| <= 10`` (and all positive ``nu``) the power series is used,
    falling back to the asymptotic series when the term budget runs out.
    Further out on the negative axis the asymptotic series is used whenever
    its error estimate meets the target, otherwise the power series is
    summed in extended precision.
    """
    if not isinstance(p, MLParams):
        p = MLParams(*p)
    a, b, nu = float(p.a), float(p.b), float(nu)
    if not math.isfinite(nu):
        raise DomainError(f"argument must be finite, got {nu}")
    if nu < -SERIES_RADIUS and a < 2:
        value, err = ml_asymptotic(a, b, nu)
        if err <= ML_TARGET:
            return value
    try:
        return ml_power_series(a, b, nu)[0]
    except NumericError:
        # small a needs more terms than the budget inside the series radius;
        # the asymptotic series is then already accurate
        if nu < -1.0 and a < 2:
            value, err = ml_asymptotic(a, b, nu)
            if err <= ML_TARGET:
                return value
        raise


def mittag_leffler_array(a: float, b: float, nu: np.ndarray) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    p = MLParams(a, b)
    flat = [mittag_leffler(p, v) for v in nu.ravel()]
    return np.array(flat, dtype=float).reshape(nu.shape)


def ml_kernel(alpha: float, lam: float, t: float) -> float:
    r"""Relaxation kernel :math:`t^{\alpha-1} E_{\alpha,\alpha}(-\lambda t^\alpha)`."""
    alpha = check_order(alpha)
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if not t > 0:
        raise DomainError(f"kernel is singular at t <= 0, got t={t}")
    return t ** (alpha - 1.0) * mittag_leffler(MLParams(alpha, alpha), -lam * t**alpha)


def fit_ml_envelope(a: float, b: float, nu: np.ndarray) -> float:
    r"""Smallest ``sigma`` with :math:`|E_{a,b}(\nu)| \le \sigma/(1+|\nu|)` on ``nu``."""
    nu = np.asarray(nu, dtype=float)
    vals = mittag_leffler_array(a, b, nu)
    return float(np.max(np.abs(vals) * (1.0 + np.abs(nu))))

# }}}


# {{{ Grünwald-Letnikov stepping

def gl_weights(alpha: float, n: int) -> np.ndarray:
    """GL weights ``w_0..w_n``, i.e. ``(-1)**k * binom(alpha, k)``."""
    if n < 0:
        raise DomainError(f"need n >= 0, got {n}")
    w = np.empty(n + 1)
    w[0] = 1.0
    if n:
        k = np.arange(1, n + 1, dtype=float)
        w[1:] = np.cumprod(1.0 - (alpha + 1.0) / k)
    return w


class _GLKernel:
    """Weights for one order, grown on demand, plus the far-history block."""

    def __init__(self, alpha: float):
        self.alpha = alpha
        self._grow(1023)
        self._key: tuple[int, int] | None = None
        self._block: np.ndarray | None = None

    def _grow(self, n: int) -> None:
        self._w = gl_weights(self.alpha, n)
        if self.alpha == 1.0:
            self._s = np.zeros(n + 1)
        else:
            # starting weight making the discrete operator exact on t**alpha
            p = np.arange(n + 1, dtype=float) ** self.alpha
            self._s = math.gamma(1.0 + self.alpha) - signal.fftconvolve(self._w, p)[: n + 1]

    def weights(self, n: int) -> np.ndarray:
        if n >= len(self._w):
            self._grow(max(n, 2 * len(self._w)))
        return self._w[: n + 1]

    def starting_weight(self, m: int) -> float:
        self.weights(m)
        return float(self._s[m])

    def block(self, start: int, size: int) -> np.ndarray:
        # row r holds w[start + r - j] for j = 0..start-1
        if self._key != (start, size):
            v = self.weights(start + size)[1 : start + size][::-1]
            self._block = np.ascontiguousarray(sliding_window_view(v, start)[::-1])
            self._key = (start, size)
        return self._block


_KERNELS: dict[float, _GLKernel] = {}


def _kernel(alpha: float) -> _GLKernel:
    kern = _KERNELS.get(alpha)
    if kern is None:
        kern = _KERNELS[alpha] = _GLKernel(alpha)
    return kern


class MemoryBuffer:
    """Full sample history of one (scalar or vector) fractional state.

    Samples sit on the uniform grid ``t_k = k * dt`` and ``samples[0]`` is
    the initial value ``x0``. The GL memory sum is split into a far part,
    refreshed once per block of ``block`` steps with a single matrix
    product, and a near part summed directly. ``truncation`` keeps only the
    most recent samples in the sum (short-memory principle).

    With ``starting_weight`` (the default) each step adds one correction
    weight on the first increment ``x_1 - x0`` so that the discrete
    operator is exact on :math:`t^\\alpha`; this removes the
    :math:`O(h^\\alpha)` start-up error that the plain scheme suffers
    because solutions of Caputo equations behave like
    :math:`x_0 + c\\,t^\\alpha` near the origin.
    """

    def __init__(self, x0, dt: float, *, truncation: int | None = None, block: int = 256,
                 starting_weight: bool = True):
        if not dt > 0:
            raise DomainError(f"time step must be positive, got {dt}")
        if truncation is not None and truncation < 1:
            raise DomainError(f"memory truncation must be >= 1, got {truncation}")
        x0 = np.array(x0, dtype=float)
        self.x0 = x0
        self.shape = x0.shape
        self.dt = float(dt)
        self.truncation = truncation
        self.block = block
        self.starting_weight = starting_weight
        self._y = np.zeros((1024, x0.size))
        self._n = 1
        self._far: np.ndarray | None = None
        self._far_key: tuple[float, int] | None = None

    def __len__(self) -> int:
        return self._n

    @property
    def samples(self) -> np.ndarray:
        y = self._y[: self._n]
        return (y + self.x0.ravel()).reshape((self._n, *self.shape))

    @property
    def last(self):
        x = (self._y[self._n - 1] + self.x0.ravel()).reshape(self.shape)
        return float(x) if x.ndim == 0 else x

    def append(self, x) -> None:
        if self._n == len(self._y):
            self._y = np.concatenate([self._y, np.zeros_like(self._y)])
        self._y[self._n] = np.asarray(x, dtype=float).ravel() - self.x0.ravel()
        self._n += 1

    def memory_sum(self, alpha: float) -> np.ndarray:
        """``sum_{k=1}^{m} w_k (x_{m-k} - x0)`` for the next index ``m``."""
        m = self._n
        kern = _kernel(alpha)
        y = self._y
        if self.truncation is not None:
            depth = min(m, self.truncation)
            w = kern.weights(depth)
            return w[1:] @ y[m - 1 :: -1][:depth] if depth else np.zeros(y.shape[1])

        start = (m // self.block) * self.block
        total = kern.weights(m - start)[:0:-1] @ y[start:m] if m > start else np.zeros(y.shape[1])
        if start:
            if self._far_key != (alpha, start):
                self._far = kern.block(start, self.block) @ y[:start]
                self._far_key = (alpha, start)
            total = total + self._far[m - start]
        return total


def frac_step(alpha: float, buf: MemoryBuffer, rhs_value, dt: float):
    r"""Advance :math:`D^\alpha x = f` by one explicit GL step.

    .. math::

        x_{n+1} = x_0 - \sum_{k=1}^{n+1} w_k (x_{n+1-k} - x_0)
                  - s_{n+1} (x_1 - x_0) + h^\alpha f_n

    where ``s`` is the starting weight (zero when the buffer was built with
    ``starting_weight=False``, and for ``alpha = 1``, where the step is
    forward Euler). The new sample is appended to ``buf`` and returned.
    """
    alpha = check_order(alpha)
    if abs(dt - buf.dt) > 1e-12 * buf.dt:
        raise ContractViolation(f"step {dt} does not match buffer spacing {buf.dt}")
    rhs = np.asarray(rhs_value, dtype=float).ravel()
    incr = dt**alpha * rhs
    m = len(buf)
    if buf.starting_weight and alpha != 1.0:
        s = _kernel(alpha).starting_weight(m)
        if m == 1:
            y = incr / (1.0 + s)
        else:
            y = incr - buf.memory_sum(alpha) - s * buf._y[1]
    else:
        y = incr - buf.memory_sum(alpha)
    x = buf.x0.ravel() + y
    buf.append(x)
    x = x.reshape(buf.shape)
    return float(x) if x.ndim == 0 else x


def caputo_derivative(dfunc: Callable[[float], float], alpha: float, t: float) -> float:
    r"""Caputo derivative of a smooth function from its first derivative.

    Evaluates :math:`\frac{1}{\Gamma(1-\alpha)}\int_0^t f'(s)(t-s)^{-\alpha}ds`
    with QUADPACK's algebraic-weight rule.
    """
    alpha = check_order(alpha)
    if alpha == 1.0:
        return float(dfunc(t))
    if t <= 0:
        return 0.0
    val, _ = integrate.quad(dfunc, 0.0, t, weight="alg", wvar=(0.0, -alpha), limit=200)
    return val / math.gamma(1.0 - alpha)



def caputo_derivative_grid(dvalues, alpha: float, dt: float) -> np.ndarray:
    r"""Caputo derivative at every grid time from samples of the first derivative.

    ``dvalues[k]`` is :math:`f'(k\,dt)`. The derivative is the
    order-``1 - alpha`` integral of :math:`f'`, evaluated by product
    trapezoidal weights (exact for piecewise-linear :math:`f'`), so the
    error is :math:`O(dt^2)` for smooth :math:`f`.
    """
    alpha = check_order(alpha)
    g = np.asarray(dvalues, dtype=float)
    if g.ndim != 1 or len(g) == 0:
        raise DomainError("dvalues must be a non-empty 1-D sequence")
    if alpha == 1.0:
        return g.copy()
    beta = 1.0 - alpha
    n = len(g) - 1
    out = np.zeros(n + 1)
    if n == 0:
        return out
    m = np.arange(1, n + 1, dtype=float)
    q = beta + 1.0
    # c[j] weights the sample j cells before the evaluation time
    c = np.r_[1.0, (m + 1.0) ** q - 2.0 * m**q + (m - 1.0) ** q]
    a0 = (m - 1.0) ** q - (m - 1.0 - beta) * m**beta
    out[1:] = a0 * g[0] + signal.fftconvolve(g[1:], c)[:n]
    return out * dt**beta / math.gamma(beta + 2.0)

# }}}


# {{{ singular convolution

@dataclass(frozen=True)
class Quadrature:
    value: float
    error: float


def kernel_cell_integrals(alpha: float, lam: float, n: int, dt: float) -> np.ndarray:
    r"""Exact integrals of the relaxation kernel over lag cells.

    Entry ``l`` (``1 <= l <= n``) is the integral over ``[(l-1) dt, l dt]``,
    obtained from the antiderivative :math:`s^\alpha E_{\alpha,\alpha+1}(-\lambda s^\alpha)`.
    Entry 0 is zero.
    """
    alpha = check_order(alpha)
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    s = np.arange(n + 1) * dt
    sa = s**alpha
    if lam == 0:
        prim = sa / math.gamma(alpha + 1.0)
    else:
        prim = sa * mittag_leffler_array(alpha, alpha + 1.0, -lam * sa)
    out = np.zeros(n + 1)
    out[1:] = np.diff(prim)
    return out


def singular_convolve_all(alpha: float, lam: float, values, dt: float,
                          cells: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Convolution at every grid time ``t_0..t_n`` with per-time error estimates.

    ``values`` is treated as constant on each cell, equal to the mean of its
    endpoint samples; the singular factor is integrated exactly. The error
    estimate is the change in the result when the left endpoint value is
    used instead. ``cells`` may pass precomputed :func:`kernel_cell_integrals`.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) == 0:
        raise DomainError("values must be a non-empty 1-D sequence")
    n = len(v) - 1
    out = np.zeros(n + 1)
    err = np.zeros(n + 1)
    if n == 0:
        return out, err
    K = kernel_cell_integrals(alpha, lam, n, dt) if cells is None else cells[: n + 1]
    mid = 0.5 * (v[1:] + v[:-1])
    half_jump = 0.5 * (v[1:] - v[:-1])
    # out[m] = sum_{k<m} mid[k] * K[m-k]
    out[1:] = signal.convolve(mid, K[1:], method="auto")[:n]
    err[1:] = np.abs(signal.convolve(half_jump, K[1:], method="auto")[:n])
    return out, err


def singular_convolve(alpha: float, lam: float, values, dt: float) -> Quadrature:
    r"""Product-integration value of :math:`\int_0^t v(s)(t-s)^{\alpha-1}E_{\alpha,\alpha}(-\lambda(t-s)^\alpha)ds`."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or len(v) == 0:
        raise DomainError("values must be a non-empty 1-D sequence")
    n = len(v) - 1
    if n == 0:
        return Quadrature(0.0, 0.0)
    K = kernel_cell_integrals(alpha, lam, n, dt)[1:][::-1]
    mid = 0.5 * (v[1:] + v[:-1])
    half_jump = 0.5 * (v[1:] - v[:-1])
    return Quadrature(float(mid @ K), float(abs(half_jump @ K)))

# }}}
