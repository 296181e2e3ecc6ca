"""
dist_core.py
============================================================
Schiefe Normalverteilung in zentrierter Lokations-Skalen-Form

    f(y; μ, σ, α) = σ⁻¹ · 2φ(b)Φ(αb),   b = (y − μ)/σ + δ·√(2/π),

mit E[Y] = μ und den Umrechnungen zwischen Pearson-Schiefe γ₁, δ, α und dem
Formparameter θ der hyperbolischen Abbildung α = sinh(aθ), δ = tanh(aθ).

Alle Funktionen sind rein (kein globaler Zustand) und damit threadsicher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special
from scipy.stats import norm

from .errors import DomainError, InvalidInputError

# ─── Einstellungen ─────────────────────────────────────────────────────────
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
LOG_2 = math.log(2.0)

# Schranke für |γ₁|; liegt knapp innerhalb des exakten Grenzwerts 0.995271…
GAMMA1_BOUND = 0.99522491

LOG_NDTR_SWITCH = -10.0     # darunter asymptotische Reihe für log Φ
MILLS_SWITCH = -30.0        # darunter asymptotische Reihe für φ/Φ
TAIL_SERIES_TERMS = 20


@dataclass(frozen=True)
class ShapeMap:
    """Skalierte inverse Hyperbel-Abbildung θ = arcsinh(α)/a."""

    a: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0):
            raise InvalidInputError(f"ShapeMap.a muss positiv und endlich sein, erhalten: {self.a}")

    def alpha(self, theta):
        return np.sinh(self.a * theta)

    def delta(self, theta):
        return np.tanh(self.a * theta)

    def derivatives(self, theta: float) -> tuple[float, float, float, float, float, float]:
        """(α, α′, α″, δ, δ′, δ″) als Funktionen von θ."""
        u = self.a * theta
        alpha = math.sinh(u)
        d_alpha = self.a * math.cosh(u)
        dd_alpha = self.a * self.a * alpha
        delta = math.tanh(u)
        d_delta = self.a / math.cosh(u) ** 2
        dd_delta = -2.0 * self.a * delta * d_delta
        return alpha, d_alpha, dd_alpha, delta, d_delta, dd_delta


DEFAULT_SHAPE_MAP = ShapeMap()


@dataclass(frozen=True)
class Params:
    """Parameterpunkt (μ, η = log σ, θ); σ, α und δ sind abgeleitet."""

    mu: float
    eta: float
    theta: float
    shape_map: ShapeMap = DEFAULT_SHAPE_MAP

    def __post_init__(self):
        for name in ("mu", "eta", "theta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidInputError(f"Parameter {name} ist nicht endlich: {value}")
        # numpy-Skalare vereinheitlichen
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "theta", float(self.theta))

    @classmethod
    def from_natural(cls, mu: float, sigma: float, alpha: float,
                     shape_map: ShapeMap = DEFAULT_SHAPE_MAP) -> "Params":
        if not (math.isfinite(sigma) and sigma > 0):
            raise InvalidInputError(f"σ muss positiv sein, erhalten: {sigma}")
        return cls(mu, math.log(sigma), shape_to_theta(alpha, shape_map), shape_map)

    @property
    def sigma(self) -> float:
        return math.exp(self.eta)

    @property
    def alpha(self) -> float:
        return float(self.shape_map.alpha(self.theta))

    @property
    def delta(self) -> float:
        return float(self.shape_map.delta(self.theta))

    def with_(self, **changes) -> "Params":
        return replace(self, **changes)

    def as_tuple(self) -> tuple[float, float, float]:
        return self.mu, self.eta, self.theta


@dataclass(frozen=True)
class ModelMoments:
    mean: float
    variance: float
    gamma1: float


# ─── Umrechnungen ──────────────────────────────────────────────────────────
def theta_to_shape(theta: float, shape_map: ShapeMap = DEFAULT_SHAPE_MAP) -> tuple[float, float]:
    """θ → (α, δ) mit α = sinh(aθ), δ = tanh(aθ)."""
    if not math.isfinite(theta):
        raise InvalidInputError(f"θ ist nicht endlich: {theta}")
    return float(shape_map.alpha(theta)), float(shape_map.delta(theta))


def shape_to_theta(alpha: float, shape_map: ShapeMap = DEFAULT_SHAPE_MAP) -> float:
    if not math.isfinite(alpha):
        raise InvalidInputError(f"α ist nicht endlich: {alpha}")
    return math.asinh(alpha) / shape_map.a


def delta_to_gamma1(delta: float) -> float:
    """Pearson-Schiefe γ₁ zu δ; ungerade in δ, |γ₁| < 0.99527."""
    if not abs(delta) < 1.0:
        raise DomainError(f"|δ| muss < 1 sein, erhalten: {delta}")
    m = delta * SQRT_2_OVER_PI
    return 0.5 * (4.0 - math.pi) * m ** 3 / (1.0 - m * m) ** 1.5


def gamma1_to_delta(gamma1: float) -> float:
    """Umkehrung von delta_to_gamma1; Aufrufer klemmen γ₁ vorher ein."""
    if not abs(gamma1) < GAMMA1_BOUND:
        raise DomainError(f"|γ₁| muss < {GAMMA1_BOUND} sein, erhalten: {gamma1}")
    r = float(np.cbrt(2.0 * gamma1 / (4.0 - math.pi)))
    return math.sqrt(math.pi / 2.0) * r / math.sqrt(1.0 + r * r)


# ─── Normalverteilungs-Hilfen ──────────────────────────────────────────────
def tail_series_rest(x: np.ndarray) -> np.ndarray:
    """−1/x² + 3/x⁴ − 15/x⁶ ± …, d. h. Φ(x) ≈ φ(x)/|x| · (1 + Rest) für x → −∞."""
    inv_x2 = 1.0 / (x * x)
    total = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, TAIL_SERIES_TERMS + 1):
        term = -term * (2 * k - 1) * inv_x2
        total = total + term
    return total


def log_ndtr(x):
    """log Φ(x) ohne Unterlauf; unter −10 über die asymptotische Reihe."""
    shape = np.shape(x)
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(arr)
    low = arr < LOG_NDTR_SWITCH
    out[~low] = special.log_ndtr(arr[~low])
    if np.any(low):
        xl = arr[low]
        out[low] = (-0.5 * xl * xl - np.log(-xl) - 0.5 * math.log(2.0 * math.pi)
                    + np.log1p(tail_series_rest(xl)))
    return out.reshape(shape) if shape else float(out[0])


def mills_ratio(x):
    """φ(x)/Φ(x); positiv und fallend, √(2/π) bei 0."""
    shape = np.shape(x)
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(arr)
    low = arr < MILLS_SWITCH
    mid = ~low
    out[mid] = np.exp(norm.logpdf(arr[mid]) - log_ndtr(arr[mid]))
    if np.any(low):
        xl = arr[low]
        out[low] = -xl / (1.0 + tail_series_rest(xl))
    return out.reshape(shape) if shape else float(out[0])


# ─── Dichte, Momente, Stichproben ──────────────────────────────────────────
def sn_logpdf(y, params: Params):
    """Log-Dichte der zentrierten schiefen Normalverteilung (vektorisiert in y)."""
    yy = np.asarray(y, dtype=float)
    sigma = params.sigma
    b = (yy - params.mu) / sigma + params.delta * SQRT_2_OVER_PI
    out = LOG_2 - params.eta + norm.logpdf(b) + log_ndtr(params.alpha * b)
    return out if np.ndim(out) else float(out)


def sn_pdf(y, params: Params):
    return np.exp(sn_logpdf(y, params))


def model_moments(params: Params) -> ModelMoments:
    delta = params.delta
    variance = params.sigma ** 2 * (1.0 - 2.0 * delta * delta / math.pi)
    return ModelMoments(mean=params.mu, variance=variance, gamma1=delta_to_gamma1(delta))


def sample(n: int, params: Params, seed) -> np.ndarray:
    """n Ziehungen über Y = μ + σ(δ|X₁| + √(1−δ²)X₀ − δ√(2/π))."""
    if int(n) != n or n < 1:
        raise InvalidInputError(f"n muss eine positive ganze Zahl sein, erhalten: {n}")
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(int(n))
    x_plus = np.abs(rng.standard_normal(int(n)))
    u = params.shape_map.a * params.theta
    delta = math.tanh(u)
    x = delta * x_plus + x0 / math.cosh(u)
    return params.mu + params.sigma * (x - delta * SQRT_2_OVER_PI)
