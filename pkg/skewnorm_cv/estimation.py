"""
estimation.py
============================================================
Log-Likelihood l_inc, analytischer Score, Straffunktionen pen(θ) samt
Bedingung C1, penalisierte Likelihood l_inc − λ·pen(θ), Fisher-Information
im symmetrischen Punkt und Momentenschätzer als Startwert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dist_core import (
    DEFAULT_SHAPE_MAP, GAMMA1_BOUND, SQRT_2_OVER_PI,
    Params, ShapeMap, gamma1_to_delta, log_ndtr, mills_ratio, shape_to_theta,
)
from .errors import DegenerateSampleError, InsufficientDataError, InvalidInputError

__all__ = [
    "PenaltyKind", "PenaltySpec", "C1Report", "GradVector", "InitialEstimate",
    "loglik", "grad_loglik", "penalty_eval", "penalized_loglik", "check_c1",
    "fisher_info_symmetry", "mills_ratio", "mom_init", "half_normal_limit", "as_sample",
]

# ─── Einstellungen ─────────────────────────────────────────────────────────
DEFAULT_C2 = 0.856250
GAMMA1_CLAMP = GAMMA1_BOUND * (1.0 - 1e-6)
MOM_MIN_N = 4
HALF_LOG_2_OVER_PI = 0.5 * math.log(2.0 / math.pi)


class PenaltyKind(Enum):
    HYPERBOLIC = "hyperbolic"     # sinh²θ = α²
    RIDGE = "ridge"               # θ²
    LOG_CAUCHY = "logCauchy"      # log(1 + c₂ sinh²θ)


@dataclass(frozen=True)
class PenaltySpec:
    kind: PenaltyKind = PenaltyKind.HYPERBOLIC
    c2: float = DEFAULT_C2

    def __post_init__(self):
        if not isinstance(self.kind, PenaltyKind):
            try:
                object.__setattr__(self, "kind", PenaltyKind(self.kind))
            except ValueError:
                raise InvalidInputError(f"Unbekannte Straffunktion: {self.kind!r}") from None
        if not (math.isfinite(self.c2) and self.c2 > 0):
            raise InvalidInputError(f"c₂ muss positiv sein, erhalten: {self.c2}")

    @classmethod
    def hyperbolic(cls) -> "PenaltySpec":
        return cls(PenaltyKind.HYPERBOLIC)

    @classmethod
    def ridge(cls) -> "PenaltySpec":
        return cls(PenaltyKind.RIDGE)

    @classmethod
    def log_cauchy(cls, c2: float = DEFAULT_C2) -> "PenaltySpec":
        return cls(PenaltyKind.LOG_CAUCHY, c2)

    @property
    def label(self) -> str:
        if self.kind is PenaltyKind.LOG_CAUCHY:
            return f"{self.kind.value}(c2={self.c2:g})"
        return self.kind.value

    def evaluate(self, theta: float) -> tuple[float, float, float]:
        """(pen, pen′, pen″) in θ."""
        if self.kind is PenaltyKind.RIDGE:
            return theta * theta, 2.0 * theta, 2.0
        s = math.sinh(theta)
        if self.kind is PenaltyKind.HYPERBOLIC:
            return s * s, math.sinh(2.0 * theta), 2.0 * math.cosh(2.0 * theta)
        # log-Cauchy
        c2 = self.c2
        q = 1.0 + c2 * s * s
        s2t = math.sinh(2.0 * theta)
        d1 = c2 * s2t / q
        d2 = (2.0 * c2 * math.cosh(2.0 * theta) * q - (c2 * s2t) ** 2) / (q * q)
        return math.log1p(c2 * s * s), d1, d2


@dataclass(frozen=True)
class C1Report:
    kind: str
    pen0: float
    d1_0: float
    d2_0: float
    growth: bool

    @property
    def satisfies_c1(self) -> bool:
        return (abs(self.pen0) <= 1e-10 and abs(self.d1_0) <= 1e-10
                and abs(self.d2_0 - 2.0) <= 1e-6 and self.growth)


@dataclass(frozen=True)
class GradVector:
    """Über 1/n gemittelte Score-Komponenten."""
    d_mu: float
    d_eta: float
    d_theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_mu, self.d_eta, self.d_theta])


@dataclass(frozen=True)
class InitialEstimate:
    params: Params
    gamma1_raw: float
    clamped: bool


# ─── Hilfen ────────────────────────────────────────────────────────────────
def as_sample(y, min_n: int = 1) -> np.ndarray:
    """Stichprobe als 1-D float-Array prüfen."""
    arr = np.asarray(y, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidInputError("Leere Stichprobe")
    if arr.size < min_n:
        raise InsufficientDataError(f"Mindestens {min_n} Beobachtungen nötig, erhalten: {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("Stichprobe enthält nicht-endliche Werte")
    return arr


def _check_lambda(lam: float) -> float:
    if not (math.isfinite(lam) and lam >= 0):
        raise InvalidInputError(f"λ muss ≥ 0 sein, erhalten: {lam}")
    return float(lam)


# ─── Likelihood und Score ──────────────────────────────────────────────────
def loglik(params: Params, y) -> float:
    y = as_sample(y)
    n = y.size
    z = (y - params.mu) / params.sigma
    b = z + params.delta * SQRT_2_OVER_PI
    return float(n * (HALF_LOG_2_OVER_PI - params.eta) - 0.5 * np.dot(b, b)
                 + np.sum(log_ndtr(params.alpha * b)))


def grad_loglik(params: Params, y) -> GradVector:
    y = as_sample(y)
    n = y.size
    alpha, d_alpha, _, delta, d_delta, _ = params.shape_map.derivatives(params.theta)
    z = (y - params.mu) / params.sigma
    b = z + delta * SQRT_2_OVER_PI
    m = mills_ratio(alpha * b)
    d_mu = np.sum(b - alpha * m) / (n * params.sigma)
    d_eta = np.sum(b * z - alpha * m * z) / n - 1.0
    # bei θ = 0 heben sich beide √(2/π)-Summen auf
    d_theta = np.sum(b * (m * d_alpha - SQRT_2_OVER_PI * d_delta)
                     + m * alpha * SQRT_2_OVER_PI * d_delta) / n
    return GradVector(float(d_mu), float(d_eta), float(d_theta))


# ─── Straffunktionen ───────────────────────────────────────────────────────
def penalty_eval(spec: PenaltySpec, theta: float) -> tuple[float, float, float]:
    return spec.evaluate(theta)


def penalized_loglik(params: Params, y, lam: float, spec: PenaltySpec) -> float:
    lam = _check_lambda(lam)
    value = loglik(params, y)
    if lam == 0.0:
        return value
    return value - lam * spec.evaluate(params.theta)[0]


def check_c1(spec: PenaltySpec) -> C1Report:
    """Numerische Prüfung von C1; pen″(0) wird nur berichtet."""
    pen0, d1_0, d2_0 = spec.evaluate(0.0)
    growth = spec.evaluate(20.0)[0] > spec.evaluate(10.0)[0] > spec.evaluate(1.0)[0]
    return C1Report(spec.label, pen0, d1_0, d2_0, growth)


def fisher_info_symmetry(n: int, sigma: float) -> np.ndarray:
    """Fisher-Information in (μ, η, θ) bei θ = 0: diag(n/σ², 2n, 0)."""
    if n < 1:
        raise InvalidInputError(f"n muss ≥ 1 sein, erhalten: {n}")
    if not (math.isfinite(sigma) and sigma > 0):
        raise InvalidInputError(f"σ muss positiv sein, erhalten: {sigma}")
    return np.diag([n / sigma ** 2, 2.0 * n, 0.0])


# ─── Startwerte ────────────────────────────────────────────────────────────
def mom_init(y, shape_map: ShapeMap = DEFAULT_SHAPE_MAP) -> InitialEstimate:
    """Momentenschätzer (erste drei Momente, 1/n-Form)."""
    y = as_sample(y, MOM_MIN_N)
    mean = float(np.mean(y))
    resid = y - mean
    s2 = float(np.mean(resid ** 2))
    if not s2 > 0:
        raise DegenerateSampleError("Stichprobenvarianz ist 0")
    gamma1_raw = float(np.mean(resid ** 3)) / s2 ** 1.5
    clamped = abs(gamma1_raw) > GAMMA1_CLAMP
    gamma1 = float(np.clip(gamma1_raw, -GAMMA1_CLAMP, GAMMA1_CLAMP))

    delta = gamma1_to_delta(gamma1)
    alpha = delta / math.sqrt(1.0 - delta * delta)
    theta = shape_to_theta(alpha, shape_map)
    sigma = math.sqrt(s2 / (1.0 - 2.0 * delta * delta / math.pi))
    return InitialEstimate(Params(mean, math.log(sigma), theta, shape_map), gamma1_raw, clamped)


def half_normal_limit(y, sign: int) -> tuple[float, float]:
    """(μ, σ) des Grenzmodells α → ±∞: Halbnormal mit Lage am Stichprobenrand."""
    y = as_sample(y, 2)
    edge = float(np.min(y)) if sign > 0 else float(np.max(y))
    sigma = math.sqrt(float(np.mean((y - edge) ** 2)))
    if not sigma > 0:
        raise DegenerateSampleError("Stichprobenvarianz ist 0")
    return edge + math.copysign(1.0, sign) * sigma * SQRT_2_OVER_PI, sigma
