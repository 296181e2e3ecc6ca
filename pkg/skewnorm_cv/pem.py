"""
pem.py
============================================================
Penalisierter EM-Algorithmus für (μ, η, θ).

Latente Darstellung: W | Y ~ N(αb, 1) gestutzt auf (0, ∞). Pro Iteration
  E-Schritt  : Momente m1 = E[W|y], m2 = E[W²|y] unter den alten Parametern
  M-Schritt 1: μ in geschlossener Form
  M-Schritt 2: σ als positive Wurzel einer quadratischen Gleichung
  M-Schritt 3: θ per gedämpftem Newton-Verfahren auf Ψ(θ), Rückfall auf
               beschränkte skalare Suche
Danach wird geprüft, dass l_incp nicht fällt; sonst wird der θ-Schritt
verworfen. Abbruch bei relativer Änderung < tol.

Nach der Schleife werden zwei Randkandidaten verglichen: der symmetrische
Punkt (ȳ, log sd, 0) und, falls die Strafe am Rand vernachlässigbar ist,
das Grenzmodell bei θ = ±theta_bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize, minimize_scalar

from .dist_core import (
    DEFAULT_SHAPE_MAP, MILLS_SWITCH, SQRT_2_OVER_PI,
    Params, ShapeMap, mills_ratio, tail_series_rest,
)
from .errors import (
    DegenerateSampleError, InvalidInputError, NumericalFailureError, SkewNormError,
)
from .estimation import (
    MOM_MIN_N, InitialEstimate, PenaltySpec, _check_lambda,
    as_sample, grad_loglik, half_normal_limit, loglik, mom_init, penalized_loglik,
)

logger = logging.getLogger(__name__)

# ─── Einstellungen ─────────────────────────────────────────────────────────
Q_MPLE_LAMBDA = 0.875913
Q_MPLE_C2 = 0.856250
THETA_BOUND = 10.0

ASCENT_SLACK = 1e-12          # relative Toleranz der Monotonieprüfung
NEWTON_FALLBACK_STEP = 0.5    # Schritt in Richtung f, wenn Ψ″ ≥ 0
NEWTON_MAX_HALVINGS = 40
BOUNDARY_PENALTY_LIMIT = 1.0  # Randkandidat nur, wenn λ·pen(Rand) darunter liegt
LOG_PI = math.log(math.pi)


@dataclass(frozen=True)
class PemOptions:
    tol: float = 1e-8
    max_iter: int = 500
    newton_max_iter: int = 50
    newton_tol: float = 1e-10
    theta_bound: float = THETA_BOUND

    def __post_init__(self):
        for name in ("tol", "max_iter", "newton_max_iter", "newton_tol", "theta_bound"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"PemOptions.{name} muss positiv sein, erhalten: {value}")


class TraceRow(NamedTuple):
    iteration: int
    mu: float
    eta: float
    theta: float
    l_incp: float
    step: str


@dataclass(frozen=True)
class FitResult:
    params: Params
    lam: float
    penalty: PenaltySpec
    loglik: float
    penalized_loglik: float
    iterations: int
    converged: bool
    trace: tuple[TraceRow, ...]
    theta_at_bound: bool = False
    method: str = "pem"

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def sigma(self) -> float:
        return self.params.sigma

    @property
    def alpha(self) -> float:
        return self.params.alpha

    @property
    def theta(self) -> float:
        return self.params.theta

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.trace), columns=list(TraceRow._fields))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mu_hat": self.mu,
            "sigma_hat": self.sigma,
            "alpha_hat": self.alpha,
            "theta_hat": self.theta,
            "lambda": self.lam,
            "penalty": self.penalty.label,
            "loglik": self.loglik,
            "penalized_loglik": self.penalized_loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "theta_at_bound": self.theta_at_bound,
        }


# ─── E-Schritt ─────────────────────────────────────────────────────────────
def latent_moments(t):
    """Erstes und zweites Moment von N(t, 1) gestutzt auf (0, ∞)."""
    shape = np.shape(t)
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    m1 = tt + mills_ratio(tt)
    low = tt < MILLS_SWITCH
    if np.any(low):
        # t + φ/Φ ohne Auslöschung: t·Rest/(1 + Rest)
        tl = tt[low]
        rest = tail_series_rest(tl)
        m1[low] = tl * rest / (1.0 + rest)
    m2 = 1.0 + tt * m1
    if shape:
        return m1.reshape(shape), m2.reshape(shape)
    return float(m1[0]), float(m2[0])


def _e_step(prev: Params, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b_prev = (y - prev.mu) / prev.sigma + prev.delta * SQRT_2_OVER_PI
    return latent_moments(prev.alpha * b_prev)


class _ThetaObjective:
    """Ψ als Funktion von θ bei festem (μ, η) und festen E-Schritt-Momenten."""

    def __init__(self, mu: float, eta: float, shape_map: ShapeMap, y: np.ndarray,
                 m1: np.ndarray, m2: np.ndarray, lam: float, spec: PenaltySpec):
        z = (y - mu) / math.exp(eta)
        self.n = y.size
        self.shape_map = shape_map
        self.lam = lam
        self.spec = spec
        self.z1 = float(np.sum(z))
        self.z2 = float(np.dot(z, z))
        self.r = float(np.sum(m1))
        self.zr = float(np.dot(z, m1))
        self.const = -self.n * LOG_PI - self.n * eta - 0.5 * float(np.sum(m2))

    def _p_l(self, delta: float) -> tuple[float, float]:
        c = SQRT_2_OVER_PI
        p = self.z2 + 2.0 * c * delta * self.z1 + self.n * c * c * delta * delta
        l = self.zr + c * delta * self.r
        return p, l

    def value(self, theta: float) -> float:
        alpha = float(self.shape_map.alpha(theta))
        p, l = self._p_l(float(self.shape_map.delta(theta)))
        pen = self.spec.evaluate(theta)[0] if self.lam else 0.0
        return self.const - 0.5 * (1.0 + alpha * alpha) * p + alpha * l - self.lam * pen

    def derivs(self, theta: float) -> tuple[float, float]:
        """f = ∂Ψ/∂θ und f′ = ∂²Ψ/∂θ²."""
        c, n = SQRT_2_OVER_PI, self.n
        a, a1, a2, d, d1, d2 = self.shape_map.derivatives(theta)
        p, l = self._p_l(d)
        p1 = 2.0 * c * d1 * self.z1 + 2.0 * n * c * c * d * d1
        p2 = 2.0 * c * d2 * self.z1 + 2.0 * n * c * c * (d1 * d1 + d * d2)
        l1 = c * d1 * self.r
        l2 = c * d2 * self.r
        _, pen1, pen2 = self.spec.evaluate(theta)
        f = -a * a1 * p - 0.5 * (1.0 + a * a) * p1 + a1 * l + a * l1 - self.lam * pen1
        fp = (-(a1 * a1 + a * a2) * p - 2.0 * a * a1 * p1 - 0.5 * (1.0 + a * a) * p2
              + a2 * l + 2.0 * a1 * l1 + a * l2 - self.lam * pen2)
        return f, fp


def e_objective(params: Params, prev: Params, y, lam: float, spec: PenaltySpec) -> float:
    """Ψ(μ, η, θ | alte Parameter) inklusive −λ·pen(θ)."""
    y = as_sample(y)
    lam = _check_lambda(lam)
    m1, m2 = _e_step(prev, y)
    obj = _ThetaObjective(params.mu, params.eta, params.shape_map, y, m1, m2, lam, spec)
    return obj.value(params.theta)


# ─── M-Schritte ────────────────────────────────────────────────────────────
def _mu_update(prev: Params, y: np.ndarray, m1: np.ndarray) -> float:
    alpha, sigma = prev.alpha, prev.sigma
    return (float(np.mean(y)) + sigma * prev.delta * SQRT_2_OVER_PI
            - sigma * (alpha / (1.0 + alpha * alpha)) * float(np.mean(m1)))


def _sigma_update(mu_new: float, prev: Params, y: np.ndarray, m1: np.ndarray) -> float:
    alpha = prev.alpha
    k = 1.0 + alpha * alpha
    e = y - mu_new
    ss = float(np.dot(e, e))
    if not ss > 0:
        raise DegenerateSampleError("Alle Beobachtungen fallen mit μ zusammen")
    t = k * prev.delta * SQRT_2_OVER_PI * float(np.mean(e)) - alpha * float(np.dot(e, m1)) / y.size
    q = k * ss / y.size
    root = math.sqrt(0.25 * t * t + q)
    # für T < 0 die äquivalente Form ohne Auslöschung
    return 0.5 * t + root if t >= 0 else q / (root - 0.5 * t)


def m_step_mu(prev: Params, y) -> float:
    y = as_sample(y)
    m1, _ = _e_step(prev, y)
    return _mu_update(prev, y, m1)


def m_step_sigma(mu_new: float, prev: Params, y) -> float:
    y = as_sample(y)
    m1, _ = _e_step(prev, y)
    return _sigma_update(mu_new, prev, y, m1)


def _newton_theta(obj: _ThetaObjective, theta0: float, opts: PemOptions) -> float:
    bound = opts.theta_bound
    theta = min(max(theta0, -bound), bound)
    psi = obj.value(theta)
    psi_start, theta_start = psi, theta

    converged = False
    for _ in range(opts.newton_max_iter):
        f, fp = obj.derivs(theta)
        if abs(f) <= opts.newton_tol * obj.n:
            converged = True
            break
        step = -f / fp if fp < 0 else math.copysign(NEWTON_FALLBACK_STEP, f)
        moved = False
        for _ in range(NEWTON_MAX_HALVINGS):
            cand = min(max(theta + step, -bound), bound)
            psi_cand = obj.value(cand)
            if psi_cand >= psi:
                moved = cand != theta
                break
            step *= 0.5
        if not moved:
            break
        theta, psi = cand, psi_cand

    if not converged:
        logger.debug("Newton für θ ohne Konvergenz (θ=%.6g), beschränkte Suche", theta)
        res = minimize_scalar(lambda t: -obj.value(t), bounds=(-bound, bound),
                              method="bounded", options={"xatol": 1e-10})
        if res.success and -res.fun > psi:
            theta, psi = float(res.x), float(-res.fun)

    # Aufstieg gegenüber dem Startwert ist garantiert
    return theta if psi >= psi_start else theta_start


def m_step_theta(mu_new: float, eta_new: float, prev: Params, y, lam: float,
                 spec: PenaltySpec, opts: PemOptions | None = None) -> float:
    y = as_sample(y)
    lam = _check_lambda(lam)
    opts = opts or PemOptions()
    m1, m2 = _e_step(prev, y)
    obj = _ThetaObjective(mu_new, eta_new, prev.shape_map, y, m1, m2, lam, spec)
    return _newton_theta(obj, prev.theta, opts)


# ─── Randkandidaten ────────────────────────────────────────────────────────
def _symmetric_candidate(y: np.ndarray, shape_map: ShapeMap) -> Params | None:
    mean = float(np.mean(y))
    sd = math.sqrt(float(np.mean((y - mean) ** 2)))
    if not sd > 0:
        return None
    return Params(mean, math.log(sd), 0.0, shape_map)


def _boundary_candidate(y: np.ndarray, cur: Params, lam: float, spec: PenaltySpec,
                        opts: PemOptions) -> Params | None:
    bound = opts.theta_bound
    if lam * spec.evaluate(bound)[0] >= BOUNDARY_PENALTY_LIMIT:
        return None
    sign = np.sign(cur.theta)
    if sign == 0:
        sign = np.sign(np.mean((y - np.mean(y)) ** 3))
    if sign == 0:
        return None

    theta_b = float(sign) * bound
    n = y.size

    def objective(x):
        p = Params(x[0], x[1], theta_b, cur.shape_map)
        return -penalized_loglik(p, y, lam, spec), -n * grad_loglik(p, y).as_array()[:2]

    try:
        mu0, sigma0 = half_normal_limit(y, int(sign))
        res = minimize(objective, np.array([mu0, math.log(sigma0)]), jac=True, method="L-BFGS-B")
        return Params(float(res.x[0]), float(res.x[1]), theta_b, cur.shape_map)
    except (SkewNormError, OverflowError) as exc:
        logger.debug("Randkandidat verworfen: %s", exc)
        return None


# ─── Hauptverfahren ────────────────────────────────────────────────────────
def pem_fit(y, lam: float = 0.0, spec: PenaltySpec | None = None,
            init: Params | InitialEstimate | None = None, opts: PemOptions | None = None,
            shape_map: ShapeMap | None = None, method: str = "pem") -> FitResult:
    """
    Maximiert l_inc − λ·pen(θ) mit dem penalisierten EM-Algorithmus.

    Ohne `init` wird mit dem Momentenschätzer gestartet (n ≥ 4), sonst genügt n ≥ 2.
    Ein Abfall von l_incp führt zur Verwerfung des θ-Schritts; fällt l_incp
    auch dann, endet das Verfahren mit converged=False.
    """
    spec = spec or PenaltySpec.hyperbolic()
    opts = opts or PemOptions()
    lam = _check_lambda(lam)
    if init is None:
        y = as_sample(y, MOM_MIN_N)
        init = mom_init(y, shape_map or DEFAULT_SHAPE_MAP).params
    else:
        y = as_sample(y, 2)
        if isinstance(init, InitialEstimate):
            init = init.params
    bound = opts.theta_bound

    cur = init.with_(theta=min(max(init.theta, -bound), bound))
    l_cur = penalized_loglik(cur, y, lam, spec)
    trace = [TraceRow(0, *cur.as_tuple(), l_cur, "init")]
    if not math.isfinite(l_cur):
        raise NumericalFailureError("Nicht-endliche Likelihood im Startwert", trace)

    converged = False
    iterations = 0
    for it in range(1, opts.max_iter + 1):
        iterations = it
        m1, m2 = _e_step(cur, y)
        mu_new = _mu_update(cur, y, m1)
        sigma_new = _sigma_update(mu_new, cur, y, m1)
        if not (math.isfinite(mu_new) and math.isfinite(sigma_new) and sigma_new > 0):
            raise NumericalFailureError(
                f"M-Schritt lieferte μ={mu_new}, σ={sigma_new} in Iteration {it}", trace)
        eta_new = math.log(sigma_new)
        obj = _ThetaObjective(mu_new, eta_new, cur.shape_map, y, m1, m2, lam, spec)
        theta_new = _newton_theta(obj, cur.theta, opts)

        cand = Params(mu_new, eta_new, theta_new, cur.shape_map)
        l_new = penalized_loglik(cand, y, lam, spec)
        step = "em"
        if not math.isfinite(l_new):
            raise NumericalFailureError(f"Nicht-endliche Likelihood in Iteration {it}", trace)

        slack = abs(l_cur) * ASCENT_SLACK
        if l_new < l_cur - slack:
            logger.debug("Iteration %d: l_incp fällt (%.12g → %.12g), θ-Schritt verworfen",
                         it, l_cur, l_new)
            cand = cand.with_(theta=cur.theta)
            l_new = penalized_loglik(cand, y, lam, spec)
            step = "theta_rejected"
            if l_new < l_cur - slack:
                logger.warning("PEM: l_incp fällt auch ohne θ-Schritt (Iteration %d), Abbruch", it)
                break

        trace.append(TraceRow(it, *cand.as_tuple(), l_new, step))
        rel = abs(l_new - l_cur) / (abs(l_cur) + 1e-300)
        cur, l_cur = cand, l_new
        if rel < opts.tol:
            converged = True
            break

    sym = _symmetric_candidate(y, cur.shape_map) if cur.theta != 0.0 else None
    if sym is not None:
        l_sym = penalized_loglik(sym, y, lam, spec)
        if l_sym >= l_cur:
            logger.debug("Symmetrischer Punkt übernommen (%.12g ≥ %.12g)", l_sym, l_cur)
            cur, l_cur = sym, l_sym
            trace.append(TraceRow(iterations, *cur.as_tuple(), l_cur, "symmetric"))

    edge = _boundary_candidate(y, cur, lam, spec, opts)
    if edge is not None:
        l_edge = penalized_loglik(edge, y, lam, spec)
        if math.isfinite(l_edge) and l_edge > l_cur:
            logger.debug("Randlösung θ=%.3g übernommen (%.12g > %.12g)", edge.theta, l_edge, l_cur)
            cur, l_cur = edge, l_edge
            trace.append(TraceRow(iterations, *cur.as_tuple(), l_cur, "boundary"))

    at_bound = abs(cur.theta) >= bound * (1.0 - 1e-12)
    logger.debug("PEM (%s, λ=%g): %d Iterationen, l_incp=%.10g, konvergiert=%s",
                 method, lam, iterations, l_cur, converged)
    return FitResult(
        params=cur, lam=lam, penalty=spec,
        loglik=loglik(cur, y), penalized_loglik=l_cur,
        iterations=iterations, converged=converged, trace=tuple(trace),
        theta_at_bound=at_bound, method=method,
    )


def mle_fit(y, opts: PemOptions | None = None, init=None,
            shape_map: ShapeMap | None = None) -> FitResult:
    """Maximum-Likelihood-Schätzer (λ = 0); Divergenz zeigt sich als theta_at_bound."""
    return pem_fit(y, 0.0, PenaltySpec.hyperbolic(), init, opts, shape_map, method="mle")


def q_mple_fit(y, opts: PemOptions | None = None, init=None,
               shape_map: ShapeMap | None = None) -> FitResult:
    """MPLE mit fester log-Cauchy-Strafe (λ = 0.875913, c₂ = 0.856250)."""
    return pem_fit(y, Q_MPLE_LAMBDA, PenaltySpec.log_cauchy(Q_MPLE_C2), init, opts,
                   shape_map, method="q_mple")


def mple_fit(y, lam: float, spec: PenaltySpec | None = None, opts: PemOptions | None = None,
             init=None, shape_map: ShapeMap | None = None) -> FitResult:
    return pem_fit(y, lam, spec, init, opts, shape_map, method="mple")
