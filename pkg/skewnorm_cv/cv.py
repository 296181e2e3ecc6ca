"""
cv.py
============================================================
K-fache Kreuzvalidierung des Strafparameters λ.

    CV_a(λ) = −(1/K) Σ_j l_inc(θ̂_{[-j]λ} | y_j)

wird auf einem Gitter 0 ≤ λ ≤ ω₀·n ausgewertet; λ_cv ist der kleinste
Minimierer. Gitterpunkte sind unabhängig und laufen optional in einem
ThreadPool; die Ergebnisse werden in Gitterreihenfolge eingesammelt.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .dist_core import DEFAULT_SHAPE_MAP, Params, ShapeMap
from .errors import FoldFitError, InvalidInputError, NumericalFailureError, SkewNormError
from .estimation import MOM_MIN_N, PenaltySpec, _check_lambda, as_sample, loglik, mom_init
from .pem import FitResult, PemOptions, pem_fit

logger = logging.getLogger(__name__)

# ─── Einstellungen ─────────────────────────────────────────────────────────
DEFAULT_K = 10
DEFAULT_OMEGA0 = 0.05
DEFAULT_GRID_SIZE = 40
GRID_LOWER_RATIO = 1e-4     # kleinster positiver Gitterpunkt relativ zu ω₀·n
TIE_RTOL = 1e-10            # Scores innerhalb dieser Toleranz gelten als gleich


@dataclass(frozen=True, eq=False)
class FoldPlan:
    n: int
    K: int
    assignment: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=int)
        if self.n < 1 or assignment.shape != (self.n,):
            raise InvalidInputError("Fold-Zuordnung passt nicht zu n")
        if (assignment.min() < 0 or assignment.max() >= self.K
                or np.any(np.bincount(assignment, minlength=self.K) == 0)):
            raise InvalidInputError("Fold-Zuordnung ist keine Partition in K nichtleere Folds")
        assignment.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)

    def test_mask(self, j: int) -> np.ndarray:
        return self.assignment == j


@dataclass(frozen=True)
class FoldSummary:
    lam: float
    fold: int
    n_train: int
    n_test: int
    mu: float
    eta: float
    theta: float
    heldout_loglik: float
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class CVTrace:
    grid: np.ndarray
    scores: np.ndarray
    lambda_cv: float
    per_fold: tuple[FoldSummary, ...]
    omega0: float
    K: int
    seed: int | None
    n: int
    invalid: tuple[float, ...] = ()

    @property
    def index_cv(self) -> int:
        return int(np.flatnonzero(self.grid == self.lambda_cv)[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "lambda": self.grid,
            "lambda_over_n": self.grid / self.n,
            "cv_score": self.scores,
            "valid": np.isfinite(self.scores),
        })


# ─── Folds und Gitter ──────────────────────────────────────────────────────
def make_folds(n: int, K: int, seed: int | None) -> FoldPlan:
    """Zufällige Partition: gemischte Reihenfolge, dann reihum auf K Folds."""
    if int(K) != K or K < 2 or K > n:
        raise InvalidInputError(f"K muss zwischen 2 und n={n} liegen, erhalten: {K}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = np.empty(n, dtype=int)
    assignment[perm] = np.arange(n) % K
    return FoldPlan(int(n), int(K), assignment, seed)


def lambda_grid(n: int, omega0: float = DEFAULT_OMEGA0, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """{0} ∪ geometrisches Gitter von ω₀·n·10⁻⁴ bis ω₀·n."""
    if size < 2:
        raise InvalidInputError(f"Gittergröße muss ≥ 2 sein, erhalten: {size}")
    if not (math.isfinite(omega0) and omega0 > 0) or n < 1:
        raise InvalidInputError(f"ω₀ > 0 und n ≥ 1 nötig, erhalten: ω₀={omega0}, n={n}")
    top = omega0 * n
    if size == 2:
        return np.array([0.0, top])
    positive = np.geomspace(top * GRID_LOWER_RATIO, top, size - 1)
    positive[-1] = top
    return np.concatenate([[0.0], positive])


# ─── CV-Fehler ─────────────────────────────────────────────────────────────
def _fold_fits(y: np.ndarray, plan: FoldPlan, lam: float, spec: PenaltySpec,
               opts: PemOptions, init: Params | None) -> list[FoldSummary]:
    out = []
    for j in range(plan.K):
        test = plan.test_mask(j)
        y_train, y_test = y[~test], y[test]
        try:
            fit = pem_fit(y_train, lam, spec, init=init, opts=opts)
        except SkewNormError as exc:
            raise FoldFitError(str(exc), j, lam, getattr(exc, "trace", None)) from exc
        held = loglik(fit.params, y_test)
        if not math.isfinite(held):
            raise FoldFitError("nicht-endliche Held-out-Likelihood", j, lam, fit.trace)
        out.append(FoldSummary(lam, j, int(y_train.size), int(y_test.size), *fit.params.as_tuple(),
                               held, fit.iterations, fit.converged))
    return out


def cv_average_error(y, plan: FoldPlan, lam: float, spec: PenaltySpec | None = None,
                     opts: PemOptions | None = None, init: Params | None = None,
                     shape_map: ShapeMap = DEFAULT_SHAPE_MAP) -> float:
    """
    CV_a(λ); Fold-Fehler werden als FoldFitError mit Fold-Index weitergereicht.

    Ohne `init` starten alle Folds im Momentenschätzer der vollen Stichprobe,
    wie in select_lambda.
    """
    y = as_sample(y, MOM_MIN_N)
    if y.size != plan.n:
        raise InvalidInputError(f"Fold-Plan für n={plan.n}, Stichprobe hat {y.size} Werte")
    lam = _check_lambda(lam)
    if init is None:
        init = mom_init(y, shape_map).params
    folds = _fold_fits(y, plan, lam, spec or PenaltySpec.hyperbolic(), opts or PemOptions(), init)
    return -sum(f.heldout_loglik for f in folds) / plan.K


def select_lambda(y, K: int = DEFAULT_K, omega0: float = DEFAULT_OMEGA0,
                  grid_size: int = DEFAULT_GRID_SIZE, spec: PenaltySpec | None = None,
                  seed: int | None = 0, opts: PemOptions | None = None, *,
                  grid=None, workers: int = 1, shape_map: ShapeMap = DEFAULT_SHAPE_MAP) -> CVTrace:
    """
    Wertet CV_a über das λ-Gitter aus und liefert den Verlauf samt λ_cv.

    Folds starten warm im Momentenschätzer der vollen Stichprobe. Ein
    fehlgeschlagener Fold-Fit macht nur den betroffenen Gitterpunkt ungültig.
    """
    y = as_sample(y, MOM_MIN_N)
    n = y.size
    spec = spec or PenaltySpec.hyperbolic()
    opts = opts or PemOptions()
    if grid is None:
        grid = lambda_grid(n, omega0, grid_size)
    else:
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
            raise InvalidInputError("λ-Gitter muss aufsteigend und nichtnegativ sein")
        if grid[-1] > omega0 * n * (1.0 + 1e-12):
            raise InvalidInputError(f"λ-Gitter überschreitet ω₀·n = {omega0 * n:g}")
    plan = make_folds(n, K, seed)
    init = mom_init(y, shape_map).params

    def task(lam: float):
        try:
            return _fold_fits(y, plan, float(lam), spec, opts, init)
        except FoldFitError as exc:
            logger.warning("λ=%g ungültig: %s", lam, exc)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(task, grid))
    else:
        results = [task(lam) for lam in grid]

    scores = np.array([np.nan if r is None else -sum(f.heldout_loglik for f in r) / plan.K
                       for r in results])
    invalid = tuple(float(lam) for lam, r in zip(grid, results) if r is None)
    if np.all(np.isnan(scores)):
        raise NumericalFailureError("Alle λ-Gitterpunkte ungültig")

    best = np.nanmin(scores)
    idx = int(np.flatnonzero(scores <= best + TIE_RTOL * max(1.0, abs(best)))[0])
    per_fold = tuple(f for r in results if r is not None for f in r)
    logger.debug("CV: λ_cv=%.6g (Gitterpunkt %d/%d), CV_a=%.8g", grid[idx], idx + 1, grid.size, scores[idx])
    return CVTrace(grid=grid, scores=scores, lambda_cv=float(grid[idx]), per_fold=per_fold,
                   omega0=float(omega0), K=int(K), seed=seed, n=n, invalid=invalid)


def cv_fit(y, K: int = DEFAULT_K, omega0: float = DEFAULT_OMEGA0,
           grid_size: int = DEFAULT_GRID_SIZE, spec: PenaltySpec | None = None,
           seed: int | None = 0, opts: PemOptions | None = None, *,
           grid=None, workers: int = 1,
           shape_map: ShapeMap = DEFAULT_SHAPE_MAP) -> tuple[FitResult, CVTrace]:
    """Kreuzvalidierte MPLE: λ_cv wählen, dann auf der vollen Stichprobe neu fitten."""
    spec = spec or PenaltySpec.hyperbolic()
    trace = select_lambda(y, K, omega0, grid_size, spec, seed, opts,
                          grid=grid, workers=workers, shape_map=shape_map)
    fit = pem_fit(y, trace.lambda_cv, spec, opts=opts, shape_map=shape_map, method="cv_mple")
    return fit, trace


def lambda_r(y, plan: FoldPlan, params0: Params) -> float:
    """max_j max{Σ_{i∉j}(1 − z_{i0}²)/π, 0} mit z_{i0} = (y_i − μ₀)/σ₀."""
    y = as_sample(y)
    if y.size != plan.n:
        raise InvalidInputError(f"Fold-Plan für n={plan.n}, Stichprobe hat {y.size} Werte")
    z0 = (y - params0.mu) / params0.sigma
    terms = 1.0 - z0 * z0
    best = 0.0
    for j in range(plan.K):
        best = max(best, float(np.sum(terms[~plan.test_mask(j)])) / math.pi)
    return best
