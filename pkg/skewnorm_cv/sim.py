"""
sim.py
============================================================
Simulationsstudien zu den drei Schätzern (cv_mple, q_mple, mle).

* Setting 1: μ₀ = 0, σ₀ = 1, α₀ ∈ {0, 2, 3, 4}; Skalierung von λ_cv mit n.
* Setting 2: μ₀ ~ U(−2, 2), σ₀ ~ U(0.5, 1.5) je Replikat; Fehlervergleich.

Jedes Replikat (Setting, α₀, n, r) bekommt seinen Seed aus
SeedSequence(master, spawn_key=(Setting, α₀, n, r)). Neue Replikate oder
Gitterpunkte verschieben daher keine bestehenden Ergebnisse, und die
Reihenfolge der Threads spielt keine Rolle.

Ausgabe: Record-CSV (eine Zeile je Replikat und Methode) und Summary-CSV,
beide mit versioniertem Kopf.
"""

from __future__ import annotations

import logging
import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from .cv import DEFAULT_GRID_SIZE, DEFAULT_K, DEFAULT_OMEGA0, cv_fit
from .dist_core import Params, sample
from .errors import EmptyInputError, InvalidInputError, SeriesParseError, SkewNormError
from .estimation import PenaltySpec
from .pem import PemOptions, mle_fit, q_mple_fit

logger = logging.getLogger(__name__)

# ─── Einstellungen ─────────────────────────────────────────────────────────
RECORDS_SCHEMA = "skewnorm-cv records v1"
SUMMARY_SCHEMA = "skewnorm-cv summary v1"
METHODS = ("cv_mple", "q_mple", "mle")
SETTING_CODES = {"setting1": 1, "setting2": 2}
MIN_SCALED_N = 20

RECORD_COLUMNS = [
    "setting", "alpha0", "n", "replicate", "method",
    "mu0", "sigma0", "mu_hat", "sigma_hat", "alpha_hat", "theta_hat",
    "lambda", "lambda_cv", "err_mu", "err_sigma", "err_alpha",
    "converged", "theta_at_bound", "error",
]
SUMMARY_COLUMNS = [
    "setting", "alpha0", "n", "method", "replicates", "failed", "bound_hits", "se_defined",
    "median_bias_mu", "se_mu", "rmse_mu",
    "median_bias_sigma", "se_sigma", "rmse_sigma",
    "median_bias_alpha", "se_alpha", "rmse_alpha",
    "lambda_over_n_mean", "lambda_over_n_var",
    "lambda_over_sqrt_n_mean", "lambda_over_sqrt_n_var",
]


@dataclass(frozen=True)
class Law:
    """Fester Wert (lo == hi) oder Gleichverteilung U(lo, hi)."""
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo <= self.hi):
            raise InvalidInputError(f"Ungültige Verteilung [{self.lo}, {self.hi}]")

    @classmethod
    def fixed(cls, value: float) -> "Law":
        return cls(value, value)

    @classmethod
    def parse(cls, value) -> "Law":
        """Zahl, [lo, hi] oder Text wie in der Kopfzeile ('1.5', 'U(-2,2)')."""
        if isinstance(value, bool):
            raise InvalidInputError(f"Ungültige Verteilung: {value!r}")
        if isinstance(value, (int, float)):
            return cls.fixed(float(value))
        if isinstance(value, (list, tuple)) and len(value) == 2:
            try:
                return cls(float(value[0]), float(value[1]))
            except (TypeError, ValueError):
                raise InvalidInputError(f"Ungültige Verteilung: {value!r}") from None
        if isinstance(value, str):
            text = value.strip()
            match = re.fullmatch(r"U\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)", text)
            try:
                if match:
                    return cls(float(match.group(1)), float(match.group(2)))
                return cls.fixed(float(text))
            except ValueError:
                pass
        raise InvalidInputError(f"Ungültige Verteilung: {value!r}")

    @property
    def is_fixed(self) -> bool:
        return self.lo == self.hi

    def draw(self, rng: np.random.Generator) -> float:
        return self.lo if self.is_fixed else float(rng.uniform(self.lo, self.hi))

    def __str__(self) -> str:
        return f"{self.lo:g}" if self.is_fixed else f"U({self.lo:g},{self.hi:g})"


@dataclass(frozen=True)
class SimConfig:
    setting: str
    alphas: tuple[float, ...]
    sizes: tuple[int, ...]
    replicates: int = 20
    K: int = DEFAULT_K
    omega0: float = DEFAULT_OMEGA0
    grid_size: int = DEFAULT_GRID_SIZE
    seed: int = 0
    mu0_law: Law = Law.fixed(0.0)
    sigma0_law: Law = Law.fixed(1.0)
    opts: PemOptions = field(default_factory=PemOptions)

    def __post_init__(self):
        if self.setting not in SETTING_CODES:
            raise InvalidInputError(f"Unbekanntes Setting: {self.setting!r}")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if not self.alphas or not self.sizes:
            raise InvalidInputError("alphas und sizes dürfen nicht leer sein")
        if self.replicates < 2:
            raise InvalidInputError(f"replicates muss ≥ 2 sein, erhalten: {self.replicates}")
        if min(self.sizes) < max(self.K, 4):
            raise InvalidInputError(f"Alle n müssen ≥ max(K, 4) sein, erhalten: {min(self.sizes)}")
        if self.sigma0_law.lo <= 0:
            raise InvalidInputError("σ₀ muss positiv sein")
        if self.seed < 0:
            raise InvalidInputError(f"Seed muss ≥ 0 sein, erhalten: {self.seed}")

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "alphas": ",".join(f"{a:g}" for a in self.alphas),
            "sizes": ",".join(str(n) for n in self.sizes),
            "replicates": self.replicates,
            "K": self.K,
            "omega0": self.omega0,
            "grid_size": self.grid_size,
            "seed": self.seed,
            "mu0_law": str(self.mu0_law),
            "sigma0_law": str(self.sigma0_law),
            "tol": self.opts.tol,
            "max_iter": self.opts.max_iter,
            "theta_bound": self.opts.theta_bound,
        }


@dataclass(frozen=True)
class SimRecord:
    setting: str
    alpha0: float
    n: int
    replicate: int
    method: str
    mu0: float
    sigma0: float
    mu_hat: float = math.nan
    sigma_hat: float = math.nan
    alpha_hat: float = math.nan
    theta_hat: float = math.nan
    lam: float = math.nan
    lambda_cv: float = math.nan
    converged: bool = False
    theta_at_bound: bool = False
    runtime_s: float = 0.0
    error: str = ""

    @property
    def err_mu(self) -> float:
        return self.mu_hat - self.mu0

    @property
    def err_sigma(self) -> float:
        return self.sigma_hat - self.sigma0

    @property
    def err_alpha(self) -> float:
        return self.alpha_hat - self.alpha0

    def as_row(self) -> dict:
        row = asdict(self)
        row["lambda"] = row.pop("lam")
        row.update(err_mu=self.err_mu, err_sigma=self.err_sigma, err_alpha=self.err_alpha)
        return row


# ─── Voreinstellungen ──────────────────────────────────────────────────────
PRESETS = {
    "setting1": SimConfig(
        setting="setting1", alphas=(0, 2, 3, 4),
        sizes=(50, 100, 200, 300, 400, 500, 600, 1000),
    ),
    "setting2": SimConfig(
        setting="setting2", alphas=(0, 1, 2, 3, 5),
        sizes=(300, 400, 500, 600, 700, 1000),
        mu0_law=Law(-2.0, 2.0), sigma0_law=Law(0.5, 1.5),
    ),
    "setting2-prose": SimConfig(
        setting="setting2", alphas=(0, 1, 2, 3, 5),
        sizes=(50, 100, 200, 400),
        mu0_law=Law(-2.0, 2.0), sigma0_law=Law(0.5, 1.5),
    ),
}


def preset(name: str, **overrides) -> SimConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise InvalidInputError(f"Unbekanntes Preset {name!r}, verfügbar: {sorted(PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


CONFIG_KEYS = frozenset({"preset", "setting", "alphas", "sizes", "replicates", "K", "omega0", "grid_size",
                         "seed", "mu0_law", "sigma0_law", "tol", "max_iter", "theta_bound"})
OPTION_KEYS = ("tol", "max_iter", "theta_bound")


def load_config(path: Path | str, **defaults) -> SimConfig:
    """
    SimConfig aus einer JSON-Datei.

    Optional `preset` als Basis, alle anderen Schlüssel überschreiben sie.
    `defaults` gelten nur für Schlüssel, die in der Datei fehlen.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InvalidInputError(f"Konfigurationsdatei nicht gefunden: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise InvalidInputError(f"Konfigurationsdatei nicht lesbar: {exc}") from None
    except json.JSONDecodeError as exc:
        raise SeriesParseError(f"{path.name}: kein gültiges JSON ({exc.msg})", exc.lineno) from None
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{path.name}: erwartet ein JSON-Objekt")
    unknown = sorted(set(doc) - CONFIG_KEYS)
    if unknown:
        raise InvalidInputError(f"{path.name}: unbekannte Schlüssel {unknown}")

    base = preset(doc["preset"]) if "preset" in doc else None
    if base is None and not {"setting", "alphas", "sizes"} <= set(doc):
        raise InvalidInputError(f"{path.name}: ohne preset sind setting, alphas und sizes Pflicht")
    fields = {k: v for k, v in defaults.items() if k not in doc}
    for key in ("replicates", "K", "grid_size", "seed", "max_iter"):
        if key in doc and (isinstance(doc[key], bool) or not isinstance(doc[key], int)):
            raise InvalidInputError(f"{path.name}: {key} muss eine ganze Zahl sein, erhalten: {doc[key]!r}")
    for key in ("alphas", "sizes"):
        if key in doc and not isinstance(doc[key], list):
            raise InvalidInputError(f"{path.name}: {key} muss eine Liste sein")
    try:
        for key in ("setting", "replicates", "K", "omega0", "grid_size", "seed"):
            if key in doc:
                fields[key] = doc[key]
        for key in ("alphas", "sizes"):
            if key in doc:
                fields[key] = tuple(doc[key])
        for key in ("mu0_law", "sigma0_law"):
            if key in doc:
                fields[key] = Law.parse(doc[key])
        if any(key in doc for key in OPTION_KEYS):
            opts = base.opts if base is not None else PemOptions()
            fields["opts"] = replace(opts, **{k: doc[k] for k in OPTION_KEYS if k in doc})
        cfg = replace(base, **fields) if base is not None else SimConfig(**fields)
    except InvalidInputError:
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path.name}: ungültiger Wert ({exc})") from None
    logger.info("Simulationskonfiguration aus %s geladen", path)
    return cfg


def scale_config(cfg: SimConfig, factor: float) -> SimConfig:
    """Verkleinert n und Replikatzahl für kurze Läufe (n ≥ max(20, K), r ≥ 2)."""
    if not (math.isfinite(factor) and factor > 0):
        raise InvalidInputError(f"Skalierungsfaktor muss positiv sein, erhalten: {factor}")
    if factor == 1:
        return cfg
    floor = max(MIN_SCALED_N, cfg.K)
    sizes = tuple(sorted({max(floor, int(round(n * factor))) for n in cfg.sizes}))
    replicates = max(2, int(round(cfg.replicates * factor)))
    return replace(cfg, sizes=sizes, replicates=replicates)


# ─── Replikate ─────────────────────────────────────────────────────────────
def _alpha_key(alpha0: float) -> int:
    return int(round(abs(alpha0) * 1e6)) * 2 + (1 if alpha0 < 0 else 0)


def replicate_rng(cfg: SimConfig, alpha0: float, n: int, replicate: int) -> np.random.Generator:
    seq = np.random.SeedSequence(
        cfg.seed, spawn_key=(SETTING_CODES[cfg.setting], _alpha_key(alpha0), n, replicate))
    return np.random.default_rng(seq)


def _fit_method(method: str, y: np.ndarray, cfg: SimConfig, fold_seed: int):
    if method == "cv_mple":
        fit, trace = cv_fit(y, cfg.K, cfg.omega0, cfg.grid_size, PenaltySpec.hyperbolic(),
                            fold_seed, cfg.opts)
        return fit, trace.lambda_cv
    if method == "q_mple":
        return q_mple_fit(y, cfg.opts), math.nan
    if method == "mle":
        return mle_fit(y, cfg.opts), math.nan
    raise InvalidInputError(f"Unbekannte Methode: {method!r}")


def run_replicate(cfg: SimConfig, alpha0: float, n: int, replicate: int,
                  methods: tuple[str, ...] = METHODS) -> list[SimRecord]:
    rng = replicate_rng(cfg, alpha0, n, replicate)
    mu0 = cfg.mu0_law.draw(rng)
    sigma0 = cfg.sigma0_law.draw(rng)
    sample_seed, fold_seed = (int(s) for s in rng.integers(0, 2**32, size=2))
    y = sample(n, Params.from_natural(mu0, sigma0, alpha0), sample_seed)

    records = []
    base = dict(setting=cfg.setting, alpha0=alpha0, n=n, replicate=replicate, mu0=mu0, sigma0=sigma0)
    for method in methods:
        t0 = time.perf_counter()
        try:
            fit, lam_cv = _fit_method(method, y, cfg, fold_seed)
        except SkewNormError as exc:
            logger.warning("Replikat %s α₀=%g n=%d r=%d (%s) fehlgeschlagen: %s",
                           cfg.setting, alpha0, n, replicate, method, exc)
            records.append(SimRecord(method=method, runtime_s=time.perf_counter() - t0,
                                     error=f"{type(exc).__name__}: {exc}", **base))
            continue
        records.append(SimRecord(
            method=method, mu_hat=fit.mu, sigma_hat=fit.sigma, alpha_hat=fit.alpha,
            theta_hat=fit.theta, lam=fit.lam, lambda_cv=lam_cv, converged=fit.converged,
            theta_at_bound=fit.theta_at_bound, runtime_s=time.perf_counter() - t0, **base,
        ))
    return records


def run_setting(cfg: SimConfig, methods: tuple[str, ...], workers: int = 1,
                progress: bool = False) -> list[SimRecord]:
    tasks = [(a, n, r) for a in cfg.alphas for n in cfg.sizes for r in range(cfg.replicates)]
    logger.info("Starte %s: %d Replikate × %d Methoden", cfg.setting, len(tasks), len(methods))

    def task(t):
        return run_replicate(cfg, *t, methods=methods)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        results = list(tqdm(ex.map(task, tasks), total=len(tasks),
                            desc=f"{cfg.setting}", disable=not progress))
    records = [rec for chunk in results for rec in chunk]
    failed = sum(1 for r in records if r.error)
    if failed:
        logger.warning("%s: %d von %d Fits fehlgeschlagen", cfg.setting, failed, len(records))
    return records


def run_setting1(cfg: SimConfig, workers: int = 1, progress: bool = False) -> list[SimRecord]:
    """Setting 1: nur cv_mple, Verhalten von λ_cv/n und λ_cv/√n."""
    return run_setting(cfg, ("cv_mple",), workers, progress)


def run_setting2(cfg: SimConfig, workers: int = 1, progress: bool = False) -> list[SimRecord]:
    """Setting 2: alle drei Methoden auf derselben Stichprobe."""
    return run_setting(cfg, METHODS, workers, progress)


# ─── Tabellen ──────────────────────────────────────────────────────────────
def records_frame(records, with_runtime: bool = False) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        return records.copy()
    columns = RECORD_COLUMNS + (["runtime_s"] if with_runtime else [])
    return pd.DataFrame([r.as_row() for r in records], columns=columns)


def _spread(values: pd.Series) -> float:
    return float(values.std(ddof=1)) if len(values) >= 2 else 0.0


def summarize(records) -> pd.DataFrame:
    """Median-Bias, SE und RMSE je (Setting, α₀, n, Methode); λ_cv-Kennzahlen für cv_mple."""
    df = records_frame(records)
    if df.empty:
        raise EmptyInputError("Keine Simulations-Records")
    df["error"] = df["error"].fillna("").astype(str)

    rows = []
    for (setting, alpha0, n, method), g in df.groupby(["setting", "alpha0", "n", "method"], sort=True):
        ok = g[g["error"] == ""]
        row = {
            "setting": setting, "alpha0": alpha0, "n": n, "method": method,
            "replicates": len(g), "failed": len(g) - len(ok),
            "bound_hits": int(ok["theta_at_bound"].astype(bool).sum()),
            "se_defined": len(ok) >= 2,
        }
        for p in ("mu", "sigma", "alpha"):
            e = ok[f"err_{p}"].astype(float)
            row[f"median_bias_{p}"] = float(e.median()) if len(e) else math.nan
            row[f"se_{p}"] = _spread(e) if len(e) else math.nan
            row[f"rmse_{p}"] = float(np.sqrt(np.mean(e ** 2))) if len(e) else math.nan
        if method == "cv_mple" and len(ok):
            lam = ok["lambda_cv"].astype(float)
            for name, scaled in (("lambda_over_n", lam / n), ("lambda_over_sqrt_n", lam / math.sqrt(n))):
                row[f"{name}_mean"] = float(scaled.mean())
                row[f"{name}_var"] = float(scaled.var(ddof=1)) if len(scaled) >= 2 else 0.0
        else:
            for name in ("lambda_over_n", "lambda_over_sqrt_n"):
                row[f"{name}_mean"] = math.nan
                row[f"{name}_var"] = math.nan
        rows.append(row)
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


# ─── CSV mit versioniertem Kopf ────────────────────────────────────────────
def _write_table(df: pd.DataFrame, path: Path | str, schema: str, config: dict | None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {schema}\n")
        for key, value in (config or {}).items():
            f.write(f"# {key}={value}\n")
        df.to_csv(f, index=False, float_format="%.12g", lineterminator="\n")
    return path


def write_records(records, path: Path | str, config: dict | None = None,
                  with_runtime: bool = False) -> Path:
    return _write_table(records_frame(records, with_runtime), path, RECORDS_SCHEMA, config)


def write_summary(summary: pd.DataFrame, path: Path | str, config: dict | None = None) -> Path:
    return _write_table(summary, path, SUMMARY_SCHEMA, config)


def read_records(path: Path | str) -> pd.DataFrame:
    """Liest eine Record-/Summary-CSV; führende '#'-Zeilen sind Kopf."""
    with open(path, encoding="utf-8") as f:
        skip = 0
        for line in f:
            if not line.startswith("#"):
                break
            skip += 1
    df = pd.read_csv(path, skiprows=skip)
    if "error" in df.columns:
        df["error"] = df["error"].fillna("").astype(str)
    return df
