"""
pipeline.py
============================================================
Serien-Workflow für Wirkstoffpanels: je Wirkstoff ein Vektor von log-IC50-
Werten über Zelllinien.

1. load_series  – CSV im Wide- (eine Spalte je Serie) oder Long-Layout
                  (Spalten name,value) einlesen; fehlende Zellen zählen
2. fit_all      – jede Serie einzeln fitten (cv_mple, q_mple oder mle)
3. kmeans       – (μ̂, σ̂, α̂) auf Rohkoordinaten clustern
4. skew_count   – Serien mit |α̂| > Schwelle zählen
"""

from __future__ import annotations

import io
import logging
import math
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from .cv import DEFAULT_GRID_SIZE, DEFAULT_K, DEFAULT_OMEGA0, cv_fit
from .errors import EmptyInputError, InvalidInputError, SeriesParseError, SkewNormError
from .estimation import MOM_MIN_N, PenaltySpec
from .pem import PemOptions, mle_fit, q_mple_fit

logger = logging.getLogger(__name__)

# ─── Einstellungen ─────────────────────────────────────────────────────────
MIN_SERIES_LENGTH = MOM_MIN_N
MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null", "none", "inf", "+inf", "-inf",
                            "infinity", "-infinity"})
LAYOUTS = ("long", "wide")
FIT_METHODS = ("cv_mple", "q_mple", "mle")
DEFAULT_CLUSTERS = 4
KMEANS_MAX_ITER = 100
COORDS = ("mu_hat", "sigma_hat", "alpha_hat")

FIT_COLUMNS = ["name", "n", "mu_hat", "sigma_hat", "alpha_hat", "theta_hat",
               "lambda", "lambda_cv", "converged", "theta_at_bound", "error"]


@dataclass(frozen=True, eq=False)
class SeriesTable:
    """Geordnete Serien (Name → Werte) samt Buchführung über verworfene Zellen."""
    entries: tuple[tuple[str, np.ndarray], ...]
    dropped: dict[str, int] = field(default_factory=dict)
    excluded: tuple[str, ...] = ()

    def __post_init__(self):
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise InvalidInputError("Seriennamen müssen eindeutig sein")
        for name, values in self.entries:
            if values.size < MIN_SERIES_LENGTH or not np.all(np.isfinite(values)):
                raise InvalidInputError(f"Serie {name!r}: mindestens {MIN_SERIES_LENGTH} endliche Werte nötig")

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, name: str) -> np.ndarray:
        for key, values in self.entries:
            if key == name:
                return values
        raise KeyError(name)

    @property
    def used_cells(self) -> int:
        return sum(values.size for _, values in self.entries)

    @property
    def total_cells(self) -> int:
        return self.used_cells + sum(self.dropped.values())

    def subset(self, names) -> "SeriesTable":
        keep = set(names)
        return SeriesTable(tuple((n, v) for n, v in self.entries if n in keep))

    def to_long_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "name": [name for name, values in self.entries for _ in range(values.size)],
            "value": np.concatenate([values for _, values in self.entries]) if self.entries else [],
        })


# ─── Einlesen ──────────────────────────────────────────────────────────────
def _parse_cell(cell, line: int) -> float | None:
    """None für fehlende Zellen, sonst float; nicht lesbarer Text ist ein Fehler."""
    token = cell.strip() if isinstance(cell, str) else ""
    if token.lower() in MISSING_TOKENS:
        return None
    try:
        value = float(token)
    except ValueError:
        raise SeriesParseError(f"kein Zahlenwert: {token!r}", line) from None
    return value if math.isfinite(value) else None


def _read_text(source) -> str:
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise InvalidInputError(f"Datei nicht gefunden: {path}")
        if not path.is_file():
            raise InvalidInputError(f"Keine reguläre Datei: {path}")
        try:
            return path.read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise SeriesParseError(f"keine gültige UTF-8-Datei ({exc.reason} bei Byte {exc.start})") from None
        except OSError as exc:
            raise InvalidInputError(f"Datei nicht lesbar: {exc}") from None
    raw = source.read()
    if isinstance(raw, bytes):
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SeriesParseError(f"keine gültige UTF-8-Eingabe ({exc.reason} bei Byte {exc.start})") from None
    return raw


def _read_frame(source) -> tuple[pd.DataFrame, list[int]]:
    """DataFrame plus physische Zeilennummer je Datenzeile (Leerzeilen überspringt pandas)."""
    text = _read_text(source)
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise EmptyInputError("Eingabe ist leer") from None
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise SeriesParseError(str(exc).strip(), int(match.group(1)) if match else None) from None
    lines = [no for no, line in enumerate(text.splitlines(), start=1) if line.strip()][1:]
    if len(lines) != len(df):
        # z. B. Felder mit Zeilenumbruch in Anführungszeichen
        lines = [i + 2 for i in range(len(df))]
    return df, lines


def _blank(cell) -> bool:
    return not (isinstance(cell, str) and cell.strip())


def _collect_long(df: pd.DataFrame, lines: list[int]) -> dict[str, tuple[list[float], int]]:
    if {"name", "value"} <= set(df.columns):
        names, values = df["name"], df["value"]
    elif df.shape[1] == 2:
        names, values = df.iloc[:, 0], df.iloc[:, 1]
    else:
        raise SeriesParseError("Long-Layout braucht die Spalten name,value", 1)
    series: dict[str, tuple[list[float], int]] = {}
    for line, name, cell in zip(lines, names, values):
        if _blank(name):
            raise SeriesParseError("leerer Serienname", line)
        name = name.strip()
        kept, dropped = series.setdefault(name, ([], 0))
        value = _parse_cell(cell, line)
        if value is None:
            series[name] = (kept, dropped + 1)
        else:
            kept.append(value)
    return series


def _collect_wide(df: pd.DataFrame, lines: list[int]) -> dict[str, tuple[list[float], int]]:
    series: dict[str, tuple[list[float], int]] = {}
    for name in df.columns:
        kept, dropped = [], 0
        for line, cell in zip(lines, df[name]):
            value = _parse_cell(cell, line)
            if value is None:
                dropped += 1
            else:
                kept.append(value)
        series[str(name).strip()] = (kept, dropped)
    return series


def load_series(source, layout: str = "long") -> SeriesTable:
    """
    Liest Serien aus CSV-Text (Pfad oder Dateiobjekt, Kopfzeile Pflicht).

    Fehlende oder nicht-endliche Zellen werden je Serie verworfen und gezählt.
    Serien mit weniger als 4 Werten fallen mit Warnung heraus; ihre Zellen
    zählen vollständig als verworfen, sodass Zellen = genutzt + verworfen.
    """
    if layout not in LAYOUTS:
        raise InvalidInputError(f"Layout muss 'long' oder 'wide' sein, erhalten: {layout!r}")
    df, lines = _read_frame(source)
    collected = _collect_long(df, lines) if layout == "long" else _collect_wide(df, lines)

    entries, dropped, excluded = [], {}, []
    for name, (kept, n_dropped) in collected.items():
        if len(kept) < MIN_SERIES_LENGTH:
            logger.warning("Serie %r ausgeschlossen: nur %d verwertbare Werte", name, len(kept))
            excluded.append(name)
            dropped[name] = n_dropped + len(kept)
            continue
        if n_dropped:
            logger.info("Serie %r: %d fehlende Zellen verworfen", name, n_dropped)
        entries.append((name, np.array(kept, dtype=float)))
        dropped[name] = n_dropped
    if not entries:
        raise EmptyInputError("Keine verwertbare Serie in der Eingabe")
    return SeriesTable(tuple(entries), dropped, tuple(excluded))


def write_long(table: SeriesTable, dest) -> None:
    """Long-Layout verlustfrei schreiben (%.17g)."""
    table.to_long_frame().to_csv(dest, index=False, float_format="%.17g", lineterminator="\n")


# ─── Fits ──────────────────────────────────────────────────────────────────
def series_seed(name: str, seed: int) -> int:
    """Seed je Serie aus (Master-Seed, CRC32 des Namens); unabhängig von der Reihenfolge."""
    seq = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return int(seq.generate_state(1)[0])


def _fit_one(name: str, y: np.ndarray, method: str, opts: PemOptions, seed: int,
             K: int, omega0: float, grid_size: int) -> dict:
    row = dict.fromkeys(FIT_COLUMNS, math.nan)
    row.update(name=name, n=int(y.size), converged=False, theta_at_bound=False, error="")
    try:
        if method == "cv_mple":
            fit, trace = cv_fit(y, min(K, y.size), omega0, grid_size, PenaltySpec.hyperbolic(),
                                series_seed(name, seed), opts)
            row["lambda_cv"] = trace.lambda_cv
        elif method == "q_mple":
            fit = q_mple_fit(y, opts)
        else:
            fit = mle_fit(y, opts)
    except SkewNormError as exc:
        logger.warning("Fit von Serie %r fehlgeschlagen: %s", name, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(mu_hat=fit.mu, sigma_hat=fit.sigma, alpha_hat=fit.alpha, theta_hat=fit.theta,
               converged=fit.converged, theta_at_bound=fit.theta_at_bound)
    row["lambda"] = fit.lam
    return row


def fit_all(table: SeriesTable, method: str = "cv_mple", opts: PemOptions | None = None, *,
            K: int = DEFAULT_K, omega0: float = DEFAULT_OMEGA0, grid_size: int = DEFAULT_GRID_SIZE,
            seed: int = 0, workers: int = 1, progress: bool = False) -> pd.DataFrame:
    """Eine Zeile je Serie in Tabellenreihenfolge; Fehler landen in der Spalte `error`."""
    if method not in FIT_METHODS:
        raise InvalidInputError(f"Unbekannte Methode {method!r}, erlaubt: {FIT_METHODS}")
    opts = opts or PemOptions()

    def task(entry):
        name, y = entry
        return _fit_one(name, y, method, opts, seed, K, omega0, grid_size)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as ex:
        rows = list(tqdm(ex.map(task, table.entries), total=len(table),
                         desc=f"Fits ({method})", disable=not progress))
    failed = sum(1 for r in rows if r["error"])
    if failed:
        logger.warning("%d von %d Serien ohne Fit", failed, len(rows))
    return pd.DataFrame(rows, columns=FIT_COLUMNS)


def skew_count(fits: pd.DataFrame, threshold: float = 1.0) -> int:
    alpha = fits["alpha_hat"].astype(float)
    return int((alpha.abs() > threshold).sum())


# ─── K-Means ───────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class ClusterReport:
    k: int
    centres: np.ndarray
    labels: np.ndarray
    sizes: tuple[int, ...]
    inertia: float
    seed: int
    inertia_trace: tuple[float, ...]
    n_iter: int
    names: tuple[str, ...] | None = None

    @property
    def assignment(self) -> dict:
        keys = self.names if self.names is not None else range(self.labels.size)
        return {key: int(label) for key, label in zip(keys, self.labels)}

    def assignment_frame(self) -> pd.DataFrame:
        keys = list(self.names) if self.names is not None else list(range(self.labels.size))
        return pd.DataFrame({"name": keys, "cluster": self.labels.astype(int)})

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "sizes": list(self.sizes),
            "centres": [dict(zip(("mu", "sigma", "alpha"), map(float, c))) if c.size == 3
                        else [float(v) for v in c] for c in self.centres],
            "inertia": self.inertia,
            "n_iter": self.n_iter,
            "inertia_trace": list(self.inertia_trace),
            "assignment": self.assignment,
        }


def _sq_dists(X: np.ndarray, centres: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - centres[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = [X[rng.integers(X.shape[0])]]
    for _ in range(1, k):
        d2 = _sq_dists(X, np.array(centres)).min(axis=1)
        total = d2.sum()
        idx = rng.choice(X.shape[0], p=d2 / total) if total > 0 else rng.integers(X.shape[0])
        centres.append(X[idx])
    return np.array(centres, dtype=float)


def kmeans(points, k: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER,
           names=None) -> ClusterReport:
    """
    Lloyd-Iterationen auf Rohkoordinaten mit k-means++-Start.

    Gleichstände gehen an den kleinsten Clusterindex. Ein leerer Cluster wird
    auf den Punkt mit dem größten Abstand zu seinem Zentrum gesetzt. Zum
    Schluss werden die Cluster nach absteigender Größe nummeriert, bei
    gleicher Größe nach lexikographischem Zentrum.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or not np.all(np.isfinite(X)):
        raise InvalidInputError("Punkte müssen eine nichtleere endliche Matrix sein")
    m = X.shape[0]
    if int(k) != k or k < 1 or k > m:
        raise InvalidInputError(f"k muss zwischen 1 und {m} liegen, erhalten: {k}")
    if max_iter < 1:
        raise InvalidInputError(f"max_iter muss ≥ 1 sein, erhalten: {max_iter}")
    if names is not None and len(names) != m:
        raise InvalidInputError("Anzahl Namen passt nicht zu den Punkten")
    k = int(k)

    rng = np.random.default_rng(seed)
    centres = _plus_plus(X, k, rng)
    labels = None
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dists(X, centres)
        new_labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(m), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        nearest = d2[np.arange(m), labels]
        for j in range(k):
            members = labels == j
            if members.any():
                centres[j] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(nearest))
                logger.debug("K-Means: leerer Cluster %d neu auf Punkt %d gesetzt", j, far)
                centres[j] = X[far]
                nearest[far] = 0.0
    labels = np.argmin(_sq_dists(X, centres), axis=1)

    sizes = np.bincount(labels, minlength=k)
    order = sorted(range(k), key=lambda j: (-sizes[j], tuple(centres[j])))
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    labels = relabel[labels]
    centres = centres[order]
    inertia = float(np.sum((X - centres[labels]) ** 2))
    return ClusterReport(
        k=k, centres=centres, labels=labels, sizes=tuple(int(s) for s in sizes[order]),
        inertia=inertia, seed=seed, inertia_trace=tuple(trace), n_iter=n_iter,
        names=tuple(names) if names is not None else None,
    )


def _usable_fits(fits: pd.DataFrame) -> pd.DataFrame:
    ok = fits[fits["error"].fillna("").astype(str) == ""]
    return ok[np.isfinite(ok[list(COORDS)].astype(float)).all(axis=1)]


def cluster_fits(fits: pd.DataFrame, k: int = DEFAULT_CLUSTERS, seed: int = 0,
                 max_iter: int = KMEANS_MAX_ITER) -> ClusterReport:
    """K-Means über alle erfolgreich gefitteten Serien, Schlüssel = Serienname."""
    ok = _usable_fits(fits)
    if ok.empty:
        raise EmptyInputError("Keine erfolgreich gefittete Serie zum Clustern")
    return kmeans(ok[list(COORDS)].to_numpy(dtype=float), k, seed, max_iter,
                  names=ok["name"].astype(str).tolist())


def cluster_profiles(fits: pd.DataFrame, report: ClusterReport) -> pd.DataFrame:
    """Median und Quartile von (μ̂, σ̂, α̂) je Cluster."""
    df = _usable_fits(fits).merge(report.assignment_frame(), on="name", how="inner")
    rows = []
    for cluster, g in df.groupby("cluster", sort=True):
        row = {"cluster": int(cluster), "size": len(g)}
        for col in COORDS:
            q = g[col].astype(float).quantile([0.25, 0.5, 0.75])
            row[f"{col}_q1"], row[f"{col}_median"], row[f"{col}_q3"] = q.tolist()
        rows.append(row)
    return pd.DataFrame(rows)
