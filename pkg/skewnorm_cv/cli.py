"""
cli.py
============================================================
Kommandozeile für skewnorm-cv.

    python main.py fit      --input y.txt --method cv_mple --K 10 --seed 7
    python main.py sample   --alpha 3 --n 200 --seed 1 > y.txt
    python main.py simulate setting1 --scale 0.2 --seed 1 --output-dir results/s1
    python main.py simulate --config studie.json --output-dir results/eigen
    python main.py cluster  --input panel.csv --layout long --k 4 --output-dir results/panel

Exit-Codes: 0 Erfolg, 2 Eingabe-/Aufruffehler, 3 numerischer Fehler.
Logs gehen nach stderr (optional zusätzlich in --log-file), Ergebnisse nach
stdout oder in die angegebenen Dateien. Jede Ausgabe beginnt mit der
vollständig aufgelösten Konfiguration; Zeitstempel erscheinen nur im Log.

Umgebungsvariable SKEWNORM_SEED setzt den Standardwert von --seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .cv import DEFAULT_GRID_SIZE, DEFAULT_K, DEFAULT_OMEGA0, cv_fit
from .dist_core import Params, sample
from .errors import InvalidInputError, NumericalFailureError, SeriesParseError
from .estimation import DEFAULT_C2, MOM_MIN_N, PenaltyKind, PenaltySpec, as_sample
from .pem import (Q_MPLE_C2, Q_MPLE_LAMBDA, THETA_BOUND, PemOptions, mle_fit, mple_fit,
                  q_mple_fit)
from .pipeline import (DEFAULT_CLUSTERS, KMEANS_MAX_ITER, LAYOUTS, cluster_fits,
                       cluster_profiles, fit_all, load_series, skew_count)
from .sim import PRESETS, load_config, preset, run_setting1, run_setting2, scale_config, summarize, \
    write_records, write_summary

logger = logging.getLogger(__name__)

# ─── Einstellungen ─────────────────────────────────────────────────────────
SEED_ENV = "SKEWNORM_SEED"
MAX_SEED = 2**32 - 1
LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(message)s"
FIT_SCHEMA = "skewnorm-cv fit v1"
CLUSTER_SCHEMA = "skewnorm-cv cluster v1"
SAMPLE_SCHEMA = "skewnorm-cv sample v1"
FIT_METHODS = ("mle", "q_mple", "cv_mple", "mple")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


@contextmanager
def timeit(msg: str):
    # Laufzeit eines Blocks protokollieren
    logger.info("⚙️  %s", msg)
    t0 = time.perf_counter()
    try:
        yield
    finally:
        logger.info("✅ %s – %.1fs", msg, time.perf_counter() - t0)


def default_seed() -> int:
    """Seed aus SKEWNORM_SEED, sonst 0; ungültige Werte werden mit Warnung ignoriert."""
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return 0
    try:
        seed = int(raw)
    except ValueError:
        logger.warning("%s=%r ist keine ganze Zahl, verwende 0", SEED_ENV, raw)
        return 0
    if not 0 <= seed <= MAX_SEED:
        logger.warning("%s=%d außerhalb [0, %d], verwende 0", SEED_ENV, seed, MAX_SEED)
        return 0
    return seed


def _configure_logging(args) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if args.log_file:
        Path(args.log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(args.log_file, encoding="utf-8"))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


# ─── Ausgabe-Hilfen ────────────────────────────────────────────────────────
def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _header(schema: str, config: dict) -> str:
    lines = [f"# {schema}"] + [f"# {key}={_fmt(value)}" for key, value in config.items()]
    return "\n".join(lines) + "\n"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, ensure_ascii=False) + "\n"


def _csv_text(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, float_format="%.10g", lineterminator="\n")


def _emit(text: str, output: str | None) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
        return
    path = Path(output)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info("💾 %s geschrieben", path)


def parse_values(text: str) -> np.ndarray:
    """Zahlen aus Freitext (Leerraum oder Komma getrennt, '#' leitet Kommentare ein)."""
    values = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        for token in filter(None, re.split(r"[,\s;]+", line)):
            try:
                values.append(float(token))
            except ValueError:
                raise SeriesParseError(f"kein Zahlenwert: {token!r}", line_no) from None
    return as_sample(values, MOM_MIN_N)


def _read_input(args) -> np.ndarray:
    if args.data is not None:
        return parse_values(args.data)
    try:
        if args.input == "-":
            return parse_values(sys.stdin.read())
        path = Path(args.input)
        if not path.is_file():
            raise InvalidInputError(f"Datei nicht gefunden: {path}")
        return parse_values(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise SeriesParseError(f"keine gültige UTF-8-Eingabe ({exc.reason} bei Byte {exc.start})") from None
    except OSError as exc:
        raise InvalidInputError(f"Eingabe nicht lesbar: {exc}") from None


def _pem_options(args) -> PemOptions:
    return PemOptions(tol=args.tol, max_iter=args.max_iter, theta_bound=args.theta_bound)


# ─── Unterbefehle ──────────────────────────────────────────────────────────
def cmd_fit(args) -> int:
    y = _read_input(args)
    opts = _pem_options(args)
    spec = PenaltySpec(args.penalty, args.c2)
    config = {"method": args.method, "input": "<data>" if args.data is not None else args.input,
              "n": int(y.size)}

    trace = None
    with timeit(f"Fit ({args.method}, n={y.size})"):
        if args.method == "mle":
            fit = mle_fit(y, opts)
        elif args.method == "q_mple":
            fit = q_mple_fit(y, opts)
        elif args.method == "mple":
            if args.lam is None:
                raise InvalidInputError("--method mple braucht --lam")
            fit = mple_fit(y, args.lam, spec, opts)
        else:
            fit, trace = cv_fit(y, args.K, args.omega0, args.grid_size, spec, args.seed, opts,
                                workers=args.workers)
            config.update(K=args.K, omega0=args.omega0, grid_size=args.grid_size, seed=args.seed)
    config.update(penalty=fit.penalty.kind.value, c2=fit.penalty.c2, tol=opts.tol,
                  max_iter=opts.max_iter, theta_bound=opts.theta_bound)
    if args.method != "cv_mple":
        config["lambda"] = fit.lam

    report = fit.to_dict()
    del report["penalty"]
    if trace is not None:
        report["lambda_cv"] = trace.lambda_cv

    if args.format == "json":
        doc = {"schema": FIT_SCHEMA, "config": config, "fit": report}
        if trace is not None:
            doc["cv_trace"] = trace.to_frame().to_dict(orient="list")
            doc["invalid_lambdas"] = list(trace.invalid)
        text = _dump_json(doc)
    else:
        text = _header(FIT_SCHEMA, config) + _csv_text(pd.DataFrame([report]))
        if trace is not None:
            text += "# cv_trace\n" + _csv_text(trace.to_frame())
    _emit(text, args.output)
    if not fit.converged:
        logger.warning("PEM nicht konvergiert (%d Iterationen)", fit.iterations)
    if fit.theta_at_bound:
        logger.warning("θ̂ liegt am Rand ±%g: Schätzung divergiert", opts.theta_bound)
    return EXIT_OK


def cmd_sample(args) -> int:
    params = Params.from_natural(args.mu, args.sigma, args.alpha)
    y = sample(args.n, params, args.seed)
    config = {"mu": args.mu, "sigma": args.sigma, "alpha": args.alpha, "n": args.n, "seed": args.seed}
    _emit(_header(SAMPLE_SCHEMA, config) + "".join(f"{v!r}\n" for v in y.tolist()), args.output)
    return EXIT_OK


def _sim_config(args):
    explicit = {name: getattr(args, name) for name in ("K", "omega0", "grid_size", "replicates")
                if getattr(args, name) is not None}
    if (args.preset is None) == (args.config is None):
        raise InvalidInputError("simulate braucht genau eins von: Preset-Name oder --config")
    if args.preset is not None:
        return args.preset, preset(args.preset, seed=args.seed, **explicit)
    # Seed aus der Datei hat Vorrang, explizite Flags überschreiben die Datei
    cfg = load_config(args.config, seed=args.seed)
    return args.config, replace(cfg, **explicit) if explicit else cfg


def cmd_simulate(args) -> int:
    source, cfg = _sim_config(args)
    cfg = scale_config(cfg, args.scale)
    out_dir = Path(args.output_dir)
    key = "preset" if args.preset is not None else "config"
    config = {key: source, "scale": args.scale, **cfg.to_dict()}

    runner = run_setting1 if cfg.setting == "setting1" else run_setting2
    with timeit(f"Simulation {source} ({len(cfg.alphas)}×{len(cfg.sizes)}×{cfg.replicates})"):
        records = runner(cfg, workers=args.workers, progress=not args.quiet)
    summary = summarize(records)
    write_records(records, out_dir / "records.csv", config, with_runtime=args.with_runtime)
    write_summary(summary, out_dir / "summary.csv", config)
    logger.info("💾 %d Records und %d Summary-Zeilen in %s", len(records), len(summary), out_dir)
    return EXIT_OK


def cmd_cluster(args) -> int:
    if args.k < 1:
        raise InvalidInputError(f"--k muss ≥ 1 sein, erhalten: {args.k}")
    table = load_series(args.input, args.layout)
    out_dir = Path(args.output_dir)
    opts = _pem_options(args)
    config = {
        "input": args.input, "layout": args.layout, "method": args.method, "k": args.k,
        "seed": args.seed, "K": args.K, "omega0": args.omega0, "grid_size": args.grid_size,
        "tol": opts.tol, "max_iter": opts.max_iter, "theta_bound": opts.theta_bound,
        "series": len(table), "excluded": ";".join(table.excluded),
    }

    with timeit(f"Fits für {len(table)} Serien"):
        fits = fit_all(table, args.method, opts, K=args.K, omega0=args.omega0,
                       grid_size=args.grid_size, seed=args.seed, workers=args.workers,
                       progress=not args.quiet)
    report = cluster_fits(fits, args.k, args.seed, args.kmeans_max_iter)
    profiles = cluster_profiles(fits, report)

    out_dir.mkdir(parents=True, exist_ok=True)
    header = _header(CLUSTER_SCHEMA, config)
    (out_dir / "fits.csv").write_text(header + _csv_text(fits), encoding="utf-8")
    (out_dir / "cluster_assignment.csv").write_text(
        header + _csv_text(report.assignment_frame()), encoding="utf-8")
    (out_dir / "cluster_profiles.csv").write_text(header + _csv_text(profiles), encoding="utf-8")
    doc = {"schema": CLUSTER_SCHEMA, "config": config, **report.to_dict(),
           "skew_count": skew_count(fits), "dropped_cells": table.dropped}
    (out_dir / "cluster_report.json").write_text(_dump_json(doc), encoding="utf-8")
    logger.info("💾 Cluster-Ergebnisse in %s (Größen %s, %d Serien mit |α̂| > 1)",
                out_dir, list(report.sizes), skew_count(fits))
    return EXIT_OK


# ─── Parser ────────────────────────────────────────────────────────────────
def _add_common(p: argparse.ArgumentParser, seed: int) -> None:
    p.add_argument("--seed", type=int, default=seed,
                   help=f"Master-Seed (default: {seed}, über {SEED_ENV} änderbar)")
    p.add_argument("--verbose", action="store_true", help="DEBUG-Logging")
    p.add_argument("--quiet", action="store_true", help="nur Warnungen und Fehler loggen")
    p.add_argument("--log-file", default=None, help="Log zusätzlich in diese Datei schreiben")


def _add_cv(p: argparse.ArgumentParser, defaults: bool = True) -> None:
    p.add_argument("--K", type=int, default=DEFAULT_K if defaults else None,
                   help=f"Anzahl CV-Folds (default: {DEFAULT_K})")
    p.add_argument("--omega0", type=float, default=DEFAULT_OMEGA0 if defaults else None,
                   help=f"obere Gittergrenze λ/n (default: {DEFAULT_OMEGA0})")
    p.add_argument("--grid-size", type=int, default=DEFAULT_GRID_SIZE if defaults else None,
                   help=f"Anzahl λ-Gitterpunkte (default: {DEFAULT_GRID_SIZE})")
    p.add_argument("--workers", type=int, default=1, help="Threads (default: 1)")


def _add_pem(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=PemOptions.tol, help="relative Abbruchtoleranz ε")
    p.add_argument("--max-iter", type=int, default=PemOptions.max_iter, help="max. EM-Iterationen")
    p.add_argument("--theta-bound", type=float, default=THETA_BOUND, help="Schranke für |θ|")


def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    parser = argparse.ArgumentParser(
        prog="skewnorm-cv",
        description="Kreuzvalidierte penalisierte ML-Schätzung der schiefen Normalverteilung")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="eine Stichprobe fitten")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="Datei mit Zahlen ('-' = stdin)")
    src.add_argument("--data", help="Zahlen direkt, z. B. '1.2,0.4,3.1,2.2'")
    p.add_argument("--method", choices=FIT_METHODS, default="cv_mple")
    p.add_argument("--penalty", choices=[k.value for k in PenaltyKind], default="hyperbolic",
                   help="Straffunktion für cv_mple und mple")
    p.add_argument("--c2", type=float, default=DEFAULT_C2, help=f"c₂ der log-Cauchy-Strafe (default: {DEFAULT_C2})")
    p.add_argument("--lam", type=float, default=None, help="festes λ für --method mple")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", default=None, help="Ausgabedatei (default: stdout)")
    _add_cv(p)
    _add_pem(p)
    _add_common(p, seed)
    p.set_defaults(func=cmd_fit)
    p.epilog = f"q_mple nutzt λ = {Q_MPLE_LAMBDA}, c₂ = {Q_MPLE_C2:.6f}."

    p = sub.add_parser("sample", help="Stichprobe ziehen (ein Wert je Zeile)")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--output", default=None, help="Ausgabedatei (default: stdout)")
    _add_common(p, seed)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="Simulationsstudie ausführen")
    p.add_argument("preset", nargs="?", choices=sorted(PRESETS), default=None)
    p.add_argument("--config", default=None, help="JSON-Datei mit SimConfig statt eines Presets")
    p.add_argument("--scale", type=float, default=1.0, help="n und Replikate skalieren (z. B. 0.2)")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--with-runtime", action="store_true", help="Laufzeit je Fit in records.csv")
    _add_cv(p, defaults=False)
    _add_common(p, seed)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cluster", help="Serien fitten und clustern")
    p.add_argument("--input", required=True, help="CSV mit Serien")
    p.add_argument("--layout", choices=LAYOUTS, default="long")
    p.add_argument("--method", choices=("cv_mple", "q_mple", "mle"), default="cv_mple")
    p.add_argument("--k", type=int, default=DEFAULT_CLUSTERS, help=f"Anzahl Cluster (default: {DEFAULT_CLUSTERS})")
    p.add_argument("--kmeans-max-iter", type=int, default=KMEANS_MAX_ITER)
    p.add_argument("--output-dir", required=True)
    _add_cv(p)
    _add_pem(p)
    _add_common(p, seed)
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        logger.error("Eingabefehler: %s", exc)
        return EXIT_INPUT
    except NumericalFailureError as exc:
        logger.error("Numerischer Fehler: %s", exc)
        return EXIT_NUMERIC
