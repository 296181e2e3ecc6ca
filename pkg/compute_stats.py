# compute_stats.py
# Führt alle Record-CSVs unter results/ zusammen und berechnet daraus eine
# gemeinsame Summary (Median-Bias, SE, RMSE, λ_cv-Kennzahlen) sowie eine
# kompakte Übersicht der λ_cv-Skalierung je (α₀, n).

import argparse
from pathlib import Path

import numpy as np
import pandas as pd

from skewnorm_cv.errors import EmptyInputError
from skewnorm_cv.sim import read_records, summarize, write_summary

# ─── Einstellungen ─────────────────────────────────────────────────────────
RES_DIR    = Path("results")
PATTERN    = "**/records*.csv"
OUT_SUMMARY = RES_DIR / "merged_summary.csv"
OUT_LAMBDA  = RES_DIR / "lambda_scaling.csv"
KEYS       = ["setting", "alpha0", "n", "replicate", "method"]


# ─── Records laden ─────────────────────────────────────────────────────────
def load_all(res_dir: Path = RES_DIR, pattern: str = PATTERN) -> pd.DataFrame:
    files = sorted(res_dir.glob(pattern))
    if not files:
        raise EmptyInputError(f"Keine Record-Dateien unter {res_dir}/{pattern}")
    frames = []
    for f in files:
        df = read_records(f)
        df["source"] = f.as_posix()
        frames.append(df)
    df = pd.concat(frames, ignore_index=True)
    # doppelte Replikate (gleicher Lauf zweimal abgelegt) nur einmal zählen
    return df.drop_duplicates(subset=KEYS, keep="first").reset_index(drop=True)


# ─── λ_cv-Skalierung ───────────────────────────────────────────────────────
def lambda_scaling(df: pd.DataFrame) -> pd.DataFrame:
    cv = df[(df["method"] == "cv_mple") & (df["error"] == "")].copy()
    cv["lambda_over_n"] = cv["lambda_cv"] / cv["n"]
    cv["lambda_over_sqrt_n"] = cv["lambda_cv"] / np.sqrt(cv["n"])
    stats = (
        cv
        .groupby(["setting", "alpha0", "n"], as_index=False)[["lambda_over_n", "lambda_over_sqrt_n"]]
        .agg(["mean", "median", "var"])
    )
    # Spalten flachmachen
    new_cols = []
    for col in stats.columns:
        if isinstance(col, tuple) and col[1]:
            new_cols.append(f"{col[0]}_{col[1]}")
        else:
            new_cols.append(col[0] if isinstance(col, tuple) else col)
    stats.columns = new_cols
    return stats.sort_values(["setting", "alpha0", "n"], ignore_index=True)


def main(res_dir: Path = RES_DIR, out_summary: Path = OUT_SUMMARY, out_lambda: Path = OUT_LAMBDA) -> None:
    df = load_all(res_dir)
    summary = summarize(df.drop(columns=["source"]))
    write_summary(summary, out_summary, {"sources": df["source"].nunique()})
    print(f"💾 Summary         → {out_summary}")
    lambda_scaling(df).to_csv(out_lambda, index=False)
    print(f"💾 λ_cv-Skalierung → {out_lambda}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--results", default=str(RES_DIR), help="Ordner mit records*.csv")
    args = ap.parse_args()
    res = Path(args.results)
    main(res, res / OUT_SUMMARY.name, res / OUT_LAMBDA.name)
