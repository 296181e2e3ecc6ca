# compute_significance.py
# Gepaarter einseitiger Vorzeichentest zwischen zwei Schätzern auf denselben
# Replikaten: H1 = |α̂| von Methode 1 ist typischerweise kleiner als von Methode 2.
# Grundlage sind die Record-CSVs aus `main.py simulate`.

import argparse
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from skewnorm_cv.sim import read_records

# ─── Einstellungen ─────────────────────────────────────────────────────────
RES_DIR  = Path("results")
PATTERN  = "**/records*.csv"
OUT_SIG  = RES_DIR / "sign_test_abs_alpha.csv"
ALPHA    = 0.05
PAIRS    = [("cv_mple", "q_mple"), ("cv_mple", "mle"), ("q_mple", "mle")]
GROUP    = ["setting", "alpha0", "n"]


def paired_abs_alpha(df: pd.DataFrame, method_1: str, method_2: str) -> pd.DataFrame:
    """|α̂| beider Methoden je Replikat nebeneinander; fehlgeschlagene Fits fallen heraus."""
    ok = df[df["error"].fillna("") == ""].drop_duplicates(subset=GROUP + ["replicate", "method"])
    a = ok[ok["method"] == method_1].set_index(GROUP + ["replicate"])["alpha_hat"].abs()
    b = ok[ok["method"] == method_2].set_index(GROUP + ["replicate"])["alpha_hat"].abs()
    return pd.concat({"abs_1": a, "abs_2": b}, axis=1, join="inner").reset_index()


def sign_test(abs_1: np.ndarray, abs_2: np.ndarray) -> dict:
    """Einseitiger Vorzeichentest; Gleichstände werden verworfen."""
    diff = np.asarray(abs_1, dtype=float) - np.asarray(abs_2, dtype=float)
    wins = int(np.sum(diff < 0))
    losses = int(np.sum(diff > 0))
    ties = int(diff.size - wins - losses)
    p = stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    return {"pairs": int(diff.size), "wins": wins, "losses": losses, "ties": ties,
            "p_value": float(p), "significant": bool(p < ALPHA)}


def compute_significance(df: pd.DataFrame, pairs=PAIRS) -> pd.DataFrame:
    rows = []
    for m1, m2 in pairs:
        paired = paired_abs_alpha(df, m1, m2)
        for key, g in paired.groupby(GROUP):
            rows.append(dict(zip(GROUP, key)) | {
                "method_1": m1, "method_2": m2,
                "median_abs_1": float(g["abs_1"].median()),
                "median_abs_2": float(g["abs_2"].median()),
            } | sign_test(g["abs_1"].to_numpy(), g["abs_2"].to_numpy()))
    if not rows:
        return pd.DataFrame(columns=GROUP + ["method_1", "method_2"])
    return pd.DataFrame(rows).sort_values(GROUP + ["method_1", "method_2"], ignore_index=True)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--results", default=str(RES_DIR), help="Ordner mit records*.csv")
    args = ap.parse_args()
    res = Path(args.results)

    files = sorted(res.glob(PATTERN))
    if not files:
        raise SystemExit(f"Keine Record-Dateien unter {res}")
    df = pd.concat([read_records(f) for f in files], ignore_index=True)
    out = compute_significance(df)
    out.to_csv(res / OUT_SIG.name, index=False)
    print(f"💾 significance → {res / OUT_SIG.name}")
