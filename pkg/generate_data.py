# generate_data.py
# Erzeugt synthetische Wirkstoffpanels: je Wirkstoff eine Serie schief-normaler
# log-IC50-Werte über n Zelllinien. Gruppen mit bekannten (μ, σ, α) dienen als
# geplante Cluster für Demos und Tests der Pipeline.

import argparse
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from skewnorm_cv.dist_core import Params, sample
from skewnorm_cv.errors import InvalidInputError

# ─── Einstellungen ─────────────────────────────────────────────────────────
N_CELLS = 111

# Gruppen: (Präfix, Anzahl Serien, μ, σ, α)
PANELS = {
    # zwei klar getrennte Gruppen
    "planted": [
        ("A", 3, 0.0, 1.0, 0.0),
        ("B", 3, 5.0, 2.0, -4.0),
    ],
    # Profil nach den veröffentlichten Clusterzentren (Größen verkleinert)
    "drug": [
        ("resist", 9, -1.47, 2.50, 3.95),
        ("normal", 21, 2.56, 1.50, -0.43),
        ("pos", 13, 2.88, 1.91, -5.03),
        ("block", 2, 2.07, 2.54, -27.8),
    ],
}


# Serien einer Gruppenliste ziehen; jede Serie bekommt ihren eigenen Teil-Seed
def build_panel(groups, n_cells: int = N_CELLS, seed: int = 0,
                missing_rate: float = 0.0, progress: bool = False) -> dict[str, np.ndarray]:
    if n_cells < 4:
        raise InvalidInputError(f"n_cells muss ≥ 4 sein, erhalten: {n_cells}")
    if not 0.0 <= missing_rate < 1.0:
        raise InvalidInputError(f"missing_rate muss in [0, 1) liegen, erhalten: {missing_rate}")
    specs = [(f"{prefix}{i + 1}", mu, sigma, alpha)
             for prefix, count, mu, sigma, alpha in groups for i in range(count)]
    children = np.random.SeedSequence(seed).spawn(len(specs))

    panel = {}
    for (name, mu, sigma, alpha), child in tqdm(list(zip(specs, children)),
                                                desc="Generiere Serien", disable=not progress):
        sample_seed, mask_seed = child.generate_state(2)
        values = sample(n_cells, Params.from_natural(mu, sigma, alpha), int(sample_seed))
        if missing_rate > 0:
            mask = np.random.default_rng(int(mask_seed)).random(n_cells) < missing_rate
            values = np.where(mask, np.nan, values)
        panel[name] = values
    return panel


# Gruppenzugehörigkeit je Serie (für Tests gegen die geplante Partition)
def planted_groups(groups) -> dict[str, str]:
    return {f"{prefix}{i + 1}": prefix for prefix, count, *_ in groups for i in range(count)}


# Panel als CSV schreiben: long = Zeilen (name, value), wide = eine Spalte je Serie
def write_panel(panel: dict[str, np.ndarray], path: Path | str, layout: str = "long") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if layout == "long":
        df = pd.DataFrame({
            "name": [name for name, v in panel.items() for _ in range(v.size)],
            "value": np.concatenate(list(panel.values())),
        })
    elif layout == "wide":
        df = pd.DataFrame(panel)
    else:
        raise InvalidInputError(f"Layout muss 'long' oder 'wide' sein, erhalten: {layout!r}")
    df.to_csv(path, index=False, na_rep="", float_format="%.17g", lineterminator="\n")
    return path


# CLI-Interface zur Nutzung via Kommandozeile
if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--panel", choices=sorted(PANELS), default="planted", help="Gruppenprofil")
    ap.add_argument("--cells", type=int, default=N_CELLS, help=f"Werte je Serie (default: {N_CELLS})")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--missing", type=float, default=0.0, help="Anteil fehlender Zellen")
    ap.add_argument("--layout", choices=["long", "wide"], default="long")
    ap.add_argument("--out", default="data/panel.csv", help="Zieldatei")
    args = ap.parse_args()

    panel = build_panel(PANELS[args.panel], args.cells, args.seed, args.missing, progress=True)
    out = write_panel(panel, args.out, args.layout)
    print(f"✓ {len(panel)} Serien gespeichert unter: {out.resolve()}")
