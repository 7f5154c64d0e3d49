"""
From a CSV file to the exporter heat map
========================================

Write a synthetic firm file, load and clean it, then tabulate the share of
exporters on a decile grid of (shifter, running variable) with the estimated
contour overlaid.
"""

# %%
from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from npkink import ModelSpec
from npkink.estimator import estimate_contour
from npkink.pipeline import CleaningSpec, Schema, clean, heatmap, load_csv
from npkink.simulation import DgpSpec, generate, true_threshold

d = generate(DgpSpec(n=3000, beta_g0=3.0, seed=2))
frame = pd.DataFrame({
    "profit": d.outcome,
    "sales": d.running,
    "cost": d.shifter,
    "x": d.covariates[:, 1],
    "export": (d.running > true_threshold(d.shifter)).astype(int),
})
path = Path(tempfile.mkdtemp()) / "firms.csv"
frame.to_csv(path, index=False, float_format="%.17g")

# %%
schema = Schema(outcome="profit", running="sales", shifter="cost", covariates=("x",), export_flag="export")
data = load_csv(path, schema)
data, rep = clean(data, CleaningSpec(trim_upper_fraction=0.05))
print(rep.to_json())

# %%
contour = estimate_contour(data, ModelSpec())
hm = heatmap(data, contour)
print("exporter share by shifter decile (rows) and sales decile (columns, low to high):")
for i in range(10):
    print(" ".join("  . " if hm.counts[i, j] == 0 else f"{hm.cell_fractions[i, j]:.2f}" for j in range(10)))

# %%
# Overlay in percentile coordinates of the two axes.
for a, b in list(zip(hm.overlay_m_percentile, hm.overlay_g_percentile))[::14]:
    print(f"shifter pct {a:.2f} -> sales pct {b:.2f}")
print("rows with a nan overlay:", int(np.isnan(hm.overlay_g_percentile).sum()))
