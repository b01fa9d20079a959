"""
Scoring predictions: geodesic vs Euclidean accuracy
===================================================

"""

from pathlib import Path

import numpy as np

from bevnav.evaluation import evaluate_manifest, load_travs, random_free_prediction
from bevnav.scenegen import DatasetConfig, generate_dataset, read_manifest

out = Path("demo_out/metrics")
summary = generate_dataset(DatasetConfig(), 30, out / "manifest.jsonl", seed=5)
print("occluded fraction:", summary["occluded_fraction"])

records = read_manifest(out / "manifest.jsonl")
travs = load_travs(records, out)

# predicting the annotated target scores 100 everywhere
oracle = {r["id"]: tuple(r["target"]) for r in records}
print(evaluate_manifest(records, oracle, out, trav_cache=travs).table())

# a uniformly random free cell is the unconditioned baseline
rng = np.random.default_rng(0)
guess = {r["id"]: random_free_prediction(travs[r["id"]], rng) for r in records}
report = evaluate_manifest(records, guess, out, trav_cache=travs)
print(report.table())

# geodesic accuracy can never beat Euclidean accuracy at the same radius
for t in report.full.geo:
    print(t, report.full.geo[t], "<=", report.full.euc[t])
