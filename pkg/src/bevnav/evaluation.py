"""Target-accuracy metrics over BEV predictions, and manifest-level reports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bevgeom import GridSpec, cell_center, world_to_cell
from .geodesy import STATIC, TravGrid, geodesic_field, snap_to_traversable, traversability_from_scene
from .scene import Scene

THRESHOLDS = (0.5, 1.0, 1.5)
_EPS = 1e-9


class PredictionError(ValueError):
    pass


def argmax_target(score, spec: GridSpec):
    """Highest-scoring cell (first in row-major order on ties) and its center."""
    score = np.asarray(score)
    if score.ndim == 3:
        if score.shape[2] != 1:
            raise ValueError("argmax needs a single-channel map")
        score = score[..., 0]
    k = int(np.argmax(score))
    cell = divmod(k, score.shape[1])
    return cell, cell_center(spec, *cell)


def _cell(spec: GridSpec, p):
    c = world_to_cell(spec, p)
    if c is None:
        raise ValueError(f"point {tuple(p)} outside the grid")
    return c


def geo_distance(pred, target, trav: TravGrid, field_=None) -> float:
    """Geodesic distance between the cells of two points; inf if ``pred`` is blocked."""
    spec = trav.spec
    pc, tc = _cell(spec, pred), _cell(spec, target)
    if not trav.passable()[pc]:
        return math.inf
    if field_ is None:
        field_ = geodesic_field(trav, tc).dist
    return float(field_[pc])


def geo_acc(pred, target, trav: TravGrid, t: float, field_=None) -> bool:
    return geo_distance(pred, target, trav, field_) <= t + _EPS


def euc_acc(pred, target, t: float) -> bool:
    return math.hypot(pred[0] - target[0], pred[1] - target[1]) <= t + _EPS


def structural_invalid(pred, trav: TravGrid) -> bool:
    return bool(trav.state[_cell(trav.spec, pred)] == STATIC)


def snap_prediction(pred, trav: TravGrid):
    spec = trav.spec
    return cell_center(spec, *snap_to_traversable(trav, _cell(spec, pred)))


@dataclass
class SampleScore:
    id: str
    occluded: bool
    geo: dict
    euc: dict
    snapped_geo: dict
    sir: bool


def score_sample(sample_id, pred, target, trav: TravGrid, occluded=False, thresholds=THRESHOLDS) -> SampleScore:
    """All per-sample metrics. Points are first moved to their cell centers so
    the geodesic (cell-to-cell) distance never undercuts the Euclidean one."""
    spec = trav.spec
    pred = cell_center(spec, *_cell(spec, pred))
    target = cell_center(spec, *_cell(spec, target))
    dist = geodesic_field(trav, _cell(spec, target)).dist
    snapped = snap_prediction(pred, trav)
    return SampleScore(
        sample_id,
        bool(occluded),
        {t: geo_acc(pred, target, trav, t, dist) for t in thresholds},
        {t: euc_acc(pred, target, t) for t in thresholds},
        {t: geo_acc(snapped, target, trav, t, dist) for t in thresholds},
        structural_invalid(pred, trav),
    )


@dataclass
class MetricsRow:
    count: int = 0
    geo: dict = field(default_factory=dict)
    euc: dict = field(default_factory=dict)
    snapped_geo: dict = field(default_factory=dict)
    sir: float = 0.0

    @property
    def geo_bar(self) -> float:
        return float(np.mean(list(self.geo.values()))) if self.geo else 0.0

    @property
    def euc_bar(self) -> float:
        return float(np.mean(list(self.euc.values()))) if self.euc else 0.0

    @property
    def snapped_geo_bar(self) -> float:
        return float(np.mean(list(self.snapped_geo.values()))) if self.snapped_geo else 0.0

    def to_json(self) -> dict:
        return {
            "count": self.count,
            "geo_acc": {str(t): v for t, v in self.geo.items()},
            "euc_acc": {str(t): v for t, v in self.euc.items()},
            "geo_acc_bar": self.geo_bar,
            "euc_acc_bar": self.euc_bar,
            "sir": self.sir,
            "snapped_geo_acc": {str(t): v for t, v in self.snapped_geo.items()},
            "snapped_geo_acc_bar": self.snapped_geo_bar,
        }


def aggregate(scores, thresholds=THRESHOLDS) -> MetricsRow:
    scores = list(scores)
    n = len(scores)
    if n == 0:
        return MetricsRow(0, {t: 0.0 for t in thresholds}, {t: 0.0 for t in thresholds}, {t: 0.0 for t in thresholds})
    return MetricsRow(
        n,
        {t: sum(s.geo[t] for s in scores) / n for t in thresholds},
        {t: sum(s.euc[t] for s in scores) / n for t in thresholds},
        {t: sum(s.snapped_geo[t] for s in scores) / n for t in thresholds},
        sum(s.sir for s in scores) / n,
    )


@dataclass
class MetricsReport:
    full: MetricsRow
    occluded: MetricsRow
    per_sample: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"full": self.full.to_json(), "occluded": self.occluded.to_json()}

    def table(self) -> str:
        head = ["subset", "n"] + [f"Geo@{t}" for t in THRESHOLDS] + ["GeoBar"] + [f"Euc@{t}" for t in THRESHOLDS]
        head += ["EucBar", "SIR", "SnapGeoBar"]
        lines = ["  ".join(f"{h:>10}" for h in head)]
        for name, row in (("full", self.full), ("occluded", self.occluded)):
            vals = [name, str(row.count)]
            vals += [f"{100 * row.geo[t]:.2f}" for t in THRESHOLDS] + [f"{100 * row.geo_bar:.2f}"]
            vals += [f"{100 * row.euc[t]:.2f}" for t in THRESHOLDS] + [f"{100 * row.euc_bar:.2f}"]
            vals += [f"{100 * row.sir:.2f}", f"{100 * row.snapped_geo_bar:.2f}"]
            lines.append("  ".join(f"{v:>10}" for v in vals))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        """JSON report at ``path`` and the aligned text table next to it (``.txt``)."""
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        path.with_suffix(".txt").write_text(self.table())


def read_predictions(path) -> dict:
    preds = {}
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid, pred = rec["id"], (float(rec["pred"][0]), float(rec["pred"][1]))
            except (ValueError, KeyError, TypeError, IndexError) as e:
                raise PredictionError(f"line {n}: bad prediction record ({e})") from None
            if sid in preds:
                raise PredictionError(f"duplicate prediction for id {sid}")
            preds[sid] = pred
    return preds


def write_predictions(path, preds: dict) -> None:
    with open(path, "w") as f:
        for sid, p in preds.items():
            f.write(json.dumps({"id": sid, "pred": [float(p[0]), float(p[1])]}) + "\n")


def evaluate_manifest(records, predictions: dict, root, spec: GridSpec = GridSpec(), trav_cache=None) -> MetricsReport:
    """Score every manifest record against its prediction (meters, agent frame)."""
    ids = [r["id"] for r in records]
    missing = [i for i in ids if i not in predictions]
    if missing:
        raise PredictionError(f"missing prediction for id {missing[0]}")
    extra = set(predictions) - set(ids)
    if extra:
        raise PredictionError(f"prediction for unknown id {sorted(extra)[0]}")
    scores = []
    for r in records:
        if trav_cache is not None and r["id"] in trav_cache:
            trav = trav_cache[r["id"]]
        else:
            trav = traversability_from_scene(Scene.load(Path(root) / r["scene_file"]), spec)
        scores.append(score_sample(r["id"], predictions[r["id"]], r["target"], trav, r["occluded"]))
    return MetricsReport(aggregate(scores), aggregate(s for s in scores if s.occluded), scores)


def random_free_prediction(trav: TravGrid, rng) -> tuple[float, float]:
    """Center of a uniformly drawn passable cell (the unconditioned baseline)."""
    rows, cols = np.nonzero(trav.passable())
    if rows.size == 0:
        raise ValueError("grid has no passable cell")
    k = int(rng.integers(rows.size))
    return cell_center(trav.spec, int(rows[k]), int(cols[k]))


def load_travs(records, root, spec: GridSpec = GridSpec()) -> dict:
    return {r["id"]: traversability_from_scene(Scene.load(Path(root) / r["scene_file"]), spec) for r in records}
