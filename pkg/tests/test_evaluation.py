import math

import numpy as np
import pytest

from bevnav.bevgeom import GridSpec, cell_center
from bevnav.evaluation import (
    THRESHOLDS,
    PredictionError,
    aggregate,
    argmax_target,
    euc_acc,
    evaluate_manifest,
    geo_acc,
    random_free_prediction,
    read_predictions,
    score_sample,
    structural_invalid,
    write_predictions,
)
from bevnav.geodesy import FREE_CELL, STATIC, TRANSIENT, TravGrid, geodesic_field
from bevnav.scenegen import DatasetConfig, generate_dataset, read_manifest

from oracles import dijkstra, metric_oracle

SPEC = GridSpec(0.8, 0.1)


def wall_grid():
    """16x16 grid with a full-width wall across row 8."""
    state = np.zeros(SPEC.shape, dtype=np.uint8)
    state[8, :] = STATIC
    return TravGrid(SPEC, state)


def random_trav(rng, p=0.25):
    state = np.where(rng.random(SPEC.shape) < p, STATIC, FREE_CELL).astype(np.uint8)
    state[rng.random(SPEC.shape) < 0.05] = TRANSIENT
    return TravGrid(SPEC, state)


def test_argmax_one_hot_and_ties():
    s = np.zeros((16, 16))
    s[3, 7] = 1.0
    assert argmax_target(s, SPEC)[0] == (3, 7)
    s[2, 9] = 1.0
    cell, p = argmax_target(s, SPEC)
    assert cell == (2, 9) and p == cell_center(SPEC, 2, 9)


def test_argmax_matches_linear_scan():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.integers(0, 5, (16, 16)).astype(float)
        best, arg = -math.inf, None
        for r in range(16):
            for c in range(16):
                if s[r, c] > best:
                    best, arg = s[r, c], (r, c)
        assert argmax_target(s[..., None], SPEC)[0] == arg


def test_geo_acc_same_point():
    t = wall_grid()
    p = cell_center(SPEC, 3, 3)
    assert all(geo_acc(p, p, t, th) for th in THRESHOLDS)


def test_wall_contrast_geo_vs_euc():
    t = wall_grid()
    target, pred = cell_center(SPEC, 7, 5), cell_center(SPEC, 9, 6)
    assert not geo_acc(pred, target, t, 1.5)
    inside = cell_center(SPEC, 8, 7)
    assert not any(geo_acc(inside, target, t, th) for th in THRESHOLDS)
    assert euc_acc(inside, target, 0.5)


def test_euc_inclusive_boundary():
    assert euc_acc((1.0, 0.0), (0.0, 0.0), 1.0)
    assert not euc_acc((1.01, 0.0), (0.0, 0.0), 1.0)


def test_structural_invalid_static_only():
    state = np.zeros(SPEC.shape, dtype=np.uint8)
    state[2, 2], state[4, 4] = STATIC, TRANSIENT
    t = TravGrid(SPEC, state)
    assert structural_invalid(cell_center(SPEC, 2, 2), t)
    assert not structural_invalid(cell_center(SPEC, 4, 4), t)
    assert not structural_invalid(cell_center(SPEC, 6, 6), t)


def test_out_of_bounds_raises():
    with pytest.raises(ValueError):
        geo_acc((0.9, 0.0), (0.0, 0.0), wall_grid(), 1.0)


def test_score_sample_matches_oracle():
    rng = np.random.default_rng(3)
    for k in range(100):
        t = random_trav(rng)
        if not t.passable().any():
            continue
        pred, target = tuple(rng.uniform(-0.8, 0.8 - 1e-9, 2)), tuple(rng.uniform(-0.8, 0.8 - 1e-9, 2))
        s = score_sample(str(k), pred, target, t, thresholds=(0.3, 0.5, 1.0))
        for th in (0.3, 0.5, 1.0):
            geo, euc, sir, snapped = metric_oracle(pred, target, t.state, 0.8, 0.1, th)
            assert (s.geo[th], s.euc[th], s.sir, s.snapped_geo[th]) == (geo, euc, sir, snapped)


def test_sample_invariants():
    rng = np.random.default_rng(4)
    scores = []
    for k in range(200):
        t = random_trav(rng, p=0.35)
        pred, target = tuple(rng.uniform(-0.8, 0.79, 2)), tuple(rng.uniform(-0.8, 0.79, 2))
        s = score_sample(str(k), pred, target, t, thresholds=(0.3, 0.5, 1.0))
        scores.append(s)
        for th in (0.3, 0.5, 1.0):
            assert s.euc[th] or not s.geo[th]
            assert s.snapped_geo[th] or not s.geo[th]
            if s.sir:
                assert not s.geo[th]
    row = aggregate(scores, thresholds=(0.3, 0.5, 1.0))
    assert row.geo[0.3] <= row.geo[0.5] <= row.geo[1.0]
    assert row.euc[0.3] <= row.euc[0.5] <= row.euc[1.0]
    assert row.geo_bar <= row.snapped_geo_bar and row.geo_bar <= row.euc_bar
    assert all(0 <= v <= 1 for v in list(row.geo.values()) + list(row.euc.values()) + [row.sir])


def test_random_free_prediction_matches_exact_rate():
    rng = np.random.default_rng(5)
    t = random_trav(rng, p=0.3)
    passable = t.passable()
    tc = tuple(int(v) for v in np.argwhere(passable)[0])
    target = cell_center(SPEC, *tc)
    dist = dijkstra(passable, tc, 0.1)
    p_exact = ((dist <= 0.5 + 1e-9) & passable).sum() / passable.sum()
    field_ = geodesic_field(t, tc).dist
    draw = np.random.default_rng(6)
    n = 20000
    hits = sum(geo_acc(random_free_prediction(t, draw), target, t, 0.5, field_) for _ in range(n))
    sigma = math.sqrt(p_exact * (1 - p_exact) / n)
    assert abs(hits / n - p_exact) <= 2 * sigma


def test_predictions_round_trip_and_duplicates(tmp_path):
    write_predictions(tmp_path / "p.jsonl", {"a": (1.0, 2.0), "b": (-0.5, 0.25)})
    assert read_predictions(tmp_path / "p.jsonl") == {"a": (1.0, 2.0), "b": (-0.5, 0.25)}
    (tmp_path / "d.jsonl").write_text('{"id": "a", "pred": [0, 0]}\n{"id": "a", "pred": [1, 1]}\n')
    with pytest.raises(PredictionError):
        read_predictions(tmp_path / "d.jsonl")
    (tmp_path / "s.jsonl").write_text('{"id": "a"}\n')
    with pytest.raises(PredictionError):
        read_predictions(tmp_path / "s.jsonl")


@pytest.fixture(scope="module")
def small_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval")
    generate_dataset(DatasetConfig(), 12, root / "manifest.jsonl", seed=2)
    return root, read_manifest(root / "manifest.jsonl")


def test_oracle_predictions_score_perfectly(small_set, tmp_path):
    root, recs = small_set
    report = evaluate_manifest(recs, {r["id"]: tuple(r["target"]) for r in recs}, root)
    assert report.full.geo_bar == 1.0 and report.full.euc_bar == 1.0 and report.full.sir == 0.0
    assert report.full.count == 12
    report.write(tmp_path / "r.json")
    assert "GeoBar" in (tmp_path / "r.txt").read_text()


def test_missing_and_unknown_ids(small_set):
    root, recs = small_set
    preds = {r["id"]: tuple(r["target"]) for r in recs[1:]}
    with pytest.raises(PredictionError, match="missing"):
        evaluate_manifest(recs, preds, root)
    preds[recs[0]["id"]] = (0.0, 0.0)
    preds["nope"] = (0.0, 0.0)
    with pytest.raises(PredictionError, match="unknown"):
        evaluate_manifest(recs, preds, root)
