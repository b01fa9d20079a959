import math

import numpy as np
import pytest

from bevnav.bevgeom import GridSpec, cell_center
from bevnav.geodesy import (
    FREE_CELL,
    STATIC,
    TRANSIENT,
    NoFreeCellError,
    TravGrid,
    geodesic_field,
    snap_to_traversable,
    target_region,
    traversability_from_depth,
    traversability_from_scene,
)
from bevnav.scene import Obstacle, Scene
from bevnav.sensor import CameraRig, intrinsics_from_fov, render_views

from oracles import dijkstra, nearest_free


def grid(state, bound=None, cell=1.0):
    state = np.asarray(state, dtype=np.uint8)
    bound = bound if bound is not None else state.shape[0] * cell / 2
    return TravGrid(GridSpec(bound, cell), state)


def random_grid(rng, n=16, p=0.3):
    state = np.where(rng.random((n, n)) < p, STATIC, FREE_CELL).astype(np.uint8)
    state[rng.random((n, n)) < 0.05] = TRANSIENT
    return TravGrid(GridSpec(n * 0.05, 0.1), state)


def test_source_to_itself_is_zero():
    t = grid(np.zeros((4, 4)))
    assert geodesic_field(t, (1, 2)).dist[1, 2] == 0.0


def test_three_by_three_corner():
    t = grid(np.zeros((3, 3)), cell=1.0)
    d = geodesic_field(t, (1, 1)).dist
    assert d[0, 0] == pytest.approx(math.sqrt(2))
    assert d[0, 1] == 1.0


def test_wall_separates():
    state = np.zeros((6, 6))
    state[:, 3] = STATIC
    d = geodesic_field(grid(state), (2, 2)).dist
    assert math.isinf(d[2, 4])
    assert math.isinf(d[2, 3])


def test_blocked_source_gives_all_inf():
    state = np.zeros((4, 4))
    state[0, 0] = STATIC
    assert np.all(np.isinf(geodesic_field(grid(state), (0, 0)).dist))


def test_source_out_of_range():
    with pytest.raises(IndexError):
        geodesic_field(grid(np.zeros((4, 4))), (4, 0))


def test_no_corner_cutting():
    state = np.zeros((3, 3))
    state[0, 1] = state[1, 0] = STATIC
    d = geodesic_field(grid(state), (0, 0)).dist
    assert math.isinf(d[1, 1])


def test_transient_cells_are_passable_by_default():
    t = TravGrid(GridSpec(0.25, 0.1), np.zeros((5, 5), dtype=np.uint8))
    t.state[:, 2] = TRANSIENT
    assert geodesic_field(t, (0, 0)).dist[0, 4] == pytest.approx(0.4)
    assert math.isinf(geodesic_field(t, (0, 0), transient_blocks=True).dist[0, 4])


def test_matches_oracle_on_random_grids():
    rng = np.random.default_rng(0)
    for _ in range(60):
        t = random_grid(rng)
        passable = t.passable()
        src = tuple(int(v) for v in rng.integers(0, 16, 2))
        ref = dijkstra(passable, src, t.spec.cell)
        got = geodesic_field(t, src).dist
        assert np.array_equal(np.isinf(ref), np.isinf(got))
        fin = np.isfinite(ref)
        assert np.allclose(got[fin], ref[fin], rtol=0, atol=1e-12)


def test_geodesic_never_below_euclidean():
    rng = np.random.default_rng(1)
    t = random_grid(rng)
    src = (8, 8)
    t.state[src] = FREE_CELL
    d = geodesic_field(t, src).dist
    r, c = np.indices(d.shape)
    eu = np.hypot(r - 8, c - 8) * t.spec.cell
    assert np.all(d >= eu - 1e-12)


def test_region_radius_zero_is_one_cell():
    spec = GridSpec(0.8, 0.1)
    t = TravGrid(spec, np.zeros(spec.shape, dtype=np.uint8))
    m = target_region(t, (0.05, 0.05), r=0.0)
    assert m.mask.sum() == 1 and m.mask[8, 8]
    assert not m.snapped


def test_region_large_radius_covers_reachable():
    spec = GridSpec(0.8, 0.1)
    state = np.zeros(spec.shape, dtype=np.uint8)
    state[:, 12] = STATIC
    m = target_region(TravGrid(spec, state), (0.0, -0.5), r=100.0)
    assert m.mask[:, :12].all() and not m.mask[:, 12:].any()


def test_region_around_corner_matches_oracle():
    spec = GridSpec(0.8, 0.1)
    state = np.zeros(spec.shape, dtype=np.uint8)
    state[8, 4:] = STATIC
    state[4:, 8] = STATIC
    t = TravGrid(spec, state)
    target = cell_center(spec, 10, 10)
    m = target_region(t, target, r=1.0)
    ref = dijkstra(t.passable(), (10, 10), 0.1) <= 1.0 + 1e-9
    assert np.array_equal(m.mask, ref)


def test_region_snaps_blocked_target():
    spec = GridSpec(0.8, 0.1)
    state = np.zeros(spec.shape, dtype=np.uint8)
    state[8, 8] = STATIC
    m = target_region(TravGrid(spec, state), cell_center(spec, 8, 8), r=0.0)
    assert m.snapped and m.source == (7, 8)


def test_region_out_of_bounds():
    spec = GridSpec(0.8, 0.1)
    with pytest.raises(ValueError):
        target_region(TravGrid(spec, np.zeros(spec.shape, dtype=np.uint8)), (0.8, 0.0))


def test_snap_free_cell_is_itself():
    assert snap_to_traversable(grid(np.zeros((4, 4))), (2, 3)) == (2, 3)


def test_snap_tie_goes_to_lower_index():
    state = np.full((3, 3), STATIC)
    state[0, 1] = state[2, 1] = FREE_CELL
    assert snap_to_traversable(grid(state), (1, 1)) == (0, 1)


def test_snap_matches_exhaustive_search():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t = random_grid(rng, p=0.7)
        cell = tuple(int(v) for v in rng.integers(0, 16, 2))
        if not t.passable().any():
            continue
        assert snap_to_traversable(t, cell) == nearest_free(t.passable(), cell)


def test_snap_without_free_cells():
    with pytest.raises(NoFreeCellError):
        snap_to_traversable(grid(np.full((3, 3), STATIC)), (1, 1))


def test_trav_empty_scene_all_free():
    t = traversability_from_scene(Scene([]), GridSpec())
    assert np.all(t.state == FREE_CELL)


def test_trav_box_covers_exactly_inside_centers():
    spec = GridSpec()
    box = Obstacle("box", (1.5, 0.0), (0.5, 1.0), 2.0, "red")
    t = traversability_from_scene(Scene([box]), spec, agent_radius=0.0)
    x, y = spec.centers()
    ref = (x >= 1.0) & (x <= 2.0) & (y >= -1.0) & (y <= 1.0)
    assert np.array_equal(t.state == STATIC, ref)


def test_trav_pedestrian_is_transient():
    ped = Obstacle("cylinder", (2.0, 2.0), (0.3,), 1.7, "gray", transient=True)
    t = traversability_from_scene(Scene([ped]), GridSpec())
    assert (t.state == TRANSIENT).any() and not (t.state == STATIC).any()


def test_trav_from_depth_empty_scene_is_free_near_agent():
    spec = GridSpec()
    rig, intr = CameraRig(), intrinsics_from_fov(64, 64, 90.0)
    depths, _ = render_views(Scene([]), rig, intr)
    t = traversability_from_depth(depths, rig, intr, spec)
    x, y = spec.centers()
    near = np.hypot(x, y) < 4.0
    assert (t.state[near] == FREE_CELL).mean() > 0.99


def test_trav_from_depth_no_valid_pixels_all_blocked():
    spec = GridSpec()
    rig, intr = CameraRig(), intrinsics_from_fov(16, 16, 90.0)
    # zero depth is not a valid measurement, so no ray marks anything
    t = traversability_from_depth(np.zeros((4, 16, 16)), rig, intr, spec)
    assert np.all(t.state == STATIC)
