import json

import numpy as np
import pytest

from sysgnn.config import EngineConfig
from sysgnn.matrix import ShapeError, SparseTile, spmm_oracle
from sysgnn.pe import Mode, Reduction
from sysgnn.scheduler import (finish_mean, map_aggregation, map_transformation, run_aggregation,
                              run_transformation, tile_grid)


def small_cfg(**kw):
    return EngineConfig(tile_rows=4, tile_cols=4, **kw)


def rand_adj(rng, n, density):
    m = (rng.random((n, n)) < density) * rng.integers(1, 5, (n, n))
    return SparseTile.from_dense(m.astype(np.float32))


def column_of(n_nonzero, n_blocks=5, R=4):
    grid = [[SparseTile(R, R)] for _ in range(n_blocks)]
    for br in range(n_nonzero):
        grid[br][0] = SparseTile.identity(R)
    return grid


# transformation

@pytest.mark.parametrize("m, n, passes", [(64, 64, 1), (128, 128, 4), (1024, 64, 16), (65, 64, 2), (1, 1, 1)])
def test_transformation_pass_count(m, n, passes):
    tm = map_transformation((m, 16), (16, n), EngineConfig())
    assert tm.n_passes == passes
    assert len(tm.assignments) == 4 * passes
    # passes alternate between the two clusters
    assert [p["cluster"] for p in tm.passes] == [i % 2 for i in range(passes)]


def test_transformation_address_table_is_disjoint():
    tm = map_transformation((130, 8), (8, 70), EngineConfig())
    addrs = sorted(tm.address_table.values())
    assert addrs[0] == 0 and len(set(addrs)) == len(addrs)
    dumped = json.loads(tm.to_json())
    assert dumped["mode"] == "ring_dense"


def test_transformation_shape_error():
    with pytest.raises(ShapeError):
        map_transformation((4, 3), (4, 2), EngineConfig())


@pytest.mark.parametrize("strassen", [True, False])
def test_run_transformation_exact(strassen):
    rng = np.random.default_rng(0)
    x = rng.integers(-3, 4, (19, 7)).astype(np.float32)
    w = rng.integers(-3, 4, (7, 11)).astype(np.float32)
    out, st = run_transformation(x, w, small_cfg(strassen=strassen))
    assert np.array_equal(out, x @ w)
    assert st.passes == 3 * 2
    assert st.cycles > 0


def test_strassen_lowers_transformation_multiplies():
    rng = np.random.default_rng(1)
    x, w = rng.standard_normal((64, 64)), rng.standard_normal((64, 64))
    _, on = run_transformation(x, w, EngineConfig(strassen=True))
    _, off = run_transformation(x, w, EngineConfig(strassen=False))
    assert on.macs * 8 == off.macs * 7


# aggregation mapping

def test_two_of_five_is_one_pass():
    tm = map_aggregation(column_of(2), small_cfg(), packing=False)
    assert tm.n_passes == 1
    assert tm.passes[0]["units"] == ["A[0,0]", "A[1,0]"]


def test_all_empty_is_no_pass():
    tm = map_aggregation(column_of(0), small_cfg(), packing=False)
    assert tm.n_passes == 0 and tm.assignments == []


def test_six_nonzero_is_two_passes():
    tm = map_aggregation(column_of(6, n_blocks=6), small_cfg(), packing=False)
    assert tm.n_passes == 2
    assert [len(p["units"]) for p in tm.passes] == [4, 2]


def test_feature_panels_repeat_chains():
    tm = map_aggregation(column_of(2), small_cfg(), packing=False, feature_dim=10)
    assert tm.n_passes == 3
    assert [p["panel"] for p in tm.passes] == [0, 1, 2]


def test_tile_grid_pads_edges():
    a = SparseTile.from_entries(5, 5, [(4, 4, 1.0), (0, 1, 2.0)])
    g = tile_grid(a, 4)
    assert len(g) == 2 and len(g[0]) == 2
    assert g[1][1].shape == (4, 4)
    assert g[1][1].entries == [(0, 0, 1.0)]


# aggregation runs

@pytest.mark.parametrize("packing", [False, True])
def test_aggregation_exact(packing):
    rng = np.random.default_rng(2)
    a = rand_adj(rng, 23, 0.15)
    x = rng.integers(-4, 5, (23, 6)).astype(np.float32)
    vals, counts, st = run_aggregation(a, x, small_cfg(), packing=packing)
    assert np.array_equal(vals, spmm_oracle(a, x))
    assert np.array_equal(counts, a.row_counts())
    assert st.macs == a.nnz * 6


def test_empty_tile_elimination_never_changes_results():
    rng = np.random.default_rng(3)
    m = np.zeros((24, 24), dtype=np.float32)
    m[:8, :8] = rng.integers(1, 4, (8, 8)) * (rng.random((8, 8)) < 0.5)
    a = SparseTile.from_dense(m)
    x = rng.integers(-4, 5, (24, 4)).astype(np.float32)
    vals, _, st = run_aggregation(a, x, small_cfg(), packing=False)
    assert np.array_equal(vals, spmm_oracle(a, x))
    grid = tile_grid(a, 4)
    per_col = [sum(grid[br][bc].nnz > 0 for br in range(6)) for bc in range(6)]
    assert per_col == [2, 2, 0, 0, 0, 0]
    assert st.passes == 2


def test_packing_fewer_passes_same_values():
    rng = np.random.default_rng(4)
    a = rand_adj(rng, 40, 0.05)
    x = rng.integers(-4, 5, (40, 4)).astype(np.float32)
    v0, _, s0 = run_aggregation(a, x, small_cfg(), packing=False)
    v1, _, s1 = run_aggregation(a, x, small_cfg(), packing=True)
    assert np.array_equal(v0, v1)
    assert s1.passes <= s0.passes


@pytest.mark.parametrize("red", [Reduction.MAX, Reduction.MIN, Reduction.MEAN, Reduction.ADD])
def test_direct_aggregation_across_tile_columns(red):
    rng = np.random.default_rng(5)
    a = rand_adj(rng, 13, 0.3)
    x = rng.standard_normal((13, 3)).astype(np.float32)
    vals, counts, _ = run_aggregation(a, x, small_cfg(), Mode.DIRECT, red)
    if red is Reduction.MEAN:
        vals = finish_mean(vals, counts)
    fn = {Reduction.ADD: np.sum, Reduction.MIN: np.min, Reduction.MAX: np.max, Reduction.MEAN: np.mean}[red]
    for i in range(13):
        nb = a.cols[a.rows == i]
        want = fn(x[nb], axis=0) if len(nb) else np.zeros(3)
        assert np.allclose(vals[i], want, rtol=1e-5, atol=1e-6)


def test_finish_mean_leaves_isolated_rows_zero():
    v = np.array([[4.0, 2.0], [0.0, 0.0]], dtype=np.float32)
    assert finish_mean(v, np.array([2, 0])).tolist() == [[2.0, 1.0], [0.0, 0.0]]
