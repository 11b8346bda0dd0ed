import numpy as np
import pytest
import sympy

from sysgnn.matrix import ShapeError, dense_matmul_oracle
from sysgnn.strassen import (StrassenCluster, blocked_multiply, cluster_cycles, consolidated_cycles,
                             consolidated_multiply, strassen_multiply, strassen_schedule)
from sysgnn.tile import dense_tile_cycles


def ints(rng, shape):
    return rng.integers(-8, 9, shape).astype(np.float32)


def test_schedule_counts():
    s = strassen_schedule()
    assert s.block_mults == 7
    assert len({p.name for p in s.products}) == 7
    assert s.block_adds == 18


def test_schedule_tiles_and_rounds():
    s = strassen_schedule()
    placed = {(p.name, p.tile, p.round) for p in s.products}
    assert placed == {("M6", 0, 1), ("M4", 1, 1), ("M1", 2, 1), ("M2", 3, 1),
                      ("M0", 0, 2), ("M3", 2, 2), ("M5", 3, 2)}


def test_schedule_is_symbolically_exact():
    # non-commutative symbols: valid for matrix blocks, not just scalars
    a = sympy.symbols("a0:4", commutative=False)
    b = sympy.symbols("b0:4", commutative=False)
    got = strassen_schedule().evaluate(a, b)
    want = (a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3])
    for g, w in zip(got, want):
        assert sympy.expand(g - w) == 0


def test_scalar_example():
    s = strassen_schedule()
    assert s.evaluate([1, 2, 3, 4], [5, 6, 7, 8]) == (19, 22, 43, 50)


def test_two_by_two_products():
    a = np.array([[1, 2], [3, 4]], dtype=np.float32)
    b = np.array([[5, 6], [7, 8]], dtype=np.float32)
    out, st_ = strassen_multiply(StrassenCluster(1, 1), a, b)
    assert out.tolist() == [[19, 22], [43, 50]]
    assert st_.block_mults == 7
    assert st_.scalar_mults == 7


def test_block_products_of_worked_example():
    seen = []

    def mul(x, y):
        seen.append(x * y)
        return x * y

    strassen_schedule().evaluate([1, 2, 3, 4], [5, 6, 7, 8], mul)
    # (A0+A3)(B0+B3), A3(B2-B0), (A0+A1)B3, (A1-A3)(B2+B3)
    for v in (65, 8, 24, -30):
        assert v in seen
    assert len(seen) == 7


def test_identity():
    rng = np.random.default_rng(0)
    b = ints(rng, (8, 8))
    out, _ = strassen_multiply(StrassenCluster(4, 4), np.eye(8), b)
    assert np.array_equal(out, b)


@pytest.mark.parametrize("n", [4, 16, 32])
def test_seven_eighths(n):
    rng = np.random.default_rng(n)
    a, b = ints(rng, (2 * n, 2 * n)), ints(rng, (2 * n, 2 * n))
    cl = StrassenCluster(n, n)
    out, st_ = strassen_multiply(cl, a, b)
    naive = (2 * n) ** 3
    assert st_.scalar_mults * 8 == naive * 7
    assert np.array_equal(out, dense_matmul_oracle(a, b))
    ref, bst = blocked_multiply(cl, a, b)
    assert bst.scalar_mults == naive
    assert bst.block_mults == 8
    assert np.array_equal(ref, out)


@pytest.mark.parametrize("shape", [(3, 5, 7), (7, 7, 7), (9, 2, 4), (1, 1, 1), (2, 9, 1)])
def test_odd_and_rectangular_shapes(shape):
    m, k, n = shape
    rng = np.random.default_rng(m * k * n)
    a, b = ints(rng, (m, k)), ints(rng, (k, n))
    out, _ = strassen_multiply(StrassenCluster(8, 8), a, b)
    assert out.shape == (m, n)
    assert np.array_equal(out, dense_matmul_oracle(a, b))


def test_float_tolerance():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((64, 64)), rng.standard_normal((64, 64))
    out, _ = strassen_multiply(StrassenCluster(32, 32), a, b)
    ref = a @ b
    assert np.max(np.abs(out - ref)) / np.max(np.abs(ref)) < 1e-5


@pytest.mark.parametrize("b", [1, 2, 3, 8, 16, 31])
def test_cycles_match_closed_form(b):
    rng = np.random.default_rng(b)
    cl = StrassenCluster(32, 32)
    _, st_ = strassen_multiply(cl, ints(rng, (2 * b, 2 * b)), ints(rng, (2 * b, 2 * b)))
    assert st_.cycles == cluster_cycles(cl, b)
    # adder lead + 2 streamed products + skew + commit + 2 forward stages + add + drain
    assert st_.cycles == 1 + (2 * b + 2 * b - 2) + 1 + 2 + 1 + b
    assert st_.forwards == 5


def test_cluster_cycles_rectangular_and_off():
    rng = np.random.default_rng(1)
    a, b = ints(rng, (10, 6)), ints(rng, (6, 14))
    cl = StrassenCluster(8, 8)
    _, st_ = strassen_multiply(cl, a, b)
    assert st_.cycles == cluster_cycles(cl, 5, 3, 7)
    _, bst = blocked_multiply(cl, a, b)
    assert bst.cycles == cluster_cycles(cl, 5, 3, 7, strassen=False) == dense_tile_cycles(5, 6, 7)


def test_beats_consolidated_array():
    rng = np.random.default_rng(2)
    a, b = ints(rng, (64, 64)), ints(rng, (64, 64))
    out, st_ = strassen_multiply(StrassenCluster(32, 32), a, b)
    ref, cst = consolidated_multiply(a, b, 64, 64)
    assert np.array_equal(out, ref)
    assert cst.cycles == consolidated_cycles(32) == 254
    assert st_.cycles == 163 < cst.cycles
    assert st_.scalar_mults < cst.scalar_mults == 64 ** 3


def test_consolidated_panels():
    rng = np.random.default_rng(4)
    a, b = ints(rng, (10, 5)), ints(rng, (5, 7))
    out, st_ = consolidated_multiply(a, b, 4, 4)
    assert np.array_equal(out, dense_matmul_oracle(a, b))
    assert st_.block_mults == 3 * 2


def test_blocks_must_fit():
    with pytest.raises(ShapeError, match="split"):
        strassen_multiply(StrassenCluster(4, 4), np.ones((10, 10)), np.ones((10, 10)))
    with pytest.raises(ShapeError):
        strassen_multiply(StrassenCluster(4, 4), np.ones((4, 3)), np.ones((4, 3)))
    with pytest.raises(ShapeError):
        cluster_cycles(StrassenCluster(4, 4), 8)
