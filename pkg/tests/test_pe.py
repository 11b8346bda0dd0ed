import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sysgnn.pe import (FifoCam, Mode, ProcessingElement, Reduction, SimulationError, SparseElem,
                       find_and_skip, pe_cycle)


def filled(indices, cap=4, debug=True):
    f = FifoCam(cap, debug)
    for i in indices:
        f.push(i, float(10 * i))
    return f


# Find&Skip

def test_find_and_skip_hit():
    f = filled([2, 5, 7])
    assert find_and_skip(f, 5) == (True, 50.0)
    assert [e[0] for e in f.entries()] == [5, 7]


def test_find_and_skip_miss_keeps_larger():
    f = filled([2, 5, 7])
    assert find_and_skip(f, 3) == (False, None)
    assert f.head_entry()[0] == 5
    assert len(f) == 2


def test_find_and_skip_empty():
    f = FifoCam(4, debug=True)
    assert find_and_skip(f, 0) == (False, None)
    assert len(f) == 0


def test_find_and_skip_expels_everything_below():
    f = filled([1, 2, 3])
    assert find_and_skip(f, 9) == (False, None)
    assert len(f) == 0


def test_fifo_rejects_non_increasing_and_overflow():
    f = filled([3], cap=2)
    with pytest.raises(ValueError):
        f.push(3, 0.0)
    f.push(4, 0.0)
    with pytest.raises(OverflowError):
        f.push(5, 0.0)
    with pytest.raises(ValueError):
        FifoCam(0)


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3)), max_size=60), st.integers(1, 6))
def test_fifo_matches_linear_scan(ops, cap):
    """Random push/search interleavings agree with a plain list; debug mode checks each call."""
    f = FifoCam(cap, debug=True)
    model: list[int] = []
    nxt = 0
    probe = 0
    for is_push, step in ops:
        if is_push:
            nxt += step + 1
            if len(model) < cap:
                f.push(nxt, float(nxt))
                model.append(nxt)
        else:
            probe += step
            hit, val = find_and_skip(f, probe)
            model = [i for i in model if i >= probe]
            assert hit == (bool(model) and model[0] == probe)
            assert val == (float(probe) if hit else None)
        assert [e[0] for e in f.entries()] == model
    assert f.checks == f.calls


# single-PE behaviour

def test_worked_trace_push_bypass_hit():
    # the element for dense row 2 arrives at cycle 0, waits, and matches at cycle 2
    pe = ProcessingElement(Mode.WEIGHTED, debug=True)
    d = [1.5, -2.0, 4.0]
    events = []
    for k in range(3):
        s = SparseElem(0, 2, 3.0) if k == 0 else None
        pe_cycle(pe, s, (k, np.float32(d[k])))
        events.append(pe.last_event[0])
    assert events == ["push", "bypass", "cam_hit"]
    assert pe.c == np.float32(3.0 * d[2])
    assert pe.multiplies == 1


def test_direct_match_same_cycle():
    pe = ProcessingElement(Mode.WEIGHTED)
    pe.cycle(SparseElem(0, 0, 2.0), (0, np.float32(5.0)))
    assert pe.last_event[0] == "match"
    assert pe.c == 10.0


def test_dense_mac():
    pe = ProcessingElement(Mode.DENSE)
    pe.cycle(SparseElem(0, 0, 2.0), (0, np.float32(3.0)))
    assert pe.c == 6.0
    assert pe.multiplies == 1


def test_dense_bypass_without_operand():
    pe = ProcessingElement(Mode.DENSE)
    a, b, stall = pe.cycle(None, (0, np.float32(3.0)))
    assert a is None and not stall
    assert pe.c == 0.0


def run_direct(red, matches, stream):
    pe = ProcessingElement(Mode.DIRECT, red)
    for k, v in enumerate(stream):
        s = SparseElem(0, k, 1.0) if k in matches else None
        pe.cycle(s, (k, np.float32(v)))
    return pe


@pytest.mark.parametrize("red, expect", [
    (Reduction.ADD, 16.0), (Reduction.MAX, 9.0), (Reduction.MIN, 2.0), (Reduction.MEAN, 16.0 / 3)])
def test_direct_reductions(red, expect):
    pe = run_direct(red, {0, 2, 3}, [5.0, 100.0, 9.0, 2.0])
    assert pe.result() == pytest.approx(expect)
    assert pe.multiplies == 0
    assert pe.updates == 3


def test_direct_add_two_matches():
    pe = run_direct(Reduction.ADD, {0, 1}, [5.0, 7.0])
    assert pe.c == 12.0
    assert pe.multiplies == 0


def test_direct_max_negative_values():
    # first match initialises, so an all-negative set does not collapse to 0
    pe = run_direct(Reduction.MAX, {0, 1}, [-3.0, -7.0])
    assert pe.result() == -3.0


def test_direct_no_match_gives_none():
    pe = run_direct(Reduction.MAX, set(), [1.0, 2.0])
    assert pe.result() is None


def test_stall_when_fifo_full():
    pe = ProcessingElement(Mode.WEIGHTED, fifo_depth=1)
    pe.cycle(SparseElem(0, 5, 1.0), (0, np.float32(0)))
    _, _, stall = pe.cycle(SparseElem(0, 6, 1.0), (1, np.float32(0)))
    assert stall and pe.stalls == 1


def test_late_key_is_invariant_violation():
    pe = ProcessingElement(Mode.WEIGHTED)
    pe.cycle(None, (0, np.float32(0)))
    with pytest.raises(SimulationError):
        pe.cycle(SparseElem(0, 0, 1.0), (1, np.float32(0)))


def test_dense_stream_out_of_step():
    pe = ProcessingElement(Mode.WEIGHTED)
    with pytest.raises(SimulationError):
        pe.cycle(None, (3, np.float32(0)))


def test_mask_selects_bank():
    pe = ProcessingElement(Mode.WEIGHTED, banks=2)
    pe.cycle(SparseElem(0, 0, 2.0, mask=1), (0, np.float32(3.0)))
    pe.cycle(SparseElem(0, 1, 1.0, mask=0), (1, np.float32(4.0)))
    assert pe.result(1) == 6.0 and pe.result(0) == 4.0


@given(st.lists(st.integers(0, 40), unique=True, max_size=20), st.integers(1, 5))
def test_no_stall_when_lead_fits(keys, cap):
    """A row streamed one element per cycle never stalls if key - position <= capacity."""
    keys = sorted(keys)
    lead = max((k - p for p, k in enumerate(keys)), default=0)
    pe = ProcessingElement(Mode.WEIGHTED, fifo_depth=cap, debug=True)
    queue = list(keys)
    for cyc in range(max(keys, default=0) + 1):
        s = SparseElem(0, queue[0], 1.0) if queue else None
        _, _, stall = pe.cycle(s, (cyc, np.float32(1.0)))
        if not stall and queue:
            queue.pop(0)
    if lead <= cap:
        assert pe.stalls == 0
        assert pe.updates == len(keys)
    assert pe.fifo.checks == pe.fifo.calls
