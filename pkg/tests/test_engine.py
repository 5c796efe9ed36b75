import random

import pytest
from hypothesis import given, strategies as st

from qhpc.engine import EventQueue, advance, schedule


def test_same_time_pops_in_insertion_order():
    q = EventQueue()
    schedule(q, 0, "A")
    schedule(q, 0, "B")
    assert advance(q) == (0, "A")
    assert advance(q) == (0, "B")


def test_earlier_time_pops_first():
    q = EventQueue()
    schedule(q, 5, "A")
    schedule(q, 3, "B")
    assert advance(q)[1] == "B"


def test_clock_advances_to_delay():
    q = EventQueue()
    assert q.now == 0
    schedule(q, 7, "x")
    assert advance(q) == (7, "x")
    assert q.now == 7


def test_empty_queue():
    q = EventQueue()
    assert advance(q) is None
    assert not q
    assert q.peek_time() is None


def test_two_events_in_time_order():
    q = EventQueue()
    schedule(q, 5, "b")
    schedule(q, 3, "a")
    assert [advance(q)[0], advance(q)[0]] == [3, 5]


def test_delay_is_relative_to_now():
    q = EventQueue()
    schedule(q, 10, "a")
    advance(q)
    schedule(q, 5, "b")
    assert advance(q) == (15, "b")


def test_negative_delay_rejected():
    with pytest.raises(ValueError):
        schedule(EventQueue(), -1, "x")


def test_thousand_random_events_pop_sorted():
    rng = random.Random(42)
    q = EventQueue()
    inserted = []
    for i in range(1000):
        t = rng.randrange(200)
        schedule(q, t, i)
        inserted.append((t, i))
    popped = []
    while q:
        popped.append(advance(q))
    assert popped == sorted(inserted, key=lambda e: e[0])


@given(st.lists(st.integers(0, 50), max_size=60))
def test_pop_order_is_stable_sort(delays):
    q = EventQueue()
    for i, d in enumerate(delays):
        schedule(q, d, i)
    out = []
    while q:
        t, p = advance(q)
        assert q.now == t
        out.append((t, p))
    assert out == sorted(((d, i) for i, d in enumerate(delays)), key=lambda e: e[0])


@given(st.lists(st.integers(0, 50), max_size=40))
def test_replay_is_identical(delays):
    def run():
        q = EventQueue()
        for i, d in enumerate(delays):
            schedule(q, d, i)
        return [advance(q) for _ in range(len(delays))]
    assert run() == run()
