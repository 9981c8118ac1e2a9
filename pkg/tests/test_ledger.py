"""Tests for the memory ledger."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autograd import ops
from autograd.tensor import backward, get_graph, parameter
from memory.ledger import (Category, MemoryLedger, enforce_budget, format_bytes, record, render_table, replay,
                           write_event_log)
from utils.error_manager import AccountingError, BudgetExceededError

@st.composite
def event_sequences(draw):
    """Signed (category, delta) pairs that never drive a category negative."""
    current = {c: 0 for c in Category}
    events = []
    for _ in range(draw(st.integers(0, 40))):
        category = draw(st.sampled_from(list(Category)))
        if current[category] and draw(st.booleans()):
            delta = -draw(st.integers(1, current[category]))
        else:
            delta = draw(st.integers(0, 10_000))
        current[category] += delta
        events.append((category, delta))
    return events

class TestLedger:

    @given(events=event_sequences())
    @settings(max_examples=100, deadline=None)
    def test_peak_equals_replay_of_event_log(self, events):
        ledger = MemoryLedger()
        for category, delta in events:
            ledger.record(category, delta)
        peak, argmax = replay((e.category, e.delta) for e in ledger.events)
        assert ledger.peak == peak
        assert ledger.peak_event == argmax
        assert ledger.total == sum(delta for _, delta in events)
        assert ledger.peak >= ledger.total

    def test_events_carry_phase_and_running_total(self):
        ledger = MemoryLedger()
        ledger.record(Category.PARAMETERS, 100)
        with ledger.in_phase("forward"):
            ledger.record(Category.ACTIVATIONS, 50)
        ledger.record(Category.ACTIVATIONS, -50, phase="backward")
        assert [(e.phase, e.total) for e in ledger.events] == [("setup", 100), ("forward", 150), ("backward", 100)]
        assert ledger.peak == 150 and ledger.peak_phase == "forward"
        assert ledger.category_peak[Category.ACTIVATIONS] == 50

    def test_negative_category_is_an_accounting_error(self):
        ledger = MemoryLedger()
        ledger.record(Category.DATA, 10)
        with pytest.raises(AccountingError):
            ledger.record(Category.DATA, -11)
        assert ledger.current[Category.DATA] == 10

    def test_replay_rejects_negative_category(self):
        with pytest.raises(AccountingError):
            replay([(Category.Z_CACHE, 5), (Category.Z_CACHE, -6)])

    def test_release_category(self):
        ledger = MemoryLedger()
        record(ledger, Category.Z_CACHE, 64)
        ledger.release_category(Category.Z_CACHE)
        assert ledger.current[Category.Z_CACHE] == 0
        assert ledger.leaked_categories() == []

    def test_leaked_categories_ignore_resident_buffers(self):
        ledger = MemoryLedger()
        ledger.record(Category.PARAMETERS, 8)
        ledger.record(Category.DATA, 4)
        assert ledger.leaked_categories() == [Category.DATA]

class TestBudget:

    def test_allocation_over_budget_is_refused(self):
        ledger = MemoryLedger(budget_bytes=100)
        ledger.record(Category.PARAMETERS, 60)
        with pytest.raises(BudgetExceededError) as info:
            ledger.record(Category.ACTIVATIONS, 41, phase="forward")
        assert info.value.attempted_total == 101
        assert info.value.phase == "forward"
        assert info.value.ledger_category == "activations"
        assert ledger.total == 60
        assert len(ledger.events) == 1

    def test_allocation_up_to_budget_is_allowed(self):
        ledger = MemoryLedger(budget_bytes=100)
        ledger.record(Category.PARAMETERS, 100)
        assert ledger.peak == 100

    def test_frees_are_never_refused(self):
        ledger = MemoryLedger()
        ledger.record(Category.DATA, 50)
        ledger.enforce_budget(50)
        ledger.record(Category.DATA, -20)
        assert ledger.total == 30

    def test_enforce_below_current_total(self):
        ledger = MemoryLedger()
        ledger.record(Category.PARAMETERS, 10)
        with pytest.raises(BudgetExceededError):
            enforce_budget(ledger, 9)

    def test_zero_budget_refuses_first_allocation(self):
        ledger = MemoryLedger(budget_bytes=0)
        with pytest.raises(BudgetExceededError):
            ledger.record(Category.PARAMETERS, 4)

class TestGraphAccounting:

    def test_tape_bytes_flow_through_activations(self):
        ledger = MemoryLedger()
        graph = get_graph()
        ledger.attach(graph)
        w = parameter(np.ones((4, 4)))
        loss = ops.sum_all(ops.relu(ops.mul(w, w)))
        assert ledger.current[Category.ACTIVATIONS] == 64 + 64 + 4
        backward(loss)
        ledger.detach(graph)
        assert ledger.current[Category.ACTIVATIONS] == 0
        assert ledger.peak == 132

    def test_budget_blocks_node_from_tape(self):
        ledger = MemoryLedger(budget_bytes=64)
        graph = get_graph()
        ledger.attach(graph)
        w = parameter(np.ones((4, 4)))
        h = ops.mul(w, w)
        with pytest.raises(BudgetExceededError):
            ops.relu(h)
        ledger.detach(graph)
        assert len(graph) == 1
        assert ledger.total == 64

class TestReports:

    @pytest.mark.parametrize("count,text", [(512, "512 B"), (1536, "1.50 KB"), (3 * 1024 ** 2, "3.00 MB"),
                                            (5 * 1024 ** 4, "5120.00 GB")])
    def test_format_bytes(self, count, text):
        assert format_bytes(count) == text

    def test_render_table_lists_every_category(self):
        ledger = MemoryLedger()
        ledger.record(Category.GRADIENTS, 12)
        table = render_table(ledger)
        for category in Category:
            assert category.value in table
        assert "peak reached at event 0" in table
        assert table.splitlines()[0].split() == ["category", "current", "peak"]

    def test_event_log_csv(self, tmp_path):
        ledger = MemoryLedger()
        ledger.record(Category.DATA, 16, phase="load")
        ledger.record(Category.DATA, -16, phase="end")
        path = write_event_log(ledger, tmp_path / "events.csv")
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["index", "category", "phase", "delta", "total"]
        assert rows[1:] == [["0", "data", "load", "16", "16"], ["1", "data", "end", "-16", "0"]]
