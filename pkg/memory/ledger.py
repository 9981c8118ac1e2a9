"""
Memory ledger: byte accounting of live training buffers by category.

The ledger counts semantic allocations (tensors the engine creates) at 4
bytes per element. Every change is an event; the running peak equals the
prefix-sum maximum of the event log, so any run can be replayed exactly.
"""

import csv
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

from autograd.tensor import Graph, Node
from utils.error_manager import AccountingError, BudgetExceededError
from utils.logger import setup_logger

logger = setup_logger(__name__)

class Category(Enum):
    """Ledger categories."""
    PARAMETERS = "parameters"
    GRADIENTS = "gradients"
    OPTIMIZER_STATE = "optimizer_state"
    ACTIVATIONS = "activations"
    Z_CACHE = "z_cache"
    DATA = "data"

# Categories that may stay nonzero once a run has finished
RESIDENT = (Category.PARAMETERS, Category.GRADIENTS, Category.OPTIMIZER_STATE)

@dataclass(frozen=True)
class LedgerEvent:
    """One applied change; `total` is the ledger total after it."""
    index: int
    category: Category
    delta: int
    phase: str
    total: int

class MemoryLedger:
    """
    Current bytes per category, running peak and the event log.

    Updates are serialized by a lock; the event order is the order in which
    record() calls acquire it.
    """

    def __init__(self, budget_bytes: Optional[int] = None):
        self.current: Dict[Category, int] = {c: 0 for c in Category}
        self.category_peak: Dict[Category, int] = {c: 0 for c in Category}
        self.events: List[LedgerEvent] = []
        self.peak = 0
        self.peak_event: Optional[int] = None
        self.peak_phase = ""
        self.budget_bytes = budget_bytes
        self.phase = "setup"
        self._lock = threading.Lock()

    @property
    def total(self) -> int:
        return sum(self.current.values())

    @contextmanager
    def in_phase(self, phase: str) -> Iterator[None]:
        """Label events recorded inside the block with `phase`."""
        previous = self.phase
        self.phase = phase
        try:
            yield
        finally:
            self.phase = previous

    def record(self, category: Category, delta: int, phase: Optional[str] = None) -> None:
        """
        Apply a signed byte change.

        Raises:
            AccountingError: the category would go negative
            BudgetExceededError: an allocation would push the total above the
                budget; the event is not applied
        """
        category = Category(category)
        delta = int(delta)
        phase = phase or self.phase
        with self._lock:
            index = len(self.events)
            if self.current[category] + delta < 0:
                raise AccountingError(
                    f"{category.value} would go negative: {self.current[category]} + ({delta}) at event {index}"
                )
            attempted = self.total + delta
            if delta > 0 and self.budget_bytes is not None and attempted > self.budget_bytes:
                raise BudgetExceededError(category.value, phase, index, attempted, self.budget_bytes)

            self.current[category] += delta
            if self.current[category] > self.category_peak[category]:
                self.category_peak[category] = self.current[category]
            self.events.append(LedgerEvent(index, category, delta, phase, attempted))
            if attempted > self.peak:
                self.peak = attempted
                self.peak_event = index
                self.peak_phase = phase

    def enforce_budget(self, budget_bytes: Optional[int]) -> None:
        """
        Set (or clear, with None) the budget.

        Raises:
            BudgetExceededError: the current total already exceeds it
        """
        self.budget_bytes = budget_bytes
        if budget_bytes is not None and self.total > budget_bytes:
            raise BudgetExceededError("total", self.phase, len(self.events), self.total, budget_bytes)

    def release_category(self, category: Category) -> None:
        """Record the release of everything left in a category."""
        if self.current[category]:
            self.record(category, -self.current[category])

    def attach(self, graph: Graph) -> None:
        """Account every tape node's output as activation bytes."""
        graph.add_listener(self._on_graph_event)

    def detach(self, graph: Graph) -> None:
        graph.remove_listener(self._on_graph_event)

    def _on_graph_event(self, kind: str, node: Node) -> None:
        if kind == "stash":
            self.record(Category.ACTIVATIONS, node.nbytes)
        elif kind == "release":
            self.record(Category.ACTIVATIONS, -node.nbytes)

    def leaked_categories(self) -> List[Category]:
        """Non-resident categories that are not back to zero."""
        return [c for c in Category if c not in RESIDENT and self.current[c] != 0]

# ============================================================================
# Functional Interface
# ============================================================================

def record(ledger: MemoryLedger, category: Category, delta_bytes: int, phase: Optional[str] = None) -> None:
    ledger.record(category, delta_bytes, phase)

def enforce_budget(ledger: MemoryLedger, budget_bytes: Optional[int]) -> None:
    ledger.enforce_budget(budget_bytes)

def replay(events: Iterable[Tuple[Category, int]]) -> Tuple[int, Optional[int]]:
    """
    Peak of the prefix sums of (category, delta) pairs and the first event index reaching it.

    Raises:
        AccountingError: a category goes negative during the replay
    """
    current: Dict[Category, int] = {c: 0 for c in Category}
    total, peak, argmax = 0, 0, None
    for index, (category, delta) in enumerate(events):
        category = Category(category)
        current[category] += delta
        if current[category] < 0:
            raise AccountingError(f"{category.value} goes negative at event {index}")
        total += delta
        if total > peak:
            peak, argmax = total, index
    return peak, argmax

# ============================================================================
# Reports
# ============================================================================

def format_bytes(count: int) -> str:
    """Human-readable size, e.g. 1.50 MB."""
    value = float(count)
    for unit in ("B", "KB", "MB", "GB"):
        if abs(value) < 1024 or unit == "GB":
            return f"{value:.0f} {unit}" if unit == "B" else f"{value:.2f} {unit}"
        value /= 1024
    return f"{value:.2f} GB"

def render_table(ledger: MemoryLedger) -> str:
    """Text table with columns category, current, peak (bytes)."""
    rows = [("category", "current", "peak")]
    for category in Category:
        rows.append((category.value, str(ledger.current[category]), str(ledger.category_peak[category])))
    rows.append(("total", str(ledger.total), str(ledger.peak)))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = []
    for i, row in enumerate(rows):
        lines.append(f"{row[0]:<{widths[0]}}  {row[1]:>{widths[1]}}  {row[2]:>{widths[2]}}")
        if i == 0:
            lines.append("-" * (sum(widths) + 4))
    if ledger.peak_event is not None:
        lines.append(f"peak reached at event {ledger.peak_event} (phase {ledger.peak_phase}), "
                     f"{format_bytes(ledger.peak)}")
    return "\n".join(lines) + "\n"

def write_event_log(ledger: MemoryLedger, path: Union[str, Path]) -> Path:
    """CSV event log: index,category,phase,delta,total."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "category", "phase", "delta", "total"])
        for event in ledger.events:
            writer.writerow([event.index, event.category.value, event.phase, event.delta, event.total])
    logger.debug(f"Wrote {len(ledger.events)} ledger events to {path}")
    return path
