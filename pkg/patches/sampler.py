"""
Inner-iteration patch sampler.

Indices are drawn uniformly without replacement from the patches not yet
seen in the current outer step; the caller grows `excluded` across the J
inner iterations.
"""

from typing import AbstractSet, List

import numpy as np

from patches.grid import PatchPlan
from utils.error_manager import PatchIndexError, PlanError

def sample_patches(rng: np.random.Generator, plan: PatchPlan, excluded: AbstractSet[int]) -> List[int]:
    """
    Draw k distinct unseen patch indices, returned in ascending order.

    Raises:
        PlanError: fewer than k indices remain
        PatchIndexError: an excluded index lies outside the grid
    """
    cells = plan.grid.cells
    for index in excluded:
        if not 0 <= index < cells:
            raise PatchIndexError(f"excluded patch index {index} outside grid of {cells}")
    remaining = np.setdiff1d(np.arange(cells), np.fromiter(excluded, dtype=np.int64, count=len(excluded)))
    if remaining.size < plan.k:
        raise PlanError(f"need {plan.k} unseen patches but only {remaining.size} of {cells} remain")
    chosen = rng.choice(remaining, size=plan.k, replace=False)
    return sorted(int(i) for i in chosen)

def sample_outer_step(rng: np.random.Generator, plan: PatchPlan) -> List[List[int]]:
    """The J index lists of one outer step for one image."""
    seen: set = set()
    schedule = []
    for _ in range(plan.inner_iterations):
        indices = sample_patches(rng, plan, seen)
        seen.update(indices)
        schedule.append(indices)
    return schedule
