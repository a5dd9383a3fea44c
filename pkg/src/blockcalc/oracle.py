"""Exact ground truth by enumerating every treatment assignment of a design.

Every closed-form variance in this package is validated against these
enumerations. Assignments are visited in lexicographic order of the treated
index combinations, nested by block index, which makes the traversal
deterministic and shardable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, product
from typing import Callable, Iterator

import numpy as np

from .pop_model import (
    Blocked,
    CompleteRandomization,
    DesignSpec,
    PotentialOutcomeTable,
    validate_design,
)

#: Default enumeration cap; keeps worst-case runtime around a minute.
DEFAULT_CAP = 10_000_000

#: Named statistics usable with :func:`exact_moments`. Each maps
#: ``(table, treated_mask) -> float``.
Statistic = Callable[[PotentialOutcomeTable, np.ndarray], float]


@dataclass(frozen=True)
class EnumerationPlan:
    """Exact assignment count for a design, plus the enumeration budget."""

    design: DesignSpec
    total_assignments: int
    cap: int = DEFAULT_CAP

    @property
    def feasible(self) -> bool:
        return self.total_assignments <= self.cap


def count_assignments(design: DesignSpec, table: PotentialOutcomeTable) -> int:
    """Exact number of assignments, in integer arithmetic."""
    validate_design(design, table)
    if isinstance(design, CompleteRandomization):
        return math.comb(table.n, design.n_t)
    total = 1
    for size, m in zip(table.block_sizes, design.n_tk):
        total *= math.comb(int(size), m)
    return total


def plan_enumeration(
    design: DesignSpec, table: PotentialOutcomeTable, cap: int = DEFAULT_CAP
) -> EnumerationPlan:
    return EnumerationPlan(design=design, total_assignments=count_assignments(design, table), cap=cap)


def iter_assignments(
    table: PotentialOutcomeTable, design: DesignSpec
) -> Iterator[np.ndarray]:
    """Yield every treated mask of the design exactly once.

    Complete randomization walks ``combinations(range(n), n_t)`` in
    lexicographic order. Blocked designs take the product of per-block
    combinations, the last block cycling fastest.
    """
    validate_design(design, table)
    n = table.n
    if isinstance(design, CompleteRandomization):
        for chosen in combinations(range(n), design.n_t):
            mask = np.zeros(n, dtype=bool)
            mask[list(chosen)] = True
            yield mask
        return
    per_block = [
        list(combinations(table.block_indices(k).tolist(), design.n_tk[k - 1]))
        for k in range(1, table.num_blocks + 1)
    ]
    for chosen_per_block in product(*per_block):
        mask = np.zeros(n, dtype=bool)
        for chosen in chosen_per_block:
            mask[list(chosen)] = True
        yield mask


def _stat_tau_hat(table: PotentialOutcomeTable, mask: np.ndarray) -> float:
    # Size-weighted difference in means; identical for both designs because
    # the mask already carries the per-block counts under blocking.
    blocks = np.asarray(table.blocks)
    total = 0.0
    for k in range(1, table.num_blocks + 1):
        idx = np.flatnonzero(blocks == k)
        m = mask[idx]
        total += len(idx) / table.n * (
            float(np.mean(table.y_t[idx][m])) - float(np.mean(table.y_c[idx][~m]))
        )
    return total


def _stat_tau_hat_cr(table: PotentialOutcomeTable, mask: np.ndarray) -> float:
    return float(np.mean(table.y_t[mask]) - np.mean(table.y_c[~mask]))


def _stat_var_est_cr(table: PotentialOutcomeTable, mask: np.ndarray) -> float:
    from .variance_estimation import ObservedSample, var_est_cr

    return var_est_cr(ObservedSample.from_schedule(table, mask))


def _stat_var_est_blocked(table: PotentialOutcomeTable, mask: np.ndarray) -> float:
    from .variance_estimation import ObservedSample, var_est_blocked

    return var_est_blocked(ObservedSample.from_schedule(table, mask))


def resolve_statistic(statistic, design: DesignSpec) -> Statistic:
    """Map a statistic name (or callable) to ``(table, mask) -> float``."""
    if callable(statistic):
        return statistic
    if statistic == "tau_hat":
        if isinstance(design, CompleteRandomization):
            return _stat_tau_hat_cr
        return _stat_tau_hat
    if statistic == "var_est_cr":
        return _stat_var_est_cr
    if statistic == "var_est_blocked":
        return _stat_var_est_blocked
    raise ValueError(f"unknown statistic {statistic!r}")


@dataclass(frozen=True)
class ExactMoments:
    mean: float
    variance: float
    count: int


def exact_moments(
    table: PotentialOutcomeTable,
    design: DesignSpec,
    statistic="tau_hat",
    cap: int = DEFAULT_CAP,
) -> ExactMoments:
    """Exact mean and population variance of a statistic over all assignments.

    The statistic must be defined for every assignment of the design;
    otherwise the offending assignment index is reported. Values are
    accumulated into a preallocated array and reduced with pairwise
    summation, keeping 1e-12 scale comparisons honest at the cap.
    """
    plan = plan_enumeration(design, table, cap=cap)
    if not plan.feasible:
        raise ValueError(
            f"{plan.total_assignments} assignments exceed the enumeration cap {cap}"
        )
    fn = resolve_statistic(statistic, design)
    values = np.empty(plan.total_assignments, dtype=float)
    i = -1
    for i, mask in enumerate(iter_assignments(table, design)):
        try:
            values[i] = fn(table, mask)
        except ValueError as err:
            raise ValueError(f"statistic undefined on assignment #{i}: {err}") from err
    assert i + 1 == plan.total_assignments
    return ExactMoments(
        mean=float(np.mean(values)),
        variance=float(np.var(values)),
        count=plan.total_assignments,
    )
