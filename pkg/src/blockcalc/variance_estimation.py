"""Standard variance estimators and their exact expectations under blocking.

The completely randomized estimator ``s2_c/n_c + s2_t/n_t`` is conservative
in the finite sample (bias ``S2_tc/n``) when the experiment really was
completely randomized. Applying it to a blocked experiment is a different
story: its expectation has a closed form whose bias against the true blocked
variance can be negative, i.e. ignoring the blocking can be anti-conservative.
Under stratified sampling the same misuse is always conservative.

The blocked estimator here requires at least two treated and two control
units per block. Estimators for singleton arms exist in the literature on
blocked variance estimation but are out of scope; callers get an explicit
error naming the offending block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mc
from .oracle import count_assignments, iter_assignments
from .pop_model import (
    Blocked,
    CompleteRandomization,
    DesignSpec,
    PotentialOutcomeTable,
    StrataMoments,
    blocked_design_for_proportion,
    equal_proportions,
    summarize,
    validate_design,
)
from .randomizer import assign_blocked, assign_cr

#: Exact enumeration replaces Monte Carlo below this many assignments.
EXACT_ENUMERATION_LIMIT = 1_000_000


@dataclass(frozen=True)
class ObservedSample:
    """What the analyst sees: block label, arm, and observed outcome per unit."""

    blocks: tuple[int, ...]
    z: tuple[str, ...]
    y_obs: np.ndarray

    def __post_init__(self):
        if not len(self.blocks) == len(self.z) == len(self.y_obs):
            raise ValueError("fields must share one length")
        if any(v not in ("t", "c") for v in self.z):
            raise ValueError("z entries must be 't' or 'c'")
        arr = np.asarray(self.y_obs, dtype=float).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "y_obs", arr)

    @classmethod
    def from_schedule(
        cls, table: PotentialOutcomeTable, treated_mask: np.ndarray
    ) -> "ObservedSample":
        y_obs = np.where(treated_mask, table.y_t, table.y_c)
        z = tuple("t" if m else "c" for m in treated_mask)
        return cls(blocks=table.blocks, z=z, y_obs=y_obs)

    def arm_values(self, z: str) -> np.ndarray:
        mask = np.asarray([v == z for v in self.z])
        return self.y_obs[mask]

    @property
    def num_blocks(self) -> int:
        return max(self.blocks)


def var_est_cr(obs: ObservedSample) -> float:
    """Standard variance estimate for complete randomization:
    ``s2_c/n_c + s2_t/n_t`` with sample variances per arm."""
    treated = obs.arm_values("t")
    control = obs.arm_values("c")
    if len(treated) < 2 or len(control) < 2:
        raise ValueError("each arm needs at least 2 units")
    return float(np.var(control, ddof=1)) / len(control) + float(
        np.var(treated, ddof=1)
    ) / len(treated)


def var_est_blocked(obs: ObservedSample) -> float:
    """Blocked variance estimate ``sum_k (n_k/n)^2 (s2_ck/n_ck + s2_tk/n_tk)``.

    Raises if any block has fewer than two units in either arm.
    """
    blocks = np.asarray(obs.blocks)
    n = len(blocks)
    total = 0.0
    for k in range(1, obs.num_blocks + 1):
        idx = np.flatnonzero(blocks == k)
        z = np.asarray([obs.z[i] == "t" for i in idx])
        treated = obs.y_obs[idx][z]
        control = obs.y_obs[idx][~z]
        if len(treated) < 2 or len(control) < 2:
            raise ValueError(
                f"block {k} has a singleton arm; the blocked variance estimator "
                "needs at least 2 treated and 2 control units per block"
            )
        total += (len(idx) / n) ** 2 * (
            float(np.var(control, ddof=1)) / len(control)
            + float(np.var(treated, ddof=1)) / len(treated)
        )
    return total


def _require_equal_proportions(table: PotentialOutcomeTable, design: Blocked) -> float:
    validate_design(design, table)
    if not equal_proportions(design, table):
        raise ValueError("this expectation requires an equal treated proportion in every block")
    return design.n_t / table.n


def expected_s2_under_blocking(
    table: PotentialOutcomeTable, arm: str, design: Blocked
) -> float:
    """Exact expectation of an arm's sample variance under blocked assignment.

    With equal proportions, arm-z assignment probability ``p_z`` and arm size
    ``n_z``::

        E[s2_z] = sum_k (n_k/n - p_z (n - n_k) / (n (n_z - 1))) S2_zk
                + 1/(n_z - 1) * sum_k n_zk (mean_zk - mean_z)^2

    For a single block this collapses to ``S2_z`` (the estimator is unbiased
    within one block).
    """
    if arm not in ("t", "c"):
        raise ValueError("arm must be 't' or 'c'")
    _require_equal_proportions(table, design)
    n = table.n
    n_z = design.n_t if arm == "t" else n - design.n_t
    p_z = n_z / n
    if n_z < 2:
        raise ValueError("arm size must be at least 2")
    summary = summarize(table)
    summary.require_s2()
    pooled_mean = summary.pooled.mean_t if arm == "t" else summary.pooled.mean_c
    total = 0.0
    for k, blk in enumerate(summary.per_block, start=1):
        s2_zk = blk.s2_t if arm == "t" else blk.s2_c
        mean_zk = blk.mean_t if arm == "t" else blk.mean_c
        n_zk = design.n_tk[k - 1] if arm == "t" else blk.size - design.n_tk[k - 1]
        total += (blk.size / n - p_z * (n - blk.size) / (n * (n_z - 1))) * s2_zk
        total += n_zk * (mean_zk - pooled_mean) ** 2 / (n_z - 1)
    return total


@dataclass(frozen=True)
class CrEstimatorUnderBlocking:
    """Expectation of the complete-randomization variance estimator when the
    experiment was actually blocked, against the true blocked variance."""

    expected_varest_cr: float
    true_var_bk: float
    bias: float


def cr_varest_bias_under_blocking(
    table: PotentialOutcomeTable, p: float
) -> CrEstimatorUnderBlocking:
    """Closed-form bias of the misapplied estimator in the finite sample.

    ``bias = E[varest_cr | blocked design] - var(tau_hat_bk)`` equals::

        1/(n_c - 1) sum_k w_k (mean_ck - mean_c)^2
      + 1/(n_t - 1) sum_k w_k (mean_tk - mean_t)^2
      - [ sum_k (n - n_k) S2_ck / (n^2 (n_c - 1))
        + sum_k (n - n_k) S2_tk / (n^2 (n_t - 1))
        - sum_k n_k S2_tck / n^2 ]

    which can be negative: between-block spread pushes it up, within-block
    spread pulls it down. The sign is exact for any correlation of the
    potential outcomes. With one block it collapses to ``S2_tc/n``, the
    classical conservatism of the estimator under its own design.
    """
    from .variance_theory import neyman_var_blocked

    design = blocked_design_for_proportion(table, p)
    n = table.n
    n_t = design.n_t
    n_c = n - n_t
    if n_t < 2 or n_c < 2:
        raise ValueError("both arms need at least 2 units")
    summary = summarize(table)
    summary.require_s2()
    pooled = summary.pooled
    bias = 0.0
    for blk in summary.per_block:
        w = blk.size / n
        bias += w * (blk.mean_c - pooled.mean_c) ** 2 / (n_c - 1)
        bias += w * (blk.mean_t - pooled.mean_t) ** 2 / (n_t - 1)
        bias -= (n - blk.size) * blk.s2_c / (n**2 * (n_c - 1))
        bias -= (n - blk.size) * blk.s2_t / (n**2 * (n_t - 1))
        bias += blk.size * blk.s2_tc / n**2
    true_var_bk = neyman_var_blocked(table, design)
    return CrEstimatorUnderBlocking(
        expected_varest_cr=true_var_bk + bias,
        true_var_bk=true_var_bk,
        bias=bias,
    )


def cr_varest_bias_strat(moments: StrataMoments, n: int, p: float) -> float:
    """Bias of the misapplied estimator under stratified sampling.

    ``1/(n_c-1) sum w_k (mu_ck - mu_c)^2 + 1/(n_t-1) sum w_k (mu_tk - mu_t)^2``,
    a sum of squares: the misuse is never anti-conservative here.
    """
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    n_t = p * n
    if abs(n_t - round(n_t)) > 1e-9 * n:
        raise ValueError("p*n must be an integer")
    n_t = round(n_t)
    n_c = n - n_t
    if n_t < 2 or n_c < 2:
        raise ValueError("both arms need at least 2 units")
    pooled = moments._mixture_pooled()
    w = moments.weights
    return float(w @ (moments.mu_c - pooled.mu_c) ** 2) / (n_c - 1) + float(
        w @ (moments.mu_t - pooled.mu_t) ** 2
    ) / (n_t - 1)


@dataclass(frozen=True)
class VarestVariability:
    mean_varest: float
    var_of_varest: float
    method: str
    reps_used: int


def varest_variability(
    table: PotentialOutcomeTable,
    design: DesignSpec,
    reps: int = 5_000,
    seed: int = 0,
    exact_limit: int = EXACT_ENUMERATION_LIMIT,
) -> VarestVariability:
    """Mean and variance of the design's own variance estimator.

    Uses the estimator matching the design (arm-pooled for complete
    randomization, per-block for blocking). All assignments are enumerated
    exactly when their count is at most ``exact_limit``; otherwise ``reps``
    seeded assignments are drawn and the sample variance is reported.
    """
    validate_design(design, table)
    blocked = isinstance(design, Blocked)

    def estimate(mask: np.ndarray) -> float:
        obs = ObservedSample.from_schedule(table, mask)
        return var_est_blocked(obs) if blocked else var_est_cr(obs)

    total = count_assignments(design, table)
    if total <= exact_limit:
        values = np.empty(total)
        for i, mask in enumerate(iter_assignments(table, design)):
            values[i] = estimate(mask)
        return VarestVariability(
            mean_varest=float(np.mean(values)),
            var_of_varest=float(np.var(values)),
            method="enumeration",
            reps_used=total,
        )
    values = np.empty(reps)
    for r in range(reps):
        rng = mc.rep_rng(seed, r)
        if blocked:
            assignment = assign_blocked(table, design, rng)
        else:
            assignment = assign_cr(table.n, design.n_t, rng)
        values[r] = estimate(assignment.treated_mask())
    return VarestVariability(
        mean_varest=float(np.mean(values)),
        var_of_varest=float(np.var(values, ddof=1)),
        method="monte_carlo",
        reps_used=reps,
    )
