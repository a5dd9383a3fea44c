"""Finite populations, superpopulation strata, and their summary statistics.

Everything downstream consumes one of two inputs: a
:class:`PotentialOutcomeTable`, the full schedule of treatment and control
outcomes with block labels for a fixed sample, or a :class:`StrataMoments`,
known per-stratum superpopulation means and variances.

Conventions used throughout the package:

* all sample variances use the ``n - 1`` divisor;
* the variance of a single unit is undefined and is carried as ``None``
  (never 0 or NaN), so operations that need it must state the
  ``n_k >= 2`` precondition themselves;
* block labels are canonicalized to dense integers ``1..K`` in order of
  first appearance, keeping joins downstream stable and reproducible.

All real arithmetic is 64-bit floating point; internal identity checks use
the relative tolerance :data:`IDENTITY_RTOL`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

#: Relative tolerance for internal identity checks (mixture identities and
#: decomposition cross-checks).
IDENTITY_RTOL = 1e-9

#: Absolute tolerance for "weights sum to one" style checks.
WEIGHT_ATOL = 1e-12

ARMS = ("t", "c", "tc")


def _float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return arr


def _require_finite(arr: np.ndarray, what: str) -> None:
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"non-finite {what}")


def _frozen_array(values, name: str) -> np.ndarray:
    arr = _float_array(values, name).copy()
    arr.setflags(write=False)
    return arr


def sample_variance(values: np.ndarray) -> float | None:
    """Sample variance with divisor ``len - 1``; ``None`` for a single value."""
    if len(values) < 2:
        return None
    return float(np.var(values, ddof=1))


@dataclass(frozen=True)
class PotentialOutcomeTable:
    """Full schedule of both potential outcomes with dense block labels.

    ``blocks`` must already be canonical (integers ``1..K``, each appearing
    at least once). Use :func:`validate_table` or :func:`table_from_arrays`
    to build a table from raw labels.
    """

    unit_ids: tuple[str, ...]
    blocks: tuple[int, ...]
    y_t: np.ndarray
    y_c: np.ndarray

    def __post_init__(self):
        n = len(self.unit_ids)
        if n == 0:
            raise ValueError("empty table")
        if len(set(self.unit_ids)) != n:
            raise ValueError("duplicate unit_id")
        if len(self.blocks) != n:
            raise ValueError("blocks length mismatch")
        y_t = _frozen_array(self.y_t, "y_t")
        y_c = _frozen_array(self.y_c, "y_c")
        if len(y_t) != n or len(y_c) != n:
            raise ValueError("outcome length mismatch")
        _require_finite(y_t, "outcome")
        _require_finite(y_c, "outcome")
        labels = sorted(set(self.blocks))
        if labels != list(range(1, len(labels) + 1)):
            raise ValueError("block labels must be dense integers 1..K")
        object.__setattr__(self, "y_t", y_t)
        object.__setattr__(self, "y_c", y_c)
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def num_blocks(self) -> int:
        return max(self.blocks)

    @property
    def block_sizes(self) -> np.ndarray:
        return np.bincount(np.asarray(self.blocks), minlength=self.num_blocks + 1)[1:]

    def block_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.blocks) == k)

    @property
    def sate(self) -> float:
        """Average unit-level treatment effect over the table."""
        return float(np.mean(self.y_t - self.y_c))

    def with_blocks(self, labels: Sequence) -> "PotentialOutcomeTable":
        """Same units and outcomes under a new blocking (labels canonicalized)."""
        return table_from_arrays(labels, self.y_t, self.y_c, unit_ids=self.unit_ids)


def _canonical_labels(raw_labels: Sequence) -> tuple[int, ...]:
    mapping: dict = {}
    out = []
    for lab in raw_labels:
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
        out.append(mapping[lab])
    return tuple(out)


def validate_table(records: Iterable[Mapping]) -> PotentialOutcomeTable:
    """Canonicalize raw records into a :class:`PotentialOutcomeTable`.

    Each record needs the keys ``unit_id``, ``block``, ``y_t`` and ``y_c``.
    Blocks are relabeled ``1..K`` in first-appearance order; unit order is
    preserved.
    """
    unit_ids, labels, y_t, y_c = [], [], [], []
    for rec in records:
        unit_ids.append(str(rec["unit_id"]))
        labels.append(rec["block"])
        y_t.append(float(rec["y_t"]))
        y_c.append(float(rec["y_c"]))
    if not unit_ids:
        raise ValueError("empty table")
    return PotentialOutcomeTable(
        unit_ids=tuple(unit_ids),
        blocks=_canonical_labels(labels),
        y_t=np.asarray(y_t, dtype=float),
        y_c=np.asarray(y_c, dtype=float),
    )


def table_from_arrays(blocks, y_t, y_c, unit_ids=None) -> PotentialOutcomeTable:
    """Build a table from parallel arrays, canonicalizing block labels."""
    blocks = list(blocks)
    if unit_ids is None:
        unit_ids = tuple(f"u{i + 1}" for i in range(len(blocks)))
    return PotentialOutcomeTable(
        unit_ids=tuple(str(u) for u in unit_ids),
        blocks=_canonical_labels(blocks),
        y_t=np.asarray(y_t, dtype=float),
        y_c=np.asarray(y_c, dtype=float),
    )


TABLE_CSV_HEADER = ["unit_id", "block", "y_t", "y_c"]


def read_table_csv(path) -> PotentialOutcomeTable:
    """Read ``unit_id,block,y_t,y_c`` rows (UTF-8, '.' decimal point)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.DictReader(_skip_comments(fh))]
    missing = set(TABLE_CSV_HEADER) - (set(rows[0]) if rows else set(TABLE_CSV_HEADER))
    if missing:
        raise ValueError(f"table CSV missing columns: {sorted(missing)}")
    return validate_table(rows)


def write_table_csv(table: PotentialOutcomeTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_CSV_HEADER)
        for uid, b, yt, yc in zip(table.unit_ids, table.blocks, table.y_t, table.y_c):
            writer.writerow([uid, b, repr(float(yt)), repr(float(yc))])


def _skip_comments(lines):
    for line in lines:
        if not line.startswith("#"):
            yield line


# ---------------------------------------------------------------------------
# Designs


@dataclass(frozen=True)
class CompleteRandomization:
    """Assign exactly ``n_t`` of the ``n`` units to treatment."""

    n_t: int

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError("n_t must be positive")


@dataclass(frozen=True)
class Blocked:
    """Independent complete randomizations per block with counts ``n_tk``."""

    n_tk: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "n_tk", tuple(int(m) for m in self.n_tk))
        if any(m < 1 for m in self.n_tk):
            raise ValueError("every n_tk must be positive")

    @property
    def n_t(self) -> int:
        return sum(self.n_tk)


DesignSpec = CompleteRandomization | Blocked


def validate_design(design: DesignSpec, table: PotentialOutcomeTable) -> None:
    """Check the design is feasible for the table (both arms nonempty)."""
    if isinstance(design, CompleteRandomization):
        if not 0 < design.n_t < table.n:
            raise ValueError(f"n_t={design.n_t} out of range for n={table.n}")
        return
    sizes = table.block_sizes
    if len(design.n_tk) != table.num_blocks:
        raise ValueError("design has wrong number of blocks")
    for k, (m, size) in enumerate(zip(design.n_tk, sizes), start=1):
        if not 0 < m < size:
            raise ValueError(f"n_tk={m} out of range for block {k} (size {size})")


def blocked_design_for_proportion(table: PotentialOutcomeTable, p: float) -> Blocked:
    """Blocked design treating the fraction ``p`` of every block.

    Rejects any block where ``p * n_k`` is not an integer; silently rounding
    would change the design being analyzed.
    """
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    counts = []
    for k, size in enumerate(table.block_sizes, start=1):
        m = p * size
        if abs(m - round(m)) > 1e-9 * max(1.0, size):
            raise ValueError(f"p*n_k is not an integer for block {k} (p={p}, n_k={size})")
        counts.append(int(round(m)))
    design = Blocked(tuple(counts))
    validate_design(design, table)
    return design


def equal_proportions(design: Blocked, table: PotentialOutcomeTable) -> bool:
    """True when every block treats the same fraction (exact integer check)."""
    sizes = table.block_sizes
    m0, s0 = design.n_tk[0], int(sizes[0])
    return all(m * s0 == m0 * int(s) for m, s in zip(design.n_tk, sizes))


# ---------------------------------------------------------------------------
# Summaries


@dataclass(frozen=True)
class BlockSummary:
    """Means, block effect, and sample variances for one group of units."""

    size: int
    mean_t: float
    mean_c: float
    tau: float
    s2_t: float | None
    s2_c: float | None
    s2_tc: float | None


@dataclass(frozen=True)
class TableSummary:
    per_block: tuple[BlockSummary, ...]
    pooled: BlockSummary

    def require_s2(self) -> None:
        if any(b.s2_t is None for b in self.per_block):
            bad = [i + 1 for i, b in enumerate(self.per_block) if b.s2_t is None]
            raise ValueError(f"singleton block(s) {bad}: sample variance undefined")


def _summarize_group(y_t: np.ndarray, y_c: np.ndarray) -> BlockSummary:
    mean_t = float(np.mean(y_t))
    mean_c = float(np.mean(y_c))
    return BlockSummary(
        size=len(y_t),
        mean_t=mean_t,
        mean_c=mean_c,
        tau=mean_t - mean_c,
        s2_t=sample_variance(y_t),
        s2_c=sample_variance(y_c),
        s2_tc=sample_variance(y_t - y_c),
    )


def summarize(table: PotentialOutcomeTable) -> TableSummary:
    """Per-block and pooled means, effects, and sample variances."""
    per_block = []
    for k in range(1, table.num_blocks + 1):
        idx = table.block_indices(k)
        per_block.append(_summarize_group(table.y_t[idx], table.y_c[idx]))
    pooled = _summarize_group(table.y_t, table.y_c)
    return TableSummary(per_block=tuple(per_block), pooled=pooled)


class PooledDecomposition(NamedTuple):
    within: float
    between: float


def pooled_decomposition(table: PotentialOutcomeTable, arm: str) -> PooledDecomposition:
    """Split a pooled sample variance into within- and between-block parts.

    For arm ``z`` (one of ``t``, ``c``, ``tc``) with pooled sample variance
    ``S2``, the parts are::

        within  = sum_k (n_k - 1)/(n - 1) * S2_k
        between = sum_k  n_k     /(n - 1) * (mean_k - mean)^2

    and ``within + between == S2`` exactly. Requires ``n_k >= 2`` everywhere.
    """
    if arm not in ARMS:
        raise ValueError(f"arm must be one of {ARMS}")
    if arm == "t":
        values = table.y_t
    elif arm == "c":
        values = table.y_c
    else:
        values = table.y_t - table.y_c
    n = table.n
    if n < 2:
        raise ValueError("decomposition needs n >= 2")
    grand = float(np.mean(values))
    within = 0.0
    between = 0.0
    for k in range(1, table.num_blocks + 1):
        idx = table.block_indices(k)
        if len(idx) < 2:
            raise ValueError(f"singleton block {k}: decomposition undefined")
        group = values[idx]
        within += (len(idx) - 1) / (n - 1) * float(np.var(group, ddof=1))
        between += len(idx) / (n - 1) * (float(np.mean(group)) - grand) ** 2
    return PooledDecomposition(within=within, between=between)


# ---------------------------------------------------------------------------
# Superpopulation strata


@dataclass(frozen=True)
class PooledMoments:
    mu_t: float
    mu_c: float
    sigma2_t: float
    sigma2_c: float
    sigma2_tc: float


@dataclass(frozen=True)
class StrataMoments:
    """Per-stratum superpopulation means and variances with weights.

    Weights are stratum shares ``n_k / n`` and must sum to one. Pooled
    moments, when supplied, must satisfy the mixture identities

        pooled mean     = sum_k w_k mu_k
        pooled variance = sum_k w_k sigma2_k + sum_k w_k (mu_k - mean)^2

    to relative tolerance :data:`IDENTITY_RTOL`. Use
    :meth:`with_derived_pooled` to fill them in by construction.
    """

    weights: np.ndarray
    mu_t: np.ndarray
    mu_c: np.ndarray
    sigma2_t: np.ndarray
    sigma2_c: np.ndarray
    sigma2_tc: np.ndarray
    pooled: PooledMoments | None = None

    def __post_init__(self):
        fields = ["weights", "mu_t", "mu_c", "sigma2_t", "sigma2_c", "sigma2_tc"]
        arrays = {}
        for name in fields:
            arr = _frozen_array(getattr(self, name), name)
            _require_finite(arr, name)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        k = len(arrays["weights"])
        if k == 0:
            raise ValueError("need at least one stratum")
        if any(len(arrays[name]) != k for name in fields):
            raise ValueError("stratum arrays must share one length")
        if np.any(arrays["weights"] <= 0):
            raise ValueError("weights must be positive")
        if abs(float(arrays["weights"].sum()) - 1.0) > WEIGHT_ATOL:
            raise ValueError("weights must sum to 1")
        for name in ("sigma2_t", "sigma2_c", "sigma2_tc"):
            if np.any(arrays[name] < 0):
                raise ValueError(f"{name} must be nonnegative")
        if self.pooled is not None:
            self._check_pooled(self.pooled)

    @property
    def num_strata(self) -> int:
        return len(self.weights)

    @property
    def tau_k(self) -> np.ndarray:
        return self.mu_t - self.mu_c

    def _mixture_pooled(self) -> PooledMoments:
        w = self.weights
        mu_t = float(w @ self.mu_t)
        mu_c = float(w @ self.mu_c)
        tau = mu_t - mu_c
        return PooledMoments(
            mu_t=mu_t,
            mu_c=mu_c,
            sigma2_t=float(w @ self.sigma2_t + w @ (self.mu_t - mu_t) ** 2),
            sigma2_c=float(w @ self.sigma2_c + w @ (self.mu_c - mu_c) ** 2),
            sigma2_tc=float(w @ self.sigma2_tc + w @ (self.tau_k - tau) ** 2),
        )

    def _check_pooled(self, pooled: PooledMoments) -> None:
        ref = self._mixture_pooled()
        for name in ("mu_t", "mu_c", "sigma2_t", "sigma2_c", "sigma2_tc"):
            got = getattr(pooled, name)
            want = getattr(ref, name)
            if abs(got - want) > IDENTITY_RTOL * max(1.0, abs(want)):
                raise ValueError(
                    f"pooled {name}={got} violates the mixture identity (expected {want})"
                )

    def with_derived_pooled(self) -> "StrataMoments":
        """Copy with pooled moments derived from the mixture identities."""
        return StrataMoments(
            weights=self.weights,
            mu_t=self.mu_t,
            mu_c=self.mu_c,
            sigma2_t=self.sigma2_t,
            sigma2_c=self.sigma2_c,
            sigma2_tc=self.sigma2_tc,
            pooled=self._mixture_pooled(),
        )

    def require_pooled(self) -> PooledMoments:
        if self.pooled is None:
            raise ValueError("pooled moments missing; call with_derived_pooled()")
        return self.pooled


STRATA_CSV_HEADER = [
    "stratum",
    "weight",
    "mu_t",
    "mu_c",
    "sigma2_t",
    "sigma2_c",
    "sigma2_tc",
]


def read_strata_csv(path) -> StrataMoments:
    """Read ``stratum,weight,mu_t,mu_c,sigma2_t,sigma2_c,sigma2_tc`` rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(_skip_comments(fh)))
    if not rows:
        raise ValueError("empty strata CSV")
    missing = set(STRATA_CSV_HEADER) - set(rows[0])
    if missing:
        raise ValueError(f"strata CSV missing columns: {sorted(missing)}")
    cols = {name: [float(r[name]) for r in rows] for name in STRATA_CSV_HEADER[1:]}
    return StrataMoments(
        weights=cols["weight"],
        mu_t=cols["mu_t"],
        mu_c=cols["mu_c"],
        sigma2_t=cols["sigma2_t"],
        sigma2_c=cols["sigma2_c"],
        sigma2_tc=cols["sigma2_tc"],
    )
