"""The three canonical simulation studies, exposed to the CLI.

Every study is deterministic given (config, seed): grid points and
replications draw from generators derived via ``SeedSequence(seed,
spawn_key=...)``, and partial results are reduced in a fixed order, so the
worker count never changes the output.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import mc
from .blocking_lab import (
    ScenarioConfig,
    gen_scenario_population,
    gen_xy_population,
    make_blocks_flex,
    make_blocks_interleave,
    make_blocks_peevish,
    r2_blocks,
    within_variance_ratio,
)
from .pop_model import Blocked, CompleteRandomization, summarize
from .variance_estimation import cr_varest_bias_under_blocking, varest_variability
from .variance_theory import neyman_var_blocked, neyman_var_cr

METHODS = ("flex", "interleave", "peevish")

#: Spread scales swept by the ratio study; larger scale separates the blocks
#: more, pushing the block-predictiveness measure toward 1.
DEFAULT_SCALES = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0)


def _child_seed(master_seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=master_seed, spawn_key=key).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Ratio sweep


@dataclass(frozen=True)
class RatioSweepConfig:
    """Finite-sample variance-ratio sweep over block separation settings.

    Eight blocks of sizes 10/15/20 (115 units, 23 treated). The equal
    proportion arm treats 20% in every block; the unequal arm perturbs the
    per-block proportions around 20% (more disparate in smaller blocks,
    because counts are integers) while keeping 23 treated overall so the
    completely randomized comparison is the same in both arms.
    """

    block_sizes: tuple[int, ...] = (10, 10, 10, 15, 15, 15, 20, 20)
    treated_equal: tuple[int, ...] = (2, 2, 2, 3, 3, 3, 4, 4)
    treated_unequal: tuple[int, ...] = (1, 3, 3, 2, 4, 2, 3, 5)
    spread_scales: tuple[float, ...] = DEFAULT_SCALES
    effect_spread_factor: float = 0.5
    rhos: tuple[float, ...] = (0.0, 0.5, 1.0)
    base_sigma: float = 1.0

    def __post_init__(self):
        if sum(self.treated_equal) != sum(self.treated_unequal):
            raise ValueError("both treatment arms must treat the same total")


RATIO_SWEEP_COLUMNS = [
    "spread_scale",
    "rho",
    "r2",
    "var_cr",
    "var_bk_equal_p",
    "var_bk_unequal_p",
    "ratio_equal_p",
    "ratio_unequal_p",
]


def _scenario(cfg, scale: float, rho: float, seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        block_sizes=cfg.block_sizes,
        treated_counts=cfg.treated_equal,
        control_mean_spread=scale,
        effect_spread=cfg.effect_spread_factor * scale,
        rho=rho,
        base_sigma=cfg.base_sigma,
        seed=seed,
    )


def _ratio_sweep_point(args) -> dict:
    cfg, master_seed, index, scale, rho = args
    table = gen_scenario_population(_scenario(cfg, scale, rho, _child_seed(master_seed, index)))
    n_t = sum(cfg.treated_equal)
    var_cr = neyman_var_cr(table, n_t)
    var_bk_eq = neyman_var_blocked(table, Blocked(cfg.treated_equal))
    var_bk_uneq = neyman_var_blocked(table, Blocked(cfg.treated_unequal))
    return {
        "spread_scale": scale,
        "rho": rho,
        "r2": r2_blocks(table),
        "var_cr": var_cr,
        "var_bk_equal_p": var_bk_eq,
        "var_bk_unequal_p": var_bk_uneq,
        "ratio_equal_p": var_bk_eq / var_cr,
        "ratio_unequal_p": var_bk_uneq / var_cr,
    }


def study_ratio_sweep(
    config: RatioSweepConfig | None = None, seed: int = 0, threads: int = 1
) -> list[dict]:
    cfg = config or RatioSweepConfig()
    grid = [
        (cfg, seed, i, scale, rho)
        for i, (scale, rho) in enumerate(
            (s, r) for s in cfg.spread_scales for r in cfg.rhos
        )
    ]
    return mc.map_ordered(_ratio_sweep_point, grid, threads=threads)


# ---------------------------------------------------------------------------
# Flexible blocking


@dataclass(frozen=True)
class FlexBlockingConfig:
    """Blocking-method comparison under three covariate-outcome relationships.

    Half the units are treated; every method forms blocks from the same
    integer covariate cycling 1..16. Outcomes carry a strict zero treatment
    effect so design variances compare cleanly.
    """

    n: int = 64
    block_size: int = 8
    interleave_blocks: int = 8
    noise_sigma: float = 1.0
    dgps: tuple[str, ...] = ("linear", "indep", "odd")
    methods: tuple[str, ...] = METHODS

    def __post_init__(self):
        if self.n % 16:
            raise ValueError("n must be a multiple of 16")
        if self.n % self.block_size:
            raise ValueError("block_size must divide n")
        if self.block_size % 2:
            raise ValueError("block_size must be even")


FLEX_BLOCKING_COLUMNS = [
    "method",
    "dgp",
    "rel_se_pct",
    "x_within_over_total_pct",
    "y_within_over_total_pct",
    "reps",
]


def _method_labels(cfg: FlexBlockingConfig) -> dict[str, np.ndarray]:
    # The covariate is deterministic, so each method's labels are fixed
    # across replications.
    sample, _ = gen_xy_population("indep", cfg.n, cfg.noise_sigma, np.random.default_rng(0))
    out = {}
    for method in cfg.methods:
        if method == "flex":
            out[method] = make_blocks_flex(sample, cfg.block_size)
        elif method == "interleave":
            out[method] = make_blocks_interleave(sample, cfg.interleave_blocks)
        elif method == "peevish":
            out[method] = make_blocks_peevish(sample, cfg.block_size)
        else:
            raise ValueError(f"unknown blocking method {method!r}")
    return out


def _flex_blocking_chunk(args) -> dict:
    cfg, master_seed, lo, hi = args
    labels = _method_labels(cfg)
    n_t = cfg.n // 2
    sums = {
        "var_cr": {dgp: 0.0 for dgp in cfg.dgps},
        "var_bk": {(m, d): 0.0 for m in cfg.methods for d in cfg.dgps},
        "y_ratio": {(m, d): 0.0 for m in cfg.methods for d in cfg.dgps},
    }
    for r in range(lo, hi):
        rng = mc.rep_rng(master_seed, r)
        for dgp in cfg.dgps:
            _, table = gen_xy_population(dgp, cfg.n, cfg.noise_sigma, rng)
            sums["var_cr"][dgp] += neyman_var_cr(table, n_t)
            for method in cfg.methods:
                blocked_table = table.with_blocks(labels[method])
                design = Blocked(tuple(int(s) // 2 for s in blocked_table.block_sizes))
                sums["var_bk"][(method, dgp)] += neyman_var_blocked(blocked_table, design)
                sums["y_ratio"][(method, dgp)] += within_variance_ratio(
                    table.y_c, labels[method]
                )
    return sums


def study_flexible_blocking(
    config: FlexBlockingConfig | None = None,
    seed: int = 0,
    reps: int = 10_000,
    threads: int = 1,
) -> list[dict]:
    cfg = config or FlexBlockingConfig()
    chunks = [(cfg, seed, lo, hi) for lo, hi in mc.chunk_bounds(reps)]
    partials = mc.map_ordered(_flex_blocking_chunk, chunks, threads=threads)
    totals = partials[0]
    for part in partials[1:]:
        for group in totals:
            for key in totals[group]:
                totals[group][key] += part[group][key]
    labels = _method_labels(cfg)
    sample, _ = gen_xy_population("indep", cfg.n, cfg.noise_sigma, np.random.default_rng(0))
    rows = []
    for method in cfg.methods:
        x_ratio = within_variance_ratio(sample.x, labels[method])
        for dgp in cfg.dgps:
            rows.append(
                {
                    "method": method,
                    "dgp": dgp,
                    "rel_se_pct": 100.0
                    * float(
                        np.sqrt(totals["var_bk"][(method, dgp)] / totals["var_cr"][dgp])
                    ),
                    "x_within_over_total_pct": 100.0 * x_ratio,
                    "y_within_over_total_pct": 100.0
                    * totals["y_ratio"][(method, dgp)]
                    / reps,
                    "reps": reps,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Misconceptions


@dataclass(frozen=True)
class MisconceptionsConfig:
    """Variance-estimator behavior across the same population grid.

    Equal proportions only. For each population the expectations of both
    variance estimators under the blocked design come from closed forms;
    the variability of each estimator under its own design is simulated.
    """

    block_sizes: tuple[int, ...] = (10, 10, 10, 15, 15, 15, 20, 20)
    treated_counts: tuple[int, ...] = (2, 2, 2, 3, 3, 3, 4, 4)
    spread_scales: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0, 2.0, 3.0)
    effect_spread_factor: float = 0.5
    rhos: tuple[float, ...] = (0.0, 0.5, 1.0)
    base_sigma: float = 1.0


MISCONCEPTIONS_COLUMNS = [
    "spread_scale",
    "rho",
    "r2",
    "var_bk",
    "expected_varest_cr_over_var_bk",
    "expected_varest_bk_over_var_bk",
    "var_varest_cr",
    "var_varest_bk",
    "var_varest_cr_over_bk",
    "reps",
]


def _misconceptions_point(args) -> dict:
    cfg, master_seed, index, scale, rho, reps = args
    scenario = ScenarioConfig(
        block_sizes=cfg.block_sizes,
        treated_counts=cfg.treated_counts,
        control_mean_spread=scale,
        effect_spread=cfg.effect_spread_factor * scale,
        rho=rho,
        base_sigma=cfg.base_sigma,
        seed=_child_seed(master_seed, index, 0),
    )
    table = gen_scenario_population(scenario)
    design = Blocked(cfg.treated_counts)
    n = table.n
    n_t = design.n_t
    p = n_t / n
    var_bk = neyman_var_blocked(table, design)
    misuse = cr_varest_bias_under_blocking(table, p)
    # The blocked estimator's own conservatism: sum_k (n_k/n)^2 S2_tck / n_k.
    summary = summarize(table)
    bk_bias = sum(
        (blk.size / n) ** 2 * blk.s2_tc / blk.size for blk in summary.per_block
    )
    var_cr_est = varest_variability(
        table, CompleteRandomization(n_t), reps=reps, seed=_child_seed(master_seed, index, 1)
    )
    var_bk_est = varest_variability(
        table, design, reps=reps, seed=_child_seed(master_seed, index, 2)
    )
    return {
        "spread_scale": scale,
        "rho": rho,
        "r2": r2_blocks(table),
        "var_bk": var_bk,
        "expected_varest_cr_over_var_bk": misuse.expected_varest_cr / var_bk,
        "expected_varest_bk_over_var_bk": (var_bk + bk_bias) / var_bk,
        "var_varest_cr": var_cr_est.var_of_varest,
        "var_varest_bk": var_bk_est.var_of_varest,
        "var_varest_cr_over_bk": var_cr_est.var_of_varest / var_bk_est.var_of_varest,
        "reps": reps,
    }


def study_misconceptions(
    config: MisconceptionsConfig | None = None,
    seed: int = 0,
    reps: int = 5_000,
    threads: int = 1,
) -> list[dict]:
    cfg = config or MisconceptionsConfig()
    grid = [
        (cfg, seed, i, scale, rho, reps)
        for i, (scale, rho) in enumerate(
            (s, r) for s in cfg.spread_scales for r in cfg.rhos
        )
    ]
    return mc.map_ordered(_misconceptions_point, grid, threads=threads)


STUDIES = {
    "ratio-sweep": (RatioSweepConfig, RATIO_SWEEP_COLUMNS),
    "flexible-blocking": (FlexBlockingConfig, FLEX_BLOCKING_COLUMNS),
    "misconceptions": (MisconceptionsConfig, MISCONCEPTIONS_COLUMNS),
}


def config_from_dict(name: str, overrides: dict | None):
    """Build a study config, replacing defaults with JSON-sourced fields."""
    cls, _ = STUDIES[name]
    cfg = cls()
    if not overrides:
        return cfg
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - fields
    if unknown:
        raise ValueError(f"unknown config fields for {name}: {sorted(unknown)}")
    cleaned = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in overrides.items()
    }
    return dataclasses.replace(cfg, **cleaned)


def run_study(
    name: str,
    config_overrides: dict | None = None,
    seed: int = 0,
    reps: int | None = None,
    threads: int = 1,
) -> tuple[list[dict], list[str], dict]:
    """Run a named study; returns (rows, column order, resolved config dict)."""
    if name not in STUDIES:
        raise ValueError(f"unknown study {name!r}; choose from {sorted(STUDIES)}")
    cfg = config_from_dict(name, config_overrides)
    _, columns = STUDIES[name]
    if name == "ratio-sweep":
        rows = study_ratio_sweep(cfg, seed=seed, threads=threads)
    elif name == "flexible-blocking":
        rows = study_flexible_blocking(
            cfg, seed=seed, reps=reps or 10_000, threads=threads
        )
    else:
        rows = study_misconceptions(cfg, seed=seed, reps=reps or 5_000, threads=threads)
    return rows, columns, dataclasses.asdict(cfg)
