"""Selection-time growth benchmark across pool sizes.

Pools are generated outside the timed region; only the selection call is
timed, with the minimum of several repeats taken per size to damp scheduler
noise. The growth exponent is the least-squares slope of log(time) against
log(n).
"""

from __future__ import annotations

import time

import numpy as np

from .config import Strategy, StrategyConfig
from .errors import ConfigError
from .selection import select_round
from .synthetic import default_scene_spec, generate_pool

BENCH_HEADER = "n,strategy,seconds"


def bench_strategy(
    sizes: list[int],
    strategy: Strategy,
    seed: int,
    nr: int = 10,
    num_classes: int = 3,
    repeats: int = 3,
) -> list[dict]:
    """Best-of-repeats selection wall time for each pool size."""
    if any(s < nr for s in sizes):
        raise ConfigError(f"every size must be >= nr={nr}, got {sizes}")
    spec = default_scene_spec(num_classes)
    rows = []
    for n in sizes:
        cfg = StrategyConfig(
            num_classes=num_classes,
            k1=min(2 * nr, n),
            k2=nr,
            nr=nr,
            seed=seed,
            strategy=strategy,
        )
        _, records = generate_pool(n, spec, seed, cfg)
        best = float("inf")
        for rep in range(repeats):
            rng = np.random.default_rng(seed + rep)
            t0 = time.perf_counter()
            select_round(records, cfg, rng=rng)
            best = min(best, time.perf_counter() - t0)
        rows.append({"n": n, "strategy": strategy.value, "seconds": best})
    return rows


def fit_growth_exponent(rows: list[dict]) -> float:
    """Slope of log(seconds) vs log(n) by least squares."""
    if len(rows) < 2:
        raise ConfigError("growth fit needs at least two sizes")
    x = np.log([row["n"] for row in rows])
    y = np.log([max(row["seconds"], 1e-9) for row in rows])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def bench_csv_text(rows: list[dict]) -> str:
    lines = [BENCH_HEADER]
    for row in rows:
        lines.append(f"{row['n']},{row['strategy']},{row['seconds']!r}")
    return "\n".join(lines) + "\n"
