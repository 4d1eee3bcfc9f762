"""Box-budget active learning selection engine for 3D-detection pools."""

__version__ = "0.1.0"

from .config import Strategy, StrategyConfig
from .records import BoxPrediction, PoolRecord, SelectionRound, parse_pool, write_selection

__all__ = [
    "BoxPrediction",
    "PoolRecord",
    "SelectionRound",
    "Strategy",
    "StrategyConfig",
    "parse_pool",
    "write_selection",
    "__version__",
]
