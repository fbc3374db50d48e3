"""Celebrity/spammer scoring on directed social graphs.

The main entry points are re-exported here; see the submodules for the rest.
"""
__version__ = "0.1.0"

from .core import (IterationConfig, ScoreState, celebrity_update, default_transfers,
                   is_eps_fixed_point, iterate, potential, spammer_update)
from .graph import (ArcSet, DirectedGraph, degree_stats, load_edge_list, summary,
                    unreciprocated)
from .transfer import Logistic, NormalCDF, TransferFunction

__all__ = [
    "ArcSet", "DirectedGraph", "IterationConfig", "Logistic", "NormalCDF", "ScoreState",
    "TransferFunction", "celebrity_update", "default_transfers", "degree_stats",
    "is_eps_fixed_point", "iterate", "load_edge_list", "potential", "spammer_update",
    "summary", "unreciprocated",
]
