"""Decomposition-aware top-N recommendation.

The item space is treated as a family of overlapping blocks (genres,
categories, ...).  Expressed opinions propagate through the blocks two
ways: a low-rank perturbation of the rating matrix feeds a truncated SVD
that ranks items for established users, and an item-space Markov chain
mixing direct co-rating proximity with block proximity ranks items for
users too new to project reliably.  Five dense graph baselines and the
standard / long-tail / new-user evaluation protocols round out the
package.
"""

from .coldstart import (ColdStartBatch, ColdStartConfig, CoverageReport,
                        coldstart_stationary, verify_coverage)
from .datasets import (Decomposition, RatingsDataset,
                       decomposition_from_blocks, load_decomposition,
                       load_ratings, preference_matrix, preference_vector)
from .engine import (EngineConfig, GOperator, LanczosState, SvdFactors,
                     apply_G, apply_Gt, compute_svd, operator_for,
                     partial_lbd, recommend_main, restarted_svd)
from .errors import (ConvergenceError, CoverError, DataError,
                     DisconnectedGraphError, ModelAssumptionError,
                     NcdrecError, ParameterError, ParseError, SizeGuardError)
from .matrices import (BlockCouplingGraph, DirectProximity, NcdFactors,
                       build_coupling_graph, build_direct_proximity,
                       build_factors, is_connected)
from .model import NcdrecModel, build_model, load_model, save_model
from .ranking import RankingList

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
