"""Gradient-descent matrix factorization for completion: dynamics, landscape and oracles."""
from .dynamics import FactorPair, TrainConfig, Trajectory, TrainingDivergence, himt_check, train
from .landscape import classify_critical_point, escape_direction, hessian, saddle_spectrum
from .linalg import RankPolicy, nuclear_norm, numerical_rank, svd
from .observation import (ConnectivityClass, IncompleteMatrix, ObservationError, classify_connectivity,
                          enumerate_pattern_classes, load_matrix, parse_matrix_text)
from .oracles import glrl, min_nuclear_norm_general, min_rank_search, nuclear_norm_oracle
from .protocols import census, init_scale_sweep, reproduce_fig1, run_scenario
from .scenarios import SCENARIOS, generate_random_instance, get_scenario

__version__ = "0.1.0"
