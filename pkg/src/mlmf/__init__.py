"""Multi-layer matrix factorization for multi-omics clustering with
incomplete views."""

__version__ = "0.1.0"

from .data import IndicatorMatrix, MultiOmicsDataset, OmicsView, build_indicator, mask_view
from .linear import ConsensusEmbedding, SolverConfig, fit_linear
from .nonlinear import Activation, NonlinearSolverConfig, fit_nonlinear
from .spectral import ClusterAssignment, spectral_cluster
