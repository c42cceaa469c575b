from .energy import Gradient, correspondence_residual, energy_gradient, total_energy
from .hierarchical import HierarchicalResult, optimize_hierarchical
from .optim import OptimResult, ScaleMapResult, initial_state, optimize_global, optimize_scale_maps
from .types import AlignmentState, CorrespondenceSet, OptimConfig, PairPrediction, ScaleMapState
