"""Rate evaluation and outage simulation for Gaussian relay networks with mixed DF/CF relaying."""

from .channel import (ChannelRealization, CompressionPolicy, GainModel, InputPolicy, ModelError, NetworkTopology,
                      PathLoss, RelayCSI, assemble_covariance, sample_realization)
from .covariance import (CovarianceMap, NonPositiveDeterminant, SingularConditioning, VariableId,
                         conditional_covariance, conditional_entropy, conditional_mi)
from .outage import (DecisionRule, OutageEstimate, decide_strategy, optimize_compression, outage_fixed,
                     outage_lower_bound, outage_scs)
from .rates import StrategyAssignment, i_cmnnc, rate_cutset

__version__ = "0.1.0"

__all__ = [
    "ChannelRealization", "CompressionPolicy", "GainModel", "InputPolicy", "ModelError", "NetworkTopology",
    "PathLoss", "RelayCSI", "assemble_covariance", "sample_realization",
    "CovarianceMap", "NonPositiveDeterminant", "SingularConditioning", "VariableId", "conditional_covariance",
    "conditional_entropy", "conditional_mi",
    "DecisionRule", "OutageEstimate", "decide_strategy", "optimize_compression", "outage_fixed",
    "outage_lower_bound", "outage_scs",
    "StrategyAssignment", "i_cmnnc", "rate_cutset",
]
