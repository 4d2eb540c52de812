"""Error-probability lower bounds and decoders for invariant causal prediction,
viewed as a zero-rate Gaussian multiple access channel with a shared codebook."""

from .bounds import (
    BoundReport,
    BoundValues,
    PowerConstraint,
    assemble_report,
    average_squared_distance,
    bound_data_dependent,
    bound_power_constraint,
    bound_power_constraint_simple,
    bound_signal_constraint,
    bound_signal_constraint_simple,
    tight_constraints_from_data,
)
from .core import (
    CapacityError,
    DimensionError,
    EnvironmentData,
    ModelSpec,
    NoiseSpec,
    SupportSet,
    detect_collisions,
    enumerate_supports,
    pairwise_distance,
    sent_signal,
    std_normal_cdf,
)
from .decoders import (
    DecodeOutcome,
    RegressionFit,
    decode_min_distance,
    icp_mdd,
    icp_mdd_known,
    mii_known,
    pooled_least_squares,
)

__version__ = "0.1.0"
