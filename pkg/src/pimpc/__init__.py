"""pimpc: predictive control with a lifted periodic disturbance observer.

Tracking controllers built from a nominal linear model drift when the
model is wrong.  This package closes that gap for periodic references by
estimating one disturbance correction per sample of the period, rotating
the estimate in lockstep with the reference, and retargeting the
controller around it every step.  The loop converges to zero tracking
error at the period samples even under substantial model mismatch.
"""

__version__ = "0.1.0"

from .model import (
    AugmentedModel,
    ConstraintBox,
    DisturbanceChannels,
    LiftedDisturbance,
    LtiModel,
    ModelError,
    PeriodicReference,
    SelectionMatrix,
)

__all__ = [
    "AugmentedModel",
    "ConstraintBox",
    "DisturbanceChannels",
    "LiftedDisturbance",
    "LtiModel",
    "ModelError",
    "PeriodicReference",
    "SelectionMatrix",
    "__version__",
]
