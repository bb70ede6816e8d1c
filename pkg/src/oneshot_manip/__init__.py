"""One-shot imitation of long-horizon tabletop manipulation.

A demonstration is decomposed into pre-contact / grasping / post-contact
primitives; for each primitive an invariant region is matched against the
live observation, the target end-effector pose is regressed from the
correspondences, and an RRT-Connect planner executes the motion. A synthetic
desk-scale benchmark evaluates the loop end to end.
"""

__version__ = "0.1.0"

from . import cloud, config, invariant, matcher, planner, se3, segmenter, vlm
from .se3 import Action, Pose, WeightedPointSet, solve_weighted_procrustes

__all__ = [
    "__version__",
    "cloud", "config", "invariant", "matcher", "planner", "se3", "segmenter",
    "vlm",
    "Action", "Pose", "WeightedPointSet", "solve_weighted_procrustes",
]
