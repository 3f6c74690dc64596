"""Multi-resident activity recognition from ambient binary sensor logs.

A tree-structured 1D CNN folds each sensor event's recent history into a
joint (resident, activity) prediction, trained end to end on a small
hand-written reverse-mode numerics core. Includes log ingestion, per-event
windowing, Adam training with a grid sweep, confusion-matrix metrics and
from-scratch KNN / decision-tree baselines.
"""

__version__ = "0.1.0"
