"""Goal-conditioned behavior cloning with a goal-sensitive backbone and
adaptive horizon prediction, on a procedural gridworld."""

__version__ = "0.1.0"
