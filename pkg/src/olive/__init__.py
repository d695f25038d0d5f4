"""Width-based rollout planning with an online-learned binary state representation."""

__version__ = "0.1.0"
