"""Learning quadruped gaits as gait-step linear policies over spline foot loops."""

__version__ = "0.1.0"
