"""Multi-task affective vocal-burst trainer and experiment harness."""

__version__ = "0.1.0"
