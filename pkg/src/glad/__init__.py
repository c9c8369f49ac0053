"""Log relation-anomaly detection on per-window event/field graphs."""

__version__ = "0.1.0"
