"""Marker-based body fitting, synthetic multi-view keypoint data and its evaluation."""

__version__ = "0.1.0"
