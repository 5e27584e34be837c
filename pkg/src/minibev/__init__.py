"""Desk-scale multi-view BEV 3D detector with object-centric temporal
fusion, height-adaptive multi-view sampling, and heatmap-driven decoder
query enhancement, built on a small hand-differentiated tensor core."""

__version__ = "0.1.0"
