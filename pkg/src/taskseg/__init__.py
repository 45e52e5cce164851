"""Hierarchical task segmentation for assembly-task scene-graph recordings."""

__version__ = "0.1.0"
