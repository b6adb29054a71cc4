"""Toy-scale video object tracking with decoupled spatial/temporal deformable
attention, box-prompt segmentation and J/F evaluation."""

__version__ = "0.1.0"
