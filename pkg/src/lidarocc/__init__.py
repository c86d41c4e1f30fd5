"""LiDAR occlusion analysis: spherical-grid occlusion and signal-miss
regions, approximate complete-shape assembly, occupancy ground truth and
evaluation, box/loss math, and a ray-cast simulator that provides the
ground truth the rest is tested against."""

__version__ = "0.1.0"
