"""Piping-component classification from segmented point clouds.

Subpackages and modules:

* ``geometry``: point clouds, unit-sphere normalization, downsampling
* ``dataset``: cloud files, taxonomies, manifests, stratified splits
* ``synth``: parametric fittings and a simulated terrestrial scanner
* ``views``: camera poses (ring, RANSAC plane, acquisition rate)
* ``render``: orthographic depth images and acquisition rate
* ``neural``: numpy point-set and multi-view networks with Adam training
* ``evaluation``: accuracy, confusion, AP/mAP, PR curves, report tables
* ``pipeline``: the six-case experiment suite
"""

from .errors import PlantFitError
from .geometry import PointCloud, denormalize, downsample_points, normalize_unit_sphere

__version__ = "0.1.0"

__all__ = ["PlantFitError", "PointCloud", "denormalize", "downsample_points", "normalize_unit_sphere"]
