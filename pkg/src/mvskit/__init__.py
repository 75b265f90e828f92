"""Multi-view stereo toolkit.

PatchMatch depth/normal estimation, cross-view consistency counters,
confidence losses and AUC, piecewise-planar refinement, point-cloud fusion
and benchmark-style evaluation, wired together by a cached CLI pipeline.
"""

__version__ = "0.1.0"

from .geometry import Camera, PlaneHypothesis, PolarNormal, View  # noqa: F401
from .patchmatch import DepthNormalMap, PatchMatchConfig  # noqa: F401
