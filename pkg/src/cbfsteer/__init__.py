"""Learned control-barrier steering for sampling-based planning on a planar arm.

Train a scalar barrier h(q, o) from signed-distance or point-cloud
observations of obstacle worlds, synthesize a QP safety filter from it, and
plug the filtered controller into RRT as the steer function. See README.md for
the CLI pipeline.
"""

__version__ = "0.1.0"
