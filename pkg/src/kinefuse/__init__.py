"""Parametric IMU-vision fusion for 3D human pose in kinematic space."""
__version__ = "0.1.0"
