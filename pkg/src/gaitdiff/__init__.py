"""Diffusion-policy training and real-time sampling for biped locomotion."""

from ._accel import USE_NUMBA, backend_name

__version__ = "0.1.0"
