"""Compact-prior diffusion for image restoration."""

from .schedule import IPRVector, NoiseSchedule, make_schedule

__all__ = ["IPRVector", "NoiseSchedule", "make_schedule"]
__version__ = "0.1.0"
