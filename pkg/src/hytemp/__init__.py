"""hytemp - Hybrid physics/data-driven quantile models for indoor temperature."""

from hytemp.__about__ import __version__

__all__ = ["__version__"]
