"""Deterministic simulator and evaluation toolkit for target-driven grasping under occlusion."""

__version__ = "0.1.0"
