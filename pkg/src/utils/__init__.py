"""
Utility functions for nbv-grasp-sim
"""
