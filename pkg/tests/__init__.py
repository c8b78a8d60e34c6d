"""
Test suite for nbv-grasp-sim
"""
