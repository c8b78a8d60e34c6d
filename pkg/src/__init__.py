"""
nbv-grasp-sim - closed-loop next-best-view grasp planning

Simulated packed scenes, TSDF fusion, geometric grasp detection, information-gain view
planning and the benchmark harness that compares the policy against fixed-view baselines.
"""

__version__ = "0.1.0"
__author__ = "algorithm07-ai"
