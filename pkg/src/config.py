"""
Configuration for nbv-grasp-sim

Defaults for the planner, the simulated sensor and the benchmark harness. Every value can
be overridden through the environment or a `.env` file.
"""

import os
import logging
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

LOG_LEVEL = os.getenv("NBV_LOG_LEVEL", "INFO")

# Configure logging
logging.basicConfig(
    level=LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

# World map
TSDF_SIDE_LENGTH = float(os.getenv("NBV_TSDF_SIDE_LENGTH", "0.3"))
TSDF_RESOLUTION = int(os.getenv("NBV_TSDF_RESOLUTION", "40"))
TSDF_TRUNCATION_VOXELS = float(os.getenv("NBV_TSDF_TRUNCATION_VOXELS", "4"))
TSDF_MAX_WEIGHT = float(os.getenv("NBV_TSDF_MAX_WEIGHT", "32"))

# Scene
TABLE_HEIGHT = float(os.getenv("NBV_TABLE_HEIGHT", "0.05"))
PACKED_OBJECT_COUNT = int(os.getenv("NBV_PACKED_OBJECTS", "5"))

# Depth sensor (RealSense-like, downsampled)
SENSOR_WIDTH = int(os.getenv("NBV_SENSOR_WIDTH", "80"))
SENSOR_HEIGHT = int(os.getenv("NBV_SENSOR_HEIGHT", "60"))
SENSOR_FOCAL = float(os.getenv("NBV_SENSOR_FOCAL", "60.0"))
SENSOR_DEPTH_MIN = float(os.getenv("NBV_SENSOR_DEPTH_MIN", "0.2"))
SENSOR_DEPTH_MAX = float(os.getenv("NBV_SENSOR_DEPTH_MAX", "1.5"))
NOISE_SIGMA = float(os.getenv("NBV_NOISE_SIGMA", "0.0"))
REALISTIC_NOISE_SIGMA = 0.002

# Virtual camera used for information gain
IG_WIDTH = int(os.getenv("NBV_IG_WIDTH", "32"))
IG_HEIGHT = int(os.getenv("NBV_IG_HEIGHT", "24"))

# Gripper (Panda-like)
GRIPPER_MAX_WIDTH = float(os.getenv("NBV_GRIPPER_MAX_WIDTH", "0.08"))
FINGER_WIDTH = 0.01
FINGER_THICKNESS = 0.01
FINGER_LENGTH = 0.04
APPROACH_CLEARANCE = float(os.getenv("NBV_APPROACH_CLEARANCE", "0.05"))
FRICTION_CONE_DEG = float(os.getenv("NBV_FRICTION_CONE_DEG", "30"))

# Grasp detection
GRASP_QUALITY_FLOOR = float(os.getenv("NBV_GRASP_QUALITY_FLOOR", "0.1"))
GRASP_NMS_RADIUS = float(os.getenv("NBV_GRASP_NMS_RADIUS", "2"))
MAX_CLOSING_TILT_DEG = float(os.getenv("NBV_MAX_CLOSING_TILT_DEG", "45"))

# View planning
VIEW_COUNT = int(os.getenv("NBV_VIEW_COUNT", "16"))
VIEW_RADIUS = float(os.getenv("NBV_VIEW_RADIUS", "0.35"))

# Policy
POLICY_RATE = float(os.getenv("NBV_POLICY_RATE", "4"))
MAX_VIEWS = int(os.getenv("NBV_MAX_VIEWS", "80"))
GAIN_MIN = float(os.getenv("NBV_GAIN_MIN", "10"))
WINDOW_SIZE = int(os.getenv("NBV_WINDOW", "12"))
EPSILON_MU = float(os.getenv("NBV_EPSILON_MU", "0.9"))
LINEAR_VELOCITY = float(os.getenv("NBV_LINEAR_VELOCITY", "0.05"))
MIN_TARGET_DISTANCE = float(os.getenv("NBV_MIN_TARGET_DISTANCE", "0.2"))
EXECUTION_TIME = float(os.getenv("NBV_EXECUTION_TIME", "13.0"))

# Benchmark
JOBS = int(os.getenv("NBV_JOBS", "4"))
OUTPUT_DIR = os.getenv("NBV_OUTPUT_DIR", "bench_output")
