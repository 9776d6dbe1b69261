"""
Configuration settings for dglego.

Environment variables (optionally from a ``.env`` file at the repository root)
provide the machine-specific defaults; numeric constants shared by the
numerical modules live here as well.
"""
import os
from pathlib import Path

from dotenv import load_dotenv

# Base directories
BASE_DIR = Path(__file__).parent.parent
PACKAGE_DIR = BASE_DIR / "dglego"
CONFIGS_DIR = BASE_DIR / "configs"

load_dotenv(dotenv_path=BASE_DIR / ".env")

# Paths
DATASET_DIR = Path(os.environ.get("DGLEGO_DATASET_DIR", str(BASE_DIR / "data")))
OUTPUT_DIR = Path(os.environ.get("DGLEGO_OUTPUT_DIR", str(BASE_DIR / "runs")))

# Logging
LOG_LEVEL = os.environ.get("DGLEGO_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Reproducibility
DEFAULT_SEED = int(os.environ.get("DGLEGO_DEFAULT_SEED", "0"))

# Gaussian-process numerics
DEFAULT_RELATIVE_JITTER = 1e-4  # times trace(K)/N
JITTER_ESCALATION_FACTOR = 10.0
MAX_JITTER_ATTEMPTS = 6
COINCIDENT_TOLERANCE = 1e-12  # 1 - cos(theta) below this uses the theta=0 branch
DEFAULT_SIGMA_RIDGE = 1e-8  # times trace(Sigma)/d, pre-classifier DGL

# DGL minibatching
FULL_BATCH_LIMIT = 2000
DEFAULT_DGL_MINIBATCH = 1000

# Information-bottleneck quadrature
DEFAULT_QUADRATURE_NODES = 4096
QUADRATURE_HALF_WIDTH = 10.0  # in units of sigma_eps
CLOSE_TRIPLE_RADIUS = 3.0  # in units of sigma_eps

# Optimizers
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Output files
METRICS_CSV = "metrics.csv"
SUMMARY_JSON = "summary.json"
RESOLVED_CONFIG = "config.resolved.yaml"
KERNEL_SPECS_JSON = "kernel_specs.json"
CHECKPOINT_FILE = "stack.bin"
RUN_LOG = "run.log"
