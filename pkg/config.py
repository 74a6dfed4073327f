"""
Configuration settings for the FleetWatt tokens-per-watt planner
"""

import os

# Catalogs
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
CATALOG_DIR = os.path.join(BASE_DIR, "catalog")
GPU_CATALOG_PATH = os.path.join(CATALOG_DIR, "gpus.yaml")
MODEL_CATALOG_PATH = os.path.join(CATALOG_DIR, "models.yaml")
PROFILE_CATALOG_PATH = os.path.join(CATALOG_DIR, "profiles.yaml")

# Run config file fallback when --config is not given
CONFIG_ENV_VAR = "FLEETWATT_CONFIG"

# Power projection for GPUs without measured curves (fractions of TDP)
IDLE_TDP_FRACTION = 0.43
NOMINAL_TDP_FRACTION = 0.86
DEFAULT_POWER_STEEPNESS = 1.0

# Roofline / profile defaults
DEFAULT_BW_EFFICIENCY = 0.777
DEFAULT_VRAM_RESERVE_GB = 4.0
DEFAULT_L_CALIB = 8192
DEFAULT_KV_DTYPE_BYTES = 2.0
DEFAULT_KV_SHARDING = "replicated"
DEFAULT_DISPATCH_MS = 0.0
DTYPE_BYTES = {
    "fp32": 4.0,
    "fp16": 2.0,
    "bf16": 2.0,
    "fp8": 1.0,
    "int8": 1.0,
    "int4": 0.5,
}

# Default subjects
DEFAULT_PROFILE = "h100-llama70b"
DEFAULT_COMPARE = []

# Sweeps and comparisons
DEFAULT_WINDOWS = [2048, 4096, 8192, 16384, 32768, 65536, 131072]
DEFAULT_CTX_WINDOW = 8192
DEFAULT_RHO = 0.85
DEFAULT_COMPARE_MODELS = ["Llama-3.1-8B", "Llama-3.1-70B", "Llama-3.1-405B", "Qwen3-235B-A22B", "DeepSeek-V3"]
DEFAULT_COMPARE_GPUS = ["H100-SXM5", "H200-SXM", "B200-SXM", "GB200-NVL"]

# Fleet planning
DEFAULT_ARRIVAL_RATE = 1000.0  # requests/second
DEFAULT_SLO_PERCENTILE = 0.99
DEFAULT_SLO_BOUND_MS = 500.0
DEFAULT_LONG_WINDOW = 65536
DEFAULT_BOUNDARY_GRID = [2048, 4096, 8192]
DEFAULT_GAMMA_GRID = [1.0, 2.0, 4.0]
MAX_POOL_INSTANCES = 100_000

# Workloads
DEFAULT_ARCHETYPE = "short-dominant"
DEFAULT_OUTPUT_LEN = 256  # tokens, for prompt-only traces
CLASSIFY_WINDOW = 8192
SHORT_DOMINANT_THRESHOLD = 0.8
MIXED_THRESHOLD = 0.5

ARCHETYPE_GUIDANCE = {
    "I": {
        "workload": "Short-dominant (>80% of traffic within 8K)",
        "topology": "Two-pool or FleetOpt split at 4K-8K",
        "gpu": "Short pool on the cheapest tok/W GPU; small long pool",
    },
    "II": {
        "workload": "Mixed (50-80% within 8K)",
        "topology": "FleetOpt with gamma headroom",
        "gpu": "Newest generation for the long pool",
    },
    "III": {
        "workload": "Long-dominant (<50% within 8K)",
        "topology": "Homogeneous long-context fleet",
        "gpu": "Largest KV budget per GPU (B200/GB200 class)",
    },
}

# Remote traces
MAX_RETRIES = 3
REQUEST_TIMEOUT = 30
REQUEST_DELAY = 1.5  # Seconds, multiplied by attempt number between retries
DOWNLOAD_CHUNK_SIZE = 8192
DEFAULT_HEADERS = {
    "User-Agent": "fleetwatt/1.0 (+trace fetcher)",
    "Accept": "application/json, text/csv, text/plain, */*",
}

# Output directories
BASE_OUTPUT_DIR = "output"
TRACE_CACHE_DIR = os.path.join(BASE_OUTPUT_DIR, "traces")

# Report output format: 'table', 'csv', 'json' or 'yaml'
OUTPUT_FORMAT = "table"
OUTPUT_FORMATS = ("table", "csv", "json", "yaml")

# Logging
LOG_LEVEL = "INFO"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
