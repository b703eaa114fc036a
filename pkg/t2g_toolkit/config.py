"""Environment-driven defaults for runs, precision and dataset locations."""

import os
from pathlib import Path

# Load .env file if present
env_file = Path(__file__).parent.parent / ".env"
if env_file.exists():
    for line in env_file.read_text().splitlines():
        if "=" in line and not line.startswith("#"):
            key, value = line.split("=", 1)
            os.environ.setdefault(key.strip(), value.strip())

# Where CLI commands write run directories
OUTPUT_ROOT = Path(os.getenv("T2G_OUTPUT_ROOT", "runs"))

# float32 for training, float64 for gradient checks
DEFAULT_PRECISION = os.getenv("T2G_PRECISION", "float32")

# Directory holding benchmark CSVs (ca/, ch/, ...); unset disables desk-scale checks
DATA_DIR = Path(os.environ["T2G_DATA_DIR"]) if os.getenv("T2G_DATA_DIR") else None

# Gate threshold for the topology indicator
GATE_THRESHOLD = 0.5

# Benchmark datasets: split sizes and batch sizes
DATASETS = {
    "ge": {"name": "Gesture Phase", "train": 6318, "val": 1580, "test": 1795, "num": 32, "cat": 0, "task": "multiclass", "batch_size": 128},
    "ch": {"name": "Churn Modelling", "train": 6400, "val": 1600, "test": 2000, "num": 9, "cat": 1, "task": "binclass", "batch_size": 128},
    "ey": {"name": "Eye Movements", "train": 6998, "val": 1750, "test": 2188, "num": 26, "cat": 0, "task": "multiclass", "batch_size": 128},
    "ca": {"name": "California Housing", "train": 13209, "val": 3303, "test": 4128, "num": 8, "cat": 0, "task": "regression", "batch_size": 256},
    "ho": {"name": "House 16H", "train": 14581, "val": 3646, "test": 4557, "num": 16, "cat": 0, "task": "regression", "batch_size": 256},
    "ad": {"name": "Adult", "train": 26048, "val": 6513, "test": 16281, "num": 6, "cat": 8, "task": "binclass", "batch_size": 256},
    "ot": {"name": "Otto Group Products", "train": 39601, "val": 9901, "test": 12376, "num": 93, "cat": 0, "task": "multiclass", "batch_size": 512},
    "he": {"name": "Helena", "train": 41724, "val": 10432, "test": 13040, "num": 27, "cat": 0, "task": "multiclass", "batch_size": 512},
    "ja": {"name": "Jannis", "train": 53588, "val": 13398, "test": 16747, "num": 54, "cat": 0, "task": "multiclass", "batch_size": 512},
    "hi": {"name": "Higgs Small", "train": 62752, "val": 15688, "test": 19610, "num": 28, "cat": 0, "task": "binclass", "batch_size": 512},
    "fb": {"name": "Facebook Comments Volume", "train": 157638, "val": 19722, "test": 19720, "num": 50, "cat": 1, "task": "regression", "batch_size": 512},
    "ye": {"name": "Year", "train": 370972, "val": 92743, "test": 51630, "num": 90, "cat": 0, "task": "regression", "batch_size": 1024},
}

DEFAULT_BATCH_SIZE = 256


def batch_size_for(dataset: str | None) -> int:
    """Default batch size for a benchmark dataset key."""
    if dataset and dataset.lower() in DATASETS:
        return DATASETS[dataset.lower()]["batch_size"]
    return DEFAULT_BATCH_SIZE
