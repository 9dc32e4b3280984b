import os
from datetime import datetime
from pathlib import Path

from dotenv import load_dotenv

# .env 可提供 GEMCAP_HOME / GEMCAP_THREADS
load_dotenv()

# Basic path configuration
PACKAGE_DIR = Path(__file__).resolve().parent
PROJECT_ROOT = PACKAGE_DIR.parent.parent
DATA_DIR = Path(os.environ.get("GEMCAP_HOME", PROJECT_ROOT / "var" / "gemcap"))
AUDIT_LOG = DATA_DIR / "audit.log"

# Dataset defaults
DEFAULT_IMAGE_SIZE = 64
DEFAULT_SPLIT_FRACTIONS = (0.75, 0.15, 0.10)
DEFAULT_N_BASE = 500
DEFAULT_MULTIPLIER = 3
DEFAULT_SEED = 7

# Stones with well separated render colours; keeps Normal captions learnable at 64x64
DEFAULT_STONE_POOL = ("diamond", "ruby", "emerald", "sapphire", "amethyst", "topaz")

# Model defaults (desk-scale VGG-style encoder)
DEFAULT_ENCODER_BLOCKS = (16, 32, 64)
DEFAULT_FEATURE_DIM = 128
DEFAULT_EMBED_DIM = 64
DEFAULT_MAX_LEN = 32

# Training defaults
DEFAULT_PATIENCE = 10
DEFAULT_MAX_EPOCHS = 60

# Hyperparameter axes explored in the experiments
PAPER_NEURONS = (64, 128, 256, 512, 1024)
PAPER_BATCH_SIZES = (4, 8, 32, 128, 512)
PAPER_LEARNING_RATES = (0.0001, 0.001, 0.01, 0.1)
PAPER_OPTIMIZERS = ("adam", "adagrad", "adadelta", "rmsprop")
PAPER_CELLS = ("gru", "lstm")

# Encoder scales stand in for the three CNN families of the comparison
ENCODER_SCALES = {
    "vgg-small": (8, 16, 32),
    "vgg-desk": (16, 32, 64),
    "vgg-wide": (32, 64, 128),
}

# Presets: best configurations reported for each task, plus desk variants
PRESETS = {
    "paper-classification": {
        "task": "classification",
        "hidden": 512,
        "batch": 8,
        "optimizer": "adam",
        "lr": 0.001,
        "encoder_scale": "vgg-desk",
    },
    "paper-captioning": {
        "task": "captioning",
        "hidden": 256,
        "batch": 16,
        "optimizer": "adam",
        "lr": 0.001,
        "encoder_scale": "vgg-desk",
    },
    "desk-classification": {
        "task": "classification",
        "hidden": 128,
        "batch": 8,
        "optimizer": "adam",
        "lr": 0.001,
        "encoder_scale": "vgg-desk",
    },
    "desk-captioning": {
        "task": "captioning",
        "hidden": 256,
        "batch": 16,
        "optimizer": "adam",
        "lr": 0.001,
        "encoder_scale": "vgg-small",
    },
}


def now_ts():
    """获取当前时间戳"""
    return datetime.utcnow().strftime("%Y%m%dT%H%M%SZ")


def ensure_dirs():
    """确保必要的目录存在"""
    DATA_DIR.mkdir(parents=True, exist_ok=True)


def worker_count() -> int:
    """读取 GEMCAP_THREADS，0 或未设置表示串行"""
    raw = os.environ.get("GEMCAP_THREADS", "").strip()
    if not raw:
        return 0
    try:
        value = int(raw)
    except ValueError:
        return 0
    return max(value, 0)
