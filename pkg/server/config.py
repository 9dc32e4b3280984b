import os
from pathlib import Path
from typing import Optional

from gemcap.config import DATA_DIR, ensure_dirs, now_ts  # noqa: F401  (re-exported)

# Basic path configuration for the MCP server
SERVER_DIR = Path(__file__).resolve().parent
PROJECT_ROOT = SERVER_DIR.parent

# 检查点目录：classification.ckpt 与 captioning-<level>.ckpt
MODEL_DIR = Path(os.environ.get("GEMCAP_MODELS", DATA_DIR / "checkpoints"))

# 服务器侧默认值
DEFAULT_LEVEL = "basic"
MAX_RETRIES = 20


def checkpoint_name(task: str, level: Optional[str] = None) -> str:
    """生成检查点文件名（与 CLI 的运行目录布局一致）"""
    return f"{task}.ckpt" if task == "classification" else f"{task}-{level}.ckpt"
