#!/usr/bin/env python3
"""珠宝描述 MCP 服务器：生成、校验描述，并用训练好的模型识别和描述图像"""

from typing import Dict

from fastmcp import FastMCP

from .config import MODEL_DIR, ensure_dirs
from .error_handler import log
from .model_loader import EXPECTED_CHECKPOINTS
from .tools import register_tools

ensure_dirs()

mcp = FastMCP("gemcap 珠宝描述 MCP 服务器")
register_tools(mcp)


def checkpoint_status() -> Dict[str, bool]:
    """检查点文件名 -> 是否存在；缺失的图像工具会返回 MODEL_NOT_FOUND"""
    return {name: (MODEL_DIR / name).is_file() for name in EXPECTED_CHECKPOINTS}


def main():
    """启动MCP服务器"""
    status = checkpoint_status()
    missing = sorted(name for name, found in status.items() if not found)
    log(f"启动珠宝描述MCP服务器 (models={MODEL_DIR}, missing={missing or '无'})")
    mcp.run()


if __name__ == "__main__":
    main()
