"""gemcap MCP 服务器包：`python -m server.mcp_server` 或 `gemcap-mcp` 启动 stdio 服务。"""

from .mcp_server import checkpoint_status, main, mcp

__all__ = ["checkpoint_status", "main", "mcp"]
