from typing import Optional

from gemcap.error_handler import GemcapError, log, log_exception  # noqa: F401  (re-exported)

# 工具层错误码（库内错误直接使用 GemcapError.error_key）
TOOL_ERROR_MESSAGES = {
    "INVALID_PARAMETERS": "参数无效",
    "MODEL_NOT_FOUND": "未找到模型检查点，请先训练或设置 GEMCAP_MODELS",
    "FILE_OPERATION_FAILED": "文件操作失败",
    "UNKNOWN_ERROR": "未知错误",
}


def error_response(code: str, message: Optional[str] = None, **fields) -> dict:
    """构建统一的失败响应"""
    response = {
        "success": False,
        "error": code,
        "message": message or TOOL_ERROR_MESSAGES.get(code, TOOL_ERROR_MESSAGES["UNKNOWN_ERROR"]),
    }
    response.update(fields)
    return response
