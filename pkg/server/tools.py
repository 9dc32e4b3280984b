"""MCP工具函数"""

from typing import Any, Callable, Dict, Optional

from fastmcp import Context

from gemcap.capnet import CAPTIONING, CLASSIFICATION, caption_image as run_caption, predict_class
from gemcap.dataforge import load_png
from gemcap.error_handler import TaskMismatch
from gemcap.lexicon import (
    CATEGORIES,
    EXAMPLE_RECORDS,
    JewelryRecord,
    default_lexicon,
    generate_description,
    strip_superlatives,
    validate_description,
)
from gemcap.validators import validate_choice, validate_positive_int

from .config import DEFAULT_LEVEL, MAX_RETRIES
from .error_handler import GemcapError, error_response, log_exception
from .model_loader import models

LEVEL_NAMES = ("basic", "normal", "complete")


def _execute_tool(
    action: Callable[[], Any],
    error_prefix: str = "操作失败: ",
    error_fields: Optional[Dict[str, Any]] = None,
) -> dict:
    """统一的工具执行模板

    Args:
        action: 要执行的操作函数（无参数），返回字典或单个结果
        error_prefix: 错误日志前缀
        error_fields: 失败时额外返回的字段

    Returns:
        包含操作结果的字典
    """
    fields = error_fields or {}
    try:
        result = action()
        response = {"success": True}
        # 如果 action 返回了字典，直接合并到响应中
        if isinstance(result, dict):
            response.update(result)
        elif result is not None:
            response["result"] = result
        return response
    except ValueError as exc:
        return error_response("INVALID_PARAMETERS", str(exc), **fields)
    except GemcapError as exc:
        log_exception(exc, prefix=error_prefix)
        return error_response(exc.error_key, f"{error_prefix}{exc.message}", **fields)
    except FileNotFoundError as exc:
        return error_response("MODEL_NOT_FOUND", f"{error_prefix}{exc}", **fields)
    except OSError as exc:
        log_exception(exc, prefix=error_prefix)
        return error_response("FILE_OPERATION_FAILED", f"{error_prefix}{exc}", **fields)
    except Exception as exc:
        log_exception(exc, prefix=f"{error_prefix}(未知错误): ")
        return error_response("UNKNOWN_ERROR", f"未知错误: {str(exc)}", **fields)


def _load_image(image_path: str, model) -> Any:
    """读取 PNG 并缩放到模型输入尺寸"""
    return load_png(image_path, (model.encoder.height, model.encoder.width))


def register_tools(mcp):
    """注册所有MCP工具"""

    @mcp.tool()
    def describe_jewelry(
        record: Optional[dict] = None,
        example: Optional[str] = None,
        level: str = DEFAULT_LEVEL,
        superlatives: bool = True,
    ) -> dict:
        """根据珠宝属性生成指定级别的描述

        Args:
            record: JewelryRecord 字段字典（jewelry_type, materials, stones, ...）
            example: 内置示例名称（与 record 二选一）
            level: basic / normal / complete
            superlatives: complete 级别是否使用修饰语
        """

        def action():
            lvl = validate_choice(level, "level", LEVEL_NAMES)
            if example is not None:
                name = validate_choice(example, "example", EXAMPLE_RECORDS)
                rec = EXAMPLE_RECORDS[name]
            elif isinstance(record, dict):
                rec = JewelryRecord.from_dict(record)
            else:
                raise ValueError("必须提供 record 或 example")
            caption = generate_description(rec, lvl, superlatives=superlatives)
            return {"caption": caption, "level": lvl}

        return _execute_tool(action, "生成描述失败: ", {"caption": None})

    @mcp.tool()
    def validate_caption(caption: str, level: str = DEFAULT_LEVEL) -> dict:
        """校验描述是否符合指定级别的语法

        Returns:
            valid、reason 和出错位置 position（token 下标）
        """

        def action():
            lvl = validate_choice(level, "level", LEVEL_NAMES)
            verdict = validate_description(caption, lvl)
            return {
                "valid": verdict.valid,
                "reason": verdict.reason,
                "position": verdict.position,
                "level": lvl,
            }

        return _execute_tool(action, "校验描述失败: ", {"valid": False})

    @mcp.tool()
    def strip_caption(caption: str) -> dict:
        """去掉 complete 描述中的修饰语，得到等价的简洁描述"""

        def action():
            return {"caption": strip_superlatives(caption)}

        return _execute_tool(action, "去除修饰语失败: ", {"caption": None})

    @mcp.tool()
    def classify_image(image_path: str, checkpoint: Optional[str] = None) -> dict:
        """识别图像中的珠宝类别（necklace / ring / earrings / bracelet）

        Args:
            image_path: PNG 图像路径
            checkpoint: 分类模型检查点路径（可选，默认使用 GEMCAP_MODELS 目录）
        """

        def action():
            model = models.get(CLASSIFICATION, path=checkpoint)
            if model.task != CLASSIFICATION:
                raise TaskMismatch(actual=model.task, expected=CLASSIFICATION)
            return {"jewelry_class": predict_class(_load_image(image_path, model), model)}

        return _execute_tool(action, "图像分类失败: ", {"jewelry_class": None})

    @mcp.tool()
    async def caption_image(
        image_path: str,
        level: str = DEFAULT_LEVEL,
        retries: int = 0,
        checkpoint: Optional[str] = None,
        ctx: Optional[Context] = None,
    ) -> dict:
        """为图像生成指定级别的描述

        Args:
            image_path: PNG 图像路径
            level: basic / normal / complete（每个级别对应一个模型）
            retries: 描述未通过语法校验时的重试次数（扰动解码）
            checkpoint: 描述模型检查点路径（可选）
        """
        if ctx:
            await ctx.info(f"正在生成 {level} 级别描述...")

        def action():
            lvl = validate_choice(level, "level", LEVEL_NAMES)
            n = validate_positive_int(retries, "retries", min_val=0)
            if n > MAX_RETRIES:
                raise ValueError(f"retries 必须 <= {MAX_RETRIES}，当前值: {n}")
            model = models.get(CAPTIONING, lvl, path=checkpoint)
            result = run_caption(_load_image(image_path, model), model, level=lvl, retries=n)
            return {
                "caption": result.caption,
                "valid": result.verdict.valid,
                "reason": result.verdict.reason,
                "attempts": result.attempts,
                "level": lvl,
            }

        response = _execute_tool(action, "生成描述失败: ", {"caption": None})
        if ctx and response.get("success"):
            await ctx.info(response["caption"])
        return response

    @mcp.tool()
    def list_lexicon(category: Optional[str] = None) -> dict:
        """列出术语库；指定 category 时只返回该类别的术语"""

        def action():
            lex = default_lexicon()
            if category is None:
                return {"categories": {c: lex.terms(c) for c in CATEGORIES}}
            cat = validate_choice(category, "category", CATEGORIES + ("stone",))
            return {"category": cat, "terms": lex.terms(cat)}

        return _execute_tool(action, "读取术语库失败: ", {"terms": []})
