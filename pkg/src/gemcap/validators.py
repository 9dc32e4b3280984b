"""参数校验模块

提供严格的参数类型和范围校验，供 RunConfig、网格搜索和 MCP 工具在入口处使用。
校验失败统一抛出 ValueError，由调用方转换为用法错误或工具错误响应。
"""

from typing import Iterable, Optional, Sequence, Tuple, Union

from .config import (
    PAPER_BATCH_SIZES,
    PAPER_CELLS,
    PAPER_LEARNING_RATES,
    PAPER_NEURONS,
    PAPER_OPTIMIZERS,
)

# 网格轴名称 -> 允许取值
PAPER_AXES = {
    "hidden": PAPER_NEURONS,
    "batch": PAPER_BATCH_SIZES,
    "lr": PAPER_LEARNING_RATES,
    "optimizer": PAPER_OPTIMIZERS,
    "cell": PAPER_CELLS,
}

# 浮点比例和为 1 的容差
FRACTION_TOLERANCE = 1e-9


def _validate_numeric(
    value: Union[int, float],
    name: str,
    min_val: Optional[float] = None,
    max_val: Optional[float] = None,
) -> float:
    """验证数值类型和范围

    Args:
        value: 要验证的值
        name: 参数名称（用于错误信息）
        min_val: 最小值（可选）
        max_val: 最大值（可选）

    Returns:
        转换为 float 的值

    Raises:
        ValueError: 如果类型或范围无效
    """
    # bool 是 int 的子类，这里显式排除
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} 必须是数字类型，当前类型: {type(value).__name__}")

    float_value = float(value)

    if not (float("-inf") < float_value < float("inf")):
        raise ValueError(f"{name} 必须是有限数值，当前值: {float_value}")

    if min_val is not None and float_value < min_val:
        raise ValueError(f"{name} 必须 >= {min_val}，当前值: {float_value}")

    if max_val is not None and float_value > max_val:
        raise ValueError(f"{name} 必须 <= {max_val}，当前值: {float_value}")

    return float_value


def validate_positive_int(value, name: str, min_val: int = 1) -> int:
    """验证正整数参数

    Raises:
        ValueError: 类型不是整数或小于 min_val
    """
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} 必须是整数类型，当前类型: {type(value).__name__}")
    if value < min_val:
        raise ValueError(f"{name} 必须 >= {min_val}，当前值: {value}")
    return value


def validate_choice(value, name: str, choices: Iterable) -> str:
    """验证枚举型参数（大小写不敏感）"""
    options = tuple(choices)
    if not isinstance(value, str):
        raise ValueError(f"{name} 必须是字符串，当前类型: {type(value).__name__}")
    normalized = value.strip().lower()
    if normalized not in options:
        raise ValueError(f"{name} 必须是 {list(options)} 之一，当前值: {value!r}")
    return normalized


def validate_fractions(fractions: Sequence[float], name: str = "fractions") -> Tuple[float, ...]:
    """验证 (train, val, test) 划分比例

    Args:
        fractions: 三个比例值
        name: 参数名称（用于错误信息）

    Returns:
        float 三元组

    Raises:
        ValueError: 长度不是 3、存在负值或和不为 1
    """
    if not isinstance(fractions, (list, tuple)) or len(fractions) != 3:
        raise ValueError(f"{name} 必须包含 3 个值 (train, val, test)")
    values = tuple(
        _validate_numeric(f, f"{name}[{i}]", min_val=0.0, max_val=1.0)
        for i, f in enumerate(fractions)
    )
    if abs(sum(values) - 1.0) > FRACTION_TOLERANCE:
        raise ValueError(f"{name} 之和必须为 1，当前和: {sum(values)}")
    return values


def validate_paper_axis(axis: str, value) -> Union[int, float, str]:
    """验证网格取值属于实验给出的轴

    Raises:
        ValueError: 轴未知或取值不在允许列表中
    """
    if axis not in PAPER_AXES:
        raise ValueError(f"未知的网格轴: {axis}")
    allowed = PAPER_AXES[axis]
    if isinstance(value, str):
        value = value.strip().lower()
    if value not in allowed:
        raise ValueError(f"{axis} 必须是 {list(allowed)} 之一，当前值: {value!r}")
    return value


def validate_image_size(size, name: str = "size", blocks: int = 0) -> int:
    """验证图像边长：>= 32 且能被 2**blocks 整除"""
    size = validate_positive_int(size, name, min_val=32)
    if blocks and size % (2**blocks):
        raise ValueError(f"{name} 必须能被 {2 ** blocks} 整除，当前值: {size}")
    return size
