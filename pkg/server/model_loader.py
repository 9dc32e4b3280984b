"""模型检查点加载器

按 (任务, 级别) 缓存已加载的模型；文件修改时间变化时自动重新加载。
推理只读取参数，可被多个工具调用并发共享。
"""

import threading
from pathlib import Path
from typing import Dict, Optional, Tuple

from gemcap.capnet import CaptionModel, load_checkpoint

from .config import MODEL_DIR, checkpoint_name
from .error_handler import log

EXPECTED_CHECKPOINTS = (
    checkpoint_name("classification"),
    checkpoint_name("captioning", "basic"),
    checkpoint_name("captioning", "normal"),
    checkpoint_name("captioning", "complete"),
)


class ModelCache:
    """检查点缓存"""

    def __init__(self, model_dir: Path = MODEL_DIR):
        self.model_dir = Path(model_dir)
        self._models: Dict[Path, Tuple[float, CaptionModel]] = {}
        self._lock = threading.Lock()

    def path_for(self, task: str, level: Optional[str] = None) -> Path:
        """返回任务对应的默认检查点路径"""
        return self.model_dir / checkpoint_name(task, level)

    def get(
        self, task: str, level: Optional[str] = None, path: Optional[str] = None
    ) -> CaptionModel:
        """加载（或从缓存返回）模型

        Args:
            task: classification 或 captioning
            level: 描述级别（captioning 时使用）
            path: 显式检查点路径（可选）

        Raises:
            FileNotFoundError: 检查点不存在
            CheckpointFormatError / CheckpointCorrupt: 文件无法解析
        """
        resolved = Path(path) if path else self.path_for(task, level)
        mtime = resolved.stat().st_mtime
        with self._lock:
            cached = self._models.get(resolved)
            if cached and cached[0] == mtime:
                return cached[1]
            model = load_checkpoint(resolved)
            self._models[resolved] = (mtime, model)
        log(f"加载检查点 {resolved} (task={model.task}, level={model.level})")
        return model

    def clear(self) -> None:
        with self._lock:
            self._models.clear()


# 全局模型缓存
models = ModelCache()
