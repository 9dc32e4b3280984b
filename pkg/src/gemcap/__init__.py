"""gemcap: jewelry image classification and three-level captioning."""

from .capnet import (
    CaptionModel,
    DecoderConfig,
    EncoderConfig,
    TrainConfig,
    greedy_decode,
    load_checkpoint,
    predict_class,
    save_checkpoint,
    train,
)
from .error_handler import GemcapError
from .lexicon import (
    DescriptionLevel,
    JewelryRecord,
    default_lexicon,
    generate_description,
    strip_superlatives,
    validate_description,
)

__version__ = "0.1.0"

__all__ = [
    "CaptionModel",
    "DecoderConfig",
    "DescriptionLevel",
    "EncoderConfig",
    "GemcapError",
    "JewelryRecord",
    "TrainConfig",
    "default_lexicon",
    "generate_description",
    "greedy_decode",
    "load_checkpoint",
    "predict_class",
    "save_checkpoint",
    "strip_superlatives",
    "train",
    "validate_description",
]
