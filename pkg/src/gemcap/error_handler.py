from .config import AUDIT_LOG, DATA_DIR, now_ts

# Error message templates - centralized error message management
ERROR_MESSAGES = {
    "INVALID_SHAPE": "invalid shape {shape}: {detail}",
    "SHAPE_MISMATCH": "shape mismatch: {detail}",
    "INVALID_AXIS": "axis {axis} out of range for rank {rank}",
    "VOCAB_OVERFLOW": "id {token_id} out of range for size {size}",
    "TRAINING_DIVERGED": "training diverged: {detail}",
    "LEXICON_MISS": "term '{term}' not found in category {category}",
    "LEXICON_CONFLICT": "duplicate term '{term}' in category {category}",
    "LEXICON_PARSE_ERROR": "lexicon entry #{index} invalid: {detail}",
    "INCOMPLETE_RECORD": "jewelry record incomplete: {detail}",
    "GRAMMAR_ERROR": "caption does not validate at {level} level: {detail}",
    "MANIFEST_PARSE_ERROR": "manifest line {line}: {detail}",
    "STRATIFICATION_ERROR": "class '{jewelry_class}' has no original samples",
    "DATASET_ERROR": "dataset error: {detail}",
    "TASK_MISMATCH": "model trained for {actual}, expected {expected}",
    "CHECKPOINT_FORMAT_ERROR": "not a gemcap checkpoint: {detail}",
    "CHECKPOINT_CORRUPT": "checkpoint corrupt: {detail}",
    "INPUT_MISMATCH": "length mismatch: {left} vs {right}",
    "EMPTY_EVALUATION": "nothing to evaluate",
    "CLASS_ERROR": "unknown class '{jewelry_class}'",
    "CONFIG_ERROR": "config error: {detail}",
    "AUGMENT_OUT_OF_RANGE": "augmentation {kind} magnitude {value} outside {bounds}",
    "UNKNOWN_ERROR": "unknown error",
}


def log(message: str) -> None:
    """Append a timestamped line to the audit log."""
    try:
        DATA_DIR.mkdir(parents=True, exist_ok=True)
        with open(AUDIT_LOG, "a", encoding="utf-8") as af:
            af.write(f"{now_ts()} {message}\n")
    except Exception:
        # best-effort logging; never break a training run over it
        pass


def log_exception(exc: Exception, prefix: str = "") -> None:
    log(f"{prefix}{exc!r}")


def get_error_message(error_key: str, **kwargs) -> str:
    message = ERROR_MESSAGES.get(error_key, ERROR_MESSAGES["UNKNOWN_ERROR"])
    if kwargs:
        try:
            message = message.format(**kwargs)
        except (KeyError, IndexError):
            pass
    return message


class GemcapError(RuntimeError):
    """Base error; `error_key` selects the message template."""

    error_key = "UNKNOWN_ERROR"

    def __init__(self, **kwargs):
        self.details = kwargs
        self.message = get_error_message(self.error_key, **kwargs)
        super().__init__(self.message)


class InvalidShape(GemcapError):
    error_key = "INVALID_SHAPE"


class ShapeMismatch(GemcapError):
    error_key = "SHAPE_MISMATCH"


class InvalidAxis(GemcapError):
    error_key = "INVALID_AXIS"


class VocabOverflow(GemcapError):
    error_key = "VOCAB_OVERFLOW"


class TrainingDiverged(GemcapError):
    error_key = "TRAINING_DIVERGED"


class LexiconMiss(GemcapError):
    error_key = "LEXICON_MISS"


class LexiconConflict(GemcapError):
    error_key = "LEXICON_CONFLICT"


class LexiconParseError(GemcapError):
    error_key = "LEXICON_PARSE_ERROR"


class IncompleteRecord(GemcapError):
    error_key = "INCOMPLETE_RECORD"


class GrammarError(GemcapError):
    error_key = "GRAMMAR_ERROR"


class ManifestParseError(GemcapError):
    error_key = "MANIFEST_PARSE_ERROR"

    @property
    def line(self) -> int:
        return self.details.get("line", 0)


class StratificationError(GemcapError):
    error_key = "STRATIFICATION_ERROR"


class DatasetError(GemcapError):
    error_key = "DATASET_ERROR"


class TaskMismatch(GemcapError):
    error_key = "TASK_MISMATCH"


class CheckpointFormatError(GemcapError):
    error_key = "CHECKPOINT_FORMAT_ERROR"


class CheckpointCorrupt(GemcapError):
    error_key = "CHECKPOINT_CORRUPT"


class InputMismatch(GemcapError):
    error_key = "INPUT_MISMATCH"


class EmptyEvaluation(GemcapError):
    error_key = "EMPTY_EVALUATION"


class ClassError(GemcapError):
    error_key = "CLASS_ERROR"


class ConfigError(GemcapError):
    error_key = "CONFIG_ERROR"


class AugmentOutOfRange(GemcapError):
    error_key = "AUGMENT_OUT_OF_RANGE"
