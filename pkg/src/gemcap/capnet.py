"""Encoder-decoder captioner: model assembly, training, decoding, checkpoints, grid runs.

The encoder is a stack of ``conv3x3 -> relu -> maxpool2`` blocks followed by
a dense projection to a feature vector. The feature vector sets the decoder's
initial state (``h0 = tanh(W_init f + b_init)``, plus ``c0`` for LSTM) and is
not fed again; every step embeds the previous token, runs the cell and maps
the hidden state to vocabulary logits.

Classification is single-token captioning: the target sequence of an image
is ``[class, <end>]``.
"""

from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    DEFAULT_EMBED_DIM,
    DEFAULT_ENCODER_BLOCKS,
    DEFAULT_FEATURE_DIM,
    DEFAULT_IMAGE_SIZE,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_MAX_LEN,
    DEFAULT_PATIENCE,
    ENCODER_SCALES,
    PAPER_BATCH_SIZES,
    PAPER_CELLS,
    PAPER_LEARNING_RATES,
    PAPER_NEURONS,
    PAPER_OPTIMIZERS,
    worker_count,
)
from .dataforge import CLASSES, TEST, TRAIN, VAL, Manifest, Sample, stack_images
from .error_handler import (
    CheckpointCorrupt,
    CheckpointFormatError,
    ConfigError,
    DatasetError,
    ShapeMismatch,
    TaskMismatch,
    TrainingDiverged,
    log,
    log_exception,
)
from .evalkit import MetricsReport, ResultRow, ccr, classification_report, exact_match
from .lexicon import (
    DescriptionLevel,
    Verdict,
    Vocabulary,
    build_vocab,
    detokenize,
    tokenize,
    validate_tokens,
)
from .nnlayers import (
    GradCheckReport,
    LayerParams,
    Param,
    conv2d,
    conv2d_backward,
    dense,
    dense_backward,
    embedding,
    embedding_backward,
    grad_check,
    gru_cell,
    gru_cell_backward,
    init_conv,
    init_dense,
    init_embedding,
    init_gru,
    init_lstm,
    lstm_cell,
    lstm_cell_backward,
    maxpool2,
    maxpool2_backward,
    relu,
    relu_backward,
    run_layer_checks,
    softmax_xent,
)
from .optim import Decision, EarlyStop, Optimizer, OptimizerConfig
from .tensor import DTYPE, Rng
from .validators import validate_paper_axis

CLASSIFICATION, CAPTIONING = "classification", "captioning"
TASKS = (CLASSIFICATION, CAPTIONING)
GRU, LSTM = "gru", "lstm"

HEAD_INIT_STD = 0.01
EVAL_CHUNK = 64

MAGIC = b"GEMCAP"
FORMAT_VERSION = 1
_HEADER = len(MAGIC) + 1 + 8


# -- configs --------------------------------------------------------------------------


@dataclass
class EncoderConfig:
    height: int = DEFAULT_IMAGE_SIZE
    width: int = DEFAULT_IMAGE_SIZE
    channels: int = 3
    blocks: Tuple[int, ...] = DEFAULT_ENCODER_BLOCKS
    feature_dim: int = DEFAULT_FEATURE_DIM

    def __post_init__(self):
        self.blocks = tuple(int(b) for b in self.blocks)
        factor = 2 ** len(self.blocks)
        if self.height % factor or self.width % factor:
            raise ConfigError(
                detail=f"input {self.height}x{self.width} not divisible by {factor} "
                f"({len(self.blocks)} pools)"
            )
        if self.feature_dim < 1 or not self.blocks or min(self.blocks) < 1:
            raise ConfigError(detail="feature_dim and block widths must be >= 1")

    @property
    def flat_dim(self) -> int:
        factor = 2 ** len(self.blocks)
        return self.blocks[-1] * (self.height // factor) * (self.width // factor)

    @classmethod
    def scaled(
        cls, scale: str, size: int = DEFAULT_IMAGE_SIZE, feature_dim: int = DEFAULT_FEATURE_DIM
    ) -> "EncoderConfig":
        if scale not in ENCODER_SCALES:
            raise ConfigError(detail=f"unknown encoder scale '{scale}'")
        return cls(height=size, width=size, blocks=ENCODER_SCALES[scale], feature_dim=feature_dim)


@dataclass
class DecoderConfig:
    cell: str = GRU
    hidden: int = 256
    embed_dim: int = DEFAULT_EMBED_DIM
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        self.cell = self.cell.lower()
        if self.cell not in (GRU, LSTM):
            raise ConfigError(detail=f"unknown cell '{self.cell}'")
        if min(self.hidden, self.embed_dim, self.max_len) < 1:
            raise ConfigError(detail="hidden, embed_dim and max_len must be >= 1")


@dataclass
class TrainConfig:
    task: str = CLASSIFICATION
    level: Optional[str] = None
    batch_size: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    max_epochs: int = DEFAULT_MAX_EPOCHS
    patience: int = DEFAULT_PATIENCE
    min_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(detail=f"unknown task '{self.task}'")
        if self.task == CAPTIONING:
            self.level = DescriptionLevel(self.level or DescriptionLevel.BASIC).value
        else:
            self.level = None
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError(detail="batch_size and max_epochs must be >= 1")


# -- model ----------------------------------------------------------------------------


class CaptionModel:
    """Parameters, configs and vocabulary of one trained or fresh model."""

    def __init__(
        self,
        encoder: EncoderConfig,
        decoder: DecoderConfig,
        vocab: Vocabulary,
        task: str = CLASSIFICATION,
        level: Optional[str] = None,
    ):
        self.encoder = encoder
        self.decoder = decoder
        self.vocab = vocab
        self.task = task
        self.level = level
        self.params: Dict[str, LayerParams] = {}
        self.meta: dict = {}

    @property
    def is_lstm(self) -> bool:
        return self.decoder.cell == LSTM

    def named_params(self) -> Iterator[Tuple[str, Param]]:
        for component, layer in self.params.items():
            for name, param in layer.items():
                yield f"{component}.{name}", param

    def zero_grad(self) -> None:
        for layer in self.params.values():
            layer.zero_grad()

    def snapshot(self) -> List[np.ndarray]:
        return [p.value.copy() for _, p in self.named_params()]

    def restore(self, values: Sequence[np.ndarray]) -> None:
        for (_, param), value in zip(self.named_params(), values):
            param.value[...] = value

    def class_ids(self) -> List[int]:
        return [self.vocab.id(c) for c in CLASSES]


def build_model(
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    vocab: Vocabulary,
    task: str = CLASSIFICATION,
    level: Optional[str] = None,
    seed: int = 0,
) -> CaptionModel:
    """Fresh model; component ``k`` draws from stream ``(seed, 0, k)``."""
    model = CaptionModel(encoder, decoder, vocab, task, level)
    layers: List[Tuple[str, object]] = []
    c_in = encoder.channels
    for i, c_out in enumerate(encoder.blocks):
        layers.append((f"encoder.block{i}", lambda r, a=c_in, b=c_out: init_conv(a, b, r)))
        c_in = c_out
    layers.append(("encoder.proj", lambda r: init_dense(encoder.flat_dim, encoder.feature_dim, r)))
    layers.append(
        ("decoder.init", lambda r: init_dense(encoder.feature_dim, decoder.hidden, r, relu=False))
    )
    if decoder.cell == LSTM:
        layers.append(
            (
                "decoder.init_c",
                lambda r: init_dense(encoder.feature_dim, decoder.hidden, r, relu=False),
            )
        )
    layers.append(("decoder.embed", lambda r: init_embedding(len(vocab), decoder.embed_dim, r)))
    cell_init = init_lstm if decoder.cell == LSTM else init_gru
    layers.append(("decoder.cell", lambda r: cell_init(decoder.embed_dim, decoder.hidden, r)))
    layers.append(
        ("decoder.head", lambda r: init_dense(decoder.hidden, len(vocab), r, std=HEAD_INIT_STD))
    )
    for k, (name, make) in enumerate(layers):
        model.params[name] = make(Rng(seed, 0, k))
    return model


# -- forward / backward ---------------------------------------------------------------


def encode_batch(model: CaptionModel, images: np.ndarray):
    cfg = model.encoder
    expected = (cfg.channels, cfg.height, cfg.width)
    if images.ndim != 4 or tuple(images.shape[1:]) != expected:
        raise ShapeMismatch(detail=f"images {images.shape} vs encoder input {expected}")
    caches = []
    x = images
    for i in range(len(cfg.blocks)):
        x, c_conv = conv2d(x, model.params[f"encoder.block{i}"])
        x, c_relu = relu(x)
        x, c_pool = maxpool2(x)
        caches.append((c_conv, c_relu, c_pool))
    feats, c_proj = dense(x.reshape(x.shape[0], -1), model.params["encoder.proj"])
    return feats, (caches, c_proj, x.shape)


def encoder_backward(model: CaptionModel, dfeats: np.ndarray, cache) -> np.ndarray:
    caches, c_proj, shape = cache
    dx = dense_backward(dfeats, c_proj, model.params["encoder.proj"]).reshape(shape)
    for i in reversed(range(len(caches))):
        c_conv, c_relu, c_pool = caches[i]
        dx = maxpool2_backward(dx, c_pool)
        dx = relu_backward(dx, c_relu)
        dx = conv2d_backward(dx, c_conv, model.params[f"encoder.block{i}"])
    return dx


def encode_image(image: np.ndarray, model: CaptionModel) -> np.ndarray:
    feats, _ = encode_batch(model, np.asarray(image, dtype=DTYPE)[None])
    return feats[0]


def init_state_batch(model: CaptionModel, feats: np.ndarray):
    pre_h, c_h = dense(feats, model.params["decoder.init"])
    h0 = np.tanh(pre_h)
    if not model.is_lstm:
        return h0, (c_h, h0, None, None)
    pre_c, c_c = dense(feats, model.params["decoder.init_c"])
    c0 = np.tanh(pre_c)
    return (h0, c0), (c_h, h0, c_c, c0)


def init_state_backward(model: CaptionModel, dstate, cache) -> np.ndarray:
    c_h, h0, c_c, c0 = cache
    if not model.is_lstm:
        return dense_backward(dstate * (1.0 - h0**2), c_h, model.params["decoder.init"])
    dh, dc = dstate
    dfeats = dense_backward(dh * (1.0 - h0**2), c_h, model.params["decoder.init"])
    return dfeats + dense_backward(dc * (1.0 - c0**2), c_c, model.params["decoder.init_c"])


def init_decoder_state(features: np.ndarray, model: CaptionModel):
    """``h0`` (GRU) or ``(h0, c0)`` (LSTM) for a single feature vector."""
    features = np.asarray(features, dtype=DTYPE)
    if features.shape != (model.encoder.feature_dim,):
        raise ShapeMismatch(
            detail=f"features {features.shape} vs feature_dim {model.encoder.feature_dim}"
        )
    state, _ = init_state_batch(model, features[None])
    if model.is_lstm:
        return state[0][0], state[1][0]
    return state[0]


def step_batch(model: CaptionModel, prev_ids: np.ndarray, state):
    x, c_emb = embedding(prev_ids, model.params["decoder.embed"])
    cell = model.params["decoder.cell"]
    if model.is_lstm:
        (h, c), c_cell = lstm_cell(x, state, cell)
        new_state = (h, c)
    else:
        h, c_cell = gru_cell(x, state, cell)
        new_state = h
    logits, c_head = dense(h, model.params["decoder.head"])
    return logits, new_state, (c_emb, c_cell, c_head)


def step_backward(model: CaptionModel, dlogits: np.ndarray, dnext, cache):
    c_emb, c_cell, c_head = cache
    dh = dense_backward(dlogits, c_head, model.params["decoder.head"])
    cell = model.params["decoder.cell"]
    if model.is_lstm:
        dh_next, dc_next = dnext
        dx, dh_prev, dc_prev = lstm_cell_backward(dh + dh_next, dc_next, c_cell, cell)
        dprev = (dh_prev, dc_prev)
    else:
        dx, dprev = gru_cell_backward(dh + dnext, c_cell, cell)
    embedding_backward(dx, c_emb, model.params["decoder.embed"])
    return dprev


def decode_step(prev_token_id: int, state, model: CaptionModel):
    """One decoder step for a single sequence: ``(logits[vocab], new_state)``."""
    if model.is_lstm:
        batch_state = (np.asarray(state[0])[None], np.asarray(state[1])[None])
    else:
        batch_state = np.asarray(state)[None]
    logits, new_state, _ = step_batch(model, np.array([prev_token_id]), batch_state)
    if model.is_lstm:
        return logits[0], (new_state[0][0], new_state[1][0])
    return logits[0], new_state[0]


def _zeros_like_state(state):
    if isinstance(state, tuple):
        return tuple(np.zeros_like(s) for s in state)
    return np.zeros_like(state)


def sequence_loss(
    model: CaptionModel,
    images: np.ndarray,
    inputs: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
    backward: bool = True,
) -> float:
    """Teacher-forced masked cross-entropy; with ``backward`` grads accumulate into params."""
    feats, enc_cache = encode_batch(model, images)
    state, init_cache = init_state_batch(model, feats)
    n, steps = inputs.shape
    logits_seq, caches = [], []
    for t in range(steps):
        logits, state, cache = step_batch(model, inputs[:, t], state)
        logits_seq.append(logits)
        caches.append(cache)
    stacked = np.stack(logits_seq, axis=1).reshape(n * steps, -1)
    loss, dlogits = softmax_xent(stacked, targets.reshape(-1), mask.reshape(-1))
    if not backward:
        return loss
    dlogits = dlogits.reshape(n, steps, -1)
    dstate = _zeros_like_state(state)
    for t in reversed(range(steps)):
        dstate = step_backward(model, dlogits[:, t], dstate, caches[t])
    encoder_backward(model, init_state_backward(model, dstate, init_cache), enc_cache)
    return loss


# -- sequences ------------------------------------------------------------------------


def target_tokens(sample: Sample, task: str, level: Optional[str]) -> List[str]:
    if task == CLASSIFICATION:
        return [sample.jewelry_class]
    return tokenize(sample.caption(level))


def encode_sequences(token_lists: Sequence[List[str]], vocab: Vocabulary, max_len: int):
    """Padded ``(inputs, targets, mask)`` arrays; targets end with ``<end>``."""
    ids = [vocab.encode(tokens)[: max_len - 1] for tokens in token_lists]
    steps = max((len(seq) + 1 for seq in ids), default=1)
    n = len(ids)
    inputs = np.full((n, steps), vocab.pad_id, dtype=np.int64)
    targets = np.full((n, steps), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((n, steps), dtype=DTYPE)
    for row, seq in enumerate(ids):
        full_in = [vocab.start_id] + seq
        full_out = seq + [vocab.end_id]
        inputs[row, : len(full_in)] = full_in
        targets[row, : len(full_out)] = full_out
        mask[row, : len(full_out)] = 1.0
    return inputs, targets, mask


def vocab_for(task: str, samples: Sequence[Sample], level: Optional[str]) -> Vocabulary:
    if task == CLASSIFICATION:
        return build_vocab(list(CLASSES))
    return build_vocab([s.caption(level) for s in samples])


# -- inference ------------------------------------------------------------------------


def _chunks(n: int, size: int) -> Iterator[slice]:
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def predict_classes(images: np.ndarray, model: CaptionModel) -> List[str]:
    if model.task != CLASSIFICATION:
        raise TaskMismatch(actual=model.task, expected=CLASSIFICATION)
    ids = model.class_ids()
    out: List[str] = []
    for part in _chunks(len(images), EVAL_CHUNK):
        feats, _ = encode_batch(model, images[part])
        state, _ = init_state_batch(model, feats)
        start = np.full(feats.shape[0], model.vocab.start_id)
        logits, _, _ = step_batch(model, start, state)
        # restricted argmax; np.argmax keeps the lowest index on ties
        out += [CLASSES[k] for k in np.argmax(logits[:, ids], axis=1)]
    return out


def predict_class(image: np.ndarray, model: CaptionModel) -> str:
    return predict_classes(np.asarray(image, dtype=DTYPE)[None], model)[0]


def greedy_decode_batch(
    images: np.ndarray,
    model: CaptionModel,
    max_len: Optional[int] = None,
    noise: Optional[Rng] = None,
) -> List[List[str]]:
    """Argmax decoding; ``noise`` adds Gumbel perturbations to the logits."""
    max_len = max_len or model.decoder.max_len
    vocab = model.vocab
    results: List[List[str]] = []
    for part in _chunks(len(images), EVAL_CHUNK):
        feats, _ = encode_batch(model, images[part])
        state, _ = init_state_batch(model, feats)
        n = feats.shape[0]
        prev = np.full(n, vocab.start_id)
        seqs: List[List[int]] = [[] for _ in range(n)]
        done = np.zeros(n, dtype=bool)
        for t in range(max_len):
            logits, state, _ = step_batch(model, prev, state)
            if noise is not None:
                logits = logits + noise.split(t).gumbel(logits.shape)
            ids = np.argmax(logits, axis=1)
            for k in range(n):
                if done[k]:
                    continue
                if ids[k] == vocab.end_id:
                    done[k] = True
                else:
                    seqs[k].append(int(ids[k]))
            if done.all():
                break
            prev = ids
        results += [vocab.decode(seq) for seq in seqs]
    return results


def greedy_decode(
    image: np.ndarray, model: CaptionModel, max_len: Optional[int] = None
) -> List[str]:
    return greedy_decode_batch(np.asarray(image, dtype=DTYPE)[None], model, max_len)[0]


def tokens_to_caption(tokens: Sequence[str]) -> str:
    text = detokenize(tokens)
    return text[:1].upper() + text[1:]


@dataclass
class CaptionResult:
    caption: str
    verdict: Verdict
    attempts: int


def caption_image(
    image: np.ndarray,
    model: CaptionModel,
    level: Optional[str] = None,
    retries: int = 0,
    seed: int = 0,
) -> CaptionResult:
    """Greedy caption, re-decoded with Gumbel noise up to ``retries`` times until it validates."""
    if model.task != CAPTIONING:
        raise TaskMismatch(actual=model.task, expected=CAPTIONING)
    level = DescriptionLevel(level or model.level)
    batch = np.asarray(image, dtype=DTYPE)[None]
    tokens = greedy_decode_batch(batch, model)[0]
    verdict = validate_tokens(tokens, level)
    attempts = 1
    for r in range(retries):
        if verdict:
            break
        tokens = greedy_decode_batch(batch, model, noise=Rng(seed, 2, r))[0]
        verdict = validate_tokens(tokens, level)
        attempts += 1
    return CaptionResult(tokens_to_caption(tokens), verdict, attempts)


def evaluate_classifier(model: CaptionModel, samples: Sequence[Sample], root=None) -> MetricsReport:
    images = stack_images(samples, root)
    predictions = predict_classes(images, model)
    return classification_report(predictions, [s.jewelry_class for s in samples])


def caption_samples(model: CaptionModel, samples: Sequence[Sample], root=None) -> List[str]:
    images = stack_images(samples, root)
    return [tokens_to_caption(t) for t in greedy_decode_batch(images, model)]


def evaluate_captioner(model: CaptionModel, samples: Sequence[Sample], root=None) -> float:
    generated = caption_samples(model, samples, root)
    return exact_match(generated, [s.caption(model.level) for s in samples])


def score_images(model: CaptionModel, images: np.ndarray, samples: Sequence[Sample]) -> float:
    """CCR for classifiers, caption exact match for captioners."""
    if model.task == CLASSIFICATION:
        return ccr(predict_classes(images, model), [s.jewelry_class for s in samples])
    generated = [tokens_to_caption(t) for t in greedy_decode_batch(images, model)]
    return exact_match(generated, [s.caption(model.level) for s in samples])


def score(model: CaptionModel, samples: Sequence[Sample], root=None) -> float:
    return score_images(model, stack_images(samples, root), samples)


# -- training -------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: CaptionModel
    history: List[dict]
    best_epoch: int
    epochs_run: int
    stopped_early: bool


def _split_arrays(model: CaptionModel, samples: Sequence[Sample], root, task, level):
    images = stack_images(samples, root)
    tokens = [target_tokens(s, task, level) for s in samples]
    seqs = encode_sequences(tokens, model.vocab, model.decoder.max_len)
    return (images,) + seqs


def _batch_loss(model, arrays, index, backward):
    images, inputs, targets, mask = arrays
    sub_mask = mask[index]
    steps = max(int(sub_mask.sum(axis=1).max()), 1)
    loss = sequence_loss(
        model,
        images[index],
        inputs[index, :steps],
        targets[index, :steps],
        sub_mask[:, :steps],
        backward,
    )
    return loss, float(sub_mask.sum())


def _mean_loss(model, arrays) -> float:
    total, weight = 0.0, 0.0
    for part in _chunks(len(arrays[0]), EVAL_CHUNK):
        loss, w = _batch_loss(model, arrays, np.arange(part.start, part.stop), backward=False)
        total += loss * w
        weight += w
    return total / max(weight, 1.0)


def train(
    manifest: Manifest,
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    cfg: TrainConfig,
    root=None,
    log_path=None,
) -> TrainResult:
    """Train on the train split with early stopping on val loss; best epoch is restored."""
    train_set = manifest.by_split(TRAIN)
    val_set = manifest.by_split(VAL)
    if not train_set or not val_set:
        raise DatasetError(
            detail=f"need non-empty train and val splits, got {len(train_set)}/{len(val_set)}"
        )
    vocab = vocab_for(cfg.task, train_set, cfg.level)
    model = build_model(encoder, decoder, vocab, cfg.task, cfg.level, seed=cfg.seed)
    train_arrays = _split_arrays(model, train_set, root, cfg.task, cfg.level)
    val_arrays = _split_arrays(model, val_set, root, cfg.task, cfg.level)

    optimizer = Optimizer(cfg.optimizer)
    stopper = EarlyStop(patience=cfg.patience, min_delta=cfg.min_delta)
    history: List[dict] = []
    best = model.snapshot()
    best_ccr = 0.0
    stopped = False
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8")
    try:
        n = len(train_set)
        for epoch in range(1, cfg.max_epochs + 1):
            order = Rng(cfg.seed, 1, epoch).permutation(n)
            total, weight = 0.0, 0.0
            for start in range(0, n, cfg.batch_size):
                index = np.sort(order[start : start + cfg.batch_size])
                loss, w = _batch_loss(model, train_arrays, index, backward=True)
                if not math.isfinite(loss):
                    raise TrainingDiverged(detail=f"training loss {loss} at epoch {epoch}")
                optimizer.step(model.named_params())
                total += loss * w
                weight += w
            val_loss = _mean_loss(model, val_arrays)
            val_ccr = 0.0
            if math.isfinite(val_loss):
                val_ccr = score_images(model, val_arrays[0], val_set)
            record = {
                "epoch": epoch,
                "train_loss": total / max(weight, 1.0),
                "val_loss": val_loss,
                "val_ccr": val_ccr,
            }
            history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            decision = stopper.update(val_loss)
            if stopper.improved:
                best = model.snapshot()
                best_ccr = val_ccr
            if decision == Decision.STOP:
                stopped = True
                log(f"early stop at epoch {epoch}, best epoch {stopper.best_epoch}")
                break
    except TrainingDiverged as exc:
        log_exception(exc, prefix="train: ")
        raise
    finally:
        if log_file is not None:
            log_file.close()

    model.restore(best)
    model.meta = {
        "best_epoch": stopper.best_epoch,
        "best_val_loss": stopper.best_val_loss,
        "best_val_ccr": best_ccr,
        "epochs_run": len(history),
        "train": {
            "task": cfg.task,
            "level": cfg.level,
            "batch_size": cfg.batch_size,
            "optimizer": asdict(cfg.optimizer),
            "max_epochs": cfg.max_epochs,
            "patience": cfg.patience,
            "min_delta": cfg.min_delta,
            "seed": cfg.seed,
        },
    }
    log(
        f"trained {cfg.task} {decoder.cell}/{decoder.hidden} epochs={len(history)} "
        f"best_epoch={stopper.best_epoch} val_loss={stopper.best_val_loss:.6f}"
    )
    return TrainResult(model, history, stopper.best_epoch, len(history), stopped)


# -- checkpoints ----------------------------------------------------------------------


def checkpoint_bytes(model: CaptionModel) -> bytes:
    named = list(model.named_params())
    meta = {
        "format": FORMAT_VERSION,
        "task": model.task,
        "level": model.level,
        "encoder": asdict(model.encoder),
        "decoder": asdict(model.decoder),
        "vocab": model.vocab.tokens,
        "params": [[name, list(p.value.shape)] for name, p in named],
        "meta": model.meta,
    }
    text = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    blob = text.encode("utf-8")
    payload = b"".join(p.value.astype("<f8").tobytes() for _, p in named)
    return MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<Q", len(blob)) + blob + payload


def save_checkpoint(model: CaptionModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))


def checkpoint_from_bytes(data: bytes) -> CaptionModel:
    if len(data) < len(MAGIC) + 1 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(detail="bad magic")
    version = data[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(detail=f"unsupported version {version}")
    if len(data) < _HEADER:
        raise CheckpointCorrupt(detail="truncated header")
    (length,) = struct.unpack("<Q", data[len(MAGIC) + 1 : _HEADER])
    if len(data) < _HEADER + length:
        raise CheckpointCorrupt(detail="truncated metadata")
    try:
        meta = json.loads(data[_HEADER : _HEADER + length].decode("utf-8"))
        encoder = EncoderConfig(**meta["encoder"])
        decoder = DecoderConfig(**meta["decoder"])
        vocab = Vocabulary(meta["vocab"])
        layout = meta["params"]
    except (UnicodeDecodeError, KeyError, TypeError, ValueError, ConfigError) as exc:
        raise CheckpointCorrupt(detail=f"metadata unreadable: {exc}")
    task = meta.get("task", CLASSIFICATION)
    model = build_model(encoder, decoder, vocab, task, meta.get("level"))
    model.meta = meta.get("meta", {})
    named = list(model.named_params())
    if [[n, list(p.value.shape)] for n, p in named] != layout:
        raise CheckpointCorrupt(detail="parameter layout does not match configs")
    offset = _HEADER + length
    expected = offset + sum(p.value.size for _, p in named) * 8
    if len(data) != expected:
        raise CheckpointCorrupt(
            detail=f"payload is {len(data) - offset} bytes, expected {expected - offset}"
        )
    for _, param in named:
        count = param.value.size
        values = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        param.value[...] = values.reshape(param.value.shape)
        offset += count * 8
    return model


def load_checkpoint(path) -> CaptionModel:
    return checkpoint_from_bytes(Path(path).read_bytes())


# -- grid -----------------------------------------------------------------------------


@dataclass(frozen=True)
class GridPoint:
    cell: str
    encoder_scale: str
    neurons: int
    batch: int
    lr: float
    optimizer: str


@dataclass
class GridSpec:
    cells: Tuple[str, ...] = (GRU,)
    encoder_scales: Tuple[str, ...] = ("vgg-desk",)
    neurons: Tuple[int, ...] = (256,)
    batches: Tuple[int, ...] = (8,)
    lrs: Tuple[float, ...] = (0.001,)
    optimizers: Tuple[str, ...] = ("adam",)
    task: str = CLASSIFICATION
    level: Optional[str] = None
    max_epochs: int = DEFAULT_MAX_EPOCHS
    patience: int = DEFAULT_PATIENCE
    seed: int = 0
    image_size: int = DEFAULT_IMAGE_SIZE
    paper: bool = False

    def __post_init__(self):
        for scale in self.encoder_scales:
            if scale not in ENCODER_SCALES:
                raise ConfigError(detail=f"unknown encoder scale '{scale}'")
        if self.paper:
            try:
                for axis, values in (
                    ("cell", self.cells),
                    ("hidden", self.neurons),
                    ("batch", self.batches),
                    ("lr", self.lrs),
                    ("optimizer", self.optimizers),
                ):
                    for value in values:
                        validate_paper_axis(axis, value)
            except ValueError as exc:
                raise ConfigError(detail=str(exc))

    @classmethod
    def full(cls, cells=PAPER_CELLS, encoder_scales=("vgg-desk",), **kwargs) -> "GridSpec":
        """Every hidden size, batch size, learning rate and optimizer of the experiments."""
        return cls(
            cells=tuple(cells),
            encoder_scales=tuple(encoder_scales),
            neurons=PAPER_NEURONS,
            batches=PAPER_BATCH_SIZES,
            lrs=PAPER_LEARNING_RATES,
            optimizers=PAPER_OPTIMIZERS,
            paper=True,
            **kwargs,
        )

    def points(self) -> List[GridPoint]:
        return [
            GridPoint(cell, scale, neurons, batch, lr, opt)
            for cell, scale, neurons, batch, lr, opt in product(
                self.cells,
                self.encoder_scales,
                self.neurons,
                self.batches,
                self.lrs,
                self.optimizers,
            )
        ]


def _run_point(index: int, point: GridPoint, grid: GridSpec, manifest: Manifest, root) -> ResultRow:
    encoder = EncoderConfig.scaled(point.encoder_scale, size=grid.image_size)
    decoder = DecoderConfig(cell=point.cell, hidden=point.neurons)
    cfg = TrainConfig(
        task=grid.task,
        level=grid.level,
        batch_size=point.batch,
        optimizer=OptimizerConfig(point.optimizer, learning_rate=point.lr),
        max_epochs=grid.max_epochs,
        patience=grid.patience,
        seed=Rng(grid.seed, 3, index).seed_int(),
    )
    row = ResultRow(
        cnn=point.encoder_scale,
        rnn=point.cell,
        neurons=point.neurons,
        val_ccr=math.nan,
        val_loss=math.nan,
        test_ccr=math.nan,
        batch=point.batch,
        lr=point.lr,
        optimizer=point.optimizer,
    )
    try:
        result = train(manifest, encoder, decoder, cfg, root=root)
    except TrainingDiverged:
        row.diverged = True
        return row
    row.val_ccr = result.model.meta["best_val_ccr"]
    row.val_loss = result.model.meta["best_val_loss"]
    row.test_ccr = score(result.model, manifest.by_split(TEST), root)
    return row


def run_grid(manifest: Manifest, grid: GridSpec, root=None) -> List[ResultRow]:
    """One model per grid point; rows follow enumeration order."""
    points = grid.points()
    if not manifest.by_split(TEST):
        raise DatasetError(detail="grid runs need a non-empty test split")
    log(f"grid start points={len(points)} task={grid.task}")

    def run(item):
        index, point = item
        return _run_point(index, point, grid, manifest, root)

    workers = worker_count()
    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, enumerate(points)))
    else:
        rows = [run(item) for item in enumerate(points)]
    log(f"grid done points={len(rows)} diverged={sum(r.diverged for r in rows)}")
    return rows


# -- gradient suite -------------------------------------------------------------------


def _tiny_model(cell: str, seed: int) -> CaptionModel:
    vocab = Vocabulary(["<pad>", "<start>", "<end>", "<unk>", "a", "b", "c"])
    model = build_model(
        EncoderConfig(height=4, width=4, blocks=(2,), feature_dim=3),
        DecoderConfig(cell=cell, hidden=4, embed_dim=3, max_len=3),
        vocab,
        CAPTIONING,
        "basic",
        seed=seed,
    )
    # unit-scale head, non-zero biases
    rng = Rng(seed, 5)
    model.params["decoder.head"]["W"].value[...] = rng.normal(0.0, 1.0, (4, len(vocab)))
    for k, (name, param) in enumerate(model.named_params()):
        if name.rsplit(".", 1)[-1].startswith("b"):
            param.value[...] = rng.split(k).normal(0.0, 0.3, param.value.shape)
    return model


def _init_map_probe(cell: str, seed: int):
    model = _tiny_model(cell, seed)
    rng = Rng(seed, 6)
    feats = rng.normal(0.0, 1.0, (2, 3))
    proj = rng.split(1).normal(0.0, 1.0, (2, 4))
    proj_c = rng.split(2).normal(0.0, 1.0, (2, 4))
    names = ["decoder.init"] + (["decoder.init_c"] if model.is_lstm else [])

    def objective():
        model.zero_grad()
        state, cache = init_state_batch(model, feats)
        if model.is_lstm:
            loss = float(np.sum(state[0] * proj) + np.sum(state[1] * proj_c))
            dfeats = init_state_backward(model, (proj, proj_c), cache)
        else:
            loss = float(np.sum(state * proj))
            dfeats = init_state_backward(model, proj, cache)
        grads = {f"{n}.{p}": model.params[n][p].grad for n in names for p in ("W", "b")}
        grads["features"] = dfeats
        return loss, grads

    arrays = {f"{n}.{p}": model.params[n][p].value for n in names for p in ("W", "b")}
    arrays["features"] = feats
    return objective, arrays


def _captioner_probe(cell: str, seed: int):
    model = _tiny_model(cell, seed)
    # positive images, kernels and biases keep every conv pre-activation clear of the relu kink
    images = Rng(seed, 7).uniform(0.1, 1.0, (2, 3, 4, 4)).astype(DTYPE)
    conv = model.params["encoder.block0"]
    conv["W"].value[...] = np.abs(conv["W"].value) + 0.05
    conv["b"].value[...] = np.abs(conv["b"].value) + 0.1
    inputs = np.array([[1, 4, 5], [1, 6, 0]])
    targets = np.array([[4, 5, 2], [6, 2, 0]])
    mask = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]])

    def objective():
        model.zero_grad()
        loss = sequence_loss(model, images, inputs, targets, mask)
        return loss, {name: p.grad for name, p in model.named_params()}

    return objective, {name: p.value for name, p in model.named_params()}


_MODEL_PROBES = (("decoder_init", _init_map_probe), ("captioner", _captioner_probe))


def gradient_suite(
    seed: int = 0,
    probes: int = 100,
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> Dict[str, GradCheckReport]:
    """Layer checks plus the decoder init map and the unrolled 3-step captioner."""
    reports = run_layer_checks(seed=seed, probes=probes, eps=eps, tol=tol)
    for k, cell in enumerate((GRU, LSTM)):
        for j, (name, probe) in enumerate(_MODEL_PROBES):
            objective, arrays = probe(cell, seed + k)
            reports[f"{name}_{cell}"] = grad_check(
                objective, arrays, eps=eps, tol=tol, probes=probes, rng=Rng(seed, 8, k, j)
            )
    return reports
