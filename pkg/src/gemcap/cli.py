"""gemcap command line.

Every command works inside a run directory (``--out``)::

    manifest.jsonl   dataset rows
    images/          rendered and augmented PNGs
    checkpoints/     classification.ckpt, captioning-<level>.ckpt
    log.jsonl        per-epoch records of the last training run
    report.txt|json  eval / grid output

Exit codes: 0 ok, 1 usage error, 2 runtime error, 3 acceptance check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .capnet import (
    CAPTIONING,
    CLASSIFICATION,
    TASKS,
    DecoderConfig,
    EncoderConfig,
    GridSpec,
    TrainConfig,
    caption_image,
    caption_samples,
    evaluate_classifier,
    gradient_suite,
    load_checkpoint,
    run_grid,
    save_checkpoint,
    train,
)
from .config import (
    DEFAULT_EMBED_DIM,
    DEFAULT_ENCODER_BLOCKS,
    DEFAULT_FEATURE_DIM,
    DEFAULT_IMAGE_SIZE,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_MAX_LEN,
    DEFAULT_MULTIPLIER,
    DEFAULT_N_BASE,
    DEFAULT_PATIENCE,
    DEFAULT_SEED,
    DEFAULT_SPLIT_FRACTIONS,
    ENCODER_SCALES,
    PAPER_CELLS,
    PRESETS,
)
from .dataforge import (
    AUGMENT_BOUNDS,
    CLASSES,
    SPLITS,
    TEST,
    AugmentKind,
    AugmentOp,
    RenderSpec,
    apply_augment,
    build_dataset,
    load_png,
    read_manifest,
    render_sample,
    save_png,
    split_dataset,
    write_images,
    write_manifest,
)
from .error_handler import ConfigError, GemcapError, log, log_exception
from .evalkit import FORMATS, JSON, TEXT, exact_match, render_metrics, render_report
from .lexicon import LEVELS, load_lexicon
from .optim import OPTIMIZERS, OptimizerConfig
from .tensor import Rng
from .validators import (
    validate_choice,
    validate_fractions,
    validate_image_size,
    validate_paper_axis,
    validate_positive_int,
)

OK, USAGE, RUNTIME, ACCEPTANCE = 0, 1, 2, 3

MANIFEST_NAME = "manifest.jsonl"
LOG_NAME = "log.jsonl"
CHECKPOINT_DIR = "checkpoints"

LEVEL_NAMES = tuple(level.value for level in LEVELS)


# -- run configuration ----------------------------------------------------------------


@dataclass
class DatasetSection:
    n_base: int = DEFAULT_N_BASE
    multiplier: int = DEFAULT_MULTIPLIER
    size: int = DEFAULT_IMAGE_SIZE
    seed: int = DEFAULT_SEED
    fractions: Tuple[float, ...] = DEFAULT_SPLIT_FRACTIONS


@dataclass
class ModelSection:
    encoder_scale: Optional[str] = None
    blocks: Tuple[int, ...] = DEFAULT_ENCODER_BLOCKS
    feature_dim: int = DEFAULT_FEATURE_DIM
    cell: str = "gru"
    hidden: int = 256
    embed_dim: int = DEFAULT_EMBED_DIM
    max_len: int = DEFAULT_MAX_LEN


@dataclass
class TrainSection:
    task: str = CLASSIFICATION
    level: Optional[str] = None
    batch: int = 8
    optimizer: str = "adam"
    lr: float = 0.001
    max_epochs: int = DEFAULT_MAX_EPOCHS
    patience: int = DEFAULT_PATIENCE
    seed: int = 0


@dataclass
class EvalSection:
    format: str = TEXT


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def merged(self, overrides: Dict[str, Dict[str, object]]) -> "RunConfig":
        """New config with ``{section: {key: value}}`` applied; unknown keys raise ConfigError."""
        if not isinstance(overrides, dict):
            raise ConfigError(detail="config root must be an object")
        sections = {}
        for name in (f.name for f in fields(self)):
            current = getattr(self, name)
            raw = overrides.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(detail=f"section '{name}' must be an object")
            known = {f.name for f in fields(current)}
            unknown = sorted(set(raw) - known)
            if unknown:
                raise ConfigError(detail=f"unknown key(s) {unknown} in section '{name}'")
            sections[name] = replace(current, **raw)
        unknown = sorted(set(overrides) - set(sections))
        if unknown:
            raise ConfigError(detail=f"unknown section(s) {unknown}")
        return RunConfig(**sections)

    def validate(self, paper: bool = False) -> "RunConfig":
        """Normalize enums and check ranges; raises ValueError on bad input."""
        d, m, t = self.dataset, self.model, self.train
        validate_positive_int(d.n_base, "dataset.n_base", min_val=len(CLASSES))
        validate_positive_int(d.multiplier, "dataset.multiplier", min_val=0)
        validate_positive_int(d.seed, "dataset.seed", min_val=0)
        d.fractions = validate_fractions(list(d.fractions), "dataset.fractions")
        if m.encoder_scale is not None:
            m.encoder_scale = validate_choice(
                m.encoder_scale, "model.encoder_scale", ENCODER_SCALES
            )
            m.blocks = ENCODER_SCALES[m.encoder_scale]
        m.blocks = tuple(validate_positive_int(b, "model.blocks") for b in m.blocks)
        validate_image_size(d.size, "dataset.size", blocks=len(m.blocks))
        for name in ("feature_dim", "hidden", "embed_dim", "max_len"):
            validate_positive_int(getattr(m, name), f"model.{name}")
        m.cell = validate_choice(m.cell, "model.cell", PAPER_CELLS)
        t.task = validate_choice(t.task, "train.task", TASKS)
        if t.task == CAPTIONING:
            t.level = validate_choice(t.level or "basic", "train.level", LEVEL_NAMES)
        t.optimizer = validate_choice(t.optimizer, "train.optimizer", OPTIMIZERS)
        validate_positive_int(t.batch, "train.batch")
        validate_positive_int(t.max_epochs, "train.max_epochs")
        validate_positive_int(t.patience, "train.patience")
        validate_positive_int(t.seed, "train.seed", min_val=0)
        self.eval.format = validate_choice(self.eval.format, "eval.format", FORMATS)
        if paper:
            validate_paper_axis("hidden", m.hidden)
            validate_paper_axis("batch", t.batch)
            validate_paper_axis("lr", t.lr)
            validate_paper_axis("optimizer", t.optimizer)
            validate_paper_axis("cell", m.cell)
        return self

    def encoder_config(self) -> EncoderConfig:
        size = self.dataset.size
        m = self.model
        return EncoderConfig(height=size, width=size, blocks=m.blocks, feature_dim=m.feature_dim)

    def decoder_config(self) -> DecoderConfig:
        m = self.model
        return DecoderConfig(cell=m.cell, hidden=m.hidden, embed_dim=m.embed_dim, max_len=m.max_len)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            task=t.task,
            level=t.level,
            batch_size=t.batch,
            optimizer=OptimizerConfig(t.optimizer, learning_rate=t.lr),
            max_epochs=t.max_epochs,
            patience=t.patience,
            seed=t.seed,
        )


_PRESET_KEYS = {
    "task": ("train", "task"),
    "hidden": ("model", "hidden"),
    "batch": ("train", "batch"),
    "optimizer": ("train", "optimizer"),
    "lr": ("train", "lr"),
    "encoder_scale": ("model", "encoder_scale"),
}

# flag dest -> (section, key)
_FLAG_KEYS = {
    "n": ("dataset", "n_base"),
    "multiplier": ("dataset", "multiplier"),
    "size": ("dataset", "size"),
    "data_seed": ("dataset", "seed"),
    "encoder_scale": ("model", "encoder_scale"),
    "cell": ("model", "cell"),
    "hidden": ("model", "hidden"),
    "max_len": ("model", "max_len"),
    "task": ("train", "task"),
    "level": ("train", "level"),
    "batch": ("train", "batch"),
    "optimizer": ("train", "optimizer"),
    "lr": ("train", "lr"),
    "max_epochs": ("train", "max_epochs"),
    "patience": ("train", "patience"),
    "seed": ("train", "seed"),
    "format": ("eval", "format"),
}


def _nest(pairs) -> Dict[str, Dict[str, object]]:
    out: Dict[str, Dict[str, object]] = {}
    for (section, key), value in pairs:
        out.setdefault(section, {})[key] = value
    return out


def preset_overrides(name: str) -> Dict[str, Dict[str, object]]:
    if name not in PRESETS:
        raise ConfigError(detail=f"unknown preset '{name}', expected one of {sorted(PRESETS)}")
    return _nest((_PRESET_KEYS[k], v) for k, v in PRESETS[name].items())


def load_run_config(path) -> Dict[str, Dict[str, object]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(detail=f"{path}: invalid JSON ({exc.msg})")
    except OSError as exc:
        raise ConfigError(detail=f"{path}: {exc.strerror}")


def resolve_config(args: argparse.Namespace, paper: bool = False) -> RunConfig:
    """defaults < preset < --config file < flags."""
    cfg = RunConfig()
    if getattr(args, "preset", None):
        cfg = cfg.merged(preset_overrides(args.preset))
    if getattr(args, "config", None):
        cfg = cfg.merged(load_run_config(args.config))
    flags = [(_FLAG_KEYS[k], v) for k, v in vars(args).items() if k in _FLAG_KEYS and v is not None]
    return cfg.merged(_nest(flags)).validate(paper=paper)


# -- parser ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, *, config: bool = True) -> None:
    p.add_argument("--out", default=".", help="run directory")
    if config:
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--preset", choices=sorted(PRESETS))


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="defaults to <out>/manifest.jsonl")
    p.add_argument("--size", type=int, help="image size the dataset was rendered at")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--level", choices=LEVEL_NAMES)
    p.add_argument("--encoder-scale", choices=sorted(ENCODER_SCALES))
    p.add_argument("--cell", choices=PAPER_CELLS)
    p.add_argument("--hidden", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gemcap", description="Jewelry image classification and captioning")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="render, augment and split a synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of original renders")
    p.add_argument("--multiplier", type=int, help="augmented children per original")
    p.add_argument("--size", type=int)
    p.add_argument("--seed", dest="data_seed", type=int)

    p = sub.add_parser("augment-preview", help="write one PNG per augmentation kind")
    _add_common(p, config=False)
    p.add_argument("--class", dest="jewelry_class", choices=CLASSES, default="ring")
    p.add_argument("--size", type=int, default=DEFAULT_IMAGE_SIZE)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = sub.add_parser("train", help="train a classifier or a per-level captioner")
    _add_common(p)
    _add_model_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    _add_common(p, config=False)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", help="defaults to <out>/checkpoints/classification.ckpt")
    p.add_argument("--split", choices=SPLITS, default=TEST)
    p.add_argument("--format", choices=FORMATS, default=TEXT)
    p.add_argument("--min-score", type=float, help="exit 3 when CCR / exact match falls below")

    p = sub.add_parser("caption", help="caption one image")
    _add_common(p, config=False)
    p.add_argument("image")
    p.add_argument("--checkpoint", help="defaults to <out>/checkpoints/captioning-<level>.ckpt")
    p.add_argument("--level", choices=LEVEL_NAMES, default="basic")
    p.add_argument("--retries", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("grad-check", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--format", choices=FORMATS, default=TEXT)

    p = sub.add_parser("grid", help="train one model per grid point and tabulate")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--paper-grid", action="store_true", help="full experimental axes")
    p.add_argument("--size", type=int)
    p.add_argument("--cell", dest="cells", action="append", choices=PAPER_CELLS)
    p.add_argument(
        "--encoder-scale", dest="scales", action="append", choices=sorted(ENCODER_SCALES)
    )
    p.add_argument("--neurons", type=int, nargs="+")
    p.add_argument("--batches", type=int, nargs="+")
    p.add_argument("--lrs", type=float, nargs="+")
    p.add_argument("--optimizers", nargs="+", choices=OPTIMIZERS)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--level", choices=LEVEL_NAMES)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dry-run", action="store_true", help="only enumerate the points")
    p.add_argument("--format", choices=FORMATS)

    p = sub.add_parser("dump-lexicon", help="print the lexicon as JSON")
    p.add_argument("--lexicon", help="JSON lexicon file; built-in when omitted")
    return parser


# -- commands -------------------------------------------------------------------------


def _out(args) -> Path:
    return Path(args.out)


def _manifest_path(args) -> Path:
    return Path(args.manifest) if getattr(args, "manifest", None) else _out(args) / MANIFEST_NAME


def _checkpoint_name(task: str, level: Optional[str]) -> str:
    return f"{task}.ckpt" if task == CLASSIFICATION else f"{task}-{level}.ckpt"


def _default_checkpoint(args, task: str, level: Optional[str]) -> Path:
    return _out(args) / CHECKPOINT_DIR / _checkpoint_name(task, level)


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args).dataset
    manifest = build_dataset(cfg.n_base, cfg.multiplier, cfg.seed, size=cfg.size)
    manifest = split_dataset(manifest, cfg.fractions, cfg.seed)
    out = _out(args)
    write_images(manifest, out)
    write_manifest(manifest, out / MANIFEST_NAME)
    counts = {name: len(manifest.by_split(name)) for name in SPLITS}
    summary = ", ".join(f"{k} {v}" for k, v in counts.items())
    _emit(f"wrote {len(manifest)} samples to {out} ({summary})")
    return OK


def preview_ops(seed: int) -> List[AugmentOp]:
    """One representative op per kind, deterministic in ``seed``."""
    ops = []
    for k, kind in enumerate(AugmentKind):
        low, high = AUGMENT_BOUNDS[kind]
        if kind == AugmentKind.ROTATE90:
            ops.append(AugmentOp(kind, 1))
        elif low == high:
            ops.append(AugmentOp(kind))
        else:
            ops.append(AugmentOp(kind, float(Rng(seed, 1, k).uniform(low, high))))
    return ops


def cmd_augment_preview(args) -> int:
    validate_image_size(args.size, "size")
    rng = Rng(args.seed)
    spec = RenderSpec(
        jewelry_class=args.jewelry_class,
        material="yellow gold",
        stone="diamond",
        stone_count=1,
        background_shade=0.2,
        geometry_jitter_seed=args.seed,
    )
    image = render_sample(spec, (args.size, args.size))
    root = _out(args) / "preview"
    save_png(image, root / "original.png")
    for k, op in enumerate(preview_ops(args.seed)):
        augmented = apply_augment(image, op, rng.split(k), fill=spec.background_shade)
        save_png(augmented, root / f"{op.kind.value}.png")
        _emit(json.dumps(op.to_dict(), sort_keys=True))
    return OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    manifest_path = _manifest_path(args)
    manifest = read_manifest(manifest_path)
    out = _out(args)
    result = train(
        manifest,
        cfg.encoder_config(),
        cfg.decoder_config(),
        cfg.train_config(),
        root=manifest_path.parent,
        log_path=out / LOG_NAME,
    )
    path = out / CHECKPOINT_DIR / _checkpoint_name(cfg.train.task, cfg.train.level)
    save_checkpoint(result.model, path)
    meta = result.model.meta
    _emit(
        f"saved {path} (epochs {result.epochs_run}, best epoch {result.best_epoch}, "
        f"val loss {meta['best_val_loss']:.4f}, val score {meta['best_val_ccr']:.4f})"
    )
    return OK


def cmd_eval(args) -> int:
    checkpoint = args.checkpoint or _default_checkpoint(args, CLASSIFICATION, None)
    model = load_checkpoint(checkpoint)
    manifest_path = _manifest_path(args)
    samples = read_manifest(manifest_path).by_split(args.split)
    root = manifest_path.parent
    if model.task == CLASSIFICATION:
        report = evaluate_classifier(model, samples, root)
        value = report.ccr
        text = render_metrics(report, TEXT)
        payload = report.to_dict()
    else:
        generated = caption_samples(model, samples, root)
        value = exact_match(generated, [s.caption(model.level) for s in samples])
        text = f"Caption exact match ({model.level}, {args.split}): {value:.4f}"
        payload = {"caption_exact_match": value, "level": model.level, "split": args.split}
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    rendered = json.dumps(payload, indent=2, sort_keys=True)
    (out / "report.json").write_text(rendered + "\n", encoding="utf-8")
    _emit(rendered if args.format == JSON else text)
    if args.min_score is not None and value < args.min_score:
        sys.stderr.write(f"score {value:.4f} below required {args.min_score:.4f}\n")
        return ACCEPTANCE
    return OK


def cmd_caption(args) -> int:
    validate_positive_int(args.retries, "retries", min_val=0)
    checkpoint = args.checkpoint or _default_checkpoint(args, CAPTIONING, args.level)
    model = load_checkpoint(checkpoint)
    image = load_png(args.image, (model.encoder.height, model.encoder.width))
    result = caption_image(image, model, level=args.level, retries=args.retries, seed=args.seed)
    if not result.verdict:
        v = result.verdict
        sys.stderr.write(
            f"caption '{result.caption}' invalid at {args.level} level after {result.attempts} "
            f"attempt(s): {v.reason} (token {v.position})\n"
        )
        return RUNTIME
    _emit(result.caption)
    return OK


def cmd_grad_check(args) -> int:
    validate_positive_int(args.probes, "probes")
    reports = gradient_suite(seed=args.seed, probes=args.probes)
    if args.format == JSON:
        payload = {
            name: {"max_rel_err": r.max_rel_err, "passed": r.passed, "probes": r.probes}
            for name, r in reports.items()
        }
        _emit(json.dumps(payload, indent=2, sort_keys=True))
    else:
        width = max(len(name) for name in reports)
        for name, r in reports.items():
            status = "ok  " if r.passed else "FAIL"
            _emit(f"{name:<{width}}  {status}  max rel err {r.max_rel_err:.3e}  ({r.worst})")
    failed = [name for name, r in reports.items() if not r.passed]
    if failed:
        log(f"grad-check failed: {failed}")
        return ACCEPTANCE
    return OK


def _grid_spec(args, cfg: RunConfig) -> GridSpec:
    t = cfg.train
    common = dict(
        task=t.task,
        level=t.level,
        max_epochs=t.max_epochs,
        patience=t.patience,
        seed=t.seed,
        image_size=cfg.dataset.size,
    )
    cells = tuple(args.cells or (cfg.model.cell,))
    scales = tuple(args.scales or (cfg.model.encoder_scale or "vgg-desk",))
    if args.paper_grid:
        return GridSpec.full(cells=cells, encoder_scales=scales, **common)
    return GridSpec(
        cells=cells,
        encoder_scales=scales,
        neurons=tuple(args.neurons or (cfg.model.hidden,)),
        batches=tuple(args.batches or (t.batch,)),
        lrs=tuple(args.lrs or (t.lr,)),
        optimizers=tuple(args.optimizers or (t.optimizer,)),
        **common,
    )


def cmd_grid(args) -> int:
    cfg = resolve_config(args, paper=args.paper_grid)
    grid = _grid_spec(args, cfg)
    points = grid.points()
    fmt = cfg.eval.format
    if args.dry_run:
        if fmt == JSON:
            payload = {"points": [asdict(p) for p in points], "count": len(points)}
            _emit(json.dumps(payload, indent=2))
        else:
            _emit(f"{len(points)} grid points")
        return OK
    manifest_path = _manifest_path(args)
    rows = run_grid(read_manifest(manifest_path), grid, root=manifest_path.parent)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    text = render_report(rows, TEXT)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    (out / "report.json").write_text(render_report(rows, JSON) + "\n", encoding="utf-8")
    _emit(text if fmt == TEXT else render_report(rows, JSON))
    return OK


def cmd_dump_lexicon(args) -> int:
    _emit(load_lexicon(args.lexicon).to_json())
    return OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "augment-preview": cmd_augment_preview,
    "train": cmd_train,
    "eval": cmd_eval,
    "caption": cmd_caption,
    "grad-check": cmd_grad_check,
    "grid": cmd_grid,
    "dump-lexicon": cmd_dump_lexicon,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_help(sys.stderr)
        return USAGE
    try:
        return COMMANDS[args.command](args)
    except ValueError as exc:
        sys.stderr.write(f"gemcap {args.command}: error: {exc}\n")
        return USAGE
    except GemcapError as exc:
        log_exception(exc, prefix=f"{args.command}: ")
        sys.stderr.write(f"gemcap {args.command}: {exc.message}\n")
        return RUNTIME
    except OSError as exc:
        log_exception(exc, prefix=f"{args.command}: ")
        sys.stderr.write(f"gemcap {args.command}: {exc}\n")
        return RUNTIME


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
