"""Synthetic jewelry images, augmentation, stratified splits and the JSONL manifest.

The renderer draws one silhouette per class on a flat background:

    ring      filled annulus
    earrings  two mirrored drops in the upper half
    necklace  catenary arc of beads with a pendant
    bracelet  open thick ellipse with a gap on the right

Material picks the metal colour, stones are flat discs in a per-stone colour
that no metal or background pixel can take.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .config import DEFAULT_IMAGE_SIZE, DEFAULT_SPLIT_FRACTIONS, DEFAULT_STONE_POOL, worker_count
from .error_handler import (
    AugmentOutOfRange,
    ClassError,
    DatasetError,
    GrammarError,
    InvalidShape,
    LexiconMiss,
    ManifestParseError,
    StratificationError,
    log,
)
from .lexicon import (
    LEVELS,
    MATERIAL,
    DescriptionLevel,
    JewelryRecord,
    Lexicon,
    default_lexicon,
    generate_description,
    validate_description,
)
from .tensor import DTYPE, Rng, split
from .validators import validate_fractions

# Fixed class order; confusion matrices and class tokens follow it
CLASSES = ("necklace", "ring", "earrings", "bracelet")

TRAIN, VAL, TEST, UNSPLIT = "train", "val", "test", "none"
SPLITS = (TRAIN, VAL, TEST)

ORIGINAL, AUGMENTED = "original", "augmented"

MATERIAL_PALETTE = {
    "yellow gold": (0.87, 0.70, 0.22),
    "rose gold": (0.80, 0.50, 0.44),
    "white gold": (0.90, 0.88, 0.80),
    "silver": (0.55, 0.60, 0.70),
}

STONE_PALETTE = {
    "pearl": (0.98, 0.93, 0.84),
    "diamond": (0.70, 0.96, 1.00),
    "ruby": (0.88, 0.05, 0.20),
    "emerald": (0.05, 0.75, 0.30),
    "alexandrite": (0.45, 0.15, 0.55),
    "sapphire": (0.08, 0.20, 0.90),
    "oriental catseye": (0.75, 0.80, 0.10),
    "amethyst": (0.62, 0.25, 0.90),
    "topaz": (1.00, 0.52, 0.05),
    "tourmaline": (0.95, 0.30, 0.60),
    "aquamarine": (0.40, 0.90, 0.85),
    "chrysoprase": (0.45, 0.95, 0.45),
    "peridot": (0.65, 0.85, 0.05),
    "opal": (0.95, 0.75, 0.95),
    "zircon": (0.15, 0.65, 0.95),
    "jade": (0.10, 0.55, 0.35),
}

# features implied by each silhouette
CLASS_FEATURES = {
    "necklace": ["pendant"],
    "ring": [],
    "earrings": ["push-back clasp"],
    "bracelet": ["box clasp"],
}

MIN_RENDER_SIZE = 32
BACKGROUND_RANGE = (0.05, 0.35)


# -- rendering ------------------------------------------------------------------------


@dataclass(frozen=True)
class RenderSpec:
    jewelry_class: str
    material: str
    stone: Optional[str] = None
    stone_count: int = 1
    background_shade: float = 0.2
    geometry_jitter_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "jewelry_class": self.jewelry_class,
            "material": self.material,
            "stone": self.stone,
            "stone_count": self.stone_count,
            "background_shade": self.background_shade,
            "geometry_jitter_seed": self.geometry_jitter_seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RenderSpec":
        return cls(
            jewelry_class=raw["jewelry_class"],
            material=raw["material"],
            stone=raw.get("stone"),
            stone_count=int(raw.get("stone_count", 1)),
            background_shade=float(raw.get("background_shade", 0.2)),
            geometry_jitter_seed=int(raw.get("geometry_jitter_seed", 0)),
        )


def check_spec(spec: RenderSpec, lexicon: Optional[Lexicon] = None) -> None:
    lex = lexicon or default_lexicon()
    if spec.jewelry_class not in CLASSES:
        raise ClassError(jewelry_class=spec.jewelry_class)
    if spec.material not in MATERIAL_PALETTE:
        raise LexiconMiss(term=spec.material, category="renderable material")
    lex.get(spec.material, MATERIAL)
    if spec.stone is not None:
        lex.get(spec.stone, "stone")
        if spec.stone not in STONE_PALETTE:
            raise LexiconMiss(term=spec.stone, category="renderable stone")


class _Canvas:
    def __init__(self, h: int, w: int, shade: float):
        self.h, self.w = h, w
        self.pixels = np.full((3, h, w), float(shade), dtype=DTYPE)
        ys, xs = np.mgrid[0:h, 0:w]
        self.v = (ys + 0.5) / h
        self.u = (xs + 0.5) / w

    def paint(self, mask: np.ndarray, color) -> None:
        self.pixels[:, mask] = np.asarray(color, dtype=DTYPE)[:, None]

    def disc(self, cx: float, cy: float, r: float) -> np.ndarray:
        return (self.u - cx) ** 2 + (self.v - cy) ** 2 <= r * r


def _draw_ring(cv: _Canvas, jit, metal, stone, count):
    cx, cy, s = 0.5 + jit[0], 0.55 + jit[1], jit[2]
    d2 = (cv.u - cx) ** 2 + (cv.v - cy) ** 2
    cv.paint((d2 <= (0.30 * s) ** 2) & (d2 >= (0.19 * s) ** 2), metal)
    if stone is not None:
        for k in range(count):
            angle = -math.pi / 2 + (k - (count - 1) / 2) * 0.45
            r = 0.245 * s
            cv.paint(cv.disc(cx + r * math.cos(angle), cy + r * math.sin(angle), 0.065 * s), stone)


def _draw_earrings(cv: _Canvas, jit, metal, stone, count):
    s = jit[2]
    for side in (-1, 1):
        cx = 0.5 + side * (0.2 + jit[0])
        cy = 0.3 + jit[1]
        hook = (np.abs(cv.u - cx) <= 0.015) & (cv.v >= cy - 0.2 * s) & (cv.v <= cy)
        cv.paint(hook, metal)
        cv.paint(cv.disc(cx, cy, 0.11 * s), metal)
        if stone is not None:
            cv.paint(cv.disc(cx, cy, 0.055 * s), stone)


def _draw_necklace(cv: _Canvas, jit, metal, stone, count):
    s = jit[2]
    k = 5.0
    top, depth = 0.12 + jit[1], 0.45 * s
    norm = math.cosh(k * 0.38) - 1.0
    bottom = top
    for u in np.linspace(0.12, 0.88, 13):
        # catenary: highest at the ends, lowest in the middle
        sag = 1.0 - (math.cosh(k * (u - 0.5)) - 1.0) / norm
        y = top + depth * sag
        bottom = max(bottom, y)
        cv.paint(cv.disc(u + jit[0], y, 0.035), metal)
    pcx, pcy = 0.5 + jit[0], bottom + 0.12 * s
    cv.paint(cv.disc(pcx, pcy, 0.085 * s), metal)
    if stone is not None:
        cv.paint(cv.disc(pcx, pcy, 0.05 * s), stone)


def _draw_bracelet(cv: _Canvas, jit, metal, stone, count):
    cx, cy, s = 0.5 + jit[0], 0.5 + jit[1], jit[2]
    a, b = 0.36 * s, 0.24 * s
    q = ((cv.u - cx) / a) ** 2 + ((cv.v - cy) / b) ** 2
    angle = np.arctan2((cv.v - cy) / b, (cv.u - cx) / a)
    gap = np.abs(angle) < math.radians(25)
    cv.paint((q <= 1.0) & (q >= 0.62) & ~gap, metal)
    if stone is not None:
        for k in range(count):
            theta = -math.pi / 2 + (k - (count - 1) / 2) * 0.5
            r = 0.89
            cv.paint(
                cv.disc(cx + a * r * math.cos(theta), cy + b * r * math.sin(theta), 0.045 * s),
                stone,
            )


_DRAWERS = {
    "necklace": _draw_necklace,
    "ring": _draw_ring,
    "earrings": _draw_earrings,
    "bracelet": _draw_bracelet,
}


def render_sample(
    spec: RenderSpec, size: Tuple[int, int] = (DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE)
) -> np.ndarray:
    """Rasterize ``spec`` into a [3, h, w] image in [0, 1]."""
    h, w = size
    if h < MIN_RENDER_SIZE or w < MIN_RENDER_SIZE:
        raise InvalidShape(shape=[3, h, w], detail=f"render size must be >= {MIN_RENDER_SIZE}")
    check_spec(spec)
    rng = Rng(spec.geometry_jitter_seed)
    jitter = (
        float(rng.uniform(-0.04, 0.04)),
        float(rng.uniform(-0.04, 0.04)),
        float(rng.uniform(0.9, 1.1)),
    )
    canvas = _Canvas(h, w, spec.background_shade)
    stone = STONE_PALETTE[spec.stone] if spec.stone else None
    count = max(1, min(int(spec.stone_count), 5))
    _DRAWERS[spec.jewelry_class](canvas, jitter, MATERIAL_PALETTE[spec.material], stone, count)
    return canvas.pixels


def record_from_spec(spec: RenderSpec) -> JewelryRecord:
    return JewelryRecord(
        jewelry_type=spec.jewelry_class,
        materials=[spec.material],
        stones=[spec.stone] if spec.stone else [],
        features=list(CLASS_FEATURES[spec.jewelry_class]),
        stone_count=spec.stone_count,
    )


def captions_for(spec: RenderSpec, lexicon: Optional[Lexicon] = None) -> Dict[str, str]:
    """Canonical gold caption per level; each must validate at its level."""
    record = record_from_spec(spec)
    captions = {}
    for level in LEVELS:
        text = generate_description(record, level, superlatives=True, rng=None, lexicon=lexicon)
        verdict = validate_description(text, level, lexicon)
        if not verdict:
            raise GrammarError(level=level.value, detail=f"{text!r}: {verdict.reason}")
        captions[level.value] = text
    return captions


# -- augmentation ---------------------------------------------------------------------


class AugmentKind(str, Enum):
    ROTATE90 = "rotate90"
    WIDTH_SHIFT = "width_shift"
    HEIGHT_SHIFT = "height_shift"
    CUT = "cut"
    ZOOM = "zoom"
    COLOR_JITTER = "color_jitter"
    FLIP_H = "flip_h"
    FLIP_V = "flip_v"
    BRIGHTNESS = "brightness"


# (low, high) admissible magnitude per kind
AUGMENT_BOUNDS = {
    AugmentKind.ROTATE90: (1, 3),
    AugmentKind.WIDTH_SHIFT: (-0.30, 0.30),
    AugmentKind.HEIGHT_SHIFT: (-0.30, 0.30),
    AugmentKind.CUT: (0.0, 0.15),
    AugmentKind.ZOOM: (-0.05, 0.05),
    AugmentKind.COLOR_JITTER: (0.0, 0.05),
    AugmentKind.FLIP_H: (0.0, 0.0),
    AugmentKind.FLIP_V: (0.0, 0.0),
    AugmentKind.BRIGHTNESS: (0.2, 1.8),
}


@dataclass(frozen=True)
class AugmentOp:
    """One label-preserving transform.

    ``value`` is the quarter-turn count for ROTATE90, the signed shift
    fraction for shifts, the erased area fraction for CUT, the relative scale
    change for ZOOM, the maximum per-channel gain deviation for COLOR_JITTER
    and the multiplicative factor for BRIGHTNESS. Flips take no value.
    """

    kind: AugmentKind
    value: float = 0.0

    def __post_init__(self):
        kind = AugmentKind(self.kind)
        object.__setattr__(self, "kind", kind)
        low, high = AUGMENT_BOUNDS[kind]
        value = self.value
        bad = not (low <= value <= high)
        if kind == AugmentKind.ROTATE90 and int(value) != value:
            bad = True
        if bad:
            raise AugmentOutOfRange(kind=kind.value, value=value, bounds=[low, high])

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value}

    @classmethod
    def from_dict(cls, raw: dict) -> "AugmentOp":
        return cls(AugmentKind(raw["kind"]), raw.get("value", 0.0))


def sample_augment(rng: Rng) -> AugmentOp:
    kind = rng.choice(list(AugmentKind))
    low, high = AUGMENT_BOUNDS[kind]
    if kind == AugmentKind.ROTATE90:
        return AugmentOp(kind, int(rng.integers(1, 4)))
    if low == high:
        return AugmentOp(kind)
    return AugmentOp(kind, float(rng.uniform(low, high)))


def border_shade(image: np.ndarray) -> np.ndarray:
    border = np.concatenate(
        [image[:, 0, :], image[:, -1, :], image[:, :, 0], image[:, :, -1]], axis=1
    )
    return np.median(border, axis=1)


def _shift(image, dy: int, dx: int, fill):
    _, h, w = image.shape
    out = np.empty_like(image)
    out[:] = fill[:, None, None]
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[:, dst_y, dst_x] = image[:, src_y, src_x]
    return out


def _zoom(image, scale: float, fill):
    _, h, w = image.shape
    sy = np.floor((np.arange(h) + 0.5 - h / 2) / scale + h / 2).astype(np.int64)
    sx = np.floor((np.arange(w) + 0.5 - w / 2) / scale + w / 2).astype(np.int64)
    valid = ((sy >= 0) & (sy < h))[:, None] & ((sx >= 0) & (sx < w))[None, :]
    out = image[:, np.clip(sy, 0, h - 1)][:, :, np.clip(sx, 0, w - 1)]
    return np.where(valid[None], out, fill[:, None, None])


def apply_augment(image: np.ndarray, op: AugmentOp, rng: Rng, fill=None) -> np.ndarray:
    """Apply ``op``; shape is preserved and the result is clamped to [0, 1].

    Regions exposed by shift, zoom or cut take ``fill`` (per-channel shade),
    which defaults to the median border colour of the input.
    """
    _, h, w = image.shape
    if fill is None:
        shade = border_shade(image)
    else:
        shade = np.broadcast_to(np.asarray(fill, dtype=DTYPE), (3,))
    kind = op.kind
    if kind == AugmentKind.ROTATE90:
        k = int(op.value)
        if k % 2 and h != w:
            raise InvalidShape(
                shape=list(image.shape), detail="odd quarter turns need a square image"
            )
        out = np.rot90(image, k, axes=(1, 2))
    elif kind == AugmentKind.WIDTH_SHIFT:
        out = _shift(image, 0, int(round(op.value * w)), shade)
    elif kind == AugmentKind.HEIGHT_SHIFT:
        out = _shift(image, int(round(op.value * h)), 0, shade)
    elif kind == AugmentKind.CUT:
        side = math.sqrt(op.value)
        ch, cw = int(side * h), int(side * w)
        out = image.copy()
        if ch and cw:
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            out[:, y0 : y0 + ch, x0 : x0 + cw] = shade[:, None, None]
    elif kind == AugmentKind.ZOOM:
        out = _zoom(image, 1.0 + op.value, shade)
    elif kind == AugmentKind.COLOR_JITTER:
        gains = 1.0 + rng.uniform(-op.value, op.value, 3) if op.value else np.ones(3)
        out = image * gains[:, None, None]
    elif kind == AugmentKind.FLIP_H:
        out = image[:, :, ::-1]
    elif kind == AugmentKind.FLIP_V:
        out = image[:, ::-1, :]
    elif kind == AugmentKind.BRIGHTNESS:
        out = image * op.value
    else:
        raise ValueError(f"unknown augmentation {kind}")
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0), dtype=DTYPE)


# -- samples and manifests ------------------------------------------------------------


@dataclass(frozen=True)
class Provenance:
    kind: str = ORIGINAL
    parent_id: Optional[str] = None
    op: Optional[AugmentOp] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "parent_id": self.parent_id,
            "op": self.op.to_dict() if self.op else None,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Provenance":
        op = raw.get("op")
        return cls(raw["kind"], raw.get("parent_id"), AugmentOp.from_dict(op) if op else None)


@dataclass
class Sample:
    id: str
    jewelry_class: str
    captions: Dict[str, str]
    spec: RenderSpec
    split: str = UNSPLIT
    provenance: Provenance = field(default_factory=Provenance)
    path: str = ""
    image: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def is_original(self) -> bool:
        return self.provenance.kind == ORIGINAL

    def caption(self, level) -> str:
        return self.captions[DescriptionLevel(level).value]

    def to_row(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "split": self.split,
            "class": self.jewelry_class,
            "caption_basic": self.captions["basic"],
            "caption_normal": self.captions["normal"],
            "caption_complete": self.captions["complete"],
            "spec": self.spec.to_dict(),
            "provenance": self.provenance.to_dict(),
        }


MANIFEST_FIELDS = (
    "id",
    "path",
    "split",
    "class",
    "caption_basic",
    "caption_normal",
    "caption_complete",
    "spec",
    "provenance",
)


@dataclass
class Manifest:
    samples: List[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def originals(self) -> List[Sample]:
        return [s for s in self.samples if s.is_original]

    def by_split(self, split_name: str) -> List[Sample]:
        return [s for s in self.samples if s.split == split_name]

    def get(self, sample_id: str) -> Sample:
        for sample in self.samples:
            if sample.id == sample_id:
                return sample
        raise KeyError(sample_id)


def _sample_spec(rng: Rng, jewelry_class: str, stone_pool: Sequence[str]) -> RenderSpec:
    stones: List[Optional[str]] = [None] + list(stone_pool)
    stone = rng.choice(stones)
    count = 1 if jewelry_class in ("necklace", "earrings") else int(rng.integers(1, 4))
    return RenderSpec(
        jewelry_class=jewelry_class,
        material=rng.choice(list(MATERIAL_PALETTE)),
        stone=stone,
        stone_count=count if stone else 1,
        background_shade=round(float(rng.uniform(*BACKGROUND_RANGE)), 6),
        geometry_jitter_seed=int(rng.integers(0, 2**31 - 1)),
    )


def _build_group(i: int, multiplier: int, master_seed: int, size: int, stone_pool, lexicon):
    rng = split(master_seed, i, 0)
    jewelry_class = CLASSES[i % len(CLASSES)]
    spec = _sample_spec(rng, jewelry_class, stone_pool)
    captions = captions_for(spec, lexicon)
    image = render_sample(spec, (size, size))
    parent_id = f"s{i:05d}"
    group = [
        Sample(
            parent_id, jewelry_class, captions, spec, path=f"images/{parent_id}.png", image=image
        )
    ]
    for j in range(multiplier):
        aug_rng = split(master_seed, i, j + 1)
        op = sample_augment(aug_rng)
        child_id = f"{parent_id}-a{j}"
        group.append(
            Sample(
                child_id,
                jewelry_class,
                dict(captions),
                spec,
                provenance=Provenance(AUGMENTED, parent_id, op),
                path=f"images/{child_id}.png",
                image=apply_augment(image, op, aug_rng.split(1), fill=spec.background_shade),
            )
        )
    return group


def build_dataset(
    n_base: int,
    augment_multiplier: int,
    master_seed: int,
    size: int = DEFAULT_IMAGE_SIZE,
    stone_pool: Sequence[str] = DEFAULT_STONE_POOL,
    lexicon: Optional[Lexicon] = None,
) -> Manifest:
    """Render ``n_base`` originals round-robin over classes plus ``k`` children each.

    Every original ``i`` draws from stream ``(seed, i, 0)`` and its ``j``-th
    child from ``(seed, i, j + 1)``, so thread count never changes the output.
    """
    if n_base < len(CLASSES):
        raise DatasetError(detail=f"n_base must be >= {len(CLASSES)}, got {n_base}")
    if augment_multiplier < 0:
        raise DatasetError(detail=f"augment multiplier must be >= 0, got {augment_multiplier}")

    def make(i):
        return _build_group(i, augment_multiplier, master_seed, size, stone_pool, lexicon)

    workers = worker_count()
    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(make, range(n_base)))
    else:
        groups = [make(i) for i in range(n_base)]
    samples = [s for group in groups for s in group]
    log(
        f"dataset built n_base={n_base} k={augment_multiplier} seed={master_seed} "
        f"samples={len(samples)}"
    )
    return Manifest(samples)


def split_counts(
    n: int, fractions: Sequence[float] = DEFAULT_SPLIT_FRACTIONS
) -> Tuple[int, int, int]:
    """Floor for train and val, remainder for test."""
    n_train = int(math.floor(fractions[0] * n + 1e-9))
    n_val = int(math.floor(fractions[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split_dataset(
    manifest: Manifest,
    fractions: Sequence[float] = DEFAULT_SPLIT_FRACTIONS,
    master_seed: int = 0,
) -> Manifest:
    """Tag originals per class; augmented children follow their parent."""
    fractions = validate_fractions(list(fractions))
    originals = manifest.originals()
    assigned: Dict[str, str] = {}
    for ci, jewelry_class in enumerate(CLASSES):
        members = [s.id for s in originals if s.jewelry_class == jewelry_class]
        if not members:
            raise StratificationError(jewelry_class=jewelry_class)
        order = split(master_seed, ci).permutation(len(members))
        n_train, n_val, _ = split_counts(len(members), fractions)
        for rank, k in enumerate(order):
            if rank < n_train:
                assigned[members[k]] = TRAIN
            elif rank < n_train + n_val:
                assigned[members[k]] = VAL
            else:
                assigned[members[k]] = TEST
    tagged = []
    for sample in manifest:
        key = sample.id if sample.is_original else sample.provenance.parent_id
        if key not in assigned:
            raise DatasetError(detail=f"sample {sample.id} has no original parent in the manifest")
        tagged.append(replace(sample, split=assigned[key]))
    return Manifest(tagged)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in manifest:
            fh.write(json.dumps(sample.to_row(), sort_keys=True, ensure_ascii=False) + "\n")


def _parse_row(line_no: int, text: str) -> Sample:
    try:
        row = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(line=line_no, detail=f"invalid JSON: {exc.msg}")
    if not isinstance(row, dict):
        raise ManifestParseError(line=line_no, detail="row must be an object")
    missing = [name for name in MANIFEST_FIELDS if name not in row]
    if missing:
        raise ManifestParseError(line=line_no, detail=f"missing field(s) {missing}")
    if row["split"] not in SPLITS + (UNSPLIT,):
        raise ManifestParseError(line=line_no, detail=f"unknown split {row['split']!r}")
    try:
        return Sample(
            id=row["id"],
            jewelry_class=row["class"],
            captions={
                "basic": row["caption_basic"],
                "normal": row["caption_normal"],
                "complete": row["caption_complete"],
            },
            spec=RenderSpec.from_dict(row["spec"]),
            split=row["split"],
            provenance=Provenance.from_dict(row["provenance"]),
            path=row["path"],
        )
    except (KeyError, TypeError, ValueError, AugmentOutOfRange) as exc:
        raise ManifestParseError(line=line_no, detail=str(exc))


def read_manifest(path) -> Manifest:
    samples = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            sample = _parse_row(line_no, text)
            if sample.id in seen:
                raise ManifestParseError(line=line_no, detail=f"duplicate id {sample.id}")
            seen.add(sample.id)
            samples.append(sample)
    return Manifest(samples)


# -- image files ----------------------------------------------------------------------


def save_png(image: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(pixels, "RGB").save(path, format="PNG")


def load_png(path, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """CHW float image in [0, 1]; ``size`` = (h, w) resamples bilinearly."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        if size is not None and img.size != (size[1], size[0]):
            img = img.resize((size[1], size[0]), Image.BILINEAR)
        pixels = np.asarray(img, dtype=DTYPE)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1) / 255.0)


def write_images(manifest: Manifest, root) -> None:
    root = Path(root)
    for sample in manifest:
        if sample.image is None:
            raise DatasetError(detail=f"sample {sample.id} has no image in memory")
        save_png(sample.image, root / sample.path)


def load_image(sample: Sample, root=None) -> np.ndarray:
    if sample.image is not None:
        return sample.image
    if root is None:
        raise DatasetError(detail=f"sample {sample.id} has no image and no root directory")
    return load_png(Path(root) / sample.path)


def stack_images(samples: Sequence[Sample], root=None) -> np.ndarray:
    if not samples:
        return np.zeros((0, 3, 1, 1), dtype=DTYPE)
    return np.stack([load_image(s, root) for s in samples]).astype(DTYPE)
