"""Jewelry terminology, the three description levels and the decoder vocabulary.

Descriptions are produced and checked at the token level. A token is a
lowercased word, a punctuation mark, or a multiword lexicon term joined with
underscores (``yellow_gold``). The grammar of each level is a set of
productions over token classes (TYPE, MATERIAL, STONE, COLOR, ADJ, CUT,
FEATURE, SUP) and literal function words; see docs/GRAMMAR.md for the full
list. Basic is contained in Normal, Normal in Complete.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

from .error_handler import (
    GrammarError,
    IncompleteRecord,
    LexiconConflict,
    LexiconMiss,
    LexiconParseError,
)
from .tensor import Rng

# -- categories -----------------------------------------------------------------------

TYPE = "type"
MATERIAL = "material"
PRECIOUS = "stone/precious"
SEMI_PRECIOUS = "stone/semi-precious"
COLOR = "color"
ADJECTIVE = "adjective"
SUPERLATIVE = "superlative"
CONNECTIVE = "connective"
FEATURE = "feature"

CATEGORIES = (
    TYPE,
    MATERIAL,
    PRECIOUS,
    SEMI_PRECIOUS,
    COLOR,
    ADJECTIVE,
    SUPERLATIVE,
    CONNECTIVE,
    FEATURE,
)

# Superlatives attach to one of these slots ("modifies" relation)
SLOTS = ("type", "material", "stone", "feature")

CONNECTIVES = ("in", "with", "and", "adorned with", "featuring")
PUNCTUATION = (".", ",")
ARTICLES = ("a", "an")


class DescriptionLevel(str, Enum):
    BASIC = "basic"
    NORMAL = "normal"
    COMPLETE = "complete"


LEVELS = (DescriptionLevel.BASIC, DescriptionLevel.NORMAL, DescriptionLevel.COMPLETE)


def _base(category: str) -> str:
    return category.split("/")[0]


@dataclass(frozen=True)
class LexiconEntry:
    term: str
    category: str
    gloss: str = ""
    relations: Tuple[Tuple[str, str], ...] = ()

    def relation(self, kind: str) -> Optional[str]:
        for rel_kind, value in self.relations:
            if rel_kind == kind:
                return value
        return None

    @property
    def base_category(self) -> str:
        return _base(self.category)

    def to_dict(self) -> dict:
        return {
            "term": self.term,
            "category": self.category,
            "gloss": self.gloss,
            "relations": [list(rel) for rel in self.relations],
        }


def as_token(surface: str) -> str:
    return surface.strip().lower().replace(" ", "_")


def _grammar_class(entry: LexiconEntry) -> Optional[str]:
    base = entry.base_category
    if base == TYPE:
        return "TYPE"
    if base == MATERIAL:
        return "MATERIAL"
    if base == "stone":
        return "STONE"
    if base == COLOR:
        return "COLOR"
    if base == ADJECTIVE:
        return "ADJ"
    if base == SUPERLATIVE:
        return "SUP"
    if base == FEATURE:
        return "CUT" if entry.relation("kind") == "cut" else "FEATURE"
    return None


class Lexicon:
    """Immutable after construction; safe for concurrent readers."""

    def __init__(self, entries: Iterable[LexiconEntry] = ()):
        self.entries: List[LexiconEntry] = []
        self._by_key: Dict[Tuple[str, str], LexiconEntry] = {}
        self._token_classes: Dict[str, set] = {}
        self._surfaces: Dict[Tuple[str, ...], str] = {}
        self.max_words = 1
        for entry in entries:
            self._add(entry)

    def _add(self, entry: LexiconEntry) -> None:
        key = (entry.base_category, entry.term)
        if key in self._by_key:
            raise LexiconConflict(term=entry.term, category=entry.base_category)
        self._by_key[key] = entry
        self.entries.append(entry)
        surfaces = [entry.term]
        plural = entry.relation("plural")
        if plural:
            surfaces.append(plural)
        cls = _grammar_class(entry)
        for surface in surfaces:
            words = tuple(surface.lower().split())
            token = as_token(surface)
            if len(words) > 1:
                self._surfaces[words] = token
                self.max_words = max(self.max_words, len(words))
            if cls:
                self._token_classes.setdefault(token, set()).add(cls)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, term: str, category: str) -> LexiconEntry:
        entry = self._by_key.get((_base(category), term))
        if entry is None or (category != _base(category) and entry.category != category):
            raise LexiconMiss(term=term, category=category)
        return entry

    def has(self, term: str, category: str) -> bool:
        try:
            self.get(term, category)
        except LexiconMiss:
            return False
        return True

    def terms(self, category: str) -> List[str]:
        if "/" in category:
            return [e.term for e in self.entries if e.category == category]
        return [e.term for e in self.entries if e.base_category == category]

    @property
    def precious_stones(self) -> List[str]:
        return self.terms(PRECIOUS)

    @property
    def semi_precious_stones(self) -> List[str]:
        return self.terms(SEMI_PRECIOUS)

    @property
    def stones(self) -> List[str]:
        return self.terms("stone")

    def token_classes(self, token: str) -> FrozenSet[str]:
        return frozenset(self._token_classes.get(token, ()))

    def multiword(self, words: Sequence[str]) -> Optional[str]:
        return self._surfaces.get(tuple(words))

    def surface(self, term: str, category: str, plural: bool = False) -> str:
        entry = self.get(term, category)
        if plural:
            return as_token(entry.relation("plural") or f"{term}s")
        return as_token(term)

    def to_json(self) -> str:
        return json.dumps([e.to_dict() for e in self.entries], ensure_ascii=False, indent=2)


# -- built-in lexicon -----------------------------------------------------------------

_DEFAULT_ENTRIES = [
    # jewelry types: the four classes first, then the wider catalog taxonomy
    ("necklace", TYPE, "chain or strand worn around the neck", [("plural", "necklaces")]),
    ("ring", TYPE, "band worn on a finger", [("plural", "rings")]),
    ("earrings", TYPE, "pair of ornaments worn on the ears", [("plural", "earrings")]),
    ("bracelet", TYPE, "band or chain worn around the wrist", [("plural", "bracelets")]),
    (
        "solitaire",
        TYPE,
        "ring set with a single stone",
        [("kind-of", "ring"), ("plural", "solitaires")],
    ),
    ("fob", TYPE, "ornament attached to a watch chain", [("plural", "fobs")]),
    ("locket", TYPE, "pendant that opens to hold a keepsake", [("plural", "lockets")]),
    ("armlet", TYPE, "band worn around the upper arm", [("plural", "armlets")]),
    (
        "finger ring",
        TYPE,
        "ring worn on a finger",
        [("kind-of", "ring"), ("plural", "finger rings")],
    ),
    ("watch", TYPE, "timepiece worn as jewelry", [("plural", "watches")]),
    ("button", TYPE, "decorative fastening", [("plural", "buttons")]),
    ("clip", TYPE, "ornamental clip", [("plural", "clips")]),
    ("cufflinks", TYPE, "pair of shirt cuff fasteners", [("plural", "cufflinks")]),
    ("pendant", TYPE, "ornament hanging from a chain", [("plural", "pendants")]),
    ("pin", TYPE, "ornamental pin or brooch", [("plural", "pins")]),
    ("tie clasp", TYPE, "clasp holding a tie", [("plural", "tie clasps")]),
    ("anklet", TYPE, "band worn around the ankle", [("plural", "anklets")]),
    ("toe ring", TYPE, "ring worn on a toe", [("kind-of", "ring"), ("plural", "toe rings")]),
    ("ear ornament", TYPE, "ornament worn on the ear", [("plural", "ear ornaments")]),
    ("hair ornament", TYPE, "ornament worn in the hair", [("plural", "hair ornaments")]),
    ("nose ornament", TYPE, "ornament worn on the nose", [("plural", "nose ornaments")]),
    # materials
    ("gold", MATERIAL, "gold alloy", []),
    ("yellow gold", MATERIAL, "gold alloyed with silver and copper", [("kind-of", "gold")]),
    ("rose gold", MATERIAL, "gold alloyed with copper", [("kind-of", "gold")]),
    ("white gold", MATERIAL, "gold alloyed with white metals", [("kind-of", "gold")]),
    ("silver", MATERIAL, "silver alloy", []),
    ("sterling silver", MATERIAL, "92.5% silver alloy", [("kind-of", "silver")]),
    ("platinum", MATERIAL, "platinum alloy", []),
    # the seven precious stones
    ("pearl", PRECIOUS, "organic gem formed in molluscs", [("plural", "pearls")]),
    ("diamond", PRECIOUS, "crystalline carbon", [("plural", "diamonds")]),
    ("ruby", PRECIOUS, "red corundum", [("plural", "rubies")]),
    ("emerald", PRECIOUS, "green beryl", [("plural", "emeralds")]),
    ("alexandrite", PRECIOUS, "colour-change chrysoberyl", [("plural", "alexandrites")]),
    ("sapphire", PRECIOUS, "blue corundum", [("plural", "sapphires")]),
    ("oriental catseye", PRECIOUS, "chatoyant chrysoberyl", [("plural", "oriental catseyes")]),
    # semi-precious stones
    ("amethyst", SEMI_PRECIOUS, "violet quartz", [("plural", "amethysts")]),
    ("topaz", SEMI_PRECIOUS, "silicate of aluminium and fluorine", [("plural", "topazes")]),
    ("tourmaline", SEMI_PRECIOUS, "boron silicate", [("plural", "tourmalines")]),
    ("aquamarine", SEMI_PRECIOUS, "blue-green beryl", [("plural", "aquamarines")]),
    ("chrysoprase", SEMI_PRECIOUS, "green chalcedony", [("plural", "chrysoprases")]),
    ("peridot", SEMI_PRECIOUS, "gem olivine", [("plural", "peridots")]),
    ("opal", SEMI_PRECIOUS, "hydrated silica", [("plural", "opals")]),
    ("zircon", SEMI_PRECIOUS, "zirconium silicate", [("plural", "zircons")]),
    ("jade", SEMI_PRECIOUS, "jadeite or nephrite", [("plural", "jades")]),
    # gem colours
    ("sky", COLOR, "light blue", []),
    ("blue", COLOR, "blue", []),
    ("red", COLOR, "red", []),
    ("green", COLOR, "green", []),
    ("white", COLOR, "white", []),
    ("black", COLOR, "black", []),
    ("pink", COLOR, "pink", []),
    ("violet", COLOR, "violet", []),
    ("champagne", COLOR, "pale golden brown", []),
    # placement and shape adjectives
    ("central", ADJECTIVE, "set in the middle of the piece", [("modifies", "stone")]),
    ("round", ADJECTIVE, "round shape", [("modifies", "stone")]),
    ("oval", ADJECTIVE, "oval shape", [("modifies", "stone")]),
    ("square", ADJECTIVE, "square shape", [("modifies", "stone")]),
    ("pear-shaped", ADJECTIVE, "drop shape", [("modifies", "stone")]),
    # optional superlatives
    ("sustainable", SUPERLATIVE, "responsibly sourced", [("modifies", "material")]),
    ("refined", SUPERLATIVE, "highly purified", [("modifies", "material")]),
    ("exquisite", SUPERLATIVE, "of exceptional beauty", [("modifies", "stone")]),
    ("dazzling", SUPERLATIVE, "brilliantly sparkling", [("modifies", "stone")]),
    ("luminous", SUPERLATIVE, "radiating light", [("modifies", "stone")]),
    ("secure", SUPERLATIVE, "firmly fastening", [("modifies", "feature")]),
    ("delicate", SUPERLATIVE, "finely made", [("modifies", "feature")]),
    ("iris", SUPERLATIVE, "collection model name", [("modifies", "type")]),
    ("timeless", SUPERLATIVE, "enduringly elegant", [("modifies", "type")]),
    # connectives
    ("in", CONNECTIVE, "material complement", []),
    ("with", CONNECTIVE, "plain complement", []),
    ("and", CONNECTIVE, "coordination", []),
    ("adorned with", CONNECTIVE, "embellished complement", []),
    ("featuring", CONNECTIVE, "embellished feature complement", []),
    # features
    ("brilliant-cut", FEATURE, "round brilliant cut", [("kind", "cut")]),
    ("princess-cut", FEATURE, "square cut", [("kind", "cut")]),
    ("emerald-cut", FEATURE, "step cut", [("kind", "cut")]),
    ("pendant", FEATURE, "hanging mount carrying a stone", [("kind", "mount")]),
    ("charm", FEATURE, "small hanging ornament", [("kind", "mount")]),
    ("push-back clasp", FEATURE, "butterfly earring back", [("kind", "clasp")]),
    ("screw-back clasp", FEATURE, "threaded earring back", [("kind", "clasp")]),
    ("lobster clasp", FEATURE, "spring-loaded hook clasp", [("kind", "clasp")]),
    ("box clasp", FEATURE, "tongue-and-box clasp", [("kind", "clasp")]),
    ("engraved pattern", FEATURE, "incised decoration", [("kind", "pattern")]),
    ("filigree pattern", FEATURE, "fine wire decoration", [("kind", "pattern")]),
]


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    return Lexicon(
        LexiconEntry(term, category, gloss, tuple(tuple(r) for r in relations))
        for term, category, gloss, relations in _DEFAULT_ENTRIES
    )


def _parse_entry(index: int, raw) -> LexiconEntry:
    if not isinstance(raw, dict):
        raise LexiconParseError(index=index, detail="entry must be an object")
    term = raw.get("term")
    category = raw.get("category")
    if not isinstance(term, str) or not term.strip():
        raise LexiconParseError(index=index, detail="missing term")
    if category not in CATEGORIES:
        raise LexiconParseError(index=index, detail=f"unknown category {category!r}")
    relations = raw.get("relations", [])
    try:
        rels = tuple((str(kind), str(value)) for kind, value in relations)
    except (TypeError, ValueError):
        raise LexiconParseError(index=index, detail="relations must be [kind, term] pairs")
    return LexiconEntry(term.strip().lower(), category, str(raw.get("gloss", "")), rels)


def load_lexicon(path=None) -> Lexicon:
    """Load a JSON lexicon file; ``None`` returns the built-in default."""
    if path is None:
        return default_lexicon()
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return Lexicon()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LexiconParseError(index=0, detail=f"invalid JSON: {exc}")
    if not isinstance(raw, list):
        raise LexiconParseError(index=0, detail="top level must be an array")
    return Lexicon(_parse_entry(i, item) for i, item in enumerate(raw))


# -- tokenization ---------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+(?:['-][a-z0-9]+)*|[.,;:!?]")


def tokenize(caption: str, lexicon: Optional[Lexicon] = None) -> List[str]:
    """Lowercase, split punctuation, join multiword lexicon terms by longest match."""
    lex = lexicon or default_lexicon()
    words = _WORD_RE.findall(caption.lower())
    tokens: List[str] = []
    i = 0
    while i < len(words):
        matched = None
        for span in range(min(lex.max_words, len(words) - i), 1, -1):
            token = lex.multiword(words[i : i + span])
            if token:
                matched = (token, span)
                break
        if matched:
            tokens.append(matched[0])
            i += matched[1]
        else:
            tokens.append(words[i])
            i += 1
    return tokens


def detokenize(tokens: Sequence[str]) -> str:
    text = ""
    for token in tokens:
        if token in PUNCTUATION or (len(token) == 1 and not token.isalnum()):
            text += token
        else:
            text += (" " if text else "") + token.replace("_", " ")
    return text


def _sentence_case(text: str) -> str:
    return text[:1].upper() + text[1:]


# -- records --------------------------------------------------------------------------


@dataclass
class JewelryRecord:
    """Semantic description of one item; the source of truth for captions.

    ``model_noun`` names a sub-type (e.g. "solitaire") used at Basic and
    Complete level; Normal names the generic ``jewelry_type``. ``phrasing``
    optionally pins a surface variant per level.
    """

    jewelry_type: Optional[str]
    materials: List[str]
    stones: List[str] = field(default_factory=list)
    colors: List[str] = field(default_factory=list)
    features: List[str] = field(default_factory=list)
    style_adjectives: List[str] = field(default_factory=list)
    stone_count: int = 1
    model_noun: Optional[str] = None
    phrasing: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "jewelry_type": self.jewelry_type,
            "materials": list(self.materials),
            "stones": list(self.stones),
            "colors": list(self.colors),
            "features": list(self.features),
            "style_adjectives": list(self.style_adjectives),
            "stone_count": self.stone_count,
            "model_noun": self.model_noun,
            "phrasing": dict(self.phrasing),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "JewelryRecord":
        return cls(
            jewelry_type=raw.get("jewelry_type"),
            materials=list(raw.get("materials", [])),
            stones=list(raw.get("stones", [])),
            colors=list(raw.get("colors", [])),
            features=list(raw.get("features", [])),
            style_adjectives=list(raw.get("style_adjectives", [])),
            stone_count=int(raw.get("stone_count", 1)),
            model_noun=raw.get("model_noun"),
            phrasing=dict(raw.get("phrasing", {})),
        )


def validate_record(record: JewelryRecord, lexicon: Lexicon) -> None:
    if not record.jewelry_type:
        raise IncompleteRecord(detail="jewelry_type is required")
    if not record.materials:
        raise IncompleteRecord(detail="at least one material is required")
    if record.stone_count < 1:
        raise IncompleteRecord(detail="stone_count must be >= 1")
    lexicon.get(record.jewelry_type, TYPE)
    if record.model_noun:
        lexicon.get(record.model_noun, TYPE)
    for term in record.materials:
        lexicon.get(term, MATERIAL)
    for term in record.stones:
        lexicon.get(term, "stone")
    for term in record.colors:
        lexicon.get(term, COLOR)
    for term in record.features:
        if not (lexicon.has(term, FEATURE) or lexicon.has(term, ADJECTIVE)):
            raise LexiconMiss(term=term, category="feature|adjective")
    for term in record.style_adjectives:
        lexicon.get(term, SUPERLATIVE)


# -- generation -----------------------------------------------------------------------


class _Parts:
    """Record terms resolved into the token pieces the templates assemble."""

    def __init__(self, record: JewelryRecord, lexicon: Lexicon, superlatives: bool):
        self.lex = lexicon
        self.record = record
        self.plural = record.stone_count > 1
        self.stones = list(record.stones)
        self.colors = [as_token(c) for c in record.colors]
        self.cuts, self.adjs, self.mounts, self.others = [], [], [], []
        for term in record.features:
            if lexicon.has(term, ADJECTIVE):
                self.adjs.append(as_token(term))
                continue
            kind = lexicon.get(term, FEATURE).relation("kind")
            bucket = {"cut": self.cuts, "mount": self.mounts}.get(kind, self.others)
            bucket.append(as_token(term))
        self.sups: Dict[str, List[str]] = {slot: [] for slot in SLOTS}
        if superlatives:
            for term in record.style_adjectives:
                slot = lexicon.get(term, SUPERLATIVE).relation("modifies") or "type"
                self.sups[slot].append(as_token(term))

    def noun(self, level: DescriptionLevel) -> str:
        if level != DescriptionLevel.NORMAL and self.record.model_noun:
            return as_token(self.record.model_noun)
        return as_token(self.record.jewelry_type)

    def materials(self) -> List[str]:
        out: List[str] = []
        for k, term in enumerate(self.record.materials):
            if k:
                out.append("and")
            out.append(as_token(term))
        return out

    def stone(self, term: str, plural: bool) -> str:
        return self.lex.surface(term, "stone", plural=plural)

    def normal_stones(self) -> List[str]:
        out = list(self.adjs) + [self.stone(self.stones[0], self.plural)]
        for term in self.stones[1:]:
            out += ["and", self.stone(term, self.plural)]
        return out

    def complete_stone_group(self, terms: Sequence[str]) -> List[str]:
        mods = self.sups["stone"]
        out: List[str] = []
        for k, sup in enumerate(mods):
            out.append(sup)
            # comma only before another superlative or a cut
            if k + 1 < len(mods) or self.cuts:
                out.append(",")
        out += self.cuts + self.adjs + self.colors + [self.stone(terms[0], self.plural)]
        for term in terms[1:]:
            out += ["and", self.stone(term, self.plural)]
        return out


def _article(next_token: str) -> str:
    return "an" if next_token[:1] in "aeiou" else "a"


def _with_article(tokens: List[str]) -> List[str]:
    return [_article(tokens[0])] + tokens


# Variant builders return the body tokens (no terminal period)


def _basic_type_with_mount(p: _Parts, level):
    return _with_article([p.noun(level), "with"] + _with_article([p.mounts[0]]))


def _basic_type_in_material(p: _Parts, level):
    return [p.noun(level), "in"] + p.materials()


def _basic_material_type(p: _Parts, level):
    return p.materials() + [p.noun(level)]


def _normal_stone_mount(p: _Parts, level):
    head = _with_article(p.materials() + [p.noun(level)])
    return head + ["with"] + _with_article([p.stone(p.stones[0], False), p.mounts[0]])


def _normal_material_and_stone(p: _Parts, level):
    return p.materials() + ["and", p.stone(p.stones[0], False), p.noun(level)]


def _normal_type_in_material_with(p: _Parts, level):
    return [p.noun(level), "in"] + p.materials() + ["with"] + p.normal_stones()


def _normal_material_type_with(p: _Parts, level):
    return p.materials() + [p.noun(level), "with"] + p.normal_stones()


def _complements(p: _Parts) -> List[str]:
    comps: List[Tuple[Optional[str], List[str]]] = []
    loose_stones = p.stones[1:] if p.mounts else p.stones
    if loose_stones:
        conn = "adorned_with" if p.sups["stone"] else "with"
        comps.append((conn, p.complete_stone_group(loose_stones)))
    feature_sups = list(p.sups["feature"])
    features = [(m, True) for m in p.mounts[:1]] + [(f, False) for f in p.mounts[1:] + p.others]
    for term, hosts_stone in features:
        phrase = list(feature_sups)
        if hosts_stone and p.stones:
            if not loose_stones:
                phrase += p.sups["stone"]
            phrase.append(p.stone(p.stones[0], False))
        phrase.append(term)
        comps.append(("featuring" if feature_sups else None, _with_article(phrase)))
        feature_sups = []
    out: List[str] = []
    for k, (conn, phrase) in enumerate(comps):
        if k:
            out.append("and")
            if conn:
                out.append(conn)
        else:
            out.append(conn or "with")
        out += phrase
    return out


def _complete_type_in_material(p: _Parts, level):
    head = p.sups["type"] + [p.noun(level), "in"] + p.sups["material"] + p.materials()
    return head + _complements(p)


def _complete_material_type(p: _Parts, level):
    head = p.sups["material"] + p.materials() + p.sups["type"] + [p.noun(level)]
    return head + _complements(p)


def _complete_article_material_type(p: _Parts, level):
    head = _with_article(p.sups["material"] + p.materials() + p.sups["type"] + [p.noun(level)])
    return head + _complements(p)


Builder = Callable[[_Parts, DescriptionLevel], List[str]]

# (name, builder, applicability) in canonical order: the first applicable wins without rng
_BASIC_VARIANTS: List[Tuple[str, Builder, Callable[[_Parts], bool]]] = [
    ("type-with-mount", _basic_type_with_mount, lambda p: bool(p.mounts)),
    ("type-in-material", _basic_type_in_material, lambda p: True),
    ("material-type", _basic_material_type, lambda p: True),
]

_NORMAL_VARIANTS = [
    (
        "article-material-type-with-stone-mount",
        _normal_stone_mount,
        lambda p: bool(p.stones and p.mounts),
    ),
    (
        "material-and-stone-type",
        _normal_material_and_stone,
        lambda p: len(p.stones) == 1 and len(p.record.materials) == 1,
    ),
    ("type-in-material-with-stones", _normal_type_in_material_with, lambda p: bool(p.stones)),
    ("material-type-with-stones", _normal_material_type_with, lambda p: bool(p.stones)),
]

_COMPLETE_VARIANTS = [
    ("type-in-material", _complete_type_in_material, lambda p: True),
    ("material-type", _complete_material_type, lambda p: True),
    ("article-material-type", _complete_article_material_type, lambda p: bool(p.mounts)),
]


def variants_for(level: DescriptionLevel, parts: _Parts):
    if level == DescriptionLevel.BASIC:
        table = _BASIC_VARIANTS
    elif level == DescriptionLevel.NORMAL:
        table = _NORMAL_VARIANTS if parts.stones else _BASIC_VARIANTS
    else:
        table = _COMPLETE_VARIANTS
    return [(name, build) for name, build, applies in table if applies(parts)]


def generate_tokens(
    record: JewelryRecord,
    level: DescriptionLevel,
    superlatives: bool = True,
    rng: Optional[Rng] = None,
    lexicon: Optional[Lexicon] = None,
) -> List[str]:
    lex = lexicon or default_lexicon()
    level = DescriptionLevel(level)
    validate_record(record, lex)
    parts = _Parts(record, lex, superlatives)
    options = variants_for(level, parts)
    pinned = record.phrasing.get(level.value)
    chosen = next((o for o in options if o[0] == pinned), None)
    if chosen is None:
        chosen = rng.choice(options) if rng is not None else options[0]
    return chosen[1](parts, level) + ["."]


def generate_description(
    record: JewelryRecord,
    level: DescriptionLevel,
    superlatives: bool = True,
    rng: Optional[Rng] = None,
    lexicon: Optional[Lexicon] = None,
) -> str:
    """Render ``record`` at ``level``; a pinned or rng-drawn surface variant is used."""
    return _sentence_case(detokenize(generate_tokens(record, level, superlatives, rng, lexicon)))


# -- validation -----------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str = ""
    position: int = -1

    def __bool__(self) -> bool:
        return self.valid


VALID = Verdict(True)


class _Ctx:
    def __init__(self, tokens: List[str], lexicon: Lexicon):
        self.tokens = tokens
        self.classes = [lexicon.token_classes(t) for t in tokens]
        self.furthest = 0

    def miss(self, pos: int) -> None:
        self.furthest = max(self.furthest, pos)


Parser = Callable[[_Ctx, int], Iterator[int]]


def _lit(word: str) -> Parser:
    def parse(ctx: _Ctx, pos: int):
        if pos < len(ctx.tokens) and ctx.tokens[pos] == word:
            yield pos + 1
        else:
            ctx.miss(pos)

    return parse


def _cls(name: str) -> Parser:
    def parse(ctx: _Ctx, pos: int):
        if pos < len(ctx.tokens) and name in ctx.classes[pos]:
            yield pos + 1
        else:
            ctx.miss(pos)

    return parse


def _seq(*parts: Parser) -> Parser:
    def parse(ctx: _Ctx, pos: int):
        def walk(i: int, at: int):
            if i == len(parts):
                yield at
                return
            for nxt in parts[i](ctx, at):
                yield from walk(i + 1, nxt)

        yield from walk(0, pos)

    return parse


def _alt(*parts: Parser) -> Parser:
    def parse(ctx: _Ctx, pos: int):
        for part in parts:
            yield from part(ctx, pos)

    return parse


def _opt(part: Parser) -> Parser:
    def parse(ctx: _Ctx, pos: int):
        yield pos
        yield from part(ctx, pos)

    return parse


def _star(part: Parser) -> Parser:
    def parse(ctx: _Ctx, pos: int):
        yield pos
        for nxt in part(ctx, pos):
            if nxt > pos:
                yield from parse(ctx, nxt)

    return parse


_ART = _alt(_lit("a"), _lit("an"))
_TYPE, _MAT, _STONE = _cls("TYPE"), _cls("MATERIAL"), _cls("STONE")
_COLOR, _ADJ, _CUT = _cls("COLOR"), _cls("ADJ"), _cls("CUT")
_FEAT, _SUP = _cls("FEATURE"), _cls("SUP")
_MATS = _seq(_MAT, _star(_seq(_lit("and"), _MAT)))

BASIC_BODY = _alt(
    _seq(_TYPE, _lit("in"), _MATS),
    _seq(_MATS, _TYPE),
    _seq(_ART, _TYPE, _lit("with"), _ART, _FEAT),
)

_NORMAL_STONE = _seq(_star(_ADJ), _opt(_COLOR), _STONE)
_NORMAL_STONES = _seq(_NORMAL_STONE, _star(_seq(_lit("and"), _NORMAL_STONE)))

NORMAL_BODY = _alt(
    BASIC_BODY,
    _seq(_MATS, _lit("and"), _STONE, _TYPE),
    _seq(_TYPE, _lit("in"), _MATS, _lit("with"), _NORMAL_STONES),
    _seq(_MATS, _TYPE, _lit("with"), _NORMAL_STONES),
    _seq(_ART, _MATS, _TYPE, _lit("with"), _ART, _STONE, _FEAT),
)

_SUPS = _star(_seq(_SUP, _opt(_lit(","))))
_STONE_GROUP = _seq(_SUPS, _star(_alt(_CUT, _ADJ)), _star(_COLOR), _STONE)
_STONE_LIST = _seq(_STONE_GROUP, _star(_seq(_lit("and"), _STONE_GROUP)))
_STONE_COMP = _seq(_alt(_lit("with"), _lit("adorned_with")), _STONE_LIST)
_FEATURE_PHRASE = _seq(_ART, _SUPS, _opt(_STONE), _FEAT)
_FIRST_COMP = _alt(_STONE_COMP, _seq(_alt(_lit("with"), _lit("featuring")), _FEATURE_PHRASE))
_NEXT_COMP = _seq(
    _lit("and"),
    _alt(_STONE_COMP, _seq(_opt(_alt(_lit("featuring"), _lit("with"))), _FEATURE_PHRASE)),
)
_COMPLEMENTS = _seq(_FIRST_COMP, _star(_NEXT_COMP))
_HEAD = _alt(
    _seq(_SUPS, _TYPE, _lit("in"), _SUPS, _MATS),
    _seq(_SUPS, _MATS, _SUPS, _TYPE),
    _seq(_ART, _SUPS, _MATS, _SUPS, _TYPE),
)

COMPLETE_BODY = _alt(NORMAL_BODY, _seq(_HEAD, _opt(_COMPLEMENTS)))

_SENTENCES = {
    DescriptionLevel.BASIC: _seq(BASIC_BODY, _lit(".")),
    DescriptionLevel.NORMAL: _seq(NORMAL_BODY, _lit(".")),
    DescriptionLevel.COMPLETE: _seq(COMPLETE_BODY, _lit(".")),
}

_LITERALS = set(ARTICLES) | {as_token(c) for c in CONNECTIVES} | set(PUNCTUATION)
_EMBELLISHED = ("adorned_with", "featuring")


def validate_tokens(
    tokens: List[str], level: DescriptionLevel, lexicon: Optional[Lexicon] = None
) -> Verdict:
    lex = lexicon or default_lexicon()
    level = DescriptionLevel(level)
    if not tokens:
        return Verdict(False, "empty caption", 0)
    for pos, token in enumerate(tokens):
        classes = lex.token_classes(token)
        if not classes and token not in _LITERALS:
            return Verdict(False, f"unknown token '{token}'", pos)
        if level != DescriptionLevel.COMPLETE:
            if "SUP" in classes:
                reason = f"superlative '{token}' not allowed at {level.value} level"
                return Verdict(False, reason, pos)
            if token in _EMBELLISHED:
                reason = f"complement '{token}' not allowed at {level.value} level"
                return Verdict(False, reason, pos)
    ctx = _Ctx(list(tokens), lex)
    for end in _SENTENCES[level](ctx, 0):
        if end == len(tokens):
            return VALID
    pos = ctx.furthest
    if pos >= len(tokens):
        return Verdict(False, "unexpected end of caption", pos)
    return Verdict(False, f"unexpected '{tokens[pos]}'", pos)


def validate_description(
    caption: str, level: DescriptionLevel, lexicon: Optional[Lexicon] = None
) -> Verdict:
    return validate_tokens(tokenize(caption, lexicon), level, lexicon)


def strip_superlatives(caption: str, lexicon: Optional[Lexicon] = None) -> str:
    """Drop optional superlatives and normalise embellished connectives."""
    lex = lexicon or default_lexicon()
    tokens = tokenize(caption, lex)
    verdict = validate_tokens(tokens, DescriptionLevel.COMPLETE, lex)
    if not verdict:
        raise GrammarError(
            level="complete", detail=f"{verdict.reason} at position {verdict.position}"
        )
    out: List[str] = []
    dropped = False
    for token in tokens:
        if "SUP" in lex.token_classes(token):
            dropped = True
            continue
        if token == "," and dropped:
            dropped = False
            continue
        dropped = False
        if token == "adorned_with":
            out.append("with")
        elif token == "featuring":
            if not (out and out[-1] == "and"):
                out.append("with")
        else:
            out.append(token)
    # articles agree with the word now following them
    for k in range(len(out) - 1):
        if out[k] in ARTICLES:
            out[k] = _article(out[k + 1])
    return _sentence_case(detokenize(out))


# -- vocabulary -----------------------------------------------------------------------

PAD, START, END, UNK = "<pad>", "<start>", "<end>", "<unk>"
RESERVED = (PAD, START, END, UNK)


class Vocabulary:
    """Bijective token <-> id map; ids 0..3 are reserved."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens: List[str] = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}

    pad_id, start_id, end_id, unk_id = 0, 1, 2, 3

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[i] for i in ids if i not in (self.pad_id, self.start_id, self.end_id)]


def build_vocab(captions: Iterable[str], lexicon: Optional[Lexicon] = None) -> Vocabulary:
    counts: Counter = Counter()
    for caption in captions:
        counts.update(tokenize(caption, lexicon))
    for reserved in RESERVED:
        counts.pop(reserved, None)
    ordered = sorted(counts, key=lambda tok: (-counts[tok], tok))
    return Vocabulary(list(RESERVED) + ordered)


# -- worked examples ------------------------------------------------------------------

EXAMPLE_RECORDS: Dict[str, JewelryRecord] = {
    "yellow-gold-earrings": JewelryRecord(
        jewelry_type="earrings",
        materials=["yellow gold"],
        stones=["diamond"],
        features=["brilliant-cut", "push-back clasp"],
        style_adjectives=["sustainable", "exquisite", "secure"],
        stone_count=2,
        phrasing={
            "basic": "type-in-material",
            "normal": "material-and-stone-type",
            "complete": "type-in-material",
        },
    ),
    "rose-gold-solitaire": JewelryRecord(
        jewelry_type="ring",
        model_noun="solitaire",
        materials=["rose gold"],
        stones=["diamond"],
        features=["central"],
        style_adjectives=["iris"],
        stone_count=1,
        phrasing={
            "basic": "type-in-material",
            "normal": "type-in-material-with-stones",
            "complete": "type-in-material",
        },
    ),
    "yellow-gold-bracelet": JewelryRecord(
        jewelry_type="bracelet",
        materials=["yellow gold"],
        stones=["topaz"],
        colors=["sky"],
        style_adjectives=["sustainable", "dazzling"],
        stone_count=6,
        phrasing={
            "basic": "material-type",
            "normal": "material-type-with-stones",
            "complete": "material-type",
        },
    ),
    "gold-sapphire-necklace": JewelryRecord(
        jewelry_type="necklace",
        materials=["gold"],
        stones=["sapphire"],
        features=["pendant"],
    ),
}
