"""Token types, the four time/duration schemes and their vocabularies."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Sequence

from .score import DURATION_GRID, PITCH_MAX, PITCH_MIN, UNITS_PER_BAR, VELOCITY_BINS


class TokenType(str, enum.Enum):
    PAD = "PAD"
    BOS = "BOS"
    EOS = "EOS"
    MASK = "MASK"
    SEP = "SEP"
    PITCH = "Pitch"
    NOTE_ON = "NoteOn"
    NOTE_OFF = "NoteOff"
    VELOCITY = "Velocity"
    DURATION = "Duration"
    TIME_SHIFT = "TimeShift"
    BAR = "Bar"
    POSITION = "Position"

    def __str__(self) -> str:
        return self.value


SPECIALS = (TokenType.PAD, TokenType.BOS, TokenType.EOS, TokenType.MASK, TokenType.SEP)
PAD_ID, BOS_ID, EOS_ID, MASK_ID, SEP_ID = range(len(SPECIALS))


class VocabMismatch(ValueError):
    pass


class Scheme(enum.Enum):
    """Time representation x note-duration representation."""

    TS_DUR = ("ts-dur", "TimeShift", "Duration")     # TSD / Structured
    TS_NOFF = ("ts-noff", "TimeShift", "NoteOff")    # MIDI-Like
    POS_DUR = ("pos-dur", "BarPosition", "Duration")  # REMI
    POS_NOFF = ("pos-noff", "BarPosition", "NoteOff")

    def __init__(self, slug: str, time_kind: str, duration_kind: str) -> None:
        self.slug = slug
        self.time_kind = time_kind
        self.duration_kind = duration_kind

    @property
    def uses_time_shift(self) -> bool:
        return self.time_kind == "TimeShift"

    @property
    def uses_duration(self) -> bool:
        return self.duration_kind == "Duration"

    @property
    def note_type(self) -> TokenType:
        return TokenType.PITCH if self.uses_duration else TokenType.NOTE_ON

    @classmethod
    def from_slug(cls, slug: str) -> "Scheme":
        for s in cls:
            if s.slug == slug:
                return s
        raise ValueError(f"unknown scheme {slug!r}; expected one of {[s.slug for s in cls]}")

    def __str__(self) -> str:
        return self.slug


@dataclass(frozen=True, slots=True)
class TokenSpec:
    ttype: TokenType
    value: int = 0

    def __str__(self) -> str:
        if self.ttype in SPECIALS or self.ttype is TokenType.BAR:
            return self.ttype.value
        return f"{self.ttype.value}_{self.value}"


def scheme_types(scheme: Scheme) -> list[TokenType]:
    """Non-special token types used by ``scheme``, in vocabulary order."""
    types = [scheme.note_type]
    if not scheme.uses_duration:
        types.append(TokenType.NOTE_OFF)
    types.append(TokenType.VELOCITY)
    if scheme.uses_duration:
        types.append(TokenType.DURATION)
    if scheme.uses_time_shift:
        types.append(TokenType.TIME_SHIFT)
    else:
        types += [TokenType.BAR, TokenType.POSITION]
    return types


_VALUES = {
    TokenType.PITCH: range(PITCH_MIN, PITCH_MAX + 1),
    TokenType.NOTE_ON: range(PITCH_MIN, PITCH_MAX + 1),
    TokenType.NOTE_OFF: range(PITCH_MIN, PITCH_MAX + 1),
    TokenType.VELOCITY: range(VELOCITY_BINS),
    TokenType.DURATION: DURATION_GRID,
    TokenType.TIME_SHIFT: DURATION_GRID,
    TokenType.BAR: (0,),
    TokenType.POSITION: range(UNITS_PER_BAR),
}


class Vocabulary:
    """Dense bidirectional map between ids and :class:`TokenSpec`."""

    def __init__(self, scheme: Scheme, specs: Sequence[TokenSpec]) -> None:
        self.scheme = scheme
        self.specs = tuple(specs)
        self._ids = {spec: i for i, spec in enumerate(self.specs)}
        if len(self._ids) != len(self.specs):
            raise ValueError("duplicate token in vocabulary")
        if tuple(s.ttype for s in self.specs[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("special tokens must occupy the first ids in order")

    def __len__(self) -> int:
        return len(self.specs)

    def __getitem__(self, token_id: int) -> TokenSpec:
        return self.specs[token_id]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and (self.scheme, self.specs) == (other.scheme, other.specs)

    def __hash__(self) -> int:
        return hash((self.scheme, self.specs))

    def id_of(self, ttype: TokenType, value: int = 0) -> int:
        return self._ids[TokenSpec(ttype, value)]

    def types(self) -> list[TokenType]:
        return list(dict.fromkeys(s.ttype for s in self.specs))

    def to_json(self) -> list[dict]:
        return [{"id": i, "type": s.ttype.value, "value": s.value} for i, s in enumerate(self.specs)]

    @cached_property
    def hash(self) -> str:
        blob = json.dumps({"scheme": self.scheme.slug, "tokens": self.to_json()}, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, scheme: Scheme, entries: list[dict]) -> "Vocabulary":
        entries = sorted(entries, key=lambda e: e["id"])
        if [e["id"] for e in entries] != list(range(len(entries))):
            raise ValueError("vocabulary ids are not dense")
        return cls(scheme, [TokenSpec(TokenType(e["type"]), int(e["value"])) for e in entries])


@lru_cache(maxsize=None)
def build_vocab(scheme: Scheme) -> Vocabulary:
    specs = [TokenSpec(t) for t in SPECIALS]
    for ttype in scheme_types(scheme):
        specs += [TokenSpec(ttype, v) for v in _VALUES[ttype]]
    return Vocabulary(scheme, specs)


@dataclass(frozen=True, slots=True)
class TokenSequence:
    ids: tuple[int, ...]
    vocab_ref: str
    is_bpe: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    def to_json(self, scheme: Scheme, **extra) -> dict:
        doc = {"scheme": scheme.slug, "vocab_hash": self.vocab_ref, "is_bpe": self.is_bpe, "ids": list(self.ids)}
        doc.update(extra)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> tuple[Scheme, "TokenSequence"]:
        seq = cls(tuple(int(i) for i in doc["ids"]), str(doc["vocab_hash"]), bool(doc.get("is_bpe", False)))
        return Scheme.from_slug(doc["scheme"]), seq
