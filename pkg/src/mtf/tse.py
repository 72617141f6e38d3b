"""Token Syntax Error: grammar tables and the stateful token checker.

The same left-to-right machine decodes token sequences into notes and
tallies errors, so ``detokenize`` and ``validate`` always agree.

Categories:

``type``  successor type not allowed after the previous valid token
``time``  Position that goes back or stays in time within a bar
``dupn``  note struck while the same pitch is still sounding
``nnon``  NoteOff for a pitch that is not sounding
``nnof``  NoteOn never closed by a NoteOff
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .score import MAX_DURATION, QNote, Score, UNITS_PER_BAR, nearest_duration, normalize
from .vocab import BOS_ID, Scheme, TokenSequence, TokenType, VocabMismatch, Vocabulary, build_vocab

CATEGORIES = ("type", "time", "dupn", "nnon", "nnof")

T = TokenType


class ErrorPolicy(str, enum.Enum):
    LENIENT = "lenient"
    STRICT = "strict"


class TokenGrammarError(ValueError):
    def __init__(self, index: int, category: str, detail: str = "") -> None:
        super().__init__(f"token {index}: {category} error{': ' + detail if detail else ''}")
        self.index = index
        self.category = category


class BpeNotDecoded(ValueError):
    pass


def applicable(scheme: Scheme) -> tuple[str, ...]:
    """Categories that can fire for ``scheme``; the rest are always 0."""
    cats = ["type"]
    if not scheme.uses_time_shift:
        cats.append("time")
    cats.append("dupn")
    if not scheme.uses_duration:
        cats += ["nnon", "nnof"]
    return tuple(cats)


@dataclass
class TseReport:
    counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0))
    total_tokens: int = 0

    @property
    def ratios(self) -> dict[str, float]:
        if not self.total_tokens:
            return dict.fromkeys(CATEGORIES, 0.0)
        return {c: self.counts[c] / self.total_tokens for c in CATEGORIES}

    @property
    def n_errors(self) -> int:
        return sum(self.counts.values())

    def __add__(self, other: "TseReport") -> "TseReport":
        counts = {c: self.counts[c] + other.counts[c] for c in CATEGORIES}
        return TseReport(counts, self.total_tokens + other.total_tokens)

    def to_json(self) -> dict:
        return {"counts": dict(self.counts), "total_tokens": self.total_tokens, "ratios": self.ratios}

    @classmethod
    def merge(cls, reports: Iterable["TseReport"]) -> "TseReport":
        out = cls()
        for r in reports:
            out = out + r
        return out


@dataclass(frozen=True)
class GrammarTable:
    scheme: Scheme
    allowed: Mapping[TokenType, frozenset]

    def allows(self, prev: TokenType, nxt: TokenType) -> bool:
        return nxt in self.allowed[prev]


def _table(scheme: Scheme) -> dict[TokenType, set]:
    if scheme is Scheme.TS_DUR:
        return {
            T.BOS: {T.PITCH, T.TIME_SHIFT, T.EOS},
            T.PITCH: {T.VELOCITY},
            T.VELOCITY: {T.DURATION},
            T.DURATION: {T.PITCH, T.TIME_SHIFT, T.EOS},
            T.TIME_SHIFT: {T.PITCH, T.TIME_SHIFT, T.EOS},
        }
    if scheme is Scheme.TS_NOFF:
        after_event = {T.NOTE_ON, T.NOTE_OFF, T.TIME_SHIFT, T.EOS}
        return {
            T.BOS: {T.NOTE_ON, T.TIME_SHIFT, T.EOS},
            T.NOTE_ON: {T.VELOCITY},
            T.VELOCITY: after_event,
            T.NOTE_OFF: after_event,
            T.TIME_SHIFT: after_event,
        }
    if scheme is Scheme.POS_DUR:
        return {
            T.BOS: {T.BAR, T.EOS},
            T.BAR: {T.POSITION, T.BAR, T.EOS},
            T.POSITION: {T.PITCH},
            T.PITCH: {T.VELOCITY},
            T.VELOCITY: {T.DURATION},
            T.DURATION: {T.PITCH, T.POSITION, T.BAR, T.EOS},
        }
    after_event = {T.NOTE_ON, T.NOTE_OFF, T.POSITION, T.BAR, T.EOS}
    return {
        T.BOS: {T.BAR, T.EOS},
        T.BAR: {T.POSITION, T.BAR, T.EOS},
        T.POSITION: {T.NOTE_ON, T.NOTE_OFF},
        T.NOTE_ON: {T.VELOCITY},
        T.VELOCITY: after_event,
        T.NOTE_OFF: after_event,
    }


def grammar_for(scheme: Scheme) -> GrammarTable:
    table = _table(scheme)
    # tail of a sequence: only padding may follow EOS
    table[T.EOS] = {T.PAD}
    table[T.PAD] = {T.PAD}
    table[T.MASK] = set()
    table[T.SEP] = set()
    return GrammarTable(scheme, {k: frozenset(v) for k, v in table.items()})


_GRAMMARS = {s: grammar_for(s) for s in Scheme}


class _Machine:
    """Single pass over base token ids, producing notes and error tallies."""

    def __init__(self, scheme: Scheme, vocab: Vocabulary, strict: bool) -> None:
        self.scheme = scheme
        self.vocab = vocab
        self.grammar = _GRAMMARS[scheme]
        self.strict = strict
        self.counts = dict.fromkeys(CATEGORIES, 0)
        self.notes: list[QNote] = []
        self.prev = T.BOS
        self.time = 0
        self.bar = -1
        self.pos: int | None = None
        # Duration schemes: pitch -> end of sounding interval
        self.sounding: dict[int, int] = {}
        # [pitch, velocity, valid] of the note being spelled out
        self.pending: list | None = None
        # NoteOff schemes: pitch -> (onset, vel_bin, token index)
        self.active: dict[int, tuple[int, int, int]] = {}

    def error(self, index: int, category: str, detail: str = "") -> None:
        if self.strict:
            raise TokenGrammarError(index, category, detail)
        self.counts[category] += 1

    def step(self, index: int, token_id: int) -> None:
        if not 0 <= token_id < len(self.vocab):
            self.error(index, "type", f"id {token_id} outside the vocabulary")
            return
        spec = self.vocab[token_id]
        ttype, value = spec.ttype, spec.value
        if not self.grammar.allows(self.prev, ttype):
            self.error(index, "type", f"{ttype} after {self.prev}")
            return
        self.prev = ttype

        if ttype is T.TIME_SHIFT:
            self.time += value
        elif ttype is T.BAR:
            self.bar += 1
            self.time = self.bar * UNITS_PER_BAR
            self.pos = None
        elif ttype is T.POSITION:
            if self.pos is not None and value <= self.pos:
                self.error(index, "time", f"position {value} after {self.pos}")
            else:
                self.pos = value
                self.time = self.bar * UNITS_PER_BAR + value
        elif ttype is T.PITCH:
            ok = self.sounding.get(value, -1) <= self.time
            if not ok:
                self.error(index, "dupn", f"pitch {value} still sounding")
            self.pending = [value, None, ok]
        elif ttype is T.NOTE_ON:
            ok = value not in self.active
            if not ok:
                self.error(index, "dupn", f"pitch {value} already on")
            self.pending = [value, None, ok, index]
        elif ttype is T.VELOCITY:
            if self.pending is not None:
                self.pending[1] = value
                if not self.scheme.uses_duration:
                    pitch, vel, ok, on_index = self.pending
                    if ok:
                        self.active[pitch] = (self.time, vel, on_index)
                    self.pending = None
        elif ttype is T.DURATION:
            if self.pending is not None:
                pitch, vel, ok = self.pending
                if ok:
                    self.notes.append(QNote(self.time, pitch, vel, value))
                    self.sounding[pitch] = self.time + value
                self.pending = None
        elif ttype is T.NOTE_OFF:
            started = self.active.pop(value, None)
            if started is None:
                self.error(index, "nnon", f"pitch {value} not sounding")
            else:
                onset, vel, _ = started
                self.notes.append(QNote(onset, value, vel, nearest_duration(self.time - onset)))

    def finish(self) -> None:
        for pitch, (onset, vel, on_index) in sorted(self.active.items()):
            self.error(on_index, "nnof", f"pitch {pitch} never released")
            self.notes.append(QNote(onset, pitch, vel, MAX_DURATION))
        self.active.clear()


def _total(ids: tuple[int, ...]) -> int:
    return len(ids) - (1 if ids and ids[0] == BOS_ID else 0)


def _check_input(seq: TokenSequence, vocab: Vocabulary) -> None:
    if seq.is_bpe:
        raise BpeNotDecoded("sequence is BPE-encoded; decode it before validation")
    if seq.vocab_ref and seq.vocab_ref != vocab.hash:
        raise VocabMismatch(f"sequence built for vocabulary {seq.vocab_ref}, not {vocab.hash}")


def run(seq: TokenSequence, scheme: Scheme, policy: ErrorPolicy | str = ErrorPolicy.LENIENT) -> tuple[Score, TseReport]:
    vocab = build_vocab(scheme)
    _check_input(seq, vocab)
    machine = _Machine(scheme, vocab, ErrorPolicy(policy) is ErrorPolicy.STRICT)
    ids = seq.ids
    start = 1 if ids and ids[0] == BOS_ID else 0
    for i in range(start, len(ids)):
        machine.step(i, ids[i])
    machine.finish()
    report = TseReport(machine.counts, _total(ids))
    return normalize(machine.notes), report


def validate(seq: TokenSequence, scheme: Scheme) -> TseReport:
    """Count syntax errors in a base-vocabulary token sequence."""
    return run(seq, scheme)[1]
