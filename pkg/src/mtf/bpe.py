"""Byte Pair Encoding over base token ids.

Merges never touch special tokens and never cross sequence boundaries.
Pair counting and replacement are non-overlapping, left to right.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

from .vocab import SPECIALS, TokenSequence, VocabMismatch

logger = logging.getLogger(__name__)

N_SPECIALS = len(SPECIALS)


class TargetTooSmall(ValueError):
    pass


class UnknownId(ValueError):
    pass


@dataclass(frozen=True)
class BpeModel:
    base_vocab_size: int
    merges: tuple[tuple[int, int], ...] = ()
    target_size: int = 0
    vocab_ref: str = ""
    n_specials: int = N_SPECIALS

    @property
    def size(self) -> int:
        return self.base_vocab_size + len(self.merges)

    @cached_property
    def _expansion(self) -> list[tuple[int, ...]]:
        table = [(i,) for i in range(self.base_vocab_size)]
        for left, right in self.merges:
            table.append(table[left] + table[right])
        return table

    def expand(self, token_id: int) -> tuple[int, ...]:
        if not 0 <= token_id < self.size:
            raise UnknownId(f"id {token_id} is outside the BPE vocabulary of size {self.size}")
        return self._expansion[token_id]

    def to_json(self) -> dict:
        doc = {"base_vocab_size": self.base_vocab_size, "merges": [list(m) for m in self.merges]}
        doc["target_size"] = self.target_size
        if self.vocab_ref:
            doc["vocab_hash"] = self.vocab_ref
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "BpeModel":
        base = int(doc["base_vocab_size"])
        merges = tuple((int(a), int(b)) for a, b in doc["merges"])
        for k, (a, b) in enumerate(merges):
            if not (N_SPECIALS <= a < base + k and N_SPECIALS <= b < base + k):
                raise ValueError(f"merge {k} refers to an id that does not exist yet: {(a, b)}")
        return cls(base, merges, int(doc.get("target_size", base + len(merges))), doc.get("vocab_hash", ""))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "BpeModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def count_pairs(ids: Sequence[int], n_specials: int = N_SPECIALS) -> Counter:
    counts: Counter = Counter()
    i, n = 0, len(ids) - 1
    while i < n:
        a, b = ids[i], ids[i + 1]
        if a < n_specials or b < n_specials:
            i += 1
            continue
        counts[a, b] += 1
        # a run "x x x" holds one non-overlapping (x, x), not two
        i += 2 if a == b and i + 2 <= n and ids[i + 2] == a else 1
    return counts


def merge_pair(ids: Sequence[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    a, b = pair
    i, n = 0, len(ids)
    while i < n:
        if i + 1 < n and ids[i] == a and ids[i + 1] == b:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def bpe_train(corpus: Iterable[TokenSequence], target_size: int, *, base_vocab_size: int | None = None) -> BpeModel:
    """Learn merges until ``target_size`` or until no pair occurs twice.

    Ties between equally frequent pairs go to the smallest (left, right).
    """
    corpus = list(corpus)
    refs = {s.vocab_ref for s in corpus}
    if len(refs) > 1:
        raise VocabMismatch(f"corpus mixes vocabularies: {sorted(refs)}")
    if any(s.is_bpe for s in corpus):
        raise ValueError("training corpus must hold base token ids")
    if base_vocab_size is None:
        if not refs:
            raise ValueError("base_vocab_size is required for an empty corpus")
        base_vocab_size = 1 + max((max(s.ids, default=0) for s in corpus), default=0)
    if target_size <= base_vocab_size:
        raise TargetTooSmall(f"target size {target_size} must exceed the base vocabulary size {base_vocab_size}")

    seqs = [list(s.ids) for s in corpus]
    per_seq = [count_pairs(s) for s in seqs]
    totals: Counter = Counter()
    where: dict[tuple[int, int], set[int]] = defaultdict(set)
    for k, counts in enumerate(per_seq):
        totals.update(counts)
        for pair in counts:
            where[pair].add(k)

    merges: list[tuple[int, int]] = []
    next_id = base_vocab_size
    while next_id < target_size and totals:
        best_count = max(totals.values())
        if best_count < 2:
            break
        pair = min(p for p, c in totals.items() if c == best_count)
        for k in sorted(where.pop(pair, ())):
            old = per_seq[k]
            seqs[k] = merge_pair(seqs[k], pair, next_id)
            new = count_pairs(seqs[k])
            totals.subtract(old)
            totals.update(new)
            for p in old.keys() - new.keys():
                where[p].discard(k)
            for p in new:
                where[p].add(k)
            per_seq[k] = new
        totals = +totals
        merges.append(pair)
        next_id += 1
    logger.info("learned %d merges (target %d)", len(merges), target_size - base_vocab_size)
    ref = next(iter(refs), "")
    return BpeModel(base_vocab_size, tuple(merges), target_size, ref)


def bpe_encode(seq: TokenSequence, model: BpeModel) -> TokenSequence:
    if seq.is_bpe:
        raise ValueError("sequence is already BPE-encoded")
    if model.vocab_ref and seq.vocab_ref and seq.vocab_ref != model.vocab_ref:
        raise VocabMismatch(f"sequence vocabulary {seq.vocab_ref} != model vocabulary {model.vocab_ref}")
    if any(not 0 <= i < model.base_vocab_size for i in seq.ids):
        raise VocabMismatch("sequence holds ids outside the model's base vocabulary")
    ids = list(seq.ids)
    present = set(ids)
    for k, (a, b) in enumerate(model.merges):
        if a in present and b in present:
            merged = merge_pair(ids, (a, b), model.base_vocab_size + k)
            if len(merged) != len(ids):
                ids = merged
                present = set(ids)
    return TokenSequence(tuple(ids), seq.vocab_ref, True)


def bpe_decode(seq: TokenSequence, model: BpeModel) -> TokenSequence:
    if not seq.is_bpe:
        raise ValueError("sequence is not BPE-encoded")
    ids: list[int] = []
    for i in seq.ids:
        ids.extend(model.expand(i))
    return TokenSequence(tuple(ids), seq.vocab_ref, False)
