"""Fault injection into tokenizer output, one TSE category at a time.

Injection sites are picked from the score's structure so that each fault
adds exactly one error of the targeted category and nothing else:

* ``type``: duplicate a Velocity token (Velocity never follows Velocity)
* ``dupn``: repeat a note's tokens right after it, while it still sounds
* ``nnon``: insert a NoteOff after a Velocity for a pitch the piece never uses
* ``nnof``: drop the NoteOff of a pitch's last note
* ``time``: rewrite a Position to the value of the previous Position in its bar
"""

from __future__ import annotations

import random

from .score import PITCH_MAX, PITCH_MIN, UNITS_PER_BAR, Score
from .tok import tokenize
from .tse import applicable
from .vocab import Scheme, TokenSequence, TokenType, build_vocab

T = TokenType


class NotEnoughSites(ValueError):
    pass


def _pick(sites: list, k: int, rng: random.Random, category: str) -> list:
    if len(sites) < k:
        raise NotEnoughSites(f"only {len(sites)} clean {category} sites, need {k}")
    return sorted(rng.sample(sites, k))


def _sounding_at(score: Score, pitch: int, t: int) -> bool:
    return any(n.pitch == pitch and n.onset <= t < n.offset for n in score.notes)


def _groups(ids: list[int], scheme: Scheme) -> list[dict]:
    """Position groups of a Pos-scheme sequence with their bar context."""
    vocab = build_vocab(scheme)
    groups = []
    bar, prev_pos = -1, None
    for i, tid in enumerate(ids):
        spec = vocab[tid]
        if spec.ttype is T.BAR:
            bar, prev_pos = bar + 1, None
        elif spec.ttype is T.POSITION:
            groups.append({"index": i, "bar": bar, "pos": spec.value, "prev": prev_pos, "on": [], "off": []})
            prev_pos = spec.value
        elif groups and spec.ttype in (T.PITCH, T.NOTE_ON):
            groups[-1]["on"].append(spec.value)
        elif groups and spec.ttype is T.NOTE_OFF:
            groups[-1]["off"].append((i, spec.value))
    return groups


def inject(score: Score, scheme: Scheme, category: str, k: int, seed: int = 0) -> TokenSequence:
    """Tokenize ``score`` and plant ``k`` faults of ``category``."""
    if category not in applicable(scheme):
        raise ValueError(f"{category} errors cannot occur under {scheme}")
    vocab = build_vocab(scheme)
    tid = vocab.id_of
    ids = list(tokenize(score, scheme).ids)
    types = [vocab[i].ttype for i in ids]
    rng = random.Random(seed)
    inserts: list[tuple[int, list[int]]] = []  # (insert before index, tokens)
    drops: set[int] = set()

    if category == "type":
        sites = [i for i, t in enumerate(types) if t is T.VELOCITY]
        for i in _pick(sites, k, rng, category):
            inserts.append((i + 1, [ids[i]]))

    elif category == "dupn":
        width = 3 if scheme.uses_duration else 2
        sites = [i for i, t in enumerate(types) if t is scheme.note_type]
        for i in _pick(sites, k, rng, category):
            inserts.append((i + width, ids[i:i + width]))

    elif category == "nnon":
        used = {n.pitch for n in score.notes}
        free = [p for p in range(PITCH_MIN, PITCH_MAX + 1) if p not in used]
        if not free:
            raise NotEnoughSites("the score uses every pitch")
        sites = [i for i, t in enumerate(types) if t is T.VELOCITY]
        for i in _pick(sites, k, rng, category):
            inserts.append((i + 1, [tid(T.NOTE_OFF, rng.choice(free))]))

    elif category == "nnof":
        closing = {}
        for i, t in enumerate(types):
            if t is T.NOTE_OFF:
                closing[vocab[ids[i]].value] = i  # release of each pitch's last note
        drops.update(_pick(sorted(closing.values()), k, rng, category))
        if not scheme.uses_time_shift:
            # a Position left with no event would itself be a type error
            for g in _groups(ids, scheme):
                if not g["on"] and all(i in drops for i, _ in g["off"]):
                    drops.add(g["index"])

    elif category == "time":
        groups = _groups(ids, scheme)
        sites = []
        for g in groups:
            if g["prev"] is None:
                continue
            back = g["bar"] * UNITS_PER_BAR + g["prev"]
            if not any(_sounding_at(score, p, back) for p in g["on"]):
                sites.append(g)
        rng.shuffle(sites)
        chosen: list[dict] = []
        taken: set[tuple[int, int]] = set()
        for g in sites:
            # neighbouring groups must stay intact or the comparison shifts
            if (g["bar"], g["prev"]) in taken or any(
                c["bar"] == g["bar"] and c["prev"] == g["pos"] for c in chosen
            ):
                continue
            chosen.append(g)
            taken.add((g["bar"], g["pos"]))
            if len(chosen) == k:
                break
        if len(chosen) < k:
            raise NotEnoughSites(f"only {len(chosen)} clean time sites, need {k}")
        for g in chosen:
            ids[g["index"]] = tid(T.POSITION, g["prev"])

    out = []
    pending = sorted(inserts)
    j = 0
    for i, token in enumerate(ids):
        while j < len(pending) and pending[j][0] == i:
            out += pending[j][1]
            j += 1
        if i not in drops:
            out.append(token)
    return TokenSequence(tuple(out), vocab.hash)
