"""Encode scores as token sequences and decode them back."""

from __future__ import annotations

from .score import DURATION_GRID, Score, UNITS_PER_BAR
from .tse import BpeNotDecoded, ErrorPolicy, TokenGrammarError, TseReport, run
from .vocab import (
    BOS_ID,
    EOS_ID,
    Scheme,
    TokenSequence,
    TokenType,
    Vocabulary,
    build_vocab,
)

__all__ = [
    "BpeNotDecoded",
    "ErrorPolicy",
    "Scheme",
    "TokenGrammarError",
    "build_vocab",
    "decompose_gap",
    "detokenize",
    "tokenize",
]

T = TokenType
_DESCENDING = tuple(reversed(DURATION_GRID))

# event kinds; the sort order puts releases before attacks at equal times
_OFF, _ON = 0, 1


def decompose_gap(gap: int) -> list[int]:
    """Split ``gap`` units into grid values, greedily largest first."""
    parts = []
    for value in _DESCENDING:
        while gap >= value:
            parts.append(value)
            gap -= value
    return parts


def _events(score: Score, scheme: Scheme) -> list[tuple[int, int, int, int]]:
    """(time, kind, pitch, payload) in emission order."""
    if scheme.uses_duration:
        return [(n.onset, _ON, n.pitch, n.vel_bin) for n in score.notes]
    events = [(n.onset, _ON, n.pitch, n.vel_bin) for n in score.notes]
    events += [(n.offset, _OFF, n.pitch, 0) for n in score.notes]
    events.sort()
    return events


def tokenize(score: Score, scheme: Scheme) -> TokenSequence:
    vocab = build_vocab(scheme)
    tid = vocab.id_of
    durations = {(n.onset, n.pitch): n.duration for n in score.notes}
    ids = [BOS_ID]
    time = 0
    bar, pos = 0, None
    if not scheme.uses_time_shift:
        ids.append(tid(T.BAR))

    for at, kind, pitch, payload in _events(score, scheme):
        if scheme.uses_time_shift:
            ids += [tid(T.TIME_SHIFT, v) for v in decompose_gap(at - time)]
            time = at
        else:
            at_bar, at_pos = divmod(at, UNITS_PER_BAR)
            if at_bar > bar:
                ids += [tid(T.BAR)] * (at_bar - bar)
                bar, pos = at_bar, None
            if at_pos != pos:
                ids.append(tid(T.POSITION, at_pos))
                pos = at_pos

        if kind == _OFF:
            ids.append(tid(T.NOTE_OFF, pitch))
        elif scheme.uses_duration:
            ids += [tid(T.PITCH, pitch), tid(T.VELOCITY, payload), tid(T.DURATION, durations[at, pitch])]
        else:
            ids += [tid(T.NOTE_ON, pitch), tid(T.VELOCITY, payload)]

    ids.append(EOS_ID)
    return TokenSequence(tuple(ids), vocab.hash)


def detokenize(
    seq: TokenSequence,
    scheme: Scheme,
    policy: ErrorPolicy | str = ErrorPolicy.LENIENT,
) -> tuple[Score, TseReport]:
    """Rebuild a score; invalid tokens are skipped and tallied.

    With ``policy="strict"`` the first violation raises
    :class:`TokenGrammarError`. NoteOns never released get the maximum
    duration.
    """
    return run(seq, scheme, policy)


def describe(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    return [str(vocab[i]) if 0 <= i < len(vocab) else f"<unk {i}>" for i in seq.ids]
