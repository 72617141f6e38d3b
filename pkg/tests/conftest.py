from __future__ import annotations

import random
from pathlib import Path

import pytest

from mtf.score import DURATION_GRID, PITCH_MAX, PITCH_MIN, QNote, Score, to_raw
from mtf.smf import write_smf


def random_score(rng: random.Random, n_notes: int | None = None, *, span_bars: int = 8,
                 pitch_lo: int = PITCH_MIN, pitch_hi: int = PITCH_MAX) -> Score:
    """A valid Score: grid durations, no overlapping notes of one pitch."""
    if n_notes is None:
        n_notes = rng.randint(0, 40)
    busy: dict[int, int] = {}
    notes = []
    onset = 0
    for _ in range(n_notes):
        onset += rng.choice((0, 0, 1, 2, 4, 8, 8, 16, 33, 70))
        onset = min(onset, span_bars * 32 * 4)
        for _ in range(10):
            pitch = rng.randint(pitch_lo, pitch_hi)
            if busy.get(pitch, -1) <= onset:
                break
        else:
            continue
        dur = rng.choice(DURATION_GRID)
        busy[pitch] = onset + dur
        notes.append(QNote(onset, pitch, rng.randrange(8), dur))
    score = Score(tuple(notes))
    score.check()
    return score


def pop_score(rng: random.Random, bars: int = 8) -> Score:
    """Pop-like texture: onsets on even 1/8-beat positions, downbeats favoured."""
    notes = []
    for bar in range(bars):
        base = bar * 32
        # downbeat chord
        root = rng.choice((48, 50, 53, 55, 57))
        for p in (root, root + 4, root + 7):
            notes.append(QNote(base, p, 5, 16))
        for beat in range(4):
            for sub in (0, 2, 4, 6):
                if rng.random() < (0.5 if sub == 0 else 0.2):
                    notes.append(QNote(base + beat * 8 + sub, rng.randint(67, 79), rng.randrange(3, 7), 2))
    out, last = [], {}
    for n in sorted(notes):
        if last.get(n.pitch, -1) <= n.onset:
            out.append(n)
            last[n.pitch] = n.offset
    return Score(tuple(out))


def write_corpus(directory: Path, n_files: int = 3, seed: int = 0) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    paths = []
    for i in range(n_files):
        path = directory / f"song{i:02d}.mid"
        path.write_bytes(write_smf(to_raw(pop_score(rng, bars=4 + i))))
        paths.append(path)
    return paths


@pytest.fixture
def corpus(tmp_path: Path) -> Path:
    write_corpus(tmp_path / "midi")
    return tmp_path / "midi"


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
