"""Beat-grid scores: quantization, preprocessing and augmentation."""

from __future__ import annotations

import bisect
import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

from .smf import RawNote, RawSong

logger = logging.getLogger(__name__)

UNITS_PER_BEAT = 8
BEATS_PER_BAR = 4
UNITS_PER_BAR = UNITS_PER_BEAT * BEATS_PER_BAR
PITCH_MIN, PITCH_MAX = 21, 108
VELOCITY_BINS = 8

# 8 spb up to one beat, 4 spb up to two, 2 spb up to four, 1 spb up to eight
DURATION_GRID: tuple[int, ...] = (
    tuple(range(1, 9))
    + (10, 12, 14, 16)
    + (20, 24, 28, 32)
    + (40, 48, 56, 64)
)
MAX_DURATION = DURATION_GRID[-1]

DEFAULT_PITCH_OFFSETS = (-24, -12, 12, 24)
DEFAULT_VEL_OFFSETS = (-1, 1)


class EmptyVariant(Warning):
    pass


@dataclass(frozen=True, slots=True, order=True)
class QNote:
    onset: int
    pitch: int
    vel_bin: int
    duration: int

    @property
    def offset(self) -> int:
        return self.onset + self.duration


@dataclass(frozen=True, slots=True)
class Score:
    """Quantized piano piece in 1/8-beat units.

    Notes are kept sorted by (onset, pitch). ``stats`` carries preprocessing
    tallies and does not take part in equality.
    """

    notes: tuple[QNote, ...] = ()
    stats: Counter = field(default_factory=Counter, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "notes", tuple(sorted(self.notes)))

    def __len__(self) -> int:
        return len(self.notes)

    def check(self) -> None:
        """Raise ValueError unless every invariant holds."""
        last_end: dict[int, int] = {}
        for n in self.notes:
            if not PITCH_MIN <= n.pitch <= PITCH_MAX:
                raise ValueError(f"pitch out of range: {n}")
            if not 0 <= n.vel_bin < VELOCITY_BINS:
                raise ValueError(f"velocity bin out of range: {n}")
            if n.duration not in DURATION_GRID:
                raise ValueError(f"duration not on grid: {n}")
            if n.onset < 0:
                raise ValueError(f"negative onset: {n}")
            if last_end.get(n.pitch, -1) > n.onset:
                raise ValueError(f"overlapping notes of pitch {n.pitch} at {n.onset}")
            last_end[n.pitch] = n.offset


def nearest_duration(units: Fraction | int) -> int:
    """Closest grid value to ``units``; ties go to the longer value."""
    if units >= MAX_DURATION:
        return MAX_DURATION
    i = bisect.bisect_left(DURATION_GRID, units)
    if i == 0:
        return DURATION_GRID[0]
    lo, hi = DURATION_GRID[i - 1], DURATION_GRID[i]
    return hi if hi - units <= units - lo else lo


def floor_duration(units: int) -> int:
    """Largest grid value not exceeding ``units`` (``units`` >= 1)."""
    return DURATION_GRID[bisect.bisect_right(DURATION_GRID, units) - 1]


def velocity_to_bin(velocity: int) -> int:
    return min(VELOCITY_BINS - 1, max(0, (velocity - 1) * VELOCITY_BINS // 127))


def bin_to_velocity(vel_bin: int) -> int:
    return min(127, max(1, round((vel_bin + 0.5) * 127 / VELOCITY_BINS)))


def bar_position(onset_units: int) -> tuple[int, int]:
    if onset_units < 0:
        raise ValueError(f"negative onset: {onset_units}")
    return divmod(onset_units, UNITS_PER_BAR)


def normalize(notes: Iterable[QNote], stats: Counter | None = None) -> Score:
    """Deduplicate and de-overlap notes into a valid :class:`Score`.

    Of two notes sharing (onset, pitch) the longer one wins, then the louder.
    A note still sounding when the same pitch is struck again is cut at the
    new onset, rounded down to the grid.
    """
    stats = Counter() if stats is None else stats
    best: dict[tuple[int, int], QNote] = {}
    for n in notes:
        key = (n.onset, n.pitch)
        other = best.get(key)
        if other is None:
            best[key] = n
            continue
        stats["duplicates"] += 1
        if (n.duration, n.vel_bin) > (other.duration, other.vel_bin):
            best[key] = n

    out: list[QNote] = []
    by_pitch: dict[int, int] = {}
    for n in sorted(best.values()):
        prev = by_pitch.get(n.pitch)
        if prev is not None and out[prev].offset > n.onset:
            cut = floor_duration(n.onset - out[prev].onset)
            out[prev] = replace(out[prev], duration=cut)
            stats["truncated"] += 1
        by_pitch[n.pitch] = len(out)
        out.append(n)
    return Score(tuple(out), stats)


def quantize(song: RawSong, *, out_of_range: str = "drop") -> Score:
    """Map a raw song onto the 8-samples-per-beat grid.

    ``out_of_range`` is ``"drop"`` (default) or ``"clip"`` for pitches outside
    the piano range.
    """
    if out_of_range not in ("drop", "clip"):
        raise ValueError(f"out_of_range must be 'drop' or 'clip', got {out_of_range!r}")
    tpq = song.ticks_per_quarter
    if any((num, den) != (4, 4) for _, num, den in song.time_signatures):
        logger.warning("non-4/4 time signature found; bars are still counted as 4 beats")

    stats: Counter = Counter()
    notes = []
    for raw in song.notes:
        pitch = raw.pitch
        if not PITCH_MIN <= pitch <= PITCH_MAX:
            if out_of_range == "drop":
                stats["dropped_pitch"] += 1
                continue
            pitch = min(PITCH_MAX, max(PITCH_MIN, pitch))
            stats["clipped_pitch"] += 1
        # round half up, exact in integers
        onset = (2 * raw.onset_ticks * UNITS_PER_BEAT + tpq) // (2 * tpq)
        duration = nearest_duration(Fraction(raw.duration_ticks * UNITS_PER_BEAT, tpq))
        notes.append(QNote(onset, pitch, velocity_to_bin(raw.velocity), duration))
    score = normalize(notes, stats)
    stats["kept"] = len(score)
    return score


def to_raw(score: Score, ticks_per_quarter: int = 480) -> RawSong:
    """Render a score back to ticks, e.g. for writing a MIDI file."""
    if ticks_per_quarter % UNITS_PER_BEAT:
        raise ValueError("ticks_per_quarter must be a multiple of 8 for an exact rendering")
    unit = ticks_per_quarter // UNITS_PER_BEAT
    notes = tuple(
        RawNote(n.onset * unit, n.pitch, bin_to_velocity(n.vel_bin), n.duration * unit)
        for n in score.notes
    )
    return RawSong(ticks_per_quarter, notes, ((0, 4, 4),))


def _check_offsets(pitch_offsets: Sequence[int], vel_offsets: Sequence[int], any_pitch: bool) -> None:
    for off in pitch_offsets:
        if not any_pitch and off % 12:
            raise ValueError(f"pitch offset {off} is not a whole number of octaves")
    for off in vel_offsets:
        if abs(off) >= VELOCITY_BINS:
            raise ValueError(f"velocity offset {off} exceeds the bin range")


def iter_variants(
    score: Score,
    pitch_offsets: Sequence[int] = DEFAULT_PITCH_OFFSETS,
    vel_offsets: Sequence[int] = DEFAULT_VEL_OFFSETS,
    *,
    any_pitch: bool = False,
) -> Iterator[tuple[str, int, Score]]:
    """Yield ``(kind, offset, variant)`` for each independent shift.

    ``kind`` is ``"pitch"`` or ``"velocity"``. Variants equal to the original
    or left without notes are skipped.
    """
    _check_offsets(pitch_offsets, vel_offsets, any_pitch)
    jobs = [("pitch", off) for off in pitch_offsets] + [("velocity", off) for off in vel_offsets]
    for kind, off in jobs:
        if off == 0:
            continue
        if kind == "pitch":
            shifted = [
                replace(n, pitch=n.pitch + off)
                for n in score.notes
                if PITCH_MIN <= n.pitch + off <= PITCH_MAX
            ]
        else:
            shifted = [
                replace(n, vel_bin=min(VELOCITY_BINS - 1, max(0, n.vel_bin + off)))
                for n in score.notes
            ]
        variant = Score(tuple(shifted))
        if variant == score:
            continue
        if not variant.notes:
            warnings.warn(f"{kind} shift {off:+d} removed every note; variant skipped", EmptyVariant)
            continue
        yield kind, off, variant


def augment(
    score: Score,
    pitch_offsets: Sequence[int] = DEFAULT_PITCH_OFFSETS,
    vel_offsets: Sequence[int] = DEFAULT_VEL_OFFSETS,
    *,
    any_pitch: bool = False,
) -> list[Score]:
    return [v for _, _, v in iter_variants(score, pitch_offsets, vel_offsets, any_pitch=any_pitch)]
