"""Standard MIDI File reading and writing.

Only what a piano-roll pipeline needs: notes and time signatures. All tracks
and channels are merged into a single note list. Tempo is ignored since every
downstream step works in beats.
"""

from __future__ import annotations

import logging
import struct
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

PERCUSSION_CHANNEL = 9
MAX_TPQ = 0x7FFF


class MidiError(ValueError):
    """Base class for every structured parse failure."""


class MalformedHeader(MidiError):
    pass


class UnsupportedTimeDivision(MidiError):
    pass


class TruncatedChunk(MidiError):
    pass


class BadVarLen(MidiError):
    pass


class MalformedEvent(MidiError):
    pass


@dataclass(frozen=True, slots=True, order=True)
class RawNote:
    # field order doubles as the sort key: (onset, pitch, velocity)
    onset_ticks: int
    pitch: int
    velocity: int
    duration_ticks: int

    def __post_init__(self) -> None:
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch out of range: {self.pitch}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity out of range: {self.velocity}")
        if self.onset_ticks < 0:
            raise ValueError(f"negative onset: {self.onset_ticks}")
        if self.duration_ticks < 1:
            raise ValueError(f"duration must be >= 1 tick: {self.duration_ticks}")

    @property
    def offset_ticks(self) -> int:
        return self.onset_ticks + self.duration_ticks


@dataclass(frozen=True, slots=True)
class RawSong:
    ticks_per_quarter: int
    notes: tuple[RawNote, ...] = ()
    time_signatures: tuple[tuple[int, int, int], ...] = ()
    # parse diagnostics; not part of song identity
    warnings: Counter = field(default_factory=Counter, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not 1 <= self.ticks_per_quarter <= MAX_TPQ:
            raise ValueError(f"ticks_per_quarter out of range: {self.ticks_per_quarter}")
        object.__setattr__(self, "notes", tuple(sorted(self.notes)))
        object.__setattr__(self, "time_signatures", tuple(self.time_signatures))


class _Reader:
    """Bounds-checked cursor; every overrun becomes TruncatedChunk."""

    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, pos: int = 0, end: int | None = None) -> None:
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def remaining(self) -> int:
        return self.end - self.pos

    def read(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise TruncatedChunk(f"need {n} bytes at offset {self.pos}, have {self.remaining()}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def byte(self) -> int:
        if self.pos >= self.end:
            raise TruncatedChunk(f"unexpected end of data at offset {self.pos}")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def varlen(self) -> int:
        value = 0
        for _ in range(4):
            b = self.byte()
            value = (value << 7) | (b & 0x7F)
            if not b & 0x80:
                return value
        raise BadVarLen(f"variable-length quantity longer than 4 bytes at offset {self.pos - 4}")


def encode_varlen(value: int) -> bytes:
    if not 0 <= value <= 0x0FFFFFFF:
        raise ValueError(f"value not representable as a MIDI varlen: {value}")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def _parse_header(r: _Reader) -> tuple[int, int, int]:
    if r.remaining() < 8 or r.read(4) != b"MThd":
        raise MalformedHeader("missing MThd magic")
    (length,) = struct.unpack(">I", r.read(4))
    if length < 6:
        raise MalformedHeader(f"header length {length} < 6")
    if length > r.remaining():
        raise MalformedHeader(f"header length {length} exceeds file size")
    fmt, ntracks, division = struct.unpack(">HHH", r.read(6))
    r.read(length - 6)
    if fmt not in (0, 1):
        raise MalformedHeader(f"unsupported SMF format {fmt}")
    if division & 0x8000:
        raise UnsupportedTimeDivision("SMPTE time division is not supported")
    if division == 0:
        raise MalformedHeader("ticks per quarter note is zero")
    return fmt, ntracks, division


def _parse_track(r: _Reader, notes: list[RawNote], time_sigs: list, warnings: Counter) -> None:
    tick = 0
    status = None
    # (channel, pitch) -> queue of (onset, velocity), closed FIFO
    pending: dict[tuple[int, int], deque] = defaultdict(deque)

    def close(channel: int, pitch: int, at: int) -> None:
        queue = pending.get((channel, pitch))
        if not queue:
            warnings["orphan_note_off"] += 1
            return
        onset, velocity = queue.popleft()
        duration = at - onset
        if duration < 1:
            warnings["zero_length"] += 1
            duration = 1
        if channel == PERCUSSION_CHANNEL:
            warnings["percussion_notes"] += 1
        notes.append(RawNote(onset, pitch, velocity, duration))

    while r.remaining() > 0:
        tick += r.varlen()
        b = r.byte()
        if b >= 0x80:
            head = b
        elif status is None:
            raise MalformedEvent(f"data byte 0x{b:02x} without running status at offset {r.pos - 1}")
        else:
            head = status
            r.pos -= 1

        if head == 0xFF:
            status = None
            kind = r.byte()
            payload = r.read(r.varlen())
            if kind == 0x2F:
                break
            if kind == 0x58 and len(payload) >= 2:
                time_sigs.append((tick, payload[0], 1 << min(payload[1], 16)))
            continue
        if head in (0xF0, 0xF7):
            status = None
            r.read(r.varlen())
            continue
        if head >= 0xF0:
            raise MalformedEvent(f"system message 0x{head:02x} is not valid in a file")

        status = head
        kind, channel = head & 0xF0, head & 0x0F
        size = 1 if kind in (0xC0, 0xD0) else 2
        data = r.read(size)
        if any(x & 0x80 for x in data):
            raise MalformedEvent(f"status byte inside channel message at offset {r.pos - size}")
        if kind == 0x90 and data[1] > 0:
            pending[(channel, data[0])].append((tick, data[1]))
        elif kind == 0x80 or kind == 0x90:
            close(channel, data[0], tick)

    for (channel, pitch), queue in sorted(pending.items()):
        while queue:
            onset, velocity = queue.popleft()
            warnings["unmatched_note_on"] += 1
            if channel == PERCUSSION_CHANNEL:
                warnings["percussion_notes"] += 1
            notes.append(RawNote(onset, pitch, velocity, 1))


def parse_smf(data: bytes) -> RawSong:
    """Parse SMF bytes (format 0 or 1) into a merged note list.

    Raises a :class:`MidiError` subclass on any malformed input.
    """
    r = _Reader(bytes(data))
    _fmt, ntracks, tpq = _parse_header(r)
    notes: list[RawNote] = []
    time_sigs: list[tuple[int, int, int]] = []
    warnings: Counter = Counter()
    seen_tracks = 0
    while r.remaining() > 0:
        if r.remaining() < 8:
            raise TruncatedChunk(f"dangling {r.remaining()} bytes after last chunk")
        kind = r.read(4)
        (length,) = struct.unpack(">I", r.read(4))
        if length > r.remaining():
            raise TruncatedChunk(f"chunk {kind!r} declares {length} bytes, {r.remaining()} left")
        body = _Reader(r.data, r.pos, r.pos + length)
        r.pos += length
        if kind == b"MTrk":
            seen_tracks += 1
            _parse_track(body, notes, time_sigs, warnings)
    if seen_tracks != ntracks:
        warnings["track_count_mismatch"] += 1
    if warnings["percussion_notes"]:
        logger.warning("%d notes on the percussion channel were kept", warnings["percussion_notes"])
    if warnings["unmatched_note_on"]:
        logger.warning("%d unmatched note-ons closed after 1 tick", warnings["unmatched_note_on"])
    time_sigs.sort()
    return RawSong(tpq, tuple(notes), tuple(time_sigs), warnings)


def _assign_channels(notes: tuple[RawNote, ...]) -> list[int]:
    # Same-pitch notes that overlap go to different channels, otherwise FIFO
    # pairing on reparse would swap their offsets.
    free_at: dict[int, list[int]] = defaultdict(lambda: [0] * 16)
    channels = []
    for note in notes:
        slots = free_at[note.pitch]
        for ch in range(16):
            if ch != PERCUSSION_CHANNEL and slots[ch] <= note.onset_ticks:
                slots[ch] = note.offset_ticks
                channels.append(ch)
                break
        else:
            raise ValueError(
                f"more than 15 overlapping notes of pitch {note.pitch} at tick {note.onset_ticks}"
            )
    return channels


def write_smf(song: RawSong) -> bytes:
    """Serialize ``song`` as a single-track format-0 file."""
    # (tick, order, payload); order puts meta before note-offs before note-ons
    events: list[tuple[int, int, int, bytes]] = []
    for tick, num, den in song.time_signatures:
        if den < 1 or den & (den - 1):
            raise ValueError(f"time signature denominator must be a power of two: {den}")
        payload = bytes([0xFF, 0x58, 4, num, den.bit_length() - 1, 24, 8])
        events.append((tick, 0, 0, payload))
    for note, ch in zip(song.notes, _assign_channels(song.notes)):
        events.append((note.onset_ticks, 2, note.pitch, bytes([0x90 | ch, note.pitch, note.velocity])))
        events.append((note.offset_ticks, 1, note.pitch, bytes([0x80 | ch, note.pitch, 64])))
    events.sort(key=lambda e: e[:3])

    track = bytearray()
    tick = 0
    status = None
    for at, _order, _pitch, payload in events:
        track += encode_varlen(at - tick)
        tick = at
        if payload[0] == 0xFF:
            status = None
            track += payload
        elif payload[0] == status:
            track += payload[1:]
        else:
            status = payload[0]
            track += payload
    track += b"\x00\xFF\x2F\x00"

    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, song.ticks_per_quarter)
    return header + b"MTrk" + struct.pack(">I", len(track)) + bytes(track)


def read_smf(path) -> RawSong:
    with open(path, "rb") as fh:
        return parse_smf(fh.read())
