"""Descriptive statistics of scores and token streams, with CSV/JSON/SVG output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from ._io import atomic_write
from .score import DURATION_GRID, UNITS_PER_BAR, Score
from .tse import CATEGORIES, BpeNotDecoded, TseReport
from .vocab import Scheme, TokenSequence, TokenType, build_vocab, scheme_types

WIDTH, HEIGHT = 640, 320


@dataclass(frozen=True)
class Histogram:
    kind: str
    bins: tuple
    counts: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def density(self) -> tuple[float, ...]:
        total = self.total
        if not total:
            return tuple(0.0 for _ in self.counts)
        return tuple(c / total for c in self.counts)

    def to_json(self) -> dict:
        return {"kind": self.kind, "bins": list(self.bins), "counts": list(self.counts), "density": list(self.density)}


@dataclass(frozen=True)
class SuccessionMatrix:
    scheme: Scheme
    types: tuple[TokenType, ...]
    counts: tuple[tuple[int, ...], ...]

    @property
    def observed(self) -> tuple[bool, ...]:
        return tuple(sum(row) > 0 for row in self.counts)

    @property
    def rows(self) -> tuple[tuple[float, ...], ...]:
        out = []
        for row in self.counts:
            total = sum(row)
            out.append(tuple(c / total if total else 0.0 for c in row))
        return tuple(out)

    def cell(self, current: TokenType, nxt: TokenType) -> float:
        return self.rows[self.types.index(current)][self.types.index(nxt)]

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme.slug,
            "types": [t.value for t in self.types],
            "counts": [list(r) for r in self.counts],
            "rows": [list(r) for r in self.rows],
            "observed": list(self.observed),
        }


def note_histograms(scores: Iterable[Score]) -> tuple[Histogram, Histogram, Histogram]:
    """Onset-position, offset-position and duration histograms."""
    onsets = [0] * UNITS_PER_BAR
    offsets = [0] * UNITS_PER_BAR
    grid_index = {v: i for i, v in enumerate(DURATION_GRID)}
    durations = [0] * len(DURATION_GRID)
    for score in scores:
        for n in score.notes:
            onsets[n.onset % UNITS_PER_BAR] += 1
            offsets[n.offset % UNITS_PER_BAR] += 1
            durations[grid_index[n.duration]] += 1
    positions = tuple(range(UNITS_PER_BAR))
    return (
        Histogram("onset_position", positions, tuple(onsets)),
        Histogram("offset_position", positions, tuple(offsets)),
        Histogram("duration", DURATION_GRID, tuple(durations)),
    )


def succession_matrix(seqs: Iterable[TokenSequence], scheme: Scheme) -> SuccessionMatrix:
    """Counts of (current type -> next type) over consecutive tokens."""
    vocab = build_vocab(scheme)
    types = [TokenType.BOS, *scheme_types(scheme), TokenType.EOS]
    index = {t: i for i, t in enumerate(types)}
    pairs: dict[tuple[TokenType, TokenType], int] = {}
    for seq in seqs:
        if seq.is_bpe:
            raise BpeNotDecoded("succession statistics need base token ids")
        kinds = [vocab[i].ttype if 0 <= i < len(vocab) else None for i in seq.ids]
        for a, b in zip(kinds, kinds[1:]):
            if a is None or b is None:
                continue
            pairs[a, b] = pairs.get((a, b), 0) + 1
            for t in (a, b):
                if t not in index:
                    index[t] = len(types)
                    types.append(t)
    counts = [[0] * len(types) for _ in types]
    for (a, b), c in pairs.items():
        counts[index[a]][index[b]] += c
    return SuccessionMatrix(scheme, tuple(types), tuple(tuple(r) for r in counts))


# ---- emission -------------------------------------------------------------

def _num(x: float) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _csv(artifact, label: str) -> str:
    lines = []
    if isinstance(artifact, Histogram):
        lines.append("bin,count,density")
        lines += [f"{_num(b)},{c},{_num(d)}" for b, c, d in zip(artifact.bins, artifact.counts, artifact.density)]
    elif isinstance(artifact, SuccessionMatrix):
        lines.append(",".join(["current"] + [t.value for t in artifact.types]))
        for t, row in zip(artifact.types, artifact.rows):
            lines.append(",".join([t.value] + [_num(x) for x in row]))
    elif isinstance(artifact, TseReport):
        lines.append(",".join(["tokenization", *CATEGORIES, "total_tokens"]))
        ratios = artifact.ratios
        lines.append(",".join([label, *(_num(ratios[c]) for c in CATEGORIES), str(artifact.total_tokens)]))
    else:
        raise TypeError(f"cannot emit {type(artifact).__name__}")
    return "\n".join(lines) + "\n"


def tse_table_csv(reports: dict[str, TseReport]) -> str:
    """Several reports as one table, one row per tokenization."""
    lines = [",".join(["tokenization", *CATEGORIES, "total_tokens"])]
    for name, rep in reports.items():
        ratios = rep.ratios
        lines.append(",".join([name, *(_num(ratios[c]) for c in CATEGORIES), str(rep.total_tokens)]))
    return "\n".join(lines) + "\n"


def _svg_open(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'width="{WIDTH}" height="{HEIGHT}">',
        f'<title>{escape(title)}</title>',
    ]


def _bar_chart(labels: Sequence, values: Sequence[float], title: str) -> str:
    left, right, top, bottom = 40, 10, 30, 30
    plot_w, plot_h = WIDTH - left - right, HEIGHT - top - bottom
    peak = max(values, default=0.0) or 1.0
    step = plot_w / max(len(values), 1)
    out = _svg_open(title)
    out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<path d="M{left} {top}V{top + plot_h}H{left + plot_w}" stroke="#000" fill="none"/>')
    for i, (label, v) in enumerate(zip(labels, values)):
        h = plot_h * v / peak
        x = left + i * step
        out.append(
            f'<rect x="{x + 1:.2f}" y="{top + plot_h - h:.2f}" width="{max(step - 2, 0.5):.2f}" '
            f'height="{h:.2f}" fill="#4a6fa5"><title>{escape(str(label))}: {_num(v)}</title></rect>'
        )
        out.append(
            f'<text x="{x + step / 2:.2f}" y="{HEIGHT - bottom + 14}" text-anchor="middle" '
            f'font-size="8">{escape(str(label))}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _heatmap(matrix: SuccessionMatrix, title: str) -> str:
    n = len(matrix.types)
    left, top = 80, 80
    cell = min((WIDTH - left - 10) / max(n, 1), (HEIGHT - top - 10) / max(n, 1))
    out = _svg_open(title)
    out.append(f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for j, t in enumerate(matrix.types):
        x = left + (j + 0.5) * cell
        out.append(
            f'<text x="{x:.2f}" y="{top - 6}" font-size="9" text-anchor="start" '
            f'transform="rotate(-45 {x:.2f} {top - 6})">{escape(t.value)}</text>'
        )
    for i, (t, row) in enumerate(zip(matrix.types, matrix.rows)):
        y = top + i * cell
        out.append(
            f'<text x="{left - 4}" y="{y + cell / 2 + 3:.2f}" font-size="9" text-anchor="end">{escape(t.value)}</text>'
        )
        for j, v in enumerate(row):
            # linear ramp: 0 -> white, 1 -> black
            g = round(255 * (1.0 - v))
            out.append(
                f'<rect x="{left + j * cell:.2f}" y="{y:.2f}" width="{cell:.2f}" height="{cell:.2f}" '
                f'fill="rgb({g},{g},{g})" stroke="#ccc"><title>{escape(t.value)} -&gt; '
                f'{escape(matrix.types[j].value)}: {_num(v)}</title></rect>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _svg(artifact, label: str) -> str:
    if isinstance(artifact, Histogram):
        return _bar_chart(artifact.bins, artifact.density, f"{label} {artifact.kind}".strip())
    if isinstance(artifact, SuccessionMatrix):
        return _heatmap(artifact, f"{label} token type succession".strip())
    if isinstance(artifact, TseReport):
        ratios = artifact.ratios
        return _bar_chart(CATEGORIES, [ratios[c] for c in CATEGORIES], f"{label} TSE ratios".strip())
    raise TypeError(f"cannot emit {type(artifact).__name__}")


def render(artifact, fmt: str, label: str = "") -> str:
    if fmt == "csv":
        return _csv(artifact, label)
    if fmt == "json":
        doc = artifact.to_json()
        if label:
            doc["label"] = label
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if fmt == "svg":
        return _svg(artifact, label)
    raise ValueError(f"unknown format {fmt!r}")


def emit(artifact: Histogram | SuccessionMatrix | TseReport, fmt: str, path, label: str = "") -> Path:
    """Write ``artifact`` as csv, json or svg. Output is byte-deterministic."""
    return atomic_write(path, render(artifact, fmt, label))
