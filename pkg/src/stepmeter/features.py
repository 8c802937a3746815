"""Per-step feature sequences extracted from parsed charts.

Each event row (a row where the player must act) becomes one 19-dim
vector. Column layout, in order:

====  =========================================================
0     tempo: bpm at the row divided by 240
1-7   note-level flags for grids 1/4, 1/8, 1/12, 1/16, 1/24,
      1/32, and "other" (off-grid)
8     progress through the chart by time, in [0, 1)
9     progress through the chart by step index, in [0, 1]
10    time since the previous event: min(4 * delta_seconds, 8);
      8 for the first event
11-14 tap bag: per-column count of taps (hold and roll starts
      count as taps)
15-18 hold bag: per-column count of active hold/roll bodies
====  =========================================================

A row is an event when it has at least one tap-like symbol or at least
one active hold/roll body. A hold body is active strictly after its
start row through its tail row inclusive. Rolls behave exactly like
holds. Mines and unknown symbols never make a row an event.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .jsonio import dumps_canonical, round9, write_atomic_text

from .simfile import (
    BEATS_PER_MEASURE,
    COLUMNS,
    STEP_SYMBOLS,
    Level,
    NoteSymbol,
    SongHeader,
    beat_clock,
    row_timings,
)

FEATURE_DIM = 19
GRID_DENOMINATORS = (4, 8, 12, 16, 24, 32)
TEMPO_SCALE = 240.0
TIME_DELTA_SCALE = 4.0
TIME_DELTA_CAP = 8.0

FEATURE_COLUMNS = (
    ("tempo",)
    + tuple(f"grid_1_{d}" for d in GRID_DENOMINATORS)
    + ("grid_other", "progress_time", "progress_steps", "time_since_last")
    + tuple(f"tap_col_{c}" for c in range(COLUMNS))
    + tuple(f"hold_col_{c}" for c in range(COLUMNS))
)
assert len(FEATURE_COLUMNS) == FEATURE_DIM


class EmptyChart(Exception):
    """A level with no event rows at all."""


def reduced_grid(row_index: int, subdivisions: int) -> int:
    """Finest grid a row sits on: the reduced denominator of r/S per beat.

    A measure with S subdivisions places row r at beat fraction
    (4r/S)/4 = r/S of the measure; the note level is the denominator of
    r/S in lowest terms, except that whole- and half-measure positions
    (denominator 1 or 2) are still quarter-note rows.
    """
    if subdivisions < 1:
        raise ValueError("subdivisions must be >= 1")
    d = Fraction(row_index % subdivisions, subdivisions).denominator
    return 4 if d in (1, 2) else d


def note_level_flags(grid: int) -> tuple[int, int, int, int, int, int, int]:
    """Multi-hot flags over (1/4, 1/8, 1/12, 1/16, 1/24, 1/32, other).

    Flag d fires when d divides the row's reduced grid denominator, so a
    1/24 row yields (1, 1, 1, 0, 1, 0, 0). A row whose denominator none
    of the six named grids divide is "other": a quintuplet row yields
    (0, 0, 0, 0, 0, 0, 1).
    """
    flags = tuple(1 if grid % d == 0 else 0 for d in GRID_DENOMINATORS)
    other = 0 if any(flags) else 1
    return flags + (other,)  # type: ignore[return-value]


def encode_time_delta(delta_seconds: float | None) -> float:
    """min(4 * delta, 8); the cap value 8 when there is no previous event."""
    if delta_seconds is None:
        return TIME_DELTA_CAP
    return min(TIME_DELTA_SCALE * delta_seconds, TIME_DELTA_CAP)


@dataclass
class FeatureSequence:
    """T x 19 event features for one level, plus identification."""

    song_id: str
    level_index: int
    meter: int
    rows: np.ndarray  # (T, FEATURE_DIM) float64

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[1] != FEATURE_DIM:
            raise ValueError(f"rows must be (T, {FEATURE_DIM}), got {self.rows.shape}")

    def __len__(self) -> int:
        return self.rows.shape[0]


def extract_sequence(
    level: Level,
    header: SongHeader,
    song_id: str = "",
    level_index: int = 0,
) -> FeatureSequence:
    """Encode a level's event rows as a (T, 19) float array.

    Raises :class:`EmptyChart` when the level has no event rows.
    """
    timings = row_timings(level, header)
    rows = [row for measure in level.measures for row in measure.rows]

    # First pass: find event rows with their tap/hold column bags. A body
    # is active strictly after its start row (activation happens below,
    # after the bag is taken) and through its tail row (deactivation also
    # happens after).
    events: list[tuple[int, tuple[int, ...], tuple[int, ...]]] = []
    active = [False] * COLUMNS
    for i, row in enumerate(rows):
        taps = tuple(1 if sym in STEP_SYMBOLS else 0 for sym in row.columns)
        holds = tuple(1 if active[c] else 0 for c in range(COLUMNS))
        for c, sym in enumerate(row.columns):
            if sym in (NoteSymbol.HOLD_START, NoteSymbol.ROLL_START):
                active[c] = True
            elif sym is NoteSymbol.TAIL_END:
                active[c] = False
        if any(taps) or any(holds):
            events.append((i, taps, holds))

    if not events:
        raise EmptyChart("level has no taps or holds")

    clock_start = _chart_start_seconds(header)
    clock_end = _chart_end_seconds(level, header)
    span = clock_end - clock_start

    t = len(events)
    out = np.zeros((t, FEATURE_DIM), dtype=np.float64)
    prev_seconds: float | None = None
    for k, (i, taps, holds) in enumerate(events):
        timing = timings[i]
        out[k, 0] = timing.bpm / TEMPO_SCALE
        out[k, 1:8] = note_level_flags(reduced_grid(timing.row, timing.subdivisions))
        out[k, 8] = (timing.seconds - clock_start) / span
        out[k, 9] = k / (t - 1) if t > 1 else 0.0
        delta = None if prev_seconds is None else timing.seconds - prev_seconds
        out[k, 10] = encode_time_delta(delta)
        out[k, 11:15] = taps
        out[k, 15:19] = holds
        prev_seconds = timing.seconds

    return FeatureSequence(song_id=song_id, level_index=level_index, meter=level.meter, rows=out)


def _chart_start_seconds(header: SongHeader) -> float:
    return beat_clock(header).seconds_at(0.0)


def _chart_end_seconds(level: Level, header: SongHeader) -> float:
    return beat_clock(header).seconds_at(BEATS_PER_MEASURE * len(level.measures))


def chart_span_seconds(level: Level, header: SongHeader) -> float:
    """Playable length: beat 0 to the end of the last measure."""
    return _chart_end_seconds(level, header) - _chart_start_seconds(header)


def sequence_to_record(seq: FeatureSequence) -> dict:
    """JSON-safe dict with reals rounded to 9 significant digits."""
    return {
        "song_id": seq.song_id,
        "level_index": seq.level_index,
        "meter": seq.meter,
        "rows": [[round9(v) for v in row] for row in seq.rows.tolist()],
    }


def sequence_from_record(record: dict) -> FeatureSequence:
    return FeatureSequence(
        song_id=record["song_id"],
        level_index=int(record["level_index"]),
        meter=int(record["meter"]),
        rows=np.asarray(record["rows"], dtype=np.float64),
    )


def write_feature_file(path, sequences) -> None:
    """Dump sequences as one JSON object per line, atomically, keys sorted.

    Identical inputs produce byte-identical files.
    """
    lines = [dumps_canonical(sequence_to_record(s)) for s in sequences]
    write_atomic_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_feature_file(path) -> list[FeatureSequence]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(sequence_from_record(json.loads(line)))
    return out
