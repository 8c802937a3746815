"""Synthetic pack with difficulty planted as note density.

Every chart is a uniform run of single taps; a chart's rate in notes per
second is fully determined by its measure subdivision count and the song
BPM. Labels follow fixed density thresholds, so a learner only has to
recover the rate to be perfect, which is exactly what the scaled-down
experiments need: a dataset the whole pipeline can master quickly, with
labels that are a pure function of the planted statistics.

BPMs are drawn from [110, 170]. With subdivisions (4, 8, 16, 32) the
note rates land in [1.83, 2.83], [3.67, 5.67], [7.33, 11.33], and
[14.67, 22.67] notes per second: safely inside the four threshold
buckets below, so the meters are always 1, 2, 3, 4.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .simfile import Level, Measure, NoteRow, NoteSymbol, Song, SongHeader, serialize_sm

DENSITY_THRESHOLDS = (3.0, 6.0, 12.0)  # notes per second
SUBDIVISION_LADDER = (4, 8, 16, 32)
BPM_RANGE = (110.0, 170.0)


def density_label(subdivisions: int, bpm: float) -> int:
    notes_per_second = subdivisions * bpm / 240.0
    return 1 + sum(notes_per_second >= t for t in DENSITY_THRESHOLDS)


def _tap_row(column: int) -> NoteRow:
    symbols = [NoteSymbol.EMPTY] * 4
    symbols[column] = NoteSymbol.TAP
    return NoteRow(columns=tuple(symbols))


def synthetic_song(bpm: float, measures: int, rng: np.random.Generator, title: str) -> Song:
    levels = []
    for subdivisions in SUBDIVISION_LADDER:
        chart = [
            Measure(rows=[_tap_row(int(rng.integers(0, 4))) for _ in range(subdivisions)])
            for _ in range(measures)
        ]
        levels.append(
            Level(
                chart_type="dance-single",
                author_note="generated",
                difficulty_class="Medium",
                meter=density_label(subdivisions, bpm),
                measures=chart,
            )
        )
    header = SongHeader(title=title, artist="generator", offset_seconds=0.0, bpms=[(0.0, bpm)])
    return Song(header=header, levels=levels)


def generate_pack(out_dir: str | Path, songs: int = 15, measures: int = 8, seed: int = 0) -> list[Path]:
    """Write ``songs`` SM files; returns their paths in order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(songs):
        bpm = round(float(rng.uniform(*BPM_RANGE)), 3)
        song = synthetic_song(bpm, measures, rng, title=f"Synthetic {i:03d}")
        path = out / f"synth_{i:03d}.sm"
        path.write_text(serialize_sm(song), encoding="utf-8")
        paths.append(path)
    return paths
