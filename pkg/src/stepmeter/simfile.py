"""Parsing, timing, and serialization for StepMania SM simfiles.

An SM file is a sequence of ``#TAG:VALUE;`` entries. ``#NOTES`` entries
carry five ``:``-terminated metadata fields (chart type, author note,
difficulty class, numeric meter, radar values) followed by note measures
separated by ``,`` and terminated by ``;``. ``//`` starts a comment that
runs to end of line. Each note row is one line of four symbols.

The parser never crashes on garbage input: structural defects either
raise a typed :class:`SimfileError` carrying the byte offset of the
defect, or are repaired with a warning recorded on the parsed object.
Repairs are fixed points: serializing a repaired song and reparsing it
yields the same structure with no new warnings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

SUPPORTED_CHART_TYPE = "dance-single"
COLUMNS = 4
BEATS_PER_MEASURE = 4


class SimfileError(Exception):
    """Base for fatal parse failures. ``offset`` is a byte offset into the input."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


class MissingNotesSection(SimfileError):
    """No usable dance-single chart in the file."""


class MalformedBpms(SimfileError):
    """#BPMS missing, unparsable, or violating beat monotonicity."""


class RowWidthError(SimfileError):
    """A note row does not have exactly four columns."""


class UnterminatedChart(SimfileError):
    """A #NOTES section with no closing semicolon."""


class NoSongsFound(Exception):
    """A pack directory with no .sm files at all."""


class NoteSymbol(Enum):
    EMPTY = "0"
    TAP = "1"
    HOLD_START = "2"
    TAIL_END = "3"
    ROLL_START = "4"
    MINE = "M"
    OTHER = "?"

    @classmethod
    def from_char(cls, ch: str) -> "NoteSymbol":
        return _SYMBOL_BY_CHAR.get(ch, cls.OTHER)


_SYMBOL_BY_CHAR = {s.value: s for s in NoteSymbol if s is not NoteSymbol.OTHER}

# Symbols that start something the player must hit.
STEP_SYMBOLS = frozenset({NoteSymbol.TAP, NoteSymbol.HOLD_START, NoteSymbol.ROLL_START})


@dataclass(frozen=True)
class NoteRow:
    columns: tuple[NoteSymbol, ...]

    def __post_init__(self):
        if len(self.columns) != COLUMNS:
            raise ValueError(f"note row needs {COLUMNS} columns, got {len(self.columns)}")

    def __str__(self) -> str:
        return "".join(c.value for c in self.columns)


@dataclass
class Measure:
    rows: list[NoteRow]

    @property
    def subdivisions(self) -> int:
        return len(self.rows)


@dataclass
class Level:
    chart_type: str
    author_note: str
    difficulty_class: str
    meter: int
    measures: list[Measure]
    warnings: list[str] = field(default_factory=list)


@dataclass
class SongHeader:
    title: str = ""
    artist: str = ""
    offset_seconds: float = 0.0
    # (beat, bpm) pairs, beats strictly increasing from 0, bpm > 0.
    bpms: list[tuple[float, float]] = field(default_factory=list)
    stops: list[tuple[float, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass
class Song:
    header: SongHeader
    levels: list[Level]
    source_path: str = ""


@dataclass
class ParseFailure:
    path: str
    error: str


@dataclass
class PackResult:
    songs: list[Song]
    failures: list[ParseFailure]


_COMMENT_RE = re.compile(rb"//[^\r\n]*")


def _blank_comments(data: bytes) -> bytes:
    # Equal-length replacement keeps every byte offset stable.
    return _COMMENT_RE.sub(lambda m: b" " * len(m.group(0)), data)


def _decode(raw: bytes) -> str:
    return raw.decode("utf-8", errors="replace").strip()


def _parse_float(raw: bytes) -> float | None:
    try:
        value = float(_decode(raw))
    except ValueError:
        return None
    if value != value or value in (float("inf"), float("-inf")):
        return None
    return value


def _parse_bpms(raw: bytes, offset: int) -> list[tuple[float, float]]:
    entries: list[tuple[float, float]] = []
    pos = 0
    for chunk in raw.split(b","):
        chunk_offset = offset + pos
        pos += len(chunk) + 1
        if not chunk.strip():
            continue
        beat_part, eq, bpm_part = chunk.partition(b"=")
        if not eq:
            raise MalformedBpms("bpm entry missing '='", chunk_offset)
        beat = _parse_float(beat_part)
        bpm = _parse_float(bpm_part)
        if beat is None or bpm is None:
            raise MalformedBpms("bpm entry is not a pair of numbers", chunk_offset)
        if bpm <= 0:
            raise MalformedBpms("bpm must be positive", chunk_offset)
        if entries and beat <= entries[-1][0]:
            raise MalformedBpms("bpm beats must be strictly increasing", chunk_offset)
        entries.append((beat, bpm))
    if not entries:
        raise MalformedBpms("empty #BPMS value", offset)
    if entries[0][0] != 0.0:
        raise MalformedBpms("first bpm segment must start at beat 0", offset)
    return entries


def _parse_beat_value_pairs(raw: bytes) -> list[tuple[float, float]] | None:
    """Lenient beat=value list used for #STOPS; None when anything is off."""
    entries: list[tuple[float, float]] = []
    for chunk in raw.split(b","):
        if not chunk.strip():
            continue
        beat_part, eq, value_part = chunk.partition(b"=")
        if not eq:
            return None
        beat = _parse_float(beat_part)
        value = _parse_float(value_part)
        if beat is None or value is None:
            return None
        entries.append((beat, value))
    return entries


def _repair_holds(measures: list[Measure], warnings: list[str]) -> None:
    """Balance hold/roll starts and tails in place.

    Orphan tails become empties, duplicate starts become taps, and a start
    with no tail is closed on the chart's final row (degrading to a tap when
    the start itself is the final row).
    """
    flat: list[tuple[int, int]] = [
        (mi, ri) for mi, m in enumerate(measures) for ri in range(len(m.rows))
    ]

    def get(pos: tuple[int, int], col: int) -> NoteSymbol:
        return measures[pos[0]].rows[pos[1]].columns[col]

    def put(pos: tuple[int, int], col: int, sym: NoteSymbol) -> None:
        row = measures[pos[0]].rows[pos[1]]
        cols = list(row.columns)
        cols[col] = sym
        measures[pos[0]].rows[pos[1]] = NoteRow(tuple(cols))

    for col in range(COLUMNS):
        open_at: tuple[int, int] | None = None
        for pos in flat:
            sym = get(pos, col)
            if sym in (NoteSymbol.HOLD_START, NoteSymbol.ROLL_START):
                if open_at is not None:
                    put(pos, col, NoteSymbol.TAP)
                    warnings.append(
                        f"column {col}: hold started inside a hold at measure "
                        f"{pos[0]} row {pos[1]}; treated as tap"
                    )
                else:
                    open_at = pos
            elif sym is NoteSymbol.TAIL_END:
                if open_at is None:
                    put(pos, col, NoteSymbol.EMPTY)
                    warnings.append(
                        f"column {col}: tail without a hold at measure "
                        f"{pos[0]} row {pos[1]}; removed"
                    )
                else:
                    open_at = None
        if open_at is not None:
            last = flat[-1]
            if open_at == last:
                put(last, col, NoteSymbol.TAP)
                warnings.append(f"column {col}: hold opened on the final row; treated as tap")
            else:
                put(last, col, NoteSymbol.TAIL_END)
                warnings.append(f"column {col}: unterminated hold closed at the final row")
            # A tail may have overwritten another note on the last row; that
            # is the documented repair, not a separate defect.


def _parse_chart(body: bytes, body_offset: int) -> tuple[Level | None, list[str]]:
    """Parse one #NOTES body (between ':' and ';').

    Returns (level, warnings). level is None when the chart is skipped
    (unsupported type, bad metadata); skip reasons land in warnings.
    """
    parts = body.split(b":", 5)
    if len(parts) < 6:
        return None, ["chart has fewer than five metadata fields; skipped"]

    chart_type = _decode(parts[0])
    if chart_type.lower() != SUPPORTED_CHART_TYPE:
        return None, []

    author_note = _decode(parts[1])
    difficulty_class = _decode(parts[2])
    meter_raw = _decode(parts[3])
    try:
        meter = int(float(meter_raw))
    except ValueError:
        return None, [f"chart meter {meter_raw!r} is not numeric; skipped"]
    if meter < 1:
        return None, [f"chart meter {meter} below 1; skipped"]

    notes = parts[5]
    notes_offset = body_offset + (len(body) - len(notes))
    if not notes.strip().strip(b","):
        return None, ["chart has no note data; skipped"]

    warnings: list[str] = []
    measures: list[Measure] = []
    current: list[NoteRow] = []

    def close_measure() -> None:
        if not current:
            warnings.append(f"empty measure {len(measures)}; padded with a blank row")
            current.append(NoteRow((NoteSymbol.EMPTY,) * COLUMNS))
        measures.append(Measure(list(current)))
        current.clear()

    line_start = 0
    i = 0
    n = len(notes)
    while i <= n:
        at_end = i == n
        ch = notes[i : i + 1]
        if at_end or ch in (b"\n", b"\r", b","):
            piece = notes[line_start:i]
            token = piece.strip()
            if token:
                if len(token) != COLUMNS:
                    raise RowWidthError(
                        f"note row {token[:16]!r} has {len(token)} columns",
                        notes_offset + line_start + (len(piece) - len(piece.lstrip())),
                    )
                current.append(
                    NoteRow(tuple(NoteSymbol.from_char(chr(b)) for b in token))
                )
            if ch == b",":
                close_measure()
            line_start = i + 1
        if at_end:
            break
        i += 1
    close_measure()
    _repair_holds(measures, warnings)
    return (
        Level(
            chart_type=SUPPORTED_CHART_TYPE,
            author_note=author_note,
            difficulty_class=difficulty_class,
            meter=meter,
            measures=measures,
            warnings=warnings,
        ),
        warnings,
    )


def parse_sm(data: bytes | str) -> Song:
    """Parse SM bytes (or text) into a :class:`Song`.

    Raises a :class:`SimfileError` subclass on fatal structural defects;
    lesser defects are repaired and recorded as warnings on the song or
    level. Input that is not a simfile at all (no usable chart) raises
    :class:`MissingNotesSection`.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    buf = _blank_comments(data)

    header = SongHeader()
    levels: list[Level] = []
    saw_notes_tag = False
    first_notes_offset = 0

    pos = 0
    n = len(buf)
    while pos < n:
        hash_at = buf.find(b"#", pos)
        if hash_at == -1:
            break
        colon_at = buf.find(b":", hash_at)
        if colon_at == -1:
            break
        tag = buf[hash_at + 1 : colon_at].strip().upper()
        semi_at = buf.find(b";", colon_at)

        if tag == b"NOTES":
            saw_notes_tag = True
            if not levels:
                first_notes_offset = hash_at
            if semi_at == -1:
                raise UnterminatedChart("unterminated #NOTES section", hash_at)
            body = buf[colon_at + 1 : semi_at]
            level, warns = _parse_chart(body, colon_at + 1)
            if level is not None:
                levels.append(level)
            else:
                header.warnings.extend(warns)
            pos = semi_at + 1
            continue

        if semi_at == -1:
            # Truncated trailing tag; tolerate for non-chart tags.
            value = buf[colon_at + 1 :]
            pos = n
        else:
            value = buf[colon_at + 1 : semi_at]
            pos = semi_at + 1

        if tag == b"TITLE":
            header.title = _decode(value)
        elif tag == b"ARTIST":
            header.artist = _decode(value)
        elif tag == b"OFFSET":
            parsed = _parse_float(value)
            if parsed is None:
                header.warnings.append("unparsable #OFFSET; using 0")
            else:
                header.offset_seconds = parsed
        elif tag == b"BPMS":
            header.bpms = _parse_bpms(value, colon_at + 1)
        elif tag == b"STOPS":
            stops = _parse_beat_value_pairs(value)
            if stops is None:
                header.warnings.append("unparsable #STOPS; ignored")
            else:
                header.stops = stops

    if not levels:
        raise MissingNotesSection(
            "no usable dance-single chart",
            first_notes_offset if saw_notes_tag else 0,
        )
    if not header.bpms:
        raise MalformedBpms("file has no #BPMS entry", 0)
    return Song(header=header, levels=levels)


def parse_pack(directory: str | Path) -> PackResult:
    """Parse every .sm file under ``directory`` (recursive, case-insensitive).

    Files are visited in sorted path order. Unreadable or unparsable files
    become :class:`ParseFailure` records instead of aborting the pack.
    Raises :class:`NoSongsFound` when the tree has no .sm files at all.
    """
    directory = Path(directory)
    paths = sorted(
        (p for p in directory.rglob("*") if p.is_file() and p.suffix.lower() == ".sm"),
        key=lambda p: p.as_posix(),
    )
    if not paths:
        raise NoSongsFound(f"no .sm files under {directory}")

    songs: list[Song] = []
    failures: list[ParseFailure] = []
    for path in paths:
        rel = path.relative_to(directory).as_posix()
        try:
            raw = path.read_bytes()
        except OSError as exc:
            failures.append(ParseFailure(path=rel, error=f"io: {exc}"))
            continue
        try:
            song = parse_sm(raw)
        except SimfileError as exc:
            failures.append(ParseFailure(path=rel, error=f"{type(exc).__name__}: {exc}"))
            continue
        song.source_path = rel
        songs.append(song)
    return PackResult(songs=songs, failures=failures)


@dataclass(frozen=True)
class RowTiming:
    """Placement of one note row on the global grid and the clock."""

    index: int  # global row index across measures
    measure: int
    row: int  # index within the measure
    subdivisions: int  # rows in this measure
    beat: float
    seconds: float
    bpm: float


class _BeatClock:
    """Piecewise-constant-tempo beat -> seconds conversion."""

    def __init__(self, header: SongHeader):
        self._segments = header.bpms
        self._offset = header.offset_seconds
        # Cumulative seconds at each segment start, before the offset shift.
        starts = [0.0]
        for (b0, bpm), (b1, _) in zip(self._segments, self._segments[1:]):
            starts.append(starts[-1] + (b1 - b0) * 60.0 / bpm)
        self._starts = starts

    def bpm_at(self, beat: float) -> float:
        bpm = self._segments[0][1]
        for b, seg_bpm in self._segments:
            if b <= beat:
                bpm = seg_bpm
            else:
                break
        return bpm

    def seconds_at(self, beat: float) -> float:
        i = 0
        for j, (b, _) in enumerate(self._segments):
            if b <= beat:
                i = j
            else:
                break
        b0, bpm = self._segments[i]
        return self._starts[i] + (beat - b0) * 60.0 / bpm - self._offset


def beat_clock(header: SongHeader) -> _BeatClock:
    return _BeatClock(header)


def row_timings(level: Level, header: SongHeader) -> list[RowTiming]:
    """Beat and second positions for every row of a level.

    Row r of measure m with S subdivisions sits at beat 4*m + 4*r/S.
    Seconds integrate 60/bpm across bpm segments, then subtract the file
    offset. The resulting sequence is strictly increasing in both beat
    and seconds.
    """
    clock = _BeatClock(header)
    out: list[RowTiming] = []
    index = 0
    for mi, measure in enumerate(level.measures):
        s = measure.subdivisions
        for ri in range(s):
            beat = BEATS_PER_MEASURE * mi + BEATS_PER_MEASURE * ri / s
            out.append(
                RowTiming(
                    index=index,
                    measure=mi,
                    row=ri,
                    subdivisions=s,
                    beat=beat,
                    seconds=clock.seconds_at(beat),
                    bpm=clock.bpm_at(beat),
                )
            )
            index += 1
    return out


def row_times(level: Level, header: SongHeader) -> list[tuple[int, float]]:
    """(global row index, seconds) pairs for a level."""
    return [(t.index, t.seconds) for t in row_timings(level, header)]


def _format_float(x: float) -> str:
    s = repr(float(x))
    return s


def serialize_sm(song: Song) -> str:
    """Write a song back to SM text. Parsing the result reproduces the song."""
    parts = [
        f"#TITLE:{song.header.title};",
        f"#ARTIST:{song.header.artist};",
        f"#OFFSET:{_format_float(song.header.offset_seconds)};",
        "#BPMS:"
        + ",".join(f"{_format_float(b)}={_format_float(v)}" for b, v in song.header.bpms)
        + ";",
    ]
    if song.header.stops:
        parts.append(
            "#STOPS:"
            + ",".join(f"{_format_float(b)}={_format_float(v)}" for b, v in song.header.stops)
            + ";"
        )
    for level in song.levels:
        measures_text = "\n,\n".join(
            "\n".join(str(row) for row in measure.rows) for measure in level.measures
        )
        parts.append(
            "#NOTES:\n"
            f"     {level.chart_type}:\n"
            f"     {level.author_note}:\n"
            f"     {level.difficulty_class}:\n"
            f"     {level.meter}:\n"
            "     :\n"
            f"{measures_text}\n;"
        )
    return "\n".join(parts) + "\n"
