"""HTTP service for the human annotation loop.

Endpoints
---------
GET  /api/health          liveness plus pair/judgment counts
GET  /api/pairs/next      next unjudged pair for ?annotator=NAME
POST /api/judgments       {pair_id, choice, annotator, nonce}
GET  /api/scores          per-source concordance over judged pairs

Pair payloads are blind: they carry titles and step chart previews but
never a difficulty meter, so annotators cannot anchor on the original
rating. Duplicate submissions (same annotator, pair, nonce) return 409
and leave the tallies untouched, which makes client retries safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .annotation import (
    CHOICES,
    CandidatePair,
    DuplicateSubmission,
    JudgmentStore,
    NoJudgments,
    UnknownPair,
    score_sources,
)
from .features import reduced_grid
from .jsonio import round9
from .pipeline import LevelId
from .simfile import BEATS_PER_MEASURE, Level, SongHeader, row_timings


def chart_preview(level: Level, header: SongHeader) -> dict:
    """Render-ready chart description: per-row timing, symbols, and grid.

    Rows with no symbols at all are omitted; the client lays out arrows
    from beats and colors them by the grid denominator.
    """
    rows = []
    timings = row_timings(level, header)
    flat = [row for measure in level.measures for row in measure.rows]
    for timing, row in zip(timings, flat):
        text = str(row)
        if text == "0000":
            continue
        rows.append(
            {
                "beat": round9(timing.beat),
                "seconds": round9(timing.seconds),
                "symbols": text,
                "grid": reduced_grid(timing.row, timing.subdivisions),
            }
        )
    total_beats = BEATS_PER_MEASURE * len(level.measures)
    return {
        "rows": rows,
        "total_beats": round9(float(total_beats)),
        "bpm": round9(header.bpms[0][1]) if header.bpms else None,
    }


@dataclass
class AnnotationService:
    """Everything the HTTP layer needs, assembled ahead of time."""

    pairs: list[CandidatePair]
    store: JudgmentStore
    titles: Mapping[LevelId, str]
    previews: Mapping[LevelId, dict]
    static_dir: Path | None = None

    def level_payload(self, level: LevelId) -> dict:
        return {
            "song_id": level[0],
            "level_index": level[1],
            "title": self.titles.get(level, level[0]),
            "meter_hidden": True,
            "chart_preview": self.previews.get(level, {"rows": [], "total_beats": 0.0, "bpm": None}),
        }


class JudgmentIn(BaseModel):
    pair_id: str
    choice: str
    annotator: str
    nonce: str


_FALLBACK_PAGE = """<!doctype html>
<html><head><title>annotation service</title></head>
<body>
<h1>Annotation service</h1>
<p>No browser client is built. The API is live:</p>
<ul>
<li>GET /api/health</li>
<li>GET /api/pairs/next?annotator=NAME</li>
<li>POST /api/judgments</li>
<li>GET /api/scores</li>
</ul>
</body></html>
"""


def create_app(service: AnnotationService) -> FastAPI:
    app = FastAPI(title="step chart annotation")

    @app.get("/api/health")
    def health() -> dict:
        return {
            "status": "ok",
            "pairs": len(service.pairs),
            "judgments": service.store.event_count,
        }

    @app.get("/api/pairs/next")
    def next_pair(annotator: str = Query(min_length=1)) -> dict:
        pair = service.store.next_pair_for(annotator)
        if pair is None:
            return {"pair_id": None, "done": True}
        return {
            "pair_id": pair.pair_id,
            "done": False,
            "disagreement_count": pair.disagreement_count,
            "level_a": service.level_payload(pair.a),
            "level_b": service.level_payload(pair.b),
        }

    @app.post("/api/judgments")
    def submit(judgment: JudgmentIn) -> dict:
        if judgment.choice not in CHOICES:
            raise HTTPException(status_code=422, detail=f"choice must be one of {CHOICES}")
        try:
            votes = service.store.record(
                judgment.pair_id, judgment.choice, judgment.annotator, judgment.nonce
            )
        except UnknownPair:
            raise HTTPException(status_code=404, detail="unknown pair")
        except DuplicateSubmission:
            raise HTTPException(status_code=409, detail="duplicate submission")
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "pair_id": judgment.pair_id,
            "votes_a_harder": votes.votes_a_harder,
            "votes_b_harder": votes.votes_b_harder,
        }

    @app.get("/api/scores")
    def scores() -> dict:
        try:
            by_source = score_sources(service.pairs, service.store.votes)
        except NoJudgments:
            raise HTTPException(status_code=409, detail="no judgments yet")
        return {
            "judged_pairs": len(service.store.judged_pairs()),
            "sources": {
                name: {"score": round9(s.score), "pairs": s.pair_count}
                for name, s in by_source.items()
            },
        }

    if service.static_dir and Path(service.static_dir).is_dir():
        app.mount("/", StaticFiles(directory=service.static_dir, html=True), name="ui")
    else:

        @app.get("/", response_class=HTMLResponse)
        def index() -> str:
            return _FALLBACK_PAGE

    return app
