"""Disagreement-driven pair selection and human judgment bookkeeping.

Sources (the original meters plus trained models) each order every level
pair. Pairs worth human attention are those where no source calls a tie
and at least two sources order the levels oppositely; they are ranked by
how many source pairs disagree. Judgments arrive over HTTP, are
deduplicated by an idempotency key, appended to a JSONL event log, and
periodically snapshotted; replaying the log reconstructs the aggregates
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .jsonio import dumps_canonical, write_atomic_json
from .metrics import concordance_accuracy
from .pipeline import LevelId, PairOrder, order_from_labels

SOURCE_ORIGINAL = "original"

CHOICE_A_HARDER = "a_harder"
CHOICE_B_HARDER = "b_harder"
CHOICES = (CHOICE_A_HARDER, CHOICE_B_HARDER)


class NoDisagreements(Exception):
    """Every pair is uncontested; nothing to annotate."""


class UnknownPair(Exception):
    """Judgment for a pair id that was never selected."""


class DuplicateSubmission(Exception):
    """Idempotency key seen before; the aggregate is unchanged."""


class NoJudgments(Exception):
    """Scoring requested before any judgment arrived."""


def level_key(level: LevelId) -> str:
    return f"{level[0]}#{level[1]}"


def pair_id_for(a: LevelId, b: LevelId) -> str:
    return f"{level_key(a)}|{level_key(b)}"


@dataclass(frozen=True)
class CandidatePair:
    pair_id: str
    a: LevelId
    b: LevelId
    orders: Mapping[str, PairOrder]  # per source, never EQUAL
    disagreement_count: int  # source pairs ordering (a, b) oppositely


def select_pairs(
    predictions: Mapping[str, Mapping[LevelId, int]],
    budget: int,
) -> list[CandidatePair]:
    """Rank contested pairs for annotation.

    Candidates are unordered level pairs over levels every source covers,
    where no source predicts a tie and at least two sources conflict.
    Sorted by number of disagreeing source pairs (descending), ties by
    pair id; truncated to ``budget``. Raises :class:`NoDisagreements`
    when no pair qualifies.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    if len(predictions) < 2:
        raise ValueError("need at least two sources to disagree")
    sources = sorted(predictions)
    covered = set.intersection(*(set(predictions[s]) for s in sources))
    levels = sorted(covered)

    candidates: list[CandidatePair] = []
    for i in range(len(levels)):
        for j in range(i + 1, len(levels)):
            a, b = levels[i], levels[j]
            orders = {
                s: order_from_labels(predictions[s][a], predictions[s][b]) for s in sources
            }
            if any(o is PairOrder.EQUAL for o in orders.values()):
                continue
            disagreements = sum(
                1
                for x in range(len(sources))
                for y in range(x + 1, len(sources))
                if orders[sources[x]] is not orders[sources[y]]
            )
            if disagreements == 0:
                continue
            candidates.append(
                CandidatePair(
                    pair_id=pair_id_for(a, b),
                    a=a,
                    b=b,
                    orders=orders,
                    disagreement_count=disagreements,
                )
            )
    if not candidates:
        raise NoDisagreements("all sources agree on every fully ordered pair")
    candidates.sort(key=lambda c: (-c.disagreement_count, c.pair_id))
    return candidates[:budget]


@dataclass
class PairVotes:
    votes_a_harder: int = 0
    votes_b_harder: int = 0

    @property
    def total(self) -> int:
        return self.votes_a_harder + self.votes_b_harder

    @property
    def r_a_harder(self) -> float:
        if self.total == 0:
            raise NoJudgments("pair has no votes")
        return self.votes_a_harder / self.total


@dataclass(frozen=True)
class SourceScore:
    score: float
    pair_count: int


class JudgmentStore:
    """Append-only judgment log with snapshot/replay persistence.

    Every accepted judgment appends one JSONL event; every
    ``snapshot_every`` events the full aggregate state is rewritten
    atomically. A store rebuilt by replaying the log equals the live one.
    """

    def __init__(
        self,
        pairs: Sequence[CandidatePair],
        log_path: str | Path | None = None,
        snapshot_path: str | Path | None = None,
        snapshot_every: int = 20,
    ):
        self.pairs = {p.pair_id: p for p in pairs}
        self.order = [p.pair_id for p in pairs]
        self.votes: dict[str, PairVotes] = {p.pair_id: PairVotes() for p in pairs}
        self.seen_keys: set[tuple[str, str, str]] = set()
        self.judged_by: dict[str, set[str]] = {}  # annotator -> pair ids
        self.log_path = Path(log_path) if log_path else None
        self.snapshot_path = Path(snapshot_path) if snapshot_path else None
        self.snapshot_every = snapshot_every
        self.event_count = 0

    def next_pair_for(self, annotator: str) -> CandidatePair | None:
        """Highest-ranked pair this annotator has not judged, if any."""
        done = self.judged_by.get(annotator, set())
        for pair_id in self.order:
            if pair_id not in done:
                return self.pairs[pair_id]
        return None

    def record(self, pair_id: str, choice: str, annotator: str, nonce: str) -> PairVotes:
        """Apply one judgment. Raises UnknownPair / DuplicateSubmission."""
        if pair_id not in self.pairs:
            raise UnknownPair(pair_id)
        if choice not in CHOICES:
            raise ValueError(f"choice must be one of {CHOICES}")
        if not annotator or not nonce:
            raise ValueError("annotator and nonce are required")
        key = (annotator, pair_id, nonce)
        if key in self.seen_keys:
            raise DuplicateSubmission(f"{annotator} already submitted nonce {nonce} for {pair_id}")

        self.seen_keys.add(key)
        votes = self.votes[pair_id]
        if choice == CHOICE_A_HARDER:
            votes.votes_a_harder += 1
        else:
            votes.votes_b_harder += 1
        self.judged_by.setdefault(annotator, set()).add(pair_id)
        self.event_count += 1
        self._append_event(
            {"pair_id": pair_id, "choice": choice, "annotator": annotator, "nonce": nonce}
        )
        if self.snapshot_path and self.event_count % self.snapshot_every == 0:
            self.write_snapshot()
        return votes

    def _append_event(self, event: dict) -> None:
        if not self.log_path:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(dumps_canonical(event) + "\n")

    def write_snapshot(self) -> None:
        if not self.snapshot_path:
            return
        write_atomic_json(self.snapshot_path, self.state_json())

    def state_json(self) -> dict:
        return {
            "event_count": self.event_count,
            "votes": {
                pid: {"a_harder": v.votes_a_harder, "b_harder": v.votes_b_harder}
                for pid, v in self.votes.items()
                if v.total
            },
        }

    def judged_pairs(self) -> list[str]:
        return [pid for pid in self.order if self.votes[pid].total > 0]

    def replay(self, log_path: str | Path | None = None) -> int:
        """Re-apply a JSONL event log (duplicates skipped). Returns events applied."""
        path = Path(log_path) if log_path else self.log_path
        if path is None or not path.exists():
            return 0
        applied = 0
        writeback, self.log_path = self.log_path, None  # do not re-log replayed events
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    event = json.loads(line)
                    try:
                        self.record(
                            event["pair_id"],
                            event["choice"],
                            event["annotator"],
                            event["nonce"],
                        )
                        applied += 1
                    except (DuplicateSubmission, UnknownPair):
                        continue
        finally:
            self.log_path = writeback
        return applied


def score_sources(
    pairs: Sequence[CandidatePair],
    votes: Mapping[str, PairVotes],
) -> dict[str, SourceScore]:
    """Concordance of each source with the judged pairs it strictly orders.

    A pair contributes the fraction of votes matching the source's
    ordering. Sources with no judged strictly-ordered pair are excluded
    (select_pairs already bars EQUAL orders, so exclusion here means no
    coverage). Raises :class:`NoJudgments` when nothing has been judged.
    """
    judged = [p for p in pairs if p.pair_id in votes and votes[p.pair_id].total > 0]
    if not judged:
        raise NoJudgments("no judgments recorded yet")

    sources = sorted({s for p in judged for s in p.orders})
    out: dict[str, SourceScore] = {}
    for source in sources:
        covered = [p for p in judged if p.orders.get(source) in (PairOrder.A_LESS, PairOrder.B_LESS)]
        if not covered:
            continue
        orders = [p.orders[source] for p in covered]
        # r_a_harder supports "a harder"; support for the A_LESS ordering
        # is the complementary fraction.
        supports = [1.0 - votes[p.pair_id].r_a_harder for p in covered]
        out[source] = SourceScore(
            score=concordance_accuracy(orders, supports),
            pair_count=len(covered),
        )
    return out
