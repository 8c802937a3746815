"""Dataset protocol: category pooling, Monte Carlo splits, ranking pairs.

The unit of splitting is the song: a level never appears on both sides
of a train/test split. Raw meters are pooled into categories before
splitting so that rare meters do not starve either side.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Collection, Mapping, Sequence

import numpy as np

from .jsonio import read_json, write_atomic_json


class AllMerged(Exception):
    """Pooling collapsed everything into a single category."""


class RejectionExhausted(Exception):
    """No feasible split found within the attempt budget."""


@dataclass(frozen=True)
class PoolingMap:
    """Monotone relabeling of raw meters onto 1..K pooled categories."""

    raw_to_pooled: Mapping[int, int]
    k: int

    def pool(self, raw: int) -> int:
        """Pooled label for a raw meter, including meters never seen.

        Out-of-range meters clamp to the nearest endpoint; unseen meters
        inside the range take the label of the nearest observed raw meter,
        ties to the lower one.
        """
        if raw in self.raw_to_pooled:
            return self.raw_to_pooled[raw]
        known = sorted(self.raw_to_pooled)
        if raw < known[0]:
            return self.raw_to_pooled[known[0]]
        if raw > known[-1]:
            return self.raw_to_pooled[known[-1]]
        nearest = min(known, key=lambda r: (abs(r - raw), r))
        return self.raw_to_pooled[nearest]

    def to_json(self) -> dict:
        return {"k": self.k, "raw_to_pooled": {str(r): p for r, p in sorted(self.raw_to_pooled.items())}}

    @classmethod
    def from_json(cls, obj: dict) -> "PoolingMap":
        return cls(
            raw_to_pooled={int(r): int(p) for r, p in obj["raw_to_pooled"].items()},
            k=int(obj["k"]),
        )


def pool_categories(label_counts: Mapping[int, int], threshold_fraction: float = 0.02) -> PoolingMap:
    """Merge rare raw meters into adjacent categories until none is rare.

    While any category holds fewer than ``threshold_fraction`` of all
    levels, the smallest category (ties to the lowest meter) merges into
    its smaller adjacent neighbor (ties to the lower neighbor). Surviving
    categories are relabeled 1..K in meter order. Raises
    :class:`AllMerged` when fewer than two categories survive, and
    ``ValueError`` on an empty input.
    """
    if not label_counts:
        raise ValueError("no labels to pool")
    if any(c < 0 for c in label_counts.values()):
        raise ValueError("negative count")
    total = sum(label_counts.values())
    if total == 0:
        raise ValueError("no levels to pool")

    # Each group is (sorted raw meters, count); groups stay in meter order.
    groups: list[tuple[list[int], int]] = [
        ([raw], count) for raw, count in sorted(label_counts.items())
    ]

    while len(groups) > 1:
        smallest = min(range(len(groups)), key=lambda i: (groups[i][1], groups[i][0][0]))
        if groups[smallest][1] >= threshold_fraction * total:
            break
        neighbors = []
        if smallest > 0:
            neighbors.append(smallest - 1)
        if smallest < len(groups) - 1:
            neighbors.append(smallest + 1)
        target = min(neighbors, key=lambda i: (groups[i][1], i))
        lo, hi = sorted((smallest, target))
        merged = (groups[lo][0] + groups[hi][0], groups[lo][1] + groups[hi][1])
        groups[lo: hi + 1] = [merged]

    if len(groups) < 2:
        raise AllMerged("pooling left fewer than two categories")

    raw_to_pooled = {}
    for pooled, (raws, _) in enumerate(groups, start=1):
        for raw in raws:
            raw_to_pooled[raw] = pooled
    return PoolingMap(raw_to_pooled=raw_to_pooled, k=len(groups))


@dataclass(frozen=True)
class SplitPlan:
    test_song_ids: frozenset[str]
    train_song_ids: frozenset[str]
    seed: int
    replicate: int


def substream_seed(root_seed: int, *names) -> int:
    """Stable 64-bit seed for a named substream of the root seed.

    Derivation hashes the root seed with the name path, so independent
    stages (split, train, ensemble, ...) never share a stream and every
    stage is reproducible from the root seed alone.
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest()[:8], "big")


def mc_split(
    song_labels: Mapping[str, Collection[int]],
    seed: int,
    replicate: int,
    test_fraction: float = 0.2,
    max_attempts: int = 10_000,
) -> SplitPlan:
    """One Monte Carlo train/test split over songs with label coverage.

    Draws ceil(test_fraction * S) test songs uniformly without
    replacement and rejects draws until every pooled label present in the
    dataset occurs on both sides. Deterministic in (seed, replicate).
    Raises :class:`RejectionExhausted` when no feasible draw appears
    within ``max_attempts`` (including the provably infeasible case of a
    label confined to fewer than two songs).
    """
    songs = sorted(song_labels)
    if not songs:
        raise ValueError("no songs to split")
    s = len(songs)
    test_size = int(np.ceil(test_fraction * s))
    if test_size < 1 or test_size >= s:
        raise RejectionExhausted(f"test size {test_size} of {s} songs leaves an empty side")

    all_labels = set()
    label_songs: dict[int, int] = {}
    for song, labels in song_labels.items():
        for lab in set(labels):
            all_labels.add(lab)
            label_songs[lab] = label_songs.get(lab, 0) + 1
    if not all_labels:
        raise ValueError("songs carry no labels")
    if any(n < 2 for n in label_songs.values()):
        raise RejectionExhausted("a label occurs on fewer than two songs; no split can cover it")

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))
    for _ in range(max_attempts):
        test_idx = rng.choice(s, size=test_size, replace=False)
        test = frozenset(songs[i] for i in test_idx)
        train = frozenset(songs) - test
        test_labels = set().union(*(set(song_labels[t]) for t in test))
        train_labels = set().union(*(set(song_labels[t]) for t in train))
        if test_labels == all_labels and train_labels == all_labels:
            return SplitPlan(test_song_ids=test, train_song_ids=train, seed=seed, replicate=replicate)
    raise RejectionExhausted(f"no feasible split in {max_attempts} attempts")


class PairOrder(Enum):
    A_LESS = "a_less"
    B_LESS = "b_less"
    EQUAL = "equal"


LevelId = tuple[str, int]  # (song_id, level_index)


@dataclass(frozen=True)
class RankingPair:
    a: LevelId
    b: LevelId
    label: PairOrder


def order_from_labels(label_a: int, label_b: int) -> PairOrder:
    if label_a < label_b:
        return PairOrder.A_LESS
    if label_a > label_b:
        return PairOrder.B_LESS
    return PairOrder.EQUAL


def make_ranking_pairs(levels: Sequence[tuple[LevelId, int]]) -> list[RankingPair]:
    """Every unordered pair of levels once, ordered lexicographically,
    labeled by the sign of the difficulty difference."""
    items = sorted(levels, key=lambda lv: lv[0])
    out = []
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            (ida, ya), (idb, yb) = items[i], items[j]
            out.append(RankingPair(a=ida, b=idb, label=order_from_labels(ya, yb)))
    return out


def remap_cross_dataset(raw_labels: Sequence[int], pooling: PoolingMap) -> list[int]:
    """Map another dataset's raw meters through this dataset's pooling."""
    return [pooling.pool(int(r)) for r in raw_labels]


# ---------------------------------------------------------------------------
# manifests

@dataclass
class ManifestLevel:
    index: int
    raw_meter: int


@dataclass
class ManifestSong:
    song_id: str
    path: str
    levels: list[ManifestLevel]


@dataclass
class Manifest:
    dataset_name: str
    songs: list[ManifestSong]
    pooling: PoolingMap | None = None
    splits: list[SplitPlan] = field(default_factory=list)

    def label_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for song in self.songs:
            for level in song.levels:
                counts[level.raw_meter] = counts.get(level.raw_meter, 0) + 1
        return counts

    def pooled_song_labels(self) -> dict[str, list[int]]:
        if self.pooling is None:
            raise ValueError("manifest has no pooling map")
        return {
            song.song_id: [self.pooling.pool(lv.raw_meter) for lv in song.levels]
            for song in self.songs
        }

    def pooled_level_labels(self) -> dict[LevelId, int]:
        if self.pooling is None:
            raise ValueError("manifest has no pooling map")
        return {
            (song.song_id, lv.index): self.pooling.pool(lv.raw_meter)
            for song in self.songs
            for lv in song.levels
        }

    def to_json(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "songs": [
                {
                    "song_id": s.song_id,
                    "path": s.path,
                    "levels": [{"index": lv.index, "raw_meter": lv.raw_meter} for lv in s.levels],
                }
                for s in self.songs
            ],
            "pooling": self.pooling.to_json() if self.pooling else None,
            "splits": [
                {
                    "replicate": sp.replicate,
                    "seed": sp.seed,
                    "test_song_ids": sorted(sp.test_song_ids),
                }
                for sp in self.splits
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Manifest":
        songs = [
            ManifestSong(
                song_id=s["song_id"],
                path=s["path"],
                levels=[ManifestLevel(index=int(l["index"]), raw_meter=int(l["raw_meter"])) for l in s["levels"]],
            )
            for s in obj["songs"]
        ]
        pooling = PoolingMap.from_json(obj["pooling"]) if obj.get("pooling") else None
        all_ids = {s.song_id for s in songs}
        splits = [
            SplitPlan(
                test_song_ids=frozenset(sp["test_song_ids"]),
                train_song_ids=frozenset(all_ids) - frozenset(sp["test_song_ids"]),
                seed=int(sp["seed"]),
                replicate=int(sp["replicate"]),
            )
            for sp in obj.get("splits", [])
        ]
        return cls(dataset_name=obj["dataset_name"], songs=songs, pooling=pooling, splits=splits)

    def save(self, path) -> None:
        write_atomic_json(path, self.to_json())

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.from_json(read_json(path))
