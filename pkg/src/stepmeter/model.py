"""Sequence encoder, prediction heads, and the training loop.

Architecture: a 1-d convolution with kernel 2 projects the 19-dim step
features to the embedding width (shortening the sequence by one), a
sinusoidal positional encoding is added, three post-norm transformer
encoder layers (4 heads, feed-forward 4x the embedding, no dropout)
contextualize, and a mean pool over valid positions feeds the head.

Training samples class-uniformly: first a category, then a level within
it, then one random contiguous window of the level's feature rows.
Prediction averages the head outputs of eight random windows in the
head's natural space (probabilities, or the latent scalar) and decodes
once. Everything runs in double precision on CPU.
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import targets as T
from .features import FEATURE_DIM, FeatureSequence, chart_span_seconds, reduced_grid
from .jsonio import read_json, write_atomic_bytes, write_atomic_json
from .pipeline import substream_seed
from .simfile import STEP_SYMBOLS, NoteSymbol, row_timings

METHODS = (
    "classification",
    "regression",
    "nnrank",
    "redsvm",
    "laplace",
    "binomial",
    "pattern",
)

SEQUENCE_METHODS = tuple(m for m in METHODS if m != "pattern")


class MissingClass(Exception):
    """Training set lacks at least one category."""


class DivergedLoss(Exception):
    """Loss or parameters became non-finite during training."""


class WindowTooShort(Exception):
    """A sequence too short to form a trainable window."""


class EmptySequence(Exception):
    """Prediction asked on a zero-length sequence."""


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 3
    ff_dim: int | None = None  # defaults to 4 * embed_dim
    conv_kernel: int = 2

    @property
    def feedforward(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.embed_dim


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float | None = None  # None: (num levels / 1500) * 1e-4
    weight_decay: float = 5e-2
    window: int = 60
    ensemble_windows: int = 8
    seed: int = 0

    def resolve_lr(self, num_levels: int) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return num_levels / 1500.0 * 1e-4


def default_learning_rate(num_levels: int) -> float:
    return TrainConfig().resolve_lr(num_levels)


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    """Standard fixed sin/cos positional table, shape (length, dim)."""
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=torch.float64)
    div = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(length, dim, dtype=torch.float64)
    angles = position * div
    table[:, 0::2] = torch.sin(angles)
    table[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return table


class SequenceEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.conv = nn.Conv1d(FEATURE_DIM, config.embed_dim, kernel_size=config.conv_kernel)
        layer = nn.TransformerEncoderLayer(
            d_model=config.embed_dim,
            nhead=config.num_heads,
            dim_feedforward=config.feedforward,
            dropout=0.0,
            batch_first=True,
            norm_first=False,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=config.num_layers, enable_nested_tensor=False)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """x: (B, L, 19) padded; lengths: (B,) valid input rows. Returns (B, embed)."""
        valid = lengths - (self.config.conv_kernel - 1)
        if torch.any(valid < 1):
            raise WindowTooShort("window shorter than the convolution kernel")
        h = self.conv(x.transpose(1, 2)).transpose(1, 2)  # (B, L - k + 1, E)
        pe = sinusoidal_positions(h.shape[1], self.config.embed_dim).to(h.dtype)
        h = h + pe.unsqueeze(0)
        idx = torch.arange(h.shape[1])
        pad_mask = idx.unsqueeze(0) >= valid.unsqueeze(1)  # True = padding
        h = self.encoder(h, src_key_padding_mask=pad_mask)
        keep = (~pad_mask).to(h.dtype).unsqueeze(2)
        return (h * keep).sum(dim=1) / keep.sum(dim=1)


def head_width(method: str, k: int) -> int:
    return {
        "classification": k,
        "pattern": k,
        "laplace": k,
        "binomial": k + 4,
        "nnrank": k - 1,
        "regression": 1,
        "redsvm": 1,
    }[method]


class SequenceModel(nn.Module):
    """Encoder plus a linear head; redsvm adds learnable thresholds."""

    def __init__(self, method: str, k: int, config: EncoderConfig):
        super().__init__()
        if method not in SEQUENCE_METHODS:
            raise ValueError(f"unknown sequence method {method!r}")
        if k < 2:
            raise ValueError("need at least 2 categories")
        self.method = method
        self.k = k
        self.encoder = SequenceEncoder(config)
        self.head = nn.Linear(config.embed_dim, head_width(method, k))
        if method == "redsvm":
            self.thresholds = nn.Parameter(
                torch.tensor(T.redsvm_initial_thresholds(k), dtype=torch.float64)
            )

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        out = self.head(self.encoder(x, lengths))
        if self.method in ("regression", "redsvm"):
            return out.squeeze(-1)
        return out


class PatternModel(nn.Module):
    """Three-layer MLP over 16 standardized static chart features."""

    def __init__(self, k: int, hidden: int = 32):
        super().__init__()
        self.k = k
        self.net = nn.Sequential(
            nn.Linear(PATTERN_DIM, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
            nn.Linear(hidden, k),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def batch_loss(
    method: str,
    outputs: torch.Tensor,
    labels: torch.Tensor,
    k: int,
    thresholds: torch.Tensor | None = None,
    target_table: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean per-example loss for a batch. labels are 1-based."""
    if method in ("classification", "pattern"):
        return F.cross_entropy(outputs, labels - 1)
    if method == "regression":
        return (outputs - labels.to(outputs.dtype)).abs().mean()
    if method == "nnrank":
        ranks = torch.arange(1, k, device=outputs.device).unsqueeze(0)
        target = (ranks < labels.unsqueeze(1)).to(outputs.dtype)
        return F.binary_cross_entropy_with_logits(outputs, target, reduction="none").sum(dim=1).mean()
    if method == "redsvm":
        assert thresholds is not None
        ranks = torch.arange(1, k, device=outputs.device).unsqueeze(0)
        signs = torch.where(ranks < labels.unsqueeze(1), 1.0, -1.0).to(outputs.dtype)
        margins = signs * (outputs.unsqueeze(1) - thresholds.unsqueeze(0))
        return F.softplus(-margins).sum(dim=1).mean()
    if method in ("laplace", "binomial"):
        assert target_table is not None
        target = target_table[labels - 1]
        return -(target * F.log_softmax(outputs, dim=1)).sum(dim=1).mean()
    raise ValueError(f"unknown method {method!r}")


@dataclass
class TrainedModel:
    method: str
    k: int
    encoder_config: EncoderConfig
    train_config: TrainConfig
    module: nn.Module
    final_loss: float
    feature_mean: np.ndarray | None = None  # pattern standardization
    feature_std: np.ndarray | None = None
    epoch_losses: list[float] = field(default_factory=list)  # mean loss per epoch

    @property
    def soft_table(self) -> np.ndarray | None:
        if self.method in ("laplace", "binomial"):
            return T.soft_target_table(self.method, self.k)
        return None


def _window(rows: np.ndarray, start: int, width: int) -> np.ndarray:
    return rows[start : start + width]


def _sample_window(rows: np.ndarray, width: int, rng: np.random.Generator) -> np.ndarray:
    t = rows.shape[0]
    if t <= width:
        return rows
    start = int(rng.integers(0, t - width + 1))
    return _window(rows, start, width)


def _pad_batch(windows: list[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([w.shape[0] for w in windows], dtype=torch.long)
    width = int(lengths.max())
    batch = torch.zeros(len(windows), width, FEATURE_DIM, dtype=torch.float64)
    for i, w in enumerate(windows):
        batch[i, : w.shape[0]] = torch.from_numpy(np.ascontiguousarray(w))
    return batch, lengths


def _check_finite(module: nn.Module) -> None:
    for name, p in module.named_parameters():
        if not torch.isfinite(p).all():
            raise DivergedLoss(f"parameter {name} became non-finite")


def class_uniform_indices(
    by_class: dict[int, list[int]], size: int, rng: np.random.Generator
) -> list[int]:
    """Draw training indices: a class uniformly, then a member uniformly."""
    classes = sorted(by_class)
    picked = rng.integers(0, len(classes), size=size)
    return [
        by_class[classes[c]][int(rng.integers(0, len(by_class[classes[c]])))]
        for c in picked
    ]


def train_sequence_model(
    sequences: Sequence[FeatureSequence],
    labels: Sequence[int],
    method: str,
    k: int,
    encoder_config: EncoderConfig = EncoderConfig(),
    train_config: TrainConfig = TrainConfig(),
) -> TrainedModel:
    """Fit one sequence model. Raises MissingClass, WindowTooShort, DivergedLoss."""
    if len(sequences) != len(labels):
        raise ValueError("sequences and labels must align")
    if not sequences:
        raise ValueError("no training data")
    labels = [int(y) for y in labels]
    for y in labels:
        T.check_label(y, k)
    present = set(labels)
    missing = [y for y in range(1, k + 1) if y not in present]
    if missing:
        raise MissingClass(f"no training levels with labels {missing}")
    for seq in sequences:
        if len(seq) < 2:
            raise WindowTooShort(
                f"level {seq.song_id}#{seq.level_index} has {len(seq)} event rows; need at least 2"
            )
    if train_config.window < 2:
        raise WindowTooShort("window must cover at least 2 rows")

    by_class: dict[int, list[int]] = {y: [] for y in range(1, k + 1)}
    for i, y in enumerate(labels):
        by_class[y].append(i)

    torch.manual_seed(substream(train_config.seed, "init"))
    model = SequenceModel(method, k, encoder_config).double()
    lr = train_config.resolve_lr(len(sequences))
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=train_config.weight_decay)

    table = None
    if method in ("laplace", "binomial"):
        table = torch.tensor(T.soft_target_table(method, k), dtype=torch.float64)

    rng = np.random.default_rng(substream(train_config.seed, "batches"))
    steps_per_epoch = math.ceil(len(sequences) / train_config.batch_size)

    epoch_means: list[float] = []
    model.train()
    for _epoch in range(train_config.epochs):
        epoch_losses = []
        for _step in range(steps_per_epoch):
            idx = class_uniform_indices(by_class, train_config.batch_size, rng)
            windows = [
                _sample_window(sequences[i].rows, train_config.window, rng) for i in idx
            ]
            batch, lengths = _pad_batch(windows)
            y = torch.tensor([labels[i] for i in idx], dtype=torch.long)

            optimizer.zero_grad()
            outputs = model(batch, lengths)
            loss = batch_loss(
                method,
                outputs,
                y,
                k,
                thresholds=getattr(model, "thresholds", None),
                target_table=table,
            )
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {_epoch}")
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        _check_finite(model)
        epoch_means.append(float(np.mean(epoch_losses)))

    model.eval()
    return TrainedModel(
        method=method,
        k=k,
        encoder_config=encoder_config,
        train_config=train_config,
        module=model,
        final_loss=epoch_means[-1] if epoch_means else math.nan,
        epoch_losses=epoch_means,
    )


def substream(root_seed: int, *names) -> int:
    return substream_seed(root_seed, *names)


def _ensemble_outputs(model: SequenceModel, windows: list[np.ndarray]) -> torch.Tensor:
    batch, lengths = _pad_batch(windows)
    with torch.no_grad():
        return model(batch, lengths)


def predict_sequence(trained: TrainedModel, seq: FeatureSequence, seed: int = 0) -> int:
    """Decode one level: eight random windows, averaged in head space."""
    rows = seq.rows
    t = rows.shape[0]
    if t == 0:
        raise EmptySequence(f"level {seq.song_id}#{seq.level_index} has no rows")
    if t < 2:
        raise WindowTooShort(f"level {seq.song_id}#{seq.level_index} has a single row")

    cfg = trained.train_config
    rng = np.random.default_rng(seed)
    if t <= cfg.window:
        windows = [rows] * cfg.ensemble_windows
    else:
        starts = rng.integers(0, t - cfg.window + 1, size=cfg.ensemble_windows)
        windows = [_window(rows, int(s), cfg.window) for s in starts]

    model = trained.module
    assert isinstance(model, SequenceModel)
    outputs = _ensemble_outputs(model, windows)
    method, k = trained.method, trained.k

    if method == "regression":
        return T.regression_decode(float(outputs.mean()), k)
    if method == "redsvm":
        g = float(outputs.mean())
        thresholds = model.thresholds.detach().numpy()
        return T.redsvm_decode(g, thresholds)
    if method == "nnrank":
        probs = torch.sigmoid(outputs).mean(dim=0).numpy()
        return T.nnrank_decode(probs)
    probs = torch.softmax(outputs, dim=1).mean(dim=0).numpy()
    if method == "classification":
        return T.classification_decode(probs)
    return T.softlabel_decode(probs, trained.soft_table)


# ---------------------------------------------------------------------------
# static-feature baseline

PATTERN_DIM = 16
_STREAM_GAP_SECONDS = 0.25
_STREAM_MAX_BEAT_GAP = 0.25 + 1e-9  # a sixteenth note is a quarter of a beat
_NPS_BIN_SECONDS = 1.0


def pattern_features(level, header) -> np.ndarray:
    """16 static descriptors of a chart; see the implementation for order."""
    timings = row_timings(level, header)
    rows = [row for measure in level.measures for row in measure.rows]

    step_times: list[float] = []
    step_beats: list[float] = []
    step_grids: list[int] = []
    step_counts: list[int] = []
    holds = rolls = mines = 0
    for timing, row in zip(timings, rows):
        taps = sum(1 for sym in row.columns if sym in STEP_SYMBOLS)
        holds += sum(1 for sym in row.columns if sym is NoteSymbol.HOLD_START)
        rolls += sum(1 for sym in row.columns if sym is NoteSymbol.ROLL_START)
        mines += sum(1 for sym in row.columns if sym is NoteSymbol.MINE)
        if taps:
            step_times.append(timing.seconds)
            step_beats.append(timing.beat)
            step_grids.append(reduced_grid(timing.row, timing.subdivisions))
            step_counts.append(taps)

    if not step_times:
        raise EmptySequence("chart has no steps")

    duration = chart_span_seconds(level, header)
    total_steps = float(sum(step_counts))

    span = step_times[-1] - step_times[0]
    bins = max(1, math.ceil(span / _NPS_BIN_SECONDS)) if span > 0 else 1
    counts = np.zeros(bins)
    for t_s, c in zip(step_times, step_counts):
        b = min(bins - 1, int((t_s - step_times[0]) / _NPS_BIN_SECONDS))
        counts[b] += c
    nps_mean = float(counts.mean())
    nps_max = float(counts.max())

    grid_classes = {4: 0, 8: 0, 12: 0, 16: 0, 24: 0}
    fast_or_other = 0
    for g in step_grids:
        if g in grid_classes:
            grid_classes[g] += 1
        else:
            fast_or_other += 1

    jumps = float(sum(1 for c in step_counts if c >= 2))

    # a stream links steps spaced a sixteenth note or tighter, capped by wall time
    longest = run = 0
    for i in range(len(step_times)):
        linked = (
            i > 0
            and step_times[i] - step_times[i - 1] < _STREAM_GAP_SECONDS
            and step_beats[i] - step_beats[i - 1] <= _STREAM_MAX_BEAT_GAP
        )
        run = run + 1 if linked else 1
        longest = max(longest, run)

    deltas = np.diff(step_times)
    mean_delta = float(deltas.mean()) if deltas.size else 0.0

    return np.array(
        [
            duration,
            total_steps,
            nps_mean,
            nps_max,
            float(grid_classes[4]),
            float(grid_classes[8]),
            float(grid_classes[12]),
            float(grid_classes[16]),
            float(grid_classes[24]),
            float(fast_or_other),
            jumps,
            float(holds),
            float(rolls),
            float(mines),
            float(longest),
            mean_delta,
        ],
        dtype=np.float64,
    )


def train_pattern_model(
    features: np.ndarray,
    labels: Sequence[int],
    k: int,
    train_config: TrainConfig = TrainConfig(),
) -> TrainedModel:
    """Fit the static-feature MLP baseline on (N, 16) features."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != PATTERN_DIM:
        raise ValueError(f"features must be (N, {PATTERN_DIM})")
    labels = [int(y) for y in labels]
    for y in labels:
        T.check_label(y, k)
    present = set(labels)
    missing = [y for y in range(1, k + 1) if y not in present]
    if missing:
        raise MissingClass(f"no training levels with labels {missing}")

    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    x_all = (features - mean) / std

    by_class: dict[int, list[int]] = {y: [] for y in range(1, k + 1)}
    for i, y in enumerate(labels):
        by_class[y].append(i)

    torch.manual_seed(substream(train_config.seed, "init"))
    model = PatternModel(k).double()
    lr = train_config.resolve_lr(len(labels))
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=train_config.weight_decay)
    rng = np.random.default_rng(substream(train_config.seed, "batches"))
    steps_per_epoch = math.ceil(len(labels) / train_config.batch_size)

    x_t = torch.from_numpy(x_all)
    epoch_means: list[float] = []
    model.train()
    for _epoch in range(train_config.epochs):
        epoch_losses = []
        for _step in range(steps_per_epoch):
            idx = class_uniform_indices(by_class, train_config.batch_size, rng)
            y = torch.tensor([labels[i] for i in idx], dtype=torch.long)
            optimizer.zero_grad()
            loss = batch_loss("pattern", model(x_t[idx]), y, k)
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {_epoch}")
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        _check_finite(model)
        epoch_means.append(float(np.mean(epoch_losses)))

    model.eval()
    return TrainedModel(
        method="pattern",
        k=k,
        encoder_config=EncoderConfig(),
        train_config=train_config,
        module=model,
        final_loss=epoch_means[-1] if epoch_means else math.nan,
        feature_mean=mean,
        feature_std=std,
        epoch_losses=epoch_means,
    )


def predict_pattern(trained: TrainedModel, features: np.ndarray) -> int:
    x = (np.asarray(features, dtype=np.float64) - trained.feature_mean) / trained.feature_std
    with torch.no_grad():
        logits = trained.module(torch.from_numpy(x).unsqueeze(0))
    probs = torch.softmax(logits, dim=1).squeeze(0).numpy()
    return T.classification_decode(probs)


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(trained: TrainedModel, path, extra: Mapping | None = None) -> None:
    """Binary weights at ``path`` plus a JSON sidecar at ``path + '.json'``."""
    path = Path(path)
    buf = io.BytesIO()
    torch.save(trained.module.state_dict(), buf)
    write_atomic_bytes(path, buf.getvalue())

    sidecar = {
        "method": trained.method,
        "k": trained.k,
        "encoder_config": asdict(trained.encoder_config),
        "train_config": asdict(trained.train_config),
        "final_training_loss": trained.final_loss,
    }
    if trained.feature_mean is not None:
        sidecar["feature_mean"] = trained.feature_mean.tolist()
        sidecar["feature_std"] = trained.feature_std.tolist()
    if extra:
        sidecar.update(extra)
    write_atomic_json(sidecar_path(path), sidecar)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_checkpoint(path) -> TrainedModel:
    path = Path(path)
    sidecar = read_json(sidecar_path(path))
    method = sidecar["method"]
    k = int(sidecar["k"])
    enc = EncoderConfig(**sidecar["encoder_config"])
    tc = TrainConfig(**sidecar["train_config"])
    if method == "pattern":
        module: nn.Module = PatternModel(k).double()
    else:
        module = SequenceModel(method, k, enc).double()
    state = torch.load(path, map_location="cpu", weights_only=True)
    module.load_state_dict(state)
    module.eval()
    mean = np.asarray(sidecar["feature_mean"]) if "feature_mean" in sidecar else None
    std = np.asarray(sidecar["feature_std"]) if "feature_std" in sidecar else None
    return TrainedModel(
        method=method,
        k=k,
        encoder_config=enc,
        train_config=tc,
        module=module,
        final_loss=float(sidecar["final_training_loss"]),
        feature_mean=mean,
        feature_std=std,
    )
