"""Transformer classifier over patch-to-anchor FC tokens, and its training loop.

Pipeline per subject: score every FC row, keep the top ``keep_ratio`` share
(gated by their scores), project to ``embed_dim``, add a linear embedding of
the patch positions, run a pre-norm encoder whose feed-forward blocks are
MLPs or KANs, mean-pool, layer-norm and classify.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .evaluation import MetricSet, aggregate, metrics_from
from .kan import (
    KanLayerConfig,
    KanVariant,
    LayerNorm,
    Linear,
    block_param_count,
    make_block,
    make_layer,
    param_count,
)
from .rng import Rng, mix_seed
from .sampling import SubjectRepresentation
from .tensor import AdamW, CosineWarmRestarts, Module, Tensor


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    H: int
    pos_dim: int = 9
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    keep_ratio: float = 0.8
    encoder_block: KanVariant = KanVariant.MLP
    head_block: KanVariant = KanVariant.MLP
    grid_size: int = 8
    degree: int = 4
    input_range: tuple[float, float] = (-2.0, 2.0)
    expansion: int = 2
    n_classes: int = 2

    def __post_init__(self):
        self.encoder_block = KanVariant.parse(self.encoder_block)
        self.head_block = KanVariant.parse(self.head_block)
        self.input_range = tuple(self.input_range)
        if self.embed_dim % self.n_heads:
            raise ModelError("embed_dim must be divisible by n_heads")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ModelError("keep_ratio must lie in (0, 1]")
        if self.H < 1 or self.pos_dim < 1 or self.n_layers < 0:
            raise ModelError("H and pos_dim must be positive, n_layers non-negative")

    @property
    def name(self) -> str:
        return f"{self.encoder_block.value}-{self.head_block.value}"

    def block_config(self, variant: KanVariant, in_dim: int, out_dim: int) -> KanLayerConfig:
        return KanLayerConfig(
            variant, in_dim, out_dim, grid_size=self.grid_size, degree=self.degree,
            input_range=self.input_range, expansion=self.expansion,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_block"] = self.encoder_block.value
        d["head_block"] = self.head_block.value
        d["input_range"] = list(self.input_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TrainSpec:
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-4
    T_0: int = 10
    T_mult: int = 2
    eta_min: float = 0.0
    batch_size: int = 8
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if self.folds < 2:
            raise ModelError("folds must be >= 2")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")

    def schedule(self) -> CosineWarmRestarts:
        return CosineWarmRestarts(self.lr, self.T_0, self.T_mult, self.eta_min)


def keep_count(N: int, keep_ratio: float) -> int:
    return max(1, int(math.floor(keep_ratio * N + 1e-9)))


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        D = cfg.embed_dim
        self.n_heads = cfg.n_heads
        self.ln1 = LayerNorm(D)
        self.q = Linear(D, D, rng)
        self.k = Linear(D, D, rng)
        self.v = Linear(D, D, rng)
        self.o = Linear(D, D, rng)
        self.ln2 = LayerNorm(D)
        self.block = make_block(cfg.block_config(cfg.encoder_block, D, D), rng)

    def attention(self, x: Tensor) -> Tensor:
        B, K, D = x.shape
        nh, dh = self.n_heads, D // self.n_heads

        def heads(t: Tensor) -> Tensor:
            t = T.permute(T.reshape(t, (B, K, nh, dh)), (0, 2, 1, 3))
            return T.reshape(t, (B * nh, K, dh))

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        att = T.softmax_rows(T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(dh)))
        y = T.matmul(att, v)
        y = T.reshape(T.permute(T.reshape(y, (B, nh, K, dh)), (0, 2, 1, 3)), (B, K, D))
        return self.o(y)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attention(self.ln1(x))
        return x + self.block(self.ln2(x))


class ABFRClassifier(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = Rng(seed).numpy()
        D = cfg.embed_dim
        self.score = Linear(cfg.H, 1, rng)
        self.input_proj = Linear(cfg.H, D, rng)
        self.pos_proj = Linear(cfg.pos_dim, D, rng)
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.head_norm = LayerNorm(D)
        if cfg.head_block is KanVariant.MLP:
            self.head = Linear(D, cfg.n_classes, rng)
        else:
            self.head = make_layer(cfg.block_config(cfg.head_block, D, cfg.n_classes), rng)

    # -- stages -----------------------------------------------------------
    def topk_pool(self, F: Tensor, positions: np.ndarray):
        """Keep the K best-scoring rows of every subject.

        Returns gated features (B, K, H), positions (B, K, P) and indices
        (B, K). Rows come out in descending score order, ties by lower
        index; with K == N the original order is kept.
        """
        B, N, _ = F.shape
        K = keep_count(N, self.cfg.keep_ratio)
        scores = T.tanh(self.score(F))
        if K == N:
            idx = np.tile(np.arange(N), (B, 1))
        else:
            s = scores.data[..., 0]
            idx = np.argsort(-s, axis=1, kind="stable")[:, :K]
        rows = T.gather_rows(F, idx)
        gate = T.gather_rows(scores, idx)
        pos = np.take_along_axis(positions, idx[..., None], axis=1)
        return T.scale_rows(rows, gate), pos, idx

    def positional_embed(self, positions) -> Tensor:
        return self.pos_proj(T.tensor(positions))

    def encode(self, tokens: Tensor) -> Tensor:
        for layer in self.layers:
            tokens = layer(tokens)
        return tokens

    def aggregate_and_classify(self, tokens: Tensor) -> Tensor:
        pooled = T.tmean(tokens, axis=-2)
        return self.head(self.head_norm(pooled))

    def forward(self, F, positions) -> Tensor:
        """Logits (B, C) for a batch of (B, N, H) FC matrices and (B, N, P)
        positions; 2-D inputs are treated as a single subject and give (C,)."""
        single = np.ndim(F.data if isinstance(F, Tensor) else F) == 2
        F = T.tensor(F)
        positions = np.asarray(positions, dtype=np.float64)
        if single:
            F = T.reshape(F, (1,) + F.shape)
            positions = positions[None]
        if F.shape[-1] != self.cfg.H:
            raise ModelError(f"FC matrix has {F.shape[-1]} anchors, model expects {self.cfg.H}")
        if positions.shape[:2] != F.shape[:2] or positions.shape[-1] != self.cfg.pos_dim:
            raise ModelError(f"positions {positions.shape} do not match FC {F.shape} / pos_dim {self.cfg.pos_dim}")
        feats, pos, _ = self.topk_pool(F, positions)
        tokens = self.input_proj(feats) + self.positional_embed(pos)
        logits = self.aggregate_and_classify(self.encode(tokens))
        return T.reshape(logits, (logits.shape[-1],)) if single else logits

    __call__ = forward


def model_param_count(cfg: ModelConfig) -> int:
    """Trainable scalars of :class:`ABFRClassifier` from the shapes alone."""
    D, H = cfg.embed_dim, cfg.H
    n = (H + 1) + (H * D + D) + (cfg.pos_dim * D + D)
    per_layer = 2 * 2 * D + 4 * (D * D + D) + block_param_count(cfg.block_config(cfg.encoder_block, D, D))
    n += cfg.n_layers * per_layer + 2 * D
    if cfg.head_block is KanVariant.MLP:
        n += D * cfg.n_classes + cfg.n_classes
    else:
        n += param_count(cfg.block_config(cfg.head_block, D, cfg.n_classes))
    return n


# --- data handling --------------------------------------------------------

def stack_reps(reps: Sequence[SubjectRepresentation]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    F = np.stack([r.F_bar for r in reps])
    P = np.stack([r.positions for r in reps])
    y = np.array([-1 if r.label is None else r.label for r in reps], dtype=np.int64)
    return F, P, y


def predict_proba(model: ABFRClassifier, F: np.ndarray, P: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Positive-class probabilities for stacked inputs."""
    out = []
    with T.no_grad():
        for i in range(0, len(F), batch_size):
            z = model.forward(F[i:i + batch_size], P[i:i + batch_size]).data
            z = z - z.max(axis=1, keepdims=True)
            p = np.exp(z)
            out.append(p[:, 1] / p.sum(axis=1))
    return np.concatenate(out)


def evaluate(model: ABFRClassifier, F, P, y, batch_size: int = 32) -> tuple[MetricSet, np.ndarray]:
    prob = predict_proba(model, F, P, batch_size)
    return metrics_from(y, (prob >= 0.5).astype(np.int64), prob), prob


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_acc: float
    val_auc: float


def write_log_csv(path: str | Path, log: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lr", "train_loss", "val_acc", "val_auc"])
        for e in log:
            w.writerow([e.epoch, repr(e.lr), repr(e.train_loss), repr(e.val_acc), repr(e.val_auc)])


def dataset_loss(model: ABFRClassifier, F, P, y, batch_size: int = 32) -> float:
    total = 0.0
    with T.no_grad():
        for i in range(0, len(F), batch_size):
            logits = model.forward(F[i:i + batch_size], P[i:i + batch_size])
            total += T.cross_entropy(logits, y[i:i + batch_size]).item() * len(y[i:i + batch_size])
    return total / len(F)


def train_fold(
    train: Sequence[SubjectRepresentation],
    val: Sequence[SubjectRepresentation],
    config: ModelConfig,
    spec: TrainSpec,
    seed: int | None = None,
) -> tuple[ABFRClassifier, list[EpochLog]]:
    """Train from scratch on ``train``; returns the final-epoch model and a
    per-epoch log (validation metrics computed on ``val``)."""
    if not train or not val:
        raise ModelError("train and validation splits must be non-empty")
    if {id(r) for r in train} & {id(r) for r in val}:
        raise ModelError("train and validation splits overlap")
    seed = spec.seed if seed is None else seed
    Ft, Pt, yt = stack_reps(train)
    Fv, Pv, yv = stack_reps(val)
    if np.any(yt < 0) or np.any(yv < 0):
        raise ModelError("every subject needs a label")
    model = ABFRClassifier(config, mix_seed(seed, 1))
    opt = AdamW(model.parameters(), lr=spec.lr, weight_decay=spec.weight_decay)
    sched = spec.schedule()
    order_rng = Rng(mix_seed(seed, 2))
    log = []
    for epoch in range(spec.epochs):
        opt.lr = sched.lr_at(epoch)
        order = order_rng.permutation(len(Ft))
        losses = []
        for i in range(0, len(order), spec.batch_size):
            b = np.array(order[i:i + spec.batch_size])
            opt.zero_grad()
            loss = T.cross_entropy(model.forward(Ft[b], Pt[b]), yt[b])
            T.backward(loss)
            opt.step()
            losses.append(loss.item() * len(b))
        metrics, _ = evaluate(model, Fv, Pv, yv)
        log.append(EpochLog(epoch, opt.lr, sum(losses) / len(Ft), metrics.acc, metrics.auc))
    return model, log


def stratified_folds(labels: Sequence[int], k: int, seed: int) -> list[np.ndarray]:
    """Shuffle each class and deal its members round-robin into ``k`` folds,
    continuing the deal across classes so fold sizes differ by at most one."""
    labels = np.asarray(labels)
    rng = Rng(mix_seed(seed, 3))
    folds: list[list[int]] = [[] for _ in range(k)]
    slot = 0
    for c in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == c).tolist()
        rng.shuffle(members)
        for m in members:
            folds[slot % k].append(m)
            slot += 1
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


@dataclass
class FoldResult:
    fold: int
    metrics: MetricSet
    log: list[EpochLog]
    state: dict
    val_index: np.ndarray
    val_prob: np.ndarray


@dataclass
class CVResult:
    folds: list[FoldResult]
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    @property
    def fold_metrics(self) -> list[MetricSet]:
        return [f.metrics for f in self.folds]


def _run_fold(args) -> FoldResult:
    reps, config, spec, i, val_idx = args
    val_set = set(val_idx.tolist())
    train = [r for j, r in enumerate(reps) if j not in val_set]
    val = [reps[j] for j in val_idx]
    model, log = train_fold(train, val, config, spec, seed=mix_seed(spec.seed, 100 + i))
    metrics, prob = evaluate(model, *stack_reps(val))
    return FoldResult(i, metrics, log, model.state_dict(), val_idx, prob)


def run_cv(
    dataset: Sequence[SubjectRepresentation],
    config: ModelConfig,
    spec: TrainSpec,
    jobs: int = 1,
    ddof: int = 0,
) -> CVResult:
    """Stratified k-fold cross-validation; every fold trains from scratch
    with a seed derived from (spec.seed, fold), so ``jobs`` never changes
    the result."""
    labels = [r.label for r in dataset]
    if any(l is None for l in labels):
        raise ModelError("every subject needs a label")
    if len(dataset) < spec.folds:
        raise ModelError(f"{len(dataset)} subjects cannot fill {spec.folds} folds")
    if len(set(labels)) < 2:
        raise ModelError("both classes must be present")
    folds = stratified_folds(labels, spec.folds, spec.seed)
    tasks = [(list(dataset), config, spec, i, idx) for i, idx in enumerate(folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    mean, std = aggregate([r.metrics for r in results], ddof)
    return CVResult(results, mean, std)


def save_model(model: ABFRClassifier, path: str | Path) -> None:
    """Checkpoint plus a ``<stem>.json`` config sidecar."""
    path = Path(path)
    cfg = model.cfg
    arrays = {f"{cfg.name}/{k}": v for k, v in model.state_dict().items()}
    T.save_checkpoint(path, arrays)
    path.with_suffix(".json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> ABFRClassifier:
    path = Path(path)
    cfg = ModelConfig.from_dict(json.loads(path.with_suffix(".json").read_text()))
    arrays = T.load_checkpoint(path)
    prefix = f"{cfg.name}/"
    state = {}
    for k, v in arrays.items():
        if not k.startswith(prefix):
            raise ModelError(f"checkpoint entry {k!r} does not carry variant tag {cfg.name!r}")
        state[k[len(prefix):]] = v
    model = ABFRClassifier(cfg, 0)
    model.load_state_dict(state)
    return model
