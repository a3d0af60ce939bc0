"""Cross-entropy training with Adam (decoupled weight decay) and checkpoints.

Training is fully deterministic in (seed, dataset, config): parameter init,
epoch shuffles, per-item augmentation, and dropout each draw from their own
seed-sequence stream derived from TrainConfig.seed.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import vit
from .autodiff import Tape, Tensor
from .container import (CheckpointError, VIT_MAGIC, read_container,
                        write_container)
from .data import (AugmentPolicy, Dataset, NormStats, augment,
                   compute_norm_stats, normalize, resize)

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainReport",
    "TrainingDiverged",
    "CheckpointError",
    "cross_entropy",
    "adam_step",
    "evaluate",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingDiverged(RuntimeError):
    """Loss left the finite range; carries the epoch/batch it happened in."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 25
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class AdamState:
    """First/second moment buffers mirroring the parameter shapes, plus step t."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def for_params(named: dict[str, Tensor]) -> "AdamState":
        return AdamState(m={k: np.zeros_like(p.data) for k, p in named.items()},
                         v={k: np.zeros_like(p.data) for k, p in named.items()})


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    epoch_accuracies: list[float] = field(default_factory=list)
    final_train_accuracy: float = 0.0
    final_test_accuracy: float | None = None
    wall_seconds: float = 0.0
    vit_config: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch, via fused log-sum-exp."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ValueError(
            f"cross_entropy: logits {logits.shape} need labels of shape ({z.shape[0]},)")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ValueError(
            f"cross_entropy: label out of range for {z.shape[1]} classes: {labels}")
    batch = z.shape[0]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    nll = lse[:, 0] - z[np.arange(batch), labels]
    out = Tensor(np.asarray(nll.mean(), dtype=z.dtype), requires_grad=ad.tracing(logits))
    if out.requires_grad:
        probs = np.exp(z - lse)
        def bwd(g):
            d = probs.copy()
            d[np.arange(batch), labels] -= 1.0
            logits._add_grad(g * d / batch)
        ad.register(out, bwd)
    return out


def adam_step(named: dict[str, Tensor], grads: dict[str, np.ndarray | None],
              state: AdamState, cfg: TrainConfig) -> AdamState:
    """One Adam update with decoupled weight decay; mutates params in place.

    A missing/None gradient is treated as zero (the decay still applies).
    """
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in named.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(
                f"adam_step: gradient for {name!r} has shape {g.shape}, "
                f"expected {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
                   + cfg.learning_rate * cfg.weight_decay * p.data)
    return state


def evaluate(logits_fn: Callable[[np.ndarray], np.ndarray], dataset: Dataset,
             norm_stats: NormStats, image_size: int) -> float:
    """Sparse categorical accuracy; argmax ties go to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("evaluate: dataset is empty")
    correct = 0
    for item in dataset.items:
        img = normalize(resize(item.pixels, image_size), norm_stats)
        logits = logits_fn(img)
        logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
        if int(np.argmax(logits)) == item.label:
            correct += 1
    return correct / len(dataset)


def make_vit_logits_fn(params: vit.ViTParams, config: vit.ViTConfig
                       ) -> Callable[[np.ndarray], np.ndarray]:
    def fn(image: np.ndarray) -> np.ndarray:
        return vit.forward(image, params, config, mode="eval").data
    return fn


def _item_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    # one augmentation stream per (epoch, item) so parallel batch assembly
    # would reproduce serial results
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((seed, 0xA46, epoch, index))))


def train(model_config: vit.ViTConfig, train_config: TrainConfig,
          train_set: Dataset, test_set: Dataset | None = None,
          augment_policy: AugmentPolicy | None = None,
          norm_stats: NormStats | None = None,
          ) -> tuple[vit.ViTParams, TrainReport]:
    """Train a fresh ViT on an already-split dataset.

    Returns the trained parameters and a per-epoch report. Raises
    TrainingDiverged on a non-finite loss. Normalization statistics are
    computed from the training split unless supplied.
    """
    if len(train_set) == 0:
        raise ValueError("train: empty training set")
    started = time.perf_counter()
    policy = augment_policy if augment_policy is not None else AugmentPolicy()
    size = model_config.image_size

    root = np.random.SeedSequence(train_config.seed)
    init_ss, shuffle_ss, dropout_ss = root.spawn(3)
    params = vit.init_params(model_config, seed=int(init_ss.generate_state(1)[0]))
    named = params.named()
    state = AdamState.for_params(named)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    dropout_rng = np.random.Generator(np.random.PCG64(dropout_ss))

    stats = norm_stats if norm_stats is not None else compute_norm_stats(train_set, size)
    resized = [resize(item.pixels, size) for item in train_set.items]
    labels = train_set.labels()
    n = len(train_set)

    report = TrainReport(vit_config=asdict(model_config),
                         train_config=asdict(train_config))
    for epoch in range(train_config.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for batch_no, start in enumerate(range(0, n, train_config.batch_size)):
            idx = order[start:start + train_config.batch_size]
            with Tape() as tape:
                rows = []
                for i in idx:
                    img = augment(resized[i], _item_rng(train_config.seed, epoch, int(i)),
                                  policy)
                    rows.append(vit.forward(normalize(img, stats), params, model_config,
                                            mode="train", rng=dropout_rng))
                logits = ad.stack_rows(rows)
                loss = cross_entropy(logits, labels[idx])
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(epoch=epoch, batch=batch_no)
                ad.backward(loss, tape)
            adam_step(named, {k: p.grad for k, p in named.items()}, state, train_config)
            ad.zero_grad(named.values())
            loss_sum += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
        report.epoch_losses.append(loss_sum / n)
        report.epoch_accuracies.append(correct / n)

    logits_fn = make_vit_logits_fn(params, model_config)
    report.final_train_accuracy = evaluate(logits_fn, train_set, stats, size)
    if test_set is not None and len(test_set) > 0:
        report.final_test_accuracy = evaluate(logits_fn, test_set, stats, size)
    report.wall_seconds = time.perf_counter() - started
    return params, report


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: vit.ViTParams, model_config: vit.ViTConfig,
                    train_config: TrainConfig, class_names: list[str],
                    norm_stats: NormStats) -> None:
    meta = {
        "vit_config": asdict(model_config),
        "train_config": asdict(train_config),
        "class_names": list(class_names),
    }
    tensors: dict[str, np.ndarray] = {name: t.data for name, t in params.named().items()}
    tensors["norm.mean"] = norm_stats.mean
    tensors["norm.std"] = norm_stats.std
    write_container(path, VIT_MAGIC, meta, tensors)


def load_checkpoint(path) -> tuple[vit.ViTParams, vit.ViTConfig, TrainConfig,
                                   list[str], NormStats]:
    meta, tensors = read_container(path, VIT_MAGIC)
    try:
        model_config = vit.ViTConfig(**meta["vit_config"])
        train_config = TrainConfig(**meta["train_config"])
        class_names = list(meta["class_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint metadata: {exc}") from exc
    for key in ("norm.mean", "norm.std"):
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {key!r}")
    stats = NormStats(mean=tensors.pop("norm.mean"), std=tensors.pop("norm.std"))
    named = {name: Tensor(arr, requires_grad=True) for name, arr in tensors.items()}
    try:
        params = vit.ViTParams.from_named(model_config, named)
    except vit.ConfigError as exc:
        raise CheckpointError(str(exc)) from exc
    return params, model_config, train_config, class_names, stats
