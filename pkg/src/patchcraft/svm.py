"""Linear one-vs-rest SVM over flattened pixel vectors.

Each class gets a binary hinge-loss classifier (target +1 for the class, -1
for the rest) trained by full-batch subgradient descent on

    mean_i max(0, 1 - t_i * (w . x_i + b))  +  reg_lambda * ||w||^2

Full-batch updates keep the solver deterministic and the objective
monotone for small enough learning rates; the seed argument is kept for
interface stability but the solver draws nothing from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import SVM_MAGIC, read_container, write_container

DEFAULT_FEATURE_SIZE = 200


@dataclass
class SvmModel:
    weights: np.ndarray               # num_classes x feature_len
    bias: np.ndarray                  # num_classes
    reg_lambda: float
    feature_size: int = DEFAULT_FEATURE_SIZE
    class_names: list[str] = field(default_factory=list)

    @property
    def feature_len(self) -> int:
        return self.weights.shape[1]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


def flatten_image(image: np.ndarray) -> np.ndarray:
    """Row-major (row, col, channel) flattening of an HxWx3 raster."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"flatten_image: expected HxWx3, got {image.shape}")
    return np.ascontiguousarray(image).reshape(-1)


def train_svm(features: np.ndarray, labels, reg_lambda: float,
              epochs: int = 200, lr: float = 1e-3, seed: int = 0,
              feature_size: int = DEFAULT_FEATURE_SIZE) -> SvmModel:
    """Fit one-vs-rest linear SVMs with full-batch hinge subgradients."""
    x = np.asarray(features, dtype=np.float32)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"train_svm: features {x.shape} vs labels {y.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"train_svm: need at least 2 samples, got {x.shape[0]}")
    if np.unique(y).size < 2:
        raise ValueError("train_svm: training data contains a single class")

    num_classes = int(y.max()) + 1
    m, f = x.shape
    targets = np.where(y[:, None] == np.arange(num_classes)[None, :], 1.0, -1.0
                       ).astype(np.float32)                       # m x C
    w = np.zeros((num_classes, f), dtype=np.float32)
    b = np.zeros(num_classes, dtype=np.float32)
    for _ in range(epochs):
        scores = x @ w.T + b                                      # m x C
        active = ((targets * scores) < 1.0).astype(np.float32)
        pull = targets * active                                   # m x C
        grad_w = 2.0 * reg_lambda * w - (pull.T @ x) / m
        grad_b = -pull.mean(axis=0)
        w -= lr * grad_w
        b -= lr * grad_b
    return SvmModel(weights=w, bias=b, reg_lambda=reg_lambda, feature_size=feature_size)


def decision_scores(model: SvmModel, features: np.ndarray) -> np.ndarray:
    return np.asarray(features, dtype=np.float32) @ model.weights.T + model.bias


def predict_svm(model: SvmModel, x: np.ndarray) -> int:
    """Argmax class score for one feature vector; ties go to the lowest index."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape != (model.feature_len,):
        raise ValueError(
            f"predict_svm: expected feature vector of length {model.feature_len}, "
            f"got shape {x.shape}")
    return int(np.argmax(model.weights @ x + model.bias))


def hinge_objective(model: SvmModel, features: np.ndarray, labels) -> float:
    """Summed per-class regularized hinge objective (the quantity the solver descends)."""
    x = np.asarray(features, dtype=np.float32)
    y = np.asarray(labels, dtype=np.int64)
    targets = np.where(y[:, None] == np.arange(model.num_classes)[None, :], 1.0, -1.0)
    margins = np.maximum(0.0, 1.0 - targets * decision_scores(model, x))
    hinge = margins.mean(axis=0).sum()
    reg = model.reg_lambda * float((model.weights ** 2).sum())
    return float(hinge + reg)


def save_svm(path, model: SvmModel) -> None:
    meta = {
        "reg_lambda": model.reg_lambda,
        "feature_size": model.feature_size,
        "class_names": list(model.class_names),
    }
    write_container(path, SVM_MAGIC, meta,
                    {"weights": model.weights, "bias": model.bias})


def load_svm(path) -> SvmModel:
    meta, tensors = read_container(path, SVM_MAGIC)
    return SvmModel(weights=tensors["weights"], bias=tensors["bias"],
                    reg_lambda=float(meta["reg_lambda"]),
                    feature_size=int(meta["feature_size"]),
                    class_names=list(meta.get("class_names", [])))
