"""Hyperparameter sweep and model-comparison harness.

A sweep trains one ViT per (layers, patch_size, heads) grid point against a
single shared train/test split and streams results into a CSV that can be
resumed: rows already completed ("ok" status) are never re-executed. The
comparison harness produces one row per ViT patch-size variant plus the
linear-SVM pixel baseline.
"""

from __future__ import annotations

import csv
import hashlib
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (Dataset, compute_norm_stats, load_dataset, normalize,
                   resize, stratified_split)
from .svm import decision_scores, flatten_image, train_svm
from .trainer import TrainConfig, train
from .vit import ViTConfig

SWEEP_COLUMNS = ("layers", "patch_size", "heads", "train_acc", "test_acc",
                 "epochs", "seed", "wall_seconds", "status")
COMPARE_COLUMNS = ("model", "train_acc", "test_acc")
DEFAULT_SPLIT_SEED = 42

SVM_REG_LAMBDA = 1e-4
SVM_EPOCHS = 300
SVM_LR = 1e-2


class SweepCsvError(ValueError):
    """Raised for malformed sweep CSV files; message names the line."""


@dataclass(frozen=True)
class SweepGrid:
    data_dir: str
    patch_sizes: tuple[int, ...] = (8, 12, 16)
    heads: tuple[int, ...] = (2, 4, 8)
    layers: tuple[int, ...] = (8, 12)
    image_size: int = 72
    projection_dim: int = 64
    epochs: int = 25
    learning_rate: float = 1e-4
    batch_size: int = 32
    split_fraction: float = 0.2
    split_seed: int = DEFAULT_SPLIT_SEED
    base_seed: int = 0

    def __post_init__(self):
        if not (self.patch_sizes and self.heads and self.layers):
            raise ValueError("sweep grid axes must be non-empty")

    def points(self) -> list[tuple[int, int, int]]:
        """Grid points in output order: (layers, patch_size, heads)."""
        return [(l, p, h) for l in self.layers
                for p in self.patch_sizes for h in self.heads]


@dataclass
class SweepRow:
    layers: int
    patch_size: int
    heads: int
    train_acc: float | None
    test_acc: float | None
    epochs: int
    seed: int
    wall_seconds: float
    status: str = "ok"

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.layers, self.patch_size, self.heads)


def derive_run_seed(base_seed: int, layers: int, patch: int, heads: int) -> int:
    """Stable per-run seed decorrelating grid points from one base seed."""
    tag = f"{base_seed}:{layers}:{patch}:{heads}".encode("ascii")
    return int.from_bytes(hashlib.blake2b(tag, digest_size=8).digest(), "little")


# one split per sweep invocation; cached per process so parallel workers
# reload from disk only once
_SPLIT_CACHE: dict[tuple, tuple[Dataset, Dataset]] = {}


def _load_split(data_dir: str, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    key = (str(data_dir), fraction, seed)
    if key not in _SPLIT_CACHE:
        _SPLIT_CACHE[key] = stratified_split(load_dataset(data_dir), fraction, seed)
    return _SPLIT_CACHE[key]


def run_grid_point(grid: SweepGrid, point: tuple[int, int, int]) -> SweepRow:
    """Train and evaluate one grid point; exceptions become an error row."""
    layers, patch, heads = point
    seed = derive_run_seed(grid.base_seed, layers, patch, heads)
    started = time.perf_counter()
    try:
        train_ds, test_ds = _load_split(grid.data_dir, grid.split_fraction,
                                        grid.split_seed)
        model_cfg = ViTConfig(image_size=grid.image_size, patch_size=patch,
                              projection_dim=grid.projection_dim,
                              num_heads=heads, num_layers=layers,
                              num_classes=len(train_ds.class_names))
        train_cfg = TrainConfig(learning_rate=grid.learning_rate,
                                batch_size=grid.batch_size,
                                epochs=grid.epochs, seed=seed)
        _, report = train(model_cfg, train_cfg, train_ds, test_ds)
    except Exception as exc:
        return SweepRow(layers, patch, heads, None, None, grid.epochs, seed,
                        time.perf_counter() - started, f"error: {exc}")
    return SweepRow(layers, patch, heads, report.final_train_accuracy,
                    report.final_test_accuracy, grid.epochs, seed,
                    time.perf_counter() - started, "ok")


def run_sweep(grid: SweepGrid, out_csv, jobs: int = 1,
              run_point=run_grid_point, log=None) -> list[SweepRow]:
    """Execute all missing grid points, streaming rows to out_csv.

    Completed rows from an existing CSV are kept verbatim and skipped.
    The CSV is rewritten after every completion, always in grid order.
    """
    out_csv = Path(out_csv)
    points = grid.points()
    results: dict[tuple[int, int, int], SweepRow] = {}
    if out_csv.exists():
        for row in read_sweep_csv(out_csv):
            if row.status == "ok" and row.key in set(points):
                results[row.key] = row

    def emit():
        ordered = [results[p] for p in points if p in results]
        write_sweep_csv(out_csv, ordered)

    pending = [p for p in points if p not in results]
    emit()
    if jobs <= 1:
        for point in pending:
            row = run_point(grid, point)
            results[point] = row
            emit()
            if log:
                log(row)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(run_point, grid, p): p for p in pending}
            for fut in as_completed(futures):
                row = fut.result()
                results[row.key] = row
                emit()
                if log:
                    log(row)
    return [results[p] for p in points]


def write_sweep_csv(path, rows: list[SweepRow]) -> None:
    def fmt(v, spec):
        return "" if v is None else format(v, spec)

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([r.layers, r.patch_size, r.heads,
                             fmt(r.train_acc, ".6f"), fmt(r.test_acc, ".6f"),
                             r.epochs, r.seed, format(r.wall_seconds, ".3f"),
                             r.status])


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        rows = list(reader)
    if not rows:
        raise SweepCsvError(f"{path}: line 1: empty CSV")
    if tuple(rows[0]) != SWEEP_COLUMNS:
        raise SweepCsvError(
            f"{path}: line 1: bad header {rows[0]!r}, expected {','.join(SWEEP_COLUMNS)}")

    out: list[SweepRow] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(SWEEP_COLUMNS):
            raise SweepCsvError(
                f"{path}: line {lineno}: expected {len(SWEEP_COLUMNS)} fields, got {len(row)}")
        try:
            out.append(SweepRow(
                layers=int(row[0]), patch_size=int(row[1]), heads=int(row[2]),
                train_acc=float(row[3]) if row[3] else None,
                test_acc=float(row[4]) if row[4] else None,
                epochs=int(row[5]), seed=int(row[6]),
                wall_seconds=float(row[7]) if row[7] else 0.0,
                status=row[8]))
        except ValueError as exc:
            raise SweepCsvError(f"{path}: line {lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# model comparison (ViT variants + SVM baseline)


@dataclass
class CompareRow:
    model: str
    train_acc: float | None
    test_acc: float | None
    status: str = "ok"


def _svm_accuracies(train_ds: Dataset, test_ds: Dataset, feature_size: int,
                    seed: int) -> tuple[float, float]:
    stats = compute_norm_stats(train_ds, feature_size)

    def featurize(ds: Dataset) -> np.ndarray:
        return np.stack([flatten_image(normalize(resize(it.pixels, feature_size), stats))
                         for it in ds.items])

    x_train, y_train = featurize(train_ds), train_ds.labels()
    x_test, y_test = featurize(test_ds), test_ds.labels()
    model = train_svm(x_train, y_train, reg_lambda=SVM_REG_LAMBDA,
                      epochs=SVM_EPOCHS, lr=SVM_LR, seed=seed,
                      feature_size=feature_size)
    train_acc = float((decision_scores(model, x_train).argmax(axis=1) == y_train).mean())
    test_acc = float((decision_scores(model, x_test).argmax(axis=1) == y_test).mean())
    return train_acc, test_acc


def pick_best_settings(sweep_rows: list[SweepRow], patch: int,
                       default: tuple[int, int]) -> tuple[int, int]:
    """Best (layers, heads) for a patch size by test accuracy, else default."""
    candidates = [r for r in sweep_rows
                  if r.status == "ok" and r.patch_size == patch and r.test_acc is not None]
    if not candidates:
        return default
    best = max(candidates, key=lambda r: r.test_acc)
    return best.layers, best.heads


def run_compare(grid: SweepGrid, sweep_rows: list[SweepRow] | None = None,
                svm_feature_size: int = 200, log=None) -> list[CompareRow]:
    """One row per ViT patch-size variant plus the SVM pixel baseline.

    Layer/head settings come from the best sweep row per patch size when
    sweep_rows is given, else from the grid's first layers/heads entries.
    """
    default = (grid.layers[0], grid.heads[0])
    rows: list[CompareRow] = []
    for patch in grid.patch_sizes:
        layers, heads = pick_best_settings(sweep_rows or [], patch, default)
        sub = SweepGrid(data_dir=grid.data_dir, patch_sizes=(patch,),
                        heads=(heads,), layers=(layers,),
                        image_size=grid.image_size,
                        projection_dim=grid.projection_dim, epochs=grid.epochs,
                        learning_rate=grid.learning_rate,
                        batch_size=grid.batch_size,
                        split_fraction=grid.split_fraction,
                        split_seed=grid.split_seed, base_seed=grid.base_seed)
        run = run_grid_point(sub, (layers, patch, heads))
        rows.append(CompareRow(f"ViT-{patch}", run.train_acc, run.test_acc, run.status))
        if log:
            log(rows[-1])

    try:
        train_ds, test_ds = _load_split(grid.data_dir, grid.split_fraction,
                                        grid.split_seed)
        svm_train, svm_test = _svm_accuracies(train_ds, test_ds, svm_feature_size,
                                              grid.base_seed)
        rows.append(CompareRow("SVM", svm_train, svm_test))
    except Exception as exc:
        rows.append(CompareRow("SVM", None, None, f"error: {exc}"))
    if log:
        log(rows[-1])
    return rows


def write_compare_csv(path, rows: list[CompareRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(COMPARE_COLUMNS)
        for r in rows:
            writer.writerow([r.model,
                             "" if r.train_acc is None else format(r.train_acc, ".6f"),
                             "" if r.test_acc is None else format(r.test_acc, ".6f")])
