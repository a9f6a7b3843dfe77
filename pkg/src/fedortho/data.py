"""Task-sequence generation and client partitioning.

Synthetic Gaussian-blob benchmarks stand in for the image datasets at desk
scale; permuted tasks apply a fixed coordinate permutation per task, split
tasks chunk a shuffled class list. Real data can be loaded from CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyDataset, InvalidInput, ParseError
from .model import LabeledDataset

__all__ = [
    "TaskSequence",
    "Partition",
    "gen_base_blobs",
    "gen_permuted_tasks",
    "gen_split_tasks",
    "shard_iid",
    "shard_noniid",
    "load_csv",
    "save_csv",
]


@dataclass
class TaskSequence:
    tasks: list  # (train, test, class_count) per task, in order
    kind: str  # "permuted" | "split"

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass
class Partition:
    client_indices: list  # per-client int arrays indexing a task's train set

    def __len__(self) -> int:
        return len(self.client_indices)


def gen_base_blobs(
    classes: int,
    dim: int,
    per_class: int,
    separation: float,
    noise_std: float,
    seed,
) -> LabeledDataset:
    """Balanced Gaussian clusters with centers at separation times mutually
    orthogonal random directions."""
    if classes < 2 or dim < classes:
        raise InvalidInput("need classes >= 2 and dim >= classes")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, classes)))
    centers = separation * q  # dim x classes, orthonormal directions
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    features = centers[:, labels] + noise_std * rng.standard_normal((dim, n))
    order = rng.permutation(n)
    return LabeledDataset(features[:, order], labels[order])


def _split_train_test(data: LabeledDataset, test_fraction: float, rng):
    n = data.n_samples
    n_test = max(1, int(round(test_fraction * n)))
    order = rng.permutation(n)
    return data.subset(order[n_test:]), data.subset(order[:n_test])


def gen_permuted_tasks(
    base: LabeledDataset, k_tasks: int, seed, test_fraction: float = 0.25
) -> TaskSequence:
    """Task 1 is the base; each later task applies a fixed random coordinate
    permutation to every feature vector, train and test consistently."""
    if k_tasks < 1:
        raise InvalidInput("k_tasks must be >= 1")
    rng = np.random.default_rng(seed)
    train, test = _split_train_test(base, test_fraction, rng)
    classes = int(base.labels.max()) + 1
    tasks = []
    for t in range(k_tasks):
        if t == 0:
            perm = np.arange(base.dim)
        else:
            perm = rng.permutation(base.dim)
        tasks.append(
            (
                LabeledDataset(train.features[perm, :], train.labels),
                LabeledDataset(test.features[perm, :], test.labels),
                classes,
            )
        )
    return TaskSequence(tasks=tasks, kind="permuted")


def gen_split_tasks(
    base: LabeledDataset, classes_per_task: int, seed, test_fraction: float = 0.25
) -> TaskSequence:
    """Shuffle classes, chunk them, and re-index labels within each task to
    0..classes_per_task-1 (heads use local class indices)."""
    classes = int(base.labels.max()) + 1
    if classes % classes_per_task != 0:
        raise InvalidInput(
            f"{classes} classes not divisible by {classes_per_task} per task"
        )
    rng = np.random.default_rng(seed)
    class_order = rng.permutation(classes)
    tasks = []
    for start in range(0, classes, classes_per_task):
        chunk = class_order[start : start + classes_per_task]
        mask = np.isin(base.labels, chunk)
        feats = base.features[:, mask]
        relabel = {int(c): i for i, c in enumerate(chunk)}
        labels = np.array([relabel[int(y)] for y in base.labels[mask]])
        task_data = LabeledDataset(feats, labels)
        train, test = _split_train_test(task_data, test_fraction, rng)
        tasks.append((train, test, classes_per_task))
    return TaskSequence(tasks=tasks, kind="split")


def shard_iid(data: LabeledDataset, clients: int, seed) -> Partition:
    """Random shuffle, equal split with sizes differing by at most one."""
    if clients < 1:
        raise InvalidInput("clients must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n_samples)
    return Partition(client_indices=[np.sort(p) for p in np.array_split(order, clients)])


def shard_noniid(
    data: LabeledDataset, clients: int, shards_per_client: int, seed
) -> Partition:
    """Label-sorted sharding: sort by label, cut into clients * shards_per_client
    near-equal shards, deal shards randomly without replacement."""
    n_shards = clients * shards_per_client
    if data.n_samples < n_shards:
        raise InvalidInput("dataset too small for the requested shard count")
    rng = np.random.default_rng(seed)
    by_label = np.argsort(data.labels, kind="stable")
    shards = np.array_split(by_label, n_shards)
    deal = rng.permutation(n_shards)
    client_indices = []
    for c in range(clients):
        mine = deal[c * shards_per_client : (c + 1) * shards_per_client]
        client_indices.append(np.sort(np.concatenate([shards[s] for s in mine])))
    return Partition(client_indices=client_indices)


def load_csv(path, normalize: bool = False) -> LabeledDataset:
    """Rows are label,feature_1,...,feature_d. With normalize, features are
    scaled to [0, 1] by the global min/max."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(c.strip() == "" for c in row):
                continue
            try:
                label = int(row[0])
                feats = [float(c) for c in row[1:]]
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if rows and len(feats) != len(rows[0][1]):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(rows[0][1])} features, "
                    f"got {len(feats)}"
                )
            rows.append((label, feats))
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")
    labels = np.array([r[0] for r in rows])
    features = np.array([r[1] for r in rows]).T
    if normalize:
        lo, hi = features.min(), features.max()
        if hi > lo:
            features = (features - lo) / (hi - lo)
    return LabeledDataset(features, labels)


def save_csv(data: LabeledDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for j in range(data.n_samples):
            writer.writerow(
                [int(data.labels[j])] + [repr(float(v)) for v in data.features[:, j]]
            )
