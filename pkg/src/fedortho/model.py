"""Multi-head MLP with manual backprop and per-layer input capture.

Biases are folded into the weight matrices: every layer input is augmented
with a trailing constant-1 row, so a trunk weight W has shape
(out, in + 1) and the update-orthogonality machinery covers biases with no
special case. Features are stored column-wise (d x n).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, InvalidInput, UnknownTask

__all__ = [
    "LabeledDataset",
    "MlpModel",
    "Update",
    "init_mlp",
    "add_head",
    "forward",
    "backward",
    "local_train",
    "evaluate",
    "clone_model",
]


@dataclass
class LabeledDataset:
    features: np.ndarray  # d x n
    labels: np.ndarray  # n, int class indices

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvalidInput("features must be a d x n matrix")
        if self.labels.shape != (self.features.shape[1],):
            raise InvalidInput("labels length must match feature columns")

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    @property
    def n_samples(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[:, idx], self.labels[idx])


@dataclass
class MlpModel:
    trunk: list  # L weight matrices, W_l of shape (out_l, in_l + 1)
    heads: dict = field(default_factory=dict)  # task_id -> (classes, hidden + 1)

    @property
    def n_layers(self) -> int:
        return len(self.trunk)

    @property
    def in_dim(self) -> int:
        return self.trunk[0].shape[1] - 1

    def layer_input_dims(self) -> list:
        """Augmented input dimension (in_l + 1) of every trunk layer."""
        return [w.shape[1] for w in self.trunk]


@dataclass
class Update:
    """Per-layer delta with the convention delta = W_before - W_after.

    The server applies W <- W - mu * delta, so mu = 1 with an empty
    orthogonal set reproduces plain FedAvg.
    """

    trunk: list
    head: np.ndarray
    task: int


def _glorot(rng, out_dim, in_dim):
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim + 1))


def init_mlp(in_dim: int, hidden: list, seed) -> MlpModel:
    """Trunk of len(hidden) ReLU layers; heads are added per task."""
    rng = np.random.default_rng(seed)
    trunk = []
    prev = in_dim
    for width in hidden:
        trunk.append(_glorot(rng, width, prev))
        prev = width
    return MlpModel(trunk=trunk)


def add_head(model: MlpModel, task, classes: int, seed) -> None:
    rng = np.random.default_rng(seed)
    hidden = model.trunk[-1].shape[0]
    model.heads[task] = _glorot(rng, classes, hidden)


def clone_model(model: MlpModel) -> MlpModel:
    return MlpModel(
        trunk=[w.copy() for w in model.trunk],
        heads={t: h.copy() for t, h in model.heads.items()},
    )


def _augment(x):
    return np.vstack([x, np.ones((1, x.shape[1]))])


def forward(model: MlpModel, task, x):
    """Returns (logits, captured) where captured[l] is the augmented input
    to trunk layer l (shape (in_l + 1) x n), plus the augmented head input
    as the final entry of the internal pass (not captured)."""
    if task not in model.heads:
        raise UnknownTask(f"no head for task {task!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != model.in_dim:
        raise InvalidInput(
            f"input dimension {x.shape[0]} does not match model ({model.in_dim})"
        )
    captured = []
    a = x
    for w in model.trunk:
        xa = _augment(a)
        captured.append(xa)
        a = np.maximum(w @ xa, 0.0)
    logits = model.heads[task] @ _augment(a)
    return logits, captured


def _softmax_cols(z):
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def backward(model: MlpModel, task, batch, labels):
    """Mean softmax cross-entropy loss and gradients for trunk + active head."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    if batch.shape[1] == 0:
        raise EmptyDataset("backward needs a nonempty batch")
    if task not in model.heads:
        raise UnknownTask(f"no head for task {task!r}")
    classes = model.heads[task].shape[0]
    if labels.min() < 0 or labels.max() >= classes:
        raise InvalidInput("label out of range for the active head")

    n = batch.shape[1]
    # forward pass, keeping pre-activations for the ReLU mask
    captured = []
    pre = []
    a = batch
    for w in model.trunk:
        xa = _augment(a)
        captured.append(xa)
        z = w @ xa
        pre.append(z)
        a = np.maximum(z, 0.0)
    head_in = _augment(a)
    logits = model.heads[task] @ head_in

    probs = _softmax_cols(logits)
    loss = float(-np.mean(np.log(probs[labels, np.arange(n)] + 1e-300)))

    dz = probs.copy()
    dz[labels, np.arange(n)] -= 1.0
    dz /= n
    grad_head = dz @ head_in.T
    da = model.heads[task][:, :-1].T @ dz
    grad_trunk = [None] * model.n_layers
    for l in range(model.n_layers - 1, -1, -1):
        dzl = da * (pre[l] > 0)
        grad_trunk[l] = dzl @ captured[l].T
        if l > 0:
            da = model.trunk[l][:, :-1].T @ dzl
    return loss, Update(trunk=grad_trunk, head=grad_head, task=task)


def local_train(
    model: MlpModel,
    task,
    data: LabeledDataset,
    epochs: int,
    lr: float,
    batch_size: int,
    rng_seed,
) -> Update:
    """Seeded minibatch SGD on a copy of the model; the input model is not
    mutated. Returns delta = W_before - W_after."""
    if data.n_samples == 0:
        raise EmptyDataset("local_train needs at least one sample")
    if epochs < 1 or batch_size < 1:
        raise InvalidInput("epochs and batch_size must be >= 1")
    work = clone_model(model)
    rng = np.random.default_rng(rng_seed)
    n = data.n_samples
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grads = backward(work, task, data.features[:, idx], data.labels[idx])
            for w, g in zip(work.trunk, grads.trunk):
                w -= lr * g
            work.heads[task] -= lr * grads.head
    return Update(
        trunk=[wb - wa for wb, wa in zip(model.trunk, work.trunk)],
        head=model.heads[task] - work.heads[task],
        task=task,
    )


def evaluate(model: MlpModel, task, data: LabeledDataset) -> float:
    """Fraction of argmax-correct predictions (ties go to the lowest class)."""
    if data.n_samples == 0:
        raise EmptyDataset("evaluate needs at least one sample")
    logits, _ = forward(model, task, data.features)
    pred = np.argmax(logits, axis=0)
    return float(np.mean(pred == data.labels))
