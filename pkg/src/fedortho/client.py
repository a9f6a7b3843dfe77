"""Client-side behavior: local training rounds and sketch construction.

The sketch payload for a layer is A = X* G, where X* is the layer input
with the stored subspace projected out and G stacks one standard-normal row
per sample. Each row of G is seeded from (shared seed, task, layer, global
sample index), so the summed sketch over any partition of the same sample
set is identical up to float addition order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mlp
from .errors import InvalidInput, NoData
from .linalg import OrthonormalBasis, project_out, seed_from

__all__ = [
    "ClientState",
    "TrainConfig",
    "DpConfig",
    "LayerSketch",
    "Sketch",
    "local_round",
    "collect_sketch",
    "clip",
    "gaussian_rows",
]


@dataclass
class TrainConfig:
    epochs: int = 1
    lr: float = 0.01
    batch_size: int = 64
    seed: int = 0


@dataclass
class DpConfig:
    """Gaussian mechanism applied to sketches before secure aggregation.

    noise_std is derived from (epsilon, delta, client_count) with a small
    safety factor so the variance bound holds strictly.
    """

    enabled: bool = False
    clip_bound: float = 1.0
    epsilon: float = 5.0
    delta: float = 1e-5
    client_count: int = 1
    noise_std: float = field(init=False, default=0.0)

    def __post_init__(self):
        if not self.enabled:
            return
        if self.clip_bound <= 0 or self.epsilon <= 0:
            raise InvalidInput("clip_bound and epsilon must be positive")
        if not (0.0 < self.delta < 1.0):
            raise InvalidInput("delta must lie in (0, 1)")
        if self.client_count < 1:
            raise InvalidInput("client_count must be >= 1")
        bound = math.log(1.25 / self.delta) / (self.epsilon**2 * self.client_count)
        self.noise_std = math.sqrt(bound) * 1.05
        assert self.noise_std**2 > bound


@dataclass
class LayerSketch:
    a: np.ndarray  # d_l x s_l
    residual_sq: float  # ||X*||_F^2
    total_sq: float  # ||X||_F^2


@dataclass
class Sketch:
    layers: list  # LayerSketch or None for layers excluded from collection
    sample_count: int


class ClientState:
    """Holds per-task data but only exposes the active task's dataset,
    enforcing the continual constraint that old tasks are inaccessible."""

    def __init__(self, client_id: int, rng_seed: int):
        self.client_id = client_id
        self.rng_seed = rng_seed
        self._datasets = {}  # task -> (LabeledDataset, global index array)
        self._active = None

    def add_task(self, task, data: mlp.LabeledDataset, global_indices) -> None:
        idx = np.asarray(global_indices, dtype=np.int64)
        if idx.shape != (data.n_samples,):
            raise InvalidInput("global_indices must have one entry per sample")
        self._datasets[task] = (data, idx)

    def activate(self, task) -> None:
        if task not in self._datasets:
            raise NoData(f"client {self.client_id} has no data for task {task!r}")
        self._active = task

    def data(self, task) -> mlp.LabeledDataset:
        if task != self._active or task not in self._datasets:
            raise NoData(
                f"client {self.client_id}: task {task!r} data is not accessible"
            )
        return self._datasets[task][0]

    def global_indices(self, task) -> np.ndarray:
        if task != self._active or task not in self._datasets:
            raise NoData(
                f"client {self.client_id}: task {task!r} data is not accessible"
            )
        return self._datasets[task][1]


def local_round(
    state: ClientState, global_model: mlp.MlpModel, task, train_config: TrainConfig
) -> mlp.Update:
    """One round of local SGD on the client's current-task data."""
    data = state.data(task)
    return mlp.local_train(
        global_model,
        task,
        data,
        epochs=train_config.epochs,
        lr=train_config.lr,
        batch_size=train_config.batch_size,
        rng_seed=train_config.seed,
    )


def clip(x: np.ndarray, c: float) -> np.ndarray:
    """Frobenius-norm clipping: rescale so ||result||_F <= c."""
    if c <= 0:
        raise InvalidInput("clip bound must be positive")
    norm = float(np.linalg.norm(x))
    if norm <= c:
        return x.copy()
    return x * (c / norm)


def gaussian_rows(shared_seed, task, layer: int, global_indices, s: int) -> np.ndarray:
    """One standard-normal row of length s per global sample index.

    Seeding on (shared_seed, task, layer, index) makes the rows independent
    of which client holds each sample.
    """
    g = np.empty((len(global_indices), s))
    for row, gidx in enumerate(np.asarray(global_indices, dtype=np.int64)):
        rng = np.random.default_rng(seed_from(shared_seed, task, layer, int(gidx)))
        g[row] = rng.standard_normal(s)
    return g


def sketch_activations(
    x: np.ndarray,
    basis: OrthonormalBasis,
    global_indices,
    s: int,
    shared_seed,
    task,
    layer: int,
) -> LayerSketch:
    """Sketch one layer's captured inputs (columns of x are samples)."""
    if s < 1:
        raise InvalidInput("sampling dimension must be >= 1")
    x_star = project_out(basis, x)
    g = gaussian_rows(shared_seed, task, layer, global_indices, s)
    return LayerSketch(
        a=x_star @ g,
        residual_sq=float(np.sum(x_star**2)),
        total_sq=float(np.sum(x**2)),
    )


def collect_sketch(
    state: ClientState,
    global_model: mlp.MlpModel,
    task,
    ortho,
    sampling_dims,
    dp: DpConfig,
    freeze_first_layer: bool,
    shared_seed,
    task_number: int = None,
) -> Sketch:
    """Build the per-layer sketch payload for one client.

    ortho is the per-layer orthogonal set (indexable by layer); layer 0 is
    skipped after the first task when freeze_first_layer is set, so raw
    inputs never enter the collection round again.
    """
    data = state.data(task)
    indices = state.global_indices(task)
    _, captured = mlp.forward(global_model, task, data.features)
    if task_number is None:
        task_number = task
    layers = []
    for l, x in enumerate(captured):
        if freeze_first_layer and l == 0 and task_number > 1:
            layers.append(None)
            continue
        basis = ortho[l]
        if basis.dim != x.shape[0]:
            raise InvalidInput(
                f"layer {l}: basis dimension {basis.dim} does not match "
                f"activation dimension {x.shape[0]}"
            )
        sk = sketch_activations(x, basis, indices, sampling_dims[l], shared_seed, task, l)
        if dp.enabled:
            noise_rng = np.random.default_rng(
                seed_from(state.rng_seed, "dp-noise", task, l)
            )
            a = clip(sk.a, dp.clip_bound)
            a = a + noise_rng.normal(0.0, dp.noise_std, size=a.shape)
            sk = LayerSketch(a=a, residual_sq=sk.residual_sq, total_sq=sk.total_sq)
        layers.append(sk)
    return Sketch(layers=layers, sample_count=data.n_samples)
