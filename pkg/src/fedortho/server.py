"""Server-side logic: projected aggregation and subspace extraction.

The aggregated update is averaged, its row-space component along each
layer's stored basis removed, and the result applied to the trunk; the
active head is updated unprojected. After each task the server sums client
sketches, runs SVD per layer, picks a rank by threshold, and expands the
per-layer orthonormal basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as mlp
from .errors import InvalidInput, ProtocolError
from .linalg import (
    OrthonormalBasis,
    empty_basis,
    gram_schmidt,
    project_rows_out,
    svd,
)

__all__ = [
    "OrthogonalSet",
    "GpseConfig",
    "ServerConfig",
    "AggregatedLayerSketch",
    "fed_project",
    "rank_select",
    "aggregate_ratio",
    "gpse_round",
]


@dataclass
class OrthogonalSet:
    """Per-trunk-layer orthonormal bases over the augmented input spaces."""

    bases: list  # OrthonormalBasis per layer

    @classmethod
    def empty(cls, dims) -> "OrthogonalSet":
        return cls(bases=[empty_basis(d) for d in dims])

    @classmethod
    def empty_for_model(cls, model: mlp.MlpModel) -> "OrthogonalSet":
        return cls.empty(model.layer_input_dims())

    def __getitem__(self, layer: int) -> OrthonormalBasis:
        return self.bases[layer]

    def __len__(self) -> int:
        return len(self.bases)

    def sizes(self) -> list:
        return [b.k for b in self.bases]


@dataclass
class GpseConfig:
    threshold: float = 0.94
    threshold_increment: float = 0.0
    sampling_multiplier: float = 1.0  # s_l = ceil(multiplier * d_l)
    drop_tol: float = 1e-10
    alt_coverage: bool = True  # coverage term (1 - ratio) instead of ratio

    def __post_init__(self):
        if not (0.0 < self.threshold <= 2.0):
            raise InvalidInput("threshold must lie in (0, 2]")
        if self.drop_tol <= 0:
            raise InvalidInput("drop_tol must be positive")
        if self.sampling_multiplier <= 0:
            raise InvalidInput("sampling_multiplier must be positive")

    def threshold_for_task(self, task_number: int) -> float:
        return self.threshold + self.threshold_increment * (task_number - 1)

    def sampling_dims(self, layer_dims) -> list:
        return [max(1, math.ceil(self.sampling_multiplier * d)) for d in layer_dims]


@dataclass
class ServerConfig:
    server_lr: float = 1.0  # mu
    client_count: int = 8
    participation: float = 1.0

    def __post_init__(self):
        if self.server_lr <= 0:
            raise InvalidInput("server_lr must be positive")
        if not (0.0 < self.participation <= 1.0):
            raise InvalidInput("participation must lie in (0, 1]")


@dataclass
class AggregatedLayerSketch:
    """Secure-aggregated sketch for one layer; None entries in the per-layer
    list mark layers excluded from the collection round."""

    a: np.ndarray
    residual_sq: float
    total_sq: float


def fed_project(
    updates_sum: mlp.Update,
    participating: int,
    ortho: OrthogonalSet,
    model: mlp.MlpModel,
    mu: float = 1.0,
    freeze_first_layer: bool = False,
) -> mlp.MlpModel:
    """Average the summed updates, project each trunk layer's delta off the
    stored basis, and apply W <- W - mu * delta. The active head moves by
    the unprojected averaged head delta. Returns a new model."""
    if participating <= 0:
        raise ProtocolError("no participating clients")
    out = mlp.clone_model(model)
    for l, (w, d_sum) in enumerate(zip(out.trunk, updates_sum.trunk)):
        if freeze_first_layer and l == 0 and updates_sum.task > 1:
            continue
        delta = d_sum / participating
        delta_star = project_rows_out(ortho[l], delta)
        w -= mu * delta_star
    out.heads[updates_sum.task] = (
        out.heads[updates_sum.task] - mu * (updates_sum.head / participating)
    )
    return out


def rank_select(
    singular_values,
    ratio: float,
    th: float,
    max_rank: int = None,
    alt_coverage: bool = False,
) -> int:
    """Smallest r with sqrt(top-r energy fraction) + coverage >= th.

    coverage is the aggregated residual-to-total norm ratio as written in
    the selection rule; with alt_coverage it is (1 - ratio), the reading
    where the term measures how much input the stored basis already covers.
    The rule degenerates at the first task without alt_coverage (ratio = 1
    satisfies any th <= 1 at r = 0).
    """
    s = np.asarray(singular_values, dtype=np.float64)
    if not (0.0 <= ratio <= 1.0):
        raise InvalidInput("ratio must lie in [0, 1]")
    cap = len(s) if max_rank is None else min(len(s), max_rank)
    total = float(np.sum(s**2))
    if total == 0.0:
        return 0
    coverage = (1.0 - ratio) if alt_coverage else ratio
    cum = 0.0
    for r in range(len(s) + 1):
        if math.sqrt(cum / total) + coverage >= th:
            return min(r, cap)
        if r < len(s):
            cum += float(s[r]) ** 2
    return cap


def aggregate_ratio(residual_sq: float, total_sq: float) -> float:
    """Global residual fraction sqrt(sum ||X*||_F^2 / sum ||X||_F^2)."""
    if residual_sq < 0 or total_sq < 0:
        raise InvalidInput("squared norms must be non-negative")
    if total_sq == 0.0:
        return 0.0
    return min(1.0, math.sqrt(residual_sq / total_sq))


def gpse_round(
    sketch_sum,
    ortho: OrthogonalSet,
    cfg: GpseConfig,
    task_number: int,
) -> OrthogonalSet:
    """Expand the per-layer bases from the aggregated sketches.

    sketch_sum is a per-layer list of AggregatedLayerSketch (None for
    excluded layers). Layers with no data signal (zero total norm) are left
    unchanged. Returns a new OrthogonalSet; bases never shrink.
    """
    th = cfg.threshold_for_task(task_number)
    new_bases = []
    for l, basis in enumerate(ortho.bases):
        entry = sketch_sum[l]
        if entry is None or entry.total_sq == 0.0:
            new_bases.append(basis)
            continue
        if not np.all(np.isfinite(entry.a)):
            raise InvalidInput(f"layer {l}: aggregated sketch has non-finite entries")
        res = svd(entry.a)
        ratio = aggregate_ratio(entry.residual_sq, entry.total_sq)
        r = rank_select(
            res.s,
            ratio,
            th,
            max_rank=basis.dim - basis.k,
            alt_coverage=cfg.alt_coverage,
        )
        if r == 0:
            new_bases.append(basis)
            continue
        stacked = np.hstack([basis.vectors, res.u[:, :r]])
        new_bases.append(gram_schmidt(stacked, cfg.drop_tol))
    return OrthogonalSet(bases=new_bases)
