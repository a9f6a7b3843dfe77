"""Experiment orchestration: config, the round loop, metrics, and reports.

Configs are flat key=value text files validated against a typed schema;
every run is fully determined by (config, seed). The round loop drives
clients, secure aggregation, projected server updates, and the end-of-task
subspace extraction, and fills the lower-triangular accuracy grid a[i][t]
(accuracy of task i after finishing task t).
"""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import client as cl
from . import data as datagen
from . import model as mlp
from . import secagg
from . import server as srv
from .errors import ConfigError, InvalidInput
from .linalg import seed_from

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "load_config",
    "run_experiment",
    "metric_acc",
    "metric_fgt",
    "write_reports",
]


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s):
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    return [int(v) for v in str(s).split(",") if v.strip()]


@dataclass
class ExperimentConfig:
    method: str = "fot"  # fot | fedavg
    seed: int = 1
    out_dir: str = "runs/default"
    task_kind: str = "permuted"  # permuted | split
    task_count: int = 3
    data_source: str = "blobs"  # blobs | csv
    data_csv_path: str = ""
    data_normalize: bool = False
    data_classes: int = 4
    data_dim: int = 20
    data_per_class: int = 160
    data_separation: float = 2.0
    data_noise_std: float = 1.0
    split_classes_per_task: int = 2
    partition: str = "iid"  # iid | noniid
    shards_per_client: int = 2
    clients: int = 8
    participation: float = 1.0
    rounds_per_task: int = 30
    local_epochs: int = 2
    local_lr: float = 0.1
    local_batch_size: int = 16
    model_hidden: list = field(default_factory=lambda: [16, 16])
    server_lr: float = 1.0
    gpse_threshold: float = 0.96
    gpse_threshold_increment: float = 0.0
    gpse_sampling_multiplier: float = 1.0
    gpse_drop_tol: float = 1e-10
    gpse_alt_coverage: bool = True
    dp_enabled: bool = False
    dp_clip: float = 25.0
    dp_epsilon: float = 5.0
    dp_delta: float = 1e-5
    freeze_first_layer: bool = False
    eval_per_round: bool = False


# key in the config file -> (attribute, parser)
CONFIG_SCHEMA = {
    "method": ("method", str),
    "seed": ("seed", int),
    "out_dir": ("out_dir", str),
    "tasks.kind": ("task_kind", str),
    "tasks.count": ("task_count", int),
    "data.source": ("data_source", str),
    "data.csv_path": ("data_csv_path", str),
    "data.normalize": ("data_normalize", _parse_bool),
    "data.classes": ("data_classes", int),
    "data.dim": ("data_dim", int),
    "data.per_class": ("data_per_class", int),
    "data.separation": ("data_separation", float),
    "data.noise_std": ("data_noise_std", float),
    "split.classes_per_task": ("split_classes_per_task", int),
    "partition": ("partition", str),
    "shards_per_client": ("shards_per_client", int),
    "clients.count": ("clients", int),
    "clients.participation": ("participation", float),
    "rounds_per_task": ("rounds_per_task", int),
    "local.epochs": ("local_epochs", int),
    "local.lr": ("local_lr", float),
    "local.batch_size": ("local_batch_size", int),
    "model.hidden": ("model_hidden", _parse_int_list),
    "server.lr": ("server_lr", float),
    "gpse.threshold": ("gpse_threshold", float),
    "gpse.threshold_increment": ("gpse_threshold_increment", float),
    "gpse.sampling_multiplier": ("gpse_sampling_multiplier", float),
    "gpse.drop_tol": ("gpse_drop_tol", float),
    "gpse.alt_coverage": ("gpse_alt_coverage", _parse_bool),
    "dp.enabled": ("dp_enabled", _parse_bool),
    "dp.clip": ("dp_clip", float),
    "dp.epsilon": ("dp_epsilon", float),
    "dp.delta": ("dp_delta", float),
    "freeze_first_layer": ("freeze_first_layer", _parse_bool),
    "eval_per_round": ("eval_per_round", _parse_bool),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in CONFIG_SCHEMA.items()}


def parse_config_text(text, source="<config>"):
    """Parse flat key=value lines; '#' starts a comment."""
    values = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{source}:{lineno}: expected key=value, got {raw!r}")
            continue
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            errors.append(f"{source}:{lineno}: unknown key {key!r}")
            continue
        values[key] = val
    if errors:
        raise ConfigError(errors)
    return values


def resolve_config(values, overrides=(), env=None) -> ExperimentConfig:
    """Apply --set overrides and the FOT_SEED env var, then validate."""
    env = os.environ if env is None else env
    merged = dict(values)
    errors = []
    for ov in overrides:
        if "=" not in ov:
            errors.append(f"override must be key=value, got {ov!r}")
            continue
        key, val = (part.strip() for part in ov.split("=", 1))
        if key not in CONFIG_SCHEMA:
            errors.append(f"override: unknown key {key!r}")
            continue
        merged[key] = val
    if errors:
        raise ConfigError(errors)
    if env.get("FOT_SEED"):
        merged["seed"] = env["FOT_SEED"]

    cfg = ExperimentConfig()
    for key, raw in merged.items():
        attr, parser = CONFIG_SCHEMA[key]
        try:
            setattr(cfg, attr, parser(raw))
        except (ValueError, TypeError) as exc:
            errors.append(f"{key}: cannot parse {raw!r} ({exc})")
    if errors:
        raise ConfigError(errors)
    validate_config(cfg)
    return cfg


def load_config(path, overrides=(), env=None) -> ExperimentConfig:
    with open(path) as fh:
        values = parse_config_text(fh.read(), source=str(path))
    return resolve_config(values, overrides, env)


def validate_config(cfg: ExperimentConfig) -> None:
    """Enumerate every violation before any compute."""
    errors = []
    if cfg.method not in ("fot", "fedavg"):
        errors.append(f"method must be fot or fedavg, got {cfg.method!r}")
    if cfg.task_kind not in ("permuted", "split"):
        errors.append(f"tasks.kind must be permuted or split, got {cfg.task_kind!r}")
    if cfg.data_source not in ("blobs", "csv"):
        errors.append(f"data.source must be blobs or csv, got {cfg.data_source!r}")
    if cfg.data_source == "csv" and not cfg.data_csv_path:
        errors.append("data.csv_path required when data.source = csv")
    if cfg.partition not in ("iid", "noniid"):
        errors.append(f"partition must be iid or noniid, got {cfg.partition!r}")
    if cfg.task_count < 1:
        errors.append("tasks.count must be >= 1")
    if cfg.clients < 1:
        errors.append("clients.count must be >= 1")
    if not (0.0 < cfg.participation <= 1.0):
        errors.append("clients.participation must lie in (0, 1]")
    if cfg.rounds_per_task < 1:
        errors.append("rounds_per_task must be >= 1")
    if cfg.local_epochs < 1 or cfg.local_batch_size < 1:
        errors.append("local.epochs and local.batch_size must be >= 1")
    if cfg.local_lr < 0:
        errors.append("local.lr must be >= 0")
    if cfg.server_lr <= 0:
        errors.append("server.lr must be > 0")
    if not cfg.model_hidden:
        errors.append("model.hidden must list at least one layer width")
    if not (0.0 < cfg.gpse_threshold <= 2.0):
        errors.append("gpse.threshold must lie in (0, 2]")
    if cfg.dp_enabled:
        try:
            cl.DpConfig(
                enabled=True,
                clip_bound=cfg.dp_clip,
                epsilon=cfg.dp_epsilon,
                delta=cfg.dp_delta,
                client_count=cfg.clients,
            )
        except InvalidInput as exc:
            errors.append(f"dp: {exc}")
    if errors:
        raise ConfigError(errors)


def config_items(cfg: ExperimentConfig):
    """(file key, serialized value) for every config field, schema order."""
    out = []
    for f in fields(cfg):
        key = _ATTR_TO_KEY[f.name]
        val = getattr(cfg, f.name)
        if isinstance(val, list):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        out.append((key, str(val)))
    return out


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    acc_matrix: np.ndarray  # K x K, NaN above the diagonal
    subspace: list  # rows (task, layer, basis_size, dim, utilization)
    round_logs: list  # dicts with per-round orthogonality diagnostics
    model: mlp.MlpModel
    ortho: srv.OrthogonalSet
    task_snapshots: dict  # task -> (trunk weight copies, OrthogonalSet)
    timings: dict
    acc: float = float("nan")
    fgt: float = float("nan")


def build_tasks(cfg: ExperimentConfig) -> datagen.TaskSequence:
    if cfg.data_source == "csv":
        base = datagen.load_csv(cfg.data_csv_path, normalize=cfg.data_normalize)
    else:
        base = datagen.gen_base_blobs(
            classes=cfg.data_classes,
            dim=cfg.data_dim,
            per_class=cfg.data_per_class,
            separation=cfg.data_separation,
            noise_std=cfg.data_noise_std,
            seed=seed_from(cfg.seed, "blobs"),
        )
    if cfg.task_kind == "permuted":
        return datagen.gen_permuted_tasks(
            base, cfg.task_count, seed_from(cfg.seed, "tasks")
        )
    return datagen.gen_split_tasks(
        base, cfg.split_classes_per_task, seed_from(cfg.seed, "tasks")
    )


def _partition_task(train, cfg, task_number):
    pseed = seed_from(cfg.seed, "partition", task_number)
    if cfg.partition == "noniid":
        return datagen.shard_noniid(train, cfg.clients, cfg.shards_per_client, pseed)
    return datagen.shard_iid(train, cfg.clients, pseed)


def _pack_update(update: mlp.Update):
    return secagg.pack_matrices(list(update.trunk) + [update.head])


def _run_gpse(cfg, states, model, ortho, gpse_cfg, dp, task_number):
    """End-of-task sketch round through secure aggregation."""
    dims = model.layer_input_dims()
    sdims = gpse_cfg.sampling_dims(dims)
    shared_seed = seed_from(cfg.seed, "gpse-gauss", task_number)
    round_seed = seed_from(cfg.seed, "gpse-round", task_number)
    client_ids = [st.client_id for st in states]

    payloads = []
    active_layers = None
    for st in states:
        sk = cl.collect_sketch(
            st,
            model,
            task_number,
            ortho,
            sdims,
            dp,
            cfg.freeze_first_layer,
            shared_seed,
            task_number=task_number,
        )
        layers = [l for l, entry in enumerate(sk.layers) if entry is not None]
        if active_layers is None:
            active_layers = layers
        mats = []
        for l in layers:
            entry = sk.layers[l]
            mats.append(entry.a)
            mats.append(np.array([[entry.residual_sq, entry.total_sq]]))
        vec, layout = secagg.pack_matrices(mats)
        payloads.append(
            secagg.mask(vec, st.client_id, client_ids, round_seed, layout=layout)
        )
    agg = secagg.aggregate(payloads)
    mats = secagg.unpack_matrices(agg, payloads[0].layout)
    sketch_sum = [None] * len(dims)
    for pos, l in enumerate(active_layers):
        a = mats[2 * pos]
        norms = mats[2 * pos + 1][0]
        sketch_sum[l] = srv.AggregatedLayerSketch(
            a=a, residual_sq=float(norms[0]), total_sq=float(norms[1])
        )
    return srv.gpse_round(sketch_sum, ortho, gpse_cfg, task_number)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    validate_config(cfg)
    t_start = time.monotonic()
    tasks = build_tasks(cfg)
    k_tasks = len(tasks)
    classes_per_task = [t[2] for t in tasks.tasks]

    model = mlp.init_mlp(
        tasks.tasks[0][0].dim, cfg.model_hidden, seed_from(cfg.seed, "init")
    )
    ortho = srv.OrthogonalSet.empty_for_model(model)
    gpse_cfg = srv.GpseConfig(
        threshold=cfg.gpse_threshold,
        threshold_increment=cfg.gpse_threshold_increment,
        sampling_multiplier=cfg.gpse_sampling_multiplier,
        drop_tol=cfg.gpse_drop_tol,
        alt_coverage=cfg.gpse_alt_coverage,
    )
    dp = cl.DpConfig(
        enabled=cfg.dp_enabled,
        clip_bound=cfg.dp_clip,
        epsilon=cfg.dp_epsilon,
        delta=cfg.dp_delta,
        client_count=cfg.clients,
    )
    states = [
        cl.ClientState(i, seed_from(cfg.seed, "client", i)) for i in range(cfg.clients)
    ]
    part_rng = np.random.default_rng(seed_from(cfg.seed, "participants"))
    n_participants = max(1, int(round(cfg.participation * cfg.clients)))

    acc_matrix = np.full((k_tasks, k_tasks), np.nan)
    subspace_rows = []
    round_logs = []
    task_snapshots = {}
    timings = {"train": 0.0, "gpse": 0.0, "eval": 0.0}
    is_fot = cfg.method == "fot"
    empty_set = srv.OrthogonalSet.empty_for_model(model)

    for t in range(1, k_tasks + 1):
        train, _test, classes = tasks.tasks[t - 1]
        mlp.add_head(model, t, classes, seed_from(cfg.seed, "head", t))
        part = _partition_task(train, cfg, t)
        for st, idx in zip(states, part.client_indices):
            st.add_task(t, train.subset(idx), idx)
            st.activate(t)

        t0 = time.monotonic()
        for r in range(1, cfg.rounds_per_task + 1):
            chosen = np.sort(
                part_rng.choice(cfg.clients, size=n_participants, replace=False)
            )
            round_seed = seed_from(cfg.seed, "round", t, r)
            payloads = []
            layout = None
            for cid in chosen:
                tc = cl.TrainConfig(
                    epochs=cfg.local_epochs,
                    lr=cfg.local_lr,
                    batch_size=cfg.local_batch_size,
                    seed=seed_from(cfg.seed, "local", t, r, int(cid)),
                )
                upd = cl.local_round(states[cid], model, t, tc)
                vec, layout = _pack_update(upd)
                payloads.append(
                    secagg.mask(vec, int(cid), list(chosen), round_seed, layout=layout)
                )
            agg = secagg.aggregate(payloads)
            mats = secagg.unpack_matrices(agg, layout)
            upd_sum = mlp.Update(trunk=mats[:-1], head=mats[-1], task=t)

            before = [w.copy() for w in model.trunk]
            ortho_eff = ortho if is_fot else empty_set
            model = srv.fed_project(
                upd_sum,
                len(chosen),
                ortho_eff,
                model,
                mu=cfg.server_lr,
                freeze_first_layer=cfg.freeze_first_layer,
            )
            log = {"task": t, "round": r, "layers": []}
            for l, (wb, wa) in enumerate(zip(before, model.trunk)):
                delta = wa - wb
                basis = ortho_eff[l]
                dn = float(np.linalg.norm(delta))
                on = (
                    float(np.linalg.norm(delta @ basis.vectors))
                    if basis.k > 0
                    else 0.0
                )
                log["layers"].append({"delta_norm": dn, "delta_dot_basis_norm": on})
            round_logs.append(log)
            if cfg.eval_per_round:
                log["round_acc"] = [
                    mlp.evaluate(model, i, tasks.tasks[i - 1][1]) for i in range(1, t + 1)
                ]
        timings["train"] += time.monotonic() - t0

        if is_fot:
            t0 = time.monotonic()
            ortho = _run_gpse(cfg, states, model, ortho, gpse_cfg, dp, t)
            timings["gpse"] += time.monotonic() - t0
        for l, basis in enumerate(ortho.bases):
            subspace_rows.append((t, l, basis.k, basis.dim, basis.k / basis.dim))
        task_snapshots[t] = (
            [w.copy() for w in model.trunk],
            srv.OrthogonalSet(bases=list(ortho.bases)),
        )

        t0 = time.monotonic()
        for i in range(1, t + 1):
            acc_matrix[i - 1, t - 1] = mlp.evaluate(model, i, tasks.tasks[i - 1][1])
        timings["eval"] += time.monotonic() - t0
        logger.info(
            "task %d done: acc so far %s", t, np.round(acc_matrix[: t, t - 1], 3)
        )

    timings["total"] = time.monotonic() - t_start
    result = ExperimentResult(
        cfg=cfg,
        acc_matrix=acc_matrix,
        subspace=subspace_rows,
        round_logs=round_logs,
        model=model,
        ortho=ortho,
        task_snapshots=task_snapshots,
        timings=timings,
    )
    result.acc = metric_acc(acc_matrix, k_tasks)
    result.fgt = metric_fgt(acc_matrix, k_tasks) if k_tasks >= 2 else float("nan")
    return result


def metric_acc(a, k: int) -> float:
    """Mean of the final-column accuracies a[i, K]."""
    a = np.asarray(a, dtype=np.float64)
    col = a[:k, k - 1]
    if np.any(np.isnan(col)):
        raise InvalidInput("final accuracy column is incomplete")
    return float(np.mean(col))


def metric_fgt(a, k: int) -> float:
    """Mean over i < K of a[i, i] - a[i, K]; may be negative."""
    if k < 2:
        raise InvalidInput("forgetting needs at least two tasks")
    a = np.asarray(a, dtype=np.float64)
    diag = np.array([a[i, i] for i in range(k - 1)])
    final = a[: k - 1, k - 1]
    if np.any(np.isnan(diag)) or np.any(np.isnan(final)):
        raise InvalidInput("accuracy grid is incomplete")
    return float(np.mean(diag - final))


def write_reports(result: ExperimentResult, out_dir) -> list:
    """Emit the CSV outputs, a run manifest, and rendered figures."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    k = result.acc_matrix.shape[0]

    path = os.path.join(out_dir, "accuracy_matrix.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task_eval", "task_after", "accuracy"])
        for t in range(1, k + 1):
            for i in range(1, t + 1):
                w.writerow([i, t, repr(float(result.acc_matrix[i - 1, t - 1]))])
    written.append(path)

    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "acc", "fgt", "seed"])
        w.writerow(
            [result.cfg.method, repr(result.acc), repr(result.fgt), result.cfg.seed]
        )
    written.append(path)

    path = os.path.join(out_dir, "subspace.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "layer", "basis_size", "dim", "utilization"])
        for row in result.subspace:
            w.writerow([row[0], row[1], row[2], row[3], repr(row[4])])
    written.append(path)

    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        for key, val in config_items(result.cfg):
            fh.write(f"{key} = {val}\n")
        for phase, secs in result.timings.items():
            fh.write(f"# timing.{phase} = {secs:.3f}s\n")
    written.append(path)

    from . import plots  # deferred: matplotlib import is slow

    written.extend(plots.render_figures(result, out_dir))
    return written
