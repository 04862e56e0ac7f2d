"""Run configuration, full-batch training with early stopping, evaluation and sweeps."""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import (RNG_INIT, RNG_TEST_NEG, RNG_TRAIN, RNG_VAL_NEG, Dataset, Split, load_dataset, make_lp_split,
                   make_nc_split, sample_negatives, stream, training_graph)
from .errors import NumericError, ValidationError
from .graph import HeteroGraph
from .heads import DECODER_KINDS, LinkDecoder, NodeClassifier, lp_loss_from_logits, nc_loss
from .metrics import MetricReport, auroc, aupr, f1_scores, mrr
from .model import (GraphSchema, HetSheafModel, ModelConfig, load_checkpoint, postprocess_lp, postprocess_nc,
                    prepare_inputs, save_checkpoint)
from .nn import Adam, Module

LR_GRID = tuple(m * 10.0 ** e for e in range(-5, -1) for m in (1, 5))
WD_GRID = tuple(m * 10.0 ** e for e in range(-5, -2) for m in (1, 5))

_MODEL_FIELDS = {f.name for f in fields(ModelConfig)}


def _on_grid(value: float, grid) -> bool:
    return any(math.isclose(value, g, rel_tol=1e-9) for g in grid)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 500
    patience: int = 50
    seed: int = 0
    decoder: str = "dot"
    dataset: str = ""
    output: str = "runs/default"
    mrr_negatives: int = 10
    neg_ratio: int = 1
    n_test: int = 1000
    n_val: int = 500

    def __post_init__(self):
        if not self.lr > 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 0 or self.patience < 1:
            raise ValidationError("epochs must be >= 0 and patience >= 1")
        if self.decoder not in DECODER_KINDS:
            raise ValidationError(f"decoder must be one of {DECODER_KINDS}, got {self.decoder!r}")
        if self.mrr_negatives < 1 or self.neg_ratio < 1:
            raise ValidationError("mrr_negatives and neg_ratio must be >= 1")
        if not _on_grid(self.lr, LR_GRID):
            warnings.warn(f"lr={self.lr} is off the documented search grid", stacklevel=3)
        if not _on_grid(self.weight_decay, WD_GRID):
            warnings.warn(f"weight_decay={self.weight_decay} is off the documented search grid", stacklevel=3)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Build from a flat mapping; model keys and run keys share one namespace."""
        run_fields = {f.name for f in fields(cls)} - {"model"}
        unknown = set(data) - run_fields - _MODEL_FIELDS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        model = ModelConfig(**{k: v for k, v in data.items() if k in _MODEL_FIELDS})
        return cls(model=model, **{k: v for k, v in data.items() if k in run_fields})

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = self.model.to_dict()
        out.update({k: v for k, v in asdict(self).items() if k != "model"})
        return out

    def replace(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update(changes)
        return RunConfig.from_dict(data)


def schema_of(dataset: Dataset) -> GraphSchema:
    g = dataset.graph
    return GraphSchema(g.num_node_types, g.num_edge_types,
                       [dataset.features.dim(t) for t in range(g.num_node_types)],
                       g.type_counts(), dataset.target_types)


class TaskModel(Module):
    """Sheaf encoder followed by a node classifier or a link decoder."""

    def __init__(self, run: RunConfig, schema: GraphSchema, num_classes: int | None, rng: np.random.Generator):
        self.encoder = HetSheafModel(run.model, schema, rng)
        width = self.encoder.embedding_width
        if run.model.task == "nc":
            self.head = NodeClassifier(width, num_classes, rng, run.model.activation)
        else:
            self.head = LinkDecoder(run.decoder, width * run.model.layers, schema.num_edge_types, rng,
                                    run.model.activation)

    def embed(self, graph: HeteroGraph, inputs, training: bool = False, rng=None) -> ad.Tensor:
        H = self.encoder(graph, inputs, training, rng)
        return postprocess_nc(H) if self.encoder.config.task == "nc" else postprocess_lp(H)


@dataclass
class Problem:
    """Everything a run needs besides parameters: split, graph, inputs and fixed negatives."""

    dataset: Dataset
    split: Split
    graph: HeteroGraph
    inputs: dict
    train_pos: np.ndarray | None = None
    val_pairs: tuple[np.ndarray, np.ndarray] | None = None
    test_pairs: tuple[np.ndarray, np.ndarray] | None = None
    mrr_candidates: np.ndarray | None = None
    tail_nodes: np.ndarray | None = None

    @property
    def task(self) -> str:
        return self.dataset.task


def prepare_problem(dataset: Dataset, run: RunConfig, split_seed: int | None = None) -> Problem:
    seed = run.seed if split_seed is None else split_seed
    if run.model.task != dataset.task:
        raise ValidationError(f"config task {run.model.task!r} does not match dataset task {dataset.task!r}")
    if dataset.task == "nc":
        split = make_nc_split(len(dataset.labels), run.n_test, run.n_val, seed)
        graph = dataset.graph
        inputs = prepare_inputs(graph, dataset.features, run.model.input_mode, dataset.target_types)
        return Problem(dataset, split, graph, inputs)
    split = make_lp_split(len(dataset.target_edges), seed)
    graph = training_graph(dataset, split)
    inputs = prepare_inputs(graph, dataset.features, run.model.input_mode, dataset.target_types)
    pos = dataset.target_edges
    tails = dataset.graph.nodes_of_type(dataset.tail_type)
    n = dataset.graph.num_nodes
    val_pos, test_pos = pos[split.val], pos[split.test]
    val_neg = sample_negatives(val_pos, tails, pos, run.neg_ratio, stream(seed, RNG_VAL_NEG), n)
    test_rng = stream(seed, RNG_TEST_NEG)
    test_neg = sample_negatives(test_pos, tails, pos, run.neg_ratio, test_rng, n)
    mrr_neg = sample_negatives(test_pos, tails, pos, run.mrr_negatives, test_rng, n)
    return Problem(dataset, split, graph, inputs, train_pos=pos[split.train], val_pairs=(val_pos, val_neg),
                   test_pairs=(test_pos, test_neg), mrr_candidates=mrr_neg[:, 1].reshape(-1, run.mrr_negatives),
                   tail_nodes=tails)


def _pair_logits(model: TaskModel, H: ad.Tensor, pairs: np.ndarray, edge_type: int) -> ad.Tensor:
    return model.head.logits(ad.take(H, pairs[:, 0]), ad.take(H, pairs[:, 1]), edge_type)


def training_loss(model: TaskModel, problem: Problem, training: bool, rng: np.random.Generator) -> ad.Tensor:
    H = model.embed(problem.graph, problem.inputs, training, rng)
    ds = problem.dataset
    if problem.task == "nc":
        rows = problem.split.train
        return nc_loss(model.head(ad.take(H, ds.labels.node_ids[rows])), ds.labels.labels[rows],
                       ds.labels.multilabel)
    pos = problem.train_pos
    neg = sample_negatives(pos, problem.tail_nodes, pos, 1, rng, ds.graph.num_nodes)
    et = ds.target_edge_type
    return lp_loss_from_logits(_pair_logits(model, H, pos, et), _pair_logits(model, H, neg, et))


def split_metrics(model: TaskModel, problem: Problem, part: str) -> dict[str, float]:
    """Eval-mode metrics on ``val`` or ``test``."""
    ds = problem.dataset
    with ad.no_grad():
        H = model.embed(problem.graph, problem.inputs, training=False)
        if problem.task == "nc":
            rows = getattr(problem.split, part)
            if rows.size == 0:
                return {"micro_f1": 0.0, "macro_f1": 0.0}
            logits = model.head(ad.take(H, ds.labels.node_ids[rows])).data
            truth = ds.labels.labels[rows]
            if ds.labels.multilabel:
                macro, micro = f1_scores((logits > 0).astype(np.int64), truth, ds.labels.num_classes, "multilabel")
            else:
                macro, micro = f1_scores(logits.argmax(axis=1), truth, ds.labels.num_classes)
            return {"micro_f1": micro, "macro_f1": macro}
        pos, neg = problem.val_pairs if part == "val" else problem.test_pairs
        et = ds.target_edge_type
        sp = ad.sigmoid(_pair_logits(model, H, pos, et)).data
        sn = ad.sigmoid(_pair_logits(model, H, neg, et)).data
        scores = np.concatenate([sp, sn])
        labels = np.concatenate([np.ones(sp.size), np.zeros(sn.size)])
        out = {"auroc": auroc(scores, labels), "aupr": aupr(scores, labels)}
        if part == "test":
            k = problem.mrr_candidates.shape[1]
            heads = np.repeat(pos[:, 0], k)
            cand = np.stack([heads, problem.mrr_candidates.reshape(-1)], axis=1)
            neg_scores = _pair_logits(model, H, cand, et).data.reshape(-1, k)
            true_scores = _pair_logits(model, H, pos, et).data
            out["mrr"] = mrr(np.concatenate([true_scores[:, None], neg_scores], axis=1))
        return out


def selection_metric(task: str) -> str:
    return "micro_f1" if task == "nc" else "auroc"


def checkpoint_config(run: RunConfig, schema: GraphSchema, dataset: Dataset) -> dict:
    num_classes = dataset.labels.num_classes if dataset.task == "nc" else None
    return {"run": run.to_dict(), "schema": asdict(schema), "num_classes": num_classes}


def build_model(run: RunConfig, schema: GraphSchema, num_classes: int | None) -> TaskModel:
    return TaskModel(run, schema, num_classes, stream(run.seed, RNG_INIT))


@dataclass
class TrainResult:
    report: MetricReport
    best_epoch: int
    epochs_run: int
    log: list[tuple[int, float, float]]
    model: TaskModel
    output: Path | None


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def train(run: RunConfig, dataset: Dataset | None = None, write: bool = True) -> TrainResult:
    """Full-batch Adam with early stopping on the validation selection metric.

    Epoch 0 is the untrained model.  The best-validation parameters are
    restored before the test evaluation.
    """
    if dataset is None:
        dataset = load_dataset(run.dataset)
    schema = schema_of(dataset)
    problem = prepare_problem(dataset, run)
    model = build_model(run, schema, dataset.labels.num_classes if dataset.task == "nc" else None)
    rng = stream(run.seed, RNG_TRAIN)
    params = model.param_dict()
    opt = Adam(params, run.lr, run.weight_decay)
    metric = selection_metric(dataset.task)
    out_dir = Path(run.output) if write else None
    ckpt_config = checkpoint_config(run, schema, dataset)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")

    best_state, best_epoch = model.state_dict(), 0
    log: list[tuple[int, float, float]] = []
    epoch = 0
    try:
        with ad.no_grad():
            loss0 = float(training_loss(model, problem, False, rng).data)
        best_val = split_metrics(model, problem, "val")[metric]
        log.append((0, loss0, best_val))
        stale = 0
        for epoch in range(1, run.epochs + 1):
            opt.zero_grad()
            loss = training_loss(model, problem, True, rng)
            if not np.isfinite(loss.data).all():
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            val = split_metrics(model, problem, "val")[metric]
            log.append((epoch, float(loss.data), val))
            if val > best_val:
                best_val, best_state, best_epoch, stale = val, model.state_dict(), epoch, 0
            else:
                stale += 1
                if stale >= run.patience:
                    break
    except NumericError as exc:
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.hshf", ckpt_config, best_state)
            _write_log(out_dir, log)
        raise NumericError(f"{exc}; kept the epoch-{best_epoch} checkpoint") from None
    model.load_state_dict(best_state)
    values = split_metrics(model, problem, "test")
    values[f"val_{metric}"] = best_val
    report = MetricReport(values, run.seed, problem.split.sizes())
    result = TrainResult(report, best_epoch, epoch, log, model, out_dir)
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.hshf", ckpt_config, best_state)
        _write_log(out_dir, log)
        payload = report.to_dict()
        payload.update(best_epoch=best_epoch, epochs_run=epoch)
        (out_dir / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return result


def _write_log(out_dir: Path, log):
    lines = ["epoch\ttrain_loss\tval_metric\n"]
    lines += [f"{e}\t{_fmt(l)}\t{_fmt(v)}\n" for e, l, v in log]
    (out_dir / "log.tsv").write_text("".join(lines))


def evaluate(checkpoint, dataset: Dataset | str, split_seed: int | None = None) -> MetricReport:
    """Eval-mode test metrics of a saved model; the dataset must match its schema."""
    config, state = load_checkpoint(checkpoint)
    run = RunConfig.from_dict(config["run"])
    if not isinstance(dataset, Dataset):
        dataset = load_dataset(dataset)
    expected = GraphSchema.from_dict(config["schema"])
    expected.check(schema_of(dataset))
    model = build_model(run, expected, config.get("num_classes"))
    model.load_state_dict(state)
    problem = prepare_problem(dataset, run, split_seed)
    values = split_metrics(model, problem, "test")
    values[f"val_{selection_metric(dataset.task)}"] = split_metrics(model, problem, "val")[
        selection_metric(dataset.task)]
    return MetricReport(values, run.seed if split_seed is None else split_seed, problem.split.sizes())


def run_seeds(run: RunConfig, seeds, dataset: Dataset | None = None, write: bool = True) -> dict:
    """Train once per seed; report mean and (population) std of every metric."""
    if dataset is None:
        dataset = load_dataset(run.dataset)
    per_seed = {}
    for s in seeds:
        sub = run.replace(seed=int(s), output=str(Path(run.output) / f"seed_{s}"))
        per_seed[int(s)] = train(sub, dataset, write=write).report.values
    names = sorted(next(iter(per_seed.values())))
    summary = {name: {"mean": float(np.mean([v[name] for v in per_seed.values()])),
                      "std": float(np.std([v[name] for v in per_seed.values()]))} for name in names}
    out = {"seeds": sorted(per_seed), "summary": summary, "per_seed": {str(k): v for k, v in per_seed.items()}}
    if write:
        Path(run.output).mkdir(parents=True, exist_ok=True)
        (Path(run.output) / "summary.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product of ``{"base": {...}, "grid": {key: [values]}}``."""
    base = dict(grid.get("base", {}))
    axes = grid.get("grid", {})
    if not isinstance(axes, dict) or any(not isinstance(v, list) or not v for v in axes.values()):
        raise ValidationError("sweep grid must map keys to non-empty lists")
    keys = sorted(axes)
    return [{**base, **dict(zip(keys, combo))} for combo in itertools.product(*(axes[k] for k in keys))]


def sweep(grid: dict, output: str | None = None) -> list[dict]:
    """Train every grid point and rank by validation selection metric."""
    points = expand_grid(grid)
    out_root = Path(output or grid.get("base", {}).get("output", "runs/sweep"))
    results = []
    datasets: dict[str, Dataset] = {}
    for i, point in enumerate(points):
        run = RunConfig.from_dict({**point, "output": str(out_root / f"run_{i:03d}")})
        if run.dataset not in datasets:
            datasets[run.dataset] = load_dataset(run.dataset)
        report = train(run, datasets[run.dataset]).report
        key = f"val_{selection_metric(run.model.task)}"
        results.append({"index": i, "params": {k: point[k] for k in sorted(grid.get("grid", {}))},
                        "val": report[key], "metrics": report.values})
    results.sort(key=lambda r: (-r["val"], r["index"]))
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "sweep.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    return results


def gradcheck_model(run: RunConfig, dataset: Dataset | None = None, tolerance: float = 1e-4) -> ad.GradcheckReport:
    """Finite-difference check of every parameter of the node-classification model.

    Runs on the six-node fixture unless a dataset is given.  With the
    default stop-gradient normalization the ``D^{-1/2}`` factors are frozen
    at their current values, which is the function the tape differentiates.
    """
    from .fixtures import six_node_fixture

    dataset = dataset if dataset is not None else six_node_fixture()
    run = run.replace(task="nc")
    problem = prepare_problem(dataset, run)
    model = build_model(run, schema_of(dataset), dataset.labels.num_classes)
    rng = stream(run.seed, RNG_TRAIN)

    def loss():
        return training_loss(model, problem, False, rng)

    if run.model.grad_through_norm:
        return ad.gradcheck(loss, model.param_dict(), tolerance=tolerance)
    with model.encoder.frozen_normalization():
        return ad.gradcheck(loss, model.param_dict(), tolerance=tolerance)
