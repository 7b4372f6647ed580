"""Config-driven experiment harness: single runs, repeat-and-average,
ablations, and hyperparameter sweeps.

A run resamples the split, the negative pairs, and all parameter
initializations per derived seed, trains full-batch, evaluates the test
split every epoch, and reports the best-accuracy snapshot. Metrics are
emitted as CSV rows ``dataset,ratio,seed,variant,accuracy,f1`` with
accuracy/F1 in percent.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import embed as embed_mod
from . import train as train_mod
from .autodiff import Tape
from .errors import ConfigError, DataError, NumericalError
from .graph import (
    HeteroGraph,
    Role,
    TrustSample,
    build_view,
    load_filmtrust,
    load_siot_csv,
    samples_to_arrays,
    split_samples,
)
from .ppr import topk_augment
from .predict import pair_loss, predict_scores, metrics as classification_metrics
from .train import ModelParams, adam_step, backward, init_params

METRICS_HEADER = ["dataset", "ratio", "seed", "variant", "accuracy", "f1"]
ABLATION_VARIANTS = ("woTriples", "woPPR", "woTrustee", "woTrustor", "concat")
SWEEP_PARAMS = ("ppr_k", "latent_dim", "train_ratio")


@dataclass
class PprConfig:
    enabled: bool = True
    k: int = 20
    lam: float = 0.15
    epsilon: float = 1e-6
    transition: str = "walk"
    weighted: bool = False


@dataclass
class RolesConfig:
    trustor_enabled: bool = True
    trustee_enabled: bool = True


@dataclass
class TriplesConfig:
    enabled: bool = False
    path: str | None = None
    epochs: int = 120
    margin: float = 1.0
    lr: float = 0.05
    neg_per_pos: int = 1
    full_kg: bool = False


@dataclass
class OptimConfig:
    lr: float = 0.005
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class UserEmbedConfig:
    epochs: int = 10
    lr: float = 0.05
    negatives: int = 5
    min_count: int = 2
    vectors_path: str | None = None


@dataclass
class ExperimentConfig:
    dataset: str = ""
    kind: str = "filmtrust"
    train_ratio: float = 0.9
    seed: int = 7
    runs: int = 1
    epochs: int = 200
    latent_dim: int = 32
    user_dim: int = 32
    object_dim: int = 32
    num_layers: int = 2
    fusion: str = "gate"
    train_initial: bool | None = None  # None resolves per dataset semantics
    ppr: PprConfig = field(default_factory=PprConfig)
    roles: RolesConfig = field(default_factory=RolesConfig)
    triples: TriplesConfig = field(default_factory=TriplesConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    user_embed: UserEmbedConfig = field(default_factory=UserEmbedConfig)
    workers: int | None = None

    def validate(self) -> None:
        if not self.dataset:
            raise ConfigError("dataset path is required")
        if self.kind not in ("filmtrust", "siot_csv"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError(f"train_ratio must lie in (0, 1), got {self.train_ratio}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        for name in ("latent_dim", "user_dim", "object_dim", "num_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.fusion not in ("gate", "concat"):
            raise ConfigError(f"unknown fusion mode {self.fusion!r}")
        if not (self.roles.trustor_enabled or self.roles.trustee_enabled):
            raise ConfigError("at least one role must be enabled")
        if self.ppr.enabled:
            if self.ppr.k < 1:
                raise ConfigError("ppr.k must be >= 1")
            if not 0.0 < self.ppr.lam < 1.0:
                raise ConfigError("ppr.lam must lie in (0, 1)")
            if self.ppr.epsilon <= 0:
                raise ConfigError("ppr.epsilon must be positive")
            if self.ppr.transition not in ("walk", "symmetric"):
                raise ConfigError(f"unknown ppr.transition {self.ppr.transition!r}")
        if self.optim.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        if self.optim.weight_decay < 0:
            raise ConfigError("optim.weight_decay must be >= 0")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(data)
        for name, sub in (
            ("ppr", PprConfig),
            ("roles", RolesConfig),
            ("triples", TriplesConfig),
            ("optim", OptimConfig),
            ("user_embed", UserEmbedConfig),
        ):
            if name in kwargs and isinstance(kwargs[name], dict):
                subknown = {f.name for f in dataclasses.fields(sub)}
                bad = set(kwargs[name]) - subknown
                if bad:
                    raise ConfigError(f"unknown {name} fields: {sorted(bad)}")
                kwargs[name] = sub(**kwargs[name])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(data)


def flatten_config(config: ExperimentConfig) -> dict:
    flat = {}

    def walk(prefix, obj):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(v):
                walk(key + ".", v)
            else:
                flat[key] = v

    walk("", config)
    return flat


def config_diff(a: ExperimentConfig, b: ExperimentConfig) -> list[str]:
    """Dotted names of fields that differ between two configs."""
    fa, fb = flatten_config(a), flatten_config(b)
    return sorted(k for k in fa if fa[k] != fb[k])


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    name: str
    kind: str
    graph: HeteroGraph
    positives: list
    corpus: list | None = None
    alignment: dict | None = None  # object local id -> entity id
    triples: list | None = None
    num_entities: int = 0
    num_relations: int = 0


def load_dataset(config: ExperimentConfig) -> Dataset:
    path = Path(config.dataset)
    name = path.name or str(path)
    if config.kind == "filmtrust":
        graph, positives = load_filmtrust(path / "ratings.txt", path / "trust.txt")
        return Dataset(name=name, kind=config.kind, graph=graph, positives=positives)
    graph, positives, corpus, name_alignment = load_siot_csv(path)
    dataset = Dataset(
        name=name,
        kind=config.kind,
        graph=graph,
        positives=positives,
        corpus=corpus,
    )
    if config.triples.enabled:
        triple_path = Path(config.triples.path) if config.triples.path else path / "triples.csv"
        triples, entities, relations = embed_mod.load_triples(triple_path)
        alignment = {
            obj: entities[ent] for obj, ent in name_alignment.items() if ent in entities
        }
        if not config.triples.full_kg:
            triples = embed_mod.filter_object_head_triples(triples, set(alignment.values()))
        dataset.alignment = alignment
        dataset.triples = triples
        dataset.num_entities = len(entities)
        dataset.num_relations = len(relations)
    return dataset


def derive_run_seeds(master_seed: int, runs: int) -> list[int]:
    """Deterministic child seeds for repeat-and-average runs."""
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(runs)]


# ---------------------------------------------------------------------------
# one run


@dataclass
class RunResult:
    seed: int
    accuracy: float  # percent, best epoch
    f1: float  # percent, at the best-accuracy epoch
    best_epoch: int
    trace: list  # (epoch, train loss, test accuracy percent)
    params: ModelParams | None = None


def _initial_tables(dataset: Dataset, config: ExperimentConfig, seeds: dict):
    nu, no = dataset.graph.num_users, dataset.graph.num_objects
    if config.user_embed.vectors_path:
        h0_users = embed_mod.load_user_vectors(
            config.user_embed.vectors_path, nu, config.user_dim
        )
    elif dataset.corpus is not None:
        h0_users = embed_mod.embed_users(
            dataset.corpus,
            config.user_dim,
            epochs=config.user_embed.epochs,
            seed=seeds["user_embed"],
            lr=config.user_embed.lr,
            negatives=config.user_embed.negatives,
            min_count=config.user_embed.min_count,
        )
    else:
        h0_users = embed_mod.random_table(nu, config.user_dim, seeds["user_embed"])

    if config.triples.enabled and dataset.triples:
        model = embed_mod.transe_train(
            dataset.triples,
            dataset.num_entities,
            dataset.num_relations,
            dim=config.object_dim,
            margin=config.triples.margin,
            epochs=config.triples.epochs,
            neg_per_pos=config.triples.neg_per_pos,
            lr=config.triples.lr,
            seed=seeds["transe"],
        )
        h0_objects = embed_mod.init_objects(
            dataset.graph, dataset.alignment, model, config.object_dim, seeds["obj_init"]
        )
    else:
        h0_objects = embed_mod.random_table(no, config.object_dim, seeds["obj_init"])
    return h0_users, h0_objects


def run_single(dataset: Dataset, config: ExperimentConfig, run_seed: int) -> RunResult:
    """Train once with every stochastic choice derived from ``run_seed``."""
    state = np.random.SeedSequence(run_seed).generate_state(5)
    seeds = dict(zip(("split", "user_embed", "transe", "obj_init", "params"), map(int, state)))

    samples = split_samples(
        dataset.positives, config.train_ratio, seeds["split"], num_users=dataset.graph.num_users
    )
    train_samples = [s for s in samples if s.split == "train"]
    test_samples = [s for s in samples if s.split == "test"]
    train_edges = np.array(
        [(s.trustor, s.trustee) for s in train_samples if s.label == 1], dtype=np.int64
    ).reshape(-1, 2)
    train_graph = dataset.graph.with_trust_edges(train_edges)

    aug_pairs, aug_weights = np.zeros((0, 2), dtype=np.int64), None
    if config.ppr.enabled:
        out = topk_augment(
            train_graph,
            k=config.ppr.k,
            lam=config.ppr.lam,
            epsilon=config.ppr.epsilon,
            transition=config.ppr.transition,
            weighted=config.ppr.weighted,
        )
        if config.ppr.weighted:
            aug_pairs, aug_weights = out
        else:
            aug_pairs = out

    views = {}
    if config.roles.trustor_enabled:
        views[Role.TRUSTOR] = build_view(train_graph, aug_pairs, Role.TRUSTOR, aug_weights)
    if config.roles.trustee_enabled:
        views[Role.TRUSTEE] = build_view(train_graph, aug_pairs, Role.TRUSTEE, aug_weights)

    h0_users, h0_objects = _initial_tables(dataset, config, seeds)
    params = init_params(
        seed=seeds["params"],
        user_dim=config.user_dim,
        object_dim=config.object_dim,
        latent_dim=config.latent_dim,
        fusion=config.fusion,
        trustor_enabled=config.roles.trustor_enabled,
        trustee_enabled=config.roles.trustee_enabled,
        num_layers=config.num_layers,
    )
    if config.train_initial is None:
        trainable = dataset.corpus is None and not config.triples.enabled
    else:
        trainable = config.train_initial
    params.set_initial_tables(h0_users, h0_objects, trainable=trainable)

    return _train_loop(config, views, params, train_samples, test_samples, run_seed)


def _train_loop(config, views, params, train_samples, test_samples, run_seed) -> RunResult:
    i_tr, j_tr, y_tr = samples_to_arrays(train_samples)
    i_te, j_te, y_te = samples_to_arrays(test_samples)
    if i_tr.size == 0:
        raise DataError("empty training split")
    if i_te.size == 0:
        raise DataError("empty test split")

    best_acc, best_f1, best_epoch = -1.0, 0.0, 0
    trace = []

    def evaluate(z_values) -> tuple[float, float]:
        scores = predict_scores(z_values, i_te, j_te, params.predictor)
        acc, f1 = classification_metrics(scores, y_te)
        return 100.0 * acc, 100.0 * f1

    for epoch in range(config.epochs):
        with Tape() as tape:
            z = train_mod.fused_users(views, params, None, None)
            loss = pair_loss(z, i_tr, j_tr, y_tr, params.predictor)
            tape.mark_output(loss)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        acc, f1 = evaluate(z.value)
        trace.append((epoch, loss_value, acc))
        if acc > best_acc:
            best_acc, best_f1, best_epoch = acc, f1, epoch
        grads = backward(tape)
        adam_step(
            params,
            grads,
            lr=config.optim.lr,
            weight_decay=config.optim.weight_decay,
            beta1=config.optim.beta1,
            beta2=config.optim.beta2,
            eps=config.optim.eps,
        )
        params.assert_finite()

    # state after the final step
    z_final = train_mod.fused_users(views, params, None, None)
    i_all, j_all, y_all = samples_to_arrays(train_samples)
    final_loss = pair_loss(z_final, i_all, j_all, y_all, params.predictor).item()
    acc, f1 = evaluate(z_final.value)
    trace.append((config.epochs, final_loss, acc))
    if acc > best_acc:
        best_acc, best_f1, best_epoch = acc, f1, config.epochs

    return RunResult(
        seed=run_seed,
        accuracy=best_acc,
        f1=best_f1,
        best_epoch=best_epoch,
        trace=trace,
        params=params,
    )


# ---------------------------------------------------------------------------
# repeat-and-average, ablations, sweeps


@dataclass
class Summary:
    variant: str
    config: ExperimentConfig
    results: list
    dataset_name: str

    @property
    def accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.results]))

    @property
    def f1(self) -> float:
        return float(np.mean([r.f1 for r in self.results]))

    def rows(self) -> list[list[str]]:
        out = []
        for r in self.results:
            out.append(
                [
                    self.dataset_name,
                    f"{self.config.train_ratio:g}",
                    str(r.seed),
                    self.variant,
                    f"{r.accuracy:.4f}",
                    f"{r.f1:.4f}",
                ]
            )
        out.append(
            [
                self.dataset_name,
                f"{self.config.train_ratio:g}",
                "mean",
                self.variant,
                f"{self.accuracy:.4f}",
                f"{self.f1:.4f}",
            ]
        )
        return out


_WORKER_STATE: dict = {}


def _worker_init(dataset, config_dict):
    _WORKER_STATE["dataset"] = dataset
    _WORKER_STATE["config"] = ExperimentConfig.from_dict(config_dict)


def _worker_run(seed: int) -> RunResult:
    result = run_single(_WORKER_STATE["dataset"], _WORKER_STATE["config"], seed)
    result.params = None  # keep the pickled payload small
    return result


def run(
    config: ExperimentConfig,
    out_dir=None,
    variant: str = "full",
    dataset: Dataset | None = None,
    keep_params: bool = False,
) -> Summary:
    """Execute ``config.runs`` seeded runs and aggregate.

    Parallelizes across seeds with worker processes when configured;
    result order (and therefore CSV output) is by seed index either way.
    """
    config.validate()
    if dataset is None:
        dataset = load_dataset(config)
    seeds = derive_run_seeds(config.seed, config.runs)
    workers = config.workers if config.workers is not None else min(os.cpu_count() or 1, len(seeds))
    if workers > 1 and len(seeds) > 1 and not keep_params:
        with ProcessPoolExecutor(
            max_workers=min(workers, len(seeds)),
            initializer=_worker_init,
            initargs=(dataset, config.to_dict()),
        ) as pool:
            results = list(pool.map(_worker_run, seeds))
    else:
        results = []
        for s in seeds:
            r = run_single(dataset, config, s)
            if not keep_params:
                r.params = None
            results.append(r)
    summary = Summary(variant=variant, config=config, results=results, dataset_name=dataset.name)
    if out_dir is not None:
        write_metrics(summary, out_dir)
        write_traces(summary, out_dir)
    return summary


def write_metrics(summary: Summary, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "metrics.csv"
    fresh = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(METRICS_HEADER)
        writer.writerows(summary.rows())
    return path


def write_traces(summary: Summary, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    single = len(summary.results) == 1
    for idx, result in enumerate(summary.results):
        name = "trace.csv" if single else f"trace_seed{idx}.csv"
        with (out_dir / name).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "test_acc"])
            for epoch, loss, acc in result.trace:
                writer.writerow([epoch, f"{loss:.6f}", f"{acc:.4f}"])


def make_ablation(config: ExperimentConfig, variant: str) -> ExperimentConfig:
    """Base config with exactly one field changed for the named variant."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")
    new = ExperimentConfig.from_dict(config.to_dict())
    if variant == "woTriples":
        if not config.triples.enabled:
            raise ConfigError("woTriples needs a triples-enabled base config")
        new.triples.enabled = False
    elif variant == "woPPR":
        if not config.ppr.enabled:
            raise ConfigError("woPPR needs a PPR-enabled base config")
        new.ppr.enabled = False
    elif variant == "woTrustee":
        if not config.roles.trustee_enabled:
            raise ConfigError("woTrustee needs the trustee role enabled in the base config")
        new.roles.trustee_enabled = False
    elif variant == "woTrustor":
        if not config.roles.trustor_enabled:
            raise ConfigError("woTrustor needs the trustor role enabled in the base config")
        new.roles.trustor_enabled = False
    elif variant == "concat":
        if config.fusion != "gate":
            raise ConfigError("concat ablation needs a gate-fusion base config")
        new.fusion = "concat"
    return new


def ablate(
    config: ExperimentConfig, variant: str, out_dir=None, dataset: Dataset | None = None
) -> Summary:
    new = make_ablation(config, variant)
    assert len(config_diff(config, new)) == 1
    return run(new, out_dir=out_dir, variant=variant, dataset=dataset)


def _apply_sweep_value(config: ExperimentConfig, param: str, value) -> ExperimentConfig:
    new = ExperimentConfig.from_dict(config.to_dict())
    if param == "ppr_k":
        new.ppr.k = int(value)
    elif param == "latent_dim":
        new.latent_dim = int(value)
        new.user_dim = int(value)
        new.object_dim = int(value)
    elif param == "train_ratio":
        new.train_ratio = float(value)
    else:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    return new


def sweep(
    config: ExperimentConfig,
    param: str,
    values,
    out_dir=None,
    dataset: Dataset | None = None,
) -> list[Summary]:
    """One repeat-and-average summary per value; rows tagged sweep:param=value."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    if dataset is None:
        config.validate()
        dataset = load_dataset(config)
    summaries = []
    for value in values:
        cell = _apply_sweep_value(config, param, value)
        label = f"sweep:{param}={value:g}" if isinstance(value, float) else f"sweep:{param}={value}"
        summaries.append(run(cell, out_dir=out_dir, variant=label, dataset=dataset))
    return summaries


def evaluate_checkpoint(config: ExperimentConfig, checkpoint_path, dataset: Dataset | None = None):
    """Evaluation-only pass: rebuild the split and score a saved model."""
    config.validate()
    if dataset is None:
        dataset = load_dataset(config)
    params = train_mod.load_params(checkpoint_path)
    run_seed = derive_run_seeds(config.seed, 1)[0]
    state = np.random.SeedSequence(run_seed).generate_state(5)
    seeds = dict(zip(("split", "user_embed", "transe", "obj_init", "params"), map(int, state)))
    samples = split_samples(
        dataset.positives, config.train_ratio, seeds["split"], num_users=dataset.graph.num_users
    )
    test_samples = [s for s in samples if s.split == "test"]
    train_edges = np.array(
        [(s.trustor, s.trustee) for s in samples if s.split == "train" and s.label == 1],
        dtype=np.int64,
    ).reshape(-1, 2)
    train_graph = dataset.graph.with_trust_edges(train_edges)
    aug = np.zeros((0, 2), dtype=np.int64)
    weights = None
    if config.ppr.enabled:
        out = topk_augment(
            train_graph,
            k=config.ppr.k,
            lam=config.ppr.lam,
            epsilon=config.ppr.epsilon,
            transition=config.ppr.transition,
            weighted=config.ppr.weighted,
        )
        aug, weights = out if config.ppr.weighted else (out, None)
    views = {}
    if params.trustor is not None:
        views[Role.TRUSTOR] = build_view(train_graph, aug, Role.TRUSTOR, weights)
    if params.trustee is not None:
        views[Role.TRUSTEE] = build_view(train_graph, aug, Role.TRUSTEE, weights)
    z = train_mod.fused_users(views, params, None, None)
    i_te, j_te, y_te = samples_to_arrays(test_samples)
    scores = predict_scores(z.value, i_te, j_te, params.predictor)
    acc, f1 = classification_metrics(scores, y_te)
    return 100.0 * acc, 100.0 * f1
