"""Training and evaluation: per-sequence MSE with Adam, thresholded set
prediction, sequence-level accuracy, and multi-seed experiment aggregation.

One update per sequence: forward over the whole input, mean-squared error
against the k-hot targets, backward through hidden and memory states alike,
one optimizer step. A sequence counts as accepted only when every output
unit lands on the correct side of the threshold at every timestep.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from typing import Sequence

import numpy as np

from .autodiff import RngStream, ShapeError, Tape, Tensor, backward, concat, reshape, square, sub, vmean
from .common import config_fingerprint
from .languages import Dataset, Vocabulary, encode
from .models import ModelConfig, ModelParams, build_model, run_sequence

__all__ = [
    "TrainConfig",
    "Adam",
    "TrainingDiverged",
    "mse_loss",
    "predict_sets",
    "sequence_correct",
    "evaluate",
    "train",
    "RunResult",
    "RunReport",
    "run_experiment",
    "model_label",
    "report_to_csv",
    "report_to_text",
    "losses_to_csv",
]


class TrainingDiverged(RuntimeError):
    """A run produced a non-finite loss; reported as a failed seed."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    threshold: float = 0.5
    clip_norm: float | None = 1.0
    shuffle_seed: int = 0
    model_seed: int = 0
    n_runs: int = 10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")


class Adam:
    """Adam with bias correction; moments live alongside the parameters."""

    def __init__(self, params: ModelParams, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for t in params.tensors()]
        self.v = [np.zeros_like(t.data) for t in params.tensors()]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1 ** self.step_count
        correction2 = 1.0 - b2 ** self.step_count
        for t, m, v in zip(self.params.tensors(), self.m, self.v):
            g = t.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            t.data -= self.learning_rate * (m / correction1) / (
                np.sqrt(v / correction2) + self.epsilon
            )


def clip_gradient_norm(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in params.tensors()))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for t in params.tensors():
            t.grad *= factor
    return total


def mse_loss(predictions, targets) -> Tensor:
    """Mean over all T*D entries of the squared prediction error."""
    if isinstance(predictions, (list, tuple)):
        pred = concat(list(predictions))
    else:
        pred = predictions
        if pred.data.ndim > 1:
            pred = reshape(pred, (pred.data.size,))
    target = np.asarray(targets, dtype=np.float64).ravel()
    if pred.data.size != target.size:
        raise ShapeError(
            f"predictions have {pred.data.size} entries, targets {target.size}"
        )
    return vmean(square(sub(pred, Tensor(target))))


def predict_sets(predictions: np.ndarray, threshold: float = 0.5,
                 vocab: Vocabulary | None = None) -> list[frozenset]:
    """Per-timestep predicted symbol sets: unit j fires iff y[t, j] > threshold.

    Ties at the threshold are not predicted. Returns index sets, or symbol
    sets when a vocabulary is supplied.
    """
    predictions = np.asarray(predictions)
    out = []
    for row in predictions:
        hot = np.flatnonzero(row > threshold)
        if vocab is None:
            out.append(frozenset(int(i) for i in hot))
        else:
            out.append(frozenset(vocab.output_symbols[i] for i in hot))
    return out


def sequence_correct(predicted: Sequence[frozenset], targets: Sequence[frozenset]) -> bool:
    """True iff the predicted set equals the target set at every timestep."""
    if len(predicted) != len(targets):
        raise ValueError("predicted and target sequences differ in length")
    return all(p == t for p, t in zip(predicted, targets))


def _target_index_sets(dataset: Dataset) -> list[list[frozenset]]:
    vocab = dataset.vocab
    index = {s: i for i, s in enumerate(vocab.output_symbols)}
    return [
        [frozenset(index[sym] for sym in t) for t in sample.targets]
        for sample in dataset.samples
    ]


def evaluate(model_config: ModelConfig, params: ModelParams, dataset: Dataset,
             threshold: float = 0.5) -> float:
    """Sequence-level accuracy in percent; action noise is frozen."""
    if not dataset.samples:
        raise ValueError("cannot evaluate on an empty dataset")
    model = build_model(model_config)
    targets = _target_index_sets(dataset)
    correct = 0
    for sample, target_sets in zip(dataset.samples, targets):
        x, _ = encode(sample, dataset.vocab)
        outputs, _ = run_sequence(model, params, x, rng=None)
        pred = np.stack([y.data for y in outputs])
        if sequence_correct(predict_sets(pred, threshold), target_sets):
            correct += 1
    return 100.0 * correct / len(dataset.samples)


def train(model_config: ModelConfig, dataset: Dataset,
          config: TrainConfig) -> tuple[ModelParams, list[float]]:
    """Seed-shuffled per-sequence updates; returns params and epoch losses.

    Deterministic given the config seeds: initialization, Gumbel noise, and
    shuffling each consume their own derived stream.
    """
    if not dataset.samples:
        raise ValueError("cannot train on an empty dataset")
    model = build_model(model_config)
    params = model.init_params(RngStream(config.model_seed, "init"))
    gumbel_rng = RngStream(config.model_seed, "gumbel")
    shuffle_rng = RngStream(config.shuffle_seed, "shuffle")
    optimizer = Adam(params, config.learning_rate, config.beta1, config.beta2,
                     config.adam_epsilon)
    encoded = [encode(s, dataset.vocab) for s in dataset.samples]
    history: list[float] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(encoded))
        total = 0.0
        for idx in order:
            x, y = encoded[idx]
            with Tape() as tape:
                outputs, _ = run_sequence(model, params, x, rng=gumbel_rng)
                loss = mse_loss(outputs, y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, sample {int(idx)}"
                )
            total += value
            backward(loss, tape)
            if config.clip_norm is not None:
                clip_gradient_norm(params, config.clip_norm)
            optimizer.step()
        history.append(total / len(encoded))
    return params, history


# ---------------------------------------------------------------------------
# Multi-seed experiments
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    train_accuracy: float
    test_accuracy: float
    epoch_losses: list[float] = field(default_factory=list)
    diverged: bool = False
    error: str | None = None
    params_data: dict[str, np.ndarray] | None = None


@dataclass
class RunReport:
    """Per-seed accuracies plus min/max/median/mean aggregates."""

    model: str
    fingerprint: str
    results: list[RunResult]

    def __post_init__(self):
        self.results = sorted(self.results, key=lambda r: r.seed)

    def aggregates(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for split, attr in (("train", "train_accuracy"), ("test", "test_accuracy")):
            values = np.array([getattr(r, attr) for r in self.results])
            out[split] = {
                "min": float(values.min()),
                "max": float(values.max()),
                "median": float(np.median(values)),
                "mean": float(values.mean()),
            }
        return out


def model_label(config: ModelConfig) -> str:
    if config.architecture.startswith("vanilla") or \
            config.architecture == "joulin_stack_rnn":
        return config.architecture
    label = f"{config.architecture}+{config.action}"
    if config.tau is not None:
        label += f"(tau={config.tau:g})"
    return label


def _run_one_seed(model_config: ModelConfig, train_ds: Dataset, test_ds: Dataset,
                  config: TrainConfig, seed: int) -> RunResult:
    run_config = replace(config, model_seed=seed, shuffle_seed=seed)
    try:
        params, history = train(model_config, train_ds, run_config)
    except TrainingDiverged as exc:
        return RunResult(seed, 0.0, 0.0, [], diverged=True, error=str(exc))
    train_acc = evaluate(model_config, params, train_ds, config.threshold)
    test_acc = evaluate(model_config, params, test_ds, config.threshold)
    data = {name: t.data.copy() for name, t in params.items()}
    return RunResult(seed, train_acc, test_acc, history, params_data=data)


def _seed_worker(payload):
    return _run_one_seed(*payload)


def run_experiment(model_config: ModelConfig, train_ds: Dataset, test_ds: Dataset,
                   config: TrainConfig, seeds: Sequence[int] | None = None,
                   workers: int = 1) -> RunReport:
    """Train and evaluate once per seed; seeds may run in parallel workers.

    A diverged seed is recorded with zero accuracy and its diagnostic; the
    report content does not depend on execution order.
    """
    if seeds is None:
        seeds = list(range(config.n_runs))
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    payloads = [(model_config, train_ds, test_ds, config, s) for s in seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            results = list(pool.map(_seed_worker, payloads))
    else:
        results = [_run_one_seed(*p) for p in payloads]
    fingerprint = config_fingerprint({
        "model": asdict(model_config),
        "train": asdict(config),
        "train_data": train_ds.config,
        "test_data": test_ds.config,
        "seeds": sorted(seeds),
    })
    return RunReport(model_label(model_config), fingerprint, results)


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def report_to_csv(report: RunReport) -> str:
    lines = ["record,seed,train_accuracy,test_accuracy,diverged"]
    for r in report.results:
        lines.append(
            f"run,{r.seed},{r.train_accuracy!r},{r.test_accuracy!r},{r.diverged}"
        )
    agg = report.aggregates()
    for stat in ("min", "max", "median", "mean"):
        lines.append(
            f"{stat},,{agg['train'][stat]!r},{agg['test'][stat]!r},"
        )
    lines.append(f"# model={report.model} fingerprint={report.fingerprint}")
    return "\n".join(lines) + "\n"


def report_to_text(report: RunReport) -> str:
    agg = report.aggregates()
    header_top = (f"{'':32s} | {'Training Set':^31s} | {'Test Set':^31s}")
    header = (f"{'Model':32s} | "
              f"{'Min':>7s}{'Max':>8s}{'Med':>8s}{'Mean':>8s} | "
              f"{'Min':>7s}{'Max':>8s}{'Med':>8s}{'Mean':>8s}")
    tr, te = agg["train"], agg["test"]
    row = (f"{report.model:32s} | "
           f"{tr['min']:7.2f}{tr['max']:8.2f}{tr['median']:8.2f}{tr['mean']:8.2f} | "
           f"{te['min']:7.2f}{te['max']:8.2f}{te['median']:8.2f}{te['mean']:8.2f}")
    seeds = ", ".join(
        f"{r.seed}: {r.test_accuracy:.2f}%" + (" (diverged)" if r.diverged else "")
        for r in report.results
    )
    return "\n".join([
        header_top,
        header,
        "-" * len(header),
        row,
        "",
        f"per-seed test accuracy: {seeds}",
        f"fingerprint: {report.fingerprint}",
    ]) + "\n"


def losses_to_csv(report: RunReport) -> str:
    lines = ["seed,epoch,mean_loss"]
    for r in report.results:
        for epoch, value in enumerate(r.epoch_losses, start=1):
            lines.append(f"{r.seed},{epoch},{value!r}")
    return "\n".join(lines) + "\n"
