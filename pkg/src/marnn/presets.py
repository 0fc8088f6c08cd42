"""Task and model presets for the experiment grid.

Six tasks (three bracket-nesting depths, two palindrome variants, string
reversal) and twelve model variants (two plain baselines, the top-k stack
baseline, and the three memory architectures crossed with three action
distributions). Preset values are the defaults the harness was designed
around; every field can be overridden per experiment, and every override
lands in the report fingerprint.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

from .common import config_fingerprint
from .languages import (
    Dataset,
    GrammarConfig,
    dyck_vocabulary,
    palindrome_vocabulary,
    reversal_vocabulary,
    sample_dyck,
    sample_palindrome,
    reversal_pairs,
)
from .models import ModelConfig
from .training import TrainConfig

__all__ = [
    "TaskPreset",
    "TASKS",
    "MODEL_VARIANTS",
    "ExperimentSpec",
    "ResolvedExperiment",
    "build_datasets",
    "preset_matches_dataset",
]


@dataclass(frozen=True)
class TaskPreset:
    name: str
    kind: str                      # dyck | palindrome | reversal
    train_range: tuple[int, int]
    test_range: tuple[int, int]
    train_count: int
    test_count: int
    hidden: int
    mem_dim: int
    memory_slots: int
    n_pairs: int | None = None
    p: float | None = None
    q: float | None = None
    homomorphic: bool | None = None

    def vocabulary(self):
        if self.kind == "dyck":
            return dyck_vocabulary(self.n_pairs)
        if self.kind == "palindrome":
            return palindrome_vocabulary(self.homomorphic)
        return reversal_vocabulary()


TASKS: dict[str, TaskPreset] = {
    "dyck2": TaskPreset("dyck2", "dyck", (2, 50), (52, 100), 5000, 5000,
                        hidden=8, mem_dim=1, memory_slots=104,
                        n_pairs=2, p=0.5, q=0.25),
    "dyck3": TaskPreset("dyck3", "dyck", (2, 50), (52, 100), 5000, 5000,
                        hidden=8, mem_dim=1, memory_slots=104,
                        n_pairs=3, p=0.5, q=0.25),
    "dyck6": TaskPreset("dyck6", "dyck", (2, 50), (52, 100), 15000, 5000,
                        hidden=12, mem_dim=5, memory_slots=104,
                        n_pairs=6, p=0.5, q=0.25),
    "hom_palindrome": TaskPreset("hom_palindrome", "palindrome",
                                 (2, 50), (52, 100), 5000, 5000,
                                 hidden=8, mem_dim=1, memory_slots=104,
                                 homomorphic=True),
    "palindrome": TaskPreset("palindrome", "palindrome",
                             (2, 50), (52, 100), 5000, 5000,
                             hidden=8, mem_dim=1, memory_slots=104,
                             homomorphic=False),
    "reversal": TaskPreset("reversal", "reversal",
                           (2, 50), (52, 100), 5000, 5000,
                           hidden=8, mem_dim=1, memory_slots=104),
}

# variant id -> (architecture, action distribution)
MODEL_VARIANTS: dict[str, tuple[str, str]] = {
    "vanilla_rnn": ("vanilla_rnn", "softmax"),
    "vanilla_lstm": ("vanilla_lstm", "softmax"),
    "joulin_stack_rnn": ("joulin_stack_rnn", "softmax"),
}
for _arch in ("stack_rnn", "stack_lstm", "baby_ntm"):
    for _action in ("softmax", "softmax_temp", "gumbel_softmax"):
        MODEL_VARIANTS[f"{_arch}_{_action}"] = (_arch, _action)


def build_datasets(preset: TaskPreset, train_count: int | None = None,
                   test_count: int | None = None,
                   data_seed: int = 0) -> tuple[Dataset, Dataset]:
    """Generate the train/test split for a task preset."""
    n_train = preset.train_count if train_count is None else train_count
    n_test = preset.test_count if test_count is None else test_count
    if preset.kind == "dyck":
        train = sample_dyck(
            GrammarConfig(preset.n_pairs, preset.p, preset.q,
                          preset.train_range, n_train, data_seed), "train")
        test = sample_dyck(
            GrammarConfig(preset.n_pairs, preset.p, preset.q,
                          preset.test_range, n_test, data_seed), "test")
    elif preset.kind == "palindrome":
        train = sample_palindrome(preset.homomorphic, preset.train_range,
                                  n_train, data_seed, "train")
        test = sample_palindrome(preset.homomorphic, preset.test_range,
                                 n_test, data_seed, "test")
    else:
        train = reversal_pairs(preset.train_range, n_train, data_seed, "train")
        test = reversal_pairs(preset.test_range, n_test, data_seed, "test")
    return train, test


def preset_matches_dataset(preset: TaskPreset, ds_config: dict) -> None:
    """Reject datasets generated for a different task than the preset."""
    task = ds_config.get("task")
    if task != preset.kind:
        raise ValueError(f"dataset holds task {task!r}, preset is {preset.kind!r}")
    if preset.kind == "dyck" and ds_config.get("n_pairs") != preset.n_pairs:
        raise ValueError(
            f"dataset has {ds_config.get('n_pairs')} bracket pairs, "
            f"preset {preset.name!r} expects {preset.n_pairs}"
        )
    if preset.kind == "palindrome" and \
            bool(ds_config.get("homomorphic")) != bool(preset.homomorphic):
        raise ValueError("palindrome dataset homomorphism does not match preset")


@dataclass
class ExperimentSpec:
    """One experiment: a task, a model variant, and optional overrides."""

    task: str
    model: str
    seeds: Sequence[int] = (0,)
    hidden: int | None = None
    mem_dim: int | None = None
    memory_slots: int | None = None
    tau: float | None = None
    joulin_k: int | None = None
    train_count: int | None = None
    test_count: int | None = None
    data_seed: int = 0
    epochs: int | None = None
    learning_rate: float | None = None
    threshold: float | None = None
    clip_norm: float | None = None
    workers: int = 1

    def resolve(self) -> "ResolvedExperiment":
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; "
                             f"choose from {sorted(TASKS)}")
        if self.model not in MODEL_VARIANTS:
            raise ValueError(f"unknown model {self.model!r}; "
                             f"choose from {sorted(MODEL_VARIANTS)}")
        preset = TASKS[self.task]
        architecture, action = MODEL_VARIANTS[self.model]
        if action in ("softmax_temp", "gumbel_softmax") and self.tau is None:
            raise ValueError(
                f"model {self.model!r} needs an explicit temperature (tau)"
            )
        vocab = preset.vocabulary()
        model_config = ModelConfig(
            architecture=architecture,
            d_in=vocab.d_in,
            d_out=vocab.d_out,
            hidden=preset.hidden if self.hidden is None else self.hidden,
            mem_dim=preset.mem_dim if self.mem_dim is None else self.mem_dim,
            memory_slots=(preset.memory_slots if self.memory_slots is None
                          else self.memory_slots),
            action=action,
            tau=self.tau,
            joulin_k=2 if self.joulin_k is None else self.joulin_k,
        )
        defaults = TrainConfig()
        train_config = TrainConfig(
            epochs=defaults.epochs if self.epochs is None else self.epochs,
            learning_rate=(defaults.learning_rate if self.learning_rate is None
                           else self.learning_rate),
            threshold=(defaults.threshold if self.threshold is None
                       else self.threshold),
            clip_norm=(defaults.clip_norm if self.clip_norm is None
                       else self.clip_norm),
            n_runs=len(list(self.seeds)),
        )
        return ResolvedExperiment(self, preset, model_config, train_config,
                                  list(self.seeds))


@dataclass
class ResolvedExperiment:
    spec: ExperimentSpec
    preset: TaskPreset
    model_config: ModelConfig
    train_config: TrainConfig
    seeds: list[int]

    def effective_config(self) -> dict:
        return {
            "task": self.spec.task,
            "model": self.spec.model,
            "seeds": list(self.seeds),
            "data_seed": self.spec.data_seed,
            "train_count": (self.preset.train_count
                            if self.spec.train_count is None
                            else self.spec.train_count),
            "test_count": (self.preset.test_count
                           if self.spec.test_count is None
                           else self.spec.test_count),
            "model_config": asdict(self.model_config),
            "train_config": asdict(self.train_config),
        }

    def fingerprint(self) -> str:
        return config_fingerprint(self.effective_config())

    def datasets(self) -> tuple[Dataset, Dataset]:
        return build_datasets(self.preset, self.spec.train_count,
                              self.spec.test_count, self.spec.data_seed)
