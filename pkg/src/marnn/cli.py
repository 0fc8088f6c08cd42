"""Command-line surface: generate corpora, run experiment grids, evaluate
checkpoints, and export per-timestep memory traces.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure (every seed diverged).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from .autodiff import Tensor
from .common import canonical_json
from .languages import (
    Dataset,
    GenerationBudgetError,
    encode_input,
    load_dataset,
    max_nesting_depth,
    save_dataset,
    vocab_for_config,
)
from .models import ModelParams, build_model, load_checkpoint, run_sequence, save_checkpoint
from .presets import TASKS, MODEL_VARIANTS, ExperimentSpec, preset_matches_dataset
from .training import (
    RunReport,
    RunResult,
    losses_to_csv,
    report_to_csv,
    report_to_text,
    run_experiment,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; route through UsageError for exit 1
    def error(self, message):
        raise UsageError(message)


CONFIG_KEYS = {
    "task", "model", "seeds", "workers", "tau", "hidden", "mem_dim",
    "mem_slots", "joulin_k", "lr", "epochs", "threshold", "clip_norm",
    "out", "train", "test", "data_seed", "train_count", "test_count",
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except yaml.YAMLError as exc:
        raise UsageError(f"malformed config file {path}: {exc}")
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise UsageError(f"config file {path} must hold a key/value mapping")
    unknown = sorted(set(loaded) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys {unknown}; "
                         f"allowed: {sorted(CONFIG_KEYS)}")
    return loaded


def _merge(args: argparse.Namespace, file_config: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value is None:
        value = file_config.get(key, default)
    return value


def _parse_seeds(raw) -> list[int]:
    if raw is None:
        return [0]
    if isinstance(raw, int):
        return list(range(raw))
    if isinstance(raw, (list, tuple)):
        return [int(s) for s in raw]
    text = str(raw)
    try:
        if "," in text:
            return [int(p) for p in text.split(",") if p != ""]
        return list(range(int(text)))
    except ValueError:
        raise UsageError(f"cannot parse seeds {raw!r}: use a count or a "
                         f"comma-separated list")


def _parse_clip(raw):
    if raw is None:
        return None  # keep TrainConfig default
    if isinstance(raw, str) and raw.lower() in ("none", "off"):
        return "off"
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise UsageError(f"cannot parse clip-norm {raw!r}")


def _load_split(path: str) -> Dataset:
    try:
        return load_dataset(path)
    except OSError as exc:
        raise DataError(f"cannot read dataset: {exc}")
    except ValueError as exc:
        raise DataError(str(exc))


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def _depth_measure(sample, config) -> int:
    if config["task"] == "dyck":
        return max_nesting_depth(sample.input, config["n_pairs"])
    return len(sample) // 2  # symbols the memory must hold


def _print_histograms(datasets: list[Dataset]) -> None:
    print("split,measure,value,count")
    for ds in datasets:
        for measure, fn in (("length", len),
                            ("depth", lambda s: _depth_measure(s, ds.config))):
            counts: dict[int, int] = {}
            for s in ds.samples:
                v = fn(s)
                counts[v] = counts.get(v, 0) + 1
            for value in sorted(counts):
                print(f"{ds.split},{measure},{value},{counts[value]}")


def cmd_generate(args) -> int:
    file_config = _load_config_file(args.config)
    task = _merge(args, file_config, "task")
    if task is None:
        raise UsageError("generate needs --task")
    spec = ExperimentSpec(
        task=task,
        model="stack_rnn_softmax",  # irrelevant for generation
        train_count=_merge(args, file_config, "train_count"),
        test_count=_merge(args, file_config, "test_count"),
        data_seed=int(_merge(args, file_config, "data_seed", 0)),
    )
    try:
        resolved = spec.resolve()
    except ValueError as exc:
        raise UsageError(str(exc))
    out_dir = Path(_merge(args, file_config, "out") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        train_ds, test_ds = resolved.datasets()
    except GenerationBudgetError as exc:
        raise DataError(str(exc))
    try:
        save_dataset(train_ds, out_dir / "train.tsv")
        save_dataset(test_ds, out_dir / "test.tsv")
    except OSError as exc:
        raise DataError(f"cannot write dataset under {out_dir}: {exc}")
    _print_histograms([train_ds, test_ds])
    print(f"wrote {out_dir / 'train.tsv'} ({len(train_ds)} samples) and "
          f"{out_dir / 'test.tsv'} ({len(test_ds)} samples)", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _build_spec(args, file_config) -> ExperimentSpec:
    task = _merge(args, file_config, "task")
    model = _merge(args, file_config, "model")
    if task is None or model is None:
        raise UsageError("train needs --task and --model")
    clip = _parse_clip(_merge(args, file_config, "clip_norm"))

    def opt_float(key):
        v = _merge(args, file_config, key)
        return None if v is None else float(v)

    def opt_int(key):
        v = _merge(args, file_config, key)
        return None if v is None else int(v)

    return ExperimentSpec(
        task=task,
        model=model,
        seeds=_parse_seeds(_merge(args, file_config, "seeds")),
        hidden=opt_int("hidden"),
        mem_dim=opt_int("mem_dim"),
        memory_slots=opt_int("mem_slots"),
        tau=opt_float("tau"),
        joulin_k=opt_int("joulin_k"),
        train_count=opt_int("train_count"),
        test_count=opt_int("test_count"),
        data_seed=int(_merge(args, file_config, "data_seed", 0)),
        epochs=opt_int("epochs"),
        learning_rate=opt_float("lr"),
        threshold=opt_float("threshold"),
        clip_norm=None if clip == "off" else clip,
        workers=int(_merge(args, file_config, "workers", 1)),
    )


def cmd_train(args) -> int:
    file_config = _load_config_file(args.config)
    spec = _build_spec(args, file_config)
    train_path = args.train if args.train is not None else file_config.get("train")
    test_path = args.test if args.test is not None else file_config.get("test")
    if train_path is None or test_path is None:
        raise UsageError("train needs --train and --test dataset paths")
    try:
        resolved = spec.resolve()
    except ValueError as exc:
        raise UsageError(str(exc))

    train_ds = _load_split(train_path)
    test_ds = _load_split(test_path)
    try:
        preset_matches_dataset(resolved.preset, train_ds.config)
        preset_matches_dataset(resolved.preset, test_ds.config)
    except ValueError as exc:
        raise DataError(str(exc))
    if train_ds.vocab != resolved.preset.vocabulary():
        raise DataError("dataset vocabulary does not match the task preset")

    out_dir = Path(_merge(args, file_config, "out") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "checkpoints").mkdir(exist_ok=True)

    effective = resolved.effective_config()
    effective["fingerprint"] = resolved.fingerprint()
    effective["datasets"] = {"train": train_ds.config, "test": test_ds.config}
    (out_dir / "config.json").write_text(
        canonical_json(effective) + "\n", encoding="utf-8")

    report = run_experiment(resolved.model_config, train_ds, test_ds,
                            resolved.train_config, seeds=resolved.seeds,
                            workers=spec.workers)

    (out_dir / "report.csv").write_text(report_to_csv(report), encoding="utf-8")
    (out_dir / "report.txt").write_text(report_to_text(report), encoding="utf-8")
    (out_dir / "losses.csv").write_text(losses_to_csv(report), encoding="utf-8")
    for result in report.results:
        if result.params_data is None:
            continue
        params = ModelParams({
            name: Tensor(data, requires_grad=True)
            for name, data in result.params_data.items()
        })
        save_checkpoint(
            out_dir / "checkpoints" / f"seed{result.seed}.json",
            resolved.model_config, params,
            extra={
                "seed": result.seed,
                "data_config": train_ds.config,
                "train_accuracy": result.train_accuracy,
                "test_accuracy": result.test_accuracy,
                "experiment_fingerprint": resolved.fingerprint(),
            },
        )
    print(report_to_text(report))
    if all(r.diverged for r in report.results):
        raise NumericError("every seed diverged; see losses.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _load_checkpoint_file(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}")
    except (ValueError, KeyError) as exc:
        raise DataError(f"malformed checkpoint {path}: {exc}")


def cmd_eval(args) -> int:
    from .training import evaluate

    config, params, extra = _load_checkpoint_file(args.checkpoint)
    dataset = _load_split(args.data)
    if not dataset.samples:
        raise DataError(f"{args.data} holds no samples")
    data_config = extra.get("data_config")
    if data_config is not None:
        ckpt_vocab = vocab_for_config(data_config)
        if ckpt_vocab != dataset.vocab:
            raise DataError(
                "vocabulary mismatch:\n"
                f"  checkpoint: in={ckpt_vocab.input_symbols} "
                f"out={ckpt_vocab.output_symbols}\n"
                f"  dataset:    in={dataset.vocab.input_symbols} "
                f"out={dataset.vocab.output_symbols}"
            )
    elif (config.d_in, config.d_out) != (dataset.vocab.d_in, dataset.vocab.d_out):
        raise DataError(
            f"checkpoint expects {config.d_in}/{config.d_out} symbol dims, "
            f"dataset has {dataset.vocab.d_in}/{dataset.vocab.d_out}"
        )
    accuracy = evaluate(config, params, dataset, threshold=args.threshold)
    line = f"accuracy,{accuracy!r}"
    print(line)
    if args.out:
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------


def cmd_trace(args) -> int:
    config, params, extra = _load_checkpoint_file(args.checkpoint)
    if config.architecture in ("vanilla_rnn", "vanilla_lstm"):
        raise UsageError(
            f"{config.architecture} has no external memory to trace"
        )
    data_config = extra.get("data_config")
    if data_config is None:
        raise UsageError("checkpoint carries no data_config; cannot map symbols")
    vocab = vocab_for_config(data_config)
    symbols = tuple(args.input)
    if not symbols:
        raise UsageError("--input must be a non-empty symbol string")
    try:
        x = encode_input(symbols, vocab)
    except ValueError as exc:
        raise DataError(str(exc))
    rows = -1 if args.full_snapshot else args.snapshot_rows
    model = build_model(config)
    _, traces = run_sequence(model, params, x, rng=None, snapshot_rows=rows)

    mem_dim = config.mem_dim
    n_rows = max(t.snapshot.shape[0] for t in traces)
    op_names = list(traces[0].op_names)
    header = (["step", "input"] + op_names
              + [f"insert_{d}" for d in range(mem_dim)]
              + [f"mem{r}_{d}" for r in range(n_rows) for d in range(mem_dim)])
    lines = [",".join(header)]
    for t, trace in enumerate(traces):
        snap = np.zeros((n_rows, mem_dim))
        snap[: trace.snapshot.shape[0]] = trace.snapshot
        cells = ([str(t + 1), symbols[t]]
                 + [repr(float(w)) for w in trace.action_weights]
                 + [repr(float(v)) for v in trace.inserted]
                 + [repr(float(v)) for v in snap.ravel()])
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    try:
        text = Path(args.results).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read results: {exc}")
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("record,seed"):
        raise DataError(f"{args.results} is not a report CSV")
    model = "unknown"
    fingerprint = ""
    results = []
    for line in lines[1:]:
        if line.startswith("#"):
            for part in line[1:].split():
                if part.startswith("model="):
                    model = part[len("model="):]
                elif part.startswith("fingerprint="):
                    fingerprint = part[len("fingerprint="):]
            continue
        fields = line.split(",")
        if fields[0] != "run":
            continue
        results.append(RunResult(
            seed=int(fields[1]),
            train_accuracy=float(fields[2]),
            test_accuracy=float(fields[3]),
            diverged=fields[4] == "True",
        ))
    if not results:
        raise DataError(f"{args.results} holds no per-seed records")
    print(report_to_text(RunReport(model, fingerprint, results)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="marnn",
                     description="memory-augmented RNNs on formal-language tasks")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="YAML key/value experiment config; "
                                        "flags override file values")

    g = sub.add_parser("generate", help="write train/test corpora for a task")
    add_common(g)
    g.add_argument("--task", choices=sorted(TASKS))
    g.add_argument("--out")
    g.add_argument("--train-count", dest="train_count", type=int)
    g.add_argument("--test-count", dest="test_count", type=int)
    g.add_argument("--data-seed", dest="data_seed", type=int)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="run a multi-seed experiment")
    add_common(t)
    t.add_argument("--task", choices=sorted(TASKS))
    t.add_argument("--model", choices=sorted(MODEL_VARIANTS))
    t.add_argument("--train", help="training dataset file")
    t.add_argument("--test", help="test dataset file")
    t.add_argument("--out")
    t.add_argument("--seeds", help="count (e.g. 10) or comma list (e.g. 0,3,7)")
    t.add_argument("--workers", type=int)
    t.add_argument("--tau", type=float)
    t.add_argument("--hidden", type=int)
    t.add_argument("--mem-dim", dest="mem_dim", type=int)
    t.add_argument("--mem-slots", dest="mem_slots", type=int)
    t.add_argument("--joulin-k", dest="joulin_k", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--threshold", type=float)
    t.add_argument("--clip-norm", dest="clip_norm")
    t.add_argument("--train-count", dest="train_count", type=int)
    t.add_argument("--test-count", dest="test_count", type=int)
    t.add_argument("--data-seed", dest="data_seed", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="sequence accuracy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    tr = sub.add_parser("trace", help="per-timestep memory trace as CSV")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--input", required=True, help="symbol string, e.g. '([])'")
    tr.add_argument("--out")
    tr.add_argument("--snapshot-rows", dest="snapshot_rows", type=int, default=8)
    tr.add_argument("--full-snapshot", dest="full_snapshot", action="store_true")
    tr.set_defaults(fn=cmd_trace)

    r = sub.add_parser("report", help="re-render a report CSV as a text table")
    r.add_argument("--results", required=True)
    r.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GenerationBudgetError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
