import math

import numpy as np
import pytest

from marnn import training
from marnn.autodiff import RngStream, ShapeError, Tensor
from marnn.languages import GrammarConfig, dyck_vocabulary, reversal_vocabulary, sample_dyck, Dataset, Sample, reversal_targets
from marnn.models import ModelConfig, ModelParams, build_model
from marnn.training import (
    Adam,
    RunReport,
    RunResult,
    TrainConfig,
    TrainingDiverged,
    clip_gradient_norm,
    evaluate,
    losses_to_csv,
    model_label,
    mse_loss,
    predict_sets,
    report_to_csv,
    report_to_text,
    run_experiment,
    sequence_correct,
    train,
)

RNG = np.random.default_rng(31)


def tiny_dyck(count=30, seed=0, length_range=(2, 12), split="train"):
    return sample_dyck(GrammarConfig(2, 0.5, 0.25, length_range, count, seed),
                       split=split)


def tiny_model_config(**kw):
    defaults = dict(architecture="stack_rnn", d_in=4, d_out=4, hidden=4, mem_dim=1)
    defaults.update(kw)
    return ModelConfig(**defaults)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def test_mse_zero_when_predictions_equal_targets():
    y = RNG.uniform(0, 1, (5, 3))
    loss = mse_loss(Tensor(y), y)
    assert loss.item() == 0.0


def test_mse_all_half_against_binary_targets_is_quarter():
    targets = (RNG.uniform(0, 1, (4, 6)) > 0.5).astype(float)
    loss = mse_loss(Tensor(np.full((4, 6), 0.5)), targets)
    assert loss.item() == 0.25


def test_mse_matches_independent_summation():
    pred = RNG.uniform(0, 1, (3, 4))
    target = RNG.uniform(0, 1, (3, 4))
    loss = mse_loss(Tensor(pred), target)
    expected = math.fsum(
        (pred[t, d] - target[t, d]) ** 2 for t in range(3) for d in range(4)
    ) / 12.0
    assert abs(loss.item() - expected) <= 1e-12


def test_mse_accepts_list_of_step_outputs():
    rows = [Tensor(RNG.uniform(0, 1, 4)) for _ in range(3)]
    stacked = np.stack([r.data for r in rows])
    target = RNG.uniform(0, 1, (3, 4))
    assert mse_loss(rows, target).item() == mse_loss(Tensor(stacked), target).item()


def test_mse_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        mse_loss(Tensor(np.zeros((2, 3))), np.zeros((2, 4)))


def test_mse_invariant_under_consistent_output_permutation():
    pred = RNG.uniform(0, 1, (5, 6))
    target = RNG.uniform(0, 1, (5, 6))
    perm = RNG.permutation(6)
    a = mse_loss(Tensor(pred), target).item()
    b = mse_loss(Tensor(pred[:, perm]), target[:, perm]).item()
    assert abs(a - b) <= 1e-15


# ---------------------------------------------------------------------------
# Thresholded set prediction
# ---------------------------------------------------------------------------


def test_predict_sets_fixture():
    sets = predict_sets(np.array([[0.9, 0.1, 0.6, 0.4]]))
    assert sets == [frozenset({0, 2})]
    symbols = predict_sets(np.array([[0.9, 0.1, 0.6, 0.4]]),
                           vocab=dyck_vocabulary(2))
    assert symbols == [frozenset({"(", "["})]


def test_predict_sets_tie_at_threshold_not_predicted():
    sets = predict_sets(np.array([[0.5, 0.5000001]]))
    assert sets == [frozenset({1})]


def test_predict_sets_agrees_with_entrywise_comparison():
    for _ in range(100):
        y = RNG.uniform(0, 1, (6, 5))
        got = predict_sets(y, threshold=0.5)
        brute = [frozenset(j for j in range(5) if y[t, j] > 0.5) for t in range(6)]
        assert got == brute


def test_sequence_correct_basic_and_unit_level_equivalence():
    a = [frozenset({0, 1}), frozenset({2})]
    assert sequence_correct(a, [frozenset({0, 1}), frozenset({2})])
    assert not sequence_correct(a, [frozenset({0, 1}), frozenset({2, 3})])
    with pytest.raises(ValueError):
        sequence_correct(a, a[:1])
    # equivalence: all units on the correct side of 0.5 iff sets equal
    for _ in range(50):
        y = RNG.uniform(0, 1, (4, 5))
        target = (RNG.uniform(0, 1, (4, 5)) > 0.5).astype(float)
        target_sets = [frozenset(np.flatnonzero(row)) for row in
                       (target > 0.5).astype(int)]
        unit_level = bool(np.all((y > 0.5) == (target > 0.5)))
        assert sequence_correct(predict_sets(y), [frozenset(map(int, s))
                                                  for s in target_sets]) == unit_level


def test_targets_pass_their_own_threshold_check():
    ds = tiny_dyck()
    from marnn.languages import encode

    for sample in ds.samples[:10]:
        _, y = encode(sample, ds.vocab)
        sets = predict_sets(y, vocab=ds.vocab)
        assert sequence_correct(sets, list(sample.targets))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_parameters_unchanged():
    params = ModelParams({
        "w": Tensor(RNG.normal(size=(3, 3)), requires_grad=True),
        "b": Tensor(RNG.normal(size=3), requires_grad=True),
    })
    before = {k: t.data.copy() for k, t in params.items()}
    opt = Adam(params, learning_rate=0.1)
    opt.step()
    for k, t in params.items():
        assert np.array_equal(t.data, before[k])
    assert opt.step_count == 1


def test_adam_moves_against_gradient():
    params = ModelParams({"w": Tensor(np.zeros(4), requires_grad=True)})
    params["w"].grad[...] = np.array([1.0, -1.0, 2.0, -2.0])
    opt = Adam(params, learning_rate=0.01)
    opt.step()
    assert np.all(params["w"].data[[0, 2]] < 0)
    assert np.all(params["w"].data[[1, 3]] > 0)


def test_clip_gradient_norm():
    params = ModelParams({"w": Tensor(np.zeros(2), requires_grad=True)})
    params["w"].grad[...] = [3.0, 4.0]
    norm = clip_gradient_norm(params, 1.0)
    assert abs(norm - 5.0) <= 1e-12
    assert np.allclose(params["w"].grad, [0.6, 0.8])
    params["w"].grad[...] = [0.3, 0.4]
    clip_gradient_norm(params, 1.0)
    assert np.allclose(params["w"].grad, [0.3, 0.4])


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def test_single_sample_single_epoch_performs_one_update():
    ds = tiny_dyck(count=1)
    cfg = TrainConfig(epochs=1, model_seed=0, shuffle_seed=0)
    model_config = tiny_model_config()
    params, history = train(model_config, ds, cfg)
    assert len(history) == 1
    fresh = build_model(model_config).init_params(RngStream(0, "init"))
    changed = any(
        not np.array_equal(params[n].data, fresh[n].data) for n in params.names()
    )
    assert changed


def test_overfitting_one_sample_reduces_loss():
    ds = tiny_dyck(count=1, seed=4)
    cfg = TrainConfig(epochs=50, learning_rate=5e-3)
    _, history = train(tiny_model_config(), ds, cfg)
    assert history[-1] < history[0]


def test_training_is_deterministic():
    ds = tiny_dyck(count=15)
    cfg = TrainConfig(epochs=2, model_seed=3, shuffle_seed=3)
    p1, h1 = train(tiny_model_config(), ds, cfg)
    p2, h2 = train(tiny_model_config(), ds, cfg)
    assert h1 == h2
    for name in p1.names():
        assert np.array_equal(p1[name].data, p2[name].data)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(threshold=1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_nonfinite_loss_raises_training_diverged(monkeypatch):
    ds = tiny_dyck(count=3)

    def poisoned(outputs, targets):
        return Tensor(np.nan)

    monkeypatch.setattr(training, "mse_loss", poisoned)
    with pytest.raises(TrainingDiverged):
        train(tiny_model_config(), ds, TrainConfig(epochs=1))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def oracle_reversal_dataset():
    seq = tuple("a#")
    sample = Sample(seq, reversal_targets(seq))
    config = {"task": "reversal", "length_range": [2, 2], "count": 1, "seed": 0,
              "split": "train"}
    return Dataset([sample], reversal_vocabulary(), "train", config)


def oracle_reversal_params(model_config):
    # symbol-keyed lookup: h one-hot on the current input, outputs +-10 logits
    model = build_model(model_config)
    params = model.init_params(RngStream(0))
    for _, t in params.items():
        t.data[...] = 0.0
    params["W_ih"].data[...] = 10.0 * np.eye(4)
    w_y = np.full((4, 4), -10.0)
    w_y[3, 0] = 10.0  # after reading 'a', predict the separator
    w_y[0, 3] = 10.0  # after reading the separator, predict 'a'
    params["W_y"].data[...] = w_y
    return params


def test_evaluate_oracle_model_scores_100():
    model_config = tiny_model_config(architecture="vanilla_rnn")
    ds = oracle_reversal_dataset()
    params = oracle_reversal_params(model_config)
    assert evaluate(model_config, params, ds) == 100.0


def test_evaluate_constant_half_model_scores_0():
    # all-zero weights emit exactly 0.5 everywhere; ties are not predictions
    model_config = tiny_model_config(architecture="vanilla_rnn")
    ds = tiny_dyck(count=10)
    params = build_model(model_config).init_params(RngStream(0))
    for _, t in params.items():
        t.data[...] = 0.0
    assert evaluate(model_config, params, ds) == 0.0


def test_evaluate_is_pure():
    ds = tiny_dyck(count=10)
    model_config = tiny_model_config()
    params, _ = train(model_config, ds, TrainConfig(epochs=1))
    assert evaluate(model_config, params, ds) == evaluate(model_config, params, ds)


def test_evaluate_rejects_empty_dataset():
    ds = tiny_dyck(count=5)
    empty = Dataset([], ds.vocab, "train", dict(ds.config))
    model_config = tiny_model_config()
    params = build_model(model_config).init_params(RngStream(0))
    with pytest.raises(ValueError):
        evaluate(model_config, params, empty)


# ---------------------------------------------------------------------------
# Experiments and reports
# ---------------------------------------------------------------------------


def test_single_seed_report_aggregates_equal_the_run():
    train_ds = tiny_dyck(count=10)
    test_ds = tiny_dyck(count=5, seed=1, split="test")
    report = run_experiment(tiny_model_config(), train_ds, test_ds,
                            TrainConfig(epochs=1), seeds=[0])
    agg = report.aggregates()
    r = report.results[0]
    for stat in ("min", "max", "median", "mean"):
        assert agg["train"][stat] == r.train_accuracy
        assert agg["test"][stat] == r.test_accuracy


def test_report_invariant_to_seed_order():
    train_ds = tiny_dyck(count=8)
    test_ds = tiny_dyck(count=4, seed=1, split="test")
    cfg = TrainConfig(epochs=1)
    mc = tiny_model_config()
    a = run_experiment(mc, train_ds, test_ds, cfg, seeds=[0, 1, 2])
    b = run_experiment(mc, train_ds, test_ds, cfg, seeds=[2, 0, 1])
    assert report_to_csv(a) == report_to_csv(b)
    assert a.fingerprint == b.fingerprint


def test_parallel_workers_match_serial_results():
    train_ds = tiny_dyck(count=8)
    test_ds = tiny_dyck(count=4, seed=1, split="test")
    cfg = TrainConfig(epochs=1)
    mc = tiny_model_config()
    serial = run_experiment(mc, train_ds, test_ds, cfg, seeds=[0, 1], workers=1)
    parallel = run_experiment(mc, train_ds, test_ds, cfg, seeds=[0, 1], workers=2)
    assert report_to_csv(serial) == report_to_csv(parallel)


def test_diverged_seed_recorded_not_raised(monkeypatch):
    train_ds = tiny_dyck(count=5)
    test_ds = tiny_dyck(count=3, seed=1, split="test")

    def explode(model_config, dataset, config):
        raise TrainingDiverged("boom")

    monkeypatch.setattr(training, "train", explode)
    report = run_experiment(tiny_model_config(), train_ds, test_ds,
                            TrainConfig(epochs=1), seeds=[0, 1])
    assert all(r.diverged for r in report.results)
    assert all(r.train_accuracy == 0.0 and r.test_accuracy == 0.0
               for r in report.results)
    assert "boom" in report.results[0].error


def test_aggregate_ordering_invariants():
    results = [RunResult(s, t, e) for s, (t, e) in
               enumerate([(10.0, 5.0), (99.0, 80.0), (50.0, 20.0), (70.0, 60.0)])]
    report = RunReport("m", "f" * 12, results)
    for split in ("train", "test"):
        agg = report.aggregates()[split]
        assert agg["min"] <= agg["median"] <= agg["max"]
        assert agg["min"] <= agg["mean"] <= agg["max"]
    # even-length median is the midpoint average
    assert report.aggregates()["train"]["median"] == (50.0 + 70.0) / 2


def test_report_serialization_layout():
    results = [RunResult(0, 100.0, 99.96), RunResult(1, 100.0, 100.0)]
    report = RunReport("stack_rnn+softmax", "abcdef123456", results)
    csv_text = report_to_csv(report)
    lines = csv_text.strip().splitlines()
    assert lines[0] == "record,seed,train_accuracy,test_accuracy,diverged"
    assert lines[1].startswith("run,0,")
    assert {l.split(",")[0] for l in lines[3:7]} == {"min", "max", "median", "mean"}
    text = report_to_text(report)
    assert "Training Set" in text and "Test Set" in text
    for col in ("Min", "Max", "Med", "Mean"):
        assert col in text
    losses = losses_to_csv(RunReport("m", "f", [RunResult(0, 1, 1, [0.5, 0.25])]))
    assert losses.splitlines()[1] == "0,1,0.5"


def test_model_label():
    assert model_label(tiny_model_config()) == "stack_rnn+softmax"
    assert model_label(tiny_model_config(architecture="vanilla_rnn")) == "vanilla_rnn"
    cfg = tiny_model_config(action="softmax_temp", tau=0.5)
    assert model_label(cfg) == "stack_rnn+softmax_temp(tau=0.5)"
