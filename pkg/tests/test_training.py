"""Trainer contract tests: optimizer math against hand-computed traces,
timestep sampling statistics, descent behaviour, and fit() bookkeeping."""

import json
import math

import numpy as np
import pytest
import scipy.stats

from diffrank import autodiff as ad
from diffrank.autodiff import Tensor
from diffrank.errors import ConfigError, IncompatibilityError, NumericError
from diffrank.letor import Dataset, Document, QueryGroup
from diffrank.losses import LossSpec, ranking_loss
from diffrank.network import DenoiseModel, ModelConfig, load_checkpoint
from diffrank.schedule import ScheduleSpec, build_schedule, q_sample
from diffrank.training import (
    AdamW,
    TrainConfig,
    fit,
    init_state,
    sample_timestep,
    train_step,
)

SPEC = ScheduleSpec(kind="linear", timesteps=8)


def small_model_config(**overrides) -> ModelConfig:
    base = dict(
        k=4,
        d_model=8,
        heads=2,
        blocks=1,
        denoise_layers=2,
        dropout_p=0.0,
        use_attention=True,
    )
    base.update(overrides)
    return ModelConfig(**base)


def small_train_config(**overrides) -> TrainConfig:
    base = dict(
        model=small_model_config(),
        schedule=SPEC,
        loss=LossSpec(name="mse"),
        epochs=6,
        batch_size=3,
        lr=1e-3,
        weight_decay=0.01,
        eval_every=2,
        eval_reverse_steps=2,
        seed=5,
        dtype="float64",
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_dataset(seed=0, n_queries=8, n_docs=6, k=4) -> Dataset:
    rng = np.random.default_rng(seed)
    groups = []
    idx = 0
    for q in range(1, n_queries + 1):
        feats = rng.normal(size=(n_docs, k))
        ranks = np.argsort(np.argsort(feats[:, 0]))
        labels = (ranks * 5) // n_docs
        docs = []
        for d in range(n_docs):
            docs.append(
                Document(
                    qid=q, label=int(labels[d]), features=feats[d], doc_index=idx
                )
            )
            idx += 1
        groups.append(QueryGroup(qid=q, docs=docs))
    return Dataset(groups=groups, k=k)


# ---------------------------------------------------------------------------
# timestep sampling


def test_timestep_is_always_one_when_horizon_is_one():
    rng = np.random.default_rng(0)
    assert all(sample_timestep(rng, 1) == 1 for _ in range(100))


def test_timestep_bounds():
    rng = np.random.default_rng(1)
    draws = np.array([sample_timestep(rng, 10) for _ in range(100_000)])
    assert draws.min() >= 1 and draws.max() <= 10


def test_timestep_uniformity_chi_squared():
    rng = np.random.default_rng(2)
    draws = np.array([sample_timestep(rng, 10) for _ in range(100_000)])
    counts = np.bincount(draws, minlength=11)[1:]
    _, p = scipy.stats.chisquare(counts)
    assert p > 0.01, f"chi-squared uniformity test failed, p = {p}"


def test_timestep_rejects_bad_horizon():
    with pytest.raises(ConfigError):
        sample_timestep(np.random.default_rng(0), 0)


# ---------------------------------------------------------------------------
# AdamW against hand-computed traces


def _hand_adamw_trace(p0, grads, lr, b1, b2, eps, wd):
    """Straight transcription of the update rule with plain floats."""
    p = p0
    m = 0.0
    v = 0.0
    out = []
    for step, g in enumerate(grads, start=1):
        p = p * (1.0 - lr * wd)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**step)
        vhat = v / (1.0 - b2**step)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out


def test_adamw_matches_hand_trace_on_two_parameters():
    lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
    w = Tensor(np.array([[1.0]]), requires_grad=True)
    b = Tensor(np.array([[2.0]]), requires_grad=True)
    opt = AdamW({"w": w, "b": b}, lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
    grads_w = [0.1, -0.2, 0.3]
    grads_b = [-0.5, 0.4, -0.1]
    expected_w = _hand_adamw_trace(1.0, grads_w, lr, b1, b2, eps, wd)
    expected_b = _hand_adamw_trace(2.0, grads_b, lr, b1, b2, eps, wd)
    for step in range(3):
        w.grad = np.array([[grads_w[step]]])
        b.grad = np.array([[grads_b[step]]])
        opt.step()
        assert w.data[0, 0] == pytest.approx(expected_w[step], abs=1e-14)
        assert b.data[0, 0] == pytest.approx(expected_b[step], abs=1e-14)


def test_zero_weight_decay_is_plain_adam():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8

    def hand_adam(p0, grads):
        p, m, v = p0, 0.0, 0.0
        for step, g in enumerate(grads, start=1):
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            p -= lr * (m / (1.0 - b1**step)) / (math.sqrt(v / (1.0 - b2**step)) + eps)
        return p

    w = Tensor(np.array([[0.7]]), requires_grad=True)
    opt = AdamW({"w": w}, lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=0.0)
    grads = [0.3, -0.8, 0.05, 0.2]
    for g in grads:
        w.grad = np.array([[g]])
        opt.step()
    assert w.data[0, 0] == pytest.approx(hand_adam(0.7, grads), abs=1e-14)


def test_zero_learning_rate_leaves_parameters_bit_identical():
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    before = w.data.copy()
    opt = AdamW({"w": w}, lr=0.0, weight_decay=0.01)
    w.grad = rng.normal(size=(4, 3))
    opt.step()
    np.testing.assert_array_equal(w.data, before)


def test_moment_tensors_match_parameter_shapes():
    model = DenoiseModel(small_model_config(), SPEC, dtype="float64", seed=0)
    opt = AdamW(model.params, lr=1e-3)
    for name, p in model.params.items():
        assert opt.m[name].shape == p.data.shape
        assert opt.v[name].shape == p.data.shape


def test_gradient_shape_mismatch_is_rejected():
    w = Tensor(np.zeros((2, 2)), requires_grad=True)
    opt = AdamW({"w": w}, lr=1e-3)
    w.grad = np.zeros((2, 3))
    with pytest.raises(Exception, match="shape"):
        opt.step()


# ---------------------------------------------------------------------------
# descent property


def test_single_step_descends_on_fixed_noise():
    table = build_schedule(SPEC)
    spec = LossSpec(name="mse")
    successes = 0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        model = DenoiseModel(small_model_config(), SPEC, dtype="float64", seed=trial)
        feats = rng.normal(size=(5, 4))
        labels = rng.integers(0, 5, size=5).astype(np.float64)
        if labels.max() == 0:
            labels[0] = 3.0
        t = int(rng.integers(1, 9))
        eps = rng.standard_normal(5)
        y_t = q_sample(labels, t, eps, table)

        def loss_value():
            pred = model.predict_y0(feats, y_t, t=t)
            return ranking_loss(spec, pred, labels)

        first = loss_value()
        before = float(first.data)
        model.zero_grads()
        first.backward()
        AdamW(model.params, lr=1e-3, weight_decay=0.0).step()
        after = float(loss_value().data)
        if after < before:
            successes += 1
    assert successes >= 18, f"descent held in only {successes}/20 trials"


# ---------------------------------------------------------------------------
# train_step


def test_train_step_zero_lr_is_a_null_update():
    ds = tiny_dataset()
    config = small_train_config()
    state = init_state(config)
    state.optimizer.lr = 0.0
    before = {n: p.data.copy() for n, p in state.model.params.items()}
    loss = train_step(ds.groups[:3], state, config)
    assert math.isfinite(loss)
    for name, p in state.model.params.items():
        np.testing.assert_array_equal(p.data, before[name])


def test_train_step_empty_batch_rejected():
    config = small_train_config()
    state = init_state(config)
    with pytest.raises(ConfigError):
        train_step([], state, config)


def test_train_step_reports_offending_query_on_nan():
    ds = tiny_dataset()
    config = small_train_config()
    state = init_state(config)
    state.model.params["proj.w"].data[:] = np.nan
    group = ds.groups[2]
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericError, match=f"query id {group.qid}"):
            train_step([group], state, config)


def test_truncation_cap_matches_pretruncated_data():
    ds = tiny_dataset(n_docs=6)
    capped_config = small_train_config(max_list_size=4)
    full_config = small_train_config(max_list_size=512)

    truncated_groups = [
        QueryGroup(qid=g.qid, docs=g.docs[:4]) for g in ds.groups
    ]

    state_a = init_state(capped_config)
    loss_a = train_step(ds.groups[:2], state_a, capped_config)
    state_b = init_state(full_config)
    loss_b = train_step(truncated_groups[:2], state_b, full_config)
    assert loss_a == loss_b
    for name in state_a.model.params:
        np.testing.assert_array_equal(
            state_a.model.params[name].data, state_b.model.params[name].data
        )


def test_train_step_loss_is_mean_over_queries():
    ds = tiny_dataset()
    config = small_train_config()
    # replaying the same rng stream manually must reproduce the batch loss
    state = init_state(config)
    batch = ds.groups[:3]
    loss = train_step(batch, state, config)

    replay = init_state(config)
    table = replay.table
    per_query = []
    for group in batch:
        labels = group.labels()
        t = sample_timestep(replay.rng, table.timesteps)
        eps = replay.rng.standard_normal(labels.size)
        y_t = q_sample(labels, t, eps, table)
        pred = replay.model.predict_y0(
            group.feature_matrix(), y_t, t=t, training=True, rng=replay.rng
        )
        per_query.append(float(ranking_loss(config.loss, pred, labels).data))
    assert loss == pytest.approx(np.mean(per_query), abs=1e-12)


# ---------------------------------------------------------------------------
# fit


def test_config_validation():
    with pytest.raises(ConfigError):
        small_train_config(epochs=0)
    with pytest.raises(ConfigError):
        small_train_config(batch_size=0)
    with pytest.raises(ConfigError):
        small_train_config(lr=0.0)
    with pytest.raises(ConfigError):
        small_train_config(eval_every=0)
    with pytest.raises(ConfigError):
        small_train_config(dtype="float16")
    with pytest.raises(ConfigError):
        small_train_config(weight_decay=-0.1)
    with pytest.raises(ConfigError):
        small_train_config(beta1=1.0)


def test_fit_bookkeeping(tmp_path):
    train_ds = tiny_dataset(seed=0)
    valid_ds = tiny_dataset(seed=1, n_queries=4)
    config = small_train_config()
    result = fit(train_ds, valid_ds, config, str(tmp_path / "run"))

    assert len(result.log) == config.epochs
    for entry in result.log:
        assert math.isfinite(entry["loss"])
        if entry["epoch"] % config.eval_every == 0 or entry["epoch"] == config.epochs:
            assert "valid_ndcg10" in entry
        else:
            assert "valid_ndcg10" not in entry
    evals = [e["valid_ndcg10"] for e in result.log if "valid_ndcg10" in e]
    assert result.best_metric == max(evals)

    loaded = load_checkpoint(result.best_path)
    assert loaded.config == config.model
    fresh = DenoiseModel(config.model, SPEC, dtype="float64", seed=0)
    assert loaded.num_parameters() == fresh.num_parameters()

    with open(result.log_path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh]
    assert lines == result.log


def test_fit_is_deterministic(tmp_path):
    train_ds = tiny_dataset(seed=0)
    valid_ds = tiny_dataset(seed=1, n_queries=4)
    config = small_train_config()
    a = fit(train_ds, valid_ds, config, str(tmp_path / "a"))
    b = fit(train_ds, valid_ds, config, str(tmp_path / "b"))
    assert a.log == b.log
    with open(a.log_path, "rb") as fa, open(b.log_path, "rb") as fb:
        assert fa.read() == fb.read()
    with open(a.best_path, "rb") as fa, open(b.best_path, "rb") as fb:
        assert fa.read() == fb.read()


def test_fit_rejects_feature_width_mismatch(tmp_path):
    config = small_train_config()
    with pytest.raises(IncompatibilityError):
        fit(tiny_dataset(k=5), tiny_dataset(k=5), config, str(tmp_path))
    with pytest.raises(IncompatibilityError):
        fit(tiny_dataset(k=4), tiny_dataset(k=5), config, str(tmp_path))


def test_fit_float32_smoke(tmp_path):
    config = small_train_config(dtype="float32", epochs=1, eval_every=1)
    result = fit(tiny_dataset(), tiny_dataset(seed=2, n_queries=2), config, str(tmp_path))
    assert math.isfinite(result.log[0]["loss"])
    loaded = load_checkpoint(result.best_path)
    assert loaded.dtype == np.dtype("float32")


def test_fit_clamps_eval_steps_to_horizon(tmp_path):
    config = small_train_config(epochs=1, eval_reverse_steps=50)
    result = fit(tiny_dataset(), tiny_dataset(seed=2, n_queries=2), config, str(tmp_path))
    assert "valid_ndcg10" in result.log[0]


def test_loss_trajectory_decreases_on_easy_data(tmp_path):
    # labels are a deterministic function of one feature; a brief run
    # must reduce the training loss
    train_ds = tiny_dataset(seed=3)
    config = small_train_config(epochs=10, lr=1e-2, eval_every=10)
    result = fit(train_ds, train_ds, config, str(tmp_path))
    first = result.log[0]["loss"]
    last = result.log[-1]["loss"]
    assert last < first
