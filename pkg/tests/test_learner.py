import math

import numpy as np
import pytest

from mmorient import dataio, learner
from mmorient.cmrl import GraphThresholds
from mmorient.errors import DataError
from mmorient.numerics import gelu, softmax_rows
from mmorient.taskfeat import task_feature_matrix

from util import bundles_equal

DESK = dict(l_txt=6, l_img=5, token_width=8, region_width=12, joint_width=8,
            toxicity_width=8)


def desk_bundle(n=8, seed=3, separation=2.0):
    return dataio.generate_synthetic(
        dataio.SynthConfig(n=n, cluster_separation=separation, **DESK), seed=seed)


def desk_config(**kw):
    base = dict(epochs=2, batch_size=4, beta=5, channels=8, mlp_sizes=(16, 8), seed=3)
    base.update(kw)
    return learner.TrainConfig(**base)


def make_model(bundle, config):
    rng = np.random.default_rng(config.seed)
    dims = learner.ModelDims.from_bundle(bundle, config)
    return learner.init_params(dims, rng), dims


SUM_LN_CLASSES = math.log(3) + 3 * math.log(4) + math.log(2)


# ---------------------------------------------------------------------------
# fuse

def test_fuse_zero_blocks():
    m = learner.fuse(np.zeros((3, 4)), np.zeros((3, 5)), np.zeros((3, 2)))
    assert m.shape == (3, 11)
    assert np.all(m == 0.0)


def test_fuse_desk_width():
    bundle = desk_bundle()
    config = desk_config()
    params, dims = make_model(bundle, config)
    assert dims.z_dim == 40
    assert dims.h_dim == 32
    assert dims.t_dim == 23
    assert dims.m_dim == 95


def test_fuse_slicing_round_trip():
    rng = np.random.default_rng(5)
    z, h, t = rng.normal(size=(3, 6)), rng.normal(size=(3, 4)), rng.normal(size=(3, 5))
    m = learner.fuse(z, h, t)
    layout = learner.FuseLayout(z_dim=6, h_dim=4, t_dim=5)
    assert np.array_equal(m[:, layout.z_slice], z)
    assert np.array_equal(m[:, layout.h_slice], h)
    assert np.array_equal(m[:, layout.t_slice], t)


def test_fuse_rejects_row_mismatch():
    with pytest.raises(ValueError):
        learner.fuse(np.zeros((3, 4)), np.zeros((2, 5)), np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# forward and loss

def test_zero_heads_give_uniform_predictions():
    bundle = desk_bundle()
    config = desk_config()
    params, _ = make_model(bundle, config)
    taskfeat = task_feature_matrix(bundle)
    batch = learner.batch_from_bundle(bundle, np.arange(4), taskfeat)
    state = learner.pipeline_forward(params, batch, config.thresholds)
    for spec in bundle.task_specs:
        assert np.allclose(state.probs[spec.name], 1.0 / spec.class_count, atol=1e-15)
        assert np.abs(state.probs[spec.name].sum(axis=1) - 1.0).max() < 1e-12


def test_forward_matches_layer_by_layer_recomputation():
    bundle = desk_bundle()
    config = desk_config()
    params, _ = make_model(bundle, config)
    rng = np.random.default_rng(9)
    for w, b in params.mlp:
        w += 0.1 * rng.standard_normal(w.shape)
    for w, b in params.heads.values():
        w += 0.1 * rng.standard_normal(w.shape)
    m = rng.standard_normal((5, params.mlp[0][0].shape[0]))
    hidden, probs, _, _ = learner.model_forward(m, params)
    ref = m
    for w, b in params.mlp:
        ref = gelu(ref @ w + b)
    assert np.abs(hidden - ref).max() < 1e-12
    for task, (w, b) in params.heads.items():
        assert np.abs(probs[task] - softmax_rows(ref @ w + b)).max() < 1e-12


def test_loss_zero_for_perfect_onehot():
    specs = (dataio.TaskSpec("a", 2),)
    probs = {"a": np.array([[1.0, 0.0], [0.0, 1.0]])}
    labels = np.array([[0], [1]])
    assert learner.multitask_loss(probs, labels, specs) == 0.0


def test_loss_uniform_matches_sum_of_log_class_counts():
    specs = dataio.DEFAULT_TASKS
    probs = {s.name: np.full((7, s.class_count), 1.0 / s.class_count) for s in specs}
    labels = np.zeros((7, 5), dtype=np.int64)
    loss = learner.multitask_loss(probs, labels, specs)
    assert abs(loss - SUM_LN_CLASSES) < 1e-4
    assert abs(loss - 5.9506) < 1e-3


def test_loss_additive_across_tasks():
    rng = np.random.default_rng(12)
    specs = dataio.DEFAULT_TASKS
    probs = {s.name: softmax_rows(rng.normal(size=(6, s.class_count))) for s in specs}
    labels = np.stack([rng.integers(0, s.class_count, 6) for s in specs], axis=1)
    total = learner.multitask_loss(probs, labels, specs)
    parts = 0.0
    for t, spec in enumerate(specs):
        solo = learner.multitask_loss({spec.name: probs[spec.name]},
                                      labels[:, t:t + 1], (spec,))
        parts += solo
    assert abs(total - parts) < 1e-12


def test_loss_mask_removes_exactly_that_tasks_term():
    rng = np.random.default_rng(13)
    specs = dataio.DEFAULT_TASKS
    probs = {s.name: softmax_rows(rng.normal(size=(5, s.class_count))) for s in specs}
    labels = np.stack([rng.integers(0, s.class_count, 5) for s in specs], axis=1)
    full = learner.multitask_loss(probs, labels, specs)
    masked = labels.copy()
    masked[:, 2] = dataio.ABSENT
    partial = learner.multitask_loss(probs, masked, specs)
    solo = learner.multitask_loss({specs[2].name: probs[specs[2].name]},
                                  labels[:, 2:3], (specs[2],))
    assert abs((full - partial) - solo) < 1e-12


def test_initial_loss_identity_any_upstream_seed():
    bundle = desk_bundle(n=6, seed=11)
    taskfeat = task_feature_matrix(bundle)
    for seed in (0, 1, 99):
        config = desk_config(seed=seed)
        params, _ = make_model(bundle, config)
        batch = learner.batch_from_bundle(bundle, np.arange(6), taskfeat)
        loss = learner.pipeline_loss(params, batch, config.thresholds, bundle.task_specs)
        assert abs(loss - SUM_LN_CLASSES) < 1e-9


def test_head_logit_shift_invariance():
    bundle = desk_bundle()
    config = desk_config()
    params, _ = make_model(bundle, config)
    rng = np.random.default_rng(14)
    for w, b in params.heads.values():
        w += 0.3 * rng.standard_normal(w.shape)
    taskfeat = task_feature_matrix(bundle)
    batch = learner.batch_from_bundle(bundle, np.arange(6), taskfeat)
    before = learner.pipeline_forward(params, batch, config.thresholds)
    w, b = params.heads["humor"]
    b += 7.5  # constant shift of one head's logits
    after = learner.pipeline_forward(params, batch, config.thresholds)
    assert np.abs(after.probs["humor"] - before.probs["humor"]).max() < 1e-12
    assert np.array_equal(np.argmax(after.probs["humor"], axis=1),
                          np.argmax(before.probs["humor"], axis=1))


# ---------------------------------------------------------------------------
# steps and training

def test_zero_learning_rate_leaves_params_unchanged():
    bundle = desk_bundle()
    config = desk_config()
    params, _ = make_model(bundle, config)
    snapshot = {name: arr.copy() for name, arr in params.named_tensors()}
    taskfeat = task_feature_matrix(bundle)
    batch = learner.batch_from_bundle(bundle, np.arange(4), taskfeat)
    loss, _ = learner.backward_and_step(params, batch, bundle.task_specs,
                                        config.thresholds, lr=0.0)
    assert abs(loss - SUM_LN_CLASSES) < 1e-9
    for name, arr in params.named_tensors():
        assert np.array_equal(arr, snapshot[name])


def test_single_head_matches_softmax_regression_gradient():
    """Three-sample case with frozen upstream: head gradient has the classic
    (probs - onehot)/n closed form."""
    bundle = desk_bundle(n=8, seed=21)
    config = desk_config(batch_size=3)
    params, _ = make_model(bundle, config)
    taskfeat = task_feature_matrix(bundle)
    batch = learner.batch_from_bundle(bundle, np.arange(3), taskfeat)
    state = learner.pipeline_forward(params, batch, config.thresholds)
    grads = learner.pipeline_backward(state, params, batch, bundle.task_specs)
    spec = bundle.task_specs[0]
    col = batch.labels[:, 0]
    probs = state.probs[spec.name]
    delta = probs.copy()
    delta[np.arange(3), col] -= 1.0
    delta /= 3.0
    assert np.abs(grads[f"head.{spec.name}.w"] - state.hidden.T @ delta).max() < 1e-12
    assert np.abs(grads[f"head.{spec.name}.b"] - delta.sum(axis=0)).max() < 1e-12


def test_masked_rows_get_no_head_gradient():
    bundle = desk_bundle(n=4, seed=22)
    rec = bundle.records[1]
    del rec.labels["sarcasm"]
    bundle = dataio.DatasetBundle(
        task_specs=bundle.task_specs, records=bundle.records,
        joint_txt=bundle.joint_txt, joint_img=bundle.joint_img,
        token_feats=bundle.token_feats, region_feats=bundle.region_feats,
        toxicity=bundle.toxicity, sentiment_codes=bundle.sentiment_codes)
    config = desk_config()
    params, _ = make_model(bundle, config)
    taskfeat = task_feature_matrix(bundle)
    batch = learner.batch_from_bundle(bundle, np.arange(4), taskfeat)
    state = learner.pipeline_forward(params, batch, config.thresholds)
    grads = learner.pipeline_backward(state, params, batch, bundle.task_specs)
    # recompute with the masked row dropped: the sarcasm head must agree up to the 1/n scale
    col = batch.labels[:, 2]
    present = col != dataio.ABSENT
    probs = state.probs["sarcasm"][present]
    delta = probs.copy()
    delta[np.arange(3), col[present]] -= 1.0
    delta /= 4.0
    assert np.abs(grads["head.sarcasm.w"] - state.hidden[present].T @ delta).max() < 1e-12


def test_end_to_end_gradcheck_small():
    bundle = desk_bundle(n=4, seed=23)
    config = desk_config(batch_size=4)
    reports = learner.run_grad_check(bundle, config, coords_per_tensor=6, seed=2)
    names = [r.name for r in reports]
    assert len(names) == len(set(names)) == 34
    worst = max(r.max_rel_error for r in reports)
    assert worst <= 1e-4, f"worst {worst}"


def test_gradcheck_detects_corrupted_backward(monkeypatch):
    from mmorient import hima as hima_mod

    original = hima_mod.hima_backward

    def corrupted(djoint, cache, txt_params, img_params):
        d_txt, d_img = original(djoint, cache, txt_params, img_params)
        d_txt.w1 = d_txt.w1 * 1.05  # deliberately wrong scale
        return d_txt, d_img

    monkeypatch.setattr(learner, "hima_backward", corrupted)
    bundle = desk_bundle(n=4, seed=24)
    config = desk_config(batch_size=4)
    reports = learner.run_grad_check(bundle, config, coords_per_tensor=8, seed=2)
    bad = {r.name for r in reports if r.max_rel_error > 1e-4}
    assert "hima.txt.w1" in bad


def test_train_zero_epochs_returns_init():
    bundle = desk_bundle()
    config = desk_config(epochs=0)
    params, history = learner.train(bundle, config)
    init, _ = make_model(bundle, config)
    assert history == []
    for (name, arr), (_, ref) in zip(params.named_tensors(), init.named_tensors()):
        assert np.array_equal(arr, ref), name


def test_train_deterministic_per_seed():
    bundle = desk_bundle(n=16, separation=4.0)
    config = desk_config(epochs=3, learning_rate=0.05)
    params_a, hist_a = learner.train(bundle, config)
    params_b, hist_b = learner.train(bundle, config)
    assert learner.history_lines(hist_a) == learner.history_lines(hist_b)
    for (name, a), (_, b) in zip(params_a.named_tensors(), params_b.named_tensors()):
        assert np.array_equal(a, b), name


def test_train_loss_decreases_on_separable_data():
    bundle = dataio.generate_synthetic(
        dataio.SynthConfig(n=96, cluster_separation=6.0, **DESK), seed=7)
    config = desk_config(epochs=10, batch_size=16, learning_rate=0.05)
    _, history = learner.train(bundle, config)
    assert history[9]["loss"] < history[0]["loss"]


def test_step_aborts_on_non_finite_loss():
    from mmorient.errors import NumericError

    bundle = desk_bundle()
    config = desk_config()
    params, _ = make_model(bundle, config)
    params.mlp[0][0][0, 0] = np.inf  # forces inf - inf = nan downstream
    taskfeat = task_feature_matrix(bundle)
    batch = learner.batch_from_bundle(bundle, np.arange(4), taskfeat)
    with np.errstate(invalid="ignore", over="ignore"):
        with pytest.raises(NumericError, match="non-finite"):
            learner.backward_and_step(params, batch, bundle.task_specs,
                                      config.thresholds, lr=0.1)


def test_train_wraps_numeric_failure_with_position(monkeypatch):
    from mmorient.errors import NumericError

    def explode(*args, **kwargs):
        raise NumericError("non-finite training loss nan")

    monkeypatch.setattr(learner, "backward_and_step", explode)
    bundle = desk_bundle(n=16, separation=4.0)
    with pytest.raises(NumericError, match="epoch 1"):
        learner.train(bundle, desk_config())


# ---------------------------------------------------------------------------
# snapshots

def test_snapshot_round_trip_bitwise(tmp_path):
    bundle = desk_bundle()
    config = desk_config()
    params, _ = make_model(bundle, config)
    path = tmp_path / "model.mmos"
    learner.save_snapshot(params, path, config=config)
    loaded, meta = learner.load_snapshot(path)
    for (name, arr), (_, ref) in zip(loaded.named_tensors(), params.named_tensors()):
        assert np.array_equal(arr, ref), name
    assert meta["thresholds"] == config.thresholds
    assert meta["batch_size"] == config.batch_size


def test_snapshot_truncation_rejected(tmp_path):
    bundle = desk_bundle()
    config = desk_config()
    params, _ = make_model(bundle, config)
    path = tmp_path / "model.mmos"
    learner.save_snapshot(params, path)
    data = path.read_bytes()
    for cut in (3, 10, len(data) // 2, len(data) - 5):
        clipped = tmp_path / "clipped.mmos"
        clipped.write_bytes(data[:cut])
        with pytest.raises(DataError):
            learner.load_snapshot(clipped)


def test_snapshot_shape_mismatch_names_tensor(tmp_path):
    bundle = desk_bundle()
    params_a, _ = make_model(bundle, desk_config(beta=5))
    path = tmp_path / "model.mmos"
    learner.save_snapshot(params_a, path)
    loaded, _ = learner.load_snapshot(path)
    other = dataio.generate_synthetic(
        dataio.SynthConfig(n=8, l_txt=6, l_img=5, token_width=10, region_width=12,
                           joint_width=8, toxicity_width=8), seed=3)
    with pytest.raises(DataError, match="hima.txt.w1"):
        learner.validate_params_for_bundle(loaded, other)


def test_snapshot_rejects_garbage(tmp_path):
    path = tmp_path / "junk.mmos"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataError, match="magic"):
        learner.load_snapshot(path)


def test_evaluate_skips_masked_rows():
    bundle = desk_bundle(n=6, seed=30)
    del bundle.records[0].labels["humor"]
    bundle = dataio.DatasetBundle(
        task_specs=bundle.task_specs, records=bundle.records,
        joint_txt=bundle.joint_txt, joint_img=bundle.joint_img,
        token_feats=bundle.token_feats, region_feats=bundle.region_feats,
        toxicity=bundle.toxicity, sentiment_codes=bundle.sentiment_codes)
    config = desk_config()
    params, _ = make_model(bundle, config)
    taskfeat = task_feature_matrix(bundle)
    report = learner.evaluate(params, bundle, taskfeat, config.thresholds, 4)
    assert report["humor"].n_evaluated == 5
    assert report["sentiment"].n_evaluated == 6
