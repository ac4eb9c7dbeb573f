"""Training loop: data windows, stage-A targets, determinism, resume and divergence."""

import json

import numpy as np
import pytest

from lfextrap.autodiff import load_checkpoint
from lfextrap.config import ExperimentConfig
from lfextrap.lightfield import EpiVolume
from lfextrap.network import count_parameters, init_params
from lfextrap.shear import ShearConfig, backward_shear, forward_shear
from lfextrap.synthetic import make_dataset
from lfextrap.training import (
    ABLATIONS,
    PipelineOptions,
    TrainHyper,
    TrainingDivergedError,
    TrainingSet,
    auto_margin,
    load_model,
    stage_a_targets,
    train,
    train_variants,
)

TINY = TrainHyper(lr=1e-3, batch=2, patch_h=8, steps_a=4, steps_b=4)


@pytest.fixture(scope="module")
def lightfields():
    return make_dataset(3, grid=(1, 6), size=(16, 40), seed=11)


@pytest.fixture(scope="module")
def data(lightfields):
    return TrainingSet(lightfields, 4)


# -- configuration defaults ------------------------------------------------------

def test_defaults_mirror_published_settings():
    h = TrainHyper()
    assert (h.lr, h.eps, h.gamma, h.batch, h.patch_h, h.lr_period) == (1e-4, 1e-4, 2.0, 8, 64, 200)
    assert ShearConfig().n_shears == 7
    assert ExperimentConfig().network.views_in == 4


@pytest.mark.parametrize("kw", [{"lr": 0}, {"batch": 0}, {"patch_h": 6}, {"steps_a": -1}, {"supervise": "some"}])
def test_hyper_validation(kw):
    with pytest.raises(ValueError):
        TrainHyper(**kw)


def test_auto_margin_covers_widest_shift():
    assert auto_margin(ShearConfig(), 4) == 15
    assert auto_margin(ShearConfig(K=0), 4) == 0
    assert auto_margin(ShearConfig(K=2, spacing=0.5), 8) == 11


# -- data ---------------------------------------------------------------------------

def test_training_windows(lightfields, data):
    # one row of 6 views per scene gives a single 6-view window; columns are 1 view long
    assert len(data) == 3
    assert data.width == 40
    assert data.strips_per_epoch(8) == 3 * 2 * 2


def test_sample_shapes_and_content(data):
    rng = np.random.default_rng(0)
    inputs, targets = data.sample(rng, 5, 8)
    assert inputs.shape == (5, 8, 40, 4) and targets.shape == (5, 8, 40, 2)
    window = np.concatenate([inputs, targets], axis=-1)
    candidates = [
        c for vol in data.volumes for y in range(vol.shape[0] - 7) for c in (vol[y : y + 8], vol[y : y + 8, :, ::-1])
    ]
    for w in window:
        assert any(np.array_equal(w, c) for c in candidates)


def test_sample_without_reverse_keeps_view_order(lightfields):
    data = TrainingSet(lightfields, 4, reverse=False)
    inputs, targets = data.sample(np.random.default_rng(1), 4, 8)
    window = np.concatenate([inputs, targets], axis=-1)
    for w in window:
        assert any(np.array_equal(w, v[y : y + 8]) for v in data.volumes for y in range(v.shape[0] - 7))


def test_training_set_needs_long_lines():
    with pytest.raises(ValueError):
        TrainingSet(make_dataset(1, grid=(1, 5), size=(8, 16), seed=0), 4)


# -- stage-A targets --------------------------------------------------------------------

def test_stage_a_targets_live_in_each_shear_frame(rng):
    cfg = ShearConfig()
    targets = rng.random((2, 8, 40, 2)).astype(np.float32)
    framed = stage_a_targets(targets, cfg, PipelineOptions(), 4)
    assert framed.shape == (2, 7, 8, 40, 2)
    epi = EpiVolume(data=targets[0], view_offsets=(4, 5))
    for i, d in enumerate(cfg.shear_values):
        np.testing.assert_array_equal(framed[0, i], forward_shear(epi, d).data)
        framed_epi = EpiVolume(data=framed[0, i], view_offsets=(4, 5))
        back = backward_shear(framed_epi, d).data
        m = 15
        np.testing.assert_allclose(back[:, m:-m], targets[0][:, m:-m], atol=1e-6)


def test_stage_a_targets_without_backward_shear_are_unsheared(rng):
    targets = rng.random((1, 8, 40, 2)).astype(np.float32)
    framed = stage_a_targets(targets, ShearConfig(), ABLATIONS["no-backward-shear"], 4)
    for i in range(7):
        np.testing.assert_array_equal(framed[0, i], targets[0])


# -- loop ---------------------------------------------------------------------------------

def test_train_writes_log_and_checkpoint(data, tmp_path):
    res = train(data, ShearConfig(), TINY, out_dir=tmp_path)
    assert len(res.losses) == 8
    assert all(np.isfinite(res.losses))
    records = [json.loads(line) for line in open(res.log_path)]
    assert [r["stage"] for r in records] == ["A"] * 4 + ["B"] * 4
    assert set(records[0]) == {"step", "stage", "epoch", "loss", "lr", "seconds"}
    assert [r["loss"] for r in records] == res.losses
    params, cfg, options, meta = load_model(res.checkpoint)
    assert cfg == ShearConfig() and options == PipelineOptions()
    assert meta["stage"] == "B" and meta["step"] == 4
    assert count_parameters(params) == count_parameters(res.params)


def test_stage_a_updates_only_extrapolation_weights(data):
    start = init_params(seed=TINY.seed)
    res = train(data, ShearConfig(), TINY, stages=("A",))
    for k, t in res.params.tensors.items():
        moved = not np.array_equal(t.data, start[k].data)
        assert moved == k.startswith("extrap/"), k


def test_training_is_bitwise_deterministic(data):
    hyper = TrainHyper(lr=1e-3, batch=2, patch_h=8, steps_a=10, steps_b=10)
    a = train(data, ShearConfig(), hyper)
    b = train(data, ShearConfig(), hyper)
    assert np.array(a.losses).tobytes() == np.array(b.losses).tobytes()
    for k in a.params.tensors:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()


def test_seed_changes_the_run(data):
    a = train(data, ShearConfig(), TINY)
    b = train(data, ShearConfig(), TrainHyper(**{**TINY.__dict__, "seed": 1}))
    assert a.losses != b.losses


class _Crash(Exception):
    pass


@pytest.mark.parametrize("crash_at", [("A", 3), ("B", 2)])
def test_resume_replays_uninterrupted_curve(data, tmp_path, crash_at):
    hyper = TrainHyper(lr=1e-3, batch=2, patch_h=8, steps_a=5, steps_b=5, checkpoint_every=2)
    full = train(data, ShearConfig(), hyper, out_dir=tmp_path / "full")

    def crash(record):
        if (record["stage"], record["step"]) == crash_at:
            raise _Crash

    with pytest.raises(_Crash):
        train(data, ShearConfig(), hyper, out_dir=tmp_path / "cut", log=crash)
    _, meta, _ = load_checkpoint(tmp_path / "cut" / "checkpoint.bin")
    resumed = train(data, ShearConfig(), hyper, out_dir=tmp_path / "cut", resume=tmp_path / "cut" / "checkpoint.bin")
    done_a = meta["step"] if meta["stage"] == "A" else hyper.steps_a
    done_b = 0 if meta["stage"] == "A" else meta["step"]
    tail = full.losses[done_a:] if meta["stage"] == "A" else full.losses[hyper.steps_a + done_b:]
    assert resumed.losses == tail
    for k in full.params.tensors:
        assert full.params[k].data.tobytes() == resumed.params[k].data.tobytes()


def test_divergence_keeps_last_good_checkpoint(data, tmp_path, monkeypatch):
    hyper = TrainHyper(lr=1e-3, batch=2, patch_h=8, steps_a=6, steps_b=0, checkpoint_every=1)
    real = TrainingSet.sample
    calls = {"n": 0}

    def poisoned(self, rng, batch, patch_h):
        calls["n"] += 1
        inputs, targets = real(self, rng, batch, patch_h)
        if calls["n"] == 4:
            inputs = inputs.copy()
            inputs[0, 0, 0, 0] = np.nan
        return inputs, targets

    monkeypatch.setattr(TrainingSet, "sample", poisoned)
    with pytest.raises(TrainingDivergedError) as info:
        train(data, ShearConfig(), hyper, out_dir=tmp_path)
    assert info.value.checkpoint == str(tmp_path / "checkpoint.bin")
    params, _, _, meta = load_model(info.value.checkpoint)
    assert meta["step"] == 3
    assert all(np.all(np.isfinite(a)) for a in params.arrays().values())


def test_resume_rejects_mismatched_shears(data, tmp_path):
    res = train(data, ShearConfig(), TINY, out_dir=tmp_path)
    with pytest.raises(ValueError):
        train(data, ShearConfig(K=1), TINY, resume=res.checkpoint)


def test_margin_must_leave_columns(data):
    with pytest.raises(ValueError):
        train(data, ShearConfig(), TrainHyper(batch=1, patch_h=8, steps_a=1, steps_b=0, loss_margin=20))


def test_best_shear_supervision_runs(data):
    res = train(data, ShearConfig(), TrainHyper(**{**TINY.__dict__, "supervise": "best"}))
    assert all(np.isfinite(res.losses))


# -- ablation variants ------------------------------------------------------------------------

def test_variants_share_stage_a_and_budgets(data, tmp_path):
    results = train_variants(data, ShearConfig(), TINY, out_dir=tmp_path)
    assert set(results) == set(ABLATIONS)
    assert results["full"].losses[:4] == results["no-fusion"].losses[:4]
    assert all(len(r.losses) == 8 for r in results.values())
    assert results["no-shear"].params.n_shears == 1
    _, _, options, meta = load_model(results["no-backward-shear"].checkpoint)
    assert options == ABLATIONS["no-backward-shear"] and meta["variant"] == "no-backward-shear"
