import json

import numpy as np
import pytest
import torch

from eyedentify.errors import TrainingDivergedError, UntrainedModelError
from eyedentify.models.model_manager import ModelBundle
from eyedentify.models.training import pretrain_subnet, train_bundle, train_joint
from eyedentify.pydantic_models.models import JointConfig, SubnetConfig, TrainingSchedule, TransformConfig
from eyedentify.preprocessing.transforms import InputWindow
from eyedentify.utils.timer import Timer

LENGTH = 64

SCHEDULE = TrainingSchedule(max_epochs=3, batch_size=8, validation_fraction=0.0)


def _state(module):
    return {k: v.clone() for k, v in module.state_dict().items()}


def test_zero_epochs_leave_network_unchanged(make_windows, make_bundle):
    bundle = make_bundle()
    before = _state(bundle)
    train_bundle(bundle, make_windows(16, length=LENGTH), SCHEDULE.model_copy(update={"max_epochs": 0}), progress=False)
    for name, value in bundle.state_dict().items():
        torch.testing.assert_close(value, before[name])
    assert bundle.trained_stages == ["slow", "fast", "joint"]


def test_identical_seed_identical_trajectory(make_windows, make_bundle):
    windows = make_windows(16, length=LENGTH)
    logs = [train_bundle(make_bundle(seed=3), windows, SCHEDULE, progress=False) for _ in range(2)]
    assert logs[0] == logs[1]
    losses = [e["loss"] for e in logs[0]["stages"]["slow"]["epochs"]]
    assert len(losses) == 3 and all(np.isfinite(losses))


def test_learning_rates_logged(make_windows, make_bundle):
    log = train_bundle(make_bundle(), make_windows(16, length=LENGTH), SCHEDULE, progress=False)
    assert log["stages"]["slow"]["lr"] == 0.001
    assert log["stages"]["fast"]["lr"] == 0.001
    assert log["stages"]["joint"]["lr"] == 0.0001


def test_joint_stage_keeps_subnets_frozen(make_windows, make_bundle):
    bundle = make_bundle()
    windows = make_windows(16, length=LENGTH)
    train_bundle(bundle, windows, SCHEDULE, stages=("slow", "fast"), progress=False)
    digest = bundle.subnet_digest()
    slow_state = _state(bundle.slow)
    joint_before = _state(bundle.joint)
    train_joint(bundle, windows, SCHEDULE, progress=False)
    assert bundle.subnet_digest() == digest == bundle.metadata["subnet_digest"]
    for name, value in bundle.slow.state_dict().items():
        assert torch.equal(value, slow_state[name])
    assert any(not torch.equal(v, joint_before[k]) for k, v in bundle.joint.state_dict().items())


def test_stage_gating(make_windows, make_bundle):
    bundle = make_bundle()
    log = train_bundle(bundle, make_windows(16, length=LENGTH), SCHEDULE, stages=("slow",), progress=False)
    assert bundle.trained_stages == ["slow"]
    assert set(log["stages"]) == {"slow"}


def test_joint_needs_subnets(make_windows, make_bundle, tmp_path):
    log_path = tmp_path / "training_log.json"
    with pytest.raises(UntrainedModelError):
        train_bundle(make_bundle(), make_windows(16, length=LENGTH), SCHEDULE, stages=("joint",), progress=False, log_path=str(log_path))
    assert "UntrainedModelError" in json.loads(log_path.read_text())["error"]


def test_log_written_after_each_stage(make_windows, make_bundle, tmp_path):
    log_path = tmp_path / "training_log.json"
    train_bundle(make_bundle(), make_windows(16, length=LENGTH), SCHEDULE, progress=False, log_path=str(log_path))
    saved = json.loads(log_path.read_text())
    assert saved["trained_stages"] == ["slow", "fast", "joint"]
    assert saved["subnet_digest"]


def test_divergence_reports_stage(make_windows, make_bundle):
    windows = make_windows(16, length=LENGTH)
    windows[3] = InputWindow(slow=np.full((LENGTH, 2), np.nan), fast=windows[3].fast, label=windows[3].label)
    with pytest.raises(TrainingDivergedError) as e:
        pretrain_subnet(make_bundle().slow, windows, SCHEDULE, "slow", ["a", "b"], progress=False)
    assert e.value.stage == "slow" and e.value.epoch == 1


def test_unknown_label(make_windows, make_bundle):
    with pytest.raises(ValueError):
        pretrain_subnet(make_bundle().slow, make_windows(8, length=LENGTH, labels=("a", "z")), SCHEDULE, "slow", ["a", "b"], progress=False)


def test_missing_class(make_windows, make_bundle):
    with pytest.raises(ValueError):
        pretrain_subnet(make_bundle().slow, make_windows(8, length=LENGTH, labels=("a",)), SCHEDULE, "slow", ["a", "b"], progress=False)


def test_early_stopping_restores_best(make_windows, make_bundle):
    schedule = TrainingSchedule(max_epochs=30, batch_size=8, validation_fraction=0.25, patience=2)
    log = pretrain_subnet(make_bundle().slow, make_windows(32, length=LENGTH), schedule, "slow", ["a", "b"], progress=False)
    assert log.val_windows == 8
    assert log.best_epoch is not None
    if log.stop_reason == "early_stopping":
        assert len(log.epochs) == log.best_epoch + 2


@pytest.mark.slow
def test_reduced_profile_overfits_two_identities(make_windows):
    windows = make_windows(32, length=1000, seed=4)
    bundle = ModelBundle(
        SubnetConfig.reduced_slow(), SubnetConfig.reduced_fast(), JointConfig(), TransformConfig(), ["a", "b"], seed=1
    )
    schedule = TrainingSchedule(max_epochs=200, batch_size=16, validation_fraction=0.0)
    log = train_bundle(bundle, windows, schedule, progress=False)
    for stage in ("slow", "fast", "joint"):
        assert max(e["train_accuracy"] for e in log["stages"][stage]["epochs"]) == 1.0
    probs = bundle.predict_proba(windows[:4])
    assert [bundle.class_labels[i] for i in probs.argmax(axis=1)] == [w.label for w in windows[:4]]


def test_stage_durations_go_to_timer(make_windows, make_bundle, tmp_path):
    timer = Timer()
    log_path = tmp_path / "training_log.json"
    train_bundle(make_bundle(), make_windows(16, length=LENGTH), SCHEDULE, progress=False, log_path=str(log_path), timer=timer)
    assert set(timer.get_times()) == {"Stage slow", "Stage fast", "Stage joint"}
    assert "time" not in log_path.read_text()


def test_global_determinism_setting_restored(make_windows, make_bundle):
    before = torch.are_deterministic_algorithms_enabled()
    train_bundle(make_bundle(), make_windows(16, length=LENGTH), SCHEDULE, stages=("slow",), progress=False)
    assert torch.are_deterministic_algorithms_enabled() == before
