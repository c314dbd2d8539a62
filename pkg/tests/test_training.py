"""Pruebas del optimizador, la pérdida y el bucle de entrenamiento."""

import math

import numpy as np
import pytest

from src.core.diffcore import Tape
from src.data.datasets import Dataset, gen_moons
from src.errors import TrainingError
from src.flows.bijectors import IDENTITY_BOUND
from src.flows.models import build_model
from src.training.trainer import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    TrainReport,
    adam_step,
    clip_by_norm,
    cosine_lr,
    evaluate_nll,
    fit,
    nll_loss,
    read_report,
)

from .helpers import perturb, small_spec

QUICK = TrainConfig(epochs=10, batch_size=128, learning_rate=5e-3, patience=10, seed=0)


def test_cosine_schedule():
    assert cosine_lr(0, 100, 1e-3, 1e-5) == pytest.approx(1e-3)
    assert cosine_lr(50, 100, 1e-3, 1e-5) == pytest.approx((1e-3 + 1e-5) / 2)
    assert cosine_lr(100, 100, 1e-3, 1e-5) == pytest.approx(1e-5)
    assert cosine_lr(250, 100, 1e-3) == 0.0


def test_adam_zero_gradient_keeps_parameters():
    params = np.array([0.5, -1.0, 2.0])
    out = adam_step(params, np.zeros(3), AdamState(3), lr=1e-2)
    np.testing.assert_array_equal(out, params)


def test_adam_first_step_is_signed_learning_rate():
    params = np.zeros(4)
    grads = np.array([3.0, -0.5, 10.0, -2e-3])
    out = adam_step(params, grads, AdamState(4), lr=1e-3)
    np.testing.assert_allclose(out, -1e-3 * np.sign(grads), rtol=1e-4)


def test_clip_by_norm():
    grads, norm = clip_by_norm(np.array([3.0, 4.0]), 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(grads, [0.6, 0.8])
    untouched, _ = clip_by_norm(np.array([0.3, 0.4]), 1.0)
    np.testing.assert_array_equal(untouched, [0.3, 0.4])


def test_early_stopping_with_worsening_validation():
    stopper = EarlyStopping(patience=1)
    epochs = 0
    for epoch, value in enumerate([1.0, 2.0, 3.0, 4.0]):
        stopper.update(value, epoch)
        epochs += 1
        if stopper.should_stop:
            break
    assert epochs == 2
    assert stopper.best_epoch == 0


def test_identity_model_loss():
    model = build_model(small_spec("hcf", marginal_domain=[(-IDENTITY_BOUND, IDENTITY_BOUND)] * 2))
    loss = nll_loss(model, np.zeros((3, 2)))
    assert float(loss.value) == pytest.approx(1.837877, abs=1e-6)


def test_loss_is_mean_over_rows(moons):
    model = build_model(small_spec("hcf"))
    perturb(model, 0.3)
    y = moons.y[:10]
    once = float(nll_loss(model, y).value)
    twice = float(nll_loss(model, np.vstack([y, y])).value)
    assert twice == pytest.approx(once, rel=1e-12)


def test_empty_batch_is_error():
    model = build_model(small_spec("maf"))
    with pytest.raises(TrainingError):
        nll_loss(model, np.zeros((0, 2)))


def test_non_finite_loss_names_row():
    model = build_model(small_spec("hcf"))
    y = np.array([[0.0, 0.0], [np.inf, 0.0], [0.1, 0.2]])
    with pytest.raises(TrainingError) as info:
        nll_loss(model, y)
    assert info.value.row == 1


@pytest.mark.parametrize("seed", range(10))
def test_small_adam_step_does_not_increase_loss(seed, moons):
    model = build_model(small_spec("hcf"))
    perturb(model, 0.3, seed=seed)
    y = moons.y[:64]
    tape = Tape()
    loss = nll_loss(model, y, tape=tape)
    tape.backward(loss, model.store)
    model.store.values = adam_step(model.store.values, model.store.grads, AdamState(model.n_params), lr=1e-6)
    assert float(nll_loss(model, y).value) <= float(loss.value) + 1e-12


@pytest.mark.parametrize("kind,family", [
    ("mvn", "bernstein"), ("mctm", "bernstein"), ("cf", "rqs"),
    ("maf", "bernstein"), ("hcf", "bernstein"), ("hmaf", "bernstein"),
])
def test_training_lowers_validation_nll(kind, family, moons):
    model = build_model(small_spec(kind, family=family, conditional=True, marginal_domain=None),
                        moons.y, moons.x)
    y_val, x_val = moons.part("validation")
    before = evaluate_nll(model, y_val, x_val)
    report = fit(model, moons, QUICK)
    assert report.best_validation_nll < before
    assert len(report.epochs) == QUICK.epochs
    assert report.steps == QUICK.epochs * math.ceil(int(moons.mask("train").sum()) / QUICK.batch_size)


def test_best_parameters_are_restored(moons):
    model = build_model(small_spec("hcf", marginal_domain=None), moons.y)
    report = fit(model, moons, QUICK)
    y_val, x_val = moons.part("validation")
    assert evaluate_nll(model, y_val, x_val) == pytest.approx(report.best_validation_nll, abs=1e-12)
    assert report.best_validation_nll == min(e.val_nll for e in report.epochs)
    np.testing.assert_array_equal(model.store.values, report.final_params)


def test_training_is_deterministic(moons):
    reports = []
    for _ in range(2):
        model = build_model(small_spec("maf"), moons.y)
        reports.append(fit(model, moons, QUICK.model_copy(update={"epochs": 3})))
    first, second = reports
    assert first.model_dump(exclude={"wall_clock"}) == second.model_dump(exclude={"wall_clock"})


def test_max_steps_caps_training(moons):
    model = build_model(small_spec("cf"))
    report = fit(model, moons, QUICK.model_copy(update={"max_steps": 4}))
    assert report.steps == 4
    assert len(report.epochs) == 2


def test_fit_splits_when_validation_missing():
    ds = gen_moons(200, seed=0)
    model = build_model(small_spec("cf"))
    report = fit(model, ds, QUICK.model_copy(update={"epochs": 1}))
    assert report.best_epoch == 0


def test_failed_training_keeps_partial_report():
    y = np.random.default_rng(0).standard_normal((40, 2))
    y[5, 0] = np.inf
    split = np.array(["train"] * 30 + ["validation"] * 10, dtype=object)
    ds = Dataset(y=y, split=split)
    model = build_model(small_spec("hcf"))
    with pytest.raises(TrainingError) as info:
        fit(model, ds, TrainConfig(epochs=2, batch_size=64))
    assert info.value.row == 5
    assert isinstance(info.value.report, TrainReport)
    assert info.value.report.error is not None
    assert info.value.report.steps == 0


def test_report_round_trip(tmp_path, moons):
    model = build_model(small_spec("cf"))
    report = fit(model, moons, QUICK.model_copy(update={"epochs": 2}))
    path = report.write(tmp_path / "report.json")
    assert (tmp_path / "report.epochs.csv").exists()
    loaded = read_report(path)
    assert loaded.epochs == report.epochs
    assert loaded.best_validation_nll == report.best_validation_nll
    assert loaded.final_params == []


def test_empty_report_keeps_infinite_best(tmp_path):
    path = TrainReport().write(tmp_path / "empty.json")
    assert read_report(path).best_validation_nll == math.inf
