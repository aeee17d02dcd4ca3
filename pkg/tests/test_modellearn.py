import numpy as np
import pytest
from sklearn.base import clone

from edas import envsim
from edas.datakit import ScriptedControllerParams, collect_dataset
from edas.diffcore import Tape, mse
from edas.exceptions import InvalidArgument, NumericalFailure
from edas.modellearn import DynamicsModel, eval_model, predict_next, train_dynamics_model

PM = envsim.make_env("point_mass")


@pytest.fixture(scope="module")
def data():
    return collect_dataset(PM, ScriptedControllerParams(), 100, "train", np.random.default_rng(0))


@pytest.fixture(scope="module")
def trained(data):
    return train_dynamics_model(data)


def test_validation_loss_small(trained):
    _, report = trained
    assert report.val_loss < 1e-4
    assert all(np.isfinite(report.epoch_loss)) and min(report.epoch_loss) >= 0


def test_training_loss_does_not_diverge(trained):
    losses = trained[1].epoch_loss
    assert all(b <= 1.1 * a for a, b in zip(losses, losses[1:]))


def test_in_distribution_prediction_matches_simulator(trained, data):
    model = trained[0]
    idx = np.random.default_rng(1).choice(len(data), 200, replace=False)
    truth = envsim.point_mass_step(data.s[idx], data.a[idx])
    assert np.max(np.abs(model.predict_next(data.s[idx], data.a[idx]) - truth)) < 0.01


def test_predict_is_pure_and_handles_single_rows(trained, data):
    model = trained[0]
    s, a = data.s[3], data.a[3]
    one = predict_next(model, s, a)
    assert one.shape == (4,)
    assert np.array_equal(one, model.predict_next(s, a))
    assert np.array_equal(one, model.predict_next(data.s[3:4], data.a[3:4])[0])


def test_predict_dimension_mismatch(trained):
    with pytest.raises(InvalidArgument):
        trained[0].predict(np.zeros((2, 5)))


def test_zero_delta_model_returns_state(data):
    model = DynamicsModel(epochs=1).fit_dataset(data.subset(np.arange(50)))
    for p in model.net_.parameters():
        p[...] = 0
    assert np.array_equal(model.predict_next(data.s, data.a), data.s)
    assert eval_model(model, data) == pytest.approx(np.mean(np.sum((data.s2 - data.s) ** 2, axis=1)))


def test_eval_matches_tape_mse(trained, data):
    model = trained[0]
    tape = Tape()
    on_tape = mse(model.predict_on_tape(tape, data.s, data.a), data.s2)
    assert float(on_tape.value) == pytest.approx(eval_model(model, data), rel=1e-12)


def test_exact_model_has_zero_eval_error(data):
    assert eval_model(envsim.ExactPointMassModel(), data) < 1e-10


def test_identical_transitions_fit(data):
    one = data.subset(np.zeros(64, dtype=int))
    model = DynamicsModel(epochs=300, weight_decay=0.0, validation_fraction=0.0).fit_dataset(one)
    assert model.report_.epoch_loss[-1] < 1e-6
    assert model.report_.epoch_loss[-1] < model.report_.epoch_loss[0]


def test_same_seed_same_weights(data):
    small = data.subset(np.arange(300))
    a = DynamicsModel(epochs=5, random_state=3).fit_dataset(small)
    b = DynamicsModel(epochs=5, random_state=3).fit_dataset(small)
    for p, q in zip(a.net_.parameters(), b.net_.parameters()):
        assert np.array_equal(p, q)


def test_delta_and_absolute_modes_agree(data, trained):
    absolute = DynamicsModel(predict_delta=False).fit_dataset(data)
    idx = np.random.default_rng(2).choice(len(data), 200, replace=False)
    gap = absolute.predict_next(data.s[idx], data.a[idx]) - trained[0].predict_next(data.s[idx], data.a[idx])
    assert np.max(np.abs(gap)) < 5e-3


def test_noisy_region_has_larger_error():
    d = collect_dataset(PM, ScriptedControllerParams(), 100, "train", np.random.default_rng(5),
                        noise=envsim.NoiseRegion(amplitude=0.1))
    model = DynamicsModel(epochs=60).fit_dataset(d)
    right = d.s[:, 0] > 0
    assert eval_model(model, d.subset(np.flatnonzero(right))) > eval_model(
        model, d.subset(np.flatnonzero(~right)))


def test_non_finite_loss_reports_epoch(data):
    bad = data.replace(s2=data.s2 * 1e300)
    with pytest.raises(NumericalFailure) as err:
        DynamicsModel(epochs=3).fit_dataset(bad)
    assert err.value.where == "epoch 0"


def test_empty_dataset_rejected(data):
    with pytest.raises(InvalidArgument):
        train_dynamics_model(data.subset(np.array([], dtype=int)))
    with pytest.raises(InvalidArgument):
        eval_model(envsim.ExactPointMassModel(), data.subset(np.array([], dtype=int)))


def test_param_validation(data):
    with pytest.raises(InvalidArgument):
        DynamicsModel(batch_size=0).fit_dataset(data)
    with pytest.raises(InvalidArgument):
        DynamicsModel(validation_fraction=1.0).fit_dataset(data)


def test_estimator_protocol(data):
    model = DynamicsModel(hidden_dims=(8,), epochs=2)
    twin = clone(model)
    assert twin.get_params() == model.get_params()
    X, y = np.hstack([data.s, data.a])[:200], data.s2[:200]
    assert np.isfinite(model.fit(X, y).score(X, y))


def test_save_load_round_trip(tmp_path, trained, data):
    model = trained[0]
    model.save(tmp_path / "m.json", tmp_path / "m.meta.json")
    back = DynamicsModel.load(tmp_path / "m.json", tmp_path / "m.meta.json")
    assert np.array_equal(back.predict_next(data.s, data.a), model.predict_next(data.s, data.a))
    assert back.get_params() == model.get_params()
