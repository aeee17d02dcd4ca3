import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edas import envsim
from edas.datakit import (ScriptedControllerParams, check_chaining, collect_dataset,
                          rewards_consistent)
from edas.diffcore import Tape, finite_diff_grad, max_relative_error
from edas.equibounds import (AugmentConfig, EquivariantBoundsLearner,
                             TranslationBounds, apply_translation, augment_dataset,
                             entropy_only_ablation, entropy_reg, equivariance_loss, joint_loss,
                             joint_loss_v1, joint_loss_v2, learn_bounds, sample_offsets,
                             validity_reg)
from edas.exceptions import InvalidArgument, NumericalFailure
from edas.modellearn import DynamicsModel, eval_model

PM = envsim.make_env("point_mass")
EXACT = envsim.ExactPointMassModel()


@pytest.fixture(scope="module")
def data():
    return collect_dataset(PM, ScriptedControllerParams(horizon=40), 30, "test",
                           np.random.default_rng(0))


@pytest.fixture(scope="module")
def small_model(data):
    return DynamicsModel(hidden_dims=(16,), epochs=20).fit_dataset(data)


def _box(low, high):
    return TranslationBounds(np.array(low, dtype=float), np.array(high, dtype=float))


# -- bounds type --------------------------------------------------------------

def test_bounds_json_round_trip(tmp_path):
    b = _box([-1.5, -0.25, 0.1, 0.0], [1.0, 0.5, 0.2, 0.0])
    b.save(tmp_path / "b.json")
    assert set(json.loads((tmp_path / "b.json").read_text())) == {"low", "high"}
    back = TranslationBounds.load(tmp_path / "b.json")
    assert np.array_equal(back.low, b.low) and np.array_equal(back.high, b.high)


def test_bounds_shape_mismatch():
    with pytest.raises(InvalidArgument):
        _box([0, 0], [1, 1, 1])


def test_centered_init():
    b = TranslationBounds.centered(4, 0.1)
    assert np.allclose(b.low, -0.05) and np.allclose(b.high, 0.05)


# -- offsets ------------------------------------------------------------------

def test_degenerate_offsets():
    u = sample_offsets(_box([0, 0], [0, 0]), 50, np.random.default_rng(0))
    assert np.all(u == 0)


def test_offsets_monte_carlo():
    u = sample_offsets(_box([-1, -1], [1, 1]), 10_000, np.random.default_rng(1))
    assert np.all(np.abs(u) <= 1)
    assert np.all(np.abs(u.mean(axis=0)) < 0.05)


@settings(max_examples=30)
@given(arrays(float, 3, elements=st.floats(-5, 5)), arrays(float, 3, elements=st.floats(0, 5)),
       st.integers(0, 1000))
def test_offsets_stay_in_box(low, width, seed):
    b = TranslationBounds(low, low + width)
    u = sample_offsets(b, 100, np.random.default_rng(seed))
    assert np.all(u >= b.low - 1e-12) and np.all(u <= b.high + 1e-12)


def test_offset_gradient_is_mean_eps():
    b = _box([-0.5, 0.0], [0.5, 2.0])
    eps = np.random.default_rng(2).random((40, 2))
    tape = Tape()
    loss = sample_offsets(b, 40, None, tape=tape, eps=eps).mean(axis=0).sum()
    _, g_high = tape.gradient(loss, [b.low, b.high])
    assert np.allclose(g_high, eps.mean(axis=0))
    num = finite_diff_grad(lambda: float(sample_offsets(b, 40, None, eps=eps).mean(axis=0).sum()),
                           [b.high])[0]
    assert np.allclose(g_high, num, atol=1e-8)


# -- translation ----------------------------------------------------------------

def test_apply_translation_examples():
    x = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(apply_translation(x, [1, 1, 0, 0]), [1.1, 1.2, 0.3, 0.4])
    assert np.array_equal(apply_translation(x, np.zeros(4)), x)
    with pytest.raises(InvalidArgument):
        apply_translation(x, [1.0, 2.0])


@given(arrays(float, 4, elements=st.floats(-10, 10)), arrays(float, 4, elements=st.floats(-10, 10)))
def test_translation_inverse(x, u):
    assert np.allclose(apply_translation(apply_translation(x, u), -u), x, atol=1e-12)


# -- regularizers -------------------------------------------------------------

def test_entropy_examples():
    assert entropy_reg(_box([-1, -1], [1, 1])) == pytest.approx(2 * np.log(2))
    assert entropy_reg(_box([0, 0, 0], [1, 1, 1])) == 0.0
    assert entropy_reg(_box([0, 0], [0, 0]), floor=1e-6) == pytest.approx(2 * np.log(1e-6))


def test_validity_examples():
    assert validity_reg(_box([0, 0], [1, 1])) == 0
    assert validity_reg(_box([0.5], [0.2])) == pytest.approx(0.3)
    assert validity_reg(_box([0.1, 0.2, 0], [0.0, 0.1, 1])) == pytest.approx(0.2)


def test_regularizers_tape_matches_numpy():
    b = _box([-0.3, 0.4, 0.0], [0.2, 0.1, 1e-9])
    tape = Tape()
    assert float(entropy_reg(b, tape=tape).value) == pytest.approx(entropy_reg(b))
    assert float(validity_reg(b, tape=tape).value) == pytest.approx(validity_reg(b))


# -- equivariance loss --------------------------------------------------------

def test_zero_offsets_reduce_to_model_error(data, small_model):
    u = np.zeros((len(data), 4))
    assert equivariance_loss(small_model, data.s, data.a, data.s2, u) == pytest.approx(
        eval_model(small_model, data), abs=1e-12)


def test_exact_dynamics_position_offsets(data):
    u = sample_offsets(_box([-3, -2, 0, 0], [3, 2, 0, 0]), len(data), np.random.default_rng(0))
    assert equivariance_loss(EXACT, data.s, data.a, data.s2, u) <= 1e-12


@pytest.mark.parametrize("w", [0.1, 0.2, 0.4])
def test_exact_dynamics_velocity_offsets(data, w):
    u = np.tile([0.0, 0.0, w, w], (len(data), 1))
    assert equivariance_loss(EXACT, data.s, data.a, data.s2, u) == pytest.approx(
        2 * (w * 0.05) ** 2, abs=1e-9)


def test_velocity_width_slope_is_dt_squared(data):
    # uniform velocity offsets of width w centred at 0: E[u^2] = w^2 / 12 per dim
    widths = np.array([0.1, 0.2, 0.4])
    losses = []
    for w in widths:
        u = sample_offsets(_box([0, 0, -w / 2, -w / 2], [0, 0, w / 2, w / 2]), 40 * len(data),
                           np.random.default_rng(3))
        losses.append(equivariance_loss(EXACT, data.s, data.a, data.s2, u))
    slope = np.polyfit(widths ** 2, losses, 1)[0]
    assert slope == pytest.approx(2 * 0.05 ** 2 / 12, rel=0.05)


def test_equivariance_loss_bad_shapes(data):
    with pytest.raises(InvalidArgument):
        equivariance_loss(EXACT, data.s, data.a, data.s2, np.zeros((len(data) + 1, 4)))
    with pytest.raises(InvalidArgument):
        equivariance_loss(EXACT, data.s, data.a, data.s2, np.zeros((len(data), 3)))


# -- joint losses -------------------------------------------------------------

class _Cfg:
    lambda_e, lambda_v, offsets_per_sample, entropy_floor = 0.1, 10.0, 1, 1e-6


def test_v1_arithmetic_example(data):
    # L_eq = 0.5 from a constant-offset model, entropy 1 from a unit-width box
    class Shifted:
        def predict_next(self, s, a):
            return EXACT.predict_next(s, a) + np.array([np.sqrt(0.5), 0, 0, 0])

        def predict_on_tape(self, tape, s, a):
            return EXACT.predict_on_tape(tape, s, a) + np.array([np.sqrt(0.5), 0, 0, 0])

    b = _box([0, 0, 0, 0], [1, 1, 1, np.e])  # entropy log(e) = 1
    eps = np.zeros((len(data), 4))  # u = low = 0
    parts = joint_loss(Shifted(), (data.s, data.a, data.s2), b, "v1", 0.1, 10.0, None, Tape(),
                       eps=eps)
    assert float(parts.loss_eq.value) == pytest.approx(0.5)
    assert float(parts.r_ent.value) == pytest.approx(1.0)
    assert float(parts.total.value) == pytest.approx(0.4)


def test_v1_floor_term_isolation(data):
    b = _box([0] * 4, [0] * 4)
    total = joint_loss_v1(EXACT, (data.s, data.a, data.s2), b, _Cfg, None, Tape(),
                          eps=np.zeros((len(data), 4)))
    assert float(total.value) == pytest.approx(-0.1 * 4 * np.log(1e-6))


def test_v2_reduces_without_offsets(data, small_model):
    b = _box([0] * 4, [0] * 4)  # u = 0, so L_eq = L_dyn
    cfg = type("C", (_Cfg,), {"lambda_e": 0.01})
    batch = (data.s, data.a, data.s2)
    total = joint_loss_v2(small_model, batch, b, cfg, None, Tape(), eps=np.zeros((len(data), 4)))
    expect = -0.01 * entropy_reg(b) + 10.0 * validity_reg(b)
    assert float(total.value) == pytest.approx(expect, rel=1e-9, abs=1e-12)


def test_v2_arithmetic_example():
    # R_ent = 2, L_eq - L_dyn = 0.05, lambda_e = 0.01 -> 0.08
    r_ent, gap, lam = 2.0, 0.05, 0.01
    assert r_ent * (gap - lam) == pytest.approx(0.08)


def _fd_check(model, data, variant, lam, b):
    batch = (data.s[:40], data.a[:40], data.s2[:40])
    eps = np.random.default_rng(9).random((80, 4))

    def value():
        return float(joint_loss(model, batch, b, variant, lam, 10.0, None, Tape(), 2,
                                eps=eps).total.value)

    tape = Tape()
    total = joint_loss(model, batch, b, variant, lam, 10.0, None, tape, 2, eps=eps).total
    analytic = tape.gradient(total, [b.low, b.high])
    numeric = finite_diff_grad(value, [b.low, b.high], step=1e-6)
    return analytic, numeric


@pytest.mark.parametrize("variant,lam", [("v1", 1e-3), ("v2", 0.01)])
def test_joint_loss_gradients_match_finite_differences(data, small_model, variant, lam):
    b = _box([-0.3, -0.2, -0.1, -0.05], [0.25, 0.3, 0.12, 0.07])
    analytic, numeric = _fd_check(small_model, data, variant, lam, b)
    assert max_relative_error(analytic, numeric) < 1e-4


def test_v2_gradient_grows_entropy_when_under_margin(data):
    # exact dynamics with position-only bounds: L_eq - L_dyn = 0 < margin
    b = _box([-0.1, -0.1, -1e-3, -1e-3], [0.1, 0.1, 1e-3, 1e-3])
    analytic, _ = _fd_check(EXACT, data, "v2", 0.5, b)
    g_low, g_high = analytic
    # descending the loss moves high up and low down on the position dims
    assert np.all(g_high[:2] < 0) and np.all(g_low[:2] > 0)


def test_unknown_variant(data):
    with pytest.raises(InvalidArgument):
        joint_loss(EXACT, (data.s, data.a, data.s2), TranslationBounds.centered(4, 0.1), "v3",
                   0.1, 10.0, np.random.default_rng(0), Tape())


# -- learner ------------------------------------------------------------------

def test_learner_never_touches_model(data, small_model):
    before = small_model.net_.checksum()
    EquivariantBoundsLearner(model=small_model, n_iter=20).fit_dataset(data)
    assert small_model.net_.checksum() == before


def test_learner_trace_lengths_and_determinism(data, small_model):
    a = EquivariantBoundsLearner(model=small_model, n_iter=25, random_state=4).fit_dataset(data)
    b = EquivariantBoundsLearner(model=small_model, n_iter=25, random_state=4).fit_dataset(data)
    assert len(a.trace_) == 25 and len(a.trace_.low) == 25
    assert np.array_equal(a.bounds_.low, b.bounds_.low)
    assert np.array_equal(a.trace_.widths(), b.trace_.widths())


def test_zero_entropy_weight_with_exact_model_stays_put(data):
    learner = EquivariantBoundsLearner(model=EXACT, lambda_e=0.0, n_iter=200)
    bounds, _ = learn_bounds(EXACT, data, learner)
    # position dims feel no force at all; velocity dims may only shrink
    assert np.allclose(bounds.low[:2], -0.05, atol=1e-9)
    assert np.allclose(bounds.high[:2], 0.05, atol=1e-9)
    assert np.all(bounds.width[2:] <= 0.1 + 1e-9)


def test_trace_csv_header(tmp_path, data, small_model):
    learner = EquivariantBoundsLearner(model=small_model, n_iter=5).fit_dataset(data)
    learner.trace_.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ("iter,loss_eq,r_ent,r_val,loss_dyn,"
                        "low_0,low_1,low_2,low_3,high_0,high_1,high_2,high_3")
    assert len(lines) == 6 and all(len(l.split(",")) == 13 for l in lines)


def test_learner_validation(data, small_model):
    with pytest.raises(InvalidArgument):
        EquivariantBoundsLearner(model=small_model, variant="v9").fit_dataset(data)
    with pytest.raises(InvalidArgument):
        EquivariantBoundsLearner(model=small_model, n_iter=0).fit_dataset(data)
    with pytest.raises(InvalidArgument):
        EquivariantBoundsLearner(model=None).fit_dataset(data)


def test_learner_non_finite_reports_iteration(data):
    class Broken:
        def predict_next(self, s, a):
            return np.full_like(s, np.nan)

        def predict_on_tape(self, tape, s, a):
            return tape.lift(s) * np.nan

    with pytest.raises(NumericalFailure) as err:
        EquivariantBoundsLearner(model=Broken(), n_iter=3).fit_dataset(data)
    assert err.value.where == "iteration 0"


# -- entropy-only ablation ----------------------------------------------------

def test_entropy_only_widths_explode():
    trace = entropy_only_ablation(EquivariantBoundsLearner(n_iter=2000))
    w = trace.widths()
    assert np.all(w[-1] > 10 * w[0])
    warm = len(w) // 20
    assert np.all(np.diff(w[warm:], axis=0) >= -1e-12)


def test_entropy_only_restores_validity_from_inverted_start():
    k = 2000
    start = _box([0.2] * 4, [-0.2] * 4)
    trace = entropy_only_ablation(EquivariantBoundsLearner(n_iter=k, lambda_v=100.0),
                                  init_bounds=start)
    assert trace.r_val[0] > 0
    assert trace.r_val[k // 10] == 0


# -- augmentation -------------------------------------------------------------

def test_augment_cardinality_and_origin(data):
    sub = data.subset(np.arange(100))
    aug = augment_dataset(sub, TranslationBounds.centered(4, 1.0), AugmentConfig(passes=10, seed=1))
    assert len(aug) == 1000
    assert set(aug.origin.tolist()) == {1}


def test_augment_zero_width_copies(data):
    aug = augment_dataset(data, TranslationBounds.centered(4, 0.0), AugmentConfig(passes=3))
    for k in range(3):
        part = aug.subset(np.arange(k * len(data), (k + 1) * len(data)))
        assert np.array_equal(part.s, data.s) and np.array_equal(part.g, data.g)
        assert np.array_equal(part.r, data.r)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 4.0))
def test_augment_preserves_rewards(data, seed, width):
    b = TranslationBounds.centered(4, width)
    aug = augment_dataset(data, b, AugmentConfig(passes=2, seed=seed))
    assert rewards_consistent(aug) == 1.0
    off = aug.s - np.tile(data.s, (2, 1))
    assert np.all(np.abs(off) <= width / 2 + 1e-12)
    assert np.allclose(aug.s2 - np.tile(data.s2, (2, 1)), off, atol=1e-12)
    assert np.allclose(aug.g - np.tile(data.g, (2, 1)), off[:, :2], atol=1e-12)


def test_trajectory_offsets_keep_chaining(data):
    aug = augment_dataset(data, TranslationBounds.centered(4, 2.0),
                          AugmentConfig(passes=2, seed=3, per="trajectory"))
    assert check_chaining(aug, atol=1e-12)


def test_augment_rejects_inverted_bounds(data):
    with pytest.raises(InvalidArgument):
        augment_dataset(data, _box([1, 0, 0, 0], [0, 0, 0, 0]))
    with pytest.raises(InvalidArgument):
        AugmentConfig(passes=0)


def test_transform_and_estimator_params(data, small_model):
    learner = EquivariantBoundsLearner(model=small_model, n_iter=5, n_passes=2)
    out = learner.fit_transform(data)
    assert len(out) == 2 * len(data)
    assert learner.lambda_e_ == 1e-5
    assert EquivariantBoundsLearner(variant="v2").lambda_e_ == 0.01


@pytest.mark.parametrize("fn,variant", [(joint_loss_v1, "v1"), (joint_loss_v2, "v2")])
def test_wrappers_resolve_auto_lambda(data, small_model, fn, variant):
    cfg = EquivariantBoundsLearner(variant=variant)
    b = _box([-0.1] * 4, [0.1] * 4)
    batch = (data.s[:20], data.a[:20], data.s2[:20])
    eps = np.random.default_rng(0).random((80, 4))
    got = fn(small_model, batch, b, cfg, None, Tape(), eps=eps).value
    want = joint_loss(small_model, batch, b, variant, cfg.lambda_e_, cfg.lambda_v, None, Tape(),
                      cfg.offsets_per_sample, eps=eps).total.value
    assert np.isfinite(got) and got == want
