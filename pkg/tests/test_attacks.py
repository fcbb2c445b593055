import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqdefense.attacks import (AttackSpec, apply_perturbation, bpda_attack, iterative_mirror,
                                 metzen_llm, mfgsm, mirror_mask, mopuri, nearest_donor_mask,
                                 perturbation_norm, project, run_attack)
from freqdefense.baselines import bit_depth_reduce, identity
from freqdefense.errors import MaskConstructionError, SpecError
from freqdefense.micronet import LossSpec, MicroNet

from oracles import brute_nearest_donor


def identity_net(shape):
    return MicroNet.from_spec({"input_shape": list(shape), "layers": []})


# ---------------------------------------------------------------- mfgsm

def test_single_step_on_half_squared_norm():
    x = np.random.default_rng(0).uniform(20, 230, (4, 4, 3))
    spec = AttackSpec("mfgsm", epsilon=8, iterations=1, momentum=0)
    p = mfgsm(identity_net(x.shape), x, spec, loss=LossSpec("half_squared_norm"))
    np.testing.assert_array_equal(p.r, -8.0 * np.sign(x))


@pytest.mark.parametrize("signs", list(itertools.product([-1.0, 1.0], repeat=4)))
def test_sign_patterns_on_two_by_two_linear_problem(signs):
    # minimising <w, x> moves every pixel against the sign of its weight
    w = np.array(signs).reshape(2, 2, 1) * np.array([1.0, 2.0, 0.5, 3.0]).reshape(2, 2, 1)
    x = np.full((2, 2, 1), 100.0)
    for mu in (0.0, 10.0):
        spec = AttackSpec("mfgsm", epsilon=6, iterations=3, momentum=mu)
        p = mfgsm(identity_net(x.shape), x, spec, loss=LossSpec("linear", weights=w))
        np.testing.assert_allclose(p.r, -6.0 * np.sign(w), atol=1e-12)


def test_l2_step_follows_normalised_gradient():
    w = np.array([3.0, 4.0, 0.0, 0.0]).reshape(2, 2, 1)
    x = np.full((2, 2, 1), 100.0)
    spec = AttackSpec("mfgsm", epsilon=5, norm="l2", iterations=4, momentum=0)
    p = mfgsm(identity_net(x.shape), x, spec, loss=LossSpec("linear", weights=w))
    np.testing.assert_allclose(p.r, -w, atol=1e-12)
    assert p.norm() == pytest.approx(5.0)


def test_zero_gradient_is_flagged():
    x = np.full((2, 2, 1), 50.0)
    spec = AttackSpec("mfgsm", epsilon=4, iterations=5)
    p = mfgsm(identity_net(x.shape), x, spec, loss=LossSpec("linear", weights=np.zeros((2, 2, 1))))
    assert p.degenerate and not p.r.any()


def test_momentum_carries_through_vanishing_gradient():
    # relu kills the gradient once x crosses zero; momentum keeps stepping
    net = MicroNet.from_spec({"input_shape": [1, 1, 1], "layers": [
        {"kind": "affine", "offset": -101.0}, {"kind": "relu"}]})
    x = np.full((1, 1, 1), 102.0)
    spec = AttackSpec("mfgsm", epsilon=4, iterations=4, momentum=1.0)
    p = mfgsm(net, x, spec, loss=LossSpec("sum"))
    assert p.r[0, 0, 0] == pytest.approx(-4.0)
    assert not p.degenerate


def test_spec_validation_and_json():
    with pytest.raises(SpecError):
        AttackSpec("fgsm")
    with pytest.raises(SpecError):
        AttackSpec("mfgsm", epsilon=0)
    with pytest.raises(SpecError):
        AttackSpec("mfgsm", norm="l1")
    with pytest.raises(SpecError):
        AttackSpec.from_dict({"kind": "mfgsm", "eps": 3})
    s = AttackSpec("mopuri", epsilon=7, seed=3, name="data-free")
    assert AttackSpec.from_json(s.to_json()) == s
    assert s.momentum == 1.0 and s.tap_layers == (3,) and s.label == "data-free"
    assert AttackSpec("mfgsm").momentum == 10.0
    assert AttackSpec("metzen_llm").momentum == 0.0


def test_project():
    r = np.array([3.0, -4.0]).reshape(1, 2, 1)
    np.testing.assert_array_equal(project(r, 2, "l_inf"), [[[2.0], [-2.0]]])
    assert perturbation_norm(project(r, 2.5, "l2"), "l2") == pytest.approx(2.5)
    np.testing.assert_array_equal(project(r, 10, "l2"), r)


# ---------------------------------------------------------------- masks

def test_mask_without_target_pixels_is_prediction():
    pred = np.array([[1, 2], [3, 1]])
    np.testing.assert_array_equal(nearest_donor_mask(pred, 0), pred)


def test_unique_nearest_donor():
    pred = np.zeros((4, 4), dtype=int)
    pred[0, 3] = 2
    pred[3, 3] = 1
    assert nearest_donor_mask(pred, 0)[0, 0] == 2


def test_equidistant_donors_prefer_smaller_class():
    pred = np.zeros((8, 8), dtype=int)
    pred[4, 0] = 3
    pred[4, 6] = 1
    mask = nearest_donor_mask(pred, 0)
    assert mask[4, 3] == 1
    pred[4, 6] = 5
    assert nearest_donor_mask(pred, 0)[4, 3] == 3


def test_all_target_prediction_has_no_donor():
    with pytest.raises(MaskConstructionError):
        nearest_donor_mask(np.zeros((3, 3), dtype=int), 0)


@settings(max_examples=80, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 3)))
def test_nearest_donor_matches_brute_force(pred):
    if np.all(pred == 0):
        return
    np.testing.assert_array_equal(nearest_donor_mask(pred, 0), brute_nearest_donor(pred, 0))


def test_mirror_masks():
    sym = np.array([[0, 1, 0], [2, 2, 2]])
    np.testing.assert_array_equal(mirror_mask(sym), sym)
    halves = np.zeros((4, 6), dtype=int)
    halves[:, 3:] = 1
    np.testing.assert_array_equal(mirror_mask(halves), 1 - halves)


# ---------------------------------------------------------------- mopuri

def tap_net(shape, second_tap_constant=False):
    layers = [{"kind": "feature_tap", "id": 1}]
    if second_tap_constant:
        C = shape[2]
        layers = [{"kind": "branch_sum", "branches": [
            [{"kind": "feature_tap", "id": 1}],
            [{"kind": "conv2d", "weights": np.zeros((1, 1, C, C)).tolist(), "bias": [0.5] * C},
             {"kind": "feature_tap", "id": 2},
             {"kind": "affine", "scale": 0.0}]]}]
    return MicroNet.from_spec({"input_shape": list(shape), "layers": layers})


def test_linear_tap_pushes_to_ball_boundary():
    net = tap_net((4, 4, 2))
    p = mopuri(net, AttackSpec("mopuri", epsilon=0.5, tap_layers=(1,), seed=2))
    assert abs(np.max(np.abs(p.r)) - 0.5) <= 1e-9
    np.testing.assert_allclose(np.abs(p.r), 0.5, atol=1e-9)


def test_constant_tap_contributes_no_gradient():
    net = tap_net((4, 4, 2), second_tap_constant=True)
    r = np.random.default_rng(0).uniform(-3, 3, (4, 4, 2))
    g1 = net.input_gradient(r, LossSpec("negative_log_activation_product", taps=(1,)))
    g12 = net.input_gradient(r, LossSpec("negative_log_activation_product", taps=(1, 2)))
    np.testing.assert_array_equal(g1, g12)


def test_mopuri_beats_random_perturbations(desk_nearest):
    spec = AttackSpec("mopuri", epsilon=10, seed=1)
    loss = LossSpec("negative_log_activation_product", taps=spec.tap_layers)
    p = mopuri(desk_nearest, spec)
    J = desk_nearest.value_and_gradient(p.r, loss)[0]
    rng = np.random.default_rng(9)
    rand = [desk_nearest.value_and_gradient(rng.uniform(-10, 10, (32, 32, 3)), loss)[0] for _ in range(20)]
    assert J < min(rand)
    assert p.losses[-1] < p.losses[0]


# ---------------------------------------------------------------- shared properties

SPECS = [
    AttackSpec("mfgsm", epsilon=10, target_class=0),
    AttackSpec("mfgsm", epsilon=300, norm="l2", target_class=2),
    AttackSpec("metzen_llm", epsilon=10, target_class=1),
    AttackSpec("iterative_mirror", epsilon=10),
    AttackSpec("mopuri", epsilon=10),
    AttackSpec("mopuri", epsilon=300, norm="l2"),
]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}-{s.norm}")
def test_budget_clipping_determinism(desk_nearest, spec):
    rng = np.random.default_rng(42)
    for _ in range(3):
        x = np.rint(rng.uniform(0, 255, (32, 32, 3)))
        a = run_attack(desk_nearest, x, spec)
        b = run_attack(desk_nearest, x, spec)
        np.testing.assert_array_equal(a.r, b.r)
        assert a.norm() <= spec.epsilon + 1e-9
        if spec.kind != "mopuri":
            xa = x + a.r
            assert xa.min() >= 0.0 and xa.max() <= 255.0


def test_mopuri_is_image_agnostic(desk_nearest):
    spec = AttackSpec("mopuri", epsilon=10, seed=5)
    r = mopuri(desk_nearest, spec).r
    xs = np.random.default_rng(0).uniform(0, 255, (2, 32, 32, 3))
    np.testing.assert_array_equal(run_attack(desk_nearest, xs[0], spec).r, r)
    np.testing.assert_array_equal(run_attack(desk_nearest, xs[1], spec).r, r)


def test_bpda_identity_equals_mfgsm(desk_nearest):
    x = np.random.default_rng(3).uniform(0, 255, (32, 32, 3))
    spec = AttackSpec("mfgsm", epsilon=10, target_class=3)
    np.testing.assert_array_equal(bpda_attack(desk_nearest, identity, x, spec).r,
                                  mfgsm(desk_nearest, x, spec).r)


def test_bpda_through_quantiser(desk_nearest):
    x = np.random.default_rng(4).uniform(0, 255, (32, 32, 3))
    spec = AttackSpec("mfgsm", epsilon=10, target_class=0)
    p = bpda_attack(desk_nearest, lambda z: bit_depth_reduce(z, 3), x, spec)
    assert p.norm() <= 10 + 1e-9
    loss = LossSpec("l2_class_scores", target_class=0)
    J0 = desk_nearest.value_and_gradient(bit_depth_reduce(x, 3), loss)[0]
    assert p.losses[0] == J0


def test_attacks_change_predictions(desk_nearest):
    rng = np.random.default_rng(7)
    xs = [np.rint(rng.uniform(0, 255, (32, 32, 3))) for _ in range(32)]
    for spec in [AttackSpec("mfgsm", epsilon=10, target_class=0),
                 AttackSpec("metzen_llm", epsilon=10, target_class=0),
                 AttackSpec("iterative_mirror", epsilon=10),
                 AttackSpec("mopuri", epsilon=10)]:
        agree = []
        for i, x in enumerate(xs):
            s = AttackSpec.from_dict({**spec.to_dict(), "seed": i})
            try:
                r = run_attack(desk_nearest, x, s).r
            except MaskConstructionError:
                continue
            agree.append(np.mean(desk_nearest.predict(x) == desk_nearest.predict(apply_perturbation(x, r))))
        assert np.mean(agree) < 1.0, spec.kind
