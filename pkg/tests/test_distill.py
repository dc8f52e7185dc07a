import math

import numpy as np
import pytest

from splatedit.distill import (DistillConfig, build_neighbor_graph, classify,
                               distill, distill_loss_and_grads, loss_obj,
                               loss_space, _space_loss_grad)
from splatedit.scene import Classifier
from splatedit.synth import synth_scene

from conftest import axis_camera, make_scene


# ----------------------------------------------------------------- classify

def test_classify_constant_logits_all_background(rng):
    fmap = rng.normal(size=(6, 8, 16))
    clf = Classifier(weight=np.zeros((3, 16)), bias=np.array([10.0, 0.0, 0.0]))
    probs, labels = classify(fmap, clf)
    assert np.all(labels == 0)
    assert probs.shape == (6, 8, 3)


def test_classify_uniform_probabilities(rng):
    fmap = np.zeros((4, 5, 16))
    clf = Classifier(weight=np.zeros((4, 16)), bias=np.zeros(4))
    probs, _ = classify(fmap, clf)
    assert np.allclose(probs, 0.25)


def test_classify_probabilities_sum_to_one(rng):
    fmap = rng.normal(size=(7, 9, 16))
    clf = Classifier(weight=rng.normal(size=(5, 16)), bias=rng.normal(size=5))
    probs, _ = classify(fmap, clf)
    assert np.abs(probs.sum(axis=2) - 1.0).max() < 1e-6


def test_classify_dimension_mismatch():
    clf = Classifier(weight=np.zeros((3, 8)), bias=np.zeros(3))
    with pytest.raises(ValueError):
        classify(np.zeros((4, 4, 16)), clf)


# ----------------------------------------------------------------- loss_obj

def test_loss_obj_perfect_predictions_zero():
    probs = np.zeros((3, 3, 2))
    labels = np.array([[0, 1, 0], [1, 1, 0], [0, 0, 1]], np.int32)
    for q in range(2):
        probs[:, :, q] = labels == q
    assert loss_obj(probs, labels) == 0.0


def test_loss_obj_uniform_is_log_q():
    probs = np.full((5, 5, 4), 0.25)
    labels = np.zeros((5, 5), np.int32)
    assert loss_obj(probs, labels) == pytest.approx(math.log(4), abs=1e-12)


def test_loss_obj_two_pixel_hand_case():
    probs = np.zeros((1, 2, 2))
    probs[0, 0] = [0.5, 0.5]
    probs[0, 1] = [0.25, 0.75]
    labels = np.array([[0, 0]], np.int32)
    expect = (math.log(2) + math.log(4)) / 2
    assert loss_obj(probs, labels) == pytest.approx(expect, abs=1e-12)


# --------------------------------------------------------------- loss_space

def test_loss_space_identical_features_zero():
    f = np.tile([1.0, 2.0] + [0.0] * 14, (4, 1))
    graph = build_neighbor_graph(np.arange(12.0).reshape(4, 3), k=2)
    assert loss_space(f, graph) == pytest.approx(0.0, abs=1e-12)


def test_loss_space_orthogonal_is_one():
    f = np.zeros((2, 16))
    f[0, 0] = 1.0
    f[1, 1] = 1.0
    graph = np.array([[1], [0]])
    assert loss_space(f, graph) == pytest.approx(1.0, abs=1e-12)


def test_loss_space_opposite_is_two():
    f = np.zeros((2, 16))
    f[0, 0] = 1.0
    f[1, 0] = -1.0
    graph = np.array([[1], [0]])
    assert loss_space(f, graph) == pytest.approx(2.0, abs=1e-12)


def test_loss_space_bounds(rng):
    f = rng.normal(size=(20, 16))
    graph = build_neighbor_graph(rng.normal(size=(20, 3)), k=5)
    assert 0.0 <= loss_space(f, graph) <= 2.0


def test_space_grad_matches_finite_differences(rng):
    f = rng.normal(size=(6, 16))
    graph = build_neighbor_graph(rng.normal(size=(6, 3)), k=3)
    _, grad = _space_loss_grad(f, graph)
    h = 1e-6
    for _ in range(10):
        i, d = rng.integers(0, 6), rng.integers(0, 16)
        fp, fm = f.copy(), f.copy()
        fp[i, d] += h
        fm[i, d] -= h
        fd = (loss_space(fp, graph) - loss_space(fm, graph)) / (2 * h)
        assert abs(fd - grad[i, d]) <= 1e-5 * max(abs(fd), 1e-3)


# ------------------------------------------------------------ neighbor graph

def test_neighbor_graph_no_self_loops(rng):
    pos = rng.normal(size=(15, 3))
    graph = build_neighbor_graph(pos, k=5)
    assert graph.shape == (15, 5)
    for i in range(15):
        assert i not in graph[i]


def test_neighbor_graph_small_scene_uses_all_others():
    pos = np.array([[0, 0, 0.0], [1, 0, 0], [0, 1, 0]])
    graph = build_neighbor_graph(pos, k=5)
    assert graph.shape == (3, 2)


# ------------------------------------------------------------------- distill

def _tiny_setup():
    spec = {
        "seed": 4,
        "image": {"width": 48, "height": 36},
        "ring": {"count": 4, "radius": 4.0, "height": 4.5, "fov_deg": 60,
                 "target": [0.0, 0.0, 0.8]},
        "blobs": [
            {"center": [-0.8, 0.0, 1.0], "count": 40, "spread": 0.25,
             "color": [0.85, 0.25, 0.2], "object_id": 1},
            {"center": [0.8, 0.0, 1.0], "count": 40, "spread": 0.25,
             "color": [0.2, 0.4, 0.85], "object_id": 2},
        ],
    }
    return synth_scene(spec)


def test_distill_zero_iterations_bakes_random_init():
    scene, cams, labels = _tiny_setup()
    cfg = DistillConfig(iterations=0, seed=3)
    out = distill(scene, cams, labels, cfg)
    assert out.classifier is not None
    assert out.object_ids is not None
    assert np.array_equal(out.positions, scene.positions)
    assert np.array_equal(out.opacities_raw, scene.opacities_raw)


def test_distill_deterministic():
    scene, cams, labels = _tiny_setup()
    cfg = DistillConfig(iterations=10, seed=7)
    a = distill(scene, cams, labels, cfg)
    b = distill(scene, cams, labels, cfg)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.object_ids, b.object_ids)


def test_distill_lambda_zero_is_pure_object_loss():
    scene, cams, labels = _tiny_setup()
    log_a, log_b = [], []
    cfg_a = DistillConfig(iterations=8, seed=5, spatial_weight=0.0)
    distill(scene, cams, labels, cfg_a,
            log_cb=lambda it, lo, ls, lt: log_a.append((lo, lt)))
    for lo, lt in log_a:
        assert lt == pytest.approx(lo, abs=1e-12)


def test_distill_requires_labels():
    scene, cams, labels = _tiny_setup()
    blank = [np.zeros_like(lm) for lm in labels]
    with pytest.raises(ValueError, match="labeled"):
        distill(scene, cams, blank, DistillConfig(iterations=1))


def test_baked_ids_invariant_under_compensated_scaling():
    scene, cams, labels = _tiny_setup()
    cfg = DistillConfig(iterations=25, seed=2)
    out = distill(scene, cams, labels, cfg)
    ids_a = np.argmax(out.classifier.logits(out.features), axis=1)
    scaled = Classifier(weight=out.classifier.weight / 3.0,
                        bias=out.classifier.bias)
    ids_b = np.argmax(scaled.logits(out.features * 3.0), axis=1)
    assert np.array_equal(ids_a, ids_b)


def test_full_objective_gradient_matches_finite_differences(rng):
    # <=10-splat scene: analytic gradients through blending, cross-entropy,
    # and the neighbor-similarity term against central differences
    scene = make_scene(
        positions=np.column_stack([rng.uniform(-0.4, 0.4, 8),
                                   rng.uniform(-0.4, 0.4, 8),
                                   rng.uniform(1.5, 2.5, 8)]),
        opacity_raw=rng.uniform(-1, 1, 8),
        log_scale=np.log(0.15),
        features=rng.normal(size=(8, 16)),
    )
    cam = axis_camera(20, 16, fx=25.0)
    labels = rng.integers(0, 3, (16, 20)).astype(np.int32)
    weight = rng.normal(size=(3, 16))
    bias = rng.normal(size=3)
    graph = build_neighbor_graph(scene.positions, k=3)
    lam = 0.0005
    _, _, grads = distill_loss_and_grads(scene, cam, labels, weight.copy(),
                                         bias.copy(), graph, lam)

    def total_loss(s):
        l_obj, l_space, _ = distill_loss_and_grads(
            s, cam, labels, weight.copy(), bias.copy(), graph, lam)
        return l_obj + lam * l_space

    h = 1e-4
    for i in range(8):
        for d in (0, 5, 11):
            sp, sm = scene.copy(), scene.copy()
            sp.features[i, d] += h
            sm.features[i, d] -= h
            fd = (total_loss(sp) - total_loss(sm)) / (2 * h)
            assert abs(fd - grads[0][i, d]) <= 1e-4 * max(abs(fd), 1e-6)
