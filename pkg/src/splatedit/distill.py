"""Identity feature distillation.

Optimizes per-splat 16-dim identity features and a linear classifier so the
classified feature renders reproduce the associated label maps. Everything
except the identity vectors (and the classifier) stays frozen; afterwards
each splat's object id is baked as the argmax of its classified feature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .optim import Adam
from .raster import backward_features, render
from .scene import Classifier, FEATURE_DIM, GaussianScene, MAX_OBJECT_IDS

EPS_NORM = 1e-8


@dataclass
class DistillConfig:
    iterations: int = 2000
    spatial_weight: float = 0.0005  # weight of the neighbor-similarity loss
    neighbors: int = 5
    learning_rate: float = 0.0025
    seed: int = 0

    def validate(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.spatial_weight < 0:
            raise ValueError("spatial_weight must be >= 0")
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")


def build_neighbor_graph(positions: np.ndarray, k: int) -> np.ndarray:
    """Indices of each splat's k nearest neighbors (no self-loops).

    With fewer than k other splats, every other splat is a neighbor and the
    row is padded by cycling through them.
    """
    n = len(positions)
    if n < 2:
        raise ValueError("neighbor graph needs at least 2 splats")
    k_eff = min(k, n - 1)
    dist, idx = cKDTree(positions).query(positions, k=k_eff + 1)
    rows = []
    for i in range(n):
        row = [j for j in idx[i] if j != i][:k_eff]
        while len(row) < k_eff:  # exact duplicates can shadow the self match
            row.append((i + 1 + len(row)) % n)
        rows.append(row)
    return np.asarray(rows, dtype=np.int64)


def classify(feature_map: np.ndarray, classifier: Classifier):
    """Per-pixel softmax classification of a rendered feature map.

    Returns (probability map H x W x C, predicted label map). Class slots
    coincide with object ids; slot 0 is background/unlabeled.
    """
    h, w, fdim = feature_map.shape
    if fdim != classifier.weight.shape[1]:
        raise ValueError("feature dimension does not match classifier")
    logits = feature_map.reshape(-1, fdim) @ classifier.weight.T + classifier.bias
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    labels = np.argmax(p, axis=1).astype(np.int32)
    c = classifier.num_classes
    return p.reshape(h, w, c), labels.reshape(h, w)


def loss_obj(prob_map: np.ndarray, labels: np.ndarray) -> float:
    """Mean multi-class cross-entropy; label 0 supervises the background slot."""
    h, w, _ = prob_map.shape
    if labels.shape != (h, w):
        raise ValueError("label map shape mismatch")
    p_true = prob_map.reshape(-1, prob_map.shape[2])[
        np.arange(h * w), labels.reshape(-1)]
    return float(np.mean(-np.log(np.maximum(p_true, 1e-300))))


def loss_space(features: np.ndarray, graph: np.ndarray) -> float:
    """Mean over splats of (1 - mean cosine similarity to the k neighbors)."""
    return _space_loss_grad(features, graph, want_grad=False)[0]


def _space_loss_grad(features: np.ndarray, graph: np.ndarray, want_grad=True):
    n, k = graph.shape
    f = features
    fn = f[graph]                              # (n, k, d)
    norm = np.maximum(np.linalg.norm(f, axis=1), EPS_NORM)
    norm_n = norm[graph]                       # (n, k)
    dots = np.einsum("nd,nkd->nk", f, fn)
    cos = dots / (norm[:, None] * norm_n)
    loss = float(np.mean(1.0 - cos.mean(axis=1)))
    if not want_grad:
        return loss, None
    scale = -1.0 / (n * k)
    inv = 1.0 / (norm[:, None] * norm_n)
    # d cos(a,b)/da = b/(|a||b|) - cos * a/|a|^2, and symmetrically for b
    grad = scale * np.einsum("nk,nkd->nd", inv, fn)
    grad += scale * (-np.sum(cos / norm[:, None] ** 2, axis=1))[:, None] * f
    gb = scale * (inv[:, :, None] * f[:, None, :]
                  - (cos / norm_n ** 2)[:, :, None] * fn)
    np.add.at(grad, graph.reshape(-1), gb.reshape(n * k, -1))
    return loss, grad


def distill_loss_and_grads(scene: GaussianScene, camera, labels: np.ndarray,
                           weight: np.ndarray, bias: np.ndarray,
                           graph: np.ndarray, spatial_weight: float,
                           backend: str | None = None):
    """One view's losses and gradients for (features, weight, bias)."""
    rendered = render(scene, camera, channels=("feature",), with_records=True,
                      backend=backend)
    h, w = labels.shape
    flat = rendered.feature.reshape(-1, FEATURE_DIM)
    logits = flat @ weight.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    lab = labels.reshape(-1)
    npix = lab.size
    l_obj = float(np.mean(-np.log(np.maximum(p[np.arange(npix), lab], 1e-300))))
    g_logits = p
    g_logits[np.arange(npix), lab] -= 1.0
    g_logits /= npix
    g_fmap = (g_logits @ weight).reshape(h, w, FEATURE_DIM)
    g_feat = backward_features(scene, rendered, g_fmap, backend=backend)
    g_weight = g_logits.T @ flat
    g_bias = g_logits.sum(axis=0)
    l_space, g_space = _space_loss_grad(scene.features, graph)
    g_feat += spatial_weight * g_space
    return l_obj, l_space, [g_feat, g_weight, g_bias]


def distill(scene: GaussianScene, cameras, label_maps, config: DistillConfig,
            log_cb=None, backend: str | None = None) -> GaussianScene:
    """Train identity features + classifier against associated label maps.

    One uniformly random training view per Adam step (seeded). Returns a new
    scene with trained features, the classifier, and baked object ids; all
    other splat parameters are untouched.
    """
    config.validate()
    if len(cameras) != len(label_maps) or not cameras:
        raise ValueError("cameras and label maps must pair up (and be non-empty)")
    max_label = max(int(np.max(lm)) for lm in label_maps)
    if max_label < 1:
        raise ValueError("no labeled pixels in any view")
    if max_label > MAX_OBJECT_IDS:
        raise ValueError("label maps exceed 256 object ids")
    n_classes = max_label + 1  # slot 0 models background

    rng = np.random.default_rng(config.seed)
    out = scene.copy()
    n = len(out)
    out.features = rng.standard_normal((n, FEATURE_DIM))
    weight = rng.standard_normal((n_classes, FEATURE_DIM)) / np.sqrt(FEATURE_DIM)
    bias = np.zeros(n_classes)
    graph = build_neighbor_graph(out.positions, config.neighbors)

    opt = Adam([out.features, weight, bias], lr=config.learning_rate)
    for it in range(config.iterations):
        view = int(rng.integers(len(cameras)))
        l_obj, l_space, grads = distill_loss_and_grads(
            out, cameras[view], label_maps[view], weight, bias, graph,
            config.spatial_weight, backend=backend)
        total = l_obj + config.spatial_weight * l_space
        opt.step(grads)
        if log_cb is not None:
            log_cb(it, l_obj, l_space, total)

    classifier = Classifier(weight=weight, bias=bias)
    out.classifier = classifier
    out.object_ids = np.argmax(classifier.logits(out.features), axis=1).astype(np.int32)
    return out
