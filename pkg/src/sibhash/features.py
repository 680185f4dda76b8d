"""Kernelized, mean-centered input features built from anchor points.

A fitted pipeline maps a raw feature vector x to the vector of RBF responses
``exp(-gamma * ||x - a_j||^2)`` over p anchors, minus the training-set mean of
those responses. The centering makes downstream sign bits fire near 50% of
the time; queries reuse the stored training mean, never their own batch mean.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist


@dataclass(frozen=True)
class KernelPipeline:
    """Anchor points, RBF bandwidth gamma, and the training response mean."""

    anchors: np.ndarray          # (p, d_raw)
    bandwidth: float             # gamma, units 1 / squared feature distance
    center_mean: np.ndarray      # (p,)

    def __post_init__(self):
        if self.anchors.ndim != 2 or self.anchors.shape[0] < 1:
            raise ValueError("anchors must be a non-empty 2-D matrix")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.center_mean.shape != (self.anchors.shape[0],):
            raise ValueError("center_mean length must equal anchor count")

    @property
    def n_anchors(self):
        return self.anchors.shape[0]


def _stratified_anchor_order(labels, rng):
    """Interleave class members round-robin so anchors span all classes."""
    labels = np.asarray(labels)
    classes = rng.permutation(np.unique(labels))
    per_class = [rng.permutation(np.nonzero(labels == y)[0]) for y in classes]
    order = []
    depth = 0
    while len(order) < labels.size:
        for members in per_class:
            if depth < members.size:
                order.append(members[depth])
        depth += 1
    return np.asarray(order)


def fit_kernel_pipeline(raw, n_anchors, seed, labels=None, bandwidth=None):
    """Sample anchors and fit the RBF response pipeline.

    Anchors are drawn uniformly without replacement; when ``labels`` are
    supplied the draw is class-stratified. ``bandwidth`` defaults to the
    median heuristic, gamma = 1 / median of squared pairwise anchor
    distances.
    """
    raw = np.asarray(raw, dtype=np.float64)
    n = raw.shape[0]
    if not 1 <= n_anchors <= n:
        raise ValueError(f"n_anchors={n_anchors} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    if labels is not None:
        order = _stratified_anchor_order(labels, rng)
    else:
        order = rng.permutation(n)
    anchors = raw[order[:n_anchors]].copy()

    if bandwidth is None:
        if n_anchors < 2:
            raise ValueError(
                "median-heuristic bandwidth needs at least 2 anchors; "
                "pass bandwidth explicitly"
            )
        med = np.median(pdist(anchors, "sqeuclidean"))
        if med <= 0.0:
            raise ValueError(
                "anchor set is degenerate: median pairwise squared distance "
                "is zero (identical rows)"
            )
        bandwidth = 1.0 / med

    responses = np.exp(-bandwidth * cdist(raw, anchors, "sqeuclidean"))
    return KernelPipeline(
        anchors=anchors,
        bandwidth=float(bandwidth),
        center_mean=responses.mean(axis=0),
    )


def apply_kernel_pipeline(pipe, raw):
    """Centered RBF responses of ``raw`` rows against the pipeline anchors."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[1] != pipe.anchors.shape[1]:
        raise ValueError(
            f"feature dim {raw.shape[1]} does not match anchor dim "
            f"{pipe.anchors.shape[1]}"
        )
    responses = np.exp(-pipe.bandwidth * cdist(raw, pipe.anchors, "sqeuclidean"))
    return responses - pipe.center_mean


def mean_center(features):
    """Subtract column means; returns (centered, mean) so queries can reuse it."""
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    return features - mean, mean
