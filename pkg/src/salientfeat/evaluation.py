"""Held-out evaluation helpers for desk-scale experiments: matching accuracy
on synthetic pairs, a random-keypoint control with the same budget, and the
style statistic the covariance loss is supposed to push down."""

from __future__ import annotations

import numpy as np

from .covariance import (build_masks, covariance_difference, masked_means,
                         standardize, standardized_covariance)
from .extraction import ExtractConfig, Keypoint, KeypointSet, extract
from .matching import average_reports, match, mma
from .network import Network, forward
from .synth import AugmentConfig, PairSample, make_scene, synth_pair
from .tensor import Tensor, no_grad


def eval_extract_config(budget: int) -> ExtractConfig:
    """Threshold-free extraction used for evaluation: keep the ``budget``
    best local maxima by score so budgets stay comparable across models."""
    return ExtractConfig(rel_thresh=0.0, rep_thresh=0.0, topk=budget,
                         nms_radius=3)


def make_eval_pairs(count: int, crop: int, seed: int,
                    kind: str = "mixed") -> list[PairSample]:
    """Seeded held-out pairs on fresh scenes. ``kind`` is one of ``warp``
    (geometry only), ``photometric`` (style only) or ``mixed``."""
    presets = {
        "warp": dict(perspective_jitter=0.12, brightness=0.0, contrast=0.0,
                     hue=0.0, noise=0.0),
        "photometric": dict(perspective_jitter=0.0, brightness=0.25,
                            contrast=0.3, hue=0.25, noise=0.02),
        "mixed": dict(perspective_jitter=0.12, brightness=0.2, contrast=0.25,
                      hue=0.15, noise=0.02),
    }
    if kind not in presets:
        raise ValueError(f"unknown pair kind {kind!r}")
    cfg = AugmentConfig(crop=crop, **presets[kind])
    root = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        scene = make_scene(np.random.default_rng(root.integers(0, 2**63)),
                           crop + 24)
        pairs.append(synth_pair(scene, root, cfg))
    return pairs


def pair_mma3(net: Network, pair: PairSample, budget: int) -> float:
    """MMA at 3 px of mutual nearest-neighbour matches on one pair."""
    cfg = eval_extract_config(budget)
    with no_grad():
        ka = extract(forward(net, pair.image_a), cfg)
        kb = extract(forward(net, pair.image_b), cfg)
    if len(ka) == 0 or len(kb) == 0:
        return 0.0
    report = mma(match(ka, kb), ka, kb, pair.homography)
    return report.fraction_at(3)


def evaluate_mma3(net: Network, pairs: list[PairSample], budget: int) -> float:
    return float(np.mean([pair_mma3(net, p, budget) for p in pairs]))


def random_keypoint_mma3(net: Network, pairs: list[PairSample], budget: int,
                         seed: int) -> float:
    """Control with the same keypoint budget and the same descriptors but
    uniformly random keypoint locations instead of detected ones."""
    rng = np.random.default_rng(seed)
    scores = []
    for pair in pairs:
        with no_grad():
            fa = forward(net, pair.image_a)
            fb = forward(net, pair.image_b)
        ka = _random_set(fa, budget, rng)
        kb = _random_set(fb, budget, rng)
        report = mma(match(ka, kb), ka, kb, pair.homography)
        scores.append(report.fraction_at(3))
    return float(np.mean(scores))


def _random_set(maps, budget: int, rng: np.random.Generator) -> KeypointSet:
    _, h, w = maps.descriptors.shape
    ii = rng.integers(0, h, size=budget)
    jj = rng.integers(0, w, size=budget)
    desc = maps.descriptors.data[:, ii, jj].T.copy()
    desc /= np.maximum(np.linalg.norm(desc, axis=1, keepdims=True), 1e-8)
    points = [Keypoint(float(x), float(y), 1.0, 1.0) for x, y in zip(jj, ii)]
    return KeypointSet(points, desc)


def style_mean_on_pairs(net: Network, pairs: list[PairSample]) -> float:
    """Average style-masked mean of the covariance difference over pairs,
    with masks rebuilt from each pair's current statistics."""
    values = []
    for pair in pairs:
        with no_grad():
            fa = forward(net, pair.image_a)
            fb = forward(net, pair.image_b)
            sigma = covariance_difference(
                standardized_covariance(standardize(fa.descriptors)),
                standardized_covariance(standardize(fb.descriptors)))
        masks = build_masks(sigma)
        sty, _ = masked_means(sigma, masks)
        values.append(sty)
    return float(np.mean(values))
