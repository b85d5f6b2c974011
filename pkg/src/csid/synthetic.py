"""Planes drawn from the embedding model itself, for recovery checks and diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import ChannelPair, build_design


@dataclass
class SyntheticPair:
    plane_k1: np.ndarray
    plane_k2: np.ndarray
    gamma: np.ndarray
    embeddable: np.ndarray  # bool mask over interior pixels, row-major
    pair: ChannelPair
    J: int


def embedded_pair(shape=(64, 64), J: int = 2, pi0: float = 0.7, sigma: float = 0.01,
                  mixture=((0.5, 0.25, 0.05), (0.5, 0.75, 0.05)), seed: int = 0,
                  gamma=None) -> SyntheticPair:
    """Inter-channel pair (k1=0, k2=1) whose interior follows the embedding model.

    The explanatory plane is i.i.d. uniform on [0.1, 0.9]. A share ``pi0`` of the
    responses is neighbours . gamma + N(0, sigma^2); the rest come from the
    mixture given as (weight, mean, std) triples. gamma defaults to random
    positive weights summing to one.
    """
    rng = np.random.default_rng(seed)
    pair = ChannelPair(0, 1)
    k2 = rng.uniform(0.1, 0.9, shape)
    design = build_design(np.zeros(shape), k2, pair, J)
    if gamma is None:
        gamma = rng.random(design.n_coeffs)
        gamma /= gamma.sum()
    gamma = np.asarray(gamma, dtype=np.float64)
    n = design.n_pixels
    emb = rng.random(n) < pi0
    weights = np.array([w for w, _, _ in mixture], dtype=np.float64)
    comp = rng.choice(len(mixture), size=n, p=weights / weights.sum())
    means = np.array([m for _, m, _ in mixture])[comp]
    stds = np.array([s for _, _, s in mixture])[comp]
    y = np.where(emb, design.neighbors @ gamma + sigma * rng.standard_normal(n),
                 means + stds * rng.standard_normal(n))
    k1 = k2.copy()
    h, w = shape
    k1[J:h - J, J:w - J] = np.clip(y, 0.0, 1.0).reshape(h - 2 * J, w - 2 * J)
    return SyntheticPair(k1, k2, gamma, emb, pair, J)
