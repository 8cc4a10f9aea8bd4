"""Gradient verification of the full MOST loss on small random instances."""

from __future__ import annotations

import numpy as np

from .autodiff import finite_difference_check
from .core import BackgroundGraph, Quadruple
from .model import MOST, HyperConfig, init_params

TINY = dict(d=8, dt=8, layers=1, activation="tanh", dropout=0.0, k=4, batch=2, episodes=0)


def random_instance(config: HyperConfig, num_entities: int = 5, num_frequent: int = 2,
                    num_queries: int = 2, num_background: int = 20, num_timestamps: int = 10,
                    seed: int = 0):
    """Random background, one sparse task and freshly perturbed parameters.

    Gates and phases are moved off their initial values so that no gradient
    path is trivially zero.
    """
    rng = np.random.default_rng(seed)
    sparse = num_frequent
    num_relations = num_frequent + 1

    def quad(r):
        s, o = rng.choice(num_entities, 2, replace=False)
        return Quadruple(int(s), r, int(o), int(rng.integers(num_timestamps)))

    background = BackgroundGraph([quad(int(rng.integers(num_frequent))) for _ in range(num_background)],
                                 frozenset(range(num_frequent)))
    support = quad(sparse)
    queries = [quad(sparse) for _ in range(num_queries)]
    params = init_params(config, num_entities, range(num_frequent), num_relations, num_timestamps, seed=seed)
    for t in params:
        t.value = np.asarray(t.value + rng.normal(scale=0.3, size=t.shape))
    model = MOST(params, config, background, num_relations)
    return model, support, queries


def gradient_check(config: HyperConfig | None = None, seed: int = 0, epsilon: float = 1e-5, **sizes) -> dict[str, float]:
    """Max relative error per parameter group between tape and central differences."""
    config = config or HyperConfig(**TINY)
    model, support, queries = random_instance(config, seed=seed, **sizes)

    def loss():
        return model.loss(model.forward_task(support, queries))

    return {name: finite_difference_check(loss, [t], epsilon) for name, t in model.params.items()}
