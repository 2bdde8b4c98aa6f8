"""Representative members of every utility family, on a 3-period domain."""

import numpy as np

from scenario_duality.utility import (
    Custom,
    Discounted,
    Log,
    MaxEnvelope,
    Mixed,
    Power,
    PowerEnvelope,
    Scaled,
    StochasticDiscount,
)

GRID = np.array([0.0, 0.5, 1.25, 2.0])
N_NODES = 15  # binary tree with 3 periods
TIME_INDEX = np.repeat([0, 1, 2, 3], [1, 2, 4, 8])


def log_plus_root():
    """log x + 2 sqrt x, with envelopes from the two marginal terms."""
    return Custom(
        lambda t, n, x: np.log(x) + 2.0 * np.sqrt(x),
        lambda t, n, x: 1.0 / x + 1.0 / np.sqrt(x),
        lambda t, n, x: -1.0 / x**2 - 0.5 * x**-1.5,
        MaxEnvelope((PowerEnvelope(1.0, -1.0), PowerEnvelope(1.0, -0.5))),
        MaxEnvelope((PowerEnvelope(2.0, -1.0), PowerEnvelope(2.0, -0.5))),
        name="log_plus_root",
    )


def all_families():
    B = np.linspace(0.6, 1.7, N_NODES)
    return {
        "power": Power(0.4),
        "log": Log(),
        "discounted": Discounted.exponential(Power(0.7), 0.3, GRID),
        "scaled": Scaled(Log(), 2.5),
        "mixed": Mixed(Scaled(Power(0.5), 4.0), Scaled(Log(), 2.0), 3),
        "stochastic_discount": StochasticDiscount(Power(0.3), B),
        "custom": log_plus_root(),
    }


def random_points(rng, n):
    nodes = rng.integers(0, N_NODES, size=n)
    x = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), size=n))
    return TIME_INDEX[nodes], nodes, x
