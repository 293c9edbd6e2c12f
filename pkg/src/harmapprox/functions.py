"""Test-function families evaluated on the embedding of a space."""

from __future__ import annotations

import numpy as np

from .mmspace import MetricMeasureSpace

__all__ = ["FAMILIES", "make_function", "coordinates"]


def coordinates(space: MetricMeasureSpace) -> np.ndarray:
    """Embedding coordinates, or ``index / n`` for abstract graphs."""
    if space.embedding is not None:
        return space.embedding
    return (np.arange(space.n) / max(space.n - 1, 1))[:, None]


def _center(P, center):
    if center is None:
        return 0.5 * (P.min(axis=0) + P.max(axis=0))
    c = np.asarray(center, dtype=float)
    return np.resize(c, P.shape[1])


def coordinate(space, axis: int = 0, power: float = 1.0):
    """``x_axis ** power``."""
    return coordinates(space)[:, axis] ** power


def bump(space, center=None, sigma: float = 0.15):
    P = coordinates(space)
    c = _center(P, center)
    return np.exp(-((P - c) ** 2).sum(axis=1) / (2 * sigma ** 2))


def cusp(space, alpha: float = 0.75, center=None):
    """``|x - c| ** alpha`` (gradient singular at ``c`` for ``alpha < 1``)."""
    P = coordinates(space)
    c = _center(P, center)
    return np.sqrt(((P - c) ** 2).sum(axis=1)) ** alpha


def lacunary(space, seed: int = 0, depth: int = 3, decay: float = 1.5):
    """``sum_j 2**(-decay j) sin(2 pi 2**j <x, e_j> + phase_j)``, random ``e_j``."""
    P = coordinates(space)
    rng = np.random.default_rng([seed, 7])
    f = np.zeros(P.shape[0])
    for j in range(depth + 1):
        e = rng.standard_normal(P.shape[1])
        e /= np.linalg.norm(e)
        f += 2.0 ** (-decay * j) * np.sin(2 * np.pi * 2 ** j * (P @ e) + rng.uniform(0, 2 * np.pi))
    return f


def piecewise(space, center=None, slopes=(1.0, -0.5)):
    """Continuous piecewise-linear ramp with a kink along ``x_0 = c_0``."""
    P = coordinates(space)
    c = _center(P, center)
    u = P[:, 0] - c[0]
    return np.where(u < 0, slopes[0] * u, slopes[1] * u)


FAMILIES = {
    "coordinate": coordinate,
    "bump": bump,
    "cusp": cusp,
    "lacunary": lacunary,
    "piecewise": piecewise,
}


def make_function(space: MetricMeasureSpace, family: str, **params) -> np.ndarray:
    try:
        fn = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown function family {family!r}") from None
    return np.asarray(fn(space, **params), dtype=float)
