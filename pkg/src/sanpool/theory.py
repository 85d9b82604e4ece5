"""Numerical checks of what a ReLU set embedding can and cannot lose.

* :func:`relu_profile` evaluates ``b -> sum_i relu(v s_i + b)`` for a 1-D set.
* :func:`recover_1d_set` reads the set back off the profile's kinks.
* :func:`injectivity_check` embeds a universe of distinct sets with random
  ReLU neurons and counts pairs that land on the same point.
* :func:`maxlimit_convergence_check` tracks how fast the smooth maxima
  approach the true maximum as the exponent grows.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .aggregation import power_max_approx
from .errors import ContractError


@dataclass
class ProfileReport:
    direction: np.ndarray
    bias_grid: np.ndarray
    values: np.ndarray


@dataclass
class CollisionReport:
    M: int
    trials: int
    pairs_tested: int
    min_pair_distance: float
    collisions: int


def relu_profile(values, v, bias_grid):
    s = np.asarray(values, dtype=np.float64).reshape(-1)
    grid = np.asarray(bias_grid, dtype=np.float64).reshape(-1)
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ContractError("bias grid must be strictly ascending")
    proj = float(v) * s
    vals = np.maximum(proj[None, :] + grid[:, None], 0.0).sum(axis=1)
    return ProfileReport(np.atleast_1d(np.asarray(v, dtype=np.float64)), grid, vals)


def uniform_grid(lo, hi, h):
    """Ascending grid from ``lo`` to ``hi`` (inclusive) with step ``h``."""
    k = int(np.floor((hi - lo) / h + 1e-9))
    return lo + h * np.arange(k + 1)


def recover_1d_set(profile, grid_step=None, tol=1e-6):
    """Estimate the set behind a profile from its discrete second differences.

    The second difference ``(f(b-h) - 2 f(b) + f(b+h)) / h`` carries unit mass
    per element, placed at (or split between the grid points next to) the kink
    ``b = -v s``.  Contiguous runs of mass are grouped; a run whose masses are
    all integral yields one element per grid point, otherwise a single element
    at the mass-weighted mean.  Returns a sorted list of ``(value, multiplicity)``.
    """
    grid = profile.bias_grid
    f = profile.values
    v = float(np.asarray(profile.direction).reshape(-1)[0])
    if v == 0:
        raise ContractError("a zero direction carries no information about the set")
    if grid.size < 3:
        raise ContractError("need at least three grid points")
    steps = np.diff(grid)
    h = float(steps[0]) if grid_step is None else float(grid_step)
    if not np.allclose(steps, h, rtol=1e-9, atol=1e-12):
        raise ContractError("profile must be sampled on a uniform grid with the given step")
    mass = (f[:-2] - 2.0 * f[1:-1] + f[2:]) / h
    b = grid[1:-1]
    active = np.abs(mass) > tol
    found = []
    i = 0
    while i < mass.size:
        if not active[i]:
            i += 1
            continue
        j = i
        while j < mass.size and active[j]:
            j += 1
        run_m, run_b = mass[i:j], b[i:j]
        if np.all(np.abs(run_m - np.round(run_m)) < 1e-6):
            found += [(-bb / v, int(round(m))) for bb, m in zip(run_b, run_m) if round(m) > 0]
        else:
            total = run_m.sum()
            mult = int(round(total))
            if mult > 0:
                found.append((-float(np.dot(run_m, run_b) / total) / v, mult))
        i = j
    return sorted((float(x), m) for x, m in found)


def expand_multiset(recovered):
    return np.array([x for x, m in recovered for _ in range(m)], dtype=np.float64)


def random_relu_neurons(M, dim, radius, seed):
    """First ``M`` neurons of a seeded stream: weights N(0, 1), biases U[-R, R].

    Weights and biases come from separate child streams, so the neurons drawn
    for a smaller ``M`` are a prefix of those for a larger one.
    """
    wseed, bseed = np.random.SeedSequence(seed).spawn(2)
    V = np.random.default_rng(wseed).standard_normal((M, dim))
    b = np.random.default_rng(bseed).uniform(-radius, radius, M)
    return V, b


def embed_sets(universe, V, b):
    """ReLU SAN embeddings; rows are summed in sorted order, so any ordering
    of the same multiset gives a bit-identical embedding."""
    out = np.empty((len(universe), V.shape[0]))
    for k, X in enumerate(universe):
        X = np.asarray(X, dtype=np.float64)
        X = X.reshape(X.shape[0], -1)
        X = X[np.lexsort(X.T[::-1])]
        out[k] = np.maximum(X @ V.T + b, 0.0).sum(axis=0)
    return out


def subsets_universe(n_values=10, size=2):
    """All ``size``-element subsets of {0, ..., n_values - 1} as column matrices."""
    return [np.array(c, dtype=np.float64)[:, None]
            for c in itertools.combinations(range(n_values), size)]


def injectivity_check(universe, M, seed, threshold=1e-9, radius=None):
    """Count pairs of distinct sets whose random-ReLU SAN embeddings coincide."""
    universe = [np.asarray(X, dtype=np.float64).reshape(len(X), -1) for X in universe]
    dim = universe[0].shape[1]
    if radius is None:
        radius = max(float(np.abs(X).max()) for X in universe) or 1.0
    V, b = random_relu_neurons(M, dim, radius, seed)
    emb = embed_sets(universe, V, b)
    pairs = 0
    collisions = 0
    min_dist = np.inf
    for i in range(len(emb)):
        d = np.linalg.norm(emb[i + 1:] - emb[i], axis=1)
        pairs += d.size
        if d.size:
            collisions += int(np.sum(d < threshold))
            min_dist = min(min_dist, float(d.min()))
    return CollisionReport(M=M, trials=len(universe), pairs_tested=pairs,
                           min_pair_distance=float(min_dist) if pairs else 0.0,
                           collisions=collisions)


def smooth_max_error(values, p, mode="power"):
    """``smooth_max_p(values) - max(values)`` without cancellation.

    With ``r`` the sum of the terms of all but one maximal element, the power
    error is ``m * expm1(log1p(r) / p)`` and the log-sum-exp error is
    ``log1p(r) / p``; subtracting the maximum from the rounded smooth maximum
    would lose everything below one ulp of ``m``.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    power_max_approx(x, p, mode)  # validates domain and mode
    m, rest = x[-1], x[:-1]
    if mode == "power":
        r = float(np.sum((rest / m) ** p))
        return float(m * np.expm1(np.log1p(r) / p))
    r = float(np.sum(np.exp(p * (rest - m))))
    return float(np.log1p(r) / p)


def maxlimit_convergence_check(values, p_schedule, mode="power"):
    """Absolute errors ``|smooth_max_p - max|`` along an ascending exponent schedule."""
    p_schedule = [float(p) for p in p_schedule]
    if any(b <= a for a, b in zip(p_schedule, p_schedule[1:])):
        raise ContractError("exponent schedule must be strictly ascending")
    return np.array([smooth_max_error(values, p, mode) for p in p_schedule])


def maxlimit_bound(values, p, mode="power"):
    """Analytic upper bound on the smooth-max error for this set and exponent."""
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    n = x.size
    if mode == "power":
        return float(x.max() * (n ** (1.0 / p) - 1.0))
    return float(np.log(n) / p)
