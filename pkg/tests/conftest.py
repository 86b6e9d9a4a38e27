"""Shared brute-force oracles, kept deliberately naive and independent of
the library's vectorized implementations."""

import itertools
import math

import numpy as np
import pytest

from rbmtomo import RbmModel


def all_spin_vectors(n):
    """Spin vectors in the library's index order: bit b of the index is
    variable b, 0 -> -1 and 1 -> +1."""
    out = []
    for idx in range(2 ** n):
        out.append(tuple(1 if (idx >> b) & 1 else -1 for b in range(n)))
    return out


def brute_force_marginal(model: RbmModel):
    """Visible marginal by summing exp(x.J.y + h.x + g.y) over all (x, y)."""
    weights = []
    for x in all_spin_vectors(model.n):
        total = 0.0
        for y in all_spin_vectors(model.m):
            energy = sum(model.h[i] * x[i] for i in range(model.n))
            energy += sum(model.g[j] * y[j] for j in range(model.m))
            for i, j in itertools.product(range(model.n), range(model.m)):
                energy += x[i] * model.J[i, j] * y[j]
            total += math.exp(energy)
        weights.append(total)
    z = sum(weights)
    return np.array([w / z for w in weights])


def slow_cond_covariance_avg(probs, n, u, v, cond):
    """Average conditional covariance straight from its definition."""
    spins = all_spin_vectors(n)
    total = 0.0
    for assignment in itertools.product((-1, 1), repeat=len(cond)):
        sel = [i for i, x in enumerate(spins)
               if all(x[s] == a for s, a in zip(cond, assignment))]
        mass = sum(probs[i] for i in sel)
        if mass == 0.0:
            continue
        e_u = sum(probs[i] * spins[i][u] for i in sel) / mass
        e_v = sum(probs[i] * spins[i][v] for i in sel) / mass
        e_uv = sum(probs[i] * spins[i][u] * spins[i][v] for i in sel) / mass
        total += mass * (e_uv - e_u * e_v)
    return total


def slow_empirical_cov_avg(shots, u, v, cond):
    """Plug-in stratified covariance from a list of shot tuples."""
    strata = {}
    for row in shots:
        strata.setdefault(tuple(row[s] for s in cond), []).append(row)
    total = 0.0
    for rows in strata.values():
        m = len(rows)
        e_u = sum(r[u] for r in rows) / m
        e_v = sum(r[v] for r in rows) / m
        e_uv = sum(r[u] * r[v] for r in rows) / m
        total += (m / len(shots)) * (e_uv - e_u * e_v)
    return total


def slow_influence(probs, n, u, cond):
    """E[X_u | X_cond = all ones] by direct summation."""
    spins = all_spin_vectors(n)
    sel = [i for i, x in enumerate(spins) if all(x[s] == 1 for s in cond)]
    mass = sum(probs[i] for i in sel)
    if mass == 0.0:
        return None
    return sum(probs[i] * spins[i][u] for i in sel) / mass


def slow_potential_eval(terms, x):
    """Term-by-term multilinear evaluation (terms: dict subset-tuple -> coef)."""
    total = 0.0
    for subset, coef in terms.items():
        prod = 1.0
        for i in subset:
            prod *= x[i]
        total += coef * prod
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)
