"""Core representations: RBMs, multilinear potentials, exact distributions.

Spin variables take values in {-1, +1}.  Exact distributions over n
variables are stored as vectors of length 2**n; configuration index i
encodes variable b as +1 when bit b of i is set and -1 otherwise.
All types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .errors import CapacityError, DomainError, StructuralError

# 2**24 eight-byte probabilities is 128 MiB; anything larger is refused.
ENUMERATION_LIMIT = 24

_CHUNK_BITS = 16  # enumerate at most 2**16 configurations per block


def spin_configurations(n: int, dtype=np.float64) -> np.ndarray:
    """(2**n, n) matrix of all spin vectors under the bit-index convention."""
    idx = np.arange(1 << n, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n)) & 1
    return (2 * bits - 1).astype(dtype)


def _iter_config_blocks(n: int):
    """Yield (start, spins) blocks covering all 2**n configurations."""
    total = 1 << n
    block = min(total, 1 << _CHUNK_BITS)
    cols = np.arange(n, dtype=np.int64)
    for start in range(0, total, block):
        idx = np.arange(start, min(start + block, total), dtype=np.int64)
        bits = (idx[:, None] >> cols) & 1
        yield start, (2 * bits - 1).astype(np.float64)


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RbmModel:
    """Restricted Boltzmann machine (J, h, g) with n visible, m hidden nodes.

    The joint law over (x, y) in {-1,+1}^n x {-1,+1}^m is proportional to
    exp(x^T J y + h.x + g.y).
    """

    n: int
    m: int
    J: np.ndarray
    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        J = np.ascontiguousarray(np.asarray(self.J, dtype=np.float64))
        h = np.ascontiguousarray(np.asarray(self.h, dtype=np.float64))
        g = np.ascontiguousarray(np.asarray(self.g, dtype=np.float64))
        if self.n < 1 or self.m < 0:
            raise StructuralError(f"invalid node counts n={self.n} m={self.m}")
        if J.shape != (self.n, self.m):
            raise StructuralError(f"J has shape {J.shape}, expected {(self.n, self.m)}")
        if h.shape != (self.n,):
            raise StructuralError(f"h has shape {h.shape}, expected {(self.n,)}")
        if g.shape != (self.m,):
            raise StructuralError(f"g has shape {g.shape}, expected {(self.m,)}")
        for name, arr in (("J", J), ("h", h), ("g", g)):
            if not np.all(np.isfinite(arr)):
                raise StructuralError(f"{name} contains non-finite entries")
        for name, arr in (("J", J), ("h", h), ("g", g)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class ModelClassReport:
    """Validity report for an RBM against requested (alpha, beta) bounds.

    ``alpha`` and ``beta`` are the tight bounds computed from the model
    (``alpha`` is +inf for an all-zero interaction matrix); ``alpha_ok`` and
    ``beta_ok`` say whether the *requested* bounds hold.
    """

    alpha: float
    beta: float
    alpha_ok: bool
    beta_ok: bool
    is_locally_consistent: bool
    is_ferromagnetic: bool
    d2: int

    @property
    def is_nondegenerate(self) -> bool:
        return self.alpha_ok and self.beta_ok


class MrfPotential:
    """Multilinear potential q(x) = sum_I q_I prod_{i in I} x_i.

    Terms map variable subsets (frozensets of 0-based indices) to real
    coefficients.  The empty subset is rejected unless ``allow_constant``
    is set; partial potentials are the one place it appears.
    """

    __slots__ = ("n", "_terms")

    def __init__(self, n: int, terms: Mapping[Iterable[int], float] | None = None,
                 allow_constant: bool = False):
        if n < 0:
            raise StructuralError(f"invalid variable count n={n}")
        clean: dict[frozenset, float] = {}
        for key, coef in (terms or {}).items():
            subset = frozenset(int(i) for i in key)
            if not subset and not allow_constant:
                raise StructuralError("empty subset not permitted in a potential")
            if any(i < 0 or i >= n for i in subset):
                raise StructuralError(f"subset {sorted(subset)} out of range for n={n}")
            if subset in clean:
                raise StructuralError(f"duplicate subset {sorted(subset)}")
            coef = float(coef)
            if not math.isfinite(coef):
                raise StructuralError(f"non-finite coefficient for {sorted(subset)}")
            clean[subset] = coef
        self.n = int(n)
        self._terms = clean

    @property
    def terms(self) -> Mapping[frozenset, float]:
        return MappingProxyType(self._terms)

    @property
    def order(self) -> int:
        """Largest subset size present (0 for an empty or constant potential)."""
        return max((len(s) for s in self._terms), default=0)

    def coefficient(self, subset: Iterable[int]) -> float:
        return self._terms.get(frozenset(int(i) for i in subset), 0.0)

    def support_nodes(self) -> frozenset:
        return frozenset().union(*self._terms.keys()) if self._terms else frozenset()

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MrfPotential):
            return NotImplemented
        return self.n == other.n and self._terms == other._terms

    def __repr__(self) -> str:
        return f"MrfPotential(n={self.n}, terms={len(self._terms)}, order={self.order})"

    def values_on(self, spins: np.ndarray) -> np.ndarray:
        """Evaluate q on every row of a (M, n) spin matrix."""
        spins = np.asarray(spins, dtype=np.float64)
        out = np.zeros(spins.shape[0])
        for subset, coef in self._terms.items():
            if subset:
                out += coef * np.prod(spins[:, sorted(subset)], axis=1)
            else:
                out += coef
        return out


@dataclass(frozen=True, eq=False)
class DistributionTable:
    """Exact probability vector over {-1,+1}^n (bit-index convention)."""

    n: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        if probs.shape != (1 << self.n,):
            raise StructuralError(
                f"probs has shape {probs.shape}, expected {(1 << self.n,)}")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise DomainError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise DomainError(f"probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, n: int, weights: np.ndarray) -> "DistributionTable":
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not (total > 0 and np.isfinite(total)):
            raise DomainError("weights must have a positive finite sum")
        return cls(n, w / total)


@dataclass(frozen=True)
class TwoHopGraph:
    """Symmetric neighborhood structure over visible nodes."""

    n: int
    neighbors: tuple

    def __post_init__(self):
        if len(self.neighbors) != self.n:
            raise StructuralError("one neighbor tuple required per node")
        sets = [frozenset(nb) for nb in self.neighbors]
        norm = []
        for i, nb in enumerate(sets):
            if i in nb:
                raise StructuralError(f"node {i} listed as its own neighbor")
            if any(j < 0 or j >= self.n for j in nb):
                raise StructuralError(f"neighbor of node {i} out of range")
            for j in nb:
                if i not in sets[j]:
                    raise StructuralError(f"asymmetric edge ({i}, {j})")
            norm.append(tuple(sorted(nb)))
        object.__setattr__(self, "neighbors", tuple(norm))

    @classmethod
    def from_neighbor_sets(cls, n: int, sets: Iterable[Iterable[int]]) -> "TwoHopGraph":
        return cls(n, tuple(tuple(sorted(set(s))) for s in sets))

    @property
    def d2(self) -> int:
        return max((len(nb) for nb in self.neighbors), default=0)

    def edges(self) -> frozenset:
        return frozenset(
            (min(i, j), max(i, j))
            for i in range(self.n) for j in self.neighbors[i])


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def rbm_validate(model: RbmModel, alpha: float, beta: float) -> ModelClassReport:
    """Check (alpha, beta)-non-degeneracy and classify the model.

    Local consistency means every hidden node's column of J has a uniform
    sign; ferromagnetism additionally requires non-negative fields.
    """
    J, h, g = model.J, model.h, model.g
    nonzero = np.abs(J[J != 0.0])
    tight_alpha = float(nonzero.min()) if nonzero.size else math.inf
    row_strength = np.abs(J).sum(axis=1) + np.abs(h)
    col_strength = np.abs(J).sum(axis=0) + np.abs(g)
    tight_beta = float(max(row_strength.max(initial=0.0), col_strength.max(initial=0.0)))
    locally_consistent = all(
        not (np.any(J[:, j] > 0) and np.any(J[:, j] < 0)) for j in range(model.m))
    ferromagnetic = bool(np.all(J >= 0) and np.all(h >= 0) and np.all(g >= 0))
    return ModelClassReport(
        alpha=tight_alpha,
        beta=tight_beta,
        alpha_ok=bool(tight_alpha >= alpha),
        beta_ok=bool(tight_beta <= beta),
        is_locally_consistent=locally_consistent,
        is_ferromagnetic=ferromagnetic,
        d2=rbm_two_hop(model).d2,
    )


def _log_2cosh(t: np.ndarray) -> np.ndarray:
    """log(2 cosh t), overflow-safe."""
    a = np.abs(t)
    return a + np.log1p(np.exp(-2.0 * a))


def rbm_marginal_distribution(model: RbmModel,
                              limit: int = ENUMERATION_LIMIT) -> DistributionTable:
    """Exact visible marginal p(x) of the RBM, by summing out hidden spins.

    Uses the closed form p(x) proportional to
    exp(h.x) * prod_j 2 cosh((J^T x)_j + g_j), evaluated in log space.
    """
    if model.n > limit:
        raise CapacityError(f"n={model.n} exceeds enumeration limit {limit}")
    logw = np.empty(1 << model.n)
    for start, spins in _iter_config_blocks(model.n):
        theta = spins @ model.J + model.g
        logw[start:start + spins.shape[0]] = (
            spins @ model.h + _log_2cosh(theta).sum(axis=1))
    logw -= logw.max()
    return DistributionTable.from_weights(model.n, np.exp(logw))


def rbm_two_hop(model: RbmModel) -> TwoHopGraph:
    """Two-hop graph: i ~ j iff some hidden node couples to both.

    The zero test is exact equality on stored weights; alpha-non-degenerate
    models never carry small nonzeros, so no epsilon is involved.
    """
    incidence = model.J != 0.0
    adj = incidence @ incidence.T
    np.fill_diagonal(adj, False)
    return TwoHopGraph.from_neighbor_sets(
        model.n, [np.nonzero(adj[i])[0].tolist() for i in range(model.n)])


def mrf_potential_eval(q: MrfPotential, x: Iterable[float]) -> float:
    """Evaluate the potential at one spin vector."""
    x = np.asarray(list(x) if not isinstance(x, np.ndarray) else x, dtype=np.float64)
    if x.shape != (q.n,):
        raise StructuralError(f"x has shape {x.shape}, expected {(q.n,)}")
    if not np.all(np.abs(x) == 1.0):
        raise DomainError("spin entries must be +1 or -1")
    total = 0.0
    for subset, coef in q.terms.items():
        prod = 1.0
        for i in subset:
            prod *= x[i]
        total += coef * prod
    return total


def mrf_partial_potential(q: MrfPotential, u: int) -> MrfPotential:
    """Discrete derivative of q with respect to node u.

    Keeps every monomial containing u with u removed; the coefficient of
    {u} itself becomes the constant (empty-subset) term of the result.
    Satisfies E[X_u | x_other] = tanh(q_u(x_other)) for the induced MRF.
    """
    if u < 0 or u >= q.n:
        raise DomainError(f"node {u} out of range for n={q.n}")
    terms = {subset - {u}: coef for subset, coef in q.terms.items() if u in subset}
    return MrfPotential(q.n, terms, allow_constant=True)


def mrf_distribution(q: MrfPotential, limit: int = ENUMERATION_LIMIT) -> DistributionTable:
    """Gibbs distribution p(x) = exp(q(x)) / Z, normalized in log space."""
    if q.n > limit:
        raise CapacityError(f"n={q.n} exceeds enumeration limit {limit}")
    values = np.empty(1 << q.n)
    for start, spins in _iter_config_blocks(q.n):
        values[start:start + spins.shape[0]] = q.values_on(spins)
    values -= values.max()
    return DistributionTable.from_weights(q.n, np.exp(values))


def induced_mrf_from_distribution(table: DistributionTable, tol: float = 1e-12,
                                  limit: int = ENUMERATION_LIMIT) -> MrfPotential:
    """Multilinear expansion of log p via the fast Walsh transform.

    Returns the potential with q_I = 2**-n * sum_x (prod_{i in I} x_i) log p(x)
    for nonempty I; the constant term is discarded (normalization owns it).
    Coefficients with magnitude <= tol are dropped.
    """
    if table.n > limit:
        raise CapacityError(f"n={table.n} exceeds enumeration limit {limit}")
    if np.any(table.probs <= 0.0):
        raise DomainError("induced potential requires strictly positive probabilities")
    f = np.log(table.probs).copy()
    # Butterfly oriented so F[mask] = sum_x (prod_{b in mask} x_b) f(x)
    # under the bit-index spin convention.
    for b in range(table.n):
        step = 1 << b
        for start in range(0, 1 << table.n, step << 1):
            lo = f[start:start + step].copy()
            hi = f[start + step:start + (step << 1)]
            f[start:start + step] = lo + hi
            f[start + step:start + (step << 1)] = hi - lo
    f /= float(1 << table.n)
    terms = {}
    for mask in range(1, 1 << table.n):
        if abs(f[mask]) > tol:
            terms[frozenset(b for b in range(table.n) if (mask >> b) & 1)] = float(f[mask])
    return MrfPotential(table.n, terms)


# ---------------------------------------------------------------------------
# JSON model / potential files
# ---------------------------------------------------------------------------


def model_to_json_dict(model: RbmModel) -> dict:
    return {
        "n": model.n,
        "m": model.m,
        "J": [list(row) for row in model.J],
        "h": list(model.h),
        "g": list(model.g),
    }


def model_from_json_dict(data: dict) -> RbmModel:
    try:
        return RbmModel(n=int(data["n"]), m=int(data["m"]),
                        J=np.asarray(data["J"], dtype=np.float64).reshape(
                            int(data["n"]), int(data["m"])),
                        h=np.asarray(data["h"], dtype=np.float64),
                        g=np.asarray(data["g"], dtype=np.float64))
    except KeyError as exc:
        raise StructuralError(f"model file missing field {exc}") from exc


def save_model(model: RbmModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json_dict(model), fh)
        fh.write("\n")


def load_model(path) -> RbmModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json_dict(json.load(fh))


def potential_to_json_dict(q: MrfPotential) -> dict:
    # Node indices are 1-based on disk, 0-based in memory.
    entries = sorted(((sorted(s), c) for s, c in q.terms.items()),
                     key=lambda item: (len(item[0]), item[0]))
    return {
        "n": q.n,
        "terms": [{"vars": [i + 1 for i in subset], "coef": coef}
                  for subset, coef in entries],
    }


def potential_from_json_dict(data: dict, allow_constant: bool = False) -> MrfPotential:
    try:
        terms = {frozenset(int(i) - 1 for i in entry["vars"]): float(entry["coef"])
                 for entry in data["terms"]}
        return MrfPotential(int(data["n"]), terms, allow_constant=allow_constant)
    except KeyError as exc:
        raise StructuralError(f"potential file missing field {exc}") from exc


def save_potential(q: MrfPotential, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(potential_to_json_dict(q), fh)
        fh.write("\n")


def load_potential(path, allow_constant: bool = False) -> MrfPotential:
    with open(path, "r", encoding="utf-8") as fh:
        return potential_from_json_dict(json.load(fh), allow_constant=allow_constant)


def table_to_json_dict(table: DistributionTable) -> dict:
    return {"n": table.n, "probs": list(table.probs)}


def table_from_json_dict(data: dict) -> DistributionTable:
    try:
        return DistributionTable(int(data["n"]), np.asarray(data["probs"], dtype=np.float64))
    except KeyError as exc:
        raise StructuralError(f"table file missing field {exc}") from exc


def save_table(table: DistributionTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table_to_json_dict(table), fh)
        fh.write("\n")


def load_table(path) -> DistributionTable:
    with open(path, "r", encoding="utf-8") as fh:
        return table_from_json_dict(json.load(fh))
