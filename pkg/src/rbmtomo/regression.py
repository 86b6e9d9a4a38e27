"""Alphatron regression of per-node partial potentials and their assembly.

For a node u with neighborhood N, each shot is mapped to the feature
vector of all monomials over subsets of N (a multilinear basis of size
2**|N|) and to the rescaled target (x_u + 1)/2.  The fitted weights of
the link (1 + tanh z)/2 ARE the partial-potential coefficients: the
conditional mean identity E[X_u | rest] = tanh(q_u(rest)) becomes
E[(X_u+1)/2 | rest] = (1 + tanh(q_u))/2 after the affine rescaling, so no
weight conversion is needed.

The iteration runs in primal form: the feature dimension 2**|N| is small
under a bounded two-hop degree, and the primal step is algebraically the
multinomial-kernel step restricted to subsets of N.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CapacityError, DomainError, StructuralError
from .models import (DistributionTable, ENUMERATION_LIMIT, MrfPotential,
                     TwoHopGraph, mrf_distribution, potential_from_json_dict,
                     potential_to_json_dict, spin_configurations)
from .sampling import SampleSet


@dataclass(frozen=True)
class AlphatronConfig:
    """Hyperparameters of the regression step.

    ``learning_rate`` is the 1/L step of the Alphatron analysis with L = 1
    adopted for the (1 + tanh z)/2 link.  ``iterations = None`` picks the
    default max(100, ceil(sqrt(M)) * 10).  ``feature_order_cap`` truncates
    the monomial basis; None keeps all subsets of the neighborhood.
    """

    learning_rate: float = 1.0
    iterations: Optional[int] = None
    holdout_fraction: float = 0.2
    feature_order_cap: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise DomainError("learning_rate must be >= 0")
        if self.iterations is not None and self.iterations < 1:
            raise DomainError("iterations must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise DomainError("holdout_fraction must lie in (0, 1)")

    def resolve_iterations(self, n_samples: int) -> int:
        if self.iterations is not None:
            return self.iterations
        return max(100, int(math.ceil(math.sqrt(n_samples))) * 10)


@dataclass(frozen=True)
class AlphatronFit:
    """Weights of the holdout-selected iterate plus the loss curve."""

    weights: np.ndarray
    holdout_curve: tuple
    chosen_iteration: int


@dataclass(frozen=True)
class NodeRegressionResult:
    """Learned partial potential of one node.

    ``partial`` lives on the variables other than ``node``; its constant
    (empty-subset) term is the coefficient that assembly maps to the
    singleton monomial {node}.
    """

    node: int
    neighborhood: tuple
    partial: MrfPotential
    holdout_curve: tuple
    chosen_iteration: int


def _link(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(z))


def neighbor_subsets(neighborhood: Iterable[int],
                     max_order: Optional[int] = None) -> tuple:
    """All subsets of the neighborhood in binary-counter order.

    Subset j of sorted(neighborhood) contains element b iff bit b of j is
    set, so the empty set comes first.  ``max_order`` drops larger subsets
    while preserving the order of the rest.
    """
    nodes = sorted(set(int(i) for i in neighborhood))
    out = []
    for mask in range(1 << len(nodes)):
        subset = tuple(nodes[b] for b in range(len(nodes)) if (mask >> b) & 1)
        if max_order is None or len(subset) <= max_order:
            out.append(subset)
    return tuple(out)


def _feature_matrix(spins: np.ndarray, subsets: Sequence[tuple]) -> np.ndarray:
    rows = spins.shape[0]
    feats = np.ones((rows, len(subsets)))
    for j, subset in enumerate(subsets):
        for i in subset:
            feats[:, j] *= spins[:, i]
    return feats


def build_node_features(samples: SampleSet, u: int, n2u: Iterable[int],
                        max_order: Optional[int] = None):
    """Per-shot monomial features over subsets of n2u and targets (x_u+1)/2.

    Every feature coordinate is +-1 (the empty subset gives the constant
    1), so full feature vectors have Euclidean norm exactly 2**(|n2u|/2).
    """
    n2u = sorted(set(int(i) for i in n2u))
    if u in n2u:
        raise DomainError("u must not belong to its own neighborhood")
    if any(i < 0 or i >= samples.n for i in (u, *n2u)):
        raise DomainError("node index out of range")
    subsets = neighbor_subsets(n2u, max_order)
    spins = samples.shots.astype(np.float64)
    features = _feature_matrix(spins, subsets)
    targets = 0.5 * (spins[:, u] + 1.0)
    return features, targets


def alphatron_fit(features: np.ndarray, targets: np.ndarray,
                  cfg: AlphatronConfig,
                  sample_weight: Optional[np.ndarray] = None) -> AlphatronFit:
    """Isotonic-style GLM regression with holdout iterate selection.

    Maintains w (w_0 = 0); at each step predicts h(x) = (1+tanh<w,phi>)/2
    on the training split and updates w += lr * mean((y - h) phi).  Every
    iterate's mean squared loss on the holdout split is recorded and the
    best iterate is returned (ties to the earliest).

    With ``sample_weight`` the rows are treated as a weighted population:
    no split is made and the weighted loss doubles as the holdout curve.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.ndim != 2 or targets.shape != (features.shape[0],):
        raise StructuralError("features must be (M, D) with matching targets")
    if not np.all(np.isfinite(features)):
        raise DomainError("features must be finite")
    if np.any(targets < 0.0) or np.any(targets > 1.0):
        raise DomainError("targets must lie in [0, 1]")
    rows, dim = features.shape
    if sample_weight is None:
        rng = np.random.default_rng(cfg.seed)
        order = rng.permutation(rows)
        n_holdout = int(round(cfg.holdout_fraction * rows))
        if n_holdout < 1 or rows - n_holdout < 1:
            raise DomainError(
                f"holdout fraction {cfg.holdout_fraction} leaves an empty split "
                f"for {rows} rows")
        ho, tr = order[:n_holdout], order[n_holdout:]
        f_tr, y_tr = features[tr], targets[tr]
        f_ho, y_ho = features[ho], targets[ho]
        w_tr = np.full(tr.size, 1.0 / tr.size)
        w_ho = np.full(ho.size, 1.0 / ho.size)
    else:
        weight = np.asarray(sample_weight, dtype=np.float64)
        if weight.shape != (rows,) or np.any(weight < 0) or weight.sum() <= 0:
            raise DomainError("sample_weight must be non-negative with positive sum")
        weight = weight / weight.sum()
        f_tr = f_ho = features
        y_tr = y_ho = targets
        w_tr = w_ho = weight
    iters = cfg.resolve_iterations(rows)
    w = np.zeros(dim)
    curve = []
    best_loss, best_w, best_t = math.inf, w.copy(), 0
    for t in range(iters + 1):
        loss = float(w_ho @ (_link(f_ho @ w) - y_ho) ** 2)
        curve.append(loss)
        if loss < best_loss:
            best_loss, best_w, best_t = loss, w.copy(), t
        if t == iters:
            break
        residual = y_tr - _link(f_tr @ w)
        w = w + cfg.learning_rate * (f_tr.T @ (w_tr * residual))
    return AlphatronFit(weights=best_w, holdout_curve=tuple(curve),
                        chosen_iteration=best_t)


def _result_from_fit(n: int, u: int, n2u: Sequence[int], subsets: Sequence[tuple],
                     fit: AlphatronFit) -> NodeRegressionResult:
    terms = {frozenset(s): float(c) for s, c in zip(subsets, fit.weights)}
    partial = MrfPotential(n, terms, allow_constant=True)
    return NodeRegressionResult(node=u, neighborhood=tuple(sorted(n2u)),
                                partial=partial,
                                holdout_curve=fit.holdout_curve,
                                chosen_iteration=fit.chosen_iteration)


def learn_node_potential(samples: SampleSet, u: int, n2u: Iterable[int],
                         cfg: AlphatronConfig) -> NodeRegressionResult:
    """Fit the partial potential of node u over its known neighborhood."""
    n2u = sorted(set(int(i) for i in n2u))
    features, targets = build_node_features(samples, u, n2u, cfg.feature_order_cap)
    fit = alphatron_fit(features, targets, cfg)
    subsets = neighbor_subsets(n2u, cfg.feature_order_cap)
    return _result_from_fit(samples.n, u, n2u, subsets, fit)


def learn_node_potential_exact(table: DistributionTable, u: int,
                               n2u: Iterable[int],
                               cfg: AlphatronConfig) -> NodeRegressionResult:
    """Infinite-sample mode: regression against exact conditional means.

    Builds one weighted row per neighborhood assignment, with weight equal
    to its exact marginal probability and target (1 + E[X_u | a]) / 2
    computed from the table.
    """
    n2u = sorted(set(int(i) for i in n2u))
    if u in n2u:
        raise DomainError("u must not belong to its own neighborhood")
    if any(i < 0 or i >= table.n for i in (u, *n2u)):
        raise DomainError("node index out of range")
    spins = spin_configurations(table.n)
    if n2u:
        pos = (spins[:, n2u] > 0).astype(np.int64)
        keys = pos @ (np.int64(1) << np.arange(len(n2u), dtype=np.int64))
    else:
        keys = np.zeros(spins.shape[0], dtype=np.int64)
    n_assign = 1 << len(n2u)
    mass = np.bincount(keys, weights=table.probs, minlength=n_assign)
    mean_u = np.bincount(keys, weights=table.probs * spins[:, u], minlength=n_assign)
    live = mass > 0.0
    cond_mean = np.zeros(n_assign)
    cond_mean[live] = mean_u[live] / mass[live]
    assign = np.zeros((n_assign, table.n))
    if n2u:
        assign[:, n2u] = spin_configurations(len(n2u))
    subsets = neighbor_subsets(n2u, cfg.feature_order_cap)
    features = _feature_matrix(assign, subsets)
    targets = 0.5 * (1.0 + cond_mean)
    fit = alphatron_fit(features, targets, cfg, sample_weight=mass)
    return _result_from_fit(table.n, u, n2u, subsets, fit)


def assemble_potential(results: Iterable[NodeRegressionResult],
                       graph: TwoHopGraph,
                       nodes: Optional[Iterable[int]] = None,
                       coefficient_source: str = "min",
                       floor: float = 0.0) -> MrfPotential:
    """Merge per-node partials into one global potential.

    The monomial x_S takes its coefficient from the partial of the lowest
    owner node u in S (reading the x_{S - {u}} coefficient); constant terms
    of partials map to singleton monomials.  ``coefficient_source="mean"``
    averages over all owners instead.  With ``nodes`` given, only monomials
    touching that set are assembled (partial learning) and owners are drawn
    from it; otherwise one result per graph node is required.  Coefficients
    of magnitude below ``floor`` are dropped.
    """
    if coefficient_source not in ("min", "mean"):
        raise DomainError(f"unknown coefficient source {coefficient_source!r}")
    by_node = {}
    for res in results:
        if res.node in by_node:
            raise StructuralError(f"duplicate result for node {res.node}")
        by_node[res.node] = res
    wanted = sorted(set(int(i) for i in nodes)) if nodes is not None \
        else list(range(graph.n))
    missing = [u for u in wanted if u not in by_node]
    if missing:
        raise StructuralError(f"missing regression results for nodes {missing}")
    for u, res in by_node.items():
        allowed = set(graph.neighbors[u])
        for subset in res.partial.terms:
            if not set(subset) <= allowed:
                raise StructuralError(
                    f"partial of node {u} uses {sorted(subset)} outside its "
                    f"neighborhood {sorted(allowed)}")
    candidates = set()
    for u in wanted:
        for subset in by_node[u].partial.terms:
            candidates.add(frozenset(subset) | {u})
    terms = {}
    for monomial in candidates:
        owners = sorted(set(monomial) & set(wanted))
        if coefficient_source == "min":
            coef = by_node[owners[0]].partial.coefficient(monomial - {owners[0]})
        else:
            coef = float(np.mean([
                by_node[u].partial.coefficient(monomial - {u}) for u in owners]))
        if abs(coef) < floor or coef == 0.0:
            continue
        terms[monomial] = coef
    return MrfPotential(graph.n, terms)


def reconstruct_distribution(q: MrfPotential,
                             limit: int = ENUMERATION_LIMIT) -> DistributionTable:
    """Learned magnitude distribution p*(x) = exp(q(x)) / Z."""
    return mrf_distribution(q, limit=limit)


@dataclass(frozen=True)
class ConditionalDistribution:
    """Distribution over the query nodes, bit-indexed in sorted node order."""

    nodes: tuple
    probs: np.ndarray


def potential_neighborhood(q: MrfPotential, targets: Iterable[int]) -> frozenset:
    """Nodes sharing a monomial with the target set, minus the set itself."""
    targets = frozenset(int(i) for i in targets)
    out = set()
    for subset in q.terms:
        if subset & targets:
            out |= subset
    return frozenset(out - targets)


def conditional_query(q: MrfPotential, query_nodes: Iterable[int],
                      boundary: dict) -> ConditionalDistribution:
    """p(x_J | boundary on the two-hop neighborhood of J), from q alone.

    Restricts q to monomials touching J (every other node of such a
    monomial lies in the boundary by construction), substitutes the
    boundary spins and normalizes over the 2**|J| query assignments in
    log space.
    """
    nodes = sorted(set(int(i) for i in query_nodes))
    if not nodes:
        raise DomainError("query set must be nonempty")
    if len(nodes) > 20:
        raise CapacityError("query sets above 20 nodes are not enumerable")
    if any(i < 0 or i >= q.n for i in nodes):
        raise DomainError("query node out of range")
    required = potential_neighborhood(q, nodes)
    given = {int(k): int(v) for k, v in boundary.items()}
    if set(given) != set(required):
        raise DomainError(
            f"boundary must cover exactly {sorted(required)}, got {sorted(given)}")
    if any(v not in (-1, 1) for v in given.values()):
        raise DomainError("boundary values must be +1 or -1")
    pos = {i: b for b, i in enumerate(nodes)}
    reduced = {}
    for subset, coef in q.terms.items():
        inside = subset & set(nodes)
        if not inside:
            continue
        scale = coef
        for i in subset - inside:
            scale *= given[i]
        key = frozenset(pos[i] for i in inside)
        reduced[key] = reduced.get(key, 0.0) + scale
    local = MrfPotential(len(nodes), reduced, allow_constant=True)
    values = local.values_on(spin_configurations(len(nodes)))
    values -= values.max()
    weights = np.exp(values)
    return ConditionalDistribution(nodes=tuple(nodes), probs=weights / weights.sum())


# ---------------------------------------------------------------------------
# Node-result files (potential format plus regression metadata)
# ---------------------------------------------------------------------------


def node_result_to_json_dict(result: NodeRegressionResult) -> dict:
    data = potential_to_json_dict(result.partial)
    data["node"] = result.node + 1
    data["neighborhood"] = [i + 1 for i in result.neighborhood]
    data["chosen_iteration"] = result.chosen_iteration
    data["holdout_curve"] = list(result.holdout_curve)
    return data


def node_result_from_json_dict(data: dict) -> NodeRegressionResult:
    try:
        partial = potential_from_json_dict(data, allow_constant=True)
        return NodeRegressionResult(
            node=int(data["node"]) - 1,
            neighborhood=tuple(int(i) - 1 for i in data["neighborhood"]),
            partial=partial,
            holdout_curve=tuple(float(v) for v in data["holdout_curve"]),
            chosen_iteration=int(data["chosen_iteration"]),
        )
    except KeyError as exc:
        raise StructuralError(f"node result file missing field {exc}") from exc


def save_node_result(result: NodeRegressionResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(node_result_to_json_dict(result), fh)
        fh.write("\n")


def load_node_result(path) -> NodeRegressionResult:
    with open(path, "r", encoding="utf-8") as fh:
        return node_result_from_json_dict(json.load(fh))
