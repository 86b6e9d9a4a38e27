"""Greedy two-hop structure learners and their statistics.

Two per-node learners are provided: covariance maximization for locally
consistent models and influence maximization for ferromagnetic ones.
Each comes in an empirical flavor (driven by a SampleSet) and an exact
flavor (driven by a DistributionTable), where the exact flavor is the
infinite-sample mode used to test algorithm logic free of noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import CapacityError, DomainError, StructuralError
from .models import (DistributionTable, ENUMERATION_LIMIT, TwoHopGraph,
                     spin_configurations)
from .sampling import SampleSet

_LOG2 = math.log(2.0)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# Thresholds, sample bounds, robustness limits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LearnThresholds:
    """All threshold quantities implied by (alpha, beta, d2)."""

    tau: float
    delta_lc: float
    gamma: float
    eta: float
    k: int
    alpha: float
    beta: float
    d2: int


@dataclass(frozen=True)
class SampleBounds:
    """Closed-form sample-size bounds (advisory, never enforced).

    The linear values overflow float64 for most parameter settings, so the
    natural-log values are always supplied alongside; a linear field is
    +inf whenever its log exceeds the float range.
    """

    m_lc: float
    m_frbm: float
    m_frbm_robust: float
    log_m_lc: float
    log_m_frbm: float
    log_m_frbm_robust: float


@dataclass(frozen=True)
class RobustnessLimits:
    """Largest tolerated L_p perturbation / bit-flip probability."""

    eps_p_max_lc: float
    rho_max_lc: float
    eps_p_max_frbm: float
    rho_max_frbm: float
    p_norm: float
    n: int


def compute_thresholds(alpha: float, beta: float, d2: int) -> LearnThresholds:
    """tau = alpha^2 exp(-12 beta) / 2, delta = exp(-2 beta) / 2,
    gamma = 8 / tau^2, eta = alpha^2 sigmoid(-2 beta) (1 - tanh beta)^2,
    k = ceil(d2 * ln(4 / eta))."""
    if alpha <= 0.0:
        raise DomainError("alpha must be > 0")
    if beta < alpha:
        raise DomainError("beta must be >= alpha")
    if d2 < 0:
        raise DomainError("d2 must be >= 0")
    tau = 0.5 * alpha ** 2 * math.exp(-12.0 * beta)
    eta = alpha ** 2 * _sigmoid(-2.0 * beta) * (1.0 - math.tanh(beta)) ** 2
    return LearnThresholds(
        tau=tau,
        delta_lc=0.5 * math.exp(-2.0 * beta),
        gamma=8.0 / tau ** 2,
        eta=eta,
        k=int(math.ceil(d2 * math.log(4.0 / eta))),
        alpha=alpha,
        beta=beta,
        d2=d2,
    )


def _safe_exp(logv: float) -> float:
    if logv == -math.inf:
        return 0.0
    try:
        return math.exp(logv)
    except OverflowError:
        return math.inf


def compute_sample_bounds(th: LearnThresholds, n: int, failure_prob: float) -> SampleBounds:
    """Closed-form sample-size bounds of the two learners' analyses
    (natural logs throughout; the order constant is taken as 1).

    m_lc     : (ln(1/zeta) + gamma ln n) * 2**(2 gamma) / (tau^2 delta^(2 gamma))
    m_frbm   : 2**(2k+3) (d2/eta)^2 (ln n + k ln(e n / k)) ln(4/zeta)
    m_frbm_robust : same with 2**(2k+5).
    """
    if n < 2:
        raise DomainError("n must be >= 2")
    if not 0.0 < failure_prob < 1.0:
        raise DomainError("failure_prob must lie in (0, 1)")
    zeta = failure_prob
    log_lc = (math.log(math.log(1.0 / zeta) + th.gamma * math.log(n))
              + 2.0 * th.gamma * _LOG2
              - 2.0 * math.log(th.tau)
              - 2.0 * th.gamma * math.log(th.delta_lc))
    if th.d2 == 0 or th.k == 0:
        log_f = log_fr = -math.inf
    else:
        entropy = math.log(n) + th.k * math.log(math.e * n / th.k)
        base = (2.0 * math.log(th.d2 / th.eta)
                + math.log(entropy)
                + math.log(math.log(4.0 / zeta)))
        log_f = (2 * th.k + 3) * _LOG2 + base
        log_fr = (2 * th.k + 5) * _LOG2 + base
    def lin(logv: float) -> float:
        v = _safe_exp(logv)
        return math.ceil(v) if math.isfinite(v) else v
    return SampleBounds(m_lc=lin(log_lc), m_frbm=lin(log_f), m_frbm_robust=lin(log_fr),
                        log_m_lc=log_lc, log_m_frbm=log_f, log_m_frbm_robust=log_fr)


def compute_robustness_limits(th: LearnThresholds, n: int,
                              p_norm: float) -> RobustnessLimits:
    """Perturbation sizes under which two-hop recovery is still guaranteed.

    eps_p_max_lc   = tau / 2**(n(1-1/p) + 5)
    rho_max_lc     = tau / (2**7 (gamma + 1))
    eps_p_max_frbm = eta / 2**((n-k-1)(1-1/p) + k + 6)
    rho_max_frbm   = eta / (8 (4 + 2**(k+3)) (k + 2))
    with 1 - 1/p read as 1 in the p = inf limit.
    """
    if p_norm < 1.0:
        raise DomainError("p_norm must be >= 1")
    pfac = 1.0 if math.isinf(p_norm) else 1.0 - 1.0 / p_norm
    eps_lc = _safe_exp(math.log(th.tau) - (n * pfac + 5.0) * _LOG2)
    rho_lc = th.tau / (128.0 * (th.gamma + 1.0))
    eps_fr = _safe_exp(math.log(th.eta) - ((n - th.k - 1) * pfac + th.k + 6.0) * _LOG2)
    log_den = math.log(8.0) + np.logaddexp(math.log(4.0), (th.k + 3) * _LOG2) \
        + math.log(th.k + 2.0)
    rho_fr = _safe_exp(math.log(th.eta) - float(log_den))
    return RobustnessLimits(eps_p_max_lc=eps_lc, rho_max_lc=rho_lc,
                            eps_p_max_frbm=eps_fr, rho_max_frbm=rho_fr,
                            p_norm=p_norm, n=n)


# ---------------------------------------------------------------------------
# Covariance and influence statistics
# ---------------------------------------------------------------------------


def _check_pair(n: int, u: int, v: int, cond: Sequence[int]) -> list:
    cond = sorted(int(s) for s in cond)
    if len(set(cond)) != len(cond):
        raise DomainError("conditioning set contains duplicates")
    if u == v:
        raise DomainError("u and v must differ")
    for node in (u, v, *cond):
        if node < 0 or node >= n:
            raise DomainError(f"node {node} out of range for n={n}")
    if u in cond or v in cond:
        raise DomainError("u and v must not belong to the conditioning set")
    return cond


def _stratum_keys(matrix: np.ndarray, cond: Sequence[int]) -> np.ndarray:
    if not cond:
        return np.zeros(matrix.shape[0], dtype=np.int64)
    pos = (matrix[:, list(cond)] > 0).astype(np.int64)
    return pos @ (np.int64(1) << np.arange(len(cond), dtype=np.int64))


def _cov_from_strata(keys: np.ndarray, weight: np.ndarray, xu: np.ndarray,
                     xv: np.ndarray, n_strata: int) -> float:
    mass = np.bincount(keys, weights=weight, minlength=n_strata)
    su = np.bincount(keys, weights=weight * xu, minlength=n_strata)
    sv = np.bincount(keys, weights=weight * xv, minlength=n_strata)
    suv = np.bincount(keys, weights=weight * xu * xv, minlength=n_strata)
    live = mass > 0.0
    m = mass[live]
    cov = suv[live] / m - (su[live] / m) * (sv[live] / m)
    return float((m / weight.sum()) @ cov)


def empirical_cond_covariance_avg(samples: SampleSet, u: int, v: int,
                                  cond: Iterable[int] = ()) -> float:
    """Plug-in average conditional covariance from shots.

    Shots are stratified by the observed conditioning configuration; each
    stratum contributes its plug-in covariance weighted by its frequency.
    Single-shot strata contribute zero covariance automatically.
    """
    cond = _check_pair(samples.n, u, v, list(cond))
    if samples.count == 0:
        raise DomainError("empty sample set")
    shots = samples.shots.astype(np.float64)
    keys = _stratum_keys(shots, cond)
    return _cov_from_strata(keys, np.ones(samples.count), shots[:, u],
                            shots[:, v], 1 << len(cond))


def exact_cond_covariance_avg(table: DistributionTable, u: int, v: int,
                              cond: Iterable[int] = (),
                              limit: int = ENUMERATION_LIMIT) -> float:
    """Infinite-sample oracle for the average conditional covariance."""
    cond = _check_pair(table.n, u, v, list(cond))
    if table.n > limit:
        raise CapacityError(f"n={table.n} exceeds enumeration limit {limit}")
    spins = spin_configurations(table.n)
    keys = _stratum_keys(spins, cond)
    return _cov_from_strata(keys, table.probs, spins[:, u], spins[:, v],
                            1 << len(cond))


@dataclass(frozen=True)
class InfluenceEstimate:
    """Empirical influence value; ``value`` is None when the conditioning
    event X_S = all-ones never occurred (``support_count`` = 0)."""

    value: Optional[float]
    support_count: int


def _check_influence_args(n: int, u: int, cond: Sequence[int]) -> list:
    cond = sorted(int(s) for s in cond)
    if len(set(cond)) != len(cond):
        raise DomainError("conditioning set contains duplicates")
    for node in (u, *cond):
        if node < 0 or node >= n:
            raise DomainError(f"node {node} out of range for n={n}")
    if u in cond:
        raise DomainError("u must not belong to the conditioning set")
    return cond


def empirical_influence(samples: SampleSet, u: int,
                        cond: Iterable[int] = ()) -> InfluenceEstimate:
    """2 p_hat(X_{S+u} = 1...1) / p_hat(X_S = 1...1) - 1 from shot counts."""
    cond = _check_influence_args(samples.n, u, list(cond))
    if samples.count == 0:
        raise DomainError("empty sample set")
    ones = np.ones(samples.count, dtype=bool)
    for s in cond:
        ones &= samples.shots[:, s] > 0
    support = int(ones.sum())
    if support == 0:
        return InfluenceEstimate(value=None, support_count=0)
    joint = int((ones & (samples.shots[:, u] > 0)).sum())
    return InfluenceEstimate(value=2.0 * joint / support - 1.0,
                             support_count=support)


def exact_influence(table: DistributionTable, u: int, cond: Iterable[int] = (),
                    limit: int = ENUMERATION_LIMIT) -> float:
    """E[X_u | X_S = all-ones] by enumeration."""
    cond = _check_influence_args(table.n, u, list(cond))
    if table.n > limit:
        raise CapacityError(f"n={table.n} exceeds enumeration limit {limit}")
    idx = np.arange(1 << table.n, dtype=np.int64)
    mask = np.ones(idx.size, dtype=bool)
    for s in cond:
        mask &= (idx >> s) & 1 == 1
    denom = float(table.probs[mask].sum())
    if denom <= 0.0:
        raise DomainError("conditioning event X_S = all-ones has zero probability")
    xu = np.where((idx[mask] >> u) & 1 == 1, 1.0, -1.0)
    return float((table.probs[mask] * xu).sum() / denom)


# ---------------------------------------------------------------------------
# Greedy learners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeighborhoodEstimate:
    """Learned neighborhood of one node, with per-node diagnostics."""

    node: int
    neighbors: tuple
    added_order: tuple
    added_values: tuple
    pruned: tuple
    early_stopped: bool = False


def _greedy_covariance(n: int, u: int, tau: float, max_set: int,
                       cov: Callable) -> NeighborhoodEstimate:
    chosen: list[int] = []
    values: list[float] = []
    while len(chosen) < max_set:
        best_v, best_val = -1, -math.inf
        for v in range(n):
            if v == u or v in chosen:
                continue
            val = cov(u, v, chosen)
            if val > best_val:
                best_val, best_v = val, v
        if best_v < 0 or best_val < tau:
            break
        chosen.append(best_v)
        values.append(best_val)
    kept, pruned = [], []
    for v in chosen:
        rest = [w for w in chosen if w != v]
        (kept if cov(u, v, rest) >= tau else pruned).append(v)
    return NeighborhoodEstimate(node=u, neighbors=tuple(sorted(kept)),
                                added_order=tuple(chosen),
                                added_values=tuple(values),
                                pruned=tuple(sorted(pruned)))


def learn_structure_lc(samples: SampleSet, u: int, tau: float,
                       max_set: int) -> NeighborhoodEstimate:
    """Greedy covariance-maximization learner for one node.

    Repeatedly adds the candidate maximizing the empirical average
    conditional covariance while the maximum stays >= tau, then prunes
    every v whose covariance conditioned on the *other* selected nodes
    falls below tau.  Ties break toward the lowest node index.
    """
    if tau <= 0.0:
        raise DomainError("tau must be > 0")
    if max_set < 1:
        raise DomainError("max_set must be >= 1")
    return _greedy_covariance(
        samples.n, u, tau, max_set,
        lambda a, b, cond: empirical_cond_covariance_avg(samples, a, b, cond))


def learn_structure_lc_exact(table: DistributionTable, u: int, tau: float,
                             max_set: int) -> NeighborhoodEstimate:
    """Infinite-sample mode of learn_structure_lc (exact statistics)."""
    if tau <= 0.0:
        raise DomainError("tau must be > 0")
    if max_set < 1:
        raise DomainError("max_set must be >= 1")
    return _greedy_covariance(
        table.n, u, tau, max_set,
        lambda a, b, cond: exact_cond_covariance_avg(table, a, b, cond))


def _greedy_influence(n: int, u: int, eta: float, k: int,
                      influence: Callable) -> NeighborhoodEstimate:
    chosen: list[int] = []
    values: list[float] = []
    early = False
    for _ in range(k):
        best_j, best_val = -1, -math.inf
        for j in range(n):
            if j == u or j in chosen:
                continue
            val = influence(u, chosen + [j])
            if val is None:
                continue
            if val > best_val:
                best_val, best_j = val, j
        if best_j < 0:
            early = True
            break
        chosen.append(best_j)
        values.append(best_val)
    kept, pruned = [], []
    if chosen:
        base = influence(u, chosen)
        for j in chosen:
            rest = [w for w in chosen if w != j]
            drop = influence(u, rest)
            if base is not None and drop is not None and base - drop >= eta:
                kept.append(j)
            else:
                pruned.append(j)
    return NeighborhoodEstimate(node=u, neighbors=tuple(sorted(kept)),
                                added_order=tuple(chosen),
                                added_values=tuple(values),
                                pruned=tuple(sorted(pruned)),
                                early_stopped=early)


def learn_structure_ferro(samples: SampleSet, u: int, eta: float,
                          k: int) -> NeighborhoodEstimate:
    """Greedy influence-maximization learner for one node.

    Runs k rounds of argmax_j I_u(S + {j}) (candidates with no support are
    skipped; the round stops early when none has support), then keeps the
    j whose removal drops the influence by at least eta.
    """
    if eta <= 0.0:
        raise DomainError("eta must be > 0")
    if k < 1:
        raise DomainError("k must be >= 1")
    def stat(a, cond):
        return empirical_influence(samples, a, cond).value
    return _greedy_influence(samples.n, u, eta, k, stat)


def learn_structure_ferro_exact(table: DistributionTable, u: int, eta: float,
                                k: int) -> NeighborhoodEstimate:
    """Infinite-sample mode of learn_structure_ferro."""
    if eta <= 0.0:
        raise DomainError("eta must be > 0")
    if k < 1:
        raise DomainError("k must be >= 1")
    def stat(a, cond):
        try:
            return exact_influence(table, a, cond)
        except DomainError:
            return None
    return _greedy_influence(table.n, u, eta, k, stat)


# ---------------------------------------------------------------------------
# Whole-graph assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StructureConfig:
    """Which per-node learner to run and how to merge neighborhoods."""

    method: str = "lc"           # "lc" | "ferro"
    tau: Optional[float] = None
    max_set: Optional[int] = None  # lc only; defaults to n - 1
    eta: Optional[float] = None
    k: Optional[int] = None
    symmetrize: str = "or"       # "or" | "and"

    def __post_init__(self):
        if self.method not in ("lc", "ferro"):
            raise DomainError(f"unknown learner method {self.method!r}")
        if self.symmetrize not in ("or", "and"):
            raise DomainError(f"unknown symmetrization {self.symmetrize!r}")
        if self.method == "lc" and self.tau is None:
            raise DomainError("lc learner requires tau")
        if self.method == "ferro" and (self.eta is None or self.k is None):
            raise DomainError("ferro learner requires eta and k")


@dataclass(frozen=True)
class StructureResult:
    """Symmetrized graph plus the per-node learner diagnostics."""

    graph: TwoHopGraph
    nodes: tuple


def learn_full_structure(source: Union[SampleSet, DistributionTable],
                         config: StructureConfig) -> StructureResult:
    """Run the configured per-node learner for every node and symmetrize.

    ``source`` may be a SampleSet (empirical statistics) or a
    DistributionTable (infinite-sample mode).  Edge (i, j) enters the graph
    when j is in the estimate of i OR i in the estimate of j (default), or
    only when both hold under ``symmetrize="and"``.
    """
    exact = isinstance(source, DistributionTable)
    if not exact and not isinstance(source, SampleSet):
        raise StructuralError(f"unsupported statistics source {type(source)!r}")
    n = source.n
    per_node = []
    for u in range(n):
        if config.method == "lc":
            max_set = config.max_set if config.max_set is not None else n - 1
            if exact:
                per_node.append(learn_structure_lc_exact(source, u, config.tau, max_set))
            else:
                per_node.append(learn_structure_lc(source, u, config.tau, max_set))
        else:
            if exact:
                per_node.append(learn_structure_ferro_exact(source, u, config.eta, config.k))
            else:
                per_node.append(learn_structure_ferro(source, u, config.eta, config.k))
    claimed = [set(est.neighbors) for est in per_node]
    sets = [set() for _ in range(n)]
    for i in range(n):
        for j in claimed[i]:
            if config.symmetrize == "or" or i in claimed[j]:
                sets[i].add(j)
                sets[j].add(i)
    graph = TwoHopGraph.from_neighbor_sets(n, sets)
    return StructureResult(graph=graph, nodes=tuple(per_node))


# ---------------------------------------------------------------------------
# Learned-graph file
# ---------------------------------------------------------------------------


def structure_result_to_json_dict(result: StructureResult) -> dict:
    # Node indices are 1-based on disk.
    return {
        "n": result.graph.n,
        "neighbors": [[j + 1 for j in nb] for nb in result.graph.neighbors],
        "diagnostics": [
            {
                "node": est.node + 1,
                "added_order": [j + 1 for j in est.added_order],
                "statistic_values": list(est.added_values),
                "pruned": [j + 1 for j in est.pruned],
                "early_stopped": est.early_stopped,
            }
            for est in result.nodes
        ],
    }


def structure_result_from_json_dict(data: dict) -> StructureResult:
    try:
        n = int(data["n"])
        graph = TwoHopGraph.from_neighbor_sets(
            n, [[int(j) - 1 for j in nb] for nb in data["neighbors"]])
        nodes = []
        for d in data["diagnostics"]:
            added = tuple(int(j) - 1 for j in d["added_order"])
            pruned = tuple(int(j) - 1 for j in d["pruned"])
            nodes.append(NeighborhoodEstimate(
                node=int(d["node"]) - 1,
                neighbors=tuple(sorted(set(added) - set(pruned))),
                added_order=added,
                added_values=tuple(float(v) for v in d["statistic_values"]),
                pruned=pruned,
                early_stopped=bool(d.get("early_stopped", False)),
            ))
        nodes = tuple(nodes)
    except KeyError as exc:
        raise StructuralError(f"graph file missing field {exc}") from exc
    return StructureResult(graph=graph, nodes=nodes)


def save_structure_result(result: StructureResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(structure_result_to_json_dict(result), fh)
        fh.write("\n")


def load_structure_result(path) -> StructureResult:
    with open(path, "r", encoding="utf-8") as fh:
        return structure_result_from_json_dict(json.load(fh))


def load_graph(path) -> TwoHopGraph:
    return load_structure_result(path).graph
