"""Experiment orchestration: seeded sweeps over sample sizes and trials.

Every trial cell (sample_size, trial) derives its RNG streams from
SeedSequence([base_seed, sample_size, trial]), so rerunning one cell can
never shift another and reports are a pure function of (config, seed).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .errors import DomainError, StructuralError
from .metrics import fidelity, lp_distance, structure_score
from .models import (DistributionTable, ENUMERATION_LIMIT, RbmModel, TwoHopGraph,
                     load_model, rbm_marginal_distribution, rbm_two_hop,
                     spin_configurations)
from .regression import (AlphatronConfig, assemble_potential, conditional_query,
                         learn_node_potential, potential_neighborhood,
                         reconstruct_distribution)
from .sampling import (NoiseSpec, SampleSet, apply_bitflip, perturb_linf,
                       sample_exact, sample_gibbs)
from .structure import StructureConfig, learn_full_structure

SCHEMA_VERSION = 1

CSV_COLUMNS = ("M", "trial", "success", "fidelity", "l1",
               "fidelity_clean", "l1_clean", "runtime_ms")
PARTIAL_CSV_COLUMNS = ("M", "trial", "max_cond_error", "boundary_count",
                       "runtime_ms")


# ---------------------------------------------------------------------------
# Model generators
# ---------------------------------------------------------------------------


def gen_chain_model(n: int, j_val: float = 1.0, h_val: float = -0.1,
                    g_val: float = -0.1) -> RbmModel:
    """Chain RBM: hidden node j couples visible nodes j and j+1.

    The two-hop graph is the path on n nodes (d2 = 2 in the interior).
    """
    if n < 2:
        raise DomainError("chain model needs n >= 2")
    m = n - 1
    J = np.zeros((n, m))
    for j in range(m):
        J[j, j] = j_val
        J[j + 1, j] = j_val
    return RbmModel(n=n, m=m, J=J, h=np.full(n, float(h_val)),
                    g=np.full(m, float(g_val)))


def gen_random_lc_rbm(n: int, m: int, seed: int, alpha: float = 0.3,
                      j_max: Optional[float] = None, field_max: float = 0.2,
                      ferromagnetic: bool = False,
                      hidden_degrees: Sequence[int] = (2, 3),
                      max_visible_degree: int = 2) -> RbmModel:
    """Random locally consistent RBM with controlled strength bounds.

    Each hidden node couples to a few visible nodes with a uniform sign
    (always + when ferromagnetic) and |J| drawn from [alpha, j_max];
    zeros are stored as literal zeros.  Capping the visible degree keeps
    the row/column strengths, and hence beta, small.
    """
    if j_max is None:
        j_max = alpha + 0.2
    if not 0.0 < alpha <= j_max:
        raise DomainError("need 0 < alpha <= j_max")
    rng = np.random.default_rng(seed)
    J = np.zeros((n, m))
    load = np.zeros(n, dtype=int)
    for j in range(m):
        deg = int(rng.choice(list(hidden_degrees)))
        free = np.nonzero(load < max_visible_degree)[0]
        if free.size == 0:
            continue
        rows = rng.choice(free, size=min(deg, free.size), replace=False)
        sign = 1.0 if ferromagnetic else float(rng.choice([-1.0, 1.0]))
        for r in rows:
            J[r, j] = sign * rng.uniform(alpha, j_max)
            load[r] += 1
    low = 0.0 if ferromagnetic else -field_max
    h = rng.uniform(low, field_max, size=n)
    g = rng.uniform(low, field_max, size=m)
    return RbmModel(n=n, m=m, J=J, h=h, g=g)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Where the ground-truth model comes from."""

    kind: str = "chain"          # "chain" | "file"
    n: int = 10
    j_val: float = 1.0
    h_val: float = -0.1
    g_val: float = -0.1
    path: Optional[str] = None

    def build(self) -> RbmModel:
        if self.kind == "chain":
            return gen_chain_model(self.n, self.j_val, self.h_val, self.g_val)
        if self.kind == "file":
            if not self.path:
                raise DomainError("model kind 'file' requires a path")
            return load_model(self.path)
        raise DomainError(f"unknown model kind {self.kind!r}")


@dataclass(frozen=True)
class GibbsSpec:
    """Gibbs-sampler fallback used when the model exceeds the enumeration
    limit (or when forced)."""

    burn_in: int = 1000
    thinning: int = 2
    chains: int = 64
    force: bool = False


@dataclass(frozen=True)
class Targets:
    """Requested accuracies, reported against (never enforced)."""

    eps_t: float = 0.1
    eps_c: float = 0.05
    zeta: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    noise: NoiseSpec
    learner: StructureConfig
    regression: AlphatronConfig
    sample_sizes: tuple
    trials: int
    base_seed: int
    targets: Targets = Targets()
    kind: str = "structure"      # "structure" | "state" | "partial"
    use_true_structure: bool = False
    query_nodes: tuple = ()
    boundary_prob_floor: float = 0.01
    sampler: GibbsSpec = GibbsSpec()
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError("trials must be >= 1")
        sizes = tuple(int(s) for s in self.sample_sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise DomainError("sample_sizes must be nonempty and strictly increasing")
        if any(s < 1 for s in sizes):
            raise DomainError("sample sizes must be >= 1")
        if self.kind not in ("structure", "state", "partial"):
            raise DomainError(f"unknown experiment kind {self.kind!r}")
        if self.kind == "partial" and not self.query_nodes:
            raise DomainError("partial experiments need query_nodes")
        object.__setattr__(self, "sample_sizes", sizes)
        object.__setattr__(self, "query_nodes",
                           tuple(sorted(int(q) for q in self.query_nodes)))


def config_to_json_dict(cfg: ExperimentConfig) -> dict:
    def plain(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {k: plain(v) for k, v in dataclasses.asdict(value).items()}
        if isinstance(value, (tuple, list)):
            return [plain(v) for v in value]
        if isinstance(value, float) and math.isinf(value):
            return "inf"
        return value
    return plain(cfg)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_json_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise StructuralError(f"config section [{name}] must be a table")
    return dict(value)


def load_config(path) -> ExperimentConfig:
    """Read a TOML experiment config (schema documented in the README)."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise StructuralError(
            f"config schema_version {version!r} unsupported (expected {SCHEMA_VERSION})")
    exp = _section(data, "experiment")
    model = _section(data, "model")
    noise = _section(data, "noise")
    learner = _section(data, "learner")
    regression = _section(data, "regression")
    sampler = _section(data, "sampler")
    targets = _section(data, "targets")
    try:
        return ExperimentConfig(
            model=ModelSpec(**model),
            noise=NoiseSpec(**noise),
            learner=StructureConfig(**learner),
            regression=AlphatronConfig(**regression),
            sample_sizes=tuple(exp["sample_sizes"]),
            trials=int(exp["trials"]),
            base_seed=int(exp["base_seed"]),
            targets=Targets(**targets),
            kind=exp.get("kind", "structure"),
            use_true_structure=bool(exp.get("use_true_structure", False)),
            query_nodes=tuple(int(q) - 1 for q in exp.get("query_nodes", ())),
            boundary_prob_floor=float(exp.get("boundary_prob_floor", 0.01)),
            sampler=GibbsSpec(**sampler),
            workers=int(exp.get("workers", 1)),
        )
    except KeyError as exc:
        raise StructuralError(f"config missing required key {exc}") from exc
    except TypeError as exc:
        raise StructuralError(f"config has an unknown key: {exc}") from exc


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialRow:
    sample_size: int
    trial: int
    structure_success: Optional[bool] = None
    fidelity: Optional[float] = None
    l1: Optional[float] = None
    fidelity_clean: Optional[float] = None
    l1_clean: Optional[float] = None
    runtime_ms: int = 0


@dataclass(frozen=True)
class SizeAggregate:
    sample_size: int
    trials: int
    success_rate: Optional[float] = None
    fidelity_mean: Optional[float] = None
    fidelity_stddev: Optional[float] = None
    l1_mean: Optional[float] = None
    l1_within_eps_t_rate: Optional[float] = None


@dataclass(frozen=True)
class PartialTrialRow:
    sample_size: int
    trial: int
    max_cond_error: float
    boundary_count: int
    runtime_ms: int = 0


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    rows: tuple
    aggregates: tuple
    provenance: dict

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "aggregates": [dataclasses.asdict(a) for a in self.aggregates],
            "provenance": dict(self.provenance),
        }


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _stddev(values):
    vals = [v for v in values if v is not None]
    return float(np.std(vals)) if vals else None


def aggregate_rows(rows: Sequence[TrialRow], eps_t: float) -> tuple:
    out = []
    for size in sorted({r.sample_size for r in rows}):
        batch = [r for r in rows if r.sample_size == size]
        succ = [r.structure_success for r in batch if r.structure_success is not None]
        l1s = [r.l1 for r in batch if r.l1 is not None]
        out.append(SizeAggregate(
            sample_size=size,
            trials=len(batch),
            success_rate=float(np.mean(succ)) if succ else None,
            fidelity_mean=_mean(r.fidelity for r in batch),
            fidelity_stddev=_stddev(r.fidelity for r in batch),
            l1_mean=_mean(r.l1 for r in batch),
            l1_within_eps_t_rate=(float(np.mean([v <= eps_t for v in l1s]))
                                  if l1s else None),
        ))
    return tuple(out)


def _report_hash(kind: str, rows, aggregates) -> str:
    body = {
        "kind": kind,
        "rows": [dict(dataclasses.asdict(r), runtime_ms=0) for r in rows],
        "aggregates": [dataclasses.asdict(a) for a in aggregates],
    }
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _provenance(cfg: ExperimentConfig, kind: str, rows, aggregates) -> dict:
    return {
        "config_hash": config_hash(cfg),
        "base_seed": cfg.base_seed,
        "report_hash": _report_hash(kind, rows, aggregates),
        "versions": {
            "rbmtomo": _package_version(),
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def _package_version() -> str:
    from . import __version__
    return __version__


# ---------------------------------------------------------------------------
# Trial plumbing
# ---------------------------------------------------------------------------


def derive_seeds(base_seed: int, sample_size: int, trial: int) -> tuple:
    """(perturb, sample, flip, fit) seeds for one trial cell."""
    state = np.random.SeedSequence([base_seed, sample_size, trial]).generate_state(4)
    return tuple(int(s) for s in state)


def _truth_tables(model: RbmModel, noise: NoiseSpec, perturb_seed: int):
    """(clean table, table actually sampled).  None when Gibbs is needed."""
    if model.n > ENUMERATION_LIMIT:
        if noise.kind == "linf_perturb":
            raise DomainError("linf_perturb needs the exact table; model too large")
        return None, None
    clean = rbm_marginal_distribution(model)
    if noise.kind == "linf_perturb":
        noisy, _ = perturb_linf(clean, noise.eps_inf, perturb_seed, noise.p_norm)
        return clean, noisy
    return clean, clean


def _draw_shots(cfg: ExperimentConfig, model: RbmModel,
                sampled_table: Optional[DistributionTable], count: int,
                sample_seed: int, flip_seed: int) -> SampleSet:
    if sampled_table is None or cfg.sampler.force:
        shots = sample_gibbs(model, count, cfg.sampler.burn_in,
                             cfg.sampler.thinning, sample_seed,
                             chains=cfg.sampler.chains)
    else:
        shots = sample_exact(sampled_table, count, sample_seed)
    if cfg.noise.kind == "bitflip":
        shots = apply_bitflip(shots, cfg.noise.rho, flip_seed)
    return shots


def _structure_trial(cfg: ExperimentConfig, model: RbmModel,
                     truth: TwoHopGraph, sample_size: int, trial: int) -> TrialRow:
    t0 = time.perf_counter()
    perturb_seed, sample_seed, flip_seed, _ = derive_seeds(
        cfg.base_seed, sample_size, trial)
    _, sampled = _truth_tables(model, cfg.noise, perturb_seed)
    shots = _draw_shots(cfg, model, sampled, sample_size, sample_seed, flip_seed)
    result = learn_full_structure(shots, cfg.learner)
    score = structure_score(result.graph, truth)
    return TrialRow(sample_size=sample_size, trial=trial,
                    structure_success=score.exact_match,
                    runtime_ms=int(1000 * (time.perf_counter() - t0)))


def _fit_all_nodes(cfg: ExperimentConfig, shots: SampleSet, graph: TwoHopGraph,
                   fit_seed: int, nodes: Optional[Sequence[int]] = None):
    results = []
    for u in (nodes if nodes is not None else range(graph.n)):
        node_seed = int(np.random.SeedSequence([fit_seed, u]).generate_state(1)[0])
        node_cfg = dataclasses.replace(cfg.regression, seed=node_seed)
        results.append(learn_node_potential(shots, u, graph.neighbors[u], node_cfg))
    return results


def _state_trial(cfg: ExperimentConfig, model: RbmModel, truth: TwoHopGraph,
                 sample_size: int, trial: int) -> TrialRow:
    t0 = time.perf_counter()
    perturb_seed, sample_seed, flip_seed, fit_seed = derive_seeds(
        cfg.base_seed, sample_size, trial)
    clean, sampled = _truth_tables(model, cfg.noise, perturb_seed)
    if sampled is None:
        raise DomainError("state experiments need the exact table "
                          "(model exceeds the enumeration limit)")
    shots = _draw_shots(cfg, model, sampled, sample_size, sample_seed, flip_seed)
    if cfg.use_true_structure:
        graph, success = truth, None
    else:
        learned = learn_full_structure(shots, cfg.learner)
        graph = learned.graph
        success = structure_score(graph, truth).exact_match
    results = _fit_all_nodes(cfg, shots, graph, fit_seed)
    recon = reconstruct_distribution(assemble_potential(results, graph))
    return TrialRow(
        sample_size=sample_size, trial=trial, structure_success=success,
        fidelity=fidelity(recon, sampled), l1=lp_distance(recon, sampled, 1.0),
        fidelity_clean=fidelity(recon, clean), l1_clean=lp_distance(recon, clean, 1.0),
        runtime_ms=int(1000 * (time.perf_counter() - t0)))


def _exact_boundary_conditionals(table: DistributionTable, query: Sequence[int],
                                 boundary: Sequence[int], floor: float):
    """Map boundary assignment -> (prob, conditional vector over query)."""
    spins = spin_configurations(table.n)
    cols = list(query) + list(boundary)
    pos = (spins[:, cols] > 0).astype(np.int64)
    keys = pos @ (np.int64(1) << np.arange(len(cols), dtype=np.int64))
    mass = np.bincount(keys, weights=table.probs, minlength=1 << len(cols))
    joint = mass.reshape(-1, 1 << len(query)).T  # [query_idx, boundary_idx]
    out = {}
    bmass = joint.sum(axis=0)
    for b in range(1 << len(boundary)):
        if bmass[b] >= floor and bmass[b] > 0:
            out[b] = (float(bmass[b]), joint[:, b] / bmass[b])
    return out


def _partial_trial(cfg: ExperimentConfig, model: RbmModel, truth: TwoHopGraph,
                   sample_size: int, trial: int) -> PartialTrialRow:
    t0 = time.perf_counter()
    perturb_seed, sample_seed, flip_seed, fit_seed = derive_seeds(
        cfg.base_seed, sample_size, trial)
    _, sampled = _truth_tables(model, cfg.noise, perturb_seed)
    if sampled is None:
        raise DomainError("partial experiments need the exact table")
    shots = _draw_shots(cfg, model, sampled, sample_size, sample_seed, flip_seed)
    query = list(cfg.query_nodes)
    results = _fit_all_nodes(cfg, shots, truth, fit_seed, nodes=query)
    q = assemble_potential(results, truth, nodes=query)
    boundary_nodes = sorted(
        set().union(*(truth.neighbors[u] for u in query)) - set(query))
    support_boundary = potential_neighborhood(q, query)
    exact = _exact_boundary_conditionals(sampled, query, boundary_nodes,
                                         cfg.boundary_prob_floor)
    spins_b = spin_configurations(len(boundary_nodes)) if boundary_nodes \
        else np.zeros((1, 0))
    worst = 0.0
    for b, (_, cond_exact) in exact.items():
        assign = {node: int(spins_b[b, i]) for i, node in enumerate(boundary_nodes)
                  if node in support_boundary}
        cond_learned = conditional_query(q, query, assign)
        worst = max(worst, float(np.abs(cond_learned.probs - cond_exact).max()))
    return PartialTrialRow(sample_size=sample_size, trial=trial,
                           max_cond_error=worst, boundary_count=len(exact),
                           runtime_ms=int(1000 * (time.perf_counter() - t0)))


_TRIAL_FUNCS = {"structure": _structure_trial, "state": _state_trial,
                "partial": _partial_trial}


def _run_cell(args):
    cfg, sample_size, trial = args
    model = cfg.model.build()
    truth = rbm_two_hop(model)
    return _TRIAL_FUNCS[cfg.kind](cfg, model, truth, sample_size, trial)


def _run_all_cells(cfg: ExperimentConfig):
    cells = [(cfg, size, trial)
             for size in cfg.sample_sizes for trial in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    return tuple(rows)


# ---------------------------------------------------------------------------
# Experiment entry points
# ---------------------------------------------------------------------------


def run_structure_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Sweep sample sizes, learning the two-hop graph per trial."""
    cfg = dataclasses.replace(cfg, kind="structure")
    rows = _run_all_cells(cfg)
    aggregates = aggregate_rows(rows, cfg.targets.eps_t)
    return ExperimentReport(kind="structure", rows=rows, aggregates=aggregates,
                            provenance=_provenance(cfg, "structure", rows, aggregates))


def run_state_learning_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Sweep sample sizes, reconstructing the full magnitude distribution."""
    cfg = dataclasses.replace(cfg, kind="state")
    rows = _run_all_cells(cfg)
    aggregates = aggregate_rows(rows, cfg.targets.eps_t)
    return ExperimentReport(kind="state", rows=rows, aggregates=aggregates,
                            provenance=_provenance(cfg, "state", rows, aggregates))


def run_partial_learning_experiment(cfg: ExperimentConfig,
                                    query_nodes: Optional[Sequence[int]] = None
                                    ) -> ExperimentReport:
    """Learn only the query nodes' partials and score conditional queries
    against exact-table conditionals over likely boundary assignments."""
    if query_nodes is not None:
        cfg = dataclasses.replace(cfg, query_nodes=tuple(query_nodes))
    cfg = dataclasses.replace(cfg, kind="partial")
    rows = _run_all_cells(cfg)
    aggregates = tuple(
        SizeAggregate(
            sample_size=size,
            trials=sum(1 for r in rows if r.sample_size == size),
            l1_mean=_mean(r.max_cond_error for r in rows if r.sample_size == size),
        )
        for size in sorted({r.sample_size for r in rows}))
    return ExperimentReport(kind="partial", rows=rows, aggregates=aggregates,
                            provenance=_provenance(cfg, "partial", rows, aggregates))


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def write_report_json(report: ExperimentReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=1)
        fh.write("\n")


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    return repr(value) if isinstance(value, float) else str(value)


def write_report_csv(report: ExperimentReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if report.kind == "partial":
            writer.writerow(PARTIAL_CSV_COLUMNS)
            for r in report.rows:
                writer.writerow([
                    r.sample_size, r.trial, _csv_cell(r.max_cond_error),
                    r.boundary_count, r.runtime_ms])
        else:
            writer.writerow(CSV_COLUMNS)
            for r in report.rows:
                writer.writerow([
                    r.sample_size, r.trial, _csv_cell(r.structure_success),
                    _csv_cell(r.fidelity), _csv_cell(r.l1),
                    _csv_cell(r.fidelity_clean), _csv_cell(r.l1_clean),
                    r.runtime_ms])
