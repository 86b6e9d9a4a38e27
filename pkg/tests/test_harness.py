import csv
import dataclasses
import json
import math

import numpy as np
import pytest

from rbmtomo import (AlphatronConfig, DomainError, ExperimentConfig,
                     ModelSpec, NoiseSpec, StructureConfig, StructuralError,
                     gen_chain_model, gen_random_lc_rbm, load_config,
                     rbm_two_hop, rbm_validate, run_partial_learning_experiment,
                     run_state_learning_experiment, run_structure_experiment)
from rbmtomo.harness import (aggregate_rows, config_hash, derive_seeds,
                             write_report_csv, write_report_json)


def small_config(**overrides):
    base = dict(
        model=ModelSpec(kind="chain", n=6),
        noise=NoiseSpec(kind="none"),
        learner=StructureConfig(method="lc", tau=0.05),
        regression=AlphatronConfig(iterations=120, holdout_fraction=0.2),
        sample_sizes=(300, 600),
        trials=3,
        base_seed=77,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def test_chain_model_path_graph():
    model = gen_chain_model(5, 1.0, -0.1, -0.1)
    graph = rbm_two_hop(model)
    assert [set(nb) for nb in graph.neighbors] == [
        {1}, {0, 2}, {1, 3}, {2, 4}, {3}]
    assert graph.d2 == 2


def test_chain_model_two_nodes():
    model = gen_chain_model(2)
    assert model.m == 1
    assert rbm_two_hop(model).neighbors[0] == (1,)


def test_chain_model_nonzero_count():
    model = gen_chain_model(7)
    assert int(np.count_nonzero(model.J)) == 2 * 6


def test_random_lc_rbm_classification():
    for seed in range(10):
        model = gen_random_lc_rbm(6, 4, seed=seed, alpha=0.3)
        report = rbm_validate(model, alpha=0.3, beta=3.0)
        assert report.is_locally_consistent
        assert report.is_nondegenerate
    ferro = gen_random_lc_rbm(6, 4, seed=3, ferromagnetic=True)
    assert rbm_validate(ferro, 0.1, 5.0).is_ferromagnetic


# ---------------------------------------------------------------------------
# Seeds and config
# ---------------------------------------------------------------------------


def test_derive_seeds_deterministic_and_cellwise():
    a = derive_seeds(1, 100, 0)
    assert a == derive_seeds(1, 100, 0)
    assert a != derive_seeds(1, 100, 1)
    assert a != derive_seeds(1, 200, 0)
    assert a != derive_seeds(2, 100, 0)
    assert len(a) == 4


def test_config_validation():
    with pytest.raises(DomainError):
        small_config(trials=0)
    with pytest.raises(DomainError):
        small_config(sample_sizes=(100, 100))
    with pytest.raises(DomainError):
        small_config(sample_sizes=())
    with pytest.raises(DomainError):
        small_config(kind="partial")  # no query nodes


def test_config_hash_changes_with_content():
    a, b = small_config(), small_config(base_seed=78)
    assert config_hash(a) != config_hash(b)
    assert config_hash(a) == config_hash(small_config())


def test_load_config_toml(tmp_path):
    text = """
schema_version = 1
[experiment]
kind = "structure"
sample_sizes = [100, 200]
trials = 2
base_seed = 5
[model]
kind = "chain"
n = 5
[noise]
kind = "linf_perturb"
eps_inf = 1e-4
p_norm = inf
[learner]
method = "lc"
tau = 0.05
[regression]
iterations = 100
[sampler]
burn_in = 500
[targets]
eps_t = 0.2
"""
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    cfg = load_config(path)
    assert cfg.sample_sizes == (100, 200)
    assert cfg.model.n == 5
    assert cfg.noise.eps_inf == 1e-4
    assert math.isinf(cfg.noise.p_norm)
    assert cfg.learner.tau == 0.05
    assert cfg.regression.iterations == 100
    assert cfg.sampler.burn_in == 500
    assert cfg.targets.eps_t == 0.2


def test_load_config_rejects_bad_schema(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("schema_version = 99\n")
    with pytest.raises(StructuralError):
        load_config(path)


def test_load_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("""
schema_version = 1
[experiment]
sample_sizes = [10]
trials = 1
base_seed = 1
[model]
frobnicate = 3
[noise]
[learner]
method = "lc"
tau = 0.05
[regression]
[sampler]
[targets]
""")
    with pytest.raises(StructuralError):
        load_config(path)


def test_bundled_configs_load():
    for name in ("fig2a_n10", "fig2b_n10", "fig2a_noisy_n10", "fig2a_n20_gibbs"):
        cfg = load_config(f"configs/{name}.toml")
        assert cfg.trials >= 1


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def test_structure_experiment_small():
    report = run_structure_experiment(small_config())
    assert report.kind == "structure"
    assert len(report.rows) == 6
    for row in report.rows:
        assert row.structure_success in (True, False)
        assert row.fidelity is None
    sizes = [agg.sample_size for agg in report.aggregates]
    assert sizes == [300, 600]


def test_structure_experiment_deterministic():
    a = run_structure_experiment(small_config())
    b = run_structure_experiment(small_config())
    assert a.provenance["report_hash"] == b.provenance["report_hash"]
    assert [dataclasses.replace(r, runtime_ms=0) for r in a.rows] \
        == [dataclasses.replace(r, runtime_ms=0) for r in b.rows]


def test_structure_experiment_workers_match_serial():
    cfg_serial = small_config(trials=2)
    cfg_par = small_config(trials=2, workers=2)
    a = run_structure_experiment(cfg_serial)
    b = run_structure_experiment(cfg_par)
    assert [dataclasses.replace(r, runtime_ms=0) for r in a.rows] \
        == [dataclasses.replace(r, runtime_ms=0) for r in b.rows]


def test_structure_experiment_with_perturbation():
    cfg = small_config(noise=NoiseSpec(kind="linf_perturb", eps_inf=1e-5,
                                       p_norm=math.inf))
    report = run_structure_experiment(cfg)
    assert len(report.rows) == 6


def test_structure_experiment_with_bitflip():
    cfg = small_config(noise=NoiseSpec(kind="bitflip", rho=0.01))
    report = run_structure_experiment(cfg)
    assert len(report.rows) == 6


def test_state_experiment_small():
    cfg = small_config(use_true_structure=True, sample_sizes=(400, 800), trials=2)
    report = run_state_learning_experiment(cfg)
    assert report.kind == "state"
    for row in report.rows:
        assert 0.0 <= row.fidelity <= 1.0
        assert row.l1 >= 0.0
        assert row.fidelity_clean == row.fidelity   # no noise configured
        assert row.structure_success is None
    agg = report.aggregates[-1]
    assert agg.fidelity_mean is not None
    assert agg.fidelity_mean > 0.9


def test_state_experiment_learned_structure_flag():
    cfg = small_config(use_true_structure=False, sample_sizes=(800,), trials=2)
    report = run_state_learning_experiment(cfg)
    for row in report.rows:
        assert row.structure_success in (True, False)


def test_state_experiment_l1_median_nonincreasing():
    cfg = small_config(use_true_structure=True,
                       sample_sizes=(250, 1000, 4000), trials=20,
                       regression=AlphatronConfig(iterations=150))
    report = run_state_learning_experiment(cfg)
    medians = []
    for size in cfg.sample_sizes:
        vals = [r.l1 for r in report.rows if r.sample_size == size]
        medians.append(float(np.median(vals)))
    # allow a little noise on top of the monotone trend
    assert all(b <= a * 1.05 + 1e-4 for a, b in zip(medians, medians[1:]))


def test_aggregates_recomputable_from_rows():
    cfg = small_config(use_true_structure=True, sample_sizes=(400,), trials=4)
    report = run_state_learning_experiment(cfg)
    again = aggregate_rows(report.rows, cfg.targets.eps_t)
    assert again == report.aggregates


def test_partial_experiment_small():
    cfg = small_config(sample_sizes=(2000,), trials=2, query_nodes=(2, 3),
                       regression=AlphatronConfig(iterations=150))
    report = run_partial_learning_experiment(cfg)
    assert report.kind == "partial"
    for row in report.rows:
        assert 0.0 <= row.max_cond_error <= 1.0
        assert row.boundary_count >= 1
        assert row.max_cond_error <= 0.2


def test_partial_experiment_query_override():
    cfg = small_config(sample_sizes=(1000,), trials=1,
                       regression=AlphatronConfig(iterations=100))
    report = run_partial_learning_experiment(cfg, query_nodes=(0,))
    assert report.rows[0].boundary_count >= 1


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def test_report_csv_json_identical_data(tmp_path):
    cfg = small_config(use_true_structure=True, sample_sizes=(400,), trials=2)
    report = run_state_learning_experiment(cfg)
    jpath, cpath = tmp_path / "r.json", tmp_path / "r.csv"
    write_report_json(report, jpath)
    write_report_csv(report, cpath)
    data = json.loads(jpath.read_text())
    with open(cpath) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(data["rows"])
    for crow, jrow in zip(rows, data["rows"]):
        assert int(crow["M"]) == jrow["sample_size"]
        assert int(crow["trial"]) == jrow["trial"]
        assert float(crow["fidelity"]) == jrow["fidelity"]
        assert float(crow["l1"]) == jrow["l1"]
        assert (crow["success"] or None) == (
            None if jrow["structure_success"] is None
            else str(int(jrow["structure_success"])))
        assert int(crow["runtime_ms"]) == jrow["runtime_ms"]


def test_partial_report_csv(tmp_path):
    cfg = small_config(sample_sizes=(800,), trials=1, query_nodes=(1,),
                       regression=AlphatronConfig(iterations=100))
    report = run_partial_learning_experiment(cfg)
    path = tmp_path / "p.csv"
    write_report_csv(report, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["M", "trial", "max_cond_error", "boundary_count",
                             "runtime_ms"]


def test_report_hash_excludes_runtime(tmp_path):
    cfg = small_config(sample_sizes=(300,), trials=1)
    a = run_structure_experiment(cfg)
    rows = tuple(dataclasses.replace(r, runtime_ms=r.runtime_ms + 5)
                 for r in a.rows)
    from rbmtomo.harness import _report_hash
    assert _report_hash("structure", a.rows, a.aggregates) == \
        _report_hash("structure", rows, a.aggregates)
