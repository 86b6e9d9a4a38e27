import json

import pytest

from rbmtomo.cli import main
from rbmtomo import models, sampling, structure


def run_cli(*args):
    return main([str(a) for a in args])


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("thresholds", "--alpha", "1", "--beta", "1", "--d2", "2",
                "--frobnicate")
    assert exc.value.code == 2
    assert "--frobnicate" in capsys.readouterr().err


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        run_cli("no-such-command")
    assert exc.value.code == 2


def test_thresholds_summary(capsys):
    assert run_cli("thresholds", "--alpha", "1", "--beta", "1", "--d2", "2") == 0
    out = capsys.readouterr().out
    assert "tau=3.072106e-06" in out
    assert "delta=6.766764e-02" in out
    assert "k=13" in out


def test_thresholds_file_output(tmp_path, capsys):
    out = tmp_path / "th.json"
    assert run_cli("thresholds", "--alpha", "1", "--beta", "1", "--d2", "2",
                   "--n", "10", "--out", out) == 0
    data = json.loads(out.read_text())
    assert data["thresholds"]["k"] == 13
    assert "robustness_limits" in data and "sample_bounds" in data


def test_thresholds_bad_alpha_exits_1(capsys):
    assert run_cli("thresholds", "--alpha", "0", "--beta", "1", "--d2", "2") == 1
    assert "error" in capsys.readouterr().err


def test_full_pipeline(tmp_path, capsys):
    model_path = tmp_path / "model.json"
    samples_path = tmp_path / "shots.txt"
    graph_path = tmp_path / "graph.json"
    pot_path = tmp_path / "potential.json"
    eval_path = tmp_path / "eval.json"

    assert run_cli("gen-model", "--kind", "chain", "--n", "6",
                   "--out", model_path) == 0
    assert run_cli("sample", "--model", model_path, "--count", "4000",
                   "--seed", "3", "--out", samples_path) == 0
    assert run_cli("learn-structure", "--samples", samples_path,
                   "--method", "lc", "--tau", "0.05",
                   "--out", graph_path) == 0
    assert run_cli("learn-params", "--samples", samples_path,
                   "--graph", graph_path, "--iterations", "200",
                   "--seed", "5", "--out", pot_path) == 0
    assert run_cli("evaluate", "--model", model_path,
                   "--potential", pot_path, "--graph", graph_path,
                   "--out", eval_path) == 0

    truth = models.rbm_two_hop(models.load_model(model_path))
    learned = structure.load_graph(graph_path)
    assert learned.edges() == truth.edges()
    report = json.loads(eval_path.read_text())
    assert report["fidelity"] > 0.99
    out = capsys.readouterr().out
    assert "fidelity=" in out


def test_sample_binary_and_gibbs(tmp_path):
    model_path = tmp_path / "model.json"
    run_cli("gen-model", "--kind", "chain", "--n", "4", "--out", model_path)
    bin_path = tmp_path / "shots.bin"
    assert run_cli("sample", "--model", model_path, "--count", "100",
                   "--seed", "1", "--binary", "--out", bin_path) == 0
    shots = sampling.load_samples_binary(bin_path)
    assert shots.count == 100
    gibbs_path = tmp_path / "gibbs.txt"
    assert run_cli("sample", "--model", model_path, "--count", "50",
                   "--gibbs", "--burn-in", "20", "--thinning", "2",
                   "--seed", "2", "--out", gibbs_path) == 0
    assert sampling.load_samples_text(gibbs_path).count == 50


def test_learn_structure_ferro_method(tmp_path):
    model_path = tmp_path / "model.json"
    samples_path = tmp_path / "shots.txt"
    graph_path = tmp_path / "graph.json"
    run_cli("gen-model", "--kind", "chain", "--n", "5", "--h", "0.1",
            "--g", "0.1", "--out", model_path)
    run_cli("sample", "--model", model_path, "--count", "50000",
            "--seed", "8", "--out", samples_path)
    assert run_cli("learn-structure", "--samples", samples_path,
                   "--method", "ferro", "--eta", "0.025", "--k", "4",
                   "--out", graph_path) == 0
    truth = models.rbm_two_hop(models.load_model(model_path))
    assert structure.load_graph(graph_path).edges() == truth.edges()


def test_learn_structure_ferro_missing_eta_exits_1(tmp_path, capsys):
    model_path = tmp_path / "model.json"
    samples_path = tmp_path / "shots.txt"
    run_cli("gen-model", "--kind", "chain", "--n", "4", "--out", model_path)
    run_cli("sample", "--model", model_path, "--count", "100",
            "--seed", "1", "--out", samples_path)
    assert run_cli("learn-structure", "--samples", samples_path,
                   "--method", "ferro", "--out", tmp_path / "g.json") == 1
    assert "eta" in capsys.readouterr().err


def test_perturb_command(tmp_path, capsys):
    model_path = tmp_path / "model.json"
    run_cli("gen-model", "--kind", "chain", "--n", "4", "--out", model_path)
    table_path = tmp_path / "table.json"
    assert run_cli("perturb", "--model", model_path, "--eps-inf", "0.001",
                   "--seed", "9", "--out", table_path) == 0
    table = models.load_table(table_path)
    assert abs(table.probs.sum() - 1.0) <= 1e-12
    assert "achieved linf=" in capsys.readouterr().out


def test_sample_count_error_exit_1(tmp_path, capsys):
    model_path = tmp_path / "model.json"
    run_cli("gen-model", "--kind", "chain", "--n", "3", "--out", model_path)
    assert run_cli("sample", "--model", model_path, "--count", "0",
                   "--out", tmp_path / "x.txt") == 1


def test_missing_file_exit_1(tmp_path):
    assert run_cli("sample", "--model", tmp_path / "nope.json",
                   "--count", "5", "--out", tmp_path / "x.txt") == 1


def test_experiment_command(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("""
schema_version = 1
[experiment]
kind = "structure"
sample_sizes = [200, 400]
trials = 2
base_seed = 3
[model]
kind = "chain"
n = 5
[noise]
kind = "none"
[learner]
method = "lc"
tau = 0.05
[regression]
[sampler]
[targets]
""")
    outdir = tmp_path / "results"
    assert run_cli("experiment", "--config", cfg, "--out", outdir) == 0
    report = json.loads((outdir / "report.json").read_text())
    assert len(report["rows"]) == 4
    csv_text = (outdir / "report.csv").read_text().splitlines()
    assert csv_text[0] == "M,trial,success,fidelity,l1,fidelity_clean,l1_clean,runtime_ms"
    assert len(csv_text) == 5
    assert "structure experiment done" in capsys.readouterr().out


def test_experiment_seed_override(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("""
schema_version = 1
[experiment]
kind = "structure"
sample_sizes = [200]
trials = 1
base_seed = 3
[model]
kind = "chain"
n = 4
[noise]
[learner]
method = "lc"
tau = 0.05
[regression]
[sampler]
[targets]
""")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("experiment", "--config", cfg, "--out", out1,
                   "--format", "json") == 0
    assert run_cli("experiment", "--config", cfg, "--seed", "99",
                   "--out", out2, "--format", "json") == 0
    a = json.loads((out1 / "report.json").read_text())
    b = json.loads((out2 / "report.json").read_text())
    assert a["provenance"]["config_hash"] != b["provenance"]["config_hash"]
    assert not (out1 / "report.csv").exists()
