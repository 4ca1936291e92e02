import csv
import hashlib
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from dogdlab.cli import main
from dogdlab.distributed import RunResult, eta_bound, run_distributed
from dogdlab.errors import ConfigInvalid
from dogdlab.harness import (
    RUN_HEADER,
    ExperimentConfig,
    emit_csv,
    inspect_graph,
    read_csv,
    run_experiment,
)
from dogdlab.losses import gen_ridge_stream
from dogdlab.topology import build_complete_graph, metropolis_weights, spectral_gap


def small_result(T):
    s = gen_ridge_stream("stochastic", 3, max(T, 1), 2, seed=0)
    r = run_distributed("dogd_gt", s, metropolis_weights(build_complete_graph(2)), 0.01, "known_optimum")
    if T == 0:
        z = np.zeros((0,))
        return RunResult("dogd_gt", 0.01, np.zeros((0, 2)), z, z, z, r.x_traj[:1], r.s_traj[:0], r.grad_traj[:0])
    return r


class TestEmitCsv:
    def test_empty(self, tmp_path):
        p = emit_csv(small_result(0), tmp_path / "e.csv")
        assert p.read_text() == "t,avg_loss,regret,consensus_err,tracking_err\n"

    def test_one_round(self, tmp_path):
        text = emit_csv(small_result(1), tmp_path / "o.csv").read_text()
        assert text.endswith("\n") and len(text.splitlines()) == 2

    def test_round_trip_exact(self, tmp_path):
        r = small_result(25)
        header, data = read_csv(emit_csv(r, tmp_path / "r.csv"))
        assert tuple(header) == RUN_HEADER
        np.testing.assert_array_equal(data[:, 0], np.arange(1, 26))
        for k, arr in enumerate((r.avg_loss, r.regret, r.consensus_err, r.tracking_err), start=1):
            assert np.array_equal(data[:, k], arr)

    def test_seventeen_digits(self, tmp_path):
        text = emit_csv(small_result(3), tmp_path / "d.csv").read_text().splitlines()[1]
        mant = text.split(",")[1].split("e")[0].replace(".", "").lstrip("0")
        assert len(mant) <= 17


def cfg(tmp_path, **kw):
    base = dict(horizon=10, n_agents=[2], seeds=[0], output_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


class TestRunExperiment:
    def test_dogd_compare_files(self, tmp_path):
        files = run_experiment(cfg(tmp_path))
        names = sorted(p.name for p in files)
        assert names == sorted(
            ["dogd_gt_seed0.csv", "dogd_seed0.csv", "independent_ogd_seed0.csv", "summary.csv", "config.json", "manifest.json"]
        )
        for algo in ("dogd_gt", "dogd", "independent_ogd"):
            _, data = read_csv(tmp_path / "out" / f"{algo}_seed0.csv")
            assert data.shape == (10, 5)

    def test_manifest_hashes(self, tmp_path):
        run_experiment(cfg(tmp_path))
        out = tmp_path / "out"
        man = json.loads((out / "manifest.json").read_text())["files"]
        assert "config.json" in man and "summary.csv" in man
        for name, digest in man.items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest

    def test_summary_matches_run_files(self, tmp_path):
        run_experiment(cfg(tmp_path, seeds=[0, 1], horizon=30))
        out = tmp_path / "out"
        with open(out / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6
        for row in rows:
            _, data = read_csv(out / f"{row['algo']}_seed{row['seed']}.csv")
            assert float(row["mean_avg_loss"]) == pytest.approx(data[:, 1].mean(), rel=1e-15)
            assert float(row["last_avg_loss"]) == data[-1, 1]
            assert float(row["final_regret"]) == data[-1, 2]

    def test_default_eta_is_bound(self, tmp_path):
        run_experiment(cfg(tmp_path, topology="complete", n_agents=[4], horizon=50))
        with open(tmp_path / "out" / "summary.csv") as fh:
            eta = float(next(csv.DictReader(fh))["eta"])
        s = gen_ridge_stream("stochastic", 10, 50, 4, seed=0)
        assert eta == eta_bound(metropolis_weights(build_complete_graph(4)).rho, s.smoothness(), 4, 50)

    def test_explicit_eta(self, tmp_path):
        run_experiment(cfg(tmp_path, eta=0.001))
        with open(tmp_path / "out" / "summary.csv") as fh:
            assert all(float(r["eta"]) == 0.001 for r in csv.DictReader(fh))

    def test_per_agent_file(self, tmp_path):
        run_experiment(cfg(tmp_path, per_agent=True))
        header, data = read_csv(tmp_path / "out" / "dogd_gt_seed0_agents.csv")
        assert header == ["t", "agent0", "agent1"] and data.shape == (10, 3)

    def test_adversarial_uses_erm(self, tmp_path):
        run_experiment(cfg(tmp_path, setup="adversarial"))
        _, data = read_csv(tmp_path / "out" / "dogd_seed0.csv")
        assert np.all(np.isfinite(data[:, 2]))

    def test_scaling_files(self, tmp_path):
        files = run_experiment(cfg(tmp_path, experiment="dogd-scaling", n_agents=[2, 4], seeds=[0, 1]))
        runs = [p.name for p in files if p.name.startswith("dogd_gt_N")]
        assert len(runs) == 4

    def test_reruns_byte_identical(self, tmp_path, monkeypatch):
        outs = []
        for k, threads in enumerate(("1", "4")):
            monkeypatch.setenv("DOGDLAB_THREADS", threads)
            c = cfg(tmp_path, seeds=[0, 1, 2], horizon=40, output_dir=str(tmp_path / f"o{k}"))
            outs.append({p.name: p.read_bytes() for p in run_experiment(c) if p.suffix == ".csv"})
        assert outs[0] == outs[1]

    def test_maoml_compare(self, tmp_path):
        files = run_experiment(
            cfg(tmp_path, experiment="maoml-compare", n_agents=[2, 4], horizon=15, m=[5], dim=4)
        )
        names = {p.name for p in files}
        assert {"maoml_N2_m5_seed0.csv", "aruba_N2_m5_seed0.csv", "maoml_N4_m5_seed0.csv"} <= names
        header, data = read_csv(tmp_path / "out" / "maoml_N4_m5_seed0.csv")
        assert header == ["t", "avg_task_loss", "atar_running", "mean_v", "mean_phi_dist_to_theta0"]
        assert data.shape == (15, 5)
        with open(tmp_path / "out" / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        for row in rows:
            _, d = read_csv(tmp_path / "out" / f"{row['method']}_N{row['n_agents']}_m5_seed0.csv")
            assert float(row["final_atar"]) == pytest.approx(d[-1, 2], rel=1e-12)

    def test_maoml_zero_spread_beats_baseline(self, tmp_path):
        run_experiment(
            cfg(tmp_path, experiment="maoml-compare", n_agents=[8], topology="complete",
                horizon=200, m=[10], sigma_task=0.0, seeds=list(range(5)))
        )
        with open(tmp_path / "out" / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        med = {k: np.median([float(r["final_atar"]) for r in rows if r["method"] == k]) for k in ("maoml", "aruba")}
        assert med["maoml"] <= med["aruba"]

    def test_m_sweep(self, tmp_path):
        files = run_experiment(cfg(tmp_path, experiment="maoml-m-sweep", m=[2, 4], horizon=5, dim=3))
        assert {"maoml_N2_m2_seed0.csv", "maoml_N2_m4_seed0.csv"} <= {p.name for p in files}

    def test_graph_inspect_consistent(self, tmp_path):
        info = inspect_graph(cfg(tmp_path, experiment="graph-inspect", topology="complete", n_agents=[4], horizon=100))
        w = metropolis_weights(build_complete_graph(4))
        assert info["rho"] == spectral_gap(w.entries)
        assert info["eta_bound"] == eta_bound(info["rho"], info["smoothness"], 4, 100)
        assert len(info["edges"]) == 6

    def test_failure_leaves_no_files(self, tmp_path):
        bad = cfg(tmp_path, n_agents=[16], edge_prob=1e-9)
        with pytest.raises(Exception):
            run_experiment(bad)
        assert list((tmp_path / "out").iterdir()) == []


class TestConfig:
    @pytest.mark.parametrize(
        "field,value",
        [
            ("experiment", "bogus"),
            ("horizon", 0),
            ("dim", -1),
            ("n_agents", []),
            ("seeds", [-1]),
            ("m", [0]),
            ("eta", -0.1),
            ("eta_meta", 0.0),
            ("g_lip", math.nan),
            ("edge_prob", 0.0),
            ("topology", "ring"),
            ("weight_mode", "uniform"),
            ("setup", "synthetic_linreg"),
            ("sigma_task", -1.0),
            ("theta_star_mode", "best"),
            ("dataset_images", "x"),
        ],
    )
    def test_invalid(self, field, value):
        kw = {field: value}
        if field == "dataset_images":
            kw["setup"] = "dataset"
        with pytest.raises(ConfigInvalid) as exc:
            ExperimentConfig(**kw).validate()
        assert exc.value.field in (field, "setup", "dataset_images")

    def test_unknown_key(self):
        with pytest.raises(ConfigInvalid):
            ExperimentConfig.from_dict({"horizn": 3})

    def test_scalar_lists_promoted(self):
        c = ExperimentConfig.from_dict({"n_agents": 4, "seeds": 2})
        assert c.n_agents == [4] and c.seeds == [2]

    def test_setup_default_per_experiment(self):
        assert ExperimentConfig().validate().setup == "stochastic"
        assert ExperimentConfig(experiment="maoml-compare").validate().setup == "synthetic_linreg"


class TestCli:
    def test_graph(self):
        res = CliRunner().invoke(main, ["graph", "--n-agents", "4", "--topology", "complete"])
        assert res.exit_code == 0
        lines = res.output.splitlines()
        assert lines[0] == "N = 4"
        assert lines[2] == "rho = 0"

    def test_dogd(self, tmp_path):
        out = tmp_path / "o"
        res = CliRunner().invoke(main, ["dogd", "--horizon", "10", "--n-agents", "2", "--seeds", "0-1", "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert (out / "dogd_gt_seed1.csv").exists()

    def test_config_file_and_override(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"horizon": 12, "n_agents": 3, "seeds": [5], "eta": 0.002}))
        out = tmp_path / "o"
        res = CliRunner().invoke(main, ["dogd", "--config", str(conf), "--horizon", "7", "--out", str(out)])
        assert res.exit_code == 0, res.output
        saved = json.loads((out / "config.json").read_text())
        assert saved["horizon"] == 7 and saved["n_agents"] == [3] and saved["eta"] == 0.002
        _, data = read_csv(out / "dogd_seed5.csv")
        assert data.shape[0] == 7

    def test_toml_config(self, tmp_path):
        conf = tmp_path / "c.toml"
        conf.write_text('horizon = 6\nn-agents = [2]\nm = [3]\ndim = 2\n')
        out = tmp_path / "o"
        res = CliRunner().invoke(main, ["maoml", "--config", str(conf), "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert json.loads((out / "config.json").read_text())["m"] == [3]

    def test_maoml_m_sweep(self, tmp_path):
        out = tmp_path / "o"
        res = CliRunner().invoke(
            main, ["maoml", "--experiment", "m-sweep", "--m", "2,3", "--horizon", "4", "--dim", "2", "--out", str(out)]
        )
        assert res.exit_code == 0, res.output
        assert (out / "maoml_N8_m3_seed0.csv").exists()

    @pytest.mark.parametrize(
        "args",
        [
            ["dogd", "--edge-prob", "1.5"],
            ["dogd", "--seeds", "a-b"],
            ["dogd", "--setup", "synthetic_linreg"],
            ["maoml", "--g-lip", "-1"],
            ["graph", "--weight-mode", "odd"],
        ],
    )
    def test_config_errors_exit_2(self, args, tmp_path):
        res = CliRunner().invoke(main, args + ["--out", str(tmp_path / "o")])
        assert res.exit_code == 2
        assert "error:" in res.output

    def test_missing_config_file_exit_2(self, tmp_path):
        res = CliRunner().invoke(main, ["dogd", "--config", str(tmp_path / "none.json")])
        assert res.exit_code == 2

    def test_runtime_failure_exit_1(self, tmp_path):
        out = tmp_path / "o"
        res = CliRunner().invoke(main, ["dogd", "--n-agents", "16", "--edge-prob", "1e-9", "--out", str(out)])
        assert res.exit_code == 1
        assert "RetryExhausted" in res.output
        assert list(out.iterdir()) == []

    def test_literal_mode_fails_cleanly(self, tmp_path):
        res = CliRunner().invoke(main, ["graph", "--weight-mode", "paper-literal"])
        assert res.exit_code == 1 and "InvariantViolation" in res.output
