import json
import subprocess
import sys

import numpy as np
import pytest

from dpgraphon import harness
from dpgraphon.cli import main as cli_main


class TestAudits:
    def test_privacy_small(self):
        report = harness.audit_privacy(pairs=3, eps_list=(1.0,), seed=1)
        assert report["passed"]
        assert report["worst_margin"] <= 1e-9

    def test_sensitivity_small(self):
        report = harness.audit_sensitivity(graphs=4, seed=1)
        assert report["passed"]
        assert report["cases_checked"] >= 4 * 6

    def test_metrics_oracle_small(self):
        report = harness.audit_metrics_oracle(pairs_k2=30, pairs_k3=4, seed=1, step=0.05)
        assert report["passed"], report

    def test_inequality_small(self):
        report = harness.audit_inequalities(seed=1, instances=30, trials=50)
        assert report["passed"], report

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            harness.run_audit("nope")


class TestExperiment:
    def make_config(self, trials=1, **kw):
        base = dict(
            B0=[[1.5, 0.5], [0.5, 1.5]],
            k=2,
            n_list=[8],
            d_list=[3.0],
            eps_list=[1.0],
            R=2.0,
            trials=trials,
            seed=7,
            scorer="lipschitz",
            eta=1.0,
        )
        base.update(kw)
        return harness.ExperimentConfig(**base)

    def test_single_point_single_trial_one_row(self):
        result = harness.run_experiment(self.make_config(trials=1))
        assert len(result.rows) == 1

    def test_row_count_is_grid_times_trials(self):
        cfg = self.make_config(trials=2, eps_list=[0.5, 1.0], n_list=[8])
        result = harness.run_experiment(cfg)
        assert len(result.rows) == 2 * 2

    def test_bytewise_reproducibility(self):
        cfg = self.make_config(trials=2)
        a = harness.run_experiment(cfg).to_csv(include_runtime=False)
        b = harness.run_experiment(cfg).to_csv(include_runtime=False)
        assert a == b

    def test_capacity_errors_recorded_not_raised(self):
        cfg = self.make_config(n_list=[20], scorer="lipschitz")  # over the enum cap
        result = harness.run_experiment(cfg)
        assert any("error:" in row["flags"] for row in result.rows)

    def test_summary_matches_recomputation(self):
        cfg = self.make_config(trials=3)
        result = harness.run_experiment(cfg)
        vals = np.array([r["delta2_sq"] for r in result.rows])
        label = next(iter(result.summary))
        assert result.summary[label]["mean"] == pytest.approx(vals.mean())
        expect_se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert result.summary[label]["stderr"] == pytest.approx(expect_se)

    def test_plotdata_shapes_and_values(self):
        cfg = self.make_config(trials=2, eps_list=[0.5, 1.0])
        result = harness.run_experiment(cfg)
        csv_text = harness.emit_plotdata(result, x="eps", y="delta2_sq", groupby="n")
        lines = csv_text.strip().splitlines()
        assert lines[0] == "n,eps,mean_delta2_sq,stderr_delta2_sq,n_trials"
        assert len(lines) == 1 + 2  # two eps groups under one n
        with pytest.raises(ValueError):
            harness.emit_plotdata(result, x="nope", y="delta2_sq", groupby="n")

    def test_single_row_plotdata(self):
        result = harness.run_experiment(self.make_config(trials=1))
        csv_text = harness.emit_plotdata(result, x="d", y="rho_error", groupby="eps")
        assert len(csv_text.strip().splitlines()) == 2


class TestCLI:
    def test_generate_estimate_roundtrip(self, tmp_path):
        graph = tmp_path / "g.txt"
        rc = cli_main(
            [
                "generate",
                "--model",
                "sbm",
                "--b0",
                "[[1.5,0.5],[0.5,1.5]]",
                "--d",
                "3",
                "--n",
                "8",
                "--seed",
                "1",
                "--out",
                str(graph),
            ]
        )
        assert rc == 0
        rc = cli_main(
            [
                "estimate",
                "spectral",
                "--graph",
                str(graph),
                "--k",
                "2",
            ]
        )
        assert rc == 0

    def test_metrics_subcommand(self, capsys):
        rc = cli_main(["metrics", "--b", "[[1,0],[0,1]]", "--b0", "[[1,0],[0,1]]"])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["delta_ds"] <= 1e-9

    def test_score_subcommand(self, tmp_path, capsys):
        graph = tmp_path / "g.txt"
        cli_main(
            ["generate", "--b0", "[[1,1],[1,1]]", "--d", "2", "--n", "6", "--seed", "0", "--out", str(graph)]
        )
        capsys.readouterr()
        rc = cli_main(
            ["score", "--graph", str(graph), "--b", "[[1.0,0.5],[0.5,1.0]]", "--divisor", "0.4", "--mode", "lipschitz"]
        )
        assert rc == 0
        assert "score" in json.loads(capsys.readouterr().out)

    def test_audit_exit_codes(self, capsys):
        rc = cli_main(["audit", "--kind", "privacy", "--pairs", "2", "--seed", "3"])
        capsys.readouterr()
        assert rc == 0

    def test_experiment_and_plotdata(self, tmp_path, capsys):
        prefix = tmp_path / "exp"
        rc = cli_main(
            [
                "experiment",
                "--b0",
                "[[1.5,0.5],[0.5,1.5]]",
                "--k",
                "2",
                "--n-list",
                "[8]",
                "--d-list",
                "[3.0]",
                "--eps-list",
                "[1.0]",
                "--trials",
                "2",
                "--seed",
                "5",
                "--scorer",
                "lipschitz",
                "--out",
                str(prefix),
            ]
        )
        assert rc == 0
        capsys.readouterr()
        assert (tmp_path / "exp.csv").exists()
        assert (tmp_path / "exp.json").exists()
        rc = cli_main(
            [
                "plotdata",
                "--input",
                str(tmp_path / "exp.csv"),
                "--x",
                "eps",
                "--y",
                "delta2_sq",
                "--groupby",
                "n",
            ]
        )
        assert rc == 0

    def test_mechanism_audit_csv(self, capsys):
        rc = cli_main(["mechanism", "audit", "--n", "6", "--eps", "1.0", "--seed", "2"])
        assert rc == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert out[0] == "candidate,log_ratio,score,score_adjacent"
        ratios = [abs(float(line.split(",")[-3])) for line in out[1:]]
        assert max(ratios) <= 1.0 + 1e-9

    def test_usage_error_exit_code(self):
        proc = subprocess.run(
            [sys.executable, "-m", "dpgraphon.cli", "bogus"],
            capture_output=True,
        )
        assert proc.returncode == 2

    def test_toml_config(self, tmp_path):
        cfgfile = tmp_path / "exp.toml"
        cfgfile.write_text(
            'B0 = [[1.5, 0.5], [0.5, 1.5]]\nk = 2\nn_list = [8]\nd_list = [3.0]\n'
            'eps_list = [1.0]\nR = 2.0\ntrials = 1\nseed = 3\nscorer = "lipschitz"\neta = 1.0\n'
        )
        out = tmp_path / "fromtoml"
        rc = cli_main(["experiment", "--config", str(cfgfile), "--out", str(out)])
        assert rc == 0
        assert (tmp_path / "fromtoml.csv").exists()
