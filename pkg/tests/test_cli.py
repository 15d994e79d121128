import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dispersal_lab.cli import main, read_table
from dispersal_lab.core import TraitGrid

COARSE = ["--set", "domain.n_x=30", "--set", "trait.n_theta=30"]

CONFIG = """\
[domain]
n_x = 20

[trait]
n_theta = 16

[model]
D = cosine(mean=0.5, amplitude=0.4)
K = figure1
epsilon = 0.05
"""


def run(tmp_path, *argv):
    out = tmp_path / "out"
    return main([*argv, "--out", str(out)]), out


def header(path):
    with open(path) as fh:
        return [next(fh).rstrip("\n") for _ in range(3)]


class TestExitCodes:
    def test_validate_ok(self, capsys):
        assert main(["validate"]) == 0
        assert "valid" in capsys.readouterr().out

    def test_missing_epsilon(self, tmp_path, capsys):
        path = tmp_path / "c.ini"
        path.write_text(CONFIG.replace("epsilon = 0.05\n", ""))
        assert main(["validate", "--config", str(path)]) == 3
        assert "missing required key model.epsilon" in capsys.readouterr().err

    def test_bad_value_reports_line(self, tmp_path, capsys):
        path = tmp_path / "c.ini"
        path.write_text(CONFIG.replace("n_x = 20", "n_x = twenty"))
        assert main(["validate", "--config", str(path)]) == 3
        assert "line 2:" in capsys.readouterr().err

    def test_two_minima(self, capsys):
        assert main(["validate", "--set", "model.D=cosine(mean=1, amplitude=1, freq=2)"]) == 2
        err = capsys.readouterr().err
        assert "non-unique minimizer" in err and "D must be positive" in err

    def test_solver_failure(self, tmp_path, capsys):
        status, _ = run(tmp_path, "steady", *COARSE, "--set", "solver.max_time=0.001")
        assert status == 4
        assert "no steady state" in capsys.readouterr().err

    def test_ess_violation_from_file(self, tmp_path, capsys):
        tr = TraitGrid(100)
        H = 4 * np.sin(np.pi * (tr.nodes - 0.5)) ** 2 + 0.3
        path = tmp_path / "H.csv"
        np.savetxt(path, np.column_stack([tr.nodes, H]), delimiter=",", header="theta,H")
        status, out = run(tmp_path, "hj", "--set", f"hj.hamiltonian_file={path}")
        assert status == 5
        assert "ESS constraint violated: min H = 0.3" in capsys.readouterr().err
        assert json.loads((out / "manifest.json").read_text())["exit_status"] == 5

    def test_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "dispersal_lab.cli", "validate", "--preset", "figure1"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0


class TestOutputs:
    def test_figure1_files(self, tmp_path):
        status, out = run(tmp_path, "figure1", "--set", "run.T=0.02", "--set", "run.snapshot_times=0.01,0.02")
        assert status == 0
        names = sorted(os.listdir(out))
        assert names == sorted(
            [
                "K.csv",
                "manifest.json",
                "mean_trait.csv",
                "snapshot_1_marginal.csv",
                "snapshot_1_rho.csv",
                "snapshot_2_marginal.csv",
                "snapshot_2_rho.csv",
            ]
        )
        series = read_table(out / "mean_trait.csv")
        assert series.shape[1] == 4 and series[0, 0] == 0.0
        assert header(out / "mean_trait.csv")[2] == "# columns: t,mean_trait,trait_stddev,mass"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["exit_status"] == 0 and len(manifest["snapshot_times"]) == 2
        assert header(out / "K.csv")[1] == f"# config_digest: {manifest['config_digest']}"

    def test_deterministic(self, tmp_path):
        argv = ["figure1", "--set", "run.T=0.01", "--set", "run.snapshot_times=0.01"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main([*argv, "--out", str(a)]) == 0
        assert main([*argv, "--out", str(b)]) == 0
        for name in os.listdir(a):
            if name != "manifest.json":
                assert (a / name).read_bytes() == (b / name).read_bytes(), name
        ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
        assert ma["config_digest"] == mb["config_digest"]

    def test_hamiltonian_within_bounds(self, tmp_path):
        status, out = run(tmp_path, "hamiltonian", *COARSE)
        assert status == 0
        table = read_table(out / "hamiltonian.csv")
        H = table[:, 1]
        assert np.all(H >= -4.6 * (1 + 1e-9)) and np.all(H <= 4.6)
        assert int(np.argmin(H)) == 15

    def test_steady_and_hj(self, tmp_path):
        status, out = run(tmp_path, "steady", *COARSE)
        assert status == 0
        assert json.loads((out / "manifest.json").read_text())["identity_defect"] < 1e-6
        status, out = run(tmp_path, "hj", *COARSE)
        assert status == 0
        u = read_table(out / "potential.csv")[:, 1]
        assert np.max(u) == 0.0 and int(np.argmax(u)) == 15

    def test_converge_table(self, tmp_path):
        status, out = run(tmp_path, "converge", *COARSE, "--set", "run.epsilons=0.2,0.15,0.1")
        assert status == 0
        table = read_table(out / "convergence.csv")
        assert table.shape == (3, 10)
        np.testing.assert_array_equal(table[:, 0], [0.2, 0.15, 0.1])

    def test_canonical_short(self, tmp_path):
        status, out = run(tmp_path, "canonical", *COARSE, "--set", "hj.T=0.002", "--set", "hj.theta_0=0.3")
        assert status == 0
        traj = read_table(out / "trajectory.csv")
        assert traj[0, 1] == pytest.approx(0.3)
        assert np.all(np.diff(traj[:, 0]) > 0)

    def test_no_temporary_files_left(self, tmp_path):
        run(tmp_path, "hamiltonian", *COARSE)
        run(tmp_path, "steady", *COARSE, "--set", "solver.max_time=0.001")
        assert not [n for n in os.listdir(tmp_path / "out") if n.startswith(".tmp-")]

    def test_output_dir_from_config(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        path = tmp_path / "c.ini"
        path.write_text(CONFIG + "[output]\ndir = results\n")
        assert main(["hamiltonian", "--config", str(path)]) == 0
        assert (tmp_path / "results" / "hamiltonian.csv").exists()
