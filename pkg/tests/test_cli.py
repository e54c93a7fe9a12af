import csv
import json
import logging

import pytest

from stradic.cli import SUMMARY_FIELDS, TRACE_COLUMNS, RunSpec, main, parse_seeds


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSolve:
    def test_sphere_linear_end_to_end(self, tmp_path, capsys):
        code = main(["solve", "--problem", "sphere-linear", "--eta", "0.5", "--eps-d", "1e-6",
                     "--eps-c", "1e-6", "--seed", "7", "--output", str(tmp_path)])
        assert code == 0
        rows = _rows(tmp_path / "sphere-linear_seed7.csv")
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert rows[1][0] == "0" and rows[1][1] in ("tangential", "normal_only")
        summary = json.loads((tmp_path / "summary.json").read_text())
        (run,) = summary["runs"]
        assert set(SUMMARY_FIELDS) <= set(run)
        assert run["status"] == "converged" and run["seed"] == 7
        # one row per step plus the terminal test point
        assert len(rows) - 1 == run["iterations"] + 1
        last = rows[-1]
        assert last[1] == "terminated" and last[6] == ""
        assert float(last[2]) <= 1e-6 and float(last[3]) <= 1e-6
        assert float(last[2]) == run["norm_d"]
        assert summary["spec"]["config"]["eta"] == 0.5
        assert "converged" in capsys.readouterr().out

    def test_unknown_problem(self, tmp_path, capsys):
        assert main(["solve", "--problem", "nosuch", "--output", str(tmp_path)]) == 4
        err = capsys.readouterr().err
        assert "sphere-linear" in err and "rosenbrock-circle" in err

    def test_invalid_beta(self, tmp_path, capsys):
        assert main(["solve", "--problem", "sphere-linear", "--beta", "1.5", "--output", str(tmp_path)]) == 3
        assert "beta" in capsys.readouterr().err

    def test_iteration_budget(self, tmp_path):
        assert main(["solve", "--problem", "rosenbrock-circle", "--max-iter", "20", "--output", str(tmp_path)]) == 2

    def test_runtime_error(self, tmp_path, capsys):
        # sphere-linear has no finite-sum structure for a mini-batch oracle
        assert main(["solve", "--problem", "sphere-linear", "--oracle", "batch:4", "--output", str(tmp_path)]) == 3
        assert "finite-sum" in capsys.readouterr().err

    def test_config_file_and_flag_override(self, tmp_path):
        cfg = tmp_path / "spec.json"
        cfg.write_text(json.dumps({"problem": "separable-quadratic", "eta": 0.25, "seeds": [1, 2],
                                   "output": str(tmp_path / "out")}))
        assert main(["solve", "--config", str(cfg), "--eta", "0.5"]) == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["spec"]["config"]["eta"] == 0.5
        assert [r["seed"] for r in summary["runs"]] == [1, 2]
        assert (tmp_path / "out" / "separable-quadratic_seed2.csv").exists()

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "spec.json"
        cfg.write_text(json.dumps({"problem": "sphere-linear", "etta": 0.5}))
        assert main(["solve", "--config", str(cfg)]) == 3

    def test_psi_column_and_17_digits(self, tmp_path):
        main(["solve", "--problem", "sphere-linear", "--rho", "10", "--max-iter", "5",
              "--oracle", "gaussian:0.1", "--output", str(tmp_path)])
        rows = _rows(tmp_path / "sphere-linear_seed0.csv")[1:]
        assert all(r[8] for r in rows)
        assert all(float(repr(float(r[2]))) == float(r[2]) for r in rows)
        assert rows[0][2] == format(float(rows[0][2]), ".17g")

    def test_parallel_seeds_match_serial(self, tmp_path):
        args = ["solve", "--problem", "rosenbrock-circle", "--oracle", "step:0.1", "--seeds", "0:3", "--max-iter", "200"]
        main(args + ["--output", str(tmp_path / "a")])
        main(args + ["--output", str(tmp_path / "b"), "--jobs", "2"])
        for s in range(3):
            name = f"rosenbrock-circle_seed{s}.csv"
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestVerify:
    def test_projection_filter(self, capsys):
        assert main(["verify", "--filter", "projections", "--projection-instances", "200"]) == 0
        out = capsys.readouterr().out
        assert "projections: 200 instances" in out and "lemmas" not in out

    def test_lemma_suite_passes(self, tmp_path, capsys):
        report = tmp_path / "report.json"
        code = main(["verify", "--filter", "lemmas", "--filter", "adagrad", "--iterations", "300",
                     "--seeds", "0", "--json", str(report)])
        assert code == 0
        data = json.loads(report.read_text())
        assert data["lemmas"]["ok"] is True
        assert "adagrad_sum_lower" in data["lemmas"]["checked"]

    def test_fault_injection_fails_with_adagrad_violation(self, capsys):
        code = main(["verify", "--filter", "adagrad", "--iterations", "300", "--seeds", "0",
                     "--problem", "rosenbrock-circle", "--fault-alpha-scale", "0.05"])
        assert code != 0
        out = capsys.readouterr().out
        assert "adagrad_sum_lower" in out and "FAIL" in out

    def test_noise_filter(self, capsys):
        assert main(["verify", "--filter", "noise", "--problem", "rosenbrock-circle", "--iterations", "3000"]) == 0
        assert "kappa_dir2" in capsys.readouterr().out


class TestRate:
    def test_deterministic_slope(self, tmp_path, capsys):
        out_csv = tmp_path / "rate.csv"
        assert main(["rate", "--problem", "separable-quadratic", "--max-iter", "2000", "--csv", str(out_csv)]) == 0
        line = capsys.readouterr().out
        slope = float(line.split()[1])
        assert slope <= -0.4
        rows = _rows(out_csv)
        assert rows[0] == ["k", "average"] and len(rows) == 2001

    def test_short_trace(self, capsys):
        assert main(["rate", "--problem", "sphere-linear", "--max-iter", "50"]) == 3
        assert "at least 100" in capsys.readouterr().err

    def test_converged_early_is_short(self):
        assert main(["rate", "--problem", "sphere-linear", "--eps-d", "1e-3", "--eps-c", "1e-3"]) == 3


class TestListAndSpec:
    def test_list_problems(self, capsys):
        assert main(["list-problems"]) == 0
        out = capsys.readouterr().out
        for name in ("sphere-linear", "separable-quadratic", "rosenbrock-circle", "finite-sum-lsq"):
            assert name in out

    def test_run_spec_round_trip(self):
        spec = RunSpec(problem="rosenbrock-circle", oracle="step:0.1", seeds=[3, 4], config={"eta": 0.5})
        canon = spec.canonical()
        assert RunSpec.from_dict(canon).canonical() == canon
        assert json.loads(json.dumps(canon)) == canon

    @pytest.mark.parametrize("text,seeds", [("3", [3]), ("0,2,5", [0, 2, 5]), ("0:4", [0, 1, 2, 3])])
    def test_seed_syntax(self, text, seeds):
        assert parse_seeds(text) == seeds

    def test_log_level_from_environment(self, monkeypatch):
        logger = logging.getLogger("stradic")
        monkeypatch.setattr(logger, "level", logger.level)
        monkeypatch.setattr(logger, "handlers", [])
        monkeypatch.setenv("STRADIC_LOG", "debug")
        assert main(["list-problems"]) == 0
        assert logger.level == logging.DEBUG
        monkeypatch.setenv("STRADIC_LOG", "error")
        main(["list-problems"])
        assert logger.level == logging.ERROR
