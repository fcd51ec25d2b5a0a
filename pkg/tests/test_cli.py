"""Tests for the experiment CLI."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fbsdekit import cli
from fbsdekit.errors import NumericalFailure

FAST = [
    "--paths", "400", "--fine-n", "64", "--seed", "5",
]


def run_cli(capsys, argv):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def strip_wall(csv_text):
    lines = []
    for line in csv_text.strip().splitlines():
        if line.startswith("#") or line == cli.CSV_HEADER:
            lines.append(line)
        else:
            lines.append(line.rsplit(",", 1)[0])
    return "\n".join(lines)


class TestRun:
    def test_constant_problem_tiny_error(self, capsys):
        code, out, _ = run_cli(
            capsys, ["run", "--problem", "constant", "--N", "4", "--M", "1"] + FAST
        )
        assert code == 0
        header, row = out.strip().splitlines()
        assert header == cli.CSV_HEADER
        fields = row.split(",")
        assert fields[0] == "differentiation"
        assert fields[1] == "constant"
        assert float(fields[8]) < 1e-8  # err_y
        assert fields[2:7] == ["4", "1", "400", "5", "64"]

    def test_deterministic_rows(self, capsys):
        argv = ["run", "--problem", "example2", "--N", "4", "--M", "2"] + FAST
        _, out1, _ = run_cli(capsys, argv)
        _, out2, _ = run_cli(capsys, argv)
        assert strip_wall(out1) == strip_wall(out2)

    def test_out_file_appends_with_single_header(self, capsys, tmp_path):
        path = tmp_path / "runs.csv"
        argv = [
            "run", "--problem", "constant", "--N", "2", "--M", "1",
            "--out", str(path),
        ] + FAST
        run_cli(capsys, argv)
        run_cli(capsys, argv)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == cli.CSV_HEADER
        assert len(lines) == 3
        assert lines[1].count(",") == lines[2].count(",") == 11

    def test_config_file_precedence(self, capsys, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"problem": "constant", "N": 4, "M": 1,
                                      "paths": 300, "fine_n": 16, "seed": 3}))
        code, out, _ = run_cli(capsys, ["run", "--config", str(config), "--N", "2"])
        assert code == 0
        row = out.strip().splitlines()[1].split(",")
        assert row[1] == "constant"
        assert row[2] == "2"  # flag beats config
        assert row[4] == "300"  # config beats default

    def test_unknown_config_key(self, capsys, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"bogus": 1}))
        code, _, err = run_cli(capsys, ["run", "--config", str(config)])
        assert code == 1
        assert "bogus" in err

    def test_invalid_flag_value_exits_one(self, capsys):
        code, _, err = run_cli(capsys, ["run", "--method", "bogus"])
        assert code == 1
        assert "method" in err

    def test_incompatible_grid_exits_one(self, capsys):
        code, _, err = run_cli(
            capsys,
            ["run", "--problem", "constant", "--N", "3", "--M", "1"] + FAST,
        )
        assert code == 1
        assert "divisible" in err

    def test_numerical_failure_exits_two(self, capsys, monkeypatch):
        def explode(*args, **kwargs):
            raise NumericalFailure("boom", iteration=2, step=3)

        monkeypatch.setattr(cli, "run_markovian_iteration", explode)
        code, _, err = run_cli(
            capsys, ["run", "--problem", "constant", "--N", "2", "--M", "1"] + FAST
        )
        assert code == 2
        assert "iteration 2" in err and "step 3" in err


class TestSweep:
    def test_n_sweep_rows_and_rate(self, capsys):
        code, out, _ = run_cli(
            capsys,
            ["sweep", "--sweep", "N", "--values", "2,4,8",
             "--problem", "brownian-linear", "--M", "1"] + FAST,
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == cli.CSV_HEADER
        assert len(lines) == 5
        assert lines[-1].startswith("# rate_total,")
        assert [line.split(",")[2] for line in lines[1:4]] == ["2", "4", "8"]

    def test_sweep_row_matches_single_run(self, capsys):
        base = ["--problem", "example2", "--M", "2"] + FAST
        _, sweep_out, _ = run_cli(
            capsys, ["sweep", "--sweep", "N", "--values", "4,8"] + base
        )
        _, run_out, _ = run_cli(capsys, ["run", "--N", "8"] + base)
        sweep_rows = {
            line.split(",")[2]: strip_wall(line)
            for line in sweep_out.strip().splitlines()
            if line[0].isalpha()
        }
        run_row = strip_wall(run_out.strip().splitlines()[1])
        assert sweep_rows["8"] == run_row

    def test_m_sweep(self, capsys):
        code, out, _ = run_cli(
            capsys,
            ["sweep", "--sweep", "M", "--values", "1,2,3",
             "--problem", "example2", "--N", "4"] + FAST,
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert [line.split(",")[3] for line in lines[1:]] == ["1", "2", "3"]
        assert not any(line.startswith("#") for line in lines)

    def test_bad_values_exit_one(self, capsys):
        code, _, err = run_cli(
            capsys, ["sweep", "--sweep", "N", "--values", "2,soup"] + FAST
        )
        assert code == 1
        assert "values" in err

    def test_nondivisor_value_exits_one(self, capsys):
        code, _, err = run_cli(
            capsys,
            ["sweep", "--sweep", "N", "--values", "3",
             "--problem", "constant"] + FAST,
        )
        assert code == 1
        assert "divide" in err


CONSTANTS_TEXT = """\
k_b = 0.0
k_f = -1.0
K = 1.0
b_y = 0.0
b_z = 0.0
sigma_y = 0.0
sigma_x = 0.5
f_x = 1.0
f_z = 0.5
g_x = 1.0
b_0 = 0.0
sigma_0 = 0.0
f_0 = 1.0
g_0 = 1.0
Sigma = 1.0
T = 1.0
"""


class TestDiagnose:
    def test_table_and_json(self, capsys, tmp_path):
        path = tmp_path / "constants.txt"
        path.write_text(CONSTANTS_TEXT)
        code, out, _ = run_cli(capsys, ["diagnose", "--constants", str(path)])
        assert code == 0
        assert "conditionL0" in out
        payload = json.loads(out[out.index("{"):])
        assert payload["conditionL0"] is True
        assert payload["conditionC1"] is True
        assert payload["conditionC2"] is True

    def test_json_out_file(self, capsys, tmp_path):
        src = tmp_path / "constants.txt"
        src.write_text(CONSTANTS_TEXT)
        dst = tmp_path / "report.json"
        code, out, _ = run_cli(
            capsys, ["diagnose", "--constants", str(src), "--out", str(dst)]
        )
        assert code == 0
        payload = json.loads(dst.read_text())
        assert "c2_at_L1L1" in payload
        assert "{" not in out  # table only on stdout when writing a file

    def test_missing_key_named(self, capsys, tmp_path):
        path = tmp_path / "constants.txt"
        path.write_text(CONSTANTS_TEXT.replace("Sigma = 1.0\n", ""))
        code, _, err = run_cli(capsys, ["diagnose", "--constants", str(path)])
        assert code == 1
        assert "Sigma" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, ["diagnose", "--constants", str(tmp_path / "nope.txt")]
        )
        assert code == 1


class TestThreadIndependence:
    def test_rows_identical_across_thread_caps(self, tmp_path):
        argv = [
            sys.executable, "-m", "fbsdekit.cli", "run",
            "--problem", "example2", "--N", "4", "--M", "2",
            "--paths", "500", "--fine-n", "64", "--seed", "5",
        ]
        outputs = []
        for threads in ("1", "4"):
            env = dict(os.environ, FBSDE_THREADS=threads)
            proc = subprocess.run(
                argv, capture_output=True, text=True, env=env,
                cwd="/root/pkg", check=True,
            )
            outputs.append(strip_wall(proc.stdout))
        assert outputs[0] == outputs[1]
