from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from symsde.cli import main

RATE_CONFIG = """\
[model]
sigma = const:1.0
drift = cos_s
x0 = 0.0

[driver]
kind = wiener

[experiment]
T = 1.0
finest_n = 512
epsilons = 0.125 0.0625 0.03125 0.015625
replicates = 3
base_seed = 7
rate_exponent_hypothesis = 1.0
min_n = 32
"""

SOLVE_CONFIG = """\
[model]
sigma = sin_plus_2
drift = sin_cos
x0 = 0.1

[driver]
kind = wiener

[experiment]
T = 1.0
finest_n = 256
epsilons = 0.125 0.0625
replicates = 1
base_seed = 3
min_n = 32
"""


def _data_lines(text: str) -> list[str]:
    return [ln for ln in text.splitlines()
            if ln and not ln.startswith("#") and not ln[0].isalpha()]


def test_noise_command_writes_expected_csv(tmp_path, capsys):
    out = tmp_path / "mu.csv"
    code = main(["noise", "--driver", "wiener", "--n", "1024", "--seed", "7",
                 "--out", str(out)])
    assert code == 0
    rows = _data_lines(out.read_text())
    assert len(rows) == 1025
    assert float(rows[0].split(",")[1]) == 0.0
    # idempotent: identical bytes on rerun
    first = out.read_bytes()
    assert main(["noise", "--driver", "wiener", "--n", "1024", "--seed", "7",
                 "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_noise_rejects_hurst_outside_range(tmp_path):
    code = main(["noise", "--driver", "fbm", "--hurst", "0.4", "--n", "64",
                 "--out", str(tmp_path / "x.csv")])
    assert code == 2


def test_bad_flags_exit_2(tmp_path):
    assert main(["noise", "--driver", "nonsense"]) == 2
    assert main(["rate"]) == 2  # --config required
    assert main(["frobnicate"]) == 2


def test_solve_command_outputs(tmp_path, capsys):
    cfg = tmp_path / "solve.ini"
    cfg.write_text(SOLVE_CONFIG)
    out_dir = tmp_path / "run"
    code = main(["solve", "--config", str(cfg), "--out", str(out_dir)])
    assert code == 0
    averaged = out_dir / "trajectory_averaged.csv"
    eps1 = out_dir / "trajectory_eps_0.125.csv"
    eps2 = out_dir / "trajectory_eps_0.0625.csv"
    for f in (averaged, eps1, eps2):
        assert f.is_file()
        assert len(_data_lines(f.read_text())) == 257
    report = (out_dir / "residual_report.txt").read_text()
    assert "residual[averaged]:" in report
    assert "residual[eps=0.125]:" in report
    assert "a4_check: PASS" in report
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["tool_version"]
    assert manifest["config_sha256"]


def test_solve_epsilon_overrides_share_one_path(tmp_path):
    cfg = tmp_path / "solve.ini"
    cfg.write_text(SOLVE_CONFIG)
    out_dir = tmp_path / "run"
    code = main(["solve", "--config", str(cfg), "--out", str(out_dir),
                 "--epsilon", "0.1", "--epsilon", "0.05"])
    assert code == 0
    a = np.genfromtxt(out_dir / "trajectory_eps_0.1.csv", delimiter=",",
                      skip_header=5)
    b = np.genfromtxt(out_dir / "trajectory_eps_0.05.csv", delimiter=",",
                      skip_header=5)
    assert np.array_equal(a[:, 1], b[:, 1])  # identical mu column: same omega
    assert not np.array_equal(a[:, 3], b[:, 3])


def test_solve_without_averaged_form_exits_2_naming_a4(tmp_path, capsys):
    cfg = tmp_path / "solve.ini"
    cfg.write_text(SOLVE_CONFIG.replace("drift = sin_cos",
                                        "drift = quasi_periodic"))
    code = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "r")])
    assert code == 2
    assert "A4" in capsys.readouterr().err


def test_rate_command_outputs_and_determinism(tmp_path, capsys):
    cfg = tmp_path / "rate.ini"
    cfg.write_text(RATE_CONFIG)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["rate", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["rate", "--config", str(cfg), "--out", str(out2)]) == 0
    rates1 = (out1 / "rates.csv").read_bytes()
    rates2 = (out2 / "rates.csv").read_bytes()
    assert rates1 == rates2
    summary = json.loads((out1 / "summary.json").read_text())
    assert summary["a4"]["verdict"] == "PASS"
    assert summary["boundedness"]["verdict"] == "PASS"
    assert 0.9 < summary["ratefit"]["slope"] < 1.1
    assert summary["ratefit"]["failed_replicates"] == 0
    assert summary["config"]["experiment"]["base_seed"] == "7"
    assert summary["expected_rate"] == pytest.approx(0.49 / 1.49)
    stdout = capsys.readouterr().out
    assert "a4: PASS" in stdout
    assert "boundedness: PASS" in stdout


def test_rate_command_svg_and_crosscheck(tmp_path):
    cfg = tmp_path / "rate.ini"
    cfg.write_text(RATE_CONFIG)
    out = tmp_path / "r"
    code = main(["rate", "--config", str(cfg), "--out", str(out), "--svg",
                 "--crosscheck", "--epsilon", "0.25", "--epsilon", "0.125",
                 "--epsilon", "0.0625", "--epsilon", "0.03125"])
    assert code == 0
    assert (out / "rates.svg").is_file()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["crosscheck"]["verdict"] == "PASS"


def test_rate_flags_override_config(tmp_path):
    cfg = tmp_path / "rate.ini"
    cfg.write_text(RATE_CONFIG)
    out = tmp_path / "r"
    assert main(["rate", "--config", str(cfg), "--out", str(out),
                 "--seed", "99"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["experiment"]["base_seed"] == "99"


def test_rate_negative_control_fails_a4(tmp_path, capsys):
    cfg = tmp_path / "rate.ini"
    cfg.write_text(RATE_CONFIG.replace("drift = cos_s", "drift = log_growth"))
    out = tmp_path / "r"
    code = main(["rate", "--config", str(cfg), "--out", str(out)])
    assert code == 1  # diagnostics did not all pass
    summary = json.loads((out / "summary.json").read_text())
    assert summary["a4"]["verdict"] == "FAIL"


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "rate.ini"
    cfg.write_text(RATE_CONFIG + "bogus = 1\n")
    assert main(["rate", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    cfg.write_text(RATE_CONFIG + "\n[experiment]\n")  # duplicate section
    assert main(["rate", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2


def test_missing_config_file_exits_2(tmp_path):
    assert main(["rate", "--config", str(tmp_path / "nope.ini")]) == 2


def test_verify_command_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "verify flow.round_trip: PASS" in out
    assert "FAIL" not in out


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "symsde.cli", "verify"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "PASS" in proc.stdout
