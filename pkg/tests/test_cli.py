import json
import math

import pytest

from infhjb.cli import run

PROBLEM = """n = 1
m = 1
delta = 1
f.1 = -x1 + u1
l = 0
omega.box = -1 1
omega.samples_per_axis = 3
K1 = 1
K2 = 2
M = 1
"""


def test_solve_constant_cost(tmp_path):
    assert run(["--bench", "constant-cost", "--cmd", "solve", "--eps", "1e-3", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "value_meta.json").read_text())
    assert meta["T"] == 6.91 and abs(meta["T"] - math.log(1000)) < 0.01
    rows = (tmp_path / "value.csv").read_text().splitlines()
    first = [r.split(",") for r in rows[1:42]]
    assert all(float(r[0]) == 0.0 for r in first)
    assert max(abs(float(r[2]) - (1 - math.exp(-6.91))) for r in first) <= 5e-3


def test_simulate_zero_cost_problem(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text(PROBLEM)
    out = tmp_path / "out"
    code = run(["--problem", str(path), "--cmd", "simulate", "--nodes", "21", "--dt", "0.05", "--horizon", "2",
                "--z", "0.5", "--control", "0:1;0.5:-1", "--out", str(out)])
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["lo"] <= 0.0 <= cert["hi"]
    assert (out / "trajectory.csv").read_text().startswith("t,x1,cost\n")
    assert (out / "control.csv").read_text() == "t_break,u1\n0.0,1.0\n0.5,-1.0\n"


def test_check_with_expression_field(tmp_path):
    args = ["--bench", "constant-cost", "--cmd", "check", "--points", "10", "--out", str(tmp_path)]
    assert run(args + ["--phi", "exp(-t)", "--grad=-exp(-t);0"]) == 0
    assert run(args + ["--phi", "x1^2", "--grad", "0;2*x1"]) == 1
    assert run(args + ["--phi", "exp(-t)"]) == 2


def test_certify_exit_codes(tmp_path):
    base = ["--bench", "bang-bang-quadratic", "--cmd", "certify", "--z", "0.8", "--points", "10",
            "--nodes", "101", "--dt", "0.01", "--out", str(tmp_path)]
    assert run(base) == 0
    assert run(base + ["--control", "0:0"]) == 1
    assert run(base + ["--control", "0:1"]) == 1  # leaves the invariant ball: certificate refused


@pytest.mark.parametrize("args", [
    ["--cmd", "solve"],
    ["--bench", "nope", "--cmd", "solve"],
    ["--bench", "constant-cost", "--cmd", "solve", "--tol", "nope=1"],
    ["--bench", "constant-cost", "--cmd", "solve", "--box", "-1"],
    ["--bench", "constant-cost", "--cmd", "solve", "--box", "a,b"],
    ["--bench", "constant-cost", "--cmd", "solve", "--dt", "0.3", "--horizon", "1"],
    ["--problem", "/nonexistent/file", "--cmd", "solve"],
    ["--cmd", "bench"],
])
def test_configuration_errors_exit_2(args, tmp_path, capsys):
    assert run(args + ["--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        run(["--cmd", "dance"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        run(["--cmd", "solve", "--eps", "1", "--horizon", "2"])
    assert info.value.code == 2


def test_bad_problem_file(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text(PROBLEM + "colour = blue\n")
    assert run(["--problem", str(path), "--cmd", "solve", "--out", str(tmp_path)]) == 2


def test_sandwich_command(tmp_path):
    code = run(["--bench", "pure-discount-control", "--cmd", "sandwich", "--points", "10", "--out", str(tmp_path)])
    assert code == 0
    data = json.loads((tmp_path / "sandwich.json").read_text())
    assert data["pass"] and len(data["bounds"]) == 10


def test_problem_file_without_constants_is_audited(tmp_path):
    src = tmp_path / "bang.txt"
    src.write_text("n = 1\nm = 1\ndelta = 3\nf.1 = u1\nl = x1^2\nomega.points = [[-1], [1]]\nM = 1\n")
    out = tmp_path / "out"
    code = run(["--cmd", "certify", "--problem", str(src), "--z", "0.5", "--interp", "pchip", "--out", str(out)])
    assert code == 0
    cert = json.loads((out / "certify.json").read_text())["certificate"]
    # sampled K2 for |u| + x^2 on [-1,1] is 1, so the tail bound is 2 e^{-3T} / 3
    assert cert["B_tail"] == pytest.approx(2 * math.exp(-3 * cert["T"]) / 3, rel=1e-2)
