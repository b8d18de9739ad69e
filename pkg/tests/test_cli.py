import json
import subprocess
import sys

import numpy as np
import pytest

from diffsoft.cli import main
from diffsoft.rollout import read_trajectory


def test_simulate_minimal(tmp_path):
    out = tmp_path / "t.ndjson"
    assert main(["simulate", "--scene", "builtin:minimal", "--steps", "1", "--actions", "const:1.0",
                 "--out", str(out)]) == 0
    assert len(read_trajectory(out)) == 2


def test_missing_scene_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--steps", "1", "--out", "x"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["simulate", "--scene", "builtin:minimal", "--steps", "1", "--actions", "lin:1", "--out", "OUT"],
    ["simulate", "--scene", "builtin:minimal", "--steps", "0", "--out", "OUT"],
    ["simulate", "--scene", "builtin:minimal", "--steps", "1", "--terms", "magic", "--out", "OUT"],
    ["train", "--scene", "builtin:crawler", "--algo", "ppo", "--iters", "1", "--batch", "0", "--log", "OUT"],
])
def test_bad_flag_values(tmp_path, argv):
    argv = [str(tmp_path / "o") if a == "OUT" else a for a in argv]
    assert main(argv) == 2


def test_scene_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"vertices": [[0, 0]], "triangles": [[0, 1, 2]], "material": {}}')
    assert main(["simulate", "--scene", str(bad), "--steps", "1", "--out", str(tmp_path / "o")]) == 3
    assert main(["simulate", "--scene", str(tmp_path / "none.json"), "--steps", "1",
                 "--out", str(tmp_path / "o")]) == 3


def test_solver_failure_exit_code(tmp_path, capsys):
    code = main(["simulate", "--scene", "builtin:crawler", "--steps", "2", "--tol", "1e-30",
                 "--actions", "const:0.5", "--out", str(tmp_path / "o")])
    assert code == 4
    assert "step 0" in capsys.readouterr().err


def test_ballistic_record_is_analytic(tmp_path):
    out = tmp_path / "b.ndjson"
    assert main(["simulate", "--scene", "builtin:ballistic", "--terms", "gravity", "--steps", "1",
                 "--out", str(out)]) == 0
    recs = read_trajectory(out)
    x0 = np.array(recs[0]["x"])
    np.testing.assert_allclose(recs[1]["x"], x0 + 0.1 ** 2 * np.array([0.0, -9.8]), atol=1e-10)


def test_quasistatic_command(capsys):
    assert main(["quasistatic", "--scene", "builtin:single_fiber", "--actions", "const:0.5", "--tol", "1e-10"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert np.linalg.norm(np.subtract(doc["x"][1], doc["x"][0])) == pytest.approx(0.5, abs=1e-5)


def test_gradcheck_single_fiber(capsys):
    assert main(["gradcheck", "--scene", "builtin:single_fiber", "--mode", "quasistatic",
                 "--threshold", "1e-6"]) == 0
    assert "ok" in capsys.readouterr().out


def test_gradcheck_zero_potential_dynamic():
    assert main(["gradcheck", "--scene", "builtin:ballistic", "--terms", "none", "--mode", "dynamic",
                 "--threshold", "1e-10"]) == 0


def test_gradcheck_bptt_crawler(capsys):
    assert main(["gradcheck", "--scene", "builtin:crawler", "--mode", "bptt", "--threshold", "1e-3"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("params") and float(line.split()[1]) < 1e-3


def test_gradcheck_reports_failure():
    # a coarse finite-difference step cannot meet an absurd threshold
    assert main(["gradcheck", "--scene", "builtin:minimal", "--mode", "dynamic", "--fd-step", "1e-1",
                 "--threshold", "1e-14"]) == 1


def test_train_zero_iters(tmp_path):
    log = tmp_path / "l.csv"
    assert main(["train", "--scene", "builtin:crawler", "--algo", "bptt", "--iters", "0", "--horizon", "5",
                 "--eval-horizon", "5", "--log", str(log)]) == 0
    lines = log.read_text().splitlines()
    assert lines[0] == "iter,reward,env_steps,wall_ms"
    assert len(lines) == 2 and lines[1].startswith("0,")


def test_train_ppo_accounting(tmp_path):
    log = tmp_path / "p.csv"
    assert main(["train-ppo", "--scene", "builtin:crawler", "--batch", "1", "--iters", "1", "--horizon", "7",
                 "--eval-horizon", "7", "--log", str(log)]) == 0
    rows = log.read_text().splitlines()[1:]
    assert [int(r.split(",")[2]) for r in rows] == [0, 7]


def test_identical_runs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        log, pol, traj = tmp_path / f"l{k}.csv", tmp_path / f"p{k}.json", tmp_path / f"t{k}.ndjson"
        assert main(["train-ppo", "--scene", "builtin:crawler", "--batch", "2", "--iters", "1", "--horizon", "4",
                     "--eval-horizon", "4", "--seed", "3", "--log", str(log), "--save-policy", str(pol),
                     "--no-wall-clock"]) == 0
        assert main(["simulate", "--scene", "builtin:crawler", "--steps", "4", "--policy", str(pol),
                     "--stochastic", "--seed", "3", "--out", str(traj)]) == 0
        outs.append((log.read_bytes(), pol.read_bytes(), traj.read_bytes()))
    assert outs[0] == outs[1]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "diffsoft.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "quasistatic", "gradcheck", "train-bptt", "train-ppo"):
        assert cmd in res.stdout
