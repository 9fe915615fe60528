import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from galimo import config as C
from galimo.cli import main
from galimo.evaluation import Trajectory, kitti_translation_error, load_kitti_poses, save_kitti_poses
from galimo.ga import STOCK, FunctionEvaluator, GaConfig, run_ga

TINY_SCENE = """\
# small scene that keeps the CLI tests quick
scene.frames = 10
scene.landmarks = 400
scene.lidar_horizontal_resolution = 0.4
scene.pixel_noise = 0.5
scene.outlier_fraction = 0.05
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scene.cfg").write_text(TINY_SCENE)
    assert main(["generate", "--config", str(d / "scene.cfg"), "--seed", "4", "--out", str(d / "s1")]) == 0
    assert main(["generate", "--config", str(d / "scene.cfg"), "--seed", "5", "--set", "scene.trajectory=arc",
                 "--out", str(d / "s2")]) == 0
    return d


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def test_generate_writes_scene(workdir, capsys):
    s1 = workdir / "s1"
    for name in ("scene.json", "poses.txt", "observations.csv", "landmarks.csv", "manifest.json"):
        assert (s1 / name).is_file()
    meta = json.loads((s1 / "scene.json").read_text())
    assert meta["config"]["seed"] == 4 and meta["config"]["frames"] == 10
    assert len(os.listdir(s1 / "scans")) == 10


def test_generate_is_byte_identical(workdir, tmp_path):
    assert main(["generate", "--config", str(workdir / "scene.cfg"), "--seed", "4", "--out", str(tmp_path / "again")]) == 0
    assert tree_bytes(tmp_path / "again") == tree_bytes(workdir / "s1")


def test_generate_invalid_config(tmp_path, capsys):
    assert main(["generate", "--set", "scene.frames=0", "--out", str(tmp_path / "x")]) != 0
    assert "frames" in capsys.readouterr().err


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_generate_unwritable_output(tmp_path, capsys):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    try:
        assert main(["generate", "--set", "scene.frames=2", "--out", str(locked / "s")]) != 0
        assert "cannot write" in capsys.readouterr().err
    finally:
        locked.chmod(0o700)


def test_generate_output_is_a_file(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["generate", "--set", "scene.frames=2", "--out", str(blocker / "s")]) != 0
    assert "cannot write" in capsys.readouterr().err


def test_odometry_stock_parameters(workdir):
    out = workdir / "o1"
    assert main(["odometry", "--scene", str(workdir / "s1"), "--out", str(out)]) == 0
    traj = load_kitti_poses(out / "trajectory.txt")
    assert len(traj) == 10
    man = json.loads((out / "manifest.json").read_text())
    assert man["parameters"] == {
        "outlier_rejection_quantile": 0.95,
        "max_number_landmarks_near_bin": 400,
        "max_number_landmarks_middle_bin": 400,
        "max_number_landmarks_far_bin": 400,
        "shrubbery_weight": 0.9,
    }
    assert man["config_hash"] == C.config_hash({k: v for k, v in man["config"].items()})
    assert not (out / "FAILED").exists()


def test_odometry_parameter_override(workdir):
    out = workdir / "o2"
    args = ["odometry", "--scene", str(workdir / "s1"), "--out", str(out), "--set", "params.shrubbery_weight=0.25"]
    assert main(args) == 0
    assert json.loads((out / "manifest.json").read_text())["parameters"]["shrubbery_weight"] == 0.25


def test_odometry_is_byte_identical(workdir, tmp_path):
    assert main(["odometry", "--scene", str(workdir / "s1"), "--out", str(tmp_path / "o")]) == 0
    if not (workdir / "o1").exists():
        main(["odometry", "--scene", str(workdir / "s1"), "--out", str(workdir / "o1")])
    assert tree_bytes(tmp_path / "o") == tree_bytes(workdir / "o1")


def test_odometry_missing_scene(tmp_path, capsys):
    assert main(["odometry", "--scene", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_evaluate_identical(workdir, tmp_path, capsys):
    gt = workdir / "s1" / "poses.txt"
    assert main(["evaluate", "--estimate", str(gt), "--ground-truth", str(gt), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["translation_error_percent"] == 0.0 and rep["ape_rmse"] == 0.0
    assert "translation error: 0.0000 %" in capsys.readouterr().out


def test_evaluate_matches_library_oracle(tmp_path):
    rng = np.random.default_rng(0)
    from galimo.geometry import Pose

    poses = [Pose.identity()]
    for _ in range(799):
        poses.append(poses[-1] @ Pose.from_xyzabg(0, 0, rng.uniform(0.9, 1.1), 0, rng.normal(scale=0.01), 0))
    gt = Trajectory.from_poses(poses)
    m = gt.matrices.copy()
    m[:, :3, 3] *= 1.01
    save_kitti_poses(tmp_path / "gt.txt", gt)
    save_kitti_poses(tmp_path / "est.txt", Trajectory(m))
    assert main(["evaluate", "--estimate", str(tmp_path / "est.txt"), "--ground-truth", str(tmp_path / "gt.txt"),
                 "--out", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    oracle = kitti_translation_error(load_kitti_poses(tmp_path / "est.txt"), load_kitti_poses(tmp_path / "gt.txt"))
    assert rep["translation_error_percent"] == oracle.translation_error_percent
    assert abs(rep["translation_error_percent"] - 1.0) <= 0.05


def test_evaluate_length_mismatch(workdir, tmp_path, capsys):
    gt = workdir / "s1" / "poses.txt"
    short = tmp_path / "short.txt"
    short.write_text("".join(gt.read_text().splitlines(keepends=True)[:5]))
    assert main(["evaluate", "--estimate", str(short), "--ground-truth", str(gt), "--out", str(tmp_path / "r")]) != 0
    assert "LengthMismatch" in capsys.readouterr().err


def test_evaluate_custom_lengths_flag_wins(workdir, tmp_path):
    gt = workdir / "s1" / "poses.txt"
    (tmp_path / "e.cfg").write_text("evaluate.lengths = 100, 200\n")
    args = ["evaluate", "--config", str(tmp_path / "e.cfg"), "--lengths", "2,4", "--step", "1",
            "--estimate", str(gt), "--ground-truth", str(gt), "--out", str(tmp_path / "r")]
    assert main(args) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert sorted(float(k) for k in rep["per_length"]) == [2.0, 4.0]


GA_ARGS = ["--set", "ga.population_size=4", "--set", "ga.generations=3"]


def run_cli_ga(workdir, out, *extra, tasks=("a=s1", "b=s2")):
    args = ["ga", "--out", str(out), "--seed", "1", *GA_ARGS]
    for t in tasks:
        name, d = t.split("=")
        args += ["--task", f"{name}={workdir / d}"]
    return main(args + list(extra))


def test_ga_two_tasks(workdir, tmp_path):
    assert run_cli_ga(workdir, tmp_path / "g") == 0
    lines = (tmp_path / "g" / "history.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 * 3
    assert lines[0].split(",")[-5:] == ["sigma_a", "sigma_b", "sigma_avg", "fitness", "degenerate"]
    best = json.loads((tmp_path / "g" / "best.json").read_text())
    assert best["complete"] and best["columns"] == ["LIMO", "GA-LIMO"]
    assert best["parameters"]["outlier_rejection_quantile"][0] == STOCK.delta
    s_a, s_b = (best["translation_error_percent"][t][1] for t in "ab")
    assert best["sigma_avg"][1] == pytest.approx((s_a + s_b) / 2)
    assert best["fitness"][1] == pytest.approx(1 / best["sigma_avg"][1])


def test_ga_single_task_fitness(workdir, tmp_path):
    assert run_cli_ga(workdir, tmp_path / "g", tasks=("a=s1",)) == 0
    best = json.loads((tmp_path / "g" / "best.json").read_text())
    sigma = best["translation_error_percent"]["a"]
    assert best["fitness"][0] == pytest.approx(1 / sigma[0])
    assert best["fitness"][1] == pytest.approx(1 / sigma[1])


def test_ga_is_byte_identical_and_resumes(workdir, tmp_path):
    assert run_cli_ga(workdir, tmp_path / "full") == 0
    assert run_cli_ga(workdir, tmp_path / "again") == 0
    assert tree_bytes(tmp_path / "full") == tree_bytes(tmp_path / "again")
    assert run_cli_ga(workdir, tmp_path / "staged", "--stop-after", "1") == 0
    partial = json.loads((tmp_path / "staged" / "best.json").read_text())
    assert not partial["complete"] and partial["generations_run"] == 1
    assert run_cli_ga(workdir, tmp_path / "staged", "--resume") == 0
    for name in ("history.csv", "best.json", "checkpoint.json"):
        assert (tmp_path / "staged" / name).read_bytes() == (tmp_path / "full" / name).read_bytes()


def test_ga_defaults_are_fifty_by_fifty():
    gc = C.ga_config({})
    assert (gc.population_size, gc.generations) == (50, 50)
    assert gc.mutation_rate == 0.1 and gc.mutation_mode == "per_bit"
    res = run_ga(gc, FunctionEvaluator(lambda p: -abs(p.delta - 0.5)))
    assert len(res.history) == 2500


def test_ga_needs_a_task(tmp_path, capsys):
    assert main(["ga", "--out", str(tmp_path)]) == 2
    assert "at least one task" in capsys.readouterr().err


def test_config_parse_format_hash(tmp_path):
    text = "# comment\nga.seed = 3\n\nparams.shrubbery_weight = 0.5  # trailing\n"
    cfg = C.parse_config(text)
    assert cfg == {"ga.seed": "3", "params.shrubbery_weight": "0.5"}
    assert C.parse_config(C.format_config(cfg)) == cfg
    assert C.config_hash(cfg) == C.config_hash(dict(reversed(list(cfg.items()))))
    for bad in ("novalue\n", "nosection = 1\n", "a.b = 1\na.b = 2\n"):
        with pytest.raises(C.ConfigError):
            C.parse_config(bad)


def test_unknown_keys_rejected(workdir, tmp_path, capsys):
    assert main(["odometry", "--scene", str(workdir / "s1"), "--out", str(tmp_path), "--set", "params.bogus=1"]) == 2
    assert main(["generate", "--set", "run.colour=red", "--out", str(tmp_path)]) == 2
    assert main(["generate", "--set", "scene.frames=many", "--out", str(tmp_path)]) != 0


def test_console_script(tmp_path):
    exe = shutil.which("galimo")
    cmd = [exe] if exe else [sys.executable, "-m", "galimo.cli"]
    r = subprocess.run(cmd + ["evaluate", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2 and "estimate" in r.stderr
