import json
import math
import os
import subprocess

import pytest

import branchgrpo as bg

TINY = [
    "pretrain.steps=40",
    "pretrain.batch=32",
    "policy.hidden=8",
    "schedule.depth=8",
    "schedule.split_steps=(0,2)",
    "dynamics.sampling_steps=8",
    "hybrid.window_start=2",
    "hybrid.window_stop=4",
    "pruning.window_start=2",
    "pruning.window_stop=4",
    "grpo.iterations=3",
    "grpo.train_batch_size=1",
    "grpo.grad_accum_steps=2",
    "grpo.num_generations=4",
    "grpo.checkpoint_steps=2",
]


def test_nfe_accounting():
    assert bg.average_per_sample_nfe(bg.dense_schedule()) == 13.625
    assert bg.tree_evaluation_count(bg.dense_schedule()) == 218
    chain = bg.BranchSchedule(depth=16, split_steps=[])
    assert bg.average_per_sample_nfe(chain) == 16.0
    assert bg.BranchSchedule(branch_factor=3).leaf_count() == 81


def test_schedule_validation():
    with pytest.raises(bg.ConfigError):
        bg.BranchSchedule(split_steps=[0, 25])


def test_fusion_example():
    s = bg.BranchSchedule(depth=1, split_steps=[0], final_step_deterministic=False)
    fused = bg.fuse_rewards(s, [0.0, math.log(0.8), math.log(0.2)], [1.0, 3.0], beta=1.0)
    assert fused[0] == pytest.approx(1.4, abs=1e-15)
    uniform = bg.fuse_rewards(s, [0.0, math.log(0.8), math.log(0.2)], [1.0, 3.0], beta=0.0)
    assert uniform[0] == 2.0
    assert bg.depth_advantages(s, [2.0, 1.0, 3.0], 0.0) == [0.0, -1.0, 1.0]


def test_small_ops():
    assert bg.effective_sample_size([1.0, 1.0, 2.0]) == pytest.approx(16 / 6)
    assert bg.group_baseline_check([1.0, 2.0, 3.0]) == [-1.0, 0.0, 1.0]
    loss = bg.grpo_edge_loss([1.0], [0.0], [math.log(1.5)], 0.2)
    assert loss["objective"] == pytest.approx(1.2)
    assert bg.depth_window(iteration=59) == [10, 11, 12, 13]
    xi = bg.branch_noises([1.0, 0.0], [[0.0, 1.0], [0.0, -1.0]], 0.0)
    assert xi == [[1.0, 0.0], [1.0, 0.0]]


def test_two_sample_statistics():
    xs = [[math.sin(i), math.cos(3 * i)] for i in range(60)]
    ys = [[p[0] + 4.0, p[1]] for p in xs]
    assert bg.mmd2_unbiased(xs, ys, 1.0) == pytest.approx(bg.mmd2_unbiased(ys, xs, 1.0))
    report = bg.permutation_test(xs, ys, permutations=50)
    assert report["pass"] is False
    stat, crit, ok = bg.ks_marginal_test([0.0] * 1000)
    assert stat == pytest.approx(0.5) and not ok


def test_config_round_trip():
    text = bg.parse_config("[fusion]\nbeta = 0.5\n")
    assert "beta = 0.5" in text
    assert bg.parse_config(text) == text
    with pytest.raises(bg.ConfigError):
        bg.parse_config("[fusion]\nunknown = 1\n")


def test_train_runs_and_is_deterministic():
    a = bg.train("", TINY, "branch")
    b = bg.train("", TINY, "branch")
    assert len(a["records"]) == 3
    assert a["csv"] == b["csv"]
    assert a["records"][0]["nfe_old"] == 2 * (2 + 2 + 4 * 6)


CLI = os.environ.get("BRANCHGRPO_CLI")
if CLI:
    CLI = os.path.abspath(CLI)


def cli(*args, cwd):
    sets = []
    for s in TINY:
        sets += ["--set", s]
    return subprocess.run([CLI, *args, *sets], cwd=cwd, capture_output=True, text=True)


@pytest.mark.skipif(not CLI, reason="CLI path not provided")
def test_cli_subcommands(tmp_path):
    out = cli("nfe", cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    assert "average_per_sample_nfe" in out.stdout

    out = cli("train", "--mode", "hybrid", "--set", f"run.output_dir={tmp_path}/runs", cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    run_dirs = list((tmp_path / "runs").iterdir())
    assert len(run_dirs) == 1
    manifest = json.loads((run_dirs[0] / "manifest.json").read_text())
    assert manifest["status"] == "finished"
    assert (run_dirs[0] / "runlog.csv").read_text().startswith("iteration,reward_mean")
    ckpt = run_dirs[0] / "final.ckpt"
    assert ckpt.exists()

    out = cli("eval", "--checkpoint", str(ckpt), "-n", "64", cwd=tmp_path)
    assert out.returncode == 0, out.stderr

    out = cli("diversity", "--checkpoint", str(ckpt), "-n", "64", "--permutations", "20", "-o",
              str(tmp_path / "div.json"), cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    report = json.loads((tmp_path / "div.json").read_text())
    assert {"statistic", "threshold", "pass", "n", "kernel"} <= report.keys()

    out = cli("dump-tree", "--checkpoint", str(ckpt), "-o", str(tmp_path / "tree.json"), cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    tree = json.loads((tmp_path / "tree.json").read_text())
    assert len(tree["edges"]) == 2 + 2 + 4 * 6

    out = cli("sweep", "--axis", "s", "--values", "0", "4", "-o", str(tmp_path / "sweep"), cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    header = (tmp_path / "sweep" / "comparison.csv").read_text().splitlines()[0]
    assert header == "iteration,s=0,s=4"

    bad = subprocess.run([CLI, "train", "--set", "schedule.split_steps=(0,25)"], cwd=tmp_path,
                         capture_output=True, text=True)
    assert bad.returncode == 2
    assert "split_steps" in bad.stderr
