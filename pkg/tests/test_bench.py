import csv
import filecmp

import numpy as np
import pytest

from marigold.bench import (EXIT_NUMERIC, EXIT_OK, OUT_ENV, build_problem, csv_header,
                            resolve_out_dir, run_experiment, run_single)
from marigold.config import parse_config_text


def config(methods="marigold, mgda", problem="kind = quadratic\nm = 3\nd = 3", extra="", iters=20, seeds="0, 1"):
    return parse_config_text(f"[problem]\n{problem}\n[run]\nbalancer = {methods}\nseeds = {seeds}\n"
                             f"iterations = {iters}\n{extra}")


def read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_trajectory_schema_and_formatting(tmp_path):
    run_experiment(config(), tmp_path)
    rows = read(tmp_path / "marigold_seed0.csv")
    assert rows[0] == csv_header(3)
    assert rows[0][:4] == ["iter", "loss_1", "loss_2", "loss_3"]
    assert rows[0][-5:] == ["stat_gap", "decrement", "weighted_gevals", "pertask_gevals", "elapsed_ms"]
    assert len(rows) == 22 and [r[0] for r in rows[1:4]] == ["0", "1", "2"]
    x = float(rows[5][1])
    assert float(repr(x)) == x and rows[5][1] == "%.17g" % x
    last = rows[-1]
    assert last[-3:] == ["40", "0", "0"]
    lam = np.array(last[4:7], dtype=float)
    assert abs(lam.sum() - 1) < 1e-12


def test_eight_task_counter_readout(tmp_path):
    table = run_experiment(config(problem="kind = quadratic\nm = 8\nd = 8", seeds="0"), tmp_path)
    assert table.per_iter["marigold"]["weighted_gevals"] == 2
    assert table.per_iter["marigold"]["pertask_gevals"] == 0
    assert table.per_iter["mgda"]["pertask_gevals"] == 8
    assert table.per_iter["mgda"]["weighted_gevals"] == 0
    summary = read(tmp_path / "summary.csv")
    head = summary[0]
    row = {r[0]: dict(zip(head, r)) for r in summary[1:]}
    assert row["marigold"]["weighted_gevals_per_iter"] == "2"
    assert row["mgda"]["pertask_gevals_per_iter"] == "8"


def test_same_config_twice_is_byte_identical(tmp_path):
    cfg = config("marigold, pcgrad, rlw", "kind = mlp\nm = 2\npool_size = 64", "batch_size = 8")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ["marigold_seed0.csv", "pcgrad_seed1.csv", "rlw_seed0.csv", "summary.csv"]:
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_seed_order_does_not_change_files(tmp_path):
    cfg = config("marigold, rlw", "kind = mlp\nm = 2\npool_size = 64", "batch_size = 8", seeds="0, 1, 2")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b", seeds=[2, 0, 1])
    single = run_single(cfg, "rlw", 1, tmp_path / "c")
    for s in (0, 1, 2):
        assert filecmp.cmp(tmp_path / "a" / f"rlw_seed{s}.csv", tmp_path / "b" / f"rlw_seed{s}.csv", shallow=False)
    assert filecmp.cmp(tmp_path / "a" / "rlw_seed1.csv", single.path, shallow=False)
    assert filecmp.cmp(tmp_path / "a" / "summary.csv", tmp_path / "b" / "summary.csv", shallow=False)


def test_divergence_leaves_partial_csv_with_status_row(tmp_path):
    cfg = config("ls, marigold", "kind = quadratic\nm = 2", "[optimizer]\nlr = 5", iters=1000, seeds="0")
    table = run_experiment(cfg, tmp_path)
    assert table.exit_code == EXIT_NUMERIC
    rows = read(tmp_path / "ls_seed0.csv")
    assert rows[-1][0].startswith("#status:diverged:iter=")
    assert all(len(r) == len(rows[0]) for r in rows[:-1])
    data = np.genfromtxt(tmp_path / "ls_seed0.csv", delimiter=",", names=True, comments="#")
    assert np.all(np.isfinite(data["loss_1"]))
    summary = read(tmp_path / "summary.csv")
    assert summary[1][2] == "diverged"


def test_summary_delta_k_and_rank(tmp_path):
    table = run_experiment(config("marigold, mgda, ls", seeds="0, 1"), tmp_path)
    assert table.baseline == "ls" and table.delta_k["ls"] == 0
    assert table.exit_code == EXIT_OK
    ranks = [table.mean_rank[m] for m in table.methods]
    assert all(1 <= r <= 3 for r in ranks) and sum(ranks) == pytest.approx(6.0)


@pytest.mark.parametrize("problem", [
    "kind = quadratic\nm = 2\ncurvature = random\nd = 4",
    "kind = mlp\nm = 3\nshared = 6, 4",
    "kind = aux\nbase = mlp\nm = 2",
    "kind = aux\nbase = quadratic\nm = 3\nd = 3",
])
def test_every_problem_family_runs(problem, tmp_path):
    methods = "marigold, ls" if "aux" in problem else "marigold, mgda, pcgrad, linearized, ls, si, rlw"
    table = run_experiment(config(methods, problem, iters=5, seeds="0"), tmp_path)
    assert table.exit_code == EXIT_OK
    assert set(table.methods) == set(m.strip() for m in methods.split(","))


def test_output_directory_resolution(tmp_path, monkeypatch):
    cfg = config()
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert resolve_out_dir(cfg) == tmp_path / "env"
    assert resolve_out_dir(cfg, tmp_path / "cli") == tmp_path / "cli"
    cfg2 = config(extra=f"out = {tmp_path / 'cfg'}")
    assert resolve_out_dir(cfg2) == tmp_path / "cfg"


def test_timing_is_opt_in(tmp_path):
    run_experiment(config(extra="timing = true", seeds="0", iters=3), tmp_path)
    rows = read(tmp_path / "marigold_seed0.csv")
    assert float(rows[-1][-1]) > 0


def test_build_problem_is_fresh():
    cfg = config()
    a, b = build_problem(cfg), build_problem(cfg)
    a.eval_losses(np.zeros(3))
    assert b.counter.loss_evals == 0


def test_parallel_jobs_match_serial(tmp_path):
    cfg = config("marigold, rlw", "kind = mlp\nm = 2\npool_size = 32", "batch_size = 4", iters=10)
    run_experiment(cfg, tmp_path / "serial")
    run_experiment(cfg, tmp_path / "par", jobs=2)
    for name in ("marigold_seed0.csv", "rlw_seed1.csv", "summary.csv"):
        assert filecmp.cmp(tmp_path / "serial" / name, tmp_path / "par" / name, shallow=False)
