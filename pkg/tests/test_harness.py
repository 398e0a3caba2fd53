import json
import os

import numpy as np
import pytest

from sparsewidth.data import load_mnist
from sparsewidth.harness.cli import main as cli_main
from sparsewidth.harness.figures import MissingResults, export_figure
from sparsewidth.harness.sweep import (
    KernelSweepSpec,
    SweepSpec,
    baseline_width,
    build_family,
    cell_hash,
    derive_cell_seeds,
    kernel_family_connectivity,
    member_arch,
    run_kernel_sweep,
    run_sweep,
)
from sparsewidth.models import Dense, Sparse, param_count
from sparsewidth.training import TrainConfig

from test_data import make_synthetic_mnist_dir


def tiny_spec(out_dir, widths=(4, 8), repeats=2, llcs=None, lr_grid=None, epochs=2):
    return SweepSpec(
        widths=list(widths),
        budget=88,
        family="sparse",
        last_layer_connectivities=llcs,
        repeats=repeats,
        master_seed=7,
        input_dim=16,
        output_dim=10,
        train=TrainConfig(epochs=epochs, batch_size=16, learning_rate=0.05),
        lr_grid=lr_grid,
        out_dir=str(out_dir),
    )


def tiny_datasets(tmp_path):
    root = make_synthetic_mnist_dir(tmp_path / "mnist", n_train=96, n_test=32, side=4)
    return load_mnist(root)


# ---------------------------------------------------------------- families


def test_family_budget_exactness_and_connectivities():
    spec = SweepSpec(
        widths=[5, 10, 20, 40, 80, 160, 320, 640],
        budget=3970,
        train=TrainConfig(epochs=1),
    )
    archs = build_family(spec)
    conns = []
    for width, arch in zip(spec.widths, archs):
        assert param_count(arch) == 3970
        dense = (784 + 10) * width
        conns.append(3970 / dense)
    assert conns[0] == 1.0
    assert conns[1] == 0.5
    assert conns[-1] == pytest.approx(5 / 640, rel=1e-12)
    assert isinstance(archs[0].variant, Dense)
    assert all(isinstance(a.variant, Sparse) for a in archs[1:])


def test_family_budget_6352():
    spec = SweepSpec(
        widths=[8, 16, 32, 64, 128, 256, 512, 1024],
        budget=6352,
        use_biases=False,
        parameterization="ntk",
        train=TrainConfig(epochs=1),
    )
    for arch in build_family(spec):
        assert param_count(arch) == 6352
    assert baseline_width(spec) == 8


def test_member_arch_below_baseline_rejected():
    spec = tiny_spec("unused")
    with pytest.raises(Exception):
        member_arch(spec, 2, None, (0, 1))


def test_seed_derivation_pure_and_distinct():
    a = derive_cell_seeds(1, 8, None, 0)
    b = derive_cell_seeds(1, 8, None, 0)
    assert a == b
    assert derive_cell_seeds(1, 8, None, 1) != a
    assert derive_cell_seeds(1, 16, None, 0) != a
    assert derive_cell_seeds(2, 8, None, 0) != a
    assert derive_cell_seeds(1, 8, 0.5, 0) != a


# ---------------------------------------------------------------- sweeps


def test_sweep_runs_resumes_and_reruns_identically(tmp_path):
    train_ds, test_ds = tiny_datasets(tmp_path)
    spec = tiny_spec(tmp_path / "runs")
    results = run_sweep(spec, train_ds, test_ds, threads=1)
    assert len(results) == 4  # 2 widths x 2 repeats
    assert all(r.record is not None for r in results)
    assert os.path.exists(os.path.join(spec.out_dir, "summary.csv"))
    assert os.path.exists(os.path.join(spec.out_dir, "sweep_config.json"))

    # resume: all cells recognized, nothing recomputed
    mtimes = {r.path: os.path.getmtime(r.path) for r in results}
    again = run_sweep(spec, train_ds, test_ds, threads=1)
    assert {r.path: os.path.getmtime(r.path) for r in again} == mtimes

    # delete one record; the re-run must reproduce it bit for bit
    victim = results[1]
    with open(victim.path) as fh:
        saved = json.load(fh)
    os.remove(victim.path)
    third = run_sweep(spec, train_ds, test_ds, threads=1)
    redone = [r for r in third if r.path == victim.path]
    with open(victim.path) as fh:
        fresh = json.load(fh)
    assert fresh["record"]["train_loss"] == saved["record"]["train_loss"]
    assert fresh["record"]["test_accuracy"] == saved["record"]["test_accuracy"]
    assert fresh["cell"] == saved["cell"]
    assert len(redone) == 1


def test_sweep_concurrency_independent(tmp_path):
    train_ds, test_ds = tiny_datasets(tmp_path)
    serial = tiny_spec(tmp_path / "serial")
    threaded = tiny_spec(tmp_path / "threaded")
    res_a = run_sweep(serial, train_ds, test_ds, threads=1)
    res_b = run_sweep(threaded, train_ds, test_ds, threads=3)
    for a, b in zip(sorted(res_a, key=lambda r: r.path), sorted(res_b, key=lambda r: r.path)):
        assert a.record.train_loss == b.record.train_loss
        assert a.record.test_accuracy == b.record.test_accuracy


def test_llc_grid_marks_invalid_cells(tmp_path):
    train_ds, test_ds = tiny_datasets(tmp_path)
    # width 4 at budget 88: last layer 40, keep_total 88; llc 0.1 keeps 4 of
    # the last layer and 84 of 64 first-layer weights -> invalid
    spec = tiny_spec(tmp_path / "grid", widths=(4, 8), repeats=1, llcs=[0.1, 1.0], epochs=1)
    results = run_sweep(spec, train_ds, test_ds, threads=1)
    invalid = [r for r in results if r.skipped_invalid]
    done = [r for r in results if r.record is not None]
    assert len(results) == 4
    assert len(invalid) == 1 and invalid[0].width == 4 and invalid[0].llc == 0.1
    assert len(done) == 3


def test_lr_tuning_writes_table(tmp_path):
    train_ds, test_ds = tiny_datasets(tmp_path)
    spec = tiny_spec(tmp_path / "tuned", widths=(4,), repeats=1,
                     lr_grid=[0.001, 0.05], epochs=2)
    spec.lr_tune_epochs = 2
    results = run_sweep(spec, train_ds, test_ds, threads=1)
    table_path = os.path.join(spec.out_dir, "lr_table.json")
    assert os.path.exists(table_path)
    with open(table_path) as fh:
        payload = json.load(fh)
    assert payload["grid"] == [0.001, 0.05]
    table = payload["table"]
    assert set(table) == {"4"}
    assert table["4"] in (0.001, 0.05)
    with open(results[0].path) as fh:
        assert json.load(fh)["cell"]["learning_rate"] == table["4"]


def test_cell_hash_stable_under_grid_growth(tmp_path):
    a = tiny_spec(tmp_path, widths=(4,))
    b = tiny_spec(tmp_path, widths=(4, 8, 16), repeats=5)
    assert cell_hash(a, 4, None, 0) == cell_hash(b, 4, None, 0)


# ---------------------------------------------------------------- kernel sweep


def test_kernel_sweep_smoke_and_resume(tmp_path):
    rng = np.random.default_rng(0)
    inputs = rng.normal(size=(60, 16))
    spec = KernelSweepSpec(
        widths=[4, 8],
        budget=104,  # dense width-4 model at input 16, output 10
        input_dim=16,
        output_dim=10,
        num_pairs=40,
        num_inits=2,
        surrogate_width=400,
        theory_pairs=2,
        theory_mask_samples=2000,
        out_dir=str(tmp_path / "kern"),
    )
    p4, keep = kernel_family_connectivity(spec, 4)
    assert keep == 64 and p4 == 1.0
    p8, _ = kernel_family_connectivity(spec, 8)
    assert p8 == 0.5

    rows = run_kernel_sweep(spec, inputs)
    assert [r["width"] for r in rows] == [4, 8]
    for row in rows:
        assert row["distance_empirical"] >= 0
        assert row["distance_approx"] > 0
        assert row["distance_mask_mc"] is not None
    csv_path = os.path.join(spec.out_dir, "kernel_summary.csv")
    assert os.path.exists(csv_path)

    again = run_kernel_sweep(spec, inputs)
    assert again == rows  # loaded from the per-width records


# ---------------------------------------------------------------- figures


def test_export_figures(tmp_path):
    train_ds, test_ds = tiny_datasets(tmp_path)
    spec = tiny_spec(tmp_path / "runs", widths=(4, 8), repeats=1, epochs=1)
    run_sweep(spec, train_ds, test_ds, threads=1)

    fig = export_figure("accuracy_vs_width", spec.out_dir, str(tmp_path / "acc"))
    assert os.path.exists(fig.table_path) and os.path.exists(fig.image_path)
    assert [r["width"] for r in fig.rows] == [4, 8]

    grid_spec = tiny_spec(tmp_path / "grid", widths=(4, 8), repeats=1,
                          llcs=[0.5, 1.0], epochs=1)
    run_sweep(grid_spec, train_ds, test_ds, threads=1)
    heat = export_figure("accuracy_heatmap_2d", grid_spec.out_dir, str(tmp_path / "heat"))
    assert any(r["is_best"] for r in heat.rows)
    assert os.path.exists(heat.image_path)

    rng = np.random.default_rng(1)
    kspec = KernelSweepSpec(
        widths=[4, 8], budget=88, input_dim=16, output_dim=10,
        num_pairs=30, num_inits=2, surrogate_width=300, theory_pairs=0,
        out_dir=str(tmp_path / "kern"),
    )
    run_kernel_sweep(kspec, rng.normal(size=(50, 16)), compute_theory_mc=False)
    dist = export_figure("distance_vs_width", kspec.out_dir, str(tmp_path / "dist"))
    assert len(dist.rows) == 2


def test_export_missing_results(tmp_path):
    os.makedirs(tmp_path / "empty", exist_ok=True)
    with pytest.raises(MissingResults):
        export_figure("accuracy_vs_width", str(tmp_path / "empty"), str(tmp_path / "x"))
    with pytest.raises(MissingResults):
        export_figure("distance_vs_width", str(tmp_path / "empty"), str(tmp_path / "x"))
    with pytest.raises(ValueError):
        export_figure("nope", str(tmp_path / "empty"), str(tmp_path / "x"))


# ---------------------------------------------------------------- cli


def test_cli_allocate_and_export(tmp_path, capsys):
    assert cli_main(["allocate", "--counts", "10,6,3", "--freeze", "7"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert [l["freeze"] for l in out["layers"]] == [6, 1, 0]


def test_cli_scan_and_export(tmp_path, capsys):
    data_dir = make_synthetic_mnist_dir(tmp_path / "mnist", n_train=96, n_test=32, side=4)
    rc = cli_main([
        "scan", "--widths", "4,8", "--budget", "88", "--repeats", "1",
        "--epochs", "1", "--batch-size", "16", "--lr", "0.05",
        "--data-dir", data_dir, "--out", str(tmp_path / "runs"),
        "--seed", "3", "--threads", "1",
    ])
    assert rc == 0
    rc = cli_main([
        "export", "--kind", "accuracy_vs_width",
        "--results", str(tmp_path / "runs"), "--out", str(tmp_path / "fig"),
    ])
    assert rc == 0
    assert os.path.exists(tmp_path / "fig.csv")
    assert os.path.exists(tmp_path / "fig.svg")


def test_cli_kernel(tmp_path, capsys):
    data_dir = make_synthetic_mnist_dir(tmp_path / "mnist", n_train=80, n_test=64, side=4)
    rc = cli_main([
        "kernel", "--widths", "4,8", "--budget", "88",
        "--pairs", "30", "--inits", "2", "--surrogate-width", "200",
        "--theory-pairs", "0", "--data-dir", data_dir,
        "--out", str(tmp_path / "kern"), "--seed", "1",
    ])
    assert rc == 0
    assert os.path.exists(tmp_path / "kern" / "kernel_summary.csv")
