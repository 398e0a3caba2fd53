"""Canonical experiment protocols behind the acceptance suite.

The acceptance tests and the prewarm script must run the exact same
sweeps, so every spec is constructed here, once, with fixed seeds and a
stable on-disk layout under acceptance_runs/. Completed cells are
recognized by content hash, which makes the heavy criteria resumable.
"""

from __future__ import annotations

import os
from pathlib import Path

from sparsewidth.data import find_mnist_dir, load_mnist, subset
from sparsewidth.harness.sweep import KernelSweepSpec, SweepSpec, run_kernel_sweep, run_sweep
from sparsewidth.training import TrainConfig

ACCEPT_DIR = Path(os.environ.get(
    "SPARSEWIDTH_ACCEPT_DIR",
    Path(__file__).resolve().parent.parent / "acceptance_runs",
))

SUBSET_SIZE = 2048
SUBSET_SEED = 0
# rates for the standard-parameterization full-data protocol come straight
# from the training recipe; the ntk subset protocol needs far larger steps,
# so its grid is tuned per width from this list
NTK_LR_GRID = [1.0, 3.0, 10.0, 30.0, 100.0]

FULL_WIDTHS_RELU = [5, 80]
FULL_WIDTHS_LINEAR = [5, 10, 20, 40]
SUBSET_WIDTHS = [8, 16, 32, 64, 128, 256, 512, 1024]
KERNEL_WIDTHS = [16, 32, 64, 128, 256, 512, 1024]
BUDGET_SMALL = 3970
BUDGET_SUBSET = 6352


def require_mnist() -> str:
    path = find_mnist_dir()
    if path is None:
        raise FileNotFoundError(
            "MNIST IDX files not found. Place train-images-idx3-ubyte, "
            "train-labels-idx1-ubyte, t10k-images-idx3-ubyte and "
            "t10k-labels-idx1-ubyte in ./data/mnist (or set SPARSEWIDTH_MNIST)."
        )
    return path


def full_datasets():
    return load_mnist(require_mnist())


def perpix_datasets():
    return load_mnist(require_mnist(), per_pixel_stats=True)


def relu_scan_spec() -> SweepSpec:
    return SweepSpec(
        widths=FULL_WIDTHS_RELU,
        budget=BUDGET_SMALL,
        family="sparse",
        repeats=1,
        master_seed=0,
        activation="relu",
        parameterization="standard",
        use_biases=True,
        train=TrainConfig(epochs=300, batch_size=100, learning_rate=0.1),
        out_dir=str(ACCEPT_DIR / "relu_scan"),
    )


def linear_scan_spec() -> SweepSpec:
    return SweepSpec(
        widths=FULL_WIDTHS_LINEAR,
        budget=BUDGET_SMALL,
        family="sparse",
        repeats=1,
        master_seed=0,
        activation="linear",
        parameterization="standard",
        use_biases=True,
        train=TrainConfig(epochs=300, batch_size=100, learning_rate=0.1),
        out_dir=str(ACCEPT_DIR / "linear_scan"),
    )


def subset_sweep_spec() -> SweepSpec:
    return SweepSpec(
        widths=SUBSET_WIDTHS,
        budget=BUDGET_SUBSET,
        family="sparse",
        repeats=5,
        master_seed=0,
        activation="relu",
        parameterization="ntk",
        use_biases=False,
        train=TrainConfig(
            epochs=300, batch_size=256, learning_rate=1.0, subset_size=SUBSET_SIZE
        ),
        lr_grid=NTK_LR_GRID,
        lr_tune_epochs=60,
        out_dir=str(ACCEPT_DIR / "subset_sweep"),
    )


def kernel_sweep_spec() -> KernelSweepSpec:
    return KernelSweepSpec(
        widths=KERNEL_WIDTHS,
        budget=BUDGET_SUBSET,
        num_pairs=10_000,
        num_inits=10,
        surrogate_width=10_000,
        theory_pairs=32,
        theory_mask_samples=20_000,
        master_seed=0,
        out_dir=str(ACCEPT_DIR / "kernel_sweep"),
    )


def run_relu_scan(threads: int = 1):
    train_ds, test_ds = full_datasets()
    return run_sweep(relu_scan_spec(), train_ds, test_ds, threads=threads)


def run_linear_scan(threads: int = 1):
    train_ds, test_ds = full_datasets()
    return run_sweep(linear_scan_spec(), train_ds, test_ds, threads=threads)


def run_subset_sweep(threads: int = 1):
    train_full, test_ds = perpix_datasets()
    train_ds = subset(train_full, SUBSET_SIZE, SUBSET_SEED)
    return run_sweep(subset_sweep_spec(), train_ds, test_ds, threads=threads)


def run_kernel_distance_sweep():
    _, test_ds = perpix_datasets()
    return run_kernel_sweep(kernel_sweep_spec(), test_ds.images)
