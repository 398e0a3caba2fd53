"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Heavy sweeps cache their cells under acceptance_runs/ and resume, so a
re-run of this module only recomputes what is missing. MNIST is required
(see acceptance_protocol.require_mnist for the expected layout).
"""

import json
import math
import os

import numpy as np
import pytest

import acceptance_protocol as proto
from sparsewidth.allocator import LayerSizes, staggered_allocate
from sparsewidth.data import load_mnist, subset
from sparsewidth.harness.sweep import SweepSpec, run_sweep
from sparsewidth.kernels import (
    EXACT_ENUM,
    arccos_kernel,
    expected_kernel_distance,
    gp_moments_over_weight_draws,
    optimal_connectivity,
)
from sparsewidth.models import MlpArch, init_model
from sparsewidth.training import TrainConfig

from test_allocator import reference_staggered
from test_models import assert_grads_match, sparse_arch

RESULT_LINES = []


def report(num, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {num:2d} [{name}]: {detail}"
    RESULT_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session", autouse=True)
def acceptance_summary():
    yield
    print("\n== acceptance summary ==")
    for line in RESULT_LINES:
        print(line)
    try:
        os.makedirs(proto.ACCEPT_DIR, exist_ok=True)
        with open(proto.ACCEPT_DIR / "acceptance_summary.txt", "w") as fh:
            fh.write("\n".join(RESULT_LINES) + "\n")
    except OSError:
        pass


@pytest.fixture(scope="session")
def mnist_dir():
    try:
        return proto.require_mnist()
    except FileNotFoundError as exc:
        pytest.fail(str(exc))


@pytest.fixture(scope="session")
def relu_scan(mnist_dir):
    return proto.run_relu_scan(threads=2)


@pytest.fixture(scope="session")
def linear_scan(mnist_dir):
    return proto.run_linear_scan(threads=2)


@pytest.fixture(scope="session")
def subset_results(mnist_dir):
    return proto.run_subset_sweep(threads=2)


@pytest.fixture(scope="session")
def kernel_rows(mnist_dir):
    return proto.run_kernel_distance_sweep()


def _mean_best_by_width(results):
    groups = {}
    for res in results:
        if res.record is not None and not res.record.aborted:
            groups.setdefault(res.width, []).append(res.record.best_test_accuracy)
    return {w: float(np.mean(v)) for w, v in groups.items()}


def test_criterion_01_full_data_relu(relu_scan):
    by_width = {r.width: r for r in relu_scan if r.record is not None}
    base = by_width[5].record
    wide = by_width[80].record
    plan = staggered_allocate(LayerSizes(("hidden", "readout"), (62720, 800)), 63520 - 3970)
    llc = plan.per_layer_connectivity[1]
    with open(by_width[80].path) as fh:
        conn = json.load(fh)["cell"]["overall_connectivity"]
    ok = (
        abs(base.best_test_accuracy - 0.90) <= 0.015
        and llc >= 0.8
        and abs(conn - 0.0625) < 1e-12
        and wide.best_test_accuracy >= 0.953
        and base.wall_clock_sec <= 900
        and wide.wall_clock_sec <= 900
    )
    report(
        1, "full-data relu family", ok,
        f"width-5 dense {base.best_test_accuracy:.4f} (target 0.900+-0.015, "
        f"{base.wall_clock_sec:.0f}s), width-80 sparse {wide.best_test_accuracy:.4f} "
        f"(target >=0.953, llc={llc:.2f}, conn={conn:.4f}, {wide.wall_clock_sec:.0f}s)",
    )


def test_criterion_02_full_data_linear(linear_scan):
    by_width = {r.width: r.record for r in linear_scan if r.record is not None}
    accs = [by_width[w].best_test_accuracy for w in proto.FULL_WIDTHS_LINEAR]
    target = by_width[40].best_test_accuracy
    monotone = all(b > a for a, b in zip(accs, accs[1:]))
    ok = abs(target - 0.927) <= 0.015 and monotone
    report(
        2, "full-data linear family", ok,
        f"width-40 {target:.4f} (target 0.927+-0.015); accuracies over widths "
        f"{proto.FULL_WIDTHS_LINEAR}: {[f'{a:.4f}' for a in accs]} "
        f"({'monotone' if monotone else 'not monotone'})",
    )


def test_criterion_03_subset_sparse_beats_dense(subset_results):
    means = _mean_best_by_width(subset_results)
    dense = means[8]
    candidates = {w: means[w] for w in (64, 128, 256)}
    best_w, best_acc = max(candidates.items(), key=lambda kv: kv[1])
    ok = best_acc >= dense + 0.01
    report(
        3, "subset sparse advantage", ok,
        f"dense width-8 {dense:.4f}; best sparse in {{64,128,256}} is width "
        f"{best_w} at {best_acc:.4f} (gap {best_acc - dense:+.4f}, need >= +0.01, "
        f"5 seeds each)",
    )


def test_criterion_04_moment_oracle():
    d, n, draws = 6, 32, 100_000
    pair_rng = np.random.Generator(np.random.PCG64(0))
    worst = 0.0
    checked = 0
    for p in (0.25, 0.5, 0.9):
        for k in range(20):
            x, y = pair_rng.normal(size=(2, d))
            theory = expected_kernel_distance(p, n, x, y, method=EXACT_ENUM)
            seed = int(
                np.random.SeedSequence([4, int(p * 100), k]).generate_state(1)[0]
            )
            mom = gp_moments_over_weight_draws(x, y, n=n, p=p, draws=draws, seed=seed)
            zm = abs(mom["mean"].value - theory.gp_mean) / mom["mean"].stderr
            zv = abs(mom["variance"].value - theory.gp_variance) / mom["variance"].stderr
            worst = max(worst, zm, zv)
            checked += 2
    ok = worst <= 3.0
    report(
        4, "sparse kernel moment oracle", ok,
        f"{checked} mean/variance comparisons at d={d}, n={n}, "
        f"p in {{0.25,0.5,0.9}}, {draws} draws: max |z| = {worst:.2f} (limit 3)",
    )


def test_criterion_05_approximation_regime(kernel_rows):
    asserted, reported = [], []
    all_ok = True
    for row in kernel_rows:
        p = row["connectivity"]
        rel = abs(row["distance_empirical"] - row["distance_approx"]) / row["distance_empirical"]
        entry = f"w={row['width']} p={p:.4f} rel={rel:.3f}"
        if p >= 0.05:
            asserted.append(entry)
            if rel > 0.25:
                all_ok = False
        else:
            dp = 784 * p
            reported.append(entry + (" (dp<10)" if dp < 10 else ""))
    report(
        5, "closed-form distance regime", all_ok,
        "asserted (p>=0.05, limit 0.25): " + "; ".join(asserted)
        + " | reported only: " + "; ".join(reported),
    )


def test_criterion_06_ushape_and_correlation(kernel_rows, subset_results):
    widths = [row["width"] for row in kernel_rows]
    dvals = [row["distance_empirical"] for row in kernel_rows]
    w_min = widths[int(np.argmin(dvals))]
    np_product = proto.BUDGET_SUBSET // (784 + 10)  # kept first-layer weights per input dim
    p_star, n_star = optimal_connectivity(float(np_product), 784)
    u_shaped = dvals[0] > min(dvals) and dvals[-1] > min(dvals)
    within_one = abs(math.log2(w_min) - math.log2(n_star)) <= 1.0
    means = _mean_best_by_width(subset_results)
    acc_widths = [w for w in proto.SUBSET_WIDTHS if w in means and w >= widths[0]]
    w_acc = max(acc_widths, key=lambda w: means[w])
    within_two = abs(math.log2(w_acc) - math.log2(w_min)) <= 2.0
    ok = u_shaped and within_one and within_two
    report(
        6, "distance minimum predicts accuracy peak", ok,
        f"distance minimum at width {w_min} (n*={n_star:.0f}, within one step: "
        f"{within_one}; U-shaped: {u_shaped}); accuracy peak at width {w_acc} "
        f"(within two steps of {w_min}: {within_two})",
    )


def test_criterion_07_arccos_closed_forms():
    rng = np.random.default_rng(7)
    x, y = rng.normal(size=(2, 5))
    gen = np.random.default_rng(123)
    sums = {1: 0.0, 2: 0.0}
    total = 1_000_000
    done = 0
    while done < total:
        w = gen.standard_normal((200_000, 5))
        wx, wy = w @ x, w @ y
        both = (wx > 0) & (wy > 0)
        sums[1] += float(np.sum(wx * wy * both))
        sums[2] += float(np.sum((wx * wy) ** 2 * both))
        done += 200_000
    rels = {}
    for order in (1, 2):
        closed = arccos_kernel(order, x, y)
        rels[order] = abs(sums[order] / total - closed) / closed
    # special angles: aligned, orthogonal, opposite
    v = np.array([0.7, -1.3, 0.4])
    n2 = float(v @ v)
    exact = (
        abs(arccos_kernel(1, v, 2 * v) - n2) / n2  # |v||2v| J1(0)/2pi = |v|^2
        + abs(arccos_kernel(2, v, v) - 1.5 * n2 * n2) / (1.5 * n2 * n2)
        + abs(arccos_kernel(1, np.array([1.0, 0.0]), np.array([0.0, 2.0])) - 1.0 / np.pi) * np.pi
        + abs(arccos_kernel(1, v, -v))
        + abs(arccos_kernel(2, v, -v))
    )
    ok = rels[1] <= 0.01 and rels[2] <= 0.01 and exact <= 1e-12
    report(
        7, "arc-cosine closed forms", ok,
        f"Gaussian-integral rel errors at 1e6 samples: order1 {rels[1]:.4f}, "
        f"order2 {rels[2]:.4f} (limit 0.01); special-angle residual {exact:.1e} "
        f"(limit 1e-12)",
    )


def test_criterion_08_allocator_properties():
    failures = []
    # worked examples
    sizes = LayerSizes.from_counts([10, 6, 3])
    if staggered_allocate(sizes, 7).freeze_counts != (6, 1, 0):
        failures.append("example freeze 7")
    if staggered_allocate(sizes, 10).freeze_counts != (7, 3, 0):
        failures.append("example freeze 10")

    rng = np.random.default_rng(2024)
    conservation = equalization = oracle = 0
    for _ in range(1500):
        n_layers = int(rng.integers(1, 7))
        counts = rng.integers(1, 10_000, size=n_layers).tolist()
        total = int(rng.integers(0, sum(counts)))
        plan = staggered_allocate(LayerSizes.from_counts(counts), total)
        if plan.total_frozen != total:
            failures.append(f"conservation {counts} {total}")
        if not all(0 <= f <= c for f, c in zip(plan.freeze_counts, counts)):
            failures.append(f"range {counts} {total}")
        conservation += 1
    for _ in range(400):
        n_layers = int(rng.integers(2, 7))
        counts = sorted(rng.integers(1, 10_000, size=n_layers).tolist(), reverse=True)
        diffs = [counts[i] - counts[i + 1] for i in range(n_layers - 1)]
        acc = 0
        for k, d in enumerate(diffs, start=1):
            acc += k * d
            keeps = staggered_allocate(LayerSizes.from_counts(counts), acc).keep_counts
            if any(kc != counts[k] for kc in keeps[:k]) or keeps[k:] != tuple(counts[k:]):
                failures.append(f"equalization {counts} {acc}")
            equalization += 1
    while oracle < 1200:
        n_layers = int(rng.integers(2, 7))
        counts = sorted(rng.integers(1, 10_000, size=n_layers).tolist(), reverse=True)
        last_lim = sum((k + 1) * d for k, d in
                       enumerate(counts[i] - counts[i + 1] for i in range(n_layers - 1)))
        if last_lim == 0:
            continue
        total = int(rng.integers(0, last_lim + 1))
        ref = reference_staggered(counts, total)
        if any(f > c for f, c in zip(ref, counts)):
            continue  # remainder rule overflows; production allocator carries over
        got = list(staggered_allocate(LayerSizes.from_counts(counts), total).freeze_counts)
        if got != ref:
            failures.append(f"oracle {counts} {total}: {got} != {ref}")
        oracle += 1
    ok = not failures
    report(
        8, "allocator property suite", ok,
        f"worked examples exact; conservation+range on {conservation} instances, "
        f"equalization at {equalization} bin edges, oracle equivalence on {oracle} "
        f"instances" + ("" if ok else f"; failures: {failures[:3]}"),
    )


def test_criterion_09_gradient_checks():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(3, 10))
    labels = np.array([0, 3, 7])
    cases = 0
    for activation in ("relu", "linear"):
        for masked in (False, True):
            if masked:
                arch = sparse_arch(width=8, activation=activation, input_dim=10, output_dim=10)
            else:
                arch = MlpArch(input_dim=10, hidden_widths=(8,), output_dim=10,
                               activation=activation)
            assert_grads_match(init_model(arch, seed=4), x, labels, tol=1e-5)
            cases += 1
    report(
        9, "analytic gradients vs finite differences", True,
        f"{cases} model variants (relu/linear x dense/masked) within 1e-5 "
        f"relative error per coordinate",
    )


def test_criterion_10_cell_rerun_determinism(mnist_dir):
    train_full, test_ds = load_mnist(mnist_dir)
    train_ds = subset(train_full, 512, seed=proto.SUBSET_SEED)
    spec = SweepSpec(
        widths=[5],
        budget=proto.BUDGET_SMALL,
        family="sparse",
        repeats=1,
        master_seed=11,
        train=TrainConfig(epochs=2, batch_size=64, learning_rate=0.1, subset_size=512),
        out_dir=str(proto.ACCEPT_DIR / "determinism_cell"),
    )
    first = run_sweep(spec, train_ds, test_ds, threads=1)
    with open(first[0].path) as fh:
        original = json.load(fh)
    os.remove(first[0].path)
    second = run_sweep(spec, train_ds, test_ds, threads=1)
    with open(second[0].path) as fh:
        redone = json.load(fh)
    drop = ("wall_clock_sec",)
    a = {k: v for k, v in original["record"].items() if k not in drop}
    b = {k: v for k, v in redone["record"].items() if k not in drop}
    ok = a == b and original["cell"] == redone["cell"]
    report(
        10, "cell re-run determinism", ok,
        "re-running a deleted sweep cell at --threads 1 reproduced every metric "
        + ("bit-identically" if ok else "WITH DIFFERENCES"),
    )
