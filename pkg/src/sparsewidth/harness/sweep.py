"""Sweep orchestration: fixed-budget model families, seeded cells, resume.

A sweep is a grid of cells (width x last-layer-connectivity x repeat).
Every cell derives its seeds purely from (master seed, cell coordinates),
so any cell can be re-run in isolation and reproduce its record bit for
bit. Completed cells are recognized by a content hash of their identity
and skipped on resume. Cells are independent, so records do not depend on
how many workers executed them.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..allocator import (
    AllocationPlan,
    InvalidCombination,
    LayerSizes,
    plan_from_layer_connectivities,
    staggered_allocate,
)
from ..data import Dataset
from ..kernels import (
    MC_MASKS,
    approx_kernel_distance,
    empirical_distance,
    expected_kernel_distance,
)
from ..models import (
    Dense,
    MlpArch,
    Sparse,
    LinearBottleneck,
    NonlinearBottleneck,
    init_model,
    param_count,
    solve_width_for_budget,
)
from ..training import RunRecord, TrainConfig, train

FAMILIES = ("sparse", "dense", "linear_bottleneck", "nonlinear_bottleneck")


class SweepError(ValueError):
    pass


@dataclass
class SweepSpec:
    """One training sweep: a fixed-budget family crossed with seeds.

    last_layer_connectivities=None trains the staggered allocation per
    width; a grid trains every valid (width, connectivity) cell. lr_grid
    switches on per-width learning-rate tuning (short runs, best final
    training loss) instead of the fixed rate in `train`.
    """

    widths: list[int]
    budget: int = 3970
    family: str = "sparse"
    last_layer_connectivities: list[float] | None = None
    repeats: int = 1
    master_seed: int = 0
    activation: str = "relu"
    parameterization: str = "standard"
    use_biases: bool = True
    input_dim: int = 784
    output_dim: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    lr_grid: list[float] | None = None
    lr_tune_epochs: int = 60
    out_dir: str = "runs"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SweepError(f"unknown family {self.family!r}")
        if self.repeats < 1:
            raise SweepError("repeats must be >= 1")
        if not self.widths:
            raise SweepError("need at least one width")

    def to_dict(self) -> dict:
        out = {
            "widths": list(self.widths),
            "budget": self.budget,
            "family": self.family,
            "last_layer_connectivities": self.last_layer_connectivities,
            "repeats": self.repeats,
            "master_seed": self.master_seed,
            "activation": self.activation,
            "parameterization": self.parameterization,
            "use_biases": self.use_biases,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "train": self.train.to_dict(),
            "lr_grid": self.lr_grid,
            "lr_tune_epochs": self.lr_tune_epochs,
            "out_dir": self.out_dir,
        }
        return out


def family_layer_sizes(input_dim: int, width: int, output_dim: int) -> LayerSizes:
    return LayerSizes(("hidden", "readout"), (input_dim * width, width * output_dim))


def baseline_width(spec: SweepSpec) -> int:
    template = MlpArch(
        input_dim=spec.input_dim,
        hidden_widths=(1,),
        output_dim=spec.output_dim,
        activation=spec.activation,
        use_biases=spec.use_biases,
        parameterization=spec.parameterization,
    )
    width, _ = solve_width_for_budget(template, spec.budget)
    return width


def derive_cell_seeds(master_seed: int, width: int, llc: float | None, repeat: int) -> dict:
    """Pure function of the cell coordinates; see module docstring."""
    llc_key = 0x7FFF_FFFF if llc is None else int(round(llc * 10_000))
    seq = np.random.SeedSequence([int(master_seed), int(width), llc_key, int(repeat)])
    mask_a, mask_b, model, shuffle = (int(s) for s in seq.generate_state(4, np.uint64))
    return {
        "mask": [mask_a, mask_b],
        "model": model,
        "shuffle": shuffle,
    }


def member_arch(spec: SweepSpec, width: int, llc: float | None, mask_seeds) -> MlpArch:
    """Fully resolved architecture of one family member at one width.

    Sparse members hit the budget exactly; bottleneck members solve their
    free dimension and may leave a small residual (reported by the cell).
    """
    common = dict(
        input_dim=spec.input_dim,
        output_dim=spec.output_dim,
        activation=spec.activation,
        use_biases=spec.use_biases,
        parameterization=spec.parameterization,
    )
    if spec.family == "dense":
        return MlpArch(hidden_widths=(width,), variant=Dense(), **common)

    if spec.family == "sparse":
        sizes = family_layer_sizes(spec.input_dim, width, spec.output_dim)
        if sizes.total < spec.budget:
            raise SweepError(f"width {width} is below the budget baseline")
        if sizes.total == spec.budget and (llc is None or llc == 1.0):
            return MlpArch(hidden_widths=(width,), variant=Dense(), **common)
        if llc is None:
            plan = staggered_allocate(sizes, sizes.total - spec.budget)
        else:
            plan = plan_from_layer_connectivities(sizes, spec.budget, llc)
        return MlpArch(
            hidden_widths=(width,),
            variant=Sparse(plan=plan, mask_seeds=tuple(mask_seeds)),
            **common,
        )

    if spec.family == "linear_bottleneck":
        template = MlpArch(hidden_widths=(width,), variant=LinearBottleneck((1, 1)), **common)
        db, _ = solve_width_for_budget(template, spec.budget)
        return MlpArch(hidden_widths=(width,), variant=LinearBottleneck((db, db)), **common)

    # nonlinear bottleneck: wide first hidden layer, narrow second
    template = MlpArch(hidden_widths=(width, 1), variant=NonlinearBottleneck(), **common)
    db, _ = solve_width_for_budget(template, spec.budget)
    return MlpArch(hidden_widths=(width, db), variant=NonlinearBottleneck(), **common)


def build_family(spec: SweepSpec) -> list[MlpArch]:
    """One architecture per width, with repeat-0 mask seeds."""
    out = []
    for width in spec.widths:
        seeds = derive_cell_seeds(spec.master_seed, width, None, 0)
        out.append(member_arch(spec, width, None, seeds["mask"]))
    return out


def _cell_identity(spec: SweepSpec, width: int, llc: float | None, repeat: int) -> dict:
    # deliberately excludes the grid lists so that growing a sweep never
    # invalidates already-computed cells
    train = spec.train.to_dict()
    if spec.lr_grid is not None:
        # the tuned value is a pure function of the grid, so the grid is
        # enough to identify the cell
        train["learning_rate"] = ["tuned", *spec.lr_grid]
    return {
        "family": spec.family,
        "budget": spec.budget,
        "master_seed": spec.master_seed,
        "activation": spec.activation,
        "parameterization": spec.parameterization,
        "use_biases": spec.use_biases,
        "input_dim": spec.input_dim,
        "output_dim": spec.output_dim,
        "train": train,
        "width": width,
        "llc": llc,
        "repeat": repeat,
    }


def cell_hash(spec: SweepSpec, width: int, llc: float | None, repeat: int) -> str:
    blob = json.dumps(_cell_identity(spec, width, llc, repeat), sort_keys=True)
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


def _atomic_write_json(path: str, payload: dict) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=2)
    os.replace(tmp, path)


def _overall_connectivity(arch: MlpArch) -> float:
    dims = arch.layer_dims
    dense = sum(a * b for a, b in zip(dims[:-1], dims[1:]))
    return param_count(arch) / dense


@dataclass
class CellResult:
    width: int
    llc: float | None
    repeat: int
    record: RunRecord | None
    path: str
    error: str | None = None
    skipped_invalid: bool = False


def _run_cell(spec: SweepSpec, train_ds, test_ds, width, llc, repeat, lr) -> CellResult:
    path = os.path.join(spec.out_dir, f"run_{cell_hash(spec, width, llc, repeat)}.json")
    seeds = derive_cell_seeds(spec.master_seed, width, llc, repeat)
    try:
        arch = member_arch(spec, width, llc, seeds["mask"])
    except InvalidCombination:
        return CellResult(width, llc, repeat, None, path, skipped_invalid=True)
    try:
        config = replace(spec.train, learning_rate=lr, shuffle_seed=seeds["shuffle"])
        model = init_model(arch, seeds["model"])
        record = train(model, train_ds, test_ds, config)
        record.seeds.update({"mask": seeds["mask"], "master": spec.master_seed})
        payload = {
            "cell": {
                "width": width,
                "llc": llc,
                "repeat": repeat,
                "family": spec.family,
                "budget": spec.budget,
                "param_count": param_count(arch),
                "overall_connectivity": _overall_connectivity(arch),
                "learning_rate": lr,
            },
            "record": record.to_dict(),
        }
        _atomic_write_json(path, payload)
        return CellResult(width, llc, repeat, record, path)
    except Exception as exc:  # per-cell failures recorded, sweep continues
        _atomic_write_json(path + ".error", {"error": repr(exc)})
        return CellResult(width, llc, repeat, None, path, error=repr(exc))


def tune_learning_rates(spec: SweepSpec, train_ds, test_ds) -> dict[int, float]:
    """Per-width learning rate: best final training loss on a short run.

    Uses repeat index equal to the position in the grid plus a fixed
    offset so tuning runs never share seeds with measurement runs. The
    table is cached in the sweep directory.
    """
    assert spec.lr_grid
    cache_path = os.path.join(spec.out_dir, "lr_table.json")
    if os.path.exists(cache_path):
        with open(cache_path) as fh:
            payload = json.load(fh)
        if payload.get("grid") == list(spec.lr_grid):
            cached = {int(k): float(v) for k, v in payload["table"].items()}
            if set(cached) >= set(spec.widths):
                return cached
    table: dict[int, float] = {}
    for width in spec.widths:
        best_lr, best_loss = None, np.inf
        for gi, lr in enumerate(spec.lr_grid):
            seeds = derive_cell_seeds(spec.master_seed, width, None, 10_000 + gi)
            arch = member_arch(spec, width, None, seeds["mask"])
            config = replace(
                spec.train,
                epochs=spec.lr_tune_epochs,
                learning_rate=lr,
                shuffle_seed=seeds["shuffle"],
            )
            model = init_model(arch, seeds["model"])
            record = train(model, train_ds, test_ds, config)
            final = record.train_loss[-1] if record.train_loss else np.inf
            if record.aborted:
                final = np.inf
            if final < best_loss:
                best_loss, best_lr = final, lr
        table[width] = best_lr if best_lr is not None else spec.train.learning_rate
    os.makedirs(spec.out_dir, exist_ok=True)
    _atomic_write_json(
        cache_path,
        {"grid": list(spec.lr_grid), "table": {str(k): v for k, v in table.items()}},
    )
    return table


def run_sweep(
    spec: SweepSpec,
    train_ds: Dataset,
    test_ds: Dataset,
    threads: int = 1,
) -> list[CellResult]:
    """Execute every (width, llc, repeat) cell, resuming completed ones."""
    os.makedirs(spec.out_dir, exist_ok=True)
    _atomic_write_json(os.path.join(spec.out_dir, "sweep_config.json"), spec.to_dict())

    lr_table: dict[int, float] = {}
    if spec.lr_grid is not None:
        lr_table = tune_learning_rates(spec, train_ds, test_ds)

    llcs: list[float | None] = (
        list(spec.last_layer_connectivities)
        if spec.last_layer_connectivities is not None
        else [None]
    )
    cells = [
        (w, llc, r)
        for w in spec.widths
        for llc in llcs
        for r in range(spec.repeats)
    ]

    results: list[CellResult] = []
    todo = []
    for width, llc, repeat in cells:
        path = os.path.join(spec.out_dir, f"run_{cell_hash(spec, width, llc, repeat)}.json")
        if os.path.exists(path):
            with open(path) as fh:
                payload = json.load(fh)
            rec = RunRecord(
                config=payload["record"]["config"],
                seeds=payload["record"]["seeds"],
                train_accuracy=payload["record"]["train_accuracy"],
                train_loss=payload["record"]["train_loss"],
                test_accuracy=payload["record"]["test_accuracy"],
                test_loss=payload["record"]["test_loss"],
                aborted=payload["record"]["aborted"],
                abort_reason=payload["record"]["abort_reason"],
                wall_clock_sec=payload["record"]["wall_clock_sec"],
                mask_fingerprints=payload["record"]["mask_fingerprints"],
            )
            results.append(CellResult(width, llc, repeat, rec, path))
        else:
            todo.append((width, llc, repeat))

    def runner(cell):
        width, llc, repeat = cell
        lr = lr_table.get(width, spec.train.learning_rate)
        return _run_cell(spec, train_ds, test_ds, width, llc, repeat, lr)

    if threads <= 1:
        results.extend(runner(c) for c in todo)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results.extend(pool.map(runner, todo))

    _write_summary_csv(spec, results)
    return results


def _write_summary_csv(spec: SweepSpec, results: list[CellResult]) -> None:
    rows = [
        "run_id,width,llc,repeat,overall_connectivity,"
        "best_train_acc,best_test_acc,learning_rate,seed"
    ]
    for res in sorted(results, key=lambda r: (r.width, r.llc or 0.0, r.repeat)):
        if res.record is None:
            continue
        with open(res.path) as fh:
            cell = json.load(fh)["cell"]
        rows.append(
            f"{os.path.basename(res.path)},{res.width},"
            f"{'' if res.llc is None else res.llc},{res.repeat},"
            f"{cell['overall_connectivity']:.6g},"
            f"{res.record.best_train_accuracy:.6f},{res.record.best_test_accuracy:.6f},"
            f"{cell['learning_rate']},{res.record.seeds.get('model', '')}"
        )
    with open(os.path.join(spec.out_dir, "summary.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")


@dataclass
class KernelSweepSpec:
    """Distance-vs-width sweep at a fixed first-layer weight budget."""

    widths: list[int]
    budget: int = 6352
    input_dim: int = 784
    output_dim: int = 10
    num_pairs: int = 10_000
    num_inits: int = 10
    surrogate_width: int = 10_000
    theory_pairs: int = 32
    theory_mask_samples: int = 20_000
    master_seed: int = 0
    out_dir: str = "kernel_runs"

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "budget": self.budget,
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "num_pairs": self.num_pairs,
            "num_inits": self.num_inits,
            "surrogate_width": self.surrogate_width,
            "theory_pairs": self.theory_pairs,
            "theory_mask_samples": self.theory_mask_samples,
            "master_seed": self.master_seed,
            "out_dir": self.out_dir,
        }


def kernel_family_connectivity(spec: KernelSweepSpec, width: int) -> tuple[float, int]:
    """First-layer connectivity when n*p is pinned by the baseline width.

    The baseline dense model at the budget fixes the kept first-layer
    weights (baseline width * input dim); every wider member keeps that
    count, so p = baseline_width / width.
    """
    template = MlpArch(
        input_dim=spec.input_dim,
        hidden_widths=(1,),
        output_dim=spec.output_dim,
        use_biases=False,
        parameterization="ntk",
    )
    w0, _ = solve_width_for_budget(template, spec.budget)
    keep = w0 * spec.input_dim
    return w0 / width, keep


def run_kernel_sweep(
    spec: KernelSweepSpec,
    test_inputs: np.ndarray,
    compute_theory_mc: bool = True,
) -> list[dict]:
    """Empirical distance plus both theory estimates per width; writes CSV.

    Columns: empirical distance against the wide dense surrogate, the
    closed-form approximation, and the mask-Monte-Carlo evaluation of the
    exact distance averaged over a subsample of pairs.
    """
    os.makedirs(spec.out_dir, exist_ok=True)
    _atomic_write_json(os.path.join(spec.out_dir, "kernel_config.json"), spec.to_dict())
    d = spec.input_dim
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([spec.master_seed, 0x746865]))
    )
    rows = []
    for width in spec.widths:
        p, keep = kernel_family_connectivity(spec, width)
        path = os.path.join(spec.out_dir, f"kernel_w{width}.json")
        if os.path.exists(path):
            with open(path) as fh:
                rows.append(json.load(fh))
            continue
        est = empirical_distance(
            test_inputs,
            width,
            p,
            num_pairs=spec.num_pairs,
            num_inits=spec.num_inits,
            seed=spec.master_seed,
            keep_count=keep,
            surrogate_width=spec.surrogate_width,
            surrogate_seed=spec.master_seed + 1,
        )
        theory_mc = None
        if compute_theory_mc and spec.theory_pairs > 0:
            idx = rng.choice(len(test_inputs), size=(spec.theory_pairs, 2), replace=False)
            vals = []
            for k, (i, j) in enumerate(idx):
                res = expected_kernel_distance(
                    p,
                    width,
                    test_inputs[i],
                    test_inputs[j],
                    method=MC_MASKS,
                    samples=spec.theory_mask_samples,
                    seed=spec.master_seed + 7_000 + k,
                )
                vals.append(res.distance)
            theory_mc = float(np.mean(vals))
        row = {
            "width": width,
            "connectivity": p,
            "distance_empirical": est.value,
            "distance_stderr": est.stderr,
            "distance_approx": approx_kernel_distance(p, width, d),
            "distance_mask_mc": theory_mc,
            "samples": est.samples,
        }
        _atomic_write_json(path, row)
        rows.append(row)

    header = (
        "width,connectivity,distance_empirical,distance_stderr,"
        "distance_approx,distance_mask_mc,samples"
    )
    lines = [header]
    for r in rows:
        mc = "" if r["distance_mask_mc"] is None else f"{r['distance_mask_mc']:.8g}"
        lines.append(
            f"{r['width']},{r['connectivity']:.8g},{r['distance_empirical']:.8g},"
            f"{r['distance_stderr']:.8g},{r['distance_approx']:.8g},{mc},{r['samples']}"
        )
    with open(os.path.join(spec.out_dir, "kernel_summary.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return rows
