"""Command-line front end: allocate, train, scan, kernel, export."""

from __future__ import annotations

import argparse
import json
import sys

from ..allocator import LayerSizes, plan_from_layer_connectivities, proportional_allocate, staggered_allocate
from ..data import find_mnist_dir, load_mnist, subset
from ..training import TrainConfig
from .figures import KINDS, export_figure
from .sweep import KernelSweepSpec, SweepSpec, run_kernel_sweep, run_sweep


def _parse_int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _parse_float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def _load_datasets(args, subset_size=None, subset_seed=0):
    data_dir = find_mnist_dir(args.data_dir)
    if data_dir is None:
        sys.exit(
            "MNIST not found; pass --data-dir or set SPARSEWIDTH_MNIST to a "
            "directory with the four IDX files"
        )
    train_ds, test_ds = load_mnist(data_dir)
    if subset_size:
        train_ds = subset(train_ds, subset_size, subset_seed)
    return train_ds, test_ds


def cmd_allocate(args) -> int:
    sizes = LayerSizes.from_counts(
        _parse_int_list(args.counts),
        args.names.split(",") if args.names else None,
    )
    if args.llc is not None:
        plan = plan_from_layer_connectivities(sizes, args.keep, args.llc)
    elif args.method == "proportional":
        plan = proportional_allocate(sizes, args.freeze if args.freeze is not None else sizes.total - args.keep)
    else:
        plan = staggered_allocate(sizes, args.freeze if args.freeze is not None else sizes.total - args.keep)
    print(plan.to_json(indent=2))
    return 0


def _sweep_spec_from_args(args, widths, llcs) -> SweepSpec:
    return SweepSpec(
        widths=widths,
        budget=args.budget,
        family=args.family,
        last_layer_connectivities=llcs,
        repeats=args.repeats,
        master_seed=args.seed,
        activation=args.activation,
        parameterization=args.parameterization,
        use_biases=not args.no_biases,
        train=TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            momentum=args.momentum,
            subset_size=args.subset,
        ),
        lr_grid=_parse_float_list(args.lr_grid) if args.lr_grid else None,
        lr_tune_epochs=args.lr_tune_epochs,
        out_dir=args.out,
    )


def cmd_train(args) -> int:
    spec = _sweep_spec_from_args(args, [args.width], [args.llc] if args.llc else None)
    spec.repeats = 1
    train_ds, test_ds = _load_datasets(args, args.subset, args.seed)
    spec.input_dim = train_ds.images.shape[1]
    results = run_sweep(spec, train_ds, test_ds, threads=1)
    ok = all(r.error is None for r in results)
    for res in results:
        if res.record is not None:
            print(
                f"width={res.width} llc={res.llc} best_test="
                f"{res.record.best_test_accuracy:.4f} -> {res.path}"
            )
        elif res.skipped_invalid:
            print(f"width={res.width} llc={res.llc}: invalid combination")
        else:
            print(f"width={res.width} llc={res.llc}: FAILED {res.error}")
    return 0 if ok else 1


def cmd_scan(args) -> int:
    llcs = _parse_float_list(args.llc_grid) if args.llc_grid else None
    spec = _sweep_spec_from_args(args, _parse_int_list(args.widths), llcs)
    train_ds, test_ds = _load_datasets(args, args.subset, args.seed)
    spec.input_dim = train_ds.images.shape[1]
    results = run_sweep(spec, train_ds, test_ds, threads=args.threads)
    failed = [r for r in results if r.error is not None]
    done = [r for r in results if r.record is not None]
    invalid = [r for r in results if r.skipped_invalid]
    print(f"{len(done)} cells done, {len(invalid)} invalid, {len(failed)} failed")
    return 0 if not failed else 1


def cmd_kernel(args) -> int:
    spec = KernelSweepSpec(
        widths=_parse_int_list(args.widths),
        budget=args.budget,
        num_pairs=args.pairs,
        num_inits=args.inits,
        surrogate_width=args.surrogate_width,
        theory_pairs=args.theory_pairs,
        theory_mask_samples=args.theory_mask_samples,
        master_seed=args.seed,
        out_dir=args.out,
    )
    _, test_ds = _load_datasets(args)
    spec.input_dim = test_ds.images.shape[1]
    rows = run_kernel_sweep(spec, test_ds.images, compute_theory_mc=args.theory_pairs > 0)
    for row in rows:
        print(
            f"width={row['width']} p={row['connectivity']:.4g} "
            f"measured={row['distance_empirical']:.4g} "
            f"closed-form={row['distance_approx']:.4g}"
        )
    return 0


def cmd_export(args) -> int:
    export = export_figure(args.kind, args.results, args.out)
    print(f"{export.table_path}\n{export.image_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsewidth",
        description="Fixed-budget width scaling with static sparsity on MNIST MLPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("allocate", help="print a freeze plan for given layer sizes")
    p.add_argument("--counts", required=True, help="comma-separated layer weight counts")
    p.add_argument("--names", default=None, help="comma-separated layer names")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--freeze", type=int, default=None, help="total weights to freeze")
    group.add_argument("--keep", type=int, default=None, help="total weights to keep")
    p.add_argument("--method", choices=["staggered", "proportional"], default="staggered")
    p.add_argument("--llc", type=float, default=None,
                   help="two-layer plan with this last-layer connectivity (uses --keep)")
    p.set_defaults(fn=cmd_allocate)

    def add_train_args(p, single: bool):
        if single:
            p.add_argument("--width", type=int, required=True)
            p.add_argument("--llc", type=float, default=None)
        else:
            p.add_argument("--widths", required=True, help="comma-separated widths")
            p.add_argument("--llc-grid", default=None, help="comma-separated last-layer connectivities")
        p.add_argument("--family", choices=["sparse", "dense", "linear_bottleneck", "nonlinear_bottleneck"],
                       default="sparse")
        p.add_argument("--budget", type=int, default=3970)
        p.add_argument("--activation", choices=["relu", "linear"], default="relu")
        p.add_argument("--parameterization", choices=["standard", "ntk"], default="standard")
        p.add_argument("--no-biases", action="store_true")
        p.add_argument("--epochs", type=int, default=300)
        p.add_argument("--batch-size", type=int, default=100)
        p.add_argument("--lr", type=float, default=0.1)
        p.add_argument("--lr-grid", default=None,
                       help="comma-separated rates; tunes per width on training loss")
        p.add_argument("--lr-tune-epochs", type=int, default=60)
        p.add_argument("--momentum", type=float, default=0.0)
        p.add_argument("--subset", type=int, default=None, help="train on this many samples")
        p.add_argument("--repeats", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--data-dir", default=None)
        p.add_argument("--out", default="runs")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("train", help="train one family member")
    add_train_args(p, single=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("scan", help="train a family across widths (and connectivities)")
    add_train_args(p, single=False)
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("kernel", help="kernel distance vs width at a fixed budget")
    p.add_argument("--widths", required=True)
    p.add_argument("--budget", type=int, default=6352)
    p.add_argument("--pairs", type=int, default=10_000)
    p.add_argument("--inits", type=int, default=10)
    p.add_argument("--surrogate-width", type=int, default=10_000)
    p.add_argument("--theory-pairs", type=int, default=32)
    p.add_argument("--theory-mask-samples", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", default="kernel_runs")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_kernel)

    p = sub.add_parser("export", help="figure table + svg from sweep results")
    p.add_argument("--kind", choices=list(KINDS), required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True, help="output path base (no extension)")
    p.set_defaults(fn=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
