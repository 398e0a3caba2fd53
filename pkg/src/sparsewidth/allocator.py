"""Integer allocation of frozen weights across layers at a fixed budget.

Given per-layer weight counts and a total number of weights to freeze,
decide how many weights each layer gives up. The default scheme is
staggered (water-filling): freeze weights in the largest layer until it
shrinks to the size of the next-smaller one, then freeze in both equally,
and so on. A proportional scheme and a two-layer scheme driven by the
last layer's connectivity are also provided.

All arithmetic is exact integer arithmetic so that conservation
(sum of per-layer freezes == requested total) holds exactly.
"""

from __future__ import annotations

import json
from bisect import bisect_left
from dataclasses import dataclass


class AllocatorError(ValueError):
    """Base class for allocation failures."""


class EmptyLayerList(AllocatorError):
    """No layers were given."""


class BudgetExceedsWeights(AllocatorError):
    """Asked to freeze at least as many weights as the model has."""


class InvalidCombination(AllocatorError):
    """A (keep_total, last-layer connectivity) pair that no plan can satisfy."""


@dataclass(frozen=True)
class LayerSizes:
    """Named per-layer weight counts (biases excluded)."""

    names: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.names) != len(self.counts):
            raise AllocatorError("names and counts must have equal length")
        if len(set(self.names)) != len(self.names):
            raise AllocatorError("layer names must be unique")
        if any(c < 1 for c in self.counts):
            raise AllocatorError("layer weight counts must be >= 1")

    @classmethod
    def from_counts(cls, counts, names=None) -> "LayerSizes":
        counts = tuple(int(c) for c in counts)
        if names is None:
            names = tuple(f"layer{i}" for i in range(len(counts)))
        return cls(tuple(names), counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def __len__(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class AllocationPlan:
    """Per-layer freeze counts, reported in the caller's layer order."""

    sizes: LayerSizes
    freeze_counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "freeze_counts", tuple(int(f) for f in self.freeze_counts))
        if len(self.freeze_counts) != len(self.sizes):
            raise AllocatorError("freeze_counts length must match layer count")
        for f, c in zip(self.freeze_counts, self.sizes.counts):
            if not 0 <= f <= c:
                raise AllocatorError(f"freeze count {f} outside [0, {c}]")

    @property
    def total_frozen(self) -> int:
        return sum(self.freeze_counts)

    @property
    def keep_counts(self) -> tuple[int, ...]:
        return tuple(c - f for c, f in zip(self.sizes.counts, self.freeze_counts))

    @property
    def per_layer_connectivity(self) -> tuple[float, ...]:
        return tuple((c - f) / c for c, f in zip(self.sizes.counts, self.freeze_counts))

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"name": n, "size": c, "freeze": f, "connectivity": (c - f) / c}
                for n, c, f in zip(self.sizes.names, self.sizes.counts, self.freeze_counts)
            ],
            "total_frozen": self.total_frozen,
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _check_budget(sizes: LayerSizes, total_to_freeze: int) -> None:
    if len(sizes) == 0:
        raise EmptyLayerList("need at least one layer")
    if total_to_freeze < 0:
        raise AllocatorError("total_to_freeze must be non-negative")
    if total_to_freeze >= sizes.total:
        raise BudgetExceedsWeights(
            f"cannot freeze {total_to_freeze} of {sizes.total} weights"
        )


def _descending_order(counts) -> list[int]:
    # stable: ties keep input order
    return sorted(range(len(counts)), key=lambda i: -counts[i])


def _staggered_sorted(counts: list[int], total_to_freeze: int) -> list[int]:
    """Water-filling over counts sorted in descending order.

    Freezes the largest layer down to the size of the next-smaller layer,
    then both equally, and so on; the bin boundaries are the budgets at
    which the involved layers' remaining sizes equalize. Any budget past
    the last boundary is spread equally over all layers, with the
    indivisible remainder going to the largest layer first.
    """
    num_layers = len(counts)
    diffs = [counts[i] - counts[i + 1] for i in range(num_layers - 1)]
    lims = []
    acc = 0
    for k, d in enumerate(diffs, start=1):
        acc += k * d
        lims.append(acc)

    if lims and total_to_freeze <= lims[-1]:
        lim_ind = bisect_left(lims, total_to_freeze)
        involved = lim_ind + 1
        base = [counts[i] - counts[lim_ind] for i in range(lim_ind)] + [0]
    else:
        involved = num_layers
        base = [c - counts[-1] for c in counts]

    rest_tot = total_to_freeze - sum(base)
    rest, mismatch = divmod(rest_tot, involved)

    freeze = [0] * num_layers
    for i in range(involved):
        freeze[i] = base[i] + rest
    # The indivisible remainder goes to the largest layer. When equal-size
    # layers leave it no room there, the overflow carries to the next layer;
    # lumping it all on layer 0 could otherwise exceed that layer's size.
    i = 0
    while mismatch > 0:
        take = min(mismatch, counts[i] - freeze[i])
        freeze[i] += take
        mismatch -= take
        i += 1

    assert sum(freeze) == total_to_freeze
    return freeze


def staggered_allocate(sizes: LayerSizes, total_to_freeze: int) -> AllocationPlan:
    """Distribute a total freeze budget over layers by staggered water-filling.

    Layers are processed largest-first (stable order on ties). Whenever the
    budget lands exactly on a bin boundary, every sparsified layer is left
    with the same number of weights as the largest untouched layer.

    Raises EmptyLayerList or BudgetExceedsWeights on impossible inputs.
    """
    _check_budget(sizes, total_to_freeze)
    order = _descending_order(sizes.counts)
    sorted_counts = [sizes.counts[i] for i in order]
    freeze_sorted = _staggered_sorted(sorted_counts, total_to_freeze)
    freeze = [0] * len(sizes)
    for pos, orig in enumerate(order):
        freeze[orig] = freeze_sorted[pos]
    return AllocationPlan(sizes, tuple(freeze))


def proportional_allocate(sizes: LayerSizes, total_to_freeze: int) -> AllocationPlan:
    """Freeze floor(total * count/sum) weights per layer.

    The rounding remainder is handed out one weight at a time to the
    largest layers first (stable order on ties).
    """
    _check_budget(sizes, total_to_freeze)
    total = sizes.total
    freeze = [total_to_freeze * c // total for c in sizes.counts]
    remainder = total_to_freeze - sum(freeze)
    for i in _descending_order(sizes.counts)[:remainder]:
        freeze[i] += 1
    return AllocationPlan(sizes, tuple(freeze))


def plan_from_layer_connectivities(
    sizes: LayerSizes, keep_total: int, last_layer_connectivity: float
) -> AllocationPlan:
    """Two-layer plan with the last layer's connectivity pinned.

    keep_last = round(connectivity * last layer size); the first layer keeps
    whatever remains of keep_total. Combinations where that leaves the first
    layer empty, or more than full, are rejected with InvalidCombination.
    """
    if len(sizes) != 2:
        raise AllocatorError("plan_from_layer_connectivities needs exactly two layers")
    if not 0 < last_layer_connectivity <= 1:
        raise AllocatorError("last_layer_connectivity must be in (0, 1]")
    first, last = sizes.counts
    keep_last = round(last_layer_connectivity * last)
    keep_first = keep_total - keep_last
    if keep_last <= 0 or keep_first <= 0 or keep_first > first:
        raise InvalidCombination(
            f"keep_total={keep_total} with last-layer connectivity "
            f"{last_layer_connectivity} needs keep_first={keep_first} "
            f"of {first} and keep_last={keep_last} of {last}"
        )
    return AllocationPlan(sizes, (first - keep_first, last - keep_last))
