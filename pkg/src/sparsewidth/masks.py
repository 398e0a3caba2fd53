"""Static random keep/freeze masks over weight tensors.

A mask is drawn once from an explicit 64-bit seed and never changes
afterwards. Sampling uses a partial Fisher-Yates shuffle on top of
numpy's PCG64 stream, which is documented to be platform independent,
so the same (shape, keep_count, mode, seed) always reproduces the same
bits on any machine.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

ALL_DIMS = "all_dims"
AXIS_RESTRICTED = "axis_restricted"


class MaskError(ValueError):
    """Base class for mask failures."""


class KeepCountOutOfRange(MaskError):
    pass


class IndivisibleKeepCount(MaskError):
    pass


class ShapeMismatch(MaskError):
    pass


@dataclass(frozen=True)
class SparsityMask:
    """Immutable keep pattern over a weight tensor.

    keep is a dense boolean array of the tensor's shape; True marks
    trainable positions, False marks frozen (zero) ones.
    """

    shape: tuple[int, ...]
    keep: np.ndarray
    keep_count: int
    mode: str
    axes: tuple[int, ...] | None
    seed: int

    def __post_init__(self):
        self.keep.setflags(write=False)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def connectivity(self) -> float:
        return self.keep_count / self.size

    def fingerprint(self) -> str:
        """sha256 of the packed mask bits, for invariance checks."""
        return hashlib.sha256(np.packbits(self.keep.ravel()).tobytes()).hexdigest()

    def header(self) -> dict:
        """Serializable description; the body regenerates from the seed."""
        return {
            "shape": list(self.shape),
            "keep_count": self.keep_count,
            "mode": self.mode,
            "axes": list(self.axes) if self.axes is not None else None,
            "seed": self.seed,
        }

    @classmethod
    def from_header(cls, header: dict) -> "SparsityMask":
        return sample_mask(
            tuple(header["shape"]),
            header["keep_count"],
            mode=header["mode"],
            axes=tuple(header["axes"]) if header.get("axes") is not None else None,
            seed=header["seed"],
        )


def _partial_fisher_yates(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """First k entries of a uniformly random permutation of range(n)."""
    idx = np.arange(n, dtype=np.int64)
    if k == 0:
        return idx[:0]
    js = rng.integers(np.arange(k, dtype=np.int64), n)
    for i in range(k):
        j = js[i]
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]


def sample_mask(
    shape,
    keep_count: int,
    mode: str = ALL_DIMS,
    axes: tuple[int, ...] | None = None,
    seed: int = 0,
) -> SparsityMask:
    """Draw keep positions uniformly without replacement.

    In all_dims mode every cell is an independent candidate. In
    axis_restricted mode whole fibers are kept or frozen: the fibers are
    indexed by the restricted axes and the mask is constant along the
    remaining axes, so keep_count must be divisible by the product of
    the non-restricted dimensions.
    """
    shape = tuple(int(s) for s in shape)
    size = int(np.prod(shape))
    keep_count = int(keep_count)
    if not 0 <= keep_count <= size:
        raise KeepCountOutOfRange(f"keep_count {keep_count} outside [0, {size}]")
    rng = np.random.Generator(np.random.PCG64(seed))

    if mode == ALL_DIMS:
        keep = np.zeros(size, dtype=bool)
        keep[_partial_fisher_yates(size, keep_count, rng)] = True
        keep = keep.reshape(shape)
    elif mode == AXIS_RESTRICTED:
        if axes is None or len(axes) == 0:
            raise MaskError("axis_restricted mode needs a non-empty axes tuple")
        axes = tuple(sorted(a % len(shape) for a in axes))
        if len(set(axes)) != len(axes):
            raise MaskError("restricted axes must be distinct")
        free_axes = tuple(a for a in range(len(shape)) if a not in axes)
        cells_per_fiber = int(np.prod([shape[a] for a in free_axes]))
        if keep_count % cells_per_fiber != 0:
            raise IndivisibleKeepCount(
                f"keep_count {keep_count} not divisible by fiber size {cells_per_fiber}"
            )
        fiber_shape = tuple(shape[a] for a in axes)
        n_fibers = int(np.prod(fiber_shape))
        kept_fibers = keep_count // cells_per_fiber
        fiber_keep = np.zeros(n_fibers, dtype=bool)
        fiber_keep[_partial_fisher_yates(n_fibers, kept_fibers, rng)] = True
        # broadcast fiber decisions across the free axes
        expanded_shape = [1] * len(shape)
        for a, s in zip(axes, fiber_shape):
            expanded_shape[a] = s
        keep = np.broadcast_to(
            fiber_keep.reshape(expanded_shape), shape
        ).copy()
    else:
        raise MaskError(f"unknown mask mode {mode!r}")

    return SparsityMask(
        shape=shape, keep=keep, keep_count=keep_count, mode=mode,
        axes=axes if mode == AXIS_RESTRICTED else None, seed=int(seed),
    )


def apply_mask(weights: np.ndarray, mask: SparsityMask) -> np.ndarray:
    """Zero out frozen positions; kept positions pass through unchanged."""
    if tuple(weights.shape) != mask.shape:
        raise ShapeMismatch(f"weights {weights.shape} vs mask {mask.shape}")
    return np.where(mask.keep, weights, 0.0)


def mask_statistics(mask: SparsityMask) -> dict:
    """Connectivity plus kept counts per row and per column (2-d masks)."""
    if len(mask.shape) != 2:
        raise MaskError("mask_statistics is defined for 2-d masks")
    return {
        "connectivity": mask.keep_count / mask.size,
        "per_row_kept": mask.keep.sum(axis=1).tolist(),
        "per_col_kept": mask.keep.sum(axis=0).tolist(),
    }
