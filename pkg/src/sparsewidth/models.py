"""MLP variants under study: dense, sparse, and bottleneck reparameterizations.

All models are plain numpy with analytic softmax-cross-entropy gradients.
Weight matrices are stored as (fan_in, fan_out) so the forward pass is a
chain of x @ W. Two parameterizations are supported:

  * standard: weights and biases drawn Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    with fan_in the nominal dense fan-in; no scaling in the forward pass.
  * ntk: weights drawn N(0, sigma^2) with sigma^2 = 1 for dense matrices and
    1/p for sparse ones (p = connectivity of that matrix); the forward pass
    multiplies each matrix product by 1/sqrt(fan_in). Bias-free.

Sparse variants carry one static mask per weight matrix; frozen positions
are exactly zero at init and receive exactly zero gradient, so they stay
zero for the whole life of the model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .allocator import AllocationPlan, LayerSizes
from .masks import SparsityMask, apply_mask, sample_mask

RELU = "relu"
LINEAR = "linear"
STANDARD = "standard"
NTK = "ntk"


class ModelError(ValueError):
    pass


class DimensionMismatch(ModelError):
    pass


class BudgetTooSmall(ModelError):
    pass


class RankTooLarge(ModelError):
    pass


@dataclass(frozen=True)
class Dense:
    kind: str = field(default="dense", init=False)


@dataclass(frozen=True)
class Sparse:
    """Static-mask variant: an allocation plan plus one mask seed per matrix."""

    plan: AllocationPlan
    mask_seeds: tuple[int, ...]
    kind: str = field(default="sparse", init=False)

    def __post_init__(self):
        object.__setattr__(self, "mask_seeds", tuple(int(s) for s in self.mask_seeds))
        if len(self.mask_seeds) != len(self.plan.sizes):
            raise ModelError("need one mask seed per weight matrix")


@dataclass(frozen=True)
class LinearBottleneck:
    """Each weight matrix becomes a product of two thinner matrices."""

    bottleneck_dims: tuple[int, ...]
    kind: str = field(default="linear_bottleneck", init=False)

    def __post_init__(self):
        object.__setattr__(self, "bottleneck_dims", tuple(int(b) for b in self.bottleneck_dims))


@dataclass(frozen=True)
class NonlinearBottleneck:
    """Marker for the alternating wide/narrow two-hidden-layer shape."""

    kind: str = field(default="nonlinear_bottleneck", init=False)


@dataclass(frozen=True)
class MlpArch:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int = 10
    activation: str = RELU
    use_biases: bool = True
    parameterization: str = STANDARD
    variant: Dense | Sparse | LinearBottleneck | NonlinearBottleneck = Dense()

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not 1 <= len(self.hidden_widths) <= 2:
            raise ModelError("only 1 or 2 hidden layers are supported")
        if self.input_dim < 1 or self.output_dim < 1 or min(self.hidden_widths) < 1:
            raise ModelError("all dimensions must be >= 1")
        if self.activation not in (RELU, LINEAR):
            raise ModelError(f"unknown activation {self.activation!r}")
        if self.parameterization not in (STANDARD, NTK):
            raise ModelError(f"unknown parameterization {self.parameterization!r}")
        dims = self.layer_dims
        if isinstance(self.variant, LinearBottleneck):
            if len(self.variant.bottleneck_dims) != len(dims) - 1:
                raise ModelError("need one bottleneck dim per layer")
            for (di, do), db in zip(zip(dims[:-1], dims[1:]), self.variant.bottleneck_dims):
                if db > min(di, do):
                    raise RankTooLarge(f"bottleneck {db} exceeds min({di}, {do})")
                if db < 1:
                    raise ModelError("bottleneck dims must be >= 1")
        if isinstance(self.variant, Sparse):
            expected = tuple(di * do for di, do in zip(dims[:-1], dims[1:]))
            if self.variant.plan.sizes.counts != expected:
                raise ModelError(
                    f"plan sizes {self.variant.plan.sizes.counts} do not match "
                    f"matrix sizes {expected}"
                )

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def num_layers(self) -> int:
        return len(self.hidden_widths) + 1

    def matrix_shapes(self) -> list[list[tuple[int, int]]]:
        """Per layer, the (fan_in, fan_out) shapes of its trainable matrices."""
        dims = self.layer_dims
        shapes = []
        for l, (di, do) in enumerate(zip(dims[:-1], dims[1:])):
            if isinstance(self.variant, LinearBottleneck):
                db = self.variant.bottleneck_dims[l]
                shapes.append([(di, db), (db, do)])
            else:
                shapes.append([(di, do)])
        return shapes

    def to_dict(self) -> dict:
        out = {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "use_biases": self.use_biases,
            "parameterization": self.parameterization,
            "variant": {"kind": self.variant.kind},
        }
        if isinstance(self.variant, Sparse):
            out["variant"]["plan"] = self.variant.plan.to_dict()
            out["variant"]["mask_seeds"] = list(self.variant.mask_seeds)
        elif isinstance(self.variant, LinearBottleneck):
            out["variant"]["bottleneck_dims"] = list(self.variant.bottleneck_dims)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MlpArch":
        vd = data["variant"]
        if vd["kind"] == "dense":
            variant = Dense()
        elif vd["kind"] == "sparse":
            layers = vd["plan"]["layers"]
            sizes = LayerSizes(
                tuple(l["name"] for l in layers), tuple(l["size"] for l in layers)
            )
            plan = AllocationPlan(sizes, tuple(l["freeze"] for l in layers))
            variant = Sparse(plan, tuple(vd["mask_seeds"]))
        elif vd["kind"] == "linear_bottleneck":
            variant = LinearBottleneck(tuple(vd["bottleneck_dims"]))
        elif vd["kind"] == "nonlinear_bottleneck":
            variant = NonlinearBottleneck()
        else:
            raise ModelError(f"unknown variant kind {vd['kind']!r}")
        return cls(
            input_dim=data["input_dim"],
            hidden_widths=tuple(data["hidden_widths"]),
            output_dim=data["output_dim"],
            activation=data["activation"],
            use_biases=data["use_biases"],
            parameterization=data["parameterization"],
            variant=variant,
        )


@dataclass
class MlpModel:
    arch: MlpArch
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None
    masks: list[SparsityMask | None]
    seed: int

    @property
    def flat_shapes(self) -> list[tuple[int, int]]:
        return [tuple(w.shape) for w in self.weights]


def param_count(arch: MlpArch) -> int:
    """Number of counted weights: kept matrix entries, biases excluded."""
    if isinstance(arch.variant, Sparse):
        return sum(arch.variant.plan.keep_counts)
    return sum(di * do for layer in arch.matrix_shapes() for di, do in layer)


def _flat_matrix_shapes(arch: MlpArch) -> list[tuple[int, int]]:
    return [s for layer in arch.matrix_shapes() for s in layer]


def _layer_matrix_index(arch: MlpArch) -> list[list[int]]:
    idx, out = 0, []
    for layer in arch.matrix_shapes():
        out.append(list(range(idx, idx + len(layer))))
        idx += len(layer)
    return out


def init_model(arch: MlpArch, seed: int, rescale_standard_init: bool = False) -> MlpModel:
    """Sample fresh parameters; sparse variants get their masks applied here.

    rescale_standard_init divides the uniform init bound by sqrt(p) per
    matrix so that sparse layers keep the dense layer's total weight
    variance. Off by default.
    """
    shapes = _flat_matrix_shapes(arch)
    masks: list[SparsityMask | None] = [None] * len(shapes)
    if isinstance(arch.variant, Sparse):
        for i, (shape, keep, mask_seed) in enumerate(
            zip(shapes, arch.variant.plan.keep_counts, arch.variant.mask_seeds)
        ):
            masks[i] = sample_mask(shape, keep, seed=mask_seed)

    root = np.random.SeedSequence([int(seed), 0x6D6F6465])
    streams = root.spawn(len(shapes) + arch.num_layers)
    weights = []
    for i, shape in enumerate(shapes):
        rng = np.random.Generator(np.random.PCG64(streams[i]))
        fan_in = shape[0]
        p = masks[i].connectivity if masks[i] is not None else 1.0
        if arch.parameterization == STANDARD:
            bound = 1.0 / np.sqrt(fan_in)
            if rescale_standard_init and p < 1.0:
                bound /= np.sqrt(p)
            w = rng.uniform(-bound, bound, size=shape)
        else:
            w = rng.standard_normal(shape) / np.sqrt(p)
        if masks[i] is not None:
            w = apply_mask(w, masks[i])
        weights.append(w)

    biases = None
    if arch.use_biases:
        biases = []
        dims = arch.layer_dims
        for l in range(arch.num_layers):
            rng = np.random.Generator(np.random.PCG64(streams[len(shapes) + l]))
            bound = 1.0 / np.sqrt(dims[l])
            biases.append(rng.uniform(-bound, bound, size=dims[l + 1]))

    return MlpModel(arch=arch, weights=weights, biases=biases, masks=masks, seed=int(seed))


def _forward_cached(model: MlpModel, x: np.ndarray):
    """Returns (logits, per-layer input activations) for backprop."""
    arch = model.arch
    ntk = arch.parameterization == NTK
    layer_idx = _layer_matrix_index(arch)
    h = x
    layer_inputs = []
    for l, mats in enumerate(layer_idx):
        layer_inputs.append(h)
        z = h
        for mi in mats:
            w = model.weights[mi]
            z = z @ w
            if ntk:
                z = z / np.sqrt(w.shape[0])
        if model.biases is not None:
            z = z + model.biases[l]
        if l < arch.num_layers - 1 and arch.activation == RELU:
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, layer_inputs


def forward(model: MlpModel, x) -> np.ndarray:
    """Logits for a single input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.arch.input_dim:
        raise DimensionMismatch(
            f"input dim {x.shape[1]} != model input dim {model.arch.input_dim}"
        )
    logits, _ = _forward_cached(model, x)
    return logits[0] if single else logits


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of integer labels under softmax logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray] | None


def backward(model: MlpModel, x, labels) -> tuple[float, Gradients]:
    """Mean softmax-cross-entropy loss and exact gradients.

    Gradients at masked positions are exactly zero, so an SGD step can
    never resurrect a frozen weight.
    """
    arch = model.arch
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    labels = np.atleast_1d(np.asarray(labels))
    batch = x.shape[0]
    ntk = arch.parameterization == NTK
    layer_idx = _layer_matrix_index(arch)

    # forward, caching every matrix input within each layer
    h = x
    mat_inputs: list[np.ndarray] = [None] * len(model.weights)
    pre_acts = []
    for l, mats in enumerate(layer_idx):
        z = h
        for mi in mats:
            mat_inputs[mi] = z
            w = model.weights[mi]
            z = z @ w
            if ntk:
                z = z / np.sqrt(w.shape[0])
        if model.biases is not None:
            z = z + model.biases[l]
        pre_acts.append(z)
        if l < arch.num_layers - 1 and arch.activation == RELU:
            h = np.maximum(z, 0.0)
        else:
            h = z

    logits = h
    zmax = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(zmax)
    probs = expz / expz.sum(axis=1, keepdims=True)
    logp = zmax - np.log(expz.sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(batch), labels].mean())

    delta = probs.copy()
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch

    grads_w: list[np.ndarray] = [None] * len(model.weights)
    grads_b = [None] * arch.num_layers if model.biases is not None else None
    for l in range(arch.num_layers - 1, -1, -1):
        if l < arch.num_layers - 1 and arch.activation == RELU:
            delta = delta * (pre_acts[l] > 0)
        if grads_b is not None:
            grads_b[l] = delta.sum(axis=0)
        for mi in reversed(layer_idx[l]):
            w = model.weights[mi]
            scale = 1.0 / np.sqrt(w.shape[0]) if ntk else 1.0
            g = mat_inputs[mi].T @ (delta * scale)
            if model.masks[mi] is not None:
                g = np.where(model.masks[mi].keep, g, 0.0)
            grads_w[mi] = g
            delta = (delta * scale) @ w.T
    return loss, Gradients(weights=grads_w, biases=grads_b)


def solve_width_for_budget(arch: MlpArch, budget: int) -> tuple[int, int]:
    """Largest free dimension whose weight count fits the budget.

    For dense/sparse templates the free dimension is the hidden width
    (both hidden layers move together when there are two). For a linear
    bottleneck it is the shared bottleneck dim at the template's widths;
    for a nonlinear bottleneck it is the second hidden width. Returns
    (value, residual) where residual = budget - achieved count.
    """
    dims = arch.layer_dims

    if isinstance(arch.variant, LinearBottleneck):
        per_db = sum(di + do for di, do in zip(dims[:-1], dims[1:]))
        db = budget // per_db
        db = min(db, min(min(di, do) for di, do in zip(dims[:-1], dims[1:])))
        if db < 1:
            raise BudgetTooSmall(f"budget {budget} cannot fit any bottleneck")
        return db, budget - db * per_db

    if isinstance(arch.variant, NonlinearBottleneck):
        if len(arch.hidden_widths) != 2:
            raise ModelError("nonlinear bottleneck solving needs two hidden layers")
        h1 = arch.hidden_widths[0]
        fixed = arch.input_dim * h1
        per_db = h1 + arch.output_dim
        db = (budget - fixed) // per_db
        if db < 1:
            raise BudgetTooSmall(f"budget {budget} too small at first hidden width {h1}")
        return db, budget - fixed - db * per_db

    def count_at(w: int) -> int:
        widths = tuple([w] * len(arch.hidden_widths))
        ds = (arch.input_dim, *widths, arch.output_dim)
        return sum(a * b for a, b in zip(ds[:-1], ds[1:]))

    if count_at(1) > budget:
        raise BudgetTooSmall(f"budget {budget} below the width-1 count {count_at(1)}")
    lo, hi = 1, 2
    while count_at(hi) <= budget:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count_at(mid) <= budget:
            lo = mid
        else:
            hi = mid
    return lo, budget - count_at(lo)


def factorize_layer(w: np.ndarray, d_b: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Fresh factor pair replacing a (d_i, d_o) matrix with rank <= d_b.

    The factors are newly initialized trainable matrices (uniform by their
    own fan-in), not a decomposition of w; w only fixes the outer shape.
    """
    d_i, d_o = w.shape
    if d_b > min(d_i, d_o):
        raise RankTooLarge(f"bottleneck {d_b} exceeds min({d_i}, {d_o})")
    if d_b < 1:
        raise ModelError("bottleneck dim must be >= 1")
    s1, s2 = np.random.SeedSequence([int(seed), 0x666163]).spawn(2)
    r1 = np.random.Generator(np.random.PCG64(s1))
    r2 = np.random.Generator(np.random.PCG64(s2))
    w1 = r1.uniform(-1.0 / np.sqrt(d_i), 1.0 / np.sqrt(d_i), size=(d_i, d_b))
    w2 = r2.uniform(-1.0 / np.sqrt(d_b), 1.0 / np.sqrt(d_b), size=(d_b, d_o))
    return w1, w2


def nonzero_weight_counts(model: MlpModel) -> list[int]:
    return [int(np.count_nonzero(w)) for w in model.weights]


def save_checkpoint(model: MlpModel, path: str) -> None:
    """Flat float64 blob next to a JSON sidecar describing how to read it."""
    blobs = [w for w in model.weights]
    if model.biases is not None:
        blobs += list(model.biases)
    flat = np.concatenate([b.ravel() for b in blobs]).astype(np.float64)
    flat.tofile(path + ".bin")
    sidecar = {
        "arch": model.arch.to_dict(),
        "seed": model.seed,
        "mask_headers": [m.header() if m is not None else None for m in model.masks],
        "segments": [list(b.shape) for b in blobs],
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_checkpoint(path: str) -> MlpModel:
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    arch = MlpArch.from_dict(sidecar["arch"])
    flat = np.fromfile(path + ".bin", dtype=np.float64)
    segments = [tuple(s) for s in sidecar["segments"]]
    arrays, offset = [], 0
    for shape in segments:
        size = int(np.prod(shape))
        arrays.append(flat[offset : offset + size].reshape(shape))
        offset += size
    if offset != flat.size:
        raise ModelError("checkpoint blob size does not match its sidecar")
    n_mats = len(sidecar["mask_headers"])
    weights = arrays[:n_mats]
    biases = arrays[n_mats:] if arch.use_biases else None
    masks = []
    for header, w in zip(sidecar["mask_headers"], weights):
        if header is None:
            masks.append(None)
            continue
        mask = SparsityMask.from_header(header)
        if mask.keep_count != header["keep_count"]:
            raise ModelError("regenerated mask does not match its header")
        if int(np.count_nonzero(w)) > mask.keep_count:
            raise ModelError("checkpoint has nonzeros outside its mask")
        masks.append(mask)
    return MlpModel(arch=arch, weights=weights, biases=biases, masks=masks, seed=sidecar["seed"])
