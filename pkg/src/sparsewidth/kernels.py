"""Gaussian Process kernels of finite-width sparse ReLU networks.

A two-layer ReLU network f(x) = (n*d)^(-1/2) v.T relu(u x) whose readout
gradients define the kernel T(x, y) = grad_v f(x) . grad_v f(y). When the
first-layer weights are drawn from the sparse density
p * Normal(0, 1/p) + (1-p) * delta_0, the kernel's mean and variance over
weight draws have closed forms built from arc-cosine kernels evaluated on
coordinate-masked inputs. This module computes:

  * the closed-form arc-cosine kernels K_1, K_2,
  * their sparsity-averaged versions (exact enumeration over coordinate
    masks for small d, Bernoulli-mask Monte Carlo otherwise),
  * the exact expected squared distance between the finite sparse kernel
    and the infinite-width dense kernel, split into bias^2 and variance,
  * a closed-form approximation of that distance for high-dimensional
    random inputs (valid when p*d >> 1), and the connectivity p* that
    minimizes it at a fixed width*connectivity product,
  * empirical kernel distances measured on actual weight draws against a
    wide dense surrogate of the infinite-width kernel.

Everything runs in 64-bit floats; Monte Carlo estimators accumulate with
the streaming combiner from sparsewidth.stats and are pure given a seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .masks import sample_mask
from .stats import RunningMoments

EXACT_ENUM = "exact_enum"
MC_MASKS = "mc_masks"
MC_WEIGHTS = "mc_weights"
CLOSED_FORM = "closed_form"

ENUM_DIM_LIMIT = 20


class KernelError(ValueError):
    pass


class ZeroVector(KernelError):
    pass


class DimensionMismatch(KernelError):
    pass


class DimensionTooLargeForEnum(KernelError):
    pass


class InsufficientData(KernelError):
    pass


@dataclass(frozen=True)
class KernelEstimate:
    """A scalar kernel statistic with its sampling uncertainty."""

    value: float
    stderr: float
    samples: int
    estimator: str

    def __post_init__(self):
        if self.stderr < 0:
            raise KernelError("stderr must be non-negative")
        if self.estimator in (CLOSED_FORM, EXACT_ENUM) and self.stderr != 0:
            raise KernelError("deterministic estimators carry zero stderr")


@dataclass(frozen=True)
class KernelConfig:
    """Width/connectivity configuration; weight variance is pinned to 1/p."""

    d: int
    n: int
    p: float

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise KernelError("connectivity p must be in (0, 1]")
        if self.d < 1 or self.n < 1:
            raise KernelError("d and n must be positive")

    @property
    def sigma2(self) -> float:
        return 1.0 / self.p


def _angle_factor(order: int, theta):
    """J_l(theta): the angular part of the arc-cosine kernel."""
    if order == 1:
        return np.sin(theta) + (np.pi - theta) * np.cos(theta)
    if order == 2:
        c = np.cos(theta)
        return 3.0 * np.sin(theta) * c + (np.pi - theta) * (1.0 + 2.0 * c * c)
    raise KernelError(f"order must be 1 or 2, got {order}")


def arccos_kernel(order: int, x, y) -> float:
    """Closed form of E_w[(w.x)^l (w.y)^l H(w.x) H(w.y)], w ~ N(0, I).

    Equals |x|^l |y|^l J_l(theta) / (2 pi) with theta the angle between
    x and y, J_1(t) = sin t + (pi - t) cos t and
    J_2(t) = 3 sin t cos t + (pi - t)(1 + 2 cos^2 t).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatch(f"inputs must be equal-length vectors, got {x.shape} and {y.shape}")
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise ZeroVector("arc-cosine kernel is undefined at the zero vector")
    # clamp to dodge NaN from roundoff on (anti)parallel inputs
    cos = float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))
    theta = float(np.arccos(cos))
    return (nx * ny) ** order * float(_angle_factor(order, theta)) / (2.0 * np.pi)


def _masked_kernel_values(order: int, x, y, keep) -> np.ndarray:
    """Arc-cosine kernel of (keep*x, keep*y) for a batch of 0/1 masks.

    keep has shape (num_masks, d). Masks that zero out x or y entirely
    contribute 0, matching the vanishing Gaussian integrand there.
    """
    keep = np.asarray(keep, dtype=np.float64)
    sxx = keep @ (x * x)
    syy = keep @ (y * y)
    sxy = keep @ (x * y)
    norm2 = sxx * syy
    valid = norm2 > 0.0
    norm = np.sqrt(np.where(valid, norm2, 1.0))
    cos = np.clip(sxy / norm, -1.0, 1.0)
    theta = np.arccos(cos)
    vals = norm**order * _angle_factor(order, theta) / (2.0 * np.pi)
    return np.where(valid, vals, 0.0)


def _enum_masks(d: int, start: int, stop: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(d)) & 1).astype(np.float64)


def sparse_arccos_kernel(
    order: int,
    p: float,
    x,
    y,
    method: str = EXACT_ENUM,
    samples: int = 100_000,
    seed: int = 0,
    chunk: int = 16_384,
) -> KernelEstimate:
    """Arc-cosine kernel averaged over independent coordinate dropout.

    Every input coordinate survives with probability p; surviving weights
    carry variance 1/p, which multiplies the kernel of the masked inputs
    by (1/p)^order. method 'exact_enum' sums all 2^d coordinate masks with
    their Bernoulli probabilities (d <= 20); 'mc_masks' averages over
    sampled masks and reports the standard error.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatch(f"inputs must be equal-length vectors, got {x.shape} and {y.shape}")
    if not 0 < p <= 1:
        raise KernelError("connectivity p must be in (0, 1]")
    d = x.size
    scale = (1.0 / p) ** order

    if method == EXACT_ENUM:
        if d > ENUM_DIM_LIMIT:
            raise DimensionTooLargeForEnum(
                f"enumeration over 2^{d} masks refused (limit d={ENUM_DIM_LIMIT})"
            )
        total = 0.0
        n_masks = 1 << d
        for start in range(0, n_masks, chunk):
            keep = _enum_masks(d, start, min(start + chunk, n_masks))
            k = keep.sum(axis=1)
            weights = p**k * (1.0 - p) ** (d - k)
            total += float(weights @ _masked_kernel_values(order, x, y, keep))
        return KernelEstimate(scale * total, 0.0, n_masks, EXACT_ENUM)

    if method == MC_MASKS:
        rng = np.random.Generator(np.random.PCG64(seed))
        acc = RunningMoments()
        remaining = int(samples)
        while remaining > 0:
            m = min(chunk, remaining)
            keep = rng.random((m, d)) < p
            acc.push_many(scale * _masked_kernel_values(order, x, y, keep))
            remaining -= m
        return KernelEstimate(acc.mean, acc.stderr, acc.count, MC_MASKS)

    raise KernelError(f"unknown method {method!r}")


@dataclass(frozen=True)
class KernelDistanceResult:
    """Expected squared kernel distance, split into its two parts.

    distance = (gp_mean - limit_value)^2 + gp_variance, where gp_mean and
    gp_variance are the mean and variance of the finite sparse kernel over
    weight draws and limit_value is the infinite-width dense kernel.
    """

    distance: float
    stderr: float
    gp_mean: float
    gp_variance: float
    limit_value: float
    k1_sparse: KernelEstimate
    k2_sparse: KernelEstimate


def expected_kernel_distance(
    p: float,
    n: int,
    x,
    y,
    method: str = EXACT_ENUM,
    samples: int = 100_000,
    seed: int = 0,
) -> KernelDistanceResult:
    """Mean squared distance between the width-n sparse kernel and the limit.

    Built from the sparsity-averaged arc-cosine kernels k1t, k2t and the
    dense closed form K1 of the same input pair:

        mean       = k1t / d
        variance   = (k2t - k1t^2) / (d^2 n)
        distance   = (k1t - K1)^2 / d^2 + variance

    With Monte Carlo mask averaging the two moments are estimated from
    independent mask streams and the standard error is propagated to the
    distance by linearization.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    k1 = arccos_kernel(1, x, y)
    k1t = sparse_arccos_kernel(1, p, x, y, method=method, samples=samples, seed=seed)
    k2t = sparse_arccos_kernel(2, p, x, y, method=method, samples=samples, seed=seed + 1)
    gp_mean = k1t.value / d
    gp_variance = (k2t.value - k1t.value**2) / (d * d * n)
    distance = (k1t.value - k1) ** 2 / (d * d) + gp_variance
    d_dk1t = 2.0 * (k1t.value - k1) / (d * d) - 2.0 * k1t.value / (d * d * n)
    d_dk2t = 1.0 / (d * d * n)
    stderr = float(np.hypot(d_dk1t * k1t.stderr, d_dk2t * k2t.stderr))
    return KernelDistanceResult(
        distance=distance,
        stderr=stderr,
        gp_mean=gp_mean,
        gp_variance=gp_variance,
        limit_value=k1 / d,
        k1_sparse=k1t,
        k2_sparse=k2t,
    )


def approx_kernel_distance(p: float, n: int, d: int) -> float:
    """Closed-form distance approximation for high-dimensional random inputs.

    (1/4d) * [ (1/sqrt(p) - 1)^2 / 4 + (d/n) (1 - 1/pi^2) ]; derived under
    p*d >> 1, so treat small p*d values as indicative only.
    """
    if not 0 < p <= 1:
        raise KernelError("connectivity p must be in (0, 1]")
    if n < 1 or d < 1:
        raise KernelError("n and d must be positive")
    bias_term = 0.25 * (1.0 / np.sqrt(p) - 1.0) ** 2
    var_term = (d / n) * (1.0 - 1.0 / np.pi**2)
    return float((bias_term + var_term) / (4.0 * d))


def diagonal_distance_estimate(p: float, n: int, d: int) -> float:
    """Rough x == y distance estimate, (5/4 + 3/(d p)) / n. Reporting only."""
    return float((1.25 + 3.0 / (d * p)) / n)


def optimal_connectivity(np_product: float, d: int) -> tuple[float, float]:
    """Connectivity minimizing the approximate distance at fixed n*p.

    np_product is the width*connectivity product, i.e. the number of kept
    first-layer weights per input coordinate. Returns (p_star, n_star)
    with p_star = sqrt(np_product / (4 d)) and n_star the implied width.
    """
    if np_product <= 0 or d < 1:
        raise KernelError("np_product must be positive and d >= 1")
    p_star = float(np.sqrt(np_product / (4.0 * d)))
    if p_star > 1.0:
        warnings.warn(
            f"p* = {p_star:.3f} exceeds 1; the minimizing formula assumes "
            "sqrt(p) << 1 and is outside its regime here",
            stacklevel=2,
        )
    return p_star, np_product / p_star


def gp_kernel_pairs(u: np.ndarray, X: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Readout-gradient kernel values for many input pairs at once.

    u is the (n, d) first-layer matrix, X the (m, d) inputs, pairs an
    (num_pairs, 2) index array into X. Returns
    sum_i relu(u x)_i relu(u y)_i / (n d) per pair.
    """
    u = np.asarray(u, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, d = u.shape
    if X.shape[1] != d:
        raise DimensionMismatch(f"inputs have dim {X.shape[1]}, weights expect {d}")
    feats = np.maximum(X @ u.T, 0.0)
    a, b = pairs[:, 0], pairs[:, 1]
    return np.einsum("ij,ij->i", feats[a], feats[b]) / (n * d)


def empirical_gp_kernel(model, x, y) -> float:
    """Readout-gradient kernel of a bias-free two-layer model in ntk form."""
    arch = model.arch
    if arch.parameterization != "ntk" or arch.use_biases or len(arch.hidden_widths) != 1:
        raise KernelError("gp kernel needs a bias-free single-hidden-layer ntk model")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (arch.input_dim,) or y.shape != (arch.input_dim,):
        raise DimensionMismatch("inputs must be vectors of the model input dim")
    u = model.weights[0].T  # stored (d, n)
    X = np.stack([x, y])
    return float(gp_kernel_pairs(u, X, np.array([[0, 1]]))[0])


def gp_moments_over_weight_draws(
    x,
    y,
    n: int,
    p: float,
    draws: int = 100_000,
    seed: int = 0,
    chunk: int = 4096,
) -> dict:
    """Empirical mean/variance of the sparse GP kernel over weight draws.

    Each draw samples a fresh (n, d) first-layer matrix from the sparse
    density p*N(0, 1/p) + (1-p)*delta_0 (independent Bernoulli mask per
    entry) and evaluates the kernel on the pair (x, y). Returns mean and
    variance as KernelEstimates, plus the standard error of the variance
    from the fourth central moment.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionMismatch("x and y must be equal-length vectors")
    d = x.size
    rng = np.random.Generator(np.random.PCG64(seed))
    sigma = 1.0 / np.sqrt(p)
    values = np.empty(draws, dtype=np.float64)
    filled = 0
    while filled < draws:
        m = min(chunk, draws - filled)
        u = rng.standard_normal((m, n, d)) * sigma
        u *= rng.random((m, n, d)) < p
        zx = np.maximum(u @ x, 0.0)
        zy = np.maximum(u @ y, 0.0)
        values[filled : filled + m] = np.einsum("ij,ij->i", zx, zy) / (n * d)
        filled += m
    mean = float(values.mean())
    if draws < 2:
        return {
            "mean": KernelEstimate(mean, 0.0, draws, MC_WEIGHTS),
            "variance": KernelEstimate(0.0, 0.0, draws, MC_WEIGHTS),
        }
    var = float(values.var(ddof=1))
    centered = values - mean
    m2 = float((centered**2).mean())
    m4 = float((centered**4).mean())
    var_of_var = max(m4 - m2 * m2, 0.0) / draws
    return {
        "mean": KernelEstimate(mean, float(np.sqrt(var / draws)), draws, MC_WEIGHTS),
        "variance": KernelEstimate(var, float(np.sqrt(var_of_var)), draws, MC_WEIGHTS),
    }


def draw_input_pairs(num_inputs: int, num_pairs: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct unordered index pairs, uniform without replacement."""
    max_pairs = num_inputs * (num_inputs - 1) // 2
    if num_pairs > max_pairs:
        raise InsufficientData(f"asked for {num_pairs} pairs, only {max_pairs} exist")
    seen = set()
    out = np.empty((num_pairs, 2), dtype=np.int64)
    filled = 0
    while filled < num_pairs:
        cand = rng.integers(0, num_inputs, size=(2 * (num_pairs - filled) + 8, 2))
        for i, j in cand:
            if i == j:
                continue
            key = (min(i, j), max(i, j))
            if key in seen:
                continue
            seen.add(key)
            out[filled] = key
            filled += 1
            if filled == num_pairs:
                break
    return out


def surrogate_limit_kernel(
    X: np.ndarray,
    pairs: np.ndarray,
    surrogate_width: int = 10_000,
    seed: int = 0,
    block: int = 1000,
) -> np.ndarray:
    """Infinite-width kernel stand-in: a very wide dense draw at init.

    Evaluates the readout-gradient kernel of one dense N(0,1) network of
    the given width on each input pair, accumulating over hidden-unit
    blocks to bound memory.
    """
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    rng = np.random.Generator(np.random.PCG64(seed))
    a, b = pairs[:, 0], pairs[:, 1]
    acc = np.zeros(len(pairs), dtype=np.float64)
    remaining = surrogate_width
    while remaining > 0:
        m = min(block, remaining)
        feats = np.maximum(X @ rng.standard_normal((d, m)), 0.0)
        acc += np.einsum("ij,ij->i", feats[a], feats[b])
        remaining -= m
    return acc / (surrogate_width * d)


def empirical_distance(
    inputs: np.ndarray,
    width: int,
    p: float,
    num_pairs: int = 10_000,
    num_inits: int = 10,
    seed: int = 0,
    keep_count: int | None = None,
    surrogate_width: int = 10_000,
    surrogate_seed: int = 0,
) -> KernelEstimate:
    """Mean squared gap between sparse finite kernels and the wide surrogate.

    Draws input pairs without replacement from `inputs`, fixes one dense
    width-`surrogate_width` draw as the infinite-width stand-in, then for
    each of `num_inits` independent sparse first-layer draws (exact
    keep_count positions, kept weights ~ N(0, 1/p)) averages
    (T_sparse(x, y) - T_limit(x, y))^2 over the pairs. The standard error
    is taken across the per-init means.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] < 2:
        raise InsufficientData("need a 2-d array with at least two input rows")
    n_inputs, d = inputs.shape
    if num_inits < 1:
        raise InsufficientData("need at least one initialization")
    if keep_count is None:
        keep_count = round(p * width * d)
    p_actual = keep_count / (width * d)
    if not 0 < p_actual <= 1:
        raise KernelError("keep_count must leave connectivity in (0, 1]")

    root = np.random.SeedSequence([int(seed), 0x6B65726E])
    pair_seq, init_seq = root.spawn(2)
    pair_rng = np.random.Generator(np.random.PCG64(pair_seq))
    pairs = draw_input_pairs(n_inputs, num_pairs, pair_rng)

    used, local = np.unique(pairs, return_inverse=True)
    X = inputs[used]
    local_pairs = local.reshape(pairs.shape)
    limit_vals = surrogate_limit_kernel(X, local_pairs, surrogate_width, surrogate_seed)

    sigma = 1.0 / np.sqrt(p_actual)
    init_means = np.empty(num_inits, dtype=np.float64)
    for k, child in enumerate(init_seq.spawn(num_inits)):
        mask_seed, weight_seed = (int(s) for s in child.generate_state(2))
        mask = sample_mask((width, d), keep_count, seed=mask_seed)
        rng = np.random.Generator(np.random.PCG64(weight_seed))
        u = rng.standard_normal((width, d)) * sigma
        u = np.where(mask.keep, u, 0.0)
        vals = gp_kernel_pairs(u, X, local_pairs)
        init_means[k] = float(((vals - limit_vals) ** 2).mean())

    value = float(init_means.mean())
    if num_inits > 1:
        stderr = float(init_means.std(ddof=1) / np.sqrt(num_inits))
    else:
        stderr = 0.0
    return KernelEstimate(value, stderr, num_pairs * num_inits, MC_WEIGHTS)
