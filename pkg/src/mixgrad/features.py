"""Truncated SS-ANOVA tensor-product random Fourier features.

Each coordinate ``j`` gets ``s`` cosine features
``sqrt(2/s) * cos(omega[j, v] * t_j + phase[j, v])``.  An ANOVA block ``S``
(a subset of coordinates, ``1 <= |S| <= r``) is the flattened outer product
of its coordinates' feature vectors, row-major with the smallest coordinate
varying slowest.  Blocks are laid out by size, then lexicographically.

Coordinates are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import KernelSpec, NonDifferentiableKernelError, anova_sum, sample_frequencies

__all__ = [
    "DEFAULT_CAP",
    "CapacityError",
    "Block",
    "FeatureMap",
    "AugmentedFeatures",
    "build_feature_map",
    "feature_dimension",
    "features",
    "features_partial",
    "features_grad",
    "features_hess",
    "augmented_features",
    "augmented_rows",
    "augmented_gram",
    "row_gram",
]

DEFAULT_CAP = 2_000_000


class CapacityError(ValueError):
    """Requested feature dimension exceeds the configured cap."""


@dataclass(frozen=True)
class Block:
    subset: tuple
    offset: int
    length: int


def _layout(d: int, r: int, s: int) -> tuple:
    blocks = []
    offset = 0
    for size in range(1, r + 1):
        for subset in itertools.combinations(range(d), size):
            length = s**size
            blocks.append(Block(subset, offset, length))
            offset += length
    return tuple(blocks)


def feature_dimension(d: int, r: int, s: int) -> int:
    """M = sum_{k=1}^{r} C(d, k) s^k."""
    return sum(math.comb(d, k) * s**k for k in range(1, r + 1))


@dataclass(frozen=True)
class FeatureMap:
    d: int
    r: int
    s: int
    p_max: int
    kernels: tuple
    seed: int
    omegas: np.ndarray = field(repr=False)
    phases: np.ndarray = field(repr=False)
    layout: tuple = field(repr=False)

    @property
    def M(self) -> int:
        return self.layout[-1].offset + self.layout[-1].length

    def config_record(self) -> dict:
        return {
            "d": self.d,
            "r": self.r,
            "s": self.s,
            "p_max": self.p_max,
            "seed": self.seed,
            "kernels": [k.to_record() for k in self.kernels],
        }

    def coordinate_features(self, x, j: int, order: int = 0) -> np.ndarray:
        """``order``-th derivative of coordinate ``j``'s features, shape (n, s)."""
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        w = self.omegas[j]
        return math.sqrt(2.0 / self.s) * w**order * np.cos(x * w + self.phases[j] + order * (math.pi / 2))


def _as_kernels(kernels, d: int) -> tuple:
    if isinstance(kernels, KernelSpec):
        return (kernels,) * d
    kernels = tuple(kernels)
    if len(kernels) != d:
        raise ValueError(f"expected {d} coordinate kernels, got {len(kernels)}")
    return kernels


def build_feature_map(
    d: int,
    r: int,
    s: int,
    kernels,
    p_max: int = 0,
    seed: int = 0,
    cap: Optional[int] = DEFAULT_CAP,
) -> FeatureMap:
    """Sample per-coordinate frequencies and phases and fix the block layout.

    Coordinate ``j`` draws from the ``j``-th child of
    ``numpy.random.SeedSequence(seed)``, so the draw does not depend on
    ``p_max`` and two maps that differ only in ``p_max`` share frequencies.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 1 <= r <= d:
        raise ValueError(f"interaction order r={r} outside [1, {d}]")
    if s < 1:
        raise ValueError("s must be >= 1")
    if not 0 <= p_max <= d:
        raise ValueError(f"p_max={p_max} outside [0, {d}]")
    kernels = _as_kernels(kernels, d)
    if p_max >= 1:
        for j, k in enumerate(kernels):
            if not k.family.differentiable:
                raise NonDifferentiableKernelError(
                    f"coordinate {j}: {k.family.value} kernel cannot serve gradient features"
                )
    largest = s**r * math.comb(d, r)
    if cap is not None and largest > cap:
        raise CapacityError(f"largest ANOVA block set has s^r*C(d,r) = {largest} > cap {cap}")

    children = np.random.SeedSequence(int(seed)).spawn(d)
    omegas = np.empty((d, s))
    phases = np.empty((d, s))
    for j in range(d):
        omegas[j], phases[j] = sample_frequencies(kernels[j], s, children[j])
    omegas.setflags(write=False)
    phases.setflags(write=False)
    return FeatureMap(d, r, s, p_max, kernels, int(seed), omegas, phases, _layout(d, r, s))


def _points(fmap: FeatureMap, t) -> tuple:
    t = np.asarray(t, dtype=float)
    single = t.ndim == 1
    t = np.atleast_2d(t)
    if t.shape[1] != fmap.d:
        raise ValueError(f"points must have {fmap.d} coordinates, got {t.shape[1]}")
    return t, single


def features_partial(fmap: FeatureMap, t, orders) -> np.ndarray:
    """Partial derivative of the feature vector; ``orders[j]`` is the
    derivative order in coordinate ``j``.  Shape (n, M), or (M,) for one point."""
    t, single = _points(fmap, t)
    orders = np.asarray(orders, dtype=int)
    n = t.shape[0]
    out = np.zeros((n, fmap.M))
    needed = set(np.flatnonzero(orders))
    cache = {}
    for block in fmap.layout:
        if not needed.issubset(block.subset):
            continue
        acc = None
        for j in block.subset:
            key = (j, orders[j])
            if key not in cache:
                cache[key] = fmap.coordinate_features(t[:, j], j, orders[j])
            f = cache[key]
            acc = f if acc is None else (acc[:, :, None] * f[:, None, :]).reshape(n, -1)
        out[:, block.offset : block.offset + block.length] = acc
    return out[0] if single else out


def _unit(d: int, *idx) -> np.ndarray:
    o = np.zeros(d, dtype=int)
    for j in idx:
        if j is not None:
            o[j] += 1
    return o


def features(fmap: FeatureMap, t) -> np.ndarray:
    return features_partial(fmap, t, _unit(fmap.d))


def features_grad(fmap: FeatureMap, t, j: int) -> np.ndarray:
    return features_partial(fmap, t, _unit(fmap.d, j))


def features_hess(fmap: FeatureMap, t, j: int, j2: int) -> np.ndarray:
    return features_partial(fmap, t, _unit(fmap.d, j, j2))


@dataclass(frozen=True)
class AugmentedFeatures:
    value_block: np.ndarray
    grad_blocks: tuple

    def concat(self) -> np.ndarray:
        return np.concatenate((self.value_block, *self.grad_blocks), axis=-1)


def augmented_features(fmap: FeatureMap, t, p: int) -> AugmentedFeatures:
    """Value features followed by their partials in coordinates 0..p-1."""
    if p > fmap.p_max:
        raise ValueError(f"p={p} exceeds the map's p_max={fmap.p_max}")
    return AugmentedFeatures(
        features(fmap, t), tuple(features_grad(fmap, t, j) for j in range(p))
    )


def augmented_rows(fmap: FeatureMap, t, p: int, deriv: Optional[int] = None) -> np.ndarray:
    """Design rows of the augmented model for the functional "value"
    (``deriv=None``) or "partial in coordinate ``deriv``" at points ``t``.

    The augmented model is ``f = Psi.c_0 + sum_g dPsi/dt_g . c_{g+1}``, so the
    row for ``df/dt_k`` holds ``d/dt_k`` of every augmented block.
    """
    if p > fmap.p_max:
        raise ValueError(f"p={p} exceeds the map's p_max={fmap.p_max}")
    d = fmap.d
    parts = [features_partial(fmap, t, _unit(d, deriv, g)) for g in [None, *range(p)]]
    return np.concatenate(parts, axis=-1)


def augmented_gram(factor, d: int, r: int, p: int, deriv_a: Optional[int], deriv_b: Optional[int]):
    """Inner products between two families of augmented-model functionals.

    ``factor(j, a, b)`` must return the coordinate-``j`` cross matrix between
    ``a``-th derivatives on side A and ``b``-th derivatives on side B. The
    result sums, over augmented blocks ``g``, the ANOVA sum of those factors.
    Used both with random features (exact inner products of ``augmented_rows``)
    and with analytic kernel derivatives (the exact kernel oracle).
    """
    base = [factor(j, 0, 0) for j in range(d)]
    total = 0.0
    for g in [None, *range(p)]:
        oa = _unit(d, deriv_a, g)
        ob = _unit(d, deriv_b, g)
        active = {j: factor(j, int(oa[j]), int(ob[j])) for j in range(d) if oa[j] or ob[j]}
        total = total + anova_sum(base, active, r)
    return total


def row_gram(fmap: FeatureMap, ta, deriv_a, tb, deriv_b, p: int) -> np.ndarray:
    """``augmented_rows(ta, deriv_a) @ augmented_rows(tb, deriv_b).T`` computed
    from per-coordinate factors, without forming the (n, (p+1)M) rows."""
    ta, _ = _points(fmap, ta)
    tb, _ = _points(fmap, tb)
    cache = {}

    def factor(j, a, b):
        key = (j, a, b)
        if key not in cache:
            fa = fmap.coordinate_features(ta[:, j], j, a)
            fb = fmap.coordinate_features(tb[:, j], j, b)
            cache[key] = fa @ fb.T
        return cache[key]

    return np.asarray(augmented_gram(factor, fmap.d, fmap.r, p, deriv_a, deriv_b), dtype=float)
