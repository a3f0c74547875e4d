"""Mixed-gradient ridge estimator over augmented random features.

The fitted function is

    f(t) = ybar_0 + sum_{j<p} ybar_j (u_j - ubar_j) + Psi_aug(u) . c

on rescaled inputs ``u = (t - lo) / width``.  Gradient responses are centered
by their means, and the linear term restores what that centering removes, so
the value and gradient parts of the model stay consistent with each other.
The coefficients minimize

    sum_g (w_g / n_g) sum_i (ytilde_gi - L_gi f)^2 + lam ||c||^2

with ``w_0 = 1``, which is ``(Z'WZ + N lam I) c = Z'W y`` for loss weights
``W_i = N w_g / n_g``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from hilbertcurve.hilbertcurve import HilbertCurve

from .features import (
    DEFAULT_CAP,
    FeatureMap,
    augmented_rows,
    build_feature_map,
    row_gram,
)
from .kernels import KernelSpec
from .ridge import RankError, WeightedRidge, default_lambda_grid

__all__ = [
    "MixedDataset",
    "FitConfig",
    "FittedModel",
    "RankError",
    "assemble_design",
    "loss_weights",
    "fit",
    "predict",
    "predict_grad",
    "gcv_select",
    "default_weights",
    "ridge_objective",
]

MATERIALIZE_LIMIT = 25_000_000
BOX_TOL = 1e-9


@dataclass(frozen=True)
class MixedDataset:
    """Function observations plus ``p`` groups of partial-derivative
    observations; group ``j`` observes ``df/dt_j`` (0-based)."""

    func_t: np.ndarray
    func_y: np.ndarray
    grad_t: tuple = ()
    grad_y: tuple = ()
    box: Optional[np.ndarray] = None
    noise_var: Optional[tuple] = None  # per-channel response variance, if known

    def __post_init__(self):
        ft = np.atleast_2d(np.asarray(self.func_t, dtype=float))
        fy = np.asarray(self.func_y, dtype=float).ravel()
        if ft.shape[0] != fy.shape[0]:
            raise ValueError("func_t and func_y lengths differ")
        if ft.shape[0] == 0:
            raise ValueError("need at least one function observation")
        d = ft.shape[1]
        gt = tuple(np.atleast_2d(np.asarray(g, dtype=float)) for g in self.grad_t)
        gy = tuple(np.asarray(g, dtype=float).ravel() for g in self.grad_y)
        if len(gt) != len(gy):
            raise ValueError("grad_t and grad_y must have the same number of groups")
        if len(gt) > d:
            raise ValueError(f"p={len(gt)} gradient groups exceeds d={d}")
        for j, (a, b) in enumerate(zip(gt, gy)):
            if a.shape[0] == 0:
                raise ValueError(f"gradient group {j} is empty")
            if a.shape != (b.shape[0], d):
                raise ValueError(f"gradient group {j} has inconsistent shape")
        box = np.array([[0.0, 1.0]] * d) if self.box is None else np.asarray(self.box, dtype=float)
        if box.shape != (d, 2) or np.any(box[:, 1] <= box[:, 0]):
            raise ValueError("box must be a (d, 2) array of increasing intervals")
        for pts in (ft, *gt):
            if np.any(pts < box[:, 0] - BOX_TOL) or np.any(pts > box[:, 1] + BOX_TOL):
                raise ValueError("design points fall outside the domain box")
        for name, val in (("func_t", ft), ("func_y", fy), ("grad_t", gt), ("grad_y", gy), ("box", box)):
            object.__setattr__(self, name, val)
        if self.noise_var is not None:
            object.__setattr__(self, "noise_var", tuple(float(v) for v in self.noise_var))

    @property
    def d(self) -> int:
        return self.func_t.shape[1]

    @property
    def p(self) -> int:
        return len(self.grad_t)

    @property
    def n_rows(self) -> int:
        return self.func_t.shape[0] + sum(g.shape[0] for g in self.grad_t)

    def truncate(self, p: int) -> "MixedDataset":
        """Keep only the first ``p`` gradient groups."""
        if not 0 <= p <= self.p:
            raise ValueError(f"cannot truncate to p={p} from p={self.p}")
        nv = None if self.noise_var is None else self.noise_var[: p + 1]
        return replace(self, grad_t=self.grad_t[:p], grad_y=self.grad_y[:p], noise_var=nv)

    def function_only(self) -> "MixedDataset":
        return self.truncate(0)

    def subset_function(self, idx) -> "MixedDataset":
        """p = 0 dataset with the function rows ``idx``."""
        return MixedDataset(self.func_t[idx], self.func_y[idx], box=self.box)


@dataclass(frozen=True)
class FitConfig:
    r: int
    s: int
    kernel: Union[KernelSpec, tuple]
    seed: int = 0
    weights: Optional[tuple] = None  # None: default_weights when p > 0
    lam: Union[float, str] = "gcv"
    lambda_grid: tuple = tuple(default_lambda_grid())
    cap: Optional[int] = DEFAULT_CAP

    def __post_init__(self):
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if any(x < 0 for x in w):
                raise ValueError("weights must be nonnegative")
            object.__setattr__(self, "weights", w)
        if self.lam != "gcv":
            lam = float(self.lam)
            if lam < 0:
                raise ValueError("lambda must be nonnegative")
            object.__setattr__(self, "lam", lam)
        grid = tuple(float(x) for x in self.lambda_grid)
        if not grid or any(x <= 0 for x in grid) or list(grid) != sorted(grid):
            raise ValueError("lambda_grid must be non-empty, positive and ascending")
        object.__setattr__(self, "lambda_grid", grid)

    def feature_map(self, d: int, p_max: int) -> FeatureMap:
        return build_feature_map(d, self.r, self.s, self.kernel, p_max=p_max, seed=self.seed, cap=self.cap)


# ---------------------------------------------------------------------------
# preprocessing shared with the exact oracle
# ---------------------------------------------------------------------------


@dataclass
class Prepared:
    """Rescaled, centered responses grouped by observation functional."""

    lo: np.ndarray
    width: np.ndarray
    groups: list  # [(deriv or None, U, y_centered)]
    means: np.ndarray
    center: np.ndarray
    group_weights: np.ndarray  # w_g, with 1 for the function group

    @property
    def N(self) -> int:
        return sum(u.shape[0] for _, u, _ in self.groups)

    @property
    def p(self) -> int:
        return len(self.groups) - 1

    def stacked_y(self) -> np.ndarray:
        return np.concatenate([y for _, _, y in self.groups])

    def row_weights(self) -> np.ndarray:
        return np.concatenate(
            [np.full(u.shape[0], w) for (_, u, _), w in zip(self.groups, self.group_weights)]
        )

    def loss_weights(self) -> np.ndarray:
        N = self.N
        return np.concatenate(
            [np.full(u.shape[0], w * N / u.shape[0]) for (_, u, _), w in zip(self.groups, self.group_weights)]
        )

    def rescale(self, t) -> np.ndarray:
        return (np.asarray(t, dtype=float) - self.lo) / self.width


def prepare(dataset: MixedDataset, weights) -> Prepared:
    p = dataset.p
    lo = dataset.box[:, 0].copy()
    width = dataset.box[:, 1] - dataset.box[:, 0]
    u0 = (dataset.func_t - lo) / width
    ug = [(g - lo) / width for g in dataset.grad_t]
    yg = [y * width[j] for j, y in enumerate(dataset.grad_y)]
    means = np.array([dataset.func_y.mean(), *(y.mean() for y in yg)])
    center = u0.mean(axis=0)
    y0 = dataset.func_y - means[0]
    for j in range(p):
        y0 = y0 - means[j + 1] * (u0[:, j] - center[j])
    groups = [(None, u0, y0)] + [(j, ug[j], yg[j] - means[j + 1]) for j in range(p)]
    if p and weights is None:
        weights = default_weights(dataset)
    w = np.array([1.0, *(weights if p else ())], dtype=float)
    if w.size != p + 1:
        raise ValueError(f"expected {p} gradient weights, got {w.size - 1}")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return Prepared(lo, width, groups, means, center, w)


def assemble_design(dataset: MixedDataset, fmap: FeatureMap, p: Optional[int] = None, weights=None):
    """Return ``(Z, y_centered, row_weights)`` for the stacked rows: function
    rows first, then gradient group 0, 1, ...  ``row_weights`` are 1 for
    function rows and ``w_j`` for group ``j``."""
    if p is not None and p != dataset.p:
        dataset = dataset.truncate(p)
    if fmap.d != dataset.d:
        raise ValueError(f"feature map has d={fmap.d}, dataset has d={dataset.d}")
    prep = prepare(dataset, weights)
    Z = _explicit_rows(fmap, prep)
    return Z, prep.stacked_y(), prep.row_weights()


def loss_weights(dataset: MixedDataset, weights=None) -> np.ndarray:
    """Per-row weights ``W`` of the normal equations ``(Z'WZ + N lam I)``."""
    return prepare(dataset, weights).loss_weights()


def _explicit_rows(fmap: FeatureMap, prep: Prepared) -> np.ndarray:
    return np.vstack([augmented_rows(fmap, u, prep.p, deriv) for deriv, u, _ in prep.groups])


def _structured_gram(fmap: FeatureMap, prep: Prepared) -> np.ndarray:
    groups = prep.groups
    blocks = [[None] * len(groups) for _ in groups]
    for a, (da, ua, _) in enumerate(groups):
        for b in range(a, len(groups)):
            db, ub, _ = groups[b]
            blocks[a][b] = row_gram(fmap, ua, da, ub, db, prep.p)
            blocks[b][a] = blocks[a][b].T
    return np.block(blocks)


# ---------------------------------------------------------------------------
# fitted model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedModel:
    feature_map: FeatureMap
    p: int
    coef: Optional[np.ndarray]
    y_means: np.ndarray
    center: np.ndarray
    lo: np.ndarray
    width: np.ndarray
    lam: float
    weights: tuple
    gcv_curve: Optional[np.ndarray] = field(default=None, repr=False)
    dual: Optional[tuple] = field(default=None, repr=False)  # (beta, [(deriv, U)])

    @property
    def M(self) -> int:
        return self.feature_map.M

    @property
    def coef_blocks(self) -> list:
        if self.coef is None:
            raise ValueError("model was fitted in dual form without materialized coefficients")
        return np.split(self.coef, self.p + 1)

    def _linear(self, u, deriv):
        if self.coef is not None:
            return augmented_rows(self.feature_map, u, self.p, deriv) @ self.coef
        beta, rows = self.dual
        out = 0.0
        offset = 0
        for d_i, u_i in rows:
            n_i = u_i.shape[0]
            out = out + row_gram(self.feature_map, u, deriv, u_i, d_i, self.p) @ beta[offset : offset + n_i]
            offset += n_i
        return out

    def predict(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        single = t.ndim == 1
        u = (np.atleast_2d(t) - self.lo) / self.width
        val = self.y_means[0] + self._linear(u, None)
        for j in range(self.p):
            val = val + self.y_means[j + 1] * (u[:, j] - self.center[j])
        return float(val[0]) if single else val

    def predict_grad(self, t, j: int) -> np.ndarray:
        if not 0 <= j < self.feature_map.d:
            raise ValueError(f"coordinate {j} outside [0, {self.feature_map.d})")
        t = np.asarray(t, dtype=float)
        single = t.ndim == 1
        u = (np.atleast_2d(t) - self.lo) / self.width
        g = self._linear(u, j)
        if j < self.p:
            g = g + self.y_means[j + 1]
        g = g / self.width[j]
        return float(g[0]) if single else g

    def __call__(self, t):
        return self.predict(t)


def predict(model, t):
    return model.predict(t)


def predict_grad(model, t, j: int):
    return model.predict_grad(t, j)


def _ridge_problem(dataset: MixedDataset, config: FitConfig, fmap: Optional[FeatureMap]):
    p = dataset.p
    fmap = fmap if fmap is not None else config.feature_map(dataset.d, p)
    if fmap.d != dataset.d:
        raise ValueError(f"feature map has d={fmap.d}, dataset has d={dataset.d}")
    if fmap.p_max < p:
        raise ValueError(f"feature map serves p <= {fmap.p_max}, dataset has p={p}")
    prep = prepare(dataset, config.weights)
    sw = np.sqrt(prep.loss_weights())
    ytil = sw * prep.stacked_y()
    D = (p + 1) * fmap.M
    if prep.N * D <= MATERIALIZE_LIMIT:
        X = sw[:, None] * _explicit_rows(fmap, prep)
        problem = WeightedRidge(ytil, X=X)
    else:
        K = _structured_gram(fmap, prep)
        problem = WeightedRidge(ytil, K=sw[:, None] * K * sw[None, :])
    return fmap, prep, sw, problem


def gcv_select(dataset: MixedDataset, config: FitConfig, feature_map: Optional[FeatureMap] = None):
    """Return ``(lambda_star, curve)`` with ``curve[:, 0] = lambda`` and
    ``curve[:, 1] = GCV(lambda)`` over ``config.lambda_grid``."""
    _, _, _, problem = _ridge_problem(dataset, config, feature_map)
    lams = np.asarray(config.lambda_grid)
    lam, gcv, _ = problem.select(lams)
    return lam, np.column_stack([lams, gcv])


def fit(dataset: MixedDataset, config: FitConfig, feature_map: Optional[FeatureMap] = None) -> FittedModel:
    """Fit the augmented random-feature model; ``lam="gcv"`` tunes by GCV."""
    fmap, prep, sw, problem = _ridge_problem(dataset, config, feature_map)
    curve = None
    if config.lam == "gcv":
        lams = np.asarray(config.lambda_grid)
        lam, gcv, _ = problem.select(lams)
        curve = np.column_stack([lams, gcv])
    else:
        lam = config.lam
    sol = problem.solve(lam)
    dual = None
    if sol.coef is None:
        beta = sw * sol.alpha
        dual = (beta, [(deriv, u) for deriv, u, _ in prep.groups])
    return FittedModel(
        feature_map=fmap,
        p=dataset.p,
        coef=sol.coef,
        y_means=prep.means,
        center=prep.center,
        lo=prep.lo,
        width=prep.width,
        lam=float(lam),
        weights=tuple(prep.group_weights[1:]),
        gcv_curve=curve,
        dual=dual,
    )


def ridge_objective(dataset: MixedDataset, fmap: FeatureMap, coef, lam: float, weights=None) -> float:
    """The penalized objective at coefficient vector ``coef``."""
    prep = prepare(dataset, weights)
    Z = _explicit_rows(fmap, prep)
    resid = prep.stacked_y() - Z @ coef
    return float(np.sum(prep.loss_weights() * resid**2) / prep.N + lam * coef @ coef)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

_HILBERT_BITS = 10


def hilbert_order(u: np.ndarray) -> np.ndarray:
    """Indices sorting points of [0, 1]^d along a Hilbert curve."""
    u = np.atleast_2d(u)
    n, d = u.shape
    if d == 1:
        return np.argsort(u[:, 0], kind="stable")
    side = 2**_HILBERT_BITS - 1
    q = np.clip(np.floor(u * side + 0.5), 0, side).astype(int)
    dist = HilbertCurve(_HILBERT_BITS, d).distances_from_points(q.tolist())
    return np.argsort(np.asarray(dist), kind="stable")


def difference_variance(u: np.ndarray, y: np.ndarray) -> float:
    """First-difference variance estimate along the Hilbert order of ``u``."""
    ys = np.asarray(y)[hilbert_order(u)]
    return float(np.sum(np.diff(ys) ** 2) / (2 * (ys.size - 1)))


def default_weights(dataset: MixedDataset, floor: float = 1e-12) -> tuple:
    """``w_j = sigma_0^2 / sigma_j^2`` from difference-based variance
    estimates, in the rescaled units the fit works in."""
    lo = dataset.box[:, 0]
    width = dataset.box[:, 1] - lo
    chans = [((dataset.func_t - lo) / width, dataset.func_y)]
    chans += [((g - lo) / width, y * width[j]) for j, (g, y) in enumerate(zip(dataset.grad_t, dataset.grad_y))]
    var = []
    for c, (u, y) in enumerate(chans):
        if y.size < 10:
            raise ValueError(f"channel {c} has {y.size} < 10 points for variance estimation")
        v = difference_variance(u, y)
        if v < floor:
            warnings.warn(f"channel {c} variance estimate {v:.3g} clamped to {floor:g}", RuntimeWarning)
            v = floor
        var.append(v)
    return tuple(var[0] / v for v in var[1:])


def replicate_weights(dataset: MixedDataset) -> tuple:
    """Weights from known per-channel noise variances (``dataset.noise_var``),
    converted to rescaled gradient units."""
    if dataset.noise_var is None:
        raise ValueError("dataset carries no noise variances")
    width = dataset.box[:, 1] - dataset.box[:, 0]
    v0 = dataset.noise_var[0]
    return tuple(v0 / (dataset.noise_var[j + 1] * width[j] ** 2) for j in range(dataset.p))
