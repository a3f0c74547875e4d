"""Exact kernel-representer solver, for small problems and as an oracle.

Solves the same penalized problem as :func:`mixgrad.estimator.fit` but in
the RKHS of the ANOVA kernel itself, with an ``(N, N)`` Gram system over the
observation functionals.  With ``augmented=True`` (default) the kernel is

    K_aug(t, t') = K(t, t') + sum_{g<p} d^2 K / dt_g dt'_g,

the limit of the augmented random-feature inner products, so the random
feature fit converges to this solution as ``s`` grows.  With
``augmented=False`` the plain kernel ``K`` is used.

Gradient rows of ``K_aug`` involve fourth derivatives of the base kernel.
For Matern 5/2 the random-feature estimate of these has infinite variance
(t_5 frequencies lack an eighth moment), so convergence there is slow;
the Gaussian family converges at the usual ``1/sqrt(s)`` rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimator import MixedDataset, prepare
from .features import augmented_gram
from .kernels import AnovaKernelSpec, NonDifferentiableKernelError, kernel_deriv
from .ridge import solve_spd

__all__ = ["ExactModel", "exact_fit", "exact_predict", "exact_predict_grad", "EXACT_MAX_ROWS"]

EXACT_MAX_ROWS = 500


def _kernel_gram(spec: AnovaKernelSpec, ua, deriv_a, ub, deriv_b, p_aug: int) -> np.ndarray:
    ua = np.atleast_2d(ua)
    ub = np.atleast_2d(ub)
    cache = {}

    def factor(j, a, b):
        key = (j, a, b)
        if key not in cache:
            diff = ua[:, j][:, None] - ub[:, j][None, :]
            cache[key] = (-1.0) ** b * kernel_deriv(spec.base[j], diff, a + b)
        return cache[key]

    return np.asarray(augmented_gram(factor, spec.d, spec.r, p_aug, deriv_a, deriv_b), dtype=float)


@dataclass(frozen=True)
class ExactModel:
    spec: AnovaKernelSpec
    p: int
    p_aug: int
    beta: np.ndarray
    rows: list  # [(deriv, U)]
    y_means: np.ndarray
    center: np.ndarray
    lo: np.ndarray
    width: np.ndarray
    lam: float

    def _linear(self, u, deriv):
        out = 0.0
        offset = 0
        for d_i, u_i in self.rows:
            n_i = u_i.shape[0]
            g = _kernel_gram(self.spec, u, deriv, u_i, d_i, self.p_aug)
            out = out + g @ self.beta[offset : offset + n_i]
            offset += n_i
        return out

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        single = t.ndim == 1
        u = (np.atleast_2d(t) - self.lo) / self.width
        val = self.y_means[0] + self._linear(u, None)
        for j in range(self.p):
            val = val + self.y_means[j + 1] * (u[:, j] - self.center[j])
        return float(val[0]) if single else val

    def predict_grad(self, t, j: int):
        t = np.asarray(t, dtype=float)
        single = t.ndim == 1
        u = (np.atleast_2d(t) - self.lo) / self.width
        g = self._linear(u, j)
        if j < self.p:
            g = g + self.y_means[j + 1]
        g = g / self.width[j]
        return float(g[0]) if single else g


def exact_fit(
    dataset: MixedDataset,
    spec: AnovaKernelSpec,
    weights=None,
    lam: float = 1e-6,
    augmented: bool = True,
    max_rows: int = EXACT_MAX_ROWS,
) -> ExactModel:
    """Kernel-representer fit with loss weights and centering identical to
    the random-feature estimator.

    Raises
    ------
    ValueError
        More than ``max_rows`` observations, or a dimension mismatch.
    RankError
        Singular Gram system at ``lam = 0``.
    """
    if spec.d != dataset.d:
        raise ValueError(f"kernel has d={spec.d}, dataset has d={dataset.d}")
    if dataset.n_rows > max_rows:
        raise ValueError(f"{dataset.n_rows} observations exceed the exact-solver cap of {max_rows}")
    p = dataset.p
    p_aug = p if augmented else 0
    if p or p_aug:
        for j, k in enumerate(spec.base):
            if not k.family.differentiable:
                raise NonDifferentiableKernelError(f"coordinate {j} uses the {k.family.value} kernel")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    prep = prepare(dataset, weights)
    groups = prep.groups
    blocks = [[None] * len(groups) for _ in groups]
    for a, (da, ua, _) in enumerate(groups):
        for b in range(a, len(groups)):
            db, ub, _ = groups[b]
            blocks[a][b] = _kernel_gram(spec, ua, da, ub, db, p_aug)
            blocks[b][a] = blocks[a][b].T
    G = np.block(blocks)
    sw = np.sqrt(prep.loss_weights())
    N = prep.N
    A = sw[:, None] * G * sw[None, :] + N * lam * np.eye(N)
    alpha = solve_spd(A, sw * prep.stacked_y(), allow_jitter=lam > 0)
    return ExactModel(
        spec=spec,
        p=p,
        p_aug=p_aug,
        beta=sw * alpha,
        rows=[(deriv, u) for deriv, u, _ in groups],
        y_means=prep.means,
        center=prep.center,
        lo=prep.lo,
        width=prep.width,
        lam=float(lam),
    )


def exact_predict(model: ExactModel, t):
    return model.predict(t)


def exact_predict_grad(model: ExactModel, t, j: int):
    return model.predict_grad(t, j)
