"""Weighted ridge solves and GCV curves, primal or dual.

Everything here works on the pre-weighted system ``X = W^{1/2} Z``,
``y~ = W^{1/2} y`` and solves ``(X'X + mu I) c = X'y~`` with ``mu = N*lam``.
A problem can be given explicitly (``X``) or only through its dual Gram
``K = X X'`` when the columns are too many to materialize.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

EXACT_TRACE_MAX = 4000
HUTCHINSON_PROBES = 32
HUTCHINSON_SEED = 20240601


class RankError(np.linalg.LinAlgError):
    """The unregularized system is singular."""


def default_lambda_grid(num: int = 30, lo: float = 1e-10, hi: float = 1.0) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), num)


def solve_spd(A: np.ndarray, b: np.ndarray, allow_jitter: bool = True) -> np.ndarray:
    """Cholesky solve; on failure retry once with ``1e-10 * trace/dim`` jitter."""
    try:
        return linalg.cho_solve(linalg.cho_factor(A, lower=True, check_finite=False), b)
    except linalg.LinAlgError:
        if not allow_jitter:
            raise RankError("system matrix is singular; use lambda > 0") from None
    jitter = 1e-10 * np.trace(A) / A.shape[0]
    warnings.warn(f"Cholesky failed; adding jitter {jitter:.3g} to the diagonal", RuntimeWarning)
    A = A + jitter * np.eye(A.shape[0])
    try:
        return linalg.cho_solve(linalg.cho_factor(A, lower=True, check_finite=False), b)
    except linalg.LinAlgError:
        raise RankError("system matrix is not positive definite even with jitter") from None


@dataclass
class RidgeSolution:
    lam: float
    coef: Optional[np.ndarray]  # primal coefficients, if X is available
    alpha: Optional[np.ndarray]  # dual coefficients, if the dual route was used


class WeightedRidge:
    """Ridge problem ``min ||y~ - X c||^2 / N + lam ||c||^2`` (times N)."""

    def __init__(self, ytil: np.ndarray, X: Optional[np.ndarray] = None, K: Optional[np.ndarray] = None):
        if X is None and K is None:
            raise ValueError("need X or K")
        self.y = np.asarray(ytil, dtype=float)
        self.X = X
        self.N = self.y.shape[0]
        self.primal = X is not None and X.shape[1] <= X.shape[0]
        if self.primal:
            self.G = X.T @ X
            self.rhs = X.T @ self.y
        else:
            self.G = K if K is not None else X @ X.T
            self.rhs = self.y
        self._eig = None

    @property
    def dim(self) -> int:
        return self.G.shape[0]

    def solve(self, lam: float) -> RidgeSolution:
        mu = self.N * lam
        A = self.G + mu * np.eye(self.dim)
        sol = solve_spd(A, self.rhs, allow_jitter=lam > 0)
        if self.primal:
            return RidgeSolution(lam, sol, None)
        coef = self.X.T @ sol if self.X is not None else None
        return RidgeSolution(lam, coef, sol)

    def _eigen(self):
        if self._eig is None:
            evals, evecs = linalg.eigh(self.G, check_finite=False)
            evals = np.clip(evals, 0.0, None)
            proj = evecs.T @ self.rhs
            if self.primal:
                keep = evals > evals.max() * 1e-13 if evals.size else evals > 0
                a2 = np.zeros_like(evals)
                a2[keep] = proj[keep] ** 2 / evals[keep]
                resid0 = max(float(self.y @ self.y) - a2.sum(), 0.0)
            else:
                a2 = proj**2
                resid0 = 0.0
            self._eig = (evals, a2, resid0)
        return self._eig

    def gcv_curve(self, lams) -> tuple:
        """Return ``(gcv, trace)`` arrays over ``lams``."""
        lams = np.asarray(lams, dtype=float)
        if self.dim <= EXACT_TRACE_MAX:
            evals, a2, resid0 = self._eigen()
            gcv = np.empty(lams.size)
            tr = np.empty(lams.size)
            for i, lam in enumerate(lams):
                mu = self.N * lam
                shrink = evals / (evals + mu) if mu > 0 else (evals > 0).astype(float)
                rss = resid0 + float(np.sum((1.0 - shrink) ** 2 * a2))
                tr[i] = shrink.sum()
                gcv[i] = rss / (1.0 - tr[i] / self.N) ** 2
            return gcv, tr
        return self._gcv_hutchinson(lams)

    def _gcv_hutchinson(self, lams):
        rng = np.random.default_rng(HUTCHINSON_SEED)
        probes = rng.choice([-1.0, 1.0], size=(self.N, HUTCHINSON_PROBES))
        gcv = np.empty(len(lams))
        tr = np.empty(len(lams))
        if self.primal:
            Xp = self.X.T @ probes
        for i, lam in enumerate(lams):
            mu = self.N * lam
            A = self.G + mu * np.eye(self.dim)
            if self.primal:
                sol = solve_spd(A, np.column_stack([self.rhs, Xp]), allow_jitter=lam > 0)
                fitted = self.X @ sol[:, 0]
                tr[i] = np.mean(np.sum(Xp * sol[:, 1:], axis=0))
            else:
                sol = solve_spd(A, np.column_stack([self.y, probes]), allow_jitter=lam > 0)
                fitted = self.G @ sol[:, 0]
                tr[i] = np.mean(np.sum(probes * (self.G @ sol[:, 1:]), axis=0))
            rss = float(np.sum((self.y - fitted) ** 2))
            gcv[i] = rss / (1.0 - tr[i] / self.N) ** 2
        return gcv, tr

    def select(self, lams) -> tuple:
        gcv, tr = self.gcv_curve(lams)
        finite = np.isfinite(gcv)
        if not finite.any():
            raise FloatingPointError("GCV is non-finite on the whole lambda grid")
        idx = int(np.argmin(np.where(finite, gcv, np.inf)))
        return float(np.asarray(lams)[idx]), gcv, tr
