"""Data generators and references for the simulation experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .estimator import MixedDataset

__all__ = [
    "BS_BOX",
    "COST_BOX",
    "BsConfig",
    "bs_payoff",
    "ipa_gradients",
    "bs_reference",
    "bs_truth",
    "gen_bs_dataset",
    "CobbDouglasParams",
    "cobb_douglas_value",
    "cobb_douglas_grad",
    "cost_truth",
    "gen_cost_dataset",
    "ErrorSpec",
    "gen_correlated_errors",
    "mse_eval",
]

# (S0, r, sigma)
BS_BOX = np.array([[80.0, 120.0], [0.01, 0.05], [0.2, 1.0]])
COST_BOX = np.array([[0.5, 1.5]] * 3)


# ---------------------------------------------------------------------------
# Black-Scholes call
# ---------------------------------------------------------------------------


def _terminal(t, omega, T):
    t = np.asarray(t, dtype=float)
    S0, r, sigma = t[..., 0], t[..., 1], t[..., 2]
    ST = S0 * np.exp((r - 0.5 * sigma**2) * T + sigma * math.sqrt(T) * np.asarray(omega))
    return S0, r, sigma, ST


def bs_payoff(t, omega, T: float = 1.0, P0: float = 100.0):
    """Discounted call payoff ``exp(-rT) (S_T - P0)_+`` for ``t = (S0, r, sigma)``."""
    _, r, _, ST = _terminal(t, omega, T)
    return np.exp(-r * T) * np.maximum(ST - P0, 0.0)


def ipa_gradients(t, omega, T: float = 1.0, P0: float = 100.0):
    """Pathwise derivatives of ``bs_payoff`` in S0, r and sigma."""
    S0, r, sigma, ST = _terminal(t, omega, T)
    disc = np.exp(-r * T)
    itm = ST >= P0
    y0 = disc * np.maximum(ST - P0, 0.0)
    y1 = disc * ST / S0 * itm
    y2 = -T * y0 + disc * T * ST * itm
    y3 = disc / sigma * (np.log(ST / S0) - (r + 0.5 * sigma**2) * T) * ST * itm
    return y1, y2, y3


def bs_reference(S0, r, sigma, T: float = 1.0, P0: float = 100.0):
    """Closed-form expected discounted payoff."""
    S0, r, sigma = (np.asarray(x, dtype=float) for x in (S0, r, sigma))
    sq = sigma * math.sqrt(T)
    d1 = (math.log(P0) - np.log(S0) - (r - 0.5 * sigma**2) * T) / sq
    out = S0 * ndtr(-d1 + sq) - P0 * np.exp(-r * T) * ndtr(-d1)
    return out if out.ndim else float(out)


def bs_truth(t, T: float = 1.0, P0: float = 100.0):
    t = np.asarray(t, dtype=float)
    return bs_reference(t[..., 0], t[..., 1], t[..., 2], T, P0)


@dataclass(frozen=True)
class BsConfig:
    grid: tuple = (7, 7, 7)
    q: int = 1000
    seed: int = 0
    T: float = 1.0
    P0: float = 100.0
    box: np.ndarray = field(default_factory=lambda: BS_BOX.copy())

    def __post_init__(self):
        grid = (self.grid,) * 3 if np.isscalar(self.grid) else tuple(self.grid)
        if len(grid) != 3 or min(grid) < 2:
            raise ValueError("grid needs three axis counts >= 2")
        object.__setattr__(self, "grid", tuple(int(g) for g in grid))
        if self.q < 1:
            raise ValueError("q must be >= 1")

    def design(self) -> np.ndarray:
        axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.box, self.grid)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def gen_bs_dataset(config: BsConfig) -> MixedDataset:
    """Average ``q`` replications of the payoff and its three IPA gradients at
    each grid point, all from the same normal draws.  ``noise_var`` holds the
    pooled variances of the averaged responses per channel."""
    t = config.design()
    rng = np.random.default_rng(config.seed)
    n = t.shape[0]
    sums = np.zeros((4, n))
    sq = np.zeros((4, n))
    chunk = max(1, 2_000_000 // n)
    done = 0
    while done < config.q:
        m = min(chunk, config.q - done)
        omega = rng.standard_normal((m, n))
        y0 = bs_payoff(t, omega, config.T, config.P0)
        chans = (y0, *ipa_gradients(t, omega, config.T, config.P0))
        for c, y in enumerate(chans):
            sums[c] += y.sum(axis=0)
            sq[c] += (y * y).sum(axis=0)
        done += m
    q = config.q
    means = sums / q
    var = (sq - q * means**2) / max(q - 1, 1)
    noise_var = tuple(var.mean(axis=1) / q)
    return MixedDataset(
        t, means[0], grad_t=(t, t, t), grad_y=(means[1], means[2], means[3]), box=config.box, noise_var=noise_var
    )


# ---------------------------------------------------------------------------
# Cobb-Douglas cost function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CobbDouglasParams:
    c0: float = 1.0
    elasticities: tuple = (0.8, 0.7, 0.6)

    def __post_init__(self):
        if self.c0 <= 0 or any(c <= 0 for c in self.elasticities):
            raise ValueError("Cobb-Douglas parameters must be positive")
        object.__setattr__(self, "elasticities", tuple(float(c) for c in self.elasticities))

    @property
    def c(self) -> float:
        return sum(self.elasticities)

    @property
    def d(self) -> int:
        return len(self.elasticities) + 1


def _cd_check(params: CobbDouglasParams, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != params.d:
        raise ValueError(f"cost function takes {params.d} arguments (prices then output)")
    if np.any(t <= 0):
        raise ValueError("Cobb-Douglas arguments must be strictly positive")
    return t


def cobb_douglas_value(params: CobbDouglasParams, t):
    """Cost at prices ``t[..., :-1]`` and output level ``t[..., -1]``."""
    t = _cd_check(params, t)
    cj = np.array(params.elasticities)
    c = params.c
    const = params.c0 ** (-1.0 / c) * np.prod((c / cj) ** (cj / c))
    out = const * np.prod(t[..., :-1] ** (cj / c), axis=-1) * t[..., -1] ** (1.0 / c)
    return out if np.ndim(out) else float(out)


def cobb_douglas_grad(params: CobbDouglasParams, t):
    """Partials in the ``d - 1`` prices; shape ``(..., d - 1)``."""
    t = _cd_check(params, t)
    cj = np.array(params.elasticities)
    f = np.asarray(cobb_douglas_value(params, t))
    return f[..., None] * (cj / params.c) / t[..., :-1]


def cost_truth(t, params: CobbDouglasParams = CobbDouglasParams()):
    """The three-covariate experiment function ``f(t1, t2, 1, t4)``."""
    t = np.asarray(t, dtype=float)
    full = np.stack([t[..., 0], t[..., 1], np.ones(t.shape[:-1]), t[..., 2]], axis=-1)
    return cobb_douglas_value(params, full)


def gen_cost_dataset(
    n: int,
    rho: float,
    seed,
    sd: float = 0.35,
    params: CobbDouglasParams = CobbDouglasParams(),
    box: np.ndarray = COST_BOX,
) -> MixedDataset:
    """Uniform design on ``box``; function and both price-gradient channels at
    the same points, with jointly Gaussian errors (sd ``sd``, correlation
    ``rho``) independent across points."""
    corr = np.full((3, 3), float(rho))
    np.fill_diagonal(corr, 1.0)
    if not -1 <= rho <= 1 or np.linalg.eigvalsh(corr).min() < -1e-12:
        raise ValueError(f"correlation rho={rho} does not give a PSD 3x3 equicorrelation")
    rng = np.random.default_rng(seed)
    box = np.asarray(box, dtype=float)
    t = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.uniform(size=(n, 3))
    full = np.stack([t[:, 0], t[:, 1], np.ones(n), t[:, 2]], axis=-1)
    f = cobb_douglas_value(params, full)
    g = cobb_douglas_grad(params, full)
    # eigen factor, PSD-safe at rho = 1 and rho = -1/2
    evals, evecs = np.linalg.eigh(corr)
    L = evecs * np.sqrt(np.clip(evals, 0, None))
    eps = sd * rng.standard_normal((n, 3)) @ L.T
    return MixedDataset(
        t,
        f + eps[:, 0],
        grad_t=(t, t),
        grad_y=(g[:, 0] + eps[:, 1], g[:, 1] + eps[:, 2]),
        box=box,
    )


# ---------------------------------------------------------------------------
# short-range correlated errors
# ---------------------------------------------------------------------------

MA_LAGS = 100


@dataclass(frozen=True)
class ErrorSpec:
    """``upsilon=None`` gives white noise."""

    sigmas: tuple = (1.0,)
    rho: float = 0.0
    upsilon: Optional[float] = 2.0
    bias_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if any(s < 0 for s in self.sigmas):
            raise ValueError("standard deviations must be nonnegative")
        if self.upsilon is not None and not self.upsilon > 1:
            raise ValueError("upsilon must exceed 1")
        if np.linalg.eigvalsh(self.correlation()).min() < -1e-12:
            raise ValueError("cross-channel correlation matrix is not PSD")

    def correlation(self) -> np.ndarray:
        k = len(self.sigmas)
        c = np.full((k, k), float(self.rho))
        np.fill_diagonal(c, 1.0)
        return c

    def ma_weights(self) -> np.ndarray:
        if self.upsilon is None:
            return np.ones(1)
        a = (1.0 + np.arange(MA_LAGS + 1)) ** (-(self.upsilon + 1) / 2)
        return a / np.sqrt(np.sum(a * a))


def gen_correlated_errors(n: int, spec: ErrorSpec, seed) -> np.ndarray:
    """An ``(n, channels)`` stationary Gaussian error sequence.

    Innovations are equicorrelated across channels and filtered along the
    index by moving-average weights ``(1 + k)^{-(upsilon + 1)/2}``, so the
    lag-``h`` covariance decays like ``h^{-upsilon}``.
    """
    rng = np.random.default_rng(seed)
    k = len(spec.sigmas)
    evals, evecs = np.linalg.eigh(spec.correlation())
    L = evecs * np.sqrt(np.clip(evals, 0, None))
    a = spec.ma_weights()
    z = rng.standard_normal((n + a.size - 1, k)) @ L.T
    e = np.empty((n, k))
    for c in range(k):
        e[:, c] = np.convolve(z[:, c], a, mode="valid")
    e = e * np.array(spec.sigmas)
    if spec.bias_scale:
        e = e + spec.bias_scale * n ** (-0.6)
    return e


# ---------------------------------------------------------------------------
# Monte Carlo MSE
# ---------------------------------------------------------------------------


def mse_eval(model, reference: Callable, box, n_test: int = 10_000, seed=0):
    """Mean squared error of ``model`` against ``reference`` over uniform
    test points in ``box``, with its standard error."""
    if n_test < 100:
        raise ValueError("n_test must be >= 100")
    box = np.asarray(box, dtype=float)
    rng = np.random.default_rng(seed)
    t = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.uniform(size=(n_test, box.shape[0]))
    pred = model.predict(t) if hasattr(model, "predict") else model(t)
    sq = (np.asarray(pred) - np.asarray(reference(t))) ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(n_test))
