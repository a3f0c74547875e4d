"""Shift-invariant univariate kernels, their spectra, and ANOVA tensor kernels.

All kernels are normalized so that ``k(0) = 1``; the spectral measure of every
family is then a probability distribution, which is what random Fourier
feature sampling needs.  ``tau`` is a lengthscale in every family:

=========  ===========================================  ==========================
family     k(u)                                         frequency law
=========  ===========================================  ==========================
matern52   (1 + |u|/tau + u^2/(3 tau^2)) exp(-|u|/tau)  t_5 / (sqrt(5) tau)
laplacian  exp(-|u|/tau)                                Cauchy(0, 1/tau)
gaussian   exp(-u^2 / (2 tau^2))                        Normal(0, 1/tau^2)
cauchy     1 / (1 + u^2/tau^2)                          Laplace(0, 1/tau)
=========  ===========================================  ==========================
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import hermite_e
from scipy import stats

__all__ = [
    "Family",
    "KernelSpec",
    "AnovaKernelSpec",
    "NonDifferentiableKernelError",
    "kernel_eval",
    "kernel_deriv",
    "kernel_d1",
    "kernel_d2",
    "spectral_density",
    "frequency_distribution",
    "sample_frequencies",
    "anova_sum",
    "anova_kernel_eval",
    "anova_kernel_partial",
    "anova_kernel_grad",
    "anova_kernel_cross",
]

MAX_DERIVATIVE_ORDER = 4


class NonDifferentiableKernelError(ValueError):
    """Raised when a derivative is requested where the kernel has none."""


class Family(str, enum.Enum):
    MATERN52 = "matern52"
    LAPLACIAN = "laplacian"
    GAUSSIAN = "gaussian"
    CAUCHY = "cauchy"

    @property
    def differentiable(self) -> bool:
        return self is not Family.LAPLACIAN


@dataclass(frozen=True)
class KernelSpec:
    """A univariate shift-invariant kernel with lengthscale ``tau``."""

    family: Family
    tau: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        tau = float(self.tau)
        if not (tau > 0 and math.isfinite(tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau!r}")
        object.__setattr__(self, "tau", tau)

    def with_tau(self, tau: float) -> "KernelSpec":
        return KernelSpec(self.family, tau)

    def to_record(self) -> dict:
        return {"family": self.family.value, "tau": self.tau}

    @classmethod
    def from_record(cls, record: Mapping) -> "KernelSpec":
        return cls(Family(str(record["family"]).lower()), float(record["tau"]))


def kernel_eval(spec: KernelSpec, u):
    """Evaluate ``k(u)``; vectorized over ``u``."""
    return kernel_deriv(spec, u, 0)


def kernel_deriv(spec: KernelSpec, u, order: int):
    """The ``order``-th derivative of ``k`` at ``u`` (orders 0 through 4).

    Raises
    ------
    NonDifferentiableKernelError
        For the Laplacian family at ``u == 0`` when ``order >= 1``.
    """
    if not 0 <= order <= MAX_DERIVATIVE_ORDER:
        raise ValueError(f"derivative order must be in [0, {MAX_DERIVATIVE_ORDER}]")
    u = np.asarray(u, dtype=float)
    tau = spec.tau
    fam = spec.family

    if fam is Family.GAUSSIAN:
        z = u / tau
        coef = np.zeros(order + 1)
        coef[order] = 1.0
        out = (-1.0 / tau) ** order * hermite_e.hermeval(z, coef) * np.exp(-0.5 * z * z)

    elif fam is Family.LAPLACIAN:
        if order and np.any(u == 0):
            raise NonDifferentiableKernelError(
                "the Laplacian kernel is not differentiable at u = 0"
            )
        out = (-np.sign(u) / tau) ** order * np.exp(-np.abs(u) / tau)

    elif fam is Family.CAUCHY:
        z = u / tau
        q = 1.0 + z * z
        if order == 0:
            out = 1.0 / q
        elif order == 1:
            out = -2.0 * z / q**2
        elif order == 2:
            out = (6.0 * z * z - 2.0) / q**3
        elif order == 3:
            out = -24.0 * z * (z * z - 1.0) / q**4
        else:
            out = 24.0 * (5.0 * z**4 - 10.0 * z * z + 1.0) / q**5
        out = out / tau**order

    else:  # Matern 5/2
        x = np.abs(u) / tau
        e = np.exp(-x)
        if order == 0:
            out = (1.0 + x + x * x / 3.0) * e
        elif order == 1:
            out = -(u / (3.0 * tau**2)) * (1.0 + x) * e
        elif order == 2:
            out = (x * x - x - 1.0) * e / (3.0 * tau**2)
        elif order == 3:
            out = (u / (3.0 * tau**4)) * (3.0 - x) * e
        else:
            out = (x * x - 5.0 * x + 3.0) * e / (3.0 * tau**4)

    return out if out.ndim else float(out)


def kernel_d1(spec: KernelSpec, u):
    return kernel_deriv(spec, u, 1)


def kernel_d2(spec: KernelSpec, u):
    return kernel_deriv(spec, u, 2)


def frequency_distribution(spec: KernelSpec):
    """Frozen ``scipy.stats`` distribution of the spectral frequencies."""
    tau = spec.tau
    if spec.family is Family.GAUSSIAN:
        return stats.norm(scale=1.0 / tau)
    if spec.family is Family.LAPLACIAN:
        return stats.cauchy(scale=1.0 / tau)
    if spec.family is Family.CAUCHY:
        return stats.laplace(scale=1.0 / tau)
    return stats.t(df=5, scale=1.0 / (math.sqrt(5.0) * tau))


def spectral_density(spec: KernelSpec, omega):
    """Density ``p`` with ``k(u) = integral of p(w) exp(i w u) dw``."""
    out = frequency_distribution(spec).pdf(omega)
    return out if np.ndim(out) else float(out)


def sample_frequencies(spec: KernelSpec, s: int, rng_seed):
    """Draw ``s`` i.i.d. frequencies and Uniform[0, 2 pi) phases.

    ``rng_seed`` is anything ``numpy.random.default_rng`` accepts.  The
    frequencies are drawn as a standardized variate times ``1/tau``, so equal
    seeds with different ``tau`` give rescaled copies of the same draw.
    """
    if int(s) != s or s < 1:
        raise ValueError("s must be a positive integer")
    s = int(s)
    rng = np.random.default_rng(rng_seed)
    if spec.family is Family.GAUSSIAN:
        x = rng.standard_normal(s)
    elif spec.family is Family.LAPLACIAN:
        x = rng.standard_cauchy(s)
    elif spec.family is Family.CAUCHY:
        x = rng.laplace(size=s)
    else:
        x = rng.standard_t(5, size=s) / math.sqrt(5.0)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=s)
    return x / spec.tau, phases


# ---------------------------------------------------------------------------
# ANOVA tensor-product kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnovaKernelSpec:
    """Truncated SS-ANOVA kernel: sum over subsets S with 1 <= |S| <= r of
    products of coordinate kernels (no constant component)."""

    base: tuple
    r: int

    def __post_init__(self):
        base = tuple(self.base)
        if not base:
            raise ValueError("need at least one coordinate kernel")
        object.__setattr__(self, "base", base)
        if not 1 <= self.r <= len(base):
            raise ValueError(f"interaction order r={self.r} outside [1, {len(base)}]")

    @property
    def d(self) -> int:
        return len(self.base)

    @classmethod
    def uniform(cls, family, tau: float, d: int, r: int) -> "AnovaKernelSpec":
        return cls(tuple(KernelSpec(family, tau) for _ in range(d)), r)


def anova_sum(base: Sequence, active: Mapping, r: int):
    """Sum over subsets ``S`` containing every key of ``active`` with
    ``|S| <= r`` (and ``|S| >= 1``) of ``prod_{j in S} F_j``.

    ``F_j`` is ``active[j]`` for active coordinates and ``base[j]`` otherwise.
    Arrays broadcast elementwise.  Evaluated with elementary symmetric
    polynomials of the inactive factors.
    """
    d = len(base)
    n_act = len(active)
    shape = np.broadcast_shapes(*(np.shape(b) for b in base), *(np.shape(a) for a in active.values()))
    if n_act > r:
        return np.zeros(shape)
    prod = np.ones(shape)
    for a in active.values():
        prod = prod * a
    top = r - n_act
    esym = [np.ones(shape)] + [np.zeros(shape) for _ in range(top)]
    for j in range(d):
        if j in active:
            continue
        for m in range(top, 0, -1):
            esym[m] = esym[m] + esym[m - 1] * base[j]
    start = 0 if n_act else 1
    total = np.zeros(shape)
    for m in range(start, top + 1):
        total = total + esym[m]
    return prod * total


def anova_kernel_partial(spec: AnovaKernelSpec, t, t2, orders1=None, orders2=None):
    """Mixed partial of the ANOVA kernel.

    ``orders1[j]`` / ``orders2[j]`` give the derivative order in ``t[j]`` /
    ``t2[j]``.  ``t`` and ``t2`` broadcast over leading axes; last axis is d.
    """
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    d = spec.d
    if t.shape[-1] != d or t2.shape[-1] != d:
        raise ValueError(f"points must have last dimension {d}")
    o1 = np.zeros(d, dtype=int) if orders1 is None else np.asarray(orders1, dtype=int)
    o2 = np.zeros(d, dtype=int) if orders2 is None else np.asarray(orders2, dtype=int)
    diff = t - t2
    base = []
    active = {}
    for j, kspec in enumerate(spec.base):
        u = diff[..., j]
        order = int(o1[j] + o2[j])
        if order:
            if not kspec.family.differentiable:
                raise NonDifferentiableKernelError(
                    f"coordinate {j} uses the non-differentiable {kspec.family.value} kernel"
                )
            active[j] = (-1.0) ** int(o2[j]) * kernel_deriv(kspec, u, order)
        base.append(kernel_deriv(kspec, u, 0))
    out = anova_sum(base, active, spec.r)
    return out if out.ndim else float(out)


def anova_kernel_eval(spec: AnovaKernelSpec, t, t2):
    return anova_kernel_partial(spec, t, t2)


def anova_kernel_grad(spec: AnovaKernelSpec, t, t2, j: int):
    """Partial derivative of the ANOVA kernel in ``t[j]`` (0-based)."""
    o = np.zeros(spec.d, dtype=int)
    o[j] = 1
    return anova_kernel_partial(spec, t, t2, o, None)


def anova_kernel_cross(spec: AnovaKernelSpec, t, t2, j: int, j2: int):
    """Mixed partial in ``t[j]`` and ``t2[j2]`` (0-based)."""
    o1 = np.zeros(spec.d, dtype=int)
    o2 = np.zeros(spec.d, dtype=int)
    o1[j] = 1
    o2[j2] = 1
    return anova_kernel_partial(spec, t, t2, o1, o2)
