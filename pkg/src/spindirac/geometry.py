"""Pointwise metric comparison: frame endomorphisms, deviation norms, blending.

All metrics here are Gram matrices at a single point (n <= 3).  Square roots
are taken through symmetric eigendecompositions, which is plenty at this size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

SYMMETRY_RTOL = 1e-12


class MetricError(ValueError):
    """Raised for malformed or non positive-definite Gram matrices."""


@dataclass(frozen=True)
class MetricAtPoint:
    gram: np.ndarray

    def __post_init__(self):
        gram = np.array(self.gram, dtype=float)
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
            raise MetricError(f"gram must be square, got shape {gram.shape}")
        if not 1 <= gram.shape[0] <= 3:
            raise MetricError(f"dimension must be 1, 2 or 3, got {gram.shape[0]}")
        scale = max(np.abs(gram).max(), np.finfo(float).tiny)
        if np.abs(gram - gram.T).max() > SYMMETRY_RTOL * scale:
            raise MetricError("gram matrix is not symmetric")
        gram = 0.5 * (gram + gram.T)
        eigs = np.linalg.eigvalsh(gram)
        if eigs.min() <= 0.0:
            raise MetricError(
                f"gram matrix is not positive definite (smallest eigenvalue {eigs.min():.3e})"
            )
        gram.setflags(write=False)
        object.__setattr__(self, "gram", gram)

    @property
    def dim(self) -> int:
        return self.gram.shape[0]


def _as_metric(g) -> MetricAtPoint:
    return g if isinstance(g, MetricAtPoint) else MetricAtPoint(np.asarray(g))


def _spd_power(a: np.ndarray, power: float) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    return (v * w**power) @ v.T


def _check_dims(g: MetricAtPoint, gp: MetricAtPoint):
    if g.dim != gp.dim:
        raise MetricError(f"dimension mismatch: {g.dim} vs {gp.dim}")


def bg_endomorphism(g, gp) -> np.ndarray:
    """Return the endomorphism b with g(X, Y) = gp(bX, bY).

    b is positive and symmetric with respect to g.  With S = g^(1/2) and
    C = S^-1 gp S^-1, the solution is b = S^-1 C^(-1/2) S.
    """
    g, gp = _as_metric(g), _as_metric(gp)
    _check_dims(g, gp)
    s = _spd_power(g.gram, 0.5)
    s_inv = _spd_power(g.gram, -0.5)
    c = s_inv @ gp.gram @ s_inv
    c = 0.5 * (c + c.T)
    return s_inv @ _spd_power(c, -0.5) @ s


def deviation_norm(g, gp) -> float:
    """|g - gp|_g: largest |eigenvalue| of g^-1 (g - gp)."""
    g, gp = _as_metric(g), _as_metric(gp)
    _check_dims(g, gp)
    s_inv = _spd_power(g.gram, -0.5)
    diff = s_inv @ (g.gram - gp.gram) @ s_inv
    return float(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.T))).max())


@dataclass(frozen=True)
class DeviationReport:
    pointwise_norm: float
    gradient_norm: float
    sample_location: tuple

    def __post_init__(self):
        if self.pointwise_norm < 0 or self.gradient_norm < 0:
            raise ValueError("deviation norms must be nonnegative")


def _round_sphere_gram(r):
    return np.diag([1.0, np.sin(r) ** 2])


def _product_gram(r):
    return np.diag([1.0, r**2])


def product_form_deviation(r_samples: Sequence[float], fd_step: float = 1e-5) -> list[DeviationReport]:
    """Compare the unit round sphere with its product-form model near a point.

    In polar normal coordinates g = dr^2 + sin(r)^2 dtheta^2 and the product
    model is dr^2 + r^2 dtheta^2, so G = g - product has only a theta-theta
    component.  The gradient norm takes d/dr of that component by central
    differences and adds the Christoffel terms of g analytically.
    """
    reports = []
    for r in r_samples:
        r = float(r)
        if not r > 0:
            raise ValueError(f"sample radius must be positive, got {r}")
        norm = deviation_norm(_round_sphere_gram(r), _product_gram(r))

        def g_tt(x):
            return np.sin(x) ** 2 - x**2

        step = min(fd_step, 0.5 * r)
        dg = (g_tt(r + step) - g_tt(r - step)) / (2 * step)
        s = np.sin(r)
        conn = np.cos(r) / s
        # (nabla_r G)_tt and the two equal (nabla_t G)_rt components
        nabla_r = dg - 2 * conn * g_tt(r)
        nabla_t = -conn * g_tt(r)
        grad = np.sqrt(nabla_r**2 / s**4 + 2 * nabla_t**2 / s**4)
        reports.append(DeviationReport(norm, float(grad), (r,)))
    return reports


def smootherstep(u):
    """C^2 ramp 6u^5 - 15u^4 + 10u^3, clamped to [0, 1]."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (u * (6 * u - 15) + 10)


def smootherstep_integral(u):
    """Integral of smootherstep from 0 to u, for u in [0, 1]."""
    u = np.clip(u, 0.0, 1.0)
    return u**4 * (u * (u - 3) + 2.5)


def default_cutoff(delta: float) -> Callable:
    """eta = 1 on [0, delta], 0 on [2 delta, inf), max slope 15/(8 delta)."""
    def eta(t):
        return 1.0 - smootherstep((np.asarray(t, dtype=float) - delta) / delta)
    return eta


@dataclass(frozen=True)
class BlendParams:
    delta: float
    eta: Callable = field(default=None)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.eta is None:
            object.__setattr__(self, "eta", default_cutoff(self.delta))

    def check(self, samples: int = 2001) -> None:
        """Verify plateau and slope constraints of eta on a sample grid."""
        t = np.linspace(0.0, 3 * self.delta, samples)
        e = np.asarray(self.eta(t), dtype=float)
        if np.any(e < -1e-14) or np.any(e > 1 + 1e-14):
            raise ValueError("cutoff leaves [0, 1]")
        if np.abs(e[t <= self.delta] - 1).max() > 1e-12:
            raise ValueError("cutoff is not 1 on [0, delta]")
        if np.abs(e[t >= 2 * self.delta]).max() > 1e-12:
            raise ValueError("cutoff is not 0 beyond 2 delta")
        slope = np.abs(np.diff(e) / np.diff(t)).max()
        if slope > 2 / self.delta * (1 + 1e-9):
            raise ValueError(f"cutoff slope {slope:.4g} exceeds 2/delta")


def blend_metric(g_val, product_val, r: float, p: BlendParams) -> MetricAtPoint:
    """eta(r) * product_val + (1 - eta(r)) * g_val."""
    if r < 0:
        raise ValueError(f"r must be nonnegative, got {r}")
    g_val, product_val = _as_metric(g_val), _as_metric(product_val)
    _check_dims(g_val, product_val)
    e = float(p.eta(r))
    return MetricAtPoint(e * product_val.gram + (1 - e) * g_val.gram)
