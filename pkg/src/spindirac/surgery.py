"""Rotationally symmetric 0-surgery on the round 2-sphere.

Two antipodal polar disks are conformally stretched into half-cylinders and
joined through a flat core, turning the sphere into a torus with a neck of
length ~ 2 log(1/rho).  The t coordinate runs once around the torus with
t = 0 at the middle of the core; the profile is symmetric under t -> T - t.

Per side, r is the polar distance in the flat model dr^2 + r^2 dtheta^2 that
replaces the sphere near the pole.  The stretched metric F(r)^2 (dr^2 +
r^2 dtheta^2) has arclength ds = F dr and circle radius phi = r F(r).  Away
from the disks the sphere is blended into the flat model with the quintic
cutoff of ``geometry.BlendParams``.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .discrete import (
    EigenSolverError,
    KernelEstimate,
    RevolutionSurface,
    ThresholdPolicy,
    Topology,
    assemble_revolution_dirac,
    eig_smallest,
    round_sphere_surface,
    surface_kernel_estimate,
)
from .exact import SpinStructure
from .geometry import BlendParams, smootherstep, smootherstep_integral

log = logging.getLogger(__name__)

DEFAULT_R_MAX = 2.5
DEFAULT_R0 = 0.9
DEFAULT_R1 = 2.0
DEFAULT_SPHERE_RADIUS = 3.5
CORE_LENGTH = 2 * math.log(2)
GLUING_TOL = 1e-8
ARCLENGTH_NODES = 2000


class HierarchyError(ValueError):
    pass


class GluingError(ValueError):
    pass


def _dlogF_dlogr(r, r0):
    """d log F / d log r: -1 below r0, 0 above 1/r0, smooth ramp between."""
    x = np.log(np.asarray(r, dtype=float))
    x0 = math.log(r0)
    u = (x - x0) / (-2 * x0)
    return -(1.0 - smootherstep(u))


def _conformal_factor(r0):
    x0 = math.log(r0)
    width = -2 * x0

    def F(r):
        x = np.log(np.asarray(r, dtype=float))
        u = np.clip((x - x0) / width, 0.0, 1.0)
        ramp = -x0 - width * (u - smootherstep_integral(u))
        return np.exp(np.where(x <= x0, -x, ramp))
    return F


def _fiber_factor(rho):
    x_rho = math.log(rho)

    def f(r):
        x = np.log(np.asarray(r, dtype=float))
        u = (x - x_rho) / math.log(2)
        return np.exp((1.0 - smootherstep(u)) * x)
    return f


@dataclass(frozen=True)
class NeckProfile:
    """Stretch profile F and fiber profile f_rho of the neck metric.

    F = 1/r below r_0 and F = 1 from 1/r_0 on; in log-log coordinates the
    slope of log F is ramped from -1 to 0 with a quintic, which keeps r F
    nondecreasing, F nonincreasing and F three times differentiable.
    f_rho = r below rho and 1 above 2 rho.  In the two-dimensional model the
    fiber over the surgery sphere is a point, so f_rho does not enter the
    metric; it is kept for completeness of the profile family.
    """

    R_max: float
    r_0: float
    r_1: float
    rho: float
    F: Callable = field(repr=False, compare=False)
    f_rho: Callable = field(repr=False, compare=False)

    def params(self) -> dict:
        return {"R_max": self.R_max, "r_0": self.r_0, "r_1": self.r_1, "rho": self.rho}

    def dlogF(self, r):
        return _dlogF_dlogr(r, self.r_0)


def check_hierarchy(R_max: float, r_0: float, r_1: float, rho: float) -> None:
    checks = [
        (rho > 0, f"rho={rho} must be positive"),
        (rho < r_0 / 4, f"rho={rho} must be below r_0/4={r_0 / 4:g}"),
        (2 * rho < r_0, f"2*rho={2 * rho:g} must be below r_0={r_0}"),
        (r_0 < r_1 / 2, f"r_0={r_0} must be below r_1/2={r_1 / 2:g}"),
        (r_1 / 2 < R_max / 2, f"r_1/2={r_1 / 2:g} must be below R_max/2={R_max / 2:g}"),
        (r_0 < 1, f"r_0={r_0} must be below 1 for F = 1/r to reach the plateau F = 1"),
        (r_0 * r_1 >= 1, f"r_0*r_1={r_0 * r_1:g} must be at least 1 so F = 1 on (r_1, R_max)"),
    ]
    for ok, msg in checks:
        if not ok:
            raise HierarchyError(msg)


def build_neck_profile(R_max: float = DEFAULT_R_MAX, r_0: float = DEFAULT_R0,
                       r_1: float = DEFAULT_R1, rho: float = 0.1) -> NeckProfile:
    check_hierarchy(R_max, r_0, r_1, rho)
    return NeckProfile(R_max, r_0, r_1, rho, _conformal_factor(r_0), _fiber_factor(rho))


class _Arclength:
    """s(r) = int_{r_start}^r F and its inverse, on [r_start, R_max]."""

    def __init__(self, p: NeckProfile, r_start: float):
        self.p = p
        self.r_start = r_start
        self.s0 = math.log(p.r_0 / r_start)        # F = 1/r up to r_0
        r_flat = 1.0 / p.r_0
        nodes = np.geomspace(p.r_0, r_flat, ARCLENGTH_NODES)
        gx, gw = np.polynomial.legendre.leggauss(8)
        a, b = nodes[:-1, None], nodes[1:, None]
        pts = 0.5 * (b - a) * gx + 0.5 * (b + a)
        pieces = (0.5 * (b - a)[:, 0]) * (p.F(pts) @ gw)
        s_nodes = self.s0 + np.concatenate([[0.0], np.cumsum(pieces)])
        self.s1 = float(s_nodes[-1])
        self.r_flat = r_flat
        self._s_of_r = CubicHermiteSpline(nodes, s_nodes, p.F(nodes))
        self._r_of_s = CubicHermiteSpline(s_nodes, nodes, 1.0 / p.F(nodes))
        self.total = self.s1 + (p.R_max - r_flat)

    def s_of_r(self, r):
        r = np.asarray(r, dtype=float)
        mid = self._s_of_r(np.clip(r, self.p.r_0, self.r_flat))
        return np.where(r <= self.p.r_0, np.log(np.maximum(r, 1e-300) / self.r_start),
                        np.where(r >= self.r_flat, self.s1 + (r - self.r_flat), mid))

    def r_of_s(self, s):
        s = np.asarray(s, dtype=float)
        mid = self._r_of_s(np.clip(s, self.s0, self.s1))
        return np.where(s <= self.s0, self.r_start * np.exp(s),
                        np.where(s >= self.s1, self.r_flat + (s - self.s1), mid))


@dataclass
class SurgeryModel:
    """The surgered torus together with its coordinate bookkeeping."""

    profile: NeckProfile
    sphere_radius: float
    surface: RevolutionSurface
    core_length: float
    side_length: float
    middle_length: float
    gluing_residual: float
    curvature_jumps: dict
    _arc: _Arclength = field(repr=False)

    @property
    def length(self) -> float:
        return self.surface.length

    @property
    def neck_length(self) -> float:
        """Length of the flat unit-radius cylinder (r <= r_0 on both sides plus core)."""
        return self.core_length + 2 * self._arc.s0

    def radial(self, t) -> np.ndarray:
        """Polar distance r in the flat or sphere model seen from the nearer pole.

        Inside the core r continues the side formula r = (rho/2) e^s with
        s < 0, so r is smooth through the whole neck.
        """
        T = self.length
        t = np.mod(np.asarray(t, dtype=float), T)
        u = np.minimum(t, T - t) - 0.5 * self.core_length
        side = self._arc.r_of_s(np.minimum(u, self.side_length))
        middle = self.profile.R_max + (u - self.side_length)
        return np.where(u <= self.side_length, side, middle)

    def conformal_factor(self, t) -> np.ndarray:
        r = self.radial(t)
        return np.where(r < self.profile.R_max, self.profile.F(np.minimum(r, self.profile.R_max)), 1.0)

    def params(self) -> dict:
        d = self.profile.params()
        d.update(sphere_radius=self.sphere_radius, t_spin=self.surface.t_spin.value)
        return d


def _middle_phi(r, a, R_max, eta):
    """Blended circle radius at polar distance r from the first pole."""
    r = np.asarray(r, dtype=float)
    rb = math.pi * a - r
    e1, e2 = eta(r), eta(rb)
    sq = e1 * r**2 + e2 * rb**2 + (1 - e1 - e2) * (a * np.sin(r / a)) ** 2
    return np.sqrt(sq)


def _middle_dphi(r, a, R_max, eta, step=1e-6):
    return (_middle_phi(r + step, a, R_max, eta) - _middle_phi(r - step, a, R_max, eta)) / (2 * step)


def assemble_surgery_model(p: NeckProfile, sphere_radius: float = DEFAULT_SPHERE_RADIUS,
                           t_spin=SpinStructure.BOUNDING) -> SurgeryModel:
    """Periodic surface of revolution realizing the surgered sphere."""
    a = sphere_radius
    if 2 * p.R_max > math.pi * a / 2:
        raise HierarchyError(
            f"blend zone 2*R_max={2 * p.R_max:g} must fit in a hemisphere of radius {a:g} "
            f"(need 2*R_max <= {math.pi * a / 2:.4g})")
    arc = _Arclength(p, p.rho / 2)
    eta = BlendParams(p.R_max).eta
    c = CORE_LENGTH
    side = arc.total
    middle = math.pi * a - 2 * p.R_max
    T = c + 2 * side + middle

    def half_profile(u):
        u = np.asarray(u, dtype=float) - 0.5 * c
        s = np.clip(u, 0.0, side)
        r = arc.r_of_s(s)
        phi_side = r * p.F(r)
        phi_mid = _middle_phi(p.R_max + np.maximum(u - side, 0.0), a, p.R_max, eta)
        return np.where(u <= 0, 1.0, np.where(u <= side, phi_side, phi_mid))

    def profile(t):
        t = np.mod(np.asarray(t, dtype=float), T)
        return half_profile(np.minimum(t, T - t))

    # one-sided values and slopes at the breakpoints, from each piece's formula
    r_end = arc.r_of_s(side)
    side_end = (float(r_end * p.F(r_end)), float(1 + p.dlogF(r_end)))
    mid_start = (float(_middle_phi(p.R_max, a, p.R_max, eta)),
                 float(_middle_dphi(p.R_max, a, p.R_max, eta)))
    side_start = (float(p.rho / 2 * p.F(p.rho / 2)), float(1 + p.dlogF(p.rho / 2)))
    residual = max(abs(side_start[0] - 1.0), abs(side_start[1]),
                   abs(side_end[0] - mid_start[0]), abs(side_end[1] - mid_start[1]))
    if residual > GLUING_TOL:
        raise GluingError(f"C1 gluing residual {residual:.2e} exceeds {GLUING_TOL:g}")

    def curvature_jump(u0, step=1e-3):
        # Gaussian curvature -phi''/phi from one-sided second-order stencils
        def k(direction):
            f = half_profile(u0 + direction * (np.arange(4) * step + 1e-12))
            return -(2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / (step**2 * f[0])
        return float(abs(k(1) - k(-1)))

    jumps = {"core|side": curvature_jump(0.5 * c), "side|middle": curvature_jump(0.5 * c + side)}
    surface = RevolutionSurface(profile, T, Topology.PERIODIC, SpinStructure.BOUNDING,
                                SpinStructure(t_spin),
                                f"surgered sphere rho={p.rho:g} a={a:g} t_spin={SpinStructure(t_spin).value}")
    return SurgeryModel(p, a, surface, c, side, middle, residual, jumps, arc)


@dataclass
class SweepRow:
    rho: float
    neck_length: float
    min_abs_eig: float
    kernel_count: int
    gap_ratio: float
    verdict: str
    passed: bool


@dataclass
class SweepReport:
    rows: list
    baseline_kernel: int
    parameters: dict
    complete: bool = True
    error: str = ""

    @property
    def passed(self) -> bool:
        return self.complete and all(r.passed for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("rho,neck_length,min_abs_eig,kernel_count,gap_ratio,pass\n")
        for r in self.rows:
            buf.write(f"{r.rho:g},{r.neck_length:.10g},{r.min_abs_eig:.10g},{r.kernel_count},"
                      f"{r.gap_ratio:.6g},{str(r.passed).lower()}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "parameters": self.parameters,
            "baseline_kernel": self.baseline_kernel,
            "complete": self.complete,
            "error": self.error,
            "passed": self.passed,
            "rows": [asdict(r) for r in self.rows],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def neck_sweep(rho_list: Sequence[float], m_max: float = 8.5, N: int = 512, baseline_kernel: int = 0,
               t_spin=SpinStructure.BOUNDING, R_max: float = DEFAULT_R_MAX, r_0: float = DEFAULT_R0,
               r_1: float = DEFAULT_R1, sphere_radius: float = DEFAULT_SPHERE_RADIUS,
               policy: ThresholdPolicy = ThresholdPolicy()) -> SweepReport:
    """Kernel count of the surgered torus along a decreasing sequence of rho."""
    rho_list = [float(r) for r in rho_list]
    if not rho_list or any(b >= a for a, b in zip(rho_list, rho_list[1:])):
        raise ValueError(f"rho_list must be nonempty and strictly decreasing, got {rho_list}")
    if baseline_kernel < 0:
        raise ValueError("baseline_kernel must be nonnegative")
    profiles = [build_neck_profile(R_max, r_0, r_1, rho) for rho in rho_list]
    params = {"R_max": R_max, "r_0": r_0, "r_1": r_1, "sphere_radius": sphere_radius,
              "t_spin": SpinStructure(t_spin).value, "m_max": m_max, "N": N,
              "rhos": rho_list, "c_tau": policy.c_tau}
    report = SweepReport([], baseline_kernel, params)
    for p in profiles:
        model = assemble_surgery_model(p, sphere_radius, t_spin)
        try:
            est, spectra = surface_kernel_estimate(model.surface, m_max, N, policy)
        except EigenSolverError as exc:
            report.complete = False
            report.error = f"rho={p.rho:g}: {exc}"
            log.error("sweep aborted: %s", report.error)
            break
        min_abs = float(min(np.abs(ms.eigenvalues).min() for ms in spectra))
        ok = est.count <= baseline_kernel
        report.rows.append(SweepRow(p.rho, model.neck_length, min_abs, est.count,
                                    est.gap_ratio, est.verdict, ok))
        log.info("rho=%g kernel=%d min|lambda|=%.6f", p.rho, est.count, min_abs)
    return report


def round_sphere_baseline(sphere_radius: float = DEFAULT_SPHERE_RADIUS, m_max: float = 8.5,
                          N: int = 512, policy: ThresholdPolicy = ThresholdPolicy()) -> KernelEstimate:
    est, _ = surface_kernel_estimate(round_sphere_surface(sphere_radius), m_max, N, policy)
    return est


# -- energy split near the surgery locus -------------------------------------

@dataclass(frozen=True)
class EnergyRatio:
    lhs: float
    rhs: float
    applicable: bool

    @property
    def satisfied(self):
        """True/False when the inequality applies, else "not applicable"."""
        if not self.applicable:
            return "not applicable"
        return self.lhs <= self.rhs


ENERGY_FACTOR = 1.0 / 32.0     # (n - k - 1)^2 / 32 with n = 2, k = 0
_GAUSS_PANELS = 64
_GAUSS_ORDER = 8


def _check_scale(model: SurgeryModel, s: float):
    p = model.profile
    if not 2 * p.rho < s < p.r_1 / 2:
        raise ValueError(f"scale s={s} outside (2*rho, r_1/2) = ({2 * p.rho:g}, {p.r_1 / 2:g})")


def _annulus_intervals(model: SurgeryModel, r_lo: float, r_hi: float):
    """t-intervals where r_lo <= r < r_hi, one per side."""
    c = 0.5 * model.core_length
    s_lo, s_hi = (float(model._arc.s_of_r(r)) for r in (r_lo, r_hi))
    T = model.length
    return [(c + s_lo, c + s_hi), (T - c - s_hi, T - c - s_lo)]


def _gauss_integral(f, a, b):
    gx, gw = np.polynomial.legendre.leggauss(_GAUSS_ORDER)
    edges = np.linspace(a, b, _GAUSS_PANELS + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (hi - lo) * gx + 0.5 * (hi + lo)
    return float((0.5 * (hi - lo)[:, 0] * (f(pts) @ gw)).sum())


def _density(model: SurgeryModel, positions, component, vec):
    """|v|^2 as a smooth function of t, each component splined on its own grid."""
    vec = np.asarray(vec)
    T = model.length
    splines = []
    for comp in (0, 1):
        sel = component == comp
        x, y = positions[sel], vec[sel]
        # wrap one point on each side so interior intervals are never at an end
        x = np.concatenate([[x[-1] - T], x, [x[0] + T]])
        re = np.concatenate([[y[-1]], y, [y[0]]])
        splines.append((CubicSpline(x, re.real), CubicSpline(x, re.imag) if np.iscomplexobj(y) else None))

    def dens(t):
        t = np.mod(t, T)
        total = 0.0
        for sr, si in splines:
            total = total + sr(t) ** 2 + (si(t) ** 2 if si is not None else 0.0)
        return total
    return dens


def energy_integrals(model: SurgeryModel, positions, component, vec, s: float) -> tuple[float, float]:
    """Grid route: the two weighted masses 2 pi int |v|^2 / F dt (inner, outer)."""
    dens = _density(model, np.asarray(positions), np.asarray(component), vec)
    F = model.profile.F

    def integrand(t):
        return 2 * math.pi * dens(t) / F(model.radial(t))

    inner = sum(_gauss_integral(integrand, a, b)
                for a, b in _annulus_intervals(model, 2 * model.profile.rho, s))
    outer = sum(_gauss_integral(integrand, a, b) for a, b in _annulus_intervals(model, s, 2 * s))
    return inner, outer


def neck_energy_ratio(eigvec, eigval: float, model: SurgeryModel, op, s: float | None = None,
                      tau: float | None = None) -> EnergyRatio:
    """Weighted inner and outer masses of a near-harmonic spinor.

    lhs = (1/32) int_{2 rho <= r < s} |F^(1/2) psi|^2 dv, rhs the same over
    s <= r < 2s, both sides of the neck included.  With v = phi^(1/2) psi on
    the grid this is 2 pi int |v|^2 / F dt.  The inequality is only asserted
    when |eigval| <= tau, tau defaulting to the kernel threshold on op's mesh.
    """
    s = model.profile.r_0 / 2 if s is None else s
    _check_scale(model, s)
    tau = ThresholdPolicy().tau(op.mesh) if tau is None else tau
    inner, outer = energy_integrals(model, op.positions, op.component, eigvec, s)
    return EnergyRatio(ENERGY_FACTOR * inner, outer, abs(eigval) <= tau)


# synthetic spinors given as (u1(r), u2(r)) in the neck; sampled as v = phi^(1/2) u
SYNTHETIC_SPINORS: dict = {
    "constant": (lambda r: np.ones_like(r), lambda r: np.zeros_like(r)),
    "gaussian": (lambda r: np.exp(-r**2), lambda r: r * np.exp(-r**2)),
}


def outer_bump(s: float) -> tuple:
    """Smooth spinor supported in s < r < 2s."""
    def u(r):
        w = (np.asarray(r, dtype=float) - s) / s
        inside = (w > 0) & (w < 1)
        ww = np.where(inside, w, 0.5)
        return np.where(inside, np.exp(4 - 1 / (ww * (1 - ww))), 0.0)
    return (u, lambda r: np.zeros_like(np.asarray(r, dtype=float)))


def sample_synthetic(model: SurgeryModel, spinor: tuple, N: int, mode: float = 0.5):
    """Operator grid for ``mode`` and the sampled vector v = phi^(1/2) u(r)."""
    op = assemble_revolution_dirac(model.surface, mode, N)
    t = op.positions
    r = model.radial(t)
    root_phi = np.sqrt(model.surface.profile(t))
    vec = np.where(op.component == 0, spinor[0](r), spinor[1](r)) * root_phi
    return op, vec


def energy_oracle(model: SurgeryModel, spinor: tuple, s: float) -> tuple[float, float]:
    """r route: 2 pi int F(r) |u(r)|^2 r dr over each annulus, both sides."""
    F = model.profile.F

    def integrand(r):
        return 2 * math.pi * F(r) * (spinor[0](r) ** 2 + spinor[1](r) ** 2) * r

    def q(a, b):
        val, _ = integrate.quad(integrand, a, b, epsabs=0, epsrel=1e-12, limit=200,
                                points=[model.profile.r_0] if a < model.profile.r_0 < b else None)
        return 2 * val

    return q(2 * model.profile.rho, s), q(s, 2 * s)


# -- restricted Gram matrix ---------------------------------------------------

@dataclass(frozen=True)
class GramResult:
    matrix: np.ndarray
    rank: int

    @property
    def singular(self) -> bool:
        return self.rank < self.matrix.shape[0]


def outer_region_weights(model: SurgeryModel, op, s: float | None = None) -> np.ndarray:
    """Quadrature weights of int_{r >= s} |psi|^2 dv^g on op's grid.

    On the sides dv^g = r dr dtheta and |psi|^2 = |v|^2 / (r F), giving
    2 pi h |v|^2 / F^2; in the sphere zone F = 1.
    """
    s = model.profile.r_0 / 2 if s is None else s
    r = model.radial(op.positions)
    F = model.conformal_factor(op.positions)
    return np.where(r >= s, 2 * math.pi * op.mesh / F**2, 0.0)


def uniform_weights(op) -> np.ndarray:
    """Weights of the full L^2 product 2 pi h sum |v|^2 (no region cut)."""
    return np.full(op.dimension, 2 * math.pi * op.mesh)


def normalization_gram(eigvecs: Sequence[tuple], weights, rank_tol: float = 1e-10) -> GramResult:
    """Gram matrix of restricted L^2 products.

    ``eigvecs`` holds (mode, vector) pairs; different Fourier modes are
    orthogonal after the theta integral.  ``weights`` is one array for all
    vectors or one array per vector (same grid within a mode).
    """
    if len(eigvecs) < 1:
        raise ValueError("need at least one vector")
    k = len(eigvecs)
    w_list = [np.asarray(weights, dtype=float)] * k if np.ndim(weights) == 1 else \
        [np.asarray(w, dtype=float) for w in weights]
    if all(not np.any(w > 0) for w in w_list):
        raise ValueError("outer region is empty on this mesh")
    G = np.zeros((k, k), dtype=complex)
    for i, (mi, vi) in enumerate(eigvecs):
        for j, (mj, vj) in enumerate(eigvecs):
            if mi == mj:
                G[i, j] = np.sum(w_list[i] * np.conj(vi) * vj)
    if all(np.isrealobj(v) for _, v in eigvecs):
        G = G.real
    ev = np.linalg.eigvalsh(G)
    rank = int(np.sum(ev > rank_tol * max(ev.max(), np.finfo(float).tiny)))
    return GramResult(G, rank)


def orthonormalize(eigvecs: Sequence[tuple], weights) -> list[tuple]:
    """Symmetric (Loewdin) orthonormalization with respect to the Gram matrix."""
    g = normalization_gram(eigvecs, weights)
    if g.singular:
        raise ValueError(f"Gram matrix is singular (rank {g.rank} of {g.matrix.shape[0]})")
    ev, U = np.linalg.eigh(g.matrix)
    inv_sqrt = (U / np.sqrt(ev)) @ U.conj().T
    out = []
    for j in range(len(eigvecs)):
        vec = sum(inv_sqrt[i, j] * eigvecs[i][1] for i in range(len(eigvecs)))
        out.append((eigvecs[j][0], vec))
    return out
