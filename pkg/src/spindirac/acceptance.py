"""End-to-end acceptance checks.

Each check returns a CriterionResult and a set of CSV artifacts.  Artifacts
never contain timings, so two runs with the same seed must agree byte for
byte; the last check verifies exactly that.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .discrete import (
    DEFAULT_TAU_CONSTANT,
    ThresholdPolicy,
    assemble_revolution_dirac,
    circle_kernel_estimate,
    eig_smallest,
    flat_torus_surface,
    random_conformal_factor,
    round_sphere_surface,
    surface_kernel_estimate,
    surface_spectrum,
)
from .exact import (
    FlatTorus,
    SpinCircle,
    SpinStructure,
    check_product_bound,
    circle_spectrum,
    flat_torus_spectrum,
    product_square_spectrum,
    sphere_spectrum,
    torus_kernel_dim,
)
from .geometry import product_form_deviation
from .index import TopologicalData, as_lower_bound, fixture_by_id, is_d_minimal, load_fixtures, topology_of
from .io import atomic_write
from .surgery import (
    SYNTHETIC_SPINORS,
    assemble_surgery_model,
    build_neck_profile,
    energy_integrals,
    energy_oracle,
    neck_energy_ratio,
    neck_sweep,
    outer_bump,
    round_sphere_baseline,
    sample_synthetic,
)

TWO_PI = 2 * math.pi


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    limit: float
    elapsed: float = 0.0
    artifacts: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number}. {self.title}: {self.detail} ({self.elapsed:.1f}s / {self.limit:g}s)"


def _kv_csv(rows) -> str:
    out = ["quantity,value"]
    for k, v in rows:
        if isinstance(v, float):
            v = f"{v:.10g}"
        out.append(f"{k},{v}")
    return "\n".join(out) + "\n"


@dataclass
class Context:
    seed: int = 0
    c_tau: float = DEFAULT_TAU_CONSTANT
    fixtures_path: str | None = None

    @property
    def policy(self) -> ThresholdPolicy:
        return ThresholdPolicy(c_tau=self.c_tau)


def torus_kernel(ctx: Context):
    fx = fixture_by_id("torus-alpha", ctx.fixtures_path)
    topo = topology_of(fx)
    exact = torus_kernel_dim(FlatTorus(TWO_PI * np.eye(2), (0, 0)))
    est, _ = surface_kernel_estimate(flat_torus_surface(), 8, 512, ctx.policy)
    verdict = is_d_minimal(est.count, topo)
    ok = exact == 2 and est.count == 2 and est.confident and verdict == "minimal"
    rows = [("exact_kernel", exact), ("discrete_kernel", est.count), ("verdict", est.verdict),
            ("gap_ratio", est.gap_ratio), ("bound", as_lower_bound(topo)), ("minimality", verdict)]
    detail = f"exact {exact}, discrete {est.count} ({est.verdict}), {verdict}"
    return ok, detail, {"criterion-1-torus-kernel.csv": _kv_csv(rows)}


_BOUND_TABLE = {0: "ahat", 1: 1, 2: 2, 3: 0, 4: "ahat", 5: 0, 6: 0, 7: 0}


def index_table(ctx: Context):
    mismatches, total = 0, 0
    for n in range(1, 17):
        for alpha in (False, True):
            for a_hat in range(-3, 4):
                entry = _BOUND_TABLE[n % 8]
                if entry == "ahat":
                    expected = abs(a_hat)
                else:
                    expected = entry if alpha else 0
                total += 1
                mismatches += as_lower_bound(TopologicalData(n, a_hat, alpha)) != expected
    rows = [("cases", total), ("mismatches", mismatches)]
    return mismatches == 0, f"{total} cases, {mismatches} mismatches", {"criterion-2-index-table.csv": _kv_csv(rows)}


def _random_factor_spectrum(rng, cutoff):
    kind = rng.integers(3)
    if kind == 0:
        c = SpinCircle(rng.uniform(1.0, 8.0), SpinStructure(rng.choice(["bounding", "non_bounding"])))
        return circle_spectrum(c, cutoff)
    if kind == 1:
        basis = TWO_PI * (np.eye(2) + rng.uniform(-0.3, 0.3, (2, 2)))
        return flat_torus_spectrum(FlatTorus(basis, tuple(rng.integers(2, size=2))), cutoff)
    return sphere_spectrum(int(rng.integers(1, 4)), cutoff)


def product_bound(ctx: Context):
    bounding = circle_spectrum(SpinCircle(TWO_PI, SpinStructure.BOUNDING), 4.0)
    nb = circle_spectrum(SpinCircle(TWO_PI, SpinStructure.NON_BOUNDING), 4.0)
    torus = flat_torus_spectrum(FlatTorus(TWO_PI * np.eye(2), (0, 0)), 4.0)
    m1 = product_square_spectrum(nb, bounding, 9.0).min_value()
    m2 = product_square_spectrum(torus, bounding, 9.0).min_value()
    rng = np.random.default_rng(ctx.seed)
    margins = []
    for _ in range(20):
        l = int(rng.integers(1, 4))
        sl = sphere_spectrum(l, 6.0)
        m = _random_factor_spectrum(rng, 6.0)
        prod = product_square_spectrum(m, sl, 20.0)
        margins.append(check_product_bound(prod, l).margin)
    ok = m1 == 0.25 and m2 == 0.25 and min(margins) >= 0
    rows = [("circle_product_min", m1), ("torus_product_min", m2), ("min_random_margin", min(margins))]
    detail = f"minima {m1:g}, {m2:g}; min margin over 20 products {min(margins):.4g}"
    return ok, detail, {"criterion-3-product-bound.csv": _kv_csv(rows)}


SPHERE_EXPECTED = np.array([-2.0] * 4 + [-1.0] * 2 + [1.0] * 2 + [2.0] * 4)


def sphere_oracle(ctx: Context):
    sphere = round_sphere_surface()
    errors, meshes = [], []
    for N in (128, 256, 512):
        vals = surface_spectrum(sphere, 2.5, N, 2.5)
        if vals.shape != SPHERE_EXPECTED.shape:
            return False, f"N={N}: found {vals.size} eigenvalues below 2.5, expected 12", {}
        errors.append(float(np.abs(vals - SPHERE_EXPECTED).max()))
        meshes.append(math.pi / (N + 0.5))
    order = float(np.polyfit(np.log(meshes), np.log(errors), 1)[0])
    ok = errors[-1] <= 1e-3 and order >= 1.8
    rows = [(f"error_N{N}", e) for N, e in zip((128, 256, 512), errors)] + [("fitted_order", order)]
    return ok, f"error {errors[-1]:.2e} at N=512, order {order:.3f}", {"criterion-4-sphere.csv": _kv_csv(rows)}


def conformal_invariance(ctx: Context):
    rng = np.random.default_rng(ctx.seed)
    failures, rows = 0, []
    for spin, expected in ((SpinStructure.NON_BOUNDING, 1), (SpinStructure.BOUNDING, 0)):
        c = SpinCircle(TWO_PI, spin)
        for trial in range(20):
            est = circle_kernel_estimate(c, random_conformal_factor(rng), 256, ctx.policy)
            good = est.count == expected and est.confident
            failures += not good
            rows.append((f"{spin.value}_{trial}", f"{est.count}/{est.verdict}/{est.gap_ratio:.6g}"))
    rows.append(("failures", failures))
    return failures == 0, f"{failures} failures in 40 trials", {"criterion-5-conformal.csv": _kv_csv(rows)}


def surgery_monotonicity(ctx: Context):
    rhos = [0.2, 0.1, 0.05, 0.02]
    base = round_sphere_baseline(policy=ctx.policy)
    ok = base.count == 0
    artifacts, parts = {}, []
    for t_spin in (SpinStructure.BOUNDING, SpinStructure.NON_BOUNDING):
        rep = neck_sweep(rhos, t_spin=t_spin, baseline_kernel=base.count, policy=ctx.policy)
        rows = rep.rows
        good = (rep.passed and len(rows) == len(rhos)
                and all(r.kernel_count == 0 and r.gap_ratio >= 5 for r in rows)
                and rows[-1].min_abs_eig >= 0.5 * rows[0].min_abs_eig)
        ok = ok and good
        artifacts[f"criterion-6-sweep-{t_spin.value}.csv"] = rep.to_csv()
        if rows:
            parts.append(f"{t_spin.value}: kernels {[r.kernel_count for r in rows]}, "
                         f"min gap {min(r.gap_ratio for r in rows):.1f}, "
                         f"min|l| {rows[0].min_abs_eig:.4f}->{rows[-1].min_abs_eig:.4f}")
    return ok, f"baseline {base.count}; " + "; ".join(parts), artifacts


def product_form_decay(ctx: Context):
    r = np.geomspace(1e-3, 0.5, 400)
    ratio = max(rep.pointwise_norm / x for rep, x in zip(product_form_deviation(r), r))
    return ratio <= 0.35, f"max |G|/r = {ratio:.5f}", {"criterion-7-decay.csv": _kv_csv([("max_ratio", ratio)])}


def energy_diagnostic(ctx: Context):
    model = assemble_surgery_model(build_neck_profile(rho=0.05))
    s = model.profile.r_0 / 2
    spinors = dict(SYNTHETIC_SPINORS, outer_bump=outer_bump(s))
    worst, rows = 0.0, []
    for name, sp in spinors.items():
        op, vec = sample_synthetic(model, sp, 1024)
        grid = energy_integrals(model, op.positions, op.component, vec, s)
        oracle = energy_oracle(model, sp, s)
        scale = max(oracle)
        for label, g, o in zip(("inner", "outer"), grid, oracle):
            rel = abs(g - o) / (abs(o) if o > 1e-12 * scale else scale)
            worst = max(worst, rel)
            rows.append((f"{name}_{label}_relerr", rel))
    wrong = 0
    tau = ctx.policy.tau
    for m in (-1.5, -0.5, 0.5, 1.5):
        op = assemble_revolution_dirac(model.surface, m, 512)
        for lam, vec in eig_smallest(op, 2):
            res = neck_energy_ratio(vec, lam, model, op, s, tau(op.mesh))
            if abs(lam) > tau(op.mesh) and res.satisfied != "not applicable":
                wrong += 1
    rows.append(("false_assertions", wrong))
    ok = worst <= 1e-4 and wrong == 0
    return ok, f"worst relative error {worst:.2e}, {wrong} false assertions", \
        {"criterion-8-energy.csv": _kv_csv(rows)}


CRITERIA: list[tuple[int, str, float, Callable]] = [
    (1, "torus kernel", 60, torus_kernel),
    (2, "index-bound table", 1, index_table),
    (3, "product bound", 5, product_bound),
    (4, "sphere oracle", 60, sphere_oracle),
    (5, "conformal invariance", 30, conformal_invariance),
    (6, "surgery monotonicity", 600, surgery_monotonicity),
    (7, "product-form decay", 1, product_form_decay),
    (8, "energy-ratio diagnostic", 10, energy_diagnostic),
]


def run_criterion(number: int, ctx: Context) -> CriterionResult:
    num, title, limit, fn = next(c for c in CRITERIA if c[0] == number)
    t0 = time.perf_counter()
    try:
        ok, detail, artifacts = fn(ctx)
    except Exception as exc:    # noqa: BLE001 - failures are enumerated, the run continues
        ok, detail, artifacts = False, f"error: {type(exc).__name__}: {exc}", {}
    elapsed = time.perf_counter() - t0
    if elapsed > limit:
        ok, detail = False, detail + f"; exceeded {limit:g}s"
    return CriterionResult(num, title, ok, detail, limit, elapsed, artifacts)


def _write(artifacts: dict, out_dir: Path):
    for name, text in artifacts.items():
        atomic_write(out_dir / name, text)


def _determinism(first: dict, ctx: Context, numbers) -> CriterionResult:
    t0 = time.perf_counter()
    second = {}
    for n in numbers:
        second.update(run_criterion(n, ctx).artifacts)
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    ok = not differing and bool(first)
    detail = f"{len(first)} artifacts byte-identical" if ok else f"differing: {', '.join(differing) or 'none'}"
    return CriterionResult(9, "determinism", ok, detail, 600, time.perf_counter() - t0)


def verify_all(output_dir=None, seed: int = 0, c_tau: float = DEFAULT_TAU_CONSTANT,
               fixtures_path=None, numbers=None, determinism: bool = True,
               echo: Callable | None = print) -> list[CriterionResult]:
    """Run the acceptance checks in order; FixtureError propagates for a bad catalog."""
    load_fixtures(fixtures_path)
    ctx = Context(seed, c_tau, str(fixtures_path) if fixtures_path else None)
    numbers = list(numbers) if numbers is not None else [c[0] for c in CRITERIA]
    results, artifacts = [], {}
    for n in numbers:
        res = run_criterion(n, ctx)
        results.append(res)
        artifacts.update(res.artifacts)
        if echo:
            echo(res.line())
    if determinism:
        res = _determinism(artifacts, ctx, numbers)
        results.append(res)
        if echo:
            echo(res.line())
    summary = _kv_csv([(f"{r.number}_{r.title.replace(' ', '_')}", "pass" if r.passed else "fail")
                       for r in results])
    if output_dir is not None:
        out = Path(output_dir)
        _write(artifacts, out)
        atomic_write(out / "summary.csv", summary)
    return results
