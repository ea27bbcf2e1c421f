import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spindirac.discrete import (
    EigenSolverError,
    assemble_revolution_dirac,
    eig_smallest,
    flat_torus_surface,
)
from spindirac.exact import SpinStructure, sphere_spectrum
from spindirac.surgery import (
    ENERGY_FACTOR,
    GLUING_TOL,
    SYNTHETIC_SPINORS,
    HierarchyError,
    SweepReport,
    assemble_surgery_model,
    build_neck_profile,
    energy_integrals,
    energy_oracle,
    neck_energy_ratio,
    neck_sweep,
    normalization_gram,
    orthonormalize,
    outer_bump,
    outer_region_weights,
    sample_synthetic,
    uniform_weights,
)
import spindirac.surgery as sg

B, NB = SpinStructure.BOUNDING, SpinStructure.NON_BOUNDING


@pytest.fixture(scope="module")
def model():
    return assemble_surgery_model(build_neck_profile(rho=0.1))


class TestProfile:
    def test_plateau_examples(self):
        p = build_neck_profile(rho=0.1)
        assert float(p.F(p.r_0 / 2)) == pytest.approx(2 / p.r_0, rel=1e-14)
        assert float(p.f_rho(3 * p.rho)) == pytest.approx(1.0, abs=1e-14)
        assert float(p.F(p.R_max / 1.01)) == pytest.approx(1.0, abs=1e-14)

    def test_fiber_below_rho(self):
        p = build_neck_profile(rho=0.1)
        r = np.linspace(1e-3, 0.1, 50)
        np.testing.assert_allclose(p.f_rho(r), r, rtol=1e-14)

    @pytest.mark.parametrize("rho", [0.2, 0.1, 0.05, 0.02])
    def test_rF_shape(self, rho):
        p = build_neck_profile(rho=rho)
        r = np.linspace(1e-4, p.R_max, 10_000)
        rF = r * p.F(r)
        np.testing.assert_allclose(rF[r < p.r_0], 1.0, rtol=1e-13)
        np.testing.assert_allclose(rF[r > p.r_1], r[r > p.r_1], rtol=1e-13)
        assert np.all(np.diff(rF) >= -1e-13)
        assert np.all(np.diff(p.F(r)) <= 1e-13)
        assert np.all(np.diff(p.f_rho(r)) >= -1e-13)

    def test_log_slope_matches_numeric(self):
        p = build_neck_profile()
        r = np.geomspace(0.5, 1.5, 40)
        eps = 1e-6
        numeric = (np.log(p.F(r * math.exp(eps))) - np.log(p.F(r * math.exp(-eps)))) / (2 * eps)
        np.testing.assert_allclose(p.dlogF(r), numeric, atol=1e-7)

    @pytest.mark.parametrize("kwargs,match", [
        (dict(rho=2.5 / 8), "rho"),
        (dict(rho=0.0), "positive"),
        (dict(rho=0.1, r_1=1.5), "r_1/2"),
        (dict(rho=0.1, r_0=1.1, r_1=2.4, R_max=3.0), "below 1"),
        (dict(rho=0.05, r_0=0.4, r_1=2.0), "r_0\\*r_1"),
    ])
    def test_hierarchy_errors(self, kwargs, match):
        with pytest.raises(HierarchyError, match=match):
            build_neck_profile(**kwargs)

    def test_sphere_too_small(self):
        with pytest.raises(HierarchyError, match="hemisphere"):
            assemble_surgery_model(build_neck_profile(), sphere_radius=2.0)


class TestModel:
    def test_gluing_residual(self, model):
        assert model.gluing_residual < GLUING_TOL
        assert set(model.curvature_jumps) == {"core|side", "side|middle"}
        assert all(np.isfinite(v) for v in model.curvature_jumps.values())

    def test_unit_neck_circle(self, model):
        # r F = 1 wherever r < r_0, so the neck circle has radius 1
        t = np.linspace(0, model.length, 20001)
        r = model.radial(t)
        inside = r < model.profile.r_0
        np.testing.assert_allclose(model.surface.profile(t[inside]), 1.0, atol=1e-12)

    def test_profile_positive_and_periodic(self, model):
        t = np.linspace(0, model.length, 5001)
        phi = model.surface.profile(t)
        assert phi.min() > 0
        assert phi[0] == pytest.approx(phi[-1], abs=1e-14)

    def test_sphere_zone_is_round(self, model):
        a = model.sphere_radius
        T = model.length
        t = 0.5 * T + np.linspace(-0.4, 0.4, 11)  # antipodal to the neck, clear of the blend
        r = model.radial(t)
        np.testing.assert_allclose(model.surface.profile(t), a * np.sin(r / a), rtol=1e-12)

    def test_neck_length_closed_form(self):
        for rho in (0.2, 0.1, 0.05, 0.02):
            m = assemble_surgery_model(build_neck_profile(rho=rho))
            closed = 2 * math.log(2 * m.profile.r_0 / rho) + 2 * math.log(2)
            assert m.neck_length == pytest.approx(closed, rel=1e-13)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.01, 0.2), st.floats(0.3, 0.9))
    def test_neck_length_monotone(self, rho, shrink):
        a = assemble_surgery_model(build_neck_profile(rho=rho))
        b = assemble_surgery_model(build_neck_profile(rho=rho * shrink))
        assert b.neck_length > a.neck_length
        # growth is logarithmic: the difference is exactly 2 log(1/shrink)
        assert b.neck_length - a.neck_length == pytest.approx(-2 * math.log(shrink), rel=1e-12)

    def test_arclength_inverse(self, model):
        s = np.linspace(0, model.side_length, 500)
        r = model._arc.r_of_s(s)
        np.testing.assert_allclose(model._arc.s_of_r(r), s, atol=1e-9)

    def test_shrinking_R_max_never_violates_gluing(self):
        # reversibility sanity: either a valid model or a hierarchy error
        for R_max in (2.5, 2.2, 2.05, 2.0, 1.9):
            try:
                m = assemble_surgery_model(build_neck_profile(R_max=R_max, rho=0.1))
            except HierarchyError:
                continue
            assert m.gluing_residual < GLUING_TOL


class TestSweep:
    def test_small_sweep_passes(self):
        rep = neck_sweep([0.2, 0.1], m_max=4.5, N=256)
        assert rep.complete and rep.passed
        assert [r.rho for r in rep.rows] == [0.2, 0.1]
        assert all(r.kernel_count == 0 for r in rep.rows)
        assert all(r.min_abs_eig > 0.1 for r in rep.rows)

    def test_rejects_increasing(self):
        with pytest.raises(ValueError, match="decreasing"):
            neck_sweep([0.1, 0.2])

    def test_csv_header_and_json(self):
        rep = neck_sweep([0.2], m_max=2.5, N=128)
        lines = rep.to_csv().splitlines()
        assert lines[0] == "rho,neck_length,min_abs_eig,kernel_count,gap_ratio,pass"
        assert lines[1].startswith("0.2,")
        import json
        doc = json.loads(rep.to_json())
        assert doc["parameters"]["R_max"] == 2.5 and doc["parameters"]["rhos"] == [0.2]

    def test_baseline_sphere_has_no_kernel(self):
        assert sphere_spectrum(2, 1.5).kernel_dim() == 0
        assert min(abs(sphere_spectrum(2, 1.5).values)) == 1

    def test_solver_failure_gives_incomplete_report(self, monkeypatch):
        def boom(*a, **k):
            raise EigenSolverError("forced")
        monkeypatch.setattr(sg, "surface_kernel_estimate", boom)
        rep = neck_sweep([0.2, 0.1], m_max=1.5, N=64)
        assert not rep.complete and not rep.passed
        assert rep.rows == [] and "forced" in rep.error

    def test_exceeding_baseline_fails(self):
        rep = SweepReport([sg.SweepRow(0.1, 1.0, 0.0, 1, 10.0, "confident", False)], 0, {})
        assert not rep.passed
        assert rep.to_csv().splitlines()[1].endswith(",false")


class TestEnergy:
    @pytest.mark.parametrize("name", sorted(SYNTHETIC_SPINORS))
    def test_grid_matches_oracle(self, model, name):
        s = model.profile.r_0 / 2
        spinor = SYNTHETIC_SPINORS[name]
        op, vec = sample_synthetic(model, spinor, 1024)
        grid = energy_integrals(model, op.positions, op.component, vec, s)
        oracle = energy_oracle(model, spinor, s)
        np.testing.assert_allclose(grid, oracle, rtol=1e-4)

    def test_constant_inner_mass_closed_form(self, model):
        # u = 1: 2 * 2 pi int F r dr = 4 pi (s - 2 rho) below r_0
        s = model.profile.r_0 / 2
        inner, _ = energy_oracle(model, SYNTHETIC_SPINORS["constant"], s)
        assert inner == pytest.approx(4 * math.pi * (s - 2 * model.profile.rho), rel=1e-10)

    def test_outer_bump(self, model):
        s = model.profile.r_0 / 2
        spinor = outer_bump(s)
        op, vec = sample_synthetic(model, spinor, 1024)
        res = neck_energy_ratio(vec, 0.0, model, op, s, tau=1.0)
        assert res.lhs == pytest.approx(0.0, abs=1e-12)
        assert res.rhs > 0 and res.satisfied is True
        oracle = energy_oracle(model, spinor, s)
        assert res.rhs == pytest.approx(oracle[1], rel=1e-4)

    def test_factor(self, model):
        s = model.profile.r_0 / 2
        op, vec = sample_synthetic(model, SYNTHETIC_SPINORS["constant"], 512)
        inner, _ = energy_integrals(model, op.positions, op.component, vec, s)
        res = neck_energy_ratio(vec, 0.0, model, op, s, tau=1.0)
        assert ENERGY_FACTOR == 1 / 32
        assert res.lhs == pytest.approx(inner / 32, rel=1e-14)

    def test_eigenvectors_not_applicable(self, model):
        op = assemble_revolution_dirac(model.surface, 0.5, 256)
        for lam, vec in eig_smallest(op, 2):
            assert neck_energy_ratio(vec, lam, model, op).satisfied == "not applicable"

    @pytest.mark.parametrize("s", [0.1, 0.2, 1.5])
    def test_scale_range(self, model, s):
        op, vec = sample_synthetic(model, SYNTHETIC_SPINORS["constant"], 64)
        with pytest.raises(ValueError, match="scale"):
            neck_energy_ratio(vec, 0.0, model, op, s)


class TestGram:
    def test_single_unit_vector(self, model):
        op = assemble_revolution_dirac(model.surface, 0.5, 128)
        w = outer_region_weights(model, op)
        v = np.where(w > 0, 1.0, 0.0)
        v /= math.sqrt(np.sum(w * v**2))
        g = normalization_gram([(0.5, v)], w)
        np.testing.assert_allclose(g.matrix, [[1.0]], atol=1e-14)
        assert not g.singular

    def test_duplicate_is_singular(self, model):
        op = assemble_revolution_dirac(model.surface, 0.5, 128)
        w = outer_region_weights(model, op)
        v = np.cos(op.positions)
        g = normalization_gram([(0.5, v), (0.5, v)], w)
        assert g.rank == 1 and g.singular
        with pytest.raises(ValueError, match="singular"):
            orthonormalize([(0.5, v), (0.5, v)], w)

    def test_modes_orthogonal(self, model):
        op = assemble_revolution_dirac(model.surface, 0.5, 128)
        w = outer_region_weights(model, op)
        v = np.ones(op.dimension)
        g = normalization_gram([(0.5, v), (-0.5, v)], w)
        assert g.matrix[0, 1] == 0 and g.rank == 2

    def test_empty_region(self, model):
        op = assemble_revolution_dirac(model.surface, 0.5, 64)
        with pytest.raises(ValueError, match="empty"):
            normalization_gram([(0.5, np.ones(op.dimension))], np.zeros(op.dimension))

    def test_outer_weights_cut(self, model):
        op = assemble_revolution_dirac(model.surface, 0.5, 256)
        w = outer_region_weights(model, op)
        r = model.radial(op.positions)
        assert np.all(w[r < model.profile.r_0 / 2] == 0)
        assert np.all(w[r >= model.profile.r_0 / 2] > 0)

    def test_torus_kernel_orthonormalized(self):
        op = assemble_revolution_dirac(flat_torus_surface(), 0, 256)
        pairs = eig_smallest(op, 2)
        assert all(abs(lam) < 1e-10 for lam, _ in pairs)
        # deliberately mix the kernel basis so the Gram matrix is far from identity
        v1, v2 = pairs[0][1], pairs[1][1]
        vecs = [(0, v1 + 0.3 * v2), (0, 2.0 * v2 - v1)]
        w = uniform_weights(op)
        out = orthonormalize(vecs, w)
        g = normalization_gram(out, w)
        np.testing.assert_allclose(g.matrix, np.eye(2), atol=1e-6)
        # Gram-Schmidt oracle spans the same subspace
        gs = []
        for _, v in vecs:
            for u in gs:
                v = v - np.sum(w * u * v) * u
            gs.append(v / math.sqrt(np.sum(w * v * v)))
        proj_a = sum(np.outer(v, v) for _, v in out)
        proj_b = sum(np.outer(v, v) for v in gs)
        np.testing.assert_allclose(proj_a, proj_b, atol=1e-6 / (2 * math.pi * op.mesh))
