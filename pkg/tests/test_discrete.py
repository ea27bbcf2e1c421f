import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st
from scipy import integrate

import spindirac.discrete as dd
from spindirac.discrete import (
    DEFAULT_TAU_CONSTANT,
    EigenSolverError,
    RevolutionSurface,
    ThresholdPolicy,
    Topology,
    assemble_circle_dirac,
    assemble_revolution_dirac,
    calibrate_tau_constant,
    circle_kernel_estimate,
    conformal_invariance_check,
    eig_smallest,
    eigen_dump_csv,
    eigenvalues_within,
    flat_torus_surface,
    kernel_dim_estimate,
    physical_eigenvalues,
    random_conformal_factor,
    round_sphere_surface,
    surface_kernel_estimate,
    surface_mode_spectra,
    surface_spectrum,
    worker_count,
)
from spindirac.exact import FlatTorus, SpinCircle, SpinStructure, circle_spectrum, flat_torus_spectrum, sphere_spectrum

B, NB = SpinStructure.BOUNDING, SpinStructure.NON_BOUNDING
TWO_PI = 2 * math.pi


class TestCircle:
    def test_flat_matches_exact(self):
        c = SpinCircle(TWO_PI, NB)
        disc = physical_eigenvalues(assemble_circle_dirac(c, None, 256), 3.2)
        np.testing.assert_allclose(disc, circle_spectrum(c, 3.2).values, atol=1e-3)

    def test_bounding_gap(self):
        vals = [v for v, _ in eig_smallest(assemble_circle_dirac(SpinCircle(TWO_PI, B), None, 256), 2)]
        np.testing.assert_allclose(sorted(vals), [-0.5, 0.5], atol=1e-3)

    def test_species_copies_paired(self):
        op = assemble_circle_dirac(SpinCircle(TWO_PI, NB), None, 128)
        vals = sorted(v for v, _ in eig_smallest(op, 3))
        np.testing.assert_allclose(vals, [-1, 0, 1], atol=1e-3)

    def test_zero_mode(self):
        lam, vec = eig_smallest(assemble_circle_dirac(SpinCircle(TWO_PI, NB), None, 256), 1)[0]
        assert abs(lam) < 1e-10

    def test_conformal_factor_spectrum(self):
        # exact spectrum of F^2 dtheta^2 on the circle: 2 pi k / int F
        F = lambda th: np.exp(0.3 * np.sin(th))
        length = integrate.quad(F, 0, TWO_PI, epsabs=1e-13)[0]
        exact = TWO_PI / length * np.arange(1, 4)
        errs = []
        for N in (128, 256, 512):
            vals = physical_eigenvalues(assemble_circle_dirac(SpinCircle(TWO_PI, NB), F, N), 3.5)
            errs.append(np.abs(vals[vals > 0.1][:3] - exact).max())
        assert errs[-1] < 1e-3
        assert math.log2(errs[0] / errs[1]) > 1.8 and math.log2(errs[1] / errs[2]) > 1.8

    def test_conformal_kernel_example(self):
        est = circle_kernel_estimate(SpinCircle(TWO_PI, NB), lambda th: np.exp(0.3 * np.sin(th)))
        assert est.count == 1 and est.confident and est.gap_ratio > 10

    @pytest.mark.parametrize("spin,F", [
        (NB, None),
        (NB, lambda th: 1 + 0.5 * np.cos(th)),
        (B, lambda th: np.exp(np.sin(2 * th))),
    ])
    def test_invariance_examples(self, spin, F):
        assert conformal_invariance_check(SpinCircle(TWO_PI, spin), F if F is not None else (lambda th: 1.0 + 0 * th))

    def test_invariance_random_factors(self):
        rng = np.random.default_rng(2024)
        for spin, expected in ((NB, 1), (B, 0)):
            for _ in range(20):
                est = circle_kernel_estimate(SpinCircle(TWO_PI, spin), random_conformal_factor(rng))
                assert est.count == expected and est.confident

    def test_species_and_layout(self):
        op = assemble_circle_dirac(SpinCircle(3.0, B), None, 32)
        assert op.species == 2 and op.dimension == 64
        assert op.corner < 0
        assert op.hermiticity_residual() <= 1e-10

    def test_errors(self):
        with pytest.raises(ValueError, match="too small"):
            assemble_circle_dirac(SpinCircle(TWO_PI), None, 8)
        with pytest.raises(ValueError, match="positive"):
            assemble_circle_dirac(SpinCircle(TWO_PI), lambda th: np.cos(th), 64)


def sphere_expected(cutoff):
    return sphere_spectrum(2, cutoff).expanded()


class TestRevolution:
    def test_sphere_spectrum(self):
        vals = surface_spectrum(round_sphere_surface(), 2.5, 512, 2.5)
        np.testing.assert_allclose(vals, sphere_expected(2.5), atol=1e-3)

    def test_sphere_radius_scaling(self):
        vals = surface_spectrum(round_sphere_surface(2.0), 2.5, 512, 1.2)
        np.testing.assert_allclose(vals, sphere_expected(2.5) / 2, atol=1e-3)

    def test_sphere_convergence_order(self):
        errs, hs = [], []
        for N in (64, 128, 256):
            op = assemble_revolution_dirac(round_sphere_surface(), 0.5, N)
            lam = sorted(abs(v) for v, _ in eig_smallest(op, 2))[0]
            errs.append(abs(lam - 1.0))
            hs.append(op.mesh)
        order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert order >= 1.8

    def test_mode_truncation(self):
        low = surface_spectrum(round_sphere_surface(), 2.5, 256, 3.0)
        high = surface_spectrum(round_sphere_surface(), 4.5, 256, 3.0)
        np.testing.assert_array_equal(low, high)

    def test_torus_10(self):
        s = flat_torus_surface(theta_spin=B, t_spin=NB)
        vals = surface_spectrum(s, 3.5, 256, 1.0)
        assert np.abs(vals).min() == pytest.approx(0.5, abs=1e-3)
        exact = flat_torus_spectrum(FlatTorus(TWO_PI * np.eye(2), (1, 0)), 1.0).expanded()
        np.testing.assert_allclose(vals, exact, atol=1e-3)

    def test_torus_kernel(self):
        est, _ = surface_kernel_estimate(flat_torus_surface(), 8, 256)
        assert est.count == 2 and est.confident

    def test_torus_11_gap(self):
        est, _ = surface_kernel_estimate(flat_torus_surface(theta_spin=B, t_spin=B), 8.5, 256)
        assert est.count == 0 and est.gap_ratio >= 50

    def test_sphere_kernel(self):
        est, _ = surface_kernel_estimate(round_sphere_surface(), 6.5, 256)
        assert est.count == 0 and est.confident

    def test_cap_grid_offsets(self):
        op = assemble_revolution_dirac(round_sphere_surface(), 1.5, 32)
        assert op.positions[0] == pytest.approx(op.mesh / 2)
        assert op.tridiagonal and op.component[0] == 0
        op = assemble_revolution_dirac(round_sphere_surface(), -1.5, 32)
        assert op.component[0] == 1

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-0.4, 0.4), st.floats(-0.3, 0.3), st.sampled_from([0.5, 1.5, -2.5]),
           st.sampled_from([B, NB]))
    def test_hermitian_and_mirror_symmetric(self, a, b, m, t_spin):
        prof = lambda t: 1 + a * np.cos(t) + b * np.sin(2 * t)
        s = RevolutionSurface(prof, TWO_PI, Topology.PERIODIC, B, t_spin)
        op = assemble_revolution_dirac(s, m, 64)
        assert op.hermiticity_residual() <= 1e-10
        vals = np.linalg.eigvalsh(op.assemble())
        np.testing.assert_allclose(np.sort(vals), np.sort(-vals), atol=1e-9)

    def test_mode_parity(self):
        with pytest.raises(ValueError, match="incompatible"):
            assemble_revolution_dirac(round_sphere_surface(), 1, 64)
        with pytest.raises(ValueError, match="incompatible"):
            assemble_revolution_dirac(flat_torus_surface(), 0.5, 64)

    def test_validation(self):
        with pytest.raises(ValueError, match="positive"):
            RevolutionSurface(lambda t: np.cos(t), TWO_PI)
        with pytest.raises(ValueError, match="cap"):
            RevolutionSurface(lambda t: 2 * np.sin(t), math.pi, Topology.TWO_CAPS)
        with pytest.raises(ValueError, match="bounding"):
            RevolutionSurface(np.sin, math.pi, Topology.TWO_CAPS, NB)
        with pytest.raises(ValueError, match="periodicity"):
            RevolutionSurface(lambda t: 1 + 0.1 * t, TWO_PI)

    def test_modes(self):
        assert round_sphere_surface().modes(2.5) == [-2.5, -1.5, -0.5, 0.5, 1.5, 2.5]
        assert flat_torus_surface().modes(2) == [-2, -1, 0, 1, 2]


class TestEigSmallest:
    def test_diagonal(self):
        vals = [v for v, _ in eig_smallest(np.diag([3.0, 1.0, 2.0]), 2)]
        assert vals == [1.0, 2.0]

    def test_ordering_by_magnitude(self):
        vals = [v for v, _ in eig_smallest(np.diag([-0.5, 2.0, 0.5, -3.0]), 3)]
        assert vals == [-0.5, 0.5, 2.0]

    def test_k_range(self):
        with pytest.raises(ValueError):
            eig_smallest(np.eye(3), 4)

    def test_shift_invert_matches_dense(self):
        op = assemble_circle_dirac(SpinCircle(TWO_PI, B), lambda th: 1 + 0.3 * np.cos(th), 1024)
        assert op.dimension > dd.DENSE_LIMIT
        fast = np.array([v for v, _ in eig_smallest(op, 6)])
        dense = np.linalg.eigvalsh(op.assemble())
        dense = dense[::2]  # full sorted spectrum: copies sit at (2j, 2j+1)
        ref = dense[np.lexsort((dense, np.abs(dense)))][:6]
        np.testing.assert_allclose(fast, ref, atol=1e-9)

    def test_residuals(self):
        op = assemble_revolution_dirac(round_sphere_surface(), 0.5, 128)
        for lam, v in eig_smallest(op, 4):
            assert np.linalg.norm(op.apply(v) - lam * v) <= 1e-8 * op.norm()

    def test_failure_reported(self, monkeypatch):
        def broken(*a, **k):
            raise spla.ArpackNoConvergence("no convergence", np.array([]), np.array([]))
        monkeypatch.setattr(dd.spla, "eigsh", broken)
        op = assemble_circle_dirac(SpinCircle(TWO_PI, B), None, 1024)
        with pytest.raises(EigenSolverError):
            eig_smallest(op, 2)


class TestKernelEstimate:
    def test_needs_two_meshes(self):
        with pytest.raises(ValueError):
            kernel_dim_estimate({0.1: [0.0]})

    def test_mesh_ratio(self):
        with pytest.raises(ValueError, match="factor 2"):
            kernel_dim_estimate({0.1: [0.0], 0.3: [0.0]})

    def test_unstable(self):
        est = kernel_dim_estimate({0.01: [0.0, 1.0], 0.02: [0.0, 1e-4, 1.0]})
        assert est.verdict == "unstable" and not est.confident

    def test_low_gap(self):
        tau = ThresholdPolicy().tau(0.01)
        est = kernel_dim_estimate({0.01: [0.0, 3 * tau], 0.02: [0.0, 1.0]})
        assert est.verdict == "low-gap" and est.count == 1

    def test_species_division(self):
        est = kernel_dim_estimate({0.01: [0.0, 0.0, 1.0], 0.02: [0.0, 0.0, 1.0]}, species=2)
        assert est.count == 1 and est.confident
        est = kernel_dim_estimate({0.01: [0.0, 1.0], 0.02: [0.0, 1.0]}, species=2)
        assert est.verdict == "unstable"

    def test_calibration_contains_default(self):
        lo, hi = calibrate_tau_constant(256)
        assert lo < DEFAULT_TAU_CONSTANT < hi

    def test_tampered_threshold_breaks_torus(self):
        est, _ = surface_kernel_estimate(flat_torus_surface(), 8, 256, ThresholdPolicy(c_tau=1e-14))
        assert est.count != 2 or not est.confident


class TestParallelAndDump:
    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv("SPINDIRAC_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.delenv("SPINDIRAC_THREADS")
        assert worker_count() >= 1

    def test_thread_count_does_not_change_results(self, monkeypatch):
        monkeypatch.setenv("SPINDIRAC_THREADS", "1")
        one = surface_mode_spectra(round_sphere_surface(), 3.5, 128)
        monkeypatch.setenv("SPINDIRAC_THREADS", "4")
        four = surface_mode_spectra(round_sphere_surface(), 3.5, 128)
        assert eigen_dump_csv(one) == eigen_dump_csv(four)

    def test_dump_columns(self):
        text = eigen_dump_csv(surface_mode_spectra(round_sphere_surface(), 0.5, 64, k=2))
        lines = text.splitlines()
        assert lines[0] == "mode,mesh_h,index,eigenvalue,residual"
        assert len(lines) == 1 + 2 * 2
        assert lines[1].startswith("-0.5,")

    def test_eigenvalues_within(self):
        op = assemble_revolution_dirac(round_sphere_surface(), 0.5, 256)
        vals = eigenvalues_within(op, 2.5)
        np.testing.assert_allclose(vals, [-2, -1, 1, 2], atol=1e-3)
