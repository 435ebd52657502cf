"""Implicit anisotropic diffusion step on the FEM image space."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from metamorph import FilterParams, anisotropic_smooth, grids, synthetic, \
    tau_schedule
from metamorph.filtering import mass_matrix, stiffness_matrix

import oracles


class TestMatrices:
    def test_mass_matrix_row_sums_integrate_to_area(self):
        M = mass_matrix(4)
        assert abs(M.sum() - 1.0) < 1e-13

    def test_mass_matrix_symmetric(self):
        M = mass_matrix(4)
        assert abs(M - M.T).max() < 1e-14

    def test_stiffness_symmetric_and_singular_on_constants(self):
        J = synthetic.gaussian_blob(4)
        S = stiffness_matrix(J, 0.5)
        assert abs(S - S.T).max() < 1e-14
        ones = np.ones(S.shape[0])
        assert np.abs(S @ ones).max() < 1e-13

    def test_edge_weights_reduce_diffusion_across_gradients(self):
        # with a steep image the anisotropic stiffness energy is smaller
        # than the isotropic one (weights <= 1 and < 1 on edges)
        J = synthetic.three_ellipse_scene(5)
        flat = grids.Image.constant(5, 0.5)
        S_edge = stiffness_matrix(J, 0.5)
        S_flat = stiffness_matrix(flat, 0.5)
        v = J.values.ravel()
        assert v @ (S_edge @ v) < v @ (S_flat @ v)


class TestSmoothingStep:
    def test_constant_is_fixed_point(self):
        u = grids.Image.constant(5, 0.42)
        out = anisotropic_smooth(u, FilterParams(tau=1e-3, lam=0.5))
        assert np.abs(out.values - 0.42).max() < 1e-12

    def test_zero_tau_is_identity(self):
        u = synthetic.gaussian_blob(5)
        out = anisotropic_smooth(u, FilterParams(tau=0.0, lam=0.5))
        assert np.abs(out.values - u.values).max() < 1e-10

    def test_preserves_mass_weighted_mean(self, rng):
        M = mass_matrix(5)
        for _ in range(5):
            u = grids.Image(5, rng.uniform(0.0, 1.0, (33, 33)))
            out = anisotropic_smooth(u, FilterParams(tau=1e-3, lam=0.5))
            m0 = float(M @ u.values.ravel() @ np.ones(33 * 33))
            m1 = float(M @ out.values.ravel() @ np.ones(33 * 33))
            assert abs(m1 - m0) / abs(m0) < 1e-10

    def test_never_increases_dirichlet_energy(self, rng):
        for _ in range(5):
            u = grids.Image(5, rng.uniform(0.0, 1.0, (33, 33)))
            out = anisotropic_smooth(u, FilterParams(tau=1e-3, lam=0.5))
            e0 = oracles.dirichlet_energy(u.values, 5)
            e1 = oracles.dirichlet_energy(out.values, 5)
            assert e1 <= e0 * (1.0 + 1e-12)

    def test_smoothing_contracts_oscillations(self, rng):
        vals = 0.5 + 0.3 * np.sign(rng.normal(size=(33, 33)))
        u = grids.Image(5, vals)
        out = anisotropic_smooth(u, FilterParams(tau=1e-2, lam=0.5))
        assert out.values.std() < u.values.std()


class TestSchedule:
    def test_reference_values(self):
        assert abs(tau_schedule(2) - 1e-3) < 1e-18
        assert abs(tau_schedule(3) - 0.8e-3) < 1e-18
        assert abs(tau_schedule(4) - 0.64e-3) < 1e-18

    @given(k=st.integers(2, 40))
    @settings(max_examples=20, deadline=None)
    def test_monotone_decay(self, k):
        assert tau_schedule(k + 1) < tau_schedule(k)
