"""Acceptance gate: one test and one printed PASS/FAIL line per criterion.

Run with ``pytest -v -s tests/test_acceptance.py`` to see the lines as
they complete; budgets assume a single CPU core.
"""

import time

import numpy as np

from metamorph import (EnergyParams, InterpolationConfig, RegistrationConfig,
                       ShootingConfig, apply_T_tilde, assemble_R, exp_k,
                       grids, interpolate, matching_energy,
                       matching_energy_grad, register, synthetic)
from metamorph.filtering import FilterParams, anisotropic_smooth, mass_matrix

import oracles

PARAMS = EnergyParams()


def _report(name: str, ok: bool, detail: str, elapsed: float) -> None:
    verdict = "PASS" if ok else "FAIL"
    print(f"criterion {name}: {verdict} ({detail}; {elapsed:.1f}s)")


def _random_instance(seed: int):
    """One smooth random registration instance at N=4, M=5."""
    rng = np.random.default_rng(seed)
    c0 = rng.uniform(0.35, 0.65, 2)
    shift = rng.uniform(-0.02, 0.02, 2)
    sigma = rng.uniform(0.1, 0.16)
    u0 = synthetic.gaussian_blob(5, center=tuple(c0), sigma=sigma)
    u1 = synthetic.gaussian_blob(5, center=tuple(c0 + shift), sigma=sigma)
    n = grids.num_cells(4)
    red = 0.01 * rng.normal(size=(n + 1, n + 1, 2))
    red[0] = red[-1] = 0.0
    red[:, 0] = red[:, -1] = 0.0
    return u0, u1, red, rng


def test_criterion_1_gradient_matches_finite_differences():
    t0 = time.time()
    h = 1e-6
    worst = 0.0
    for i in range(25):
        u0, u1, red, rng = _random_instance(4000 + i)
        phi = grids.Deformation.from_reduced(4, red)
        grad = matching_energy_grad(u0, u1, phi, PARAMS)
        scale = np.abs(grad).max()
        n = red.shape[0]
        for _ in range(4):
            i0 = int(rng.integers(1, n - 1))
            j0 = int(rng.integers(1, n - 1))
            c = int(rng.integers(0, 2))
            rp = red.copy()
            rp[i0, j0, c] += h
            rm = red.copy()
            rm[i0, j0, c] -= h
            ep = matching_energy(u0, u1, grids.Deformation.from_reduced(
                4, rp), PARAMS).total
            em = matching_energy(u0, u1, grids.Deformation.from_reduced(
                4, rm), PARAMS).total
            fd = (ep - em) / (2 * h)
            rel = abs(grad[i0, j0, c] - fd) / max(abs(fd), scale)
            worst = max(worst, rel)
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 60.0
    _report("1 gradient-vs-FD", ok, f"max rel err {worst:.2e}", elapsed)
    assert worst < 1e-4
    assert elapsed < 60.0


def test_criterion_2_fixed_point_certificate():
    t0 = time.time()
    u0, u1 = synthetic.three_ellipse_pair(6)
    result = exp_k(u0, u1, 8, PARAMS, ShootingConfig(),
                   reg_cfg=RegistrationConfig())
    elapsed = time.time() - t0
    worst_res = max(d.residual for d in result.diagnostics)
    worst_diff = max(d.final_diff for d in result.diagnostics)
    most_iters = max(d.iterations for d in result.diagnostics)
    ok = (worst_diff < 1e-12 and most_iters <= 200 and worst_res < 1e-8
          and elapsed < 300.0)
    _report("2 fixed-point certificate", ok,
            f"max residual {worst_res:.2e}, max iters {most_iters}", elapsed)
    assert worst_diff < 1e-12
    assert most_iters <= 200
    assert worst_res < 1e-8
    assert elapsed < 300.0


def test_criterion_3_constant_image_closed_form():
    t0 = time.time()
    u0 = grids.Image.constant(5, 0.2)
    u1 = grids.Image.constant(5, 0.3)
    result = exp_k(u0, u1, 8, PARAMS, ShootingConfig(),
                   reg_cfg=RegistrationConfig())
    elapsed = time.time() - t0
    img_err = max(np.abs(u.values - (0.2 + 0.1 * k)).max()
                  for k, u in enumerate(result.images))
    identity = grids.Deformation.identity(result.deformations[0].level)
    phi_err = max(np.abs(phi.coeffs - identity.coeffs).max()
                  for phi in result.deformations)
    ok = img_err < 1e-10 and phi_err < 1e-10 and elapsed < 10.0
    _report("3 constant closed form", ok,
            f"image err {img_err:.2e}, deformation err {phi_err:.2e}",
            elapsed)
    assert img_err < 1e-10
    assert phi_err < 1e-10
    assert elapsed < 10.0


def test_criterion_4_geodesic_consistency():
    t0 = time.time()
    u0, uK = synthetic.blob_pair(6, shift=(0.12, 0.0))
    geo = interpolate(u0, uK, PARAMS, InterpolationConfig(outer_iterations=20))
    shot = exp_k(geo.images[0], geo.images[1], 4, PARAMS, ShootingConfig(),
                 reg_cfg=RegistrationConfig(), phi1=geo.deformations[0])
    elapsed = time.time() - t0
    worst = 0.0
    for k in range(5):
        a = shot.images[k].values
        b = geo.images[k].values
        worst = max(worst, float(np.linalg.norm(a - b)
                                 / np.linalg.norm(b)))
    ok = worst < 5e-2 and elapsed < 900.0
    _report("4 geodesic consistency", ok,
            f"max rel L2 err over k<=4: {worst:.2e}", elapsed)
    assert worst < 5e-2
    assert elapsed < 900.0


def test_criterion_5_operator_equivalence_oracle():
    t0 = time.time()
    worst = 0.0
    cases = [
        (4, synthetic.blob_pair(5, shift=(0.02, 0.01)),
         synthetic.bump_deformation(4, strength=(0.02, -0.015)),
         synthetic.sine_deformation(4, (0.02, -0.015))),
        (5, synthetic.blob_pair(6, shift=(0.02, 0.01)),
         synthetic.bump_deformation(5, strength=(0.02, -0.015)),
         synthetic.sine_deformation(5, (0.02, -0.015))),
    ]
    for level, (u0, u1), phi1, phi in cases:
        produced = apply_T_tilde(phi, phi1, u0, u1, PARAMS)
        reference = oracles.apply_T_substituted(phi, phi1, u0, u1, PARAMS,
                                                points_per_axis=24)
        worst = max(worst, float(np.abs(produced - reference).max()
                                 / np.abs(reference).max()))
    elapsed = time.time() - t0
    ok = worst < 1e-3
    _report("5 operator equivalence", ok, f"max rel err {worst:.2e}",
            elapsed)
    assert worst < 1e-3


def test_criterion_6_inversion_order():
    t0 = time.time()
    from metamorph import invert_deformation
    xs = np.linspace(0.01, 0.99, 97)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], -1)
    errs = []
    for level in (4, 5):
        phi = synthetic.sine_deformation(level, (0.05, -0.04))
        inv = invert_deformation(phi)
        rt = grids.eval_deformation(
            inv, np.clip(grids.eval_deformation(phi, pts), 0.0, 1.0))
        errs.append(np.abs(rt - pts).max())
    ratio = errs[0] / errs[1]
    elapsed = time.time() - t0
    ok = 3.0 <= ratio <= 5.0
    _report("6 inversion order", ok,
            f"sup errors {errs[0]:.2e} -> {errs[1]:.2e}, ratio {ratio:.2f}",
            elapsed)
    assert 3.0 <= ratio <= 5.0


def test_criterion_7_filter_conservation():
    t0 = time.time()
    rng = np.random.default_rng(7000)
    M = mass_matrix(5)
    ones = np.ones(33 * 33)
    worst_mean = 0.0
    energy_ok = True
    for _ in range(20):
        u = grids.Image(5, rng.uniform(0.0, 1.0, (33, 33)))
        out = anisotropic_smooth(u, FilterParams(tau=1e-3, lam=0.5))
        m0 = float(M @ u.values.ravel() @ ones)
        m1 = float(M @ out.values.ravel() @ ones)
        worst_mean = max(worst_mean, abs(m1 - m0) / abs(m0))
        e0 = oracles.dirichlet_energy(u.values, 5)
        e1 = oracles.dirichlet_energy(out.values, 5)
        energy_ok = energy_ok and e1 <= e0 * (1.0 + 1e-12)
    elapsed = time.time() - t0
    ok = worst_mean < 1e-10 and energy_ok
    _report("7 filter conservation", ok,
            f"worst mean drift {worst_mean:.2e}, energy monotone "
            f"{energy_ok}", elapsed)
    assert worst_mean < 1e-10
    assert energy_ok


def test_criterion_8_energy_structure():
    t0 = time.time()
    u0, u1 = synthetic.blob_pair(6, shift=(0.02, 0.0))
    reg = register(u0, u1, PARAMS)
    bound = matching_energy(
        u0, u1, grids.Deformation.identity(reg.phi.level), PARAMS).total
    reg_ok = reg.energy <= bound * (1.0 + 1e-12)
    v0, vK = synthetic.blob_pair(5, shift=(0.06, 0.0))
    ip = interpolate(v0, vK, PARAMS, InterpolationConfig(
        segments=4, outer_iterations=3,
        registration=RegistrationConfig(coarsest_level=3)))
    mono = all(b <= a * (1.0 + 1e-12)
               for a, b in zip(ip.energies, ip.energies[1:]))
    elapsed = time.time() - t0
    ok = reg_ok and mono
    _report("8 energy structure", ok,
            f"registration {reg.energy:.2e} <= bound {bound:.2e}, "
            f"interpolation monotone {mono}", elapsed)
    assert reg_ok
    assert mono


def test_criterion_9_spd_and_quadrature_invariants():
    t0 = time.time()
    A = assemble_R(4, PARAMS)
    sym = abs(A - A.T).max()
    chol_ok = True
    try:
        np.linalg.cholesky(A.toarray())
    except np.linalg.LinAlgError:
        chol_ok = False
    rng = np.random.default_rng(9000)
    quad = grids.build_quadrature(3)
    worst = 0.0
    for _ in range(10):
        cx = rng.normal(size=6)
        cy = rng.normal(size=6)
        f = (np.polyval(cx, quad.points[:, 0])
             * np.polyval(cy, quad.points[:, 1]))
        ix = np.polyint(np.polyval(cx, np.poly1d([1, 0])))
        iy = np.polyint(np.polyval(cy, np.poly1d([1, 0])))
        exact = (ix(1) - ix(0)) * (iy(1) - iy(0))
        worst = max(worst, abs(np.sum(quad.weights * f) - exact)
                    / max(1.0, abs(exact)))
    elapsed = time.time() - t0
    ok = sym < 1e-12 and chol_ok and worst < 1e-12
    _report("9 SPD and quadrature", ok,
            f"symmetry {sym:.1e}, Cholesky {chol_ok}, quadrature err "
            f"{worst:.1e}", elapsed)
    assert sym < 1e-12
    assert chol_ok
    assert worst < 1e-12
