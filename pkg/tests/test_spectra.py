import numpy as np
import pytest
import scipy.linalg as la

from magschro import magop, mesh, spectra


@pytest.fixture(scope="module")
def grid():
    return mesh.build_grid(1, [1.0], 128)


@pytest.fixture(scope="module")
def a_zero(grid):
    return magop.MagneticPotential.zero(grid)


@pytest.fixture(scope="module")
def gen_a0(grid, a_zero):
    return magop.assemble_generator("A0", grid, a_zero)


@pytest.fixture(scope="module")
def gen_a1(grid, a_zero):
    c = np.where(grid.coords[:, 0] < 0.3, 5.0, 0.0)
    damping = magop.DampingConfig.interior(grid, c, c0=5.0,
                                           omega=grid.box_nodes([0.0], [0.29]))
    return magop.assemble_generator("A1", grid, a_zero, damping=damping)


@pytest.fixture(scope="module")
def modal(gen_a0):
    lam, V = la.eigh(gen_a0.stiffness.toarray(), np.diag(gen_a0.mass_diag))
    return lam, V


def test_resolvent_eigenfunction_oracle(gen_a0, modal):
    lam, V = modal
    mu = -(lam[0] + lam[1]) / 2.0
    g = V[:, 0].astype(complex)
    sol = spectra.resolvent_solve(gen_a0, mu, g)
    # eigen-expansion: u = g / (-i lam_1 - i mu) so ||u|| = ||g|| / |lam_1 + mu|
    got = gen_a0.norm(sol.u)
    want = gen_a0.norm(g) / abs(lam[0] + mu)
    assert abs(got - want) < 1e-8 * want
    assert sol.residual < 1e-10


def test_resolvent_zero_rhs(gen_a0):
    sol = spectra.resolvent_solve(gen_a0, -37.0, np.zeros(gen_a0.size, dtype=complex))
    assert np.max(np.abs(sol.u)) == 0.0


def test_resolvent_identity_residuals_a1(gen_a1):
    rng = np.random.default_rng(0)
    g = rng.normal(size=gen_a1.size) + 1j * rng.normal(size=gen_a1.size)
    for mu in (-150.0, -3.0, 40.0):
        sol = spectra.resolvent_solve(gen_a1, mu, g)
        assert sol.identity_residuals["real"] < 1e-9
        assert sol.identity_residuals["imag"] < 1e-9


def test_resolvent_damping_estimate(gen_a1, grid):
    """c0 ||u||^2_omega <= ||u|| ||g|| from the imaginary-part balance."""
    rng = np.random.default_rng(1)
    g = rng.normal(size=gen_a1.size) + 1j * rng.normal(size=gen_a1.size)
    sol = spectra.resolvent_solve(gen_a1, -90.0, g)
    u = sol.u
    mass = gen_a1.mass_diag
    omega_pos = np.isin(gen_a1.state_idx, gen_a1.damping.omega)
    u2_omega = float(np.sum(mass[omega_pos] * np.abs(u[omega_pos]) ** 2))
    c0 = gen_a1.damping.c0
    assert c0 * u2_omega <= gen_a1.norm(u) * gen_a1.norm(g) * (1 + 1e-9)


def test_resolvent_identity_residuals_boundary(grid, a_zero):
    split = mesh.split_boundary(grid, [-0.3])
    mn = np.einsum("ij,ij->i", split.m[split.gamma0], grid.normals[split.gamma0])
    d = np.zeros(grid.num_nodes)
    d[split.gamma0] = mn
    damping = magop.DampingConfig.boundary(grid, d, d0=float(mn.min()),
                                           gamma0_support=split.gamma0)
    rng = np.random.default_rng(2)
    for kind in ("A2", "A3"):
        gen = magop.assemble_generator(kind, grid, a_zero, damping=damping,
                                       split=split)
        g = rng.normal(size=gen.size) + 1j * rng.normal(size=gen.size)
        sol = spectra.resolvent_solve(gen, -55.0, g)
        assert sol.identity_residuals["real"] < 1e-9
        assert sol.identity_residuals["imag"] < 1e-9


def test_scan_matches_spectral_distance(gen_a0):
    mus = -np.linspace(5, 450, 100)
    scan = spectra.scan_resolvent(gen_a0, mus)
    oracle = spectra.spectral_distance_norms(gen_a0, mus)
    assert np.all(scan.ok)
    rel = np.abs(scan.norms - oracle) / oracle
    assert np.max(rel) < 1e-6


def test_scan_norm_lower_bound(gen_a1):
    """||R(i mu)|| >= 1/dist(i mu, spectrum) for any operator."""
    mus = -np.linspace(10, 300, 12)
    scan = spectra.scan_resolvent(gen_a1, mus)
    eigs = spectra.eigenvalues_dense(gen_a1)
    for mu, nrm in zip(mus, scan.norms):
        dist = np.min(np.abs(eigs - 1j * mu))
        assert nrm >= 1.0 / dist - 1e-8 * nrm


def test_scan_damped_finite(gen_a1):
    mus = np.linspace(-500, 0, 26)
    scan = spectra.scan_resolvent(gen_a1, mus)
    assert np.all(scan.ok)
    assert np.all(np.isfinite(scan.norms))
    assert not scan.failures


def test_scan_single_point_no_fit(gen_a0):
    scan = spectra.scan_resolvent(gen_a0, [-17.0])
    assert scan.fit_c is None
    assert np.isfinite(scan.norms[0])


def test_fit_recovers_synthetic_sqrt_law():
    mus = -np.linspace(10, 400, 60)
    C, K = 2.5, 0.31
    norms = C * np.exp(K * np.sqrt(np.abs(mus)))
    fit = spectra.fit_growth(mus, norms, envelope=False)
    assert abs(fit["c"] - C) < 1e-8 * C
    assert abs(fit["k"] - K) < 1e-8
    assert abs(fit["p"] - 0.5) < 1e-3


def test_fit_flat_data_reports_smallest_exponent():
    mus = -np.linspace(10, 400, 30)
    fit = spectra.fit_growth(mus, np.full(30, 7.0), envelope=False)
    assert fit["p"] <= 0.1


def test_scan_export_csv(tmp_path, gen_a0):
    scan = spectra.scan_resolvent(gen_a0, -np.linspace(5, 100, 8))
    path = tmp_path / "scan.csv"
    scan.export_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "mu,norm,fit_residual"
    assert len(lines) == 9


# -- hautus sweep ---------------------------------------------------------


def test_hautus_full_observation_exact(gen_a0, grid):
    rep = spectra.hautus_sweep(gen_a0, grid.interior_idx,
                               mu_grid=[-80.0, -10.0, 30.0], aleph0_grid=[0.0])
    assert np.all(rep.min_aleph1 == 1.0)
    assert np.all(rep.global_aleph1 == 1.0)


def test_hautus_empty_omega_rejected(gen_a0):
    with pytest.raises(ValueError):
        spectra.hautus_sweep(gen_a0, np.array([], dtype=int), [-10.0], [0.0])


def test_hautus_far_frequency_zero_aleph1(gen_a0, grid, modal):
    lam, _ = modal
    mu = -(lam[3] + lam[4]) / 2.0        # spectral gap midpoint
    dist = abs(lam[3] + mu)
    aleph0 = 1.1 / dist**2
    omega = grid.box_nodes([0.0], [0.2])
    rep = spectra.hautus_sweep(gen_a0, omega, [mu], [aleph0])
    assert rep.min_aleph1[0, 0] == 0.0


def test_hautus_monotone_feasibility(gen_a0, grid):
    omega = grid.box_nodes([0.0], [0.2])
    rep = spectra.hautus_sweep(gen_a0, omega, mu_grid=[-60.0, -14.0],
                               aleph0_grid=[0.0, 1e-4, 1e-2])
    for row in rep.min_aleph1:
        finite = np.isfinite(row)
        vals = row[finite]
        assert np.all(np.diff(vals) <= 1e-6 * np.maximum(vals[:-1], 1.0))


def test_hautus_localized_feasible(gen_a0, grid):
    omega = grid.box_nodes([0.0], [0.3])
    rep = spectra.hautus_sweep(gen_a0, omega, mu_grid=[-45.0], aleph0_grid=[1e-2])
    assert rep.feasible_anywhere
    val = rep.min_aleph1[0, 0]
    assert np.isfinite(val)
    # a coarser bisection cannot report a smaller feasible constant
    rep2 = spectra.hautus_sweep(gen_a0, omega, [-45.0], [1e-2],
                                bisection_steps=4)
    assert rep2.min_aleph1[0, 0] >= val - 1e-9


def test_hautus_infeasible_reported(gen_a0, grid):
    # too little resolvent weight: states vanishing on omega defeat any aleph1
    omega = grid.box_nodes([0.0], [0.3])
    rep = spectra.hautus_sweep(gen_a0, omega, mu_grid=[-45.0], aleph0_grid=[1e-4])
    assert not np.isfinite(rep.min_aleph1[0, 0])


def test_refinement_trend_report(grid, a_zero):
    scans = []
    for n in (64, 128):
        g = mesh.build_grid(1, [1.0], n)
        c = np.where(g.coords[:, 0] < 0.3, 5.0, 0.0)
        damp = magop.DampingConfig.interior(g, c, c0=5.0,
                                            omega=g.box_nodes([0.0], [0.29]))
        gen = magop.assemble_generator(
            "A1", g, magop.MagneticPotential.zero(g), damping=damp)
        scans.append(spectra.scan_resolvent(gen, -np.linspace(10, 300, 30)))
    trend = spectra.refinement_trend(scans)
    assert trend["grids"] == [(64,), (128,)]
    assert len(trend["window_maxima"]) == 2
    assert isinstance(trend["non_decreasing"], bool)


def test_scan_parallel_matches_serial(gen_a1):
    mus = -np.linspace(10, 200, 12)
    s1 = spectra.scan_resolvent(gen_a1, mus, jobs=1)
    s4 = spectra.scan_resolvent(gen_a1, mus, jobs=4)
    assert np.allclose(s1.norms, s4.norms, rtol=1e-12)


def test_resolvent_near_singular_condition_estimate(gen_a0, modal):
    lam, V = modal
    mu = -lam[0] * (1.0 + 1e-13)        # essentially on the spectrum
    g = V[:, 0].astype(complex)
    sol = spectra.resolvent_solve(gen_a0, mu, g)
    if sol.residual > 1e-10:
        assert sol.condition_estimate is not None
        assert sol.condition_estimate > 1e8
    else:
        assert gen_a0.norm(sol.u) > 1e8 * gen_a0.norm(g)
