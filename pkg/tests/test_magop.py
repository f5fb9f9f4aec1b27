import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from magschro import magop, mesh


@pytest.fixture(scope="module")
def grid_1d():
    return mesh.build_grid(1, [1.0], 256)


@pytest.fixture(scope="module")
def grid_2d():
    return mesh.build_grid(2, [1.0, 1.0], 24)


@pytest.fixture(scope="module")
def smooth_pot(grid_1d):
    return magop.MagneticPotential.from_callable(
        grid_1d, lambda p: 0.7 + 0.3 * np.sin(2.1 * p[:, 0]))


def test_laplacian_zero_potential_spectrum(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    lap = magop.assemble_magnetic_laplacian(grid_1d, a)
    w = spla.eigsh((-lap.matrix).real.tocsc(), k=1, sigma=0, which="LM",
                   return_eigenvectors=False)
    assert abs(w[0] - np.pi**2) < 0.01


def test_constant_potential_isospectral(grid_1d):
    alpha = 0.8
    a = magop.MagneticPotential.from_samples(
        grid_1d, np.full((grid_1d.num_nodes, 1), alpha))
    z = magop.MagneticPotential.zero(grid_1d)
    lap_a = magop.assemble_magnetic_laplacian(grid_1d, a)
    lap_0 = magop.assemble_magnetic_laplacian(grid_1d, z)
    ea = np.sort(la.eigvalsh(lap_a.matrix.toarray()))
    e0 = np.sort(la.eigvalsh(lap_0.matrix.toarray()))
    assert np.max(np.abs(ea - e0)) < 1e-10 * np.max(np.abs(e0))


def test_schemes_identical_for_zero_potential(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    link = magop.assemble_magnetic_laplacian(grid_1d, a, scheme="link-phase")
    expa = magop.assemble_magnetic_laplacian(grid_1d, a, scheme="expansion")
    assert sp.linalg.norm(link.matrix - expa.matrix) < 1e-12 * sp.linalg.norm(expa.matrix)


def test_schemes_agree_second_order():
    diffs = []
    for n in (33, 65):
        g = mesh.build_grid(1, [1.0], n)
        a = magop.MagneticPotential.from_callable(
            g, lambda p: 0.5 * np.sin(2.0 * p[:, 0]))
        link = magop.assemble_magnetic_laplacian(g, a, scheme="link-phase")
        expa = magop.assemble_magnetic_laplacian(g, a, scheme="expansion")
        x = g.coords[link.state_idx, 0]
        u = np.sin(np.pi * x) * np.exp(1j * 1.3 * x)
        diffs.append(np.max(np.abs(link.matrix @ u - expa.matrix @ u)))
    assert diffs[0] / diffs[1] > 3.0


def test_laplacian_rejects_wrong_grid(grid_1d):
    other = mesh.build_grid(1, [1.0], 32)
    a = magop.MagneticPotential.zero(other)
    with pytest.raises(ValueError):
        magop.assemble_magnetic_laplacian(grid_1d, a)


def test_magnetic_gradient_linear_exact(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    u = grid_1d.coords[:, 0].astype(complex)
    g = magop.magnetic_gradient(grid_1d, a, u)
    assert np.max(np.abs(g[:, 0] - 1.0)) < 1e-12


def test_magnetic_gradient_zero_field(grid_1d, smooth_pot):
    g = magop.magnetic_gradient(grid_1d, smooth_pot,
                                np.zeros(grid_1d.num_nodes, dtype=complex))
    assert np.max(np.abs(g)) == 0.0


def test_magnetic_gradient_gauge_product_rule():
    errs = []
    alpha = 0.9
    for n in (65, 129):
        g = mesh.build_grid(1, [1.0], n)
        a = magop.MagneticPotential.from_samples(g, np.full((g.num_nodes, 1), alpha))
        x = g.coords[:, 0]
        v = np.sin(2.0 * x) + 0.3 * np.cos(5.0 * x)
        u = np.exp(-1j * alpha * x) * v
        got = magop.magnetic_gradient(g, a, u)[:, 0]
        dv = 2.0 * np.cos(2.0 * x) - 1.5 * np.sin(5.0 * x)
        want = np.exp(-1j * alpha * x) * dv
        errs.append(np.max(np.abs(got - want)))
    assert errs[0] / errs[1] > 3.0


def test_conormal_sine(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    u = np.sin(np.pi * grid_1d.coords[:, 0]).astype(complex)
    vals = magop.conormal_derivative(grid_1d, a, u, where=np.array([0]))
    # outward normal at x=0 points left: d_nu u = -u'(0) = -pi
    assert abs(abs(vals[0]) - np.pi) < 1e-3
    assert abs(vals[0] + np.pi) < 1e-3


def test_conormal_constant_exact(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    u = np.full(grid_1d.num_nodes, 2.3, dtype=complex)
    vals = magop.conormal_derivative(grid_1d, a, u)
    assert np.max(np.abs(vals)) < 1e-12


def test_conormal_pure_potential_term(grid_1d, smooth_pot):
    u = np.ones(grid_1d.num_nodes, dtype=complex)
    node = grid_1d.num_nodes - 1
    beta = smooth_pot.values[node, 0] * grid_1d.normals[node, 0]
    vals = magop.conormal_derivative(grid_1d, smooth_pot, u, where=np.array([node]))
    assert abs(vals[0] - 1j * beta) < 1e-12


def test_conormal_rejects_interior(grid_1d, smooth_pot):
    u = np.ones(grid_1d.num_nodes, dtype=complex)
    with pytest.raises(ValueError):
        magop.conormal_derivative(grid_1d, smooth_pot, u, where=np.array([5]))


def test_green_identity_sine():
    g = mesh.build_grid(1, [1.0], 128)
    a = magop.MagneticPotential.zero(g)
    f = np.sin(np.pi * g.coords[:, 0]).astype(complex)
    rep = magop.check_green_identity(g, a, f, f)
    # all three terms are analytic: (lap f | f) = -pi^2/2, ||f'||^2 = pi^2/2
    assert abs(rep.volume_term + np.pi**2 / 2) < 1e-3
    assert abs(rep.gradient_term - np.pi**2 / 2) < 1e-3
    assert rep.residual < 5e-3
    assert rep.matrix_residual is not None
    assert rep.matrix_residual < 1e-10


def test_green_identity_zero(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    z = np.zeros(grid_1d.num_nodes, dtype=complex)
    rep = magop.check_green_identity(grid_1d, a, z, z)
    assert rep.residual == 0.0


def test_green_identity_refinement():
    rng = np.random.default_rng(3)
    c = rng.normal(size=4)
    residuals = []
    for n in (65, 129):
        g = mesh.build_grid(1, [1.0], n)
        a = magop.MagneticPotential.from_callable(
            g, lambda p: 0.4 * np.cos(1.7 * p[:, 0]))
        x = g.coords[:, 0]
        f = (c[0] * np.sin(2 * x) + c[1] * np.cos(3 * x)) * np.exp(1j * c[2] * x)
        h = np.cos(2.2 * x) + 1j * c[3] * np.sin(1.1 * x)
        rep = magop.check_green_identity(g, a, f, h)
        residuals.append(rep.residual)
    assert residuals[0] / residuals[1] >= 1.8


def test_diamagnetic_real_positive(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    f = (2.0 + np.sin(3 * grid_1d.coords[:, 0])).astype(complex)
    rep = magop.check_diamagnetic(grid_1d, a, f)
    assert abs(rep.min_margin) < 1e-12


def test_diamagnetic_gauge_equality():
    g = mesh.build_grid(1, [1.0], 129)
    x = g.coords[:, 0]
    theta = np.sin(2 * x)
    rho = 1.5 + 0.5 * np.cos(3 * x)
    # potential canceling the phase gradient makes both sides equal
    a = magop.MagneticPotential.from_callable(g, lambda p: -2 * np.cos(2 * p[:, 0]))
    f = np.exp(1j * theta) * rho
    rep = magop.check_diamagnetic(g, a, f)
    assert rep.min_margin > -5e-2 * rep.h_scale / (1.0 / 128)  # ~O(h)


def test_diamagnetic_refinement():
    rng = np.random.default_rng(11)
    margins = []
    for n in (65, 129):
        g = mesh.build_grid(1, [1.0], n)
        a = magop.MagneticPotential.from_callable(
            g, lambda p: 0.8 * np.sin(2.4 * p[:, 0] + 0.3))
        x = g.coords[:, 0]
        f = (np.sin(2 * x) + 1j * np.cos(3 * x)) + 0.1
        rep = magop.check_diamagnetic(g, a, f)
        margins.append(min(rep.min_margin, 0.0))
    # negative excursions shrink at least linearly with h
    assert margins[1] >= margins[0] * 0.75 - 1e-12


def test_norm_equivalence_zero_potential(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    x = grid_1d.coords[:, 0]
    u = np.sin(np.pi * x).astype(complex)
    rep = magop.norm_equivalence_bounds(grid_1d, a, [u], grid_1d.boundary_idx)
    assert abs(rep.worst_lower_slack) < 1e-10
    assert abs(rep.worst_upper_slack) < 1e-10
    assert rep.smallness_met


def test_norm_equivalence_large_potential(grid_1d):
    a = magop.MagneticPotential.from_samples(
        grid_1d, np.full((grid_1d.num_nodes, 1), 2.0 * np.pi))
    x = grid_1d.coords[:, 0]
    u = np.sin(np.pi * x).astype(complex)
    rep = magop.norm_equivalence_bounds(grid_1d, a, [u], grid_1d.boundary_idx)
    assert not rep.smallness_met          # ||a|| kappa >= 1: lower bound vacuous


def test_norm_equivalence_constant_potential_closed_form(grid_1d):
    alpha = 0.7
    a = magop.MagneticPotential.from_samples(
        grid_1d, np.full((grid_1d.num_nodes, 1), alpha))
    x = grid_1d.coords[:, 0]
    u = np.sin(np.pi * x).astype(complex)
    rep = magop.norm_equivalence_bounds(grid_1d, a, [u], grid_1d.boundary_idx)
    # closed forms: ||grad u||^2 = pi^2/2, ||grad_a u||^2 = (pi^2 + alpha^2)/2
    assert rep.worst_lower_slack > -1e-10
    assert rep.worst_upper_slack > -1e-10
    mag = np.sqrt((np.pi**2 + alpha**2) / 2)
    grad = np.pi / np.sqrt(2)
    assert (1 - rep.coupling) * grad <= mag <= (1 + rep.coupling) * grad


def test_norm_equivalence_rejects_bad_sample(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    u = np.ones(grid_1d.num_nodes, dtype=complex)
    with pytest.raises(ValueError):
        magop.norm_equivalence_bounds(grid_1d, a, [u], grid_1d.boundary_idx)


# -- generators ---------------------------------------------------------


def damped_setup(grid, pot=None):
    a = pot if pot is not None else magop.MagneticPotential.zero(grid)
    split = mesh.split_boundary(grid, [-0.3] + [0.5] * (grid.dim - 1))
    mn = np.einsum("ij,ij->i", split.m[split.gamma0], grid.normals[split.gamma0])
    d = np.zeros(grid.num_nodes)
    d[split.gamma0] = mn
    damping = magop.DampingConfig.boundary(grid, d, d0=float(mn.min()),
                                           gamma0_support=split.gamma0)
    return a, split, damping


def test_a0_skew_adjoint(grid_1d, smooth_pot):
    gen = magop.assemble_generator("A0", grid_1d, smooth_pot)
    assert gen.hermitian_residual() < 1e-12


def test_a1_constant_damping_shift(grid_1d):
    a = magop.MagneticPotential.zero(grid_1d)
    c0 = 1.5
    damping = magop.DampingConfig.interior(
        grid_1d, np.full(grid_1d.num_nodes, c0), c0=c0,
        omega=np.arange(grid_1d.num_nodes))
    A0 = magop.assemble_generator("A0", grid_1d, a)
    A1 = magop.assemble_generator("A1", grid_1d, a, damping=damping)
    e0 = la.eigvals(A0.matrix.toarray())
    e1 = la.eigvals(A1.matrix.toarray())
    e0 = e0[np.argsort(e0.imag)]
    e1 = e1[np.argsort(e1.imag)]
    assert np.max(np.abs(e1 - (e0 - c0))) < 1e-8 * np.max(np.abs(e0))


def test_a3_zero_damping_imaginary_spectrum(grid_1d, smooth_pot):
    split = mesh.split_boundary(grid_1d, [-0.3])
    damping = magop.DampingConfig.boundary(grid_1d, np.zeros(grid_1d.num_nodes))
    gen = magop.assemble_generator("A3", grid_1d, smooth_pot, damping=damping,
                                   split=split)
    eigs = la.eigvals(gen.matrix.toarray())
    assert np.max(np.abs(eigs.real)) < 1e-10 * np.max(np.abs(eigs))


@pytest.mark.parametrize("kind", ["A1", "A2", "A3"])
def test_dissipation_identities_random_states(grid_1d, smooth_pot, kind):
    a, split, damping = damped_setup(grid_1d, smooth_pot)
    if kind == "A1":
        c = np.where(grid_1d.coords[:, 0] < 0.3, 5.0, 0.0)
        damping = magop.DampingConfig.interior(
            grid_1d, c, c0=5.0, omega=grid_1d.box_nodes([0.0], [0.29]))
    gen = magop.assemble_generator(kind, grid_1d, a, damping=damping, split=split)
    rng = np.random.default_rng(42)
    L = gen.inner_matrix
    for _ in range(5):
        u = rng.normal(size=gen.size) + 1j * rng.normal(size=gen.size)
        lhs = np.vdot(u, L @ (gen.matrix @ u)).real
        rhs = gen.dissipation(u)
        scale = np.linalg.norm(L @ (gen.matrix @ u)) * np.linalg.norm(u)
        assert abs(lhs - rhs) <= 1e-12 * scale


@pytest.mark.parametrize("kind", ["A1", "A2", "A3"])
def test_dissipativity_margins(grid_1d, smooth_pot, kind):
    a, split, damping = damped_setup(grid_1d, smooth_pot)
    if kind == "A1":
        damping = magop.DampingConfig.interior(
            grid_1d, np.where(grid_1d.coords[:, 0] < 0.3, 5.0, 0.0), c0=5.0,
            omega=grid_1d.box_nodes([0.0], [0.29]))
    gen = magop.assemble_generator(kind, grid_1d, a, damping=damping, split=split)
    lam, scale = gen.dissipativity_margin()
    assert lam <= 1e-10 * scale


def test_a2_requires_gamma0(grid_1d, smooth_pot):
    g = grid_1d
    split = mesh.BoundarySplit(
        x0=np.array([0.0]), gamma0=np.array([], dtype=int),
        gamma1=g.boundary_idx.copy(), m=g.coords.copy(), transition_pairs=0)
    damping = magop.DampingConfig.none(g)
    with pytest.raises(ValueError, match="boundary_split"):
        magop.assemble_generator("A2", g, smooth_pot, damping=damping, split=split)


def test_generator_2d_margins(grid_2d):
    a = magop.MagneticPotential.from_callable(
        grid_2d, lambda p: np.column_stack(
            [0.2 * np.sin(2 * p[:, 1]), 0.2 * np.cos(2 * p[:, 0])]))
    gen = magop.assemble_generator("A0", grid_2d, a)
    assert gen.hermitian_residual() < 1e-12


# -- gauge machinery -----------------------------------------------------


def test_gauge_conjugation_matches_shifted_potential(grid_1d, smooth_pot):
    gen = magop.assemble_generator("A0", grid_1d, smooth_pot)
    psi = 0.8 * np.sin(3 * grid_1d.coords[:, 0])
    conj = magop.gauge_transform(gen, psi)
    shifted = magop.potential_plus_edge_gradient(smooth_pot, psi)
    direct = magop.assemble_generator("A0", grid_1d, shifted)
    rel = sp.linalg.norm(conj.matrix - direct.matrix) / sp.linalg.norm(direct.matrix)
    assert rel < 1e-12


def test_gauge_constant_phase_no_op(grid_1d, smooth_pot):
    gen = magop.assemble_generator("A0", grid_1d, smooth_pot)
    conj = magop.gauge_transform(gen, np.full(grid_1d.num_nodes, 1.234))
    rel = sp.linalg.norm(conj.matrix - gen.matrix) / sp.linalg.norm(gen.matrix)
    assert rel < 1e-14


def test_gauge_1d_reduction(grid_1d, smooth_pot):
    gen = magop.assemble_generator("A0", grid_1d, smooth_pot)
    psi = magop.edge_antiderivative_1d(grid_1d, smooth_pot)
    red = magop.gauge_transform(gen, -psi)
    zero = magop.assemble_generator(
        "A0", grid_1d, magop.MagneticPotential.zero(grid_1d))
    rel = sp.linalg.norm(red.matrix - zero.matrix) / sp.linalg.norm(zero.matrix)
    assert rel < 1e-12


def test_gauge_spectral_invariance(smooth_pot, grid_1d):
    gen = magop.assemble_generator("A0", grid_1d, smooth_pot)
    psi = 0.8 * np.sin(3 * grid_1d.coords[:, 0])
    shifted = magop.potential_plus_edge_gradient(smooth_pot, psi)
    direct = magop.assemble_generator("A0", grid_1d, shifted)
    e1 = np.sort(la.eigvals(gen.matrix.toarray()).imag)
    e2 = np.sort(la.eigvals(direct.matrix.toarray()).imag)
    assert np.max(np.abs(e1 - e2)) < 1e-10 * np.max(np.abs(e1))


def test_potential_invariants(grid_1d, smooth_pot):
    assert smooth_pot.sup_norm == np.max(np.abs(smooth_pot.values))
    z = magop.MagneticPotential.zero(grid_1d)
    assert z.vanishes_on(grid_1d.boundary_idx)
    assert not smooth_pot.vanishes_on(grid_1d.boundary_idx)


def test_damping_validation(grid_1d):
    with pytest.raises(ValueError):
        magop.DampingConfig.interior(grid_1d, -np.ones(grid_1d.num_nodes))
    with pytest.raises(ValueError):
        magop.DampingConfig.interior(
            grid_1d, np.full(grid_1d.num_nodes, 0.5), c0=1.0,
            omega=np.arange(grid_1d.num_nodes))


def test_export_coo(tmp_path, grid_1d, smooth_pot):
    gen = magop.assemble_generator("A0", grid_1d, smooth_pot)
    path = tmp_path / "a0.coo"
    magop.export_coo(gen, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# kind=A0")
    row, col, re_, im_ = lines[1].split()
    entry = gen.matrix[int(row), int(col)]
    assert abs(complex(float(re_), float(im_)) - entry) < 1e-15 * abs(entry)
