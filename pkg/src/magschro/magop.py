"""Magnetic differential operators and the four evolution generators.

The magnetic Laplacian sum_j (d_j + i a_j)^2 is discretized two ways:

* ``link-phase``: finite differences with complex phase factors exp(i h a)
  on edges.  The resulting operator is Hermitian against the trapezoid mass
  matrix by construction, so skew-adjointness of the conservative generator,
  dissipativity of the damped ones, and gauge covariance all hold at machine
  precision rather than at discretization order.
* ``expansion``: term-by-term assembly of Delta + 2i a.grad + i div(a) - |a|^2
  with centered stencils.  Second-order consistent; used for cross-validation
  and for full-grid operator application on fields with boundary data.

Generators (state space in parentheses):

* A0 = i Delta_a, Dirichlet on the whole boundary (interior nodes),
* A1 = i Delta_a - c, same state space,
* A2 = i Delta_a with flux + i d Delta_a u = 0 on gamma0, Dirichlet on gamma1
  (interior + gamma0 nodes), measured against the magnetic stiffness form,
* A3 = i Delta_a with flux - i d u = 0 on gamma0, Dirichlet on gamma1.

Boundary conditions on gamma0 are eliminated through the discrete flux
balance M.(Delta_a u) = -S u + sigma.flux, which is the ghost-node
elimination written against the quadrature weights; it makes the energy
dissipation identities exact algebraic statements:

    Re (u | A1 u)_M = -||sqrt(c) u||^2,
    Re (A2 u | u)_S = -||sqrt(d) Delta_a u||^2 on gamma0,
    Re (u | A3 u)_M = -||sqrt(d) u||^2 on gamma0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Grid, BoundarySplit, poincare_constant

_GEN_COUNTER = itertools.count()


# ---------------------------------------------------------------------------
# one-axis stencils and their tensor extensions


def _d1_matrix(n, h):
    """Second-order first derivative; one-sided rows at both ends."""
    main = np.zeros(n)
    lower = np.full(n - 1, -1.0 / (2 * h))
    upper = np.full(n - 1, 1.0 / (2 * h))
    D = sp.diags([lower, main, upper], [-1, 0, 1], format="lil")
    D[0, 0], D[0, 1], D[0, 2] = -3.0 / (2 * h), 4.0 / (2 * h), -1.0 / (2 * h)
    D[-1, -1], D[-1, -2], D[-1, -3] = 3.0 / (2 * h), -4.0 / (2 * h), 1.0 / (2 * h)
    return D.tocsr()


def _d2_matrix(n, h):
    """Second derivative; one-sided second-order rows at both ends."""
    h2 = h * h
    D = sp.diags(
        [np.full(n - 1, 1.0 / h2), np.full(n, -2.0 / h2), np.full(n - 1, 1.0 / h2)],
        [-1, 0, 1],
        format="lil",
    )
    D[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / h2
    D[-1, -4:] = np.array([-1.0, 4.0, -5.0, 2.0]) / h2
    return D.tocsr()


def _axis_matrix(grid, mat1d, axis):
    if grid.dim == 1:
        return mat1d
    eye_other = sp.identity(grid.n[1 - axis], format="csr")
    if axis == 0:
        return sp.kron(mat1d, eye_other, format="csr")
    return sp.kron(eye_other, mat1d, format="csr")


_GRAD_CACHE = {}


def gradient_matrices(grid):
    """Per-axis first-derivative matrices over all grid nodes."""
    key = id(grid)
    hit = _GRAD_CACHE.get(key)
    if hit is not None and hit[0] is grid:
        return hit[1]
    mats = tuple(
        _axis_matrix(grid, _d1_matrix(grid.n[ax], grid.h[ax]), ax)
        for ax in range(grid.dim)
    )
    _GRAD_CACHE[key] = (grid, mats)
    return mats


def second_derivative_matrices(grid):
    return tuple(
        _axis_matrix(grid, _d2_matrix(grid.n[ax], grid.h[ax]), ax)
        for ax in range(grid.dim)
    )


def _edges(grid, axis):
    """Tail/head flat indices and midpoint coordinates of edges along one axis."""
    idx = np.arange(grid.num_nodes).reshape(grid.shape)
    if grid.dim == 1:
        tails, heads = idx[:-1], idx[1:]
    elif axis == 0:
        tails, heads = idx[:-1, :].ravel(), idx[1:, :].ravel()
    else:
        tails, heads = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    mids = grid.coords[tails].copy()
    mids[:, axis] += grid.h[axis] / 2.0
    return tails, heads, mids


def _edge_transverse_weights(grid, axis):
    """Quadrature weight of each edge: h_axis times the transverse trapezoid weight."""
    tails, _, _ = _edges(grid, axis)
    if grid.dim == 1:
        return np.full(tails.shape[0], grid.h[0])
    other = 1 - axis
    w_other = np.full(grid.n[other], grid.h[other])
    w_other[0] = w_other[-1] = grid.h[other] / 2.0
    mi = np.unravel_index(tails, grid.shape)
    return grid.h[axis] * w_other[mi[other]]


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True, eq=False)
class MagneticPotential:
    """Real vector potential sampled at nodes and at edge midpoints."""

    grid: Grid
    values: np.ndarray              # (N, dim)
    edge_values: tuple              # per axis, aligned with _edges(grid, axis)
    div: np.ndarray                 # (N,), centered differences of the samples
    sup_norm: float
    a_dot_nu: np.ndarray            # aligned with grid.boundary_idx

    @classmethod
    def from_samples(cls, grid, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape != (grid.num_nodes, grid.dim):
            raise ValueError(
                f"potential samples must have shape {(grid.num_nodes, grid.dim)}, "
                f"got {values.shape}"
            )
        edges = []
        for ax in range(grid.dim):
            tails, heads, _ = _edges(grid, ax)
            edges.append(0.5 * (values[tails, ax] + values[heads, ax]))
        return cls._finish(grid, values, tuple(edges))

    @classmethod
    def from_callable(cls, grid, fn):
        """Sample a callable coords -> components at nodes and edge midpoints."""
        values = cls._eval(fn, grid.coords, grid.dim)
        edges = []
        for ax in range(grid.dim):
            _, _, mids = _edges(grid, ax)
            edges.append(cls._eval(fn, mids, grid.dim)[:, ax])
        return cls._finish(grid, values, tuple(edges))

    @classmethod
    def zero(cls, grid):
        return cls.from_samples(grid, np.zeros((grid.num_nodes, grid.dim)))

    @staticmethod
    def _eval(fn, pts, dim):
        out = np.asarray(fn(pts), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape != (pts.shape[0], dim):
            raise ValueError("potential callable returned wrong shape")
        return out

    @classmethod
    def _finish(cls, grid, values, edges):
        values = np.array(values, dtype=float, copy=True)
        grads = gradient_matrices(grid)
        div = np.zeros(grid.num_nodes)
        for ax in range(grid.dim):
            div += grads[ax] @ values[:, ax]
        b = grid.boundary_idx
        a_dot_nu = np.einsum("ij,ij->i", values[b], grid.normals[b])
        pot = cls(
            grid=grid,
            values=values,
            edge_values=edges,
            div=div,
            sup_norm=float(np.max(np.linalg.norm(values, axis=1))),
            a_dot_nu=a_dot_nu,
        )
        values.setflags(write=False)
        return pot

    def vanishes_on(self, nodes, tol=1e-14):
        """True when both the vector and its normal component vanish on the set."""
        nodes = np.asarray(nodes, dtype=int)
        if nodes.size == 0:
            return True
        if np.max(np.abs(self.values[nodes])) > tol:
            return False
        pos = {int(n): i for i, n in enumerate(self.grid.boundary_idx)}
        bpos = [pos[int(n)] for n in nodes if int(n) in pos]
        return not bpos or np.max(np.abs(self.a_dot_nu[bpos])) <= tol


@dataclass(frozen=True, eq=False)
class DampingConfig:
    """Interior damping c with floor c0 on omega; boundary damping d with floor d0."""

    c: np.ndarray
    c0: float
    omega: np.ndarray
    d: np.ndarray
    d0: float
    gamma0_support: np.ndarray

    def __post_init__(self):
        for name in ("c", "d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("omega", "gamma0_support"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=int))
        if np.any(self.c < 0):
            raise ValueError("interior damping must be nonnegative")
        if np.any(self.d < 0):
            raise ValueError("boundary damping must be nonnegative")
        if self.omega.size and self.c0 > 0 and np.min(self.c[self.omega]) < self.c0 - 1e-14:
            raise ValueError("c must dominate its floor c0 on omega")
        if (self.gamma0_support.size and self.d0 > 0
                and np.min(self.d[self.gamma0_support]) < self.d0 - 1e-14):
            raise ValueError("d must dominate its floor d0 on gamma0 support")

    @classmethod
    def none(cls, grid):
        z = np.zeros(grid.num_nodes)
        e = np.array([], dtype=int)
        return cls(c=z, c0=0.0, omega=e, d=z.copy(), d0=0.0, gamma0_support=e)

    @classmethod
    def interior(cls, grid, c_values, c0=0.0, omega=None):
        c = np.asarray(c_values, dtype=float)
        omega = np.asarray(omega, dtype=int) if omega is not None else np.nonzero(c > 0)[0]
        base = cls.none(grid)
        return replace(base, c=c, c0=float(c0), omega=omega)

    @classmethod
    def boundary(cls, grid, d_values, d0=0.0, gamma0_support=None):
        d = np.asarray(d_values, dtype=float)
        sup = (np.asarray(gamma0_support, dtype=int) if gamma0_support is not None
               else np.nonzero(d > 0)[0])
        base = cls.none(grid)
        return replace(base, d=d, d0=float(d0), gamma0_support=sup)


# ---------------------------------------------------------------------------
# assembly


def _positions(num_nodes, state_idx):
    pos = np.full(num_nodes, -1, dtype=int)
    pos[state_idx] = np.arange(state_idx.size)
    return pos


def magnetic_stiffness(grid, a, state_idx):
    """Hermitian form sum_edges w_e |exp(i theta_e) u_head - u_tail|^2 / h^2.

    Nodes outside ``state_idx`` are eliminated (their values are zero); edges
    touching them contribute only the surviving diagonal entry.
    """
    pos = _positions(grid.num_nodes, state_idx)
    rows, cols, vals = [], [], []
    for ax in range(grid.dim):
        tails, heads, _ = _edges(grid, ax)
        w = _edge_transverse_weights(grid, ax) / grid.h[ax] ** 2
        theta = grid.h[ax] * a.edge_values[ax]
        phase = np.exp(1j * theta)
        pt, ph = pos[tails], pos[heads]
        both = (pt >= 0) & (ph >= 0)
        rows += [pt[both], ph[both], pt[both], ph[both]]
        cols += [pt[both], ph[both], ph[both], pt[both]]
        vals += [w[both] + 0j, w[both] + 0j, -w[both] * phase[both],
                 -w[both] * np.conj(phase[both])]
        tail_only = (pt >= 0) & (ph < 0)
        rows.append(pt[tail_only]); cols.append(pt[tail_only]); vals.append(w[tail_only] + 0j)
        head_only = (pt < 0) & (ph >= 0)
        rows.append(ph[head_only]); cols.append(ph[head_only]); vals.append(w[head_only] + 0j)
    n = state_idx.size
    S = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    return S


def laplacian_stencil_full(grid, a=None):
    """Expansion-scheme Delta_a over all grid nodes (one-sided boundary rows)."""
    d2 = second_derivative_matrices(grid)
    L = sum(d2[1:], d2[0]).astype(complex)
    if a is not None:
        grads = gradient_matrices(grid)
        for ax in range(grid.dim):
            L = L + 2j * sp.diags(a.values[:, ax]) @ grads[ax]
        L = L + sp.diags(1j * a.div - np.sum(a.values**2, axis=1))
    return L.tocsr()


@dataclass(eq=False)
class GeneratorMatrix:
    """A complex square operator together with the inner product it lives in.

    Immutable after assembly; operator application is pure, so instances can
    be shared across parallel workers without synchronization.
    """

    kind: str                      # A0 | A1 | A2 | A3 | laplacian
    matrix: sp.csr_matrix
    scheme: str                    # link-phase | expansion
    grid: Grid
    state_idx: np.ndarray          # full-grid node indices of the unknowns
    mass_diag: np.ndarray          # trapezoid volume weights at the unknowns
    stiffness: sp.csr_matrix       # magnetic stiffness on the unknowns
    inner_kind: str                # mass | stiffness
    lap_matrix: sp.csr_matrix = None   # discrete Delta_a including the BC elimination
    gamma0_pos: np.ndarray = None      # positions of gamma0 nodes in the state vector
    sigma_d: np.ndarray = None         # surface weight * d at those positions
    damping_c: np.ndarray = None       # c at the unknowns (A1)
    potential: MagneticPotential = None
    damping: DampingConfig = None
    split: BoundarySplit = None
    uid: int = field(default_factory=lambda: next(_GEN_COUNTER))

    # -- inner products ------------------------------------------------

    @property
    def size(self):
        return self.matrix.shape[0]

    @property
    def inner_matrix(self):
        if self.inner_kind == "mass":
            return sp.diags(self.mass_diag).tocsr()
        return self.stiffness

    def inner_product(self, u, v):
        """(u | v) in the generator's inner product (integral of u conj v)."""
        if self.inner_kind == "mass":
            return complex(np.vdot(v, self.mass_diag * u))
        return complex(np.vdot(v, self.stiffness @ u))

    def norm(self, u):
        return float(np.sqrt(max(self.inner_product(u, u).real, 0.0)))

    def mass_norm(self, u):
        return float(np.sqrt(max(np.vdot(u, self.mass_diag * u).real, 0.0)))

    def stiffness_norm(self, u):
        return float(np.sqrt(max(np.vdot(u, self.stiffness @ u).real, 0.0)))

    def energy(self, u):
        return 0.5 * self.norm(u) ** 2

    # -- state embedding -------------------------------------------------

    def embed(self, u):
        """Zero-extend a state vector to the full grid."""
        full = np.zeros(self.grid.num_nodes, dtype=complex)
        full[self.state_idx] = u
        return full

    def restrict(self, full):
        return np.asarray(full)[self.state_idx]

    # -- dynamics helpers -------------------------------------------------

    def apply(self, u):
        return self.matrix @ u

    def laplacian_apply(self, u):
        return self.lap_matrix @ u

    def dissipation(self, u):
        """The exact algebraic right-hand side of the energy law, at state u."""
        if self.kind in ("A0", "laplacian"):
            return 0.0
        if self.kind == "A1":
            return -float(np.sum(self.mass_diag * self.damping_c * np.abs(u) ** 2))
        if self.kind == "A3":
            tr = u[self.gamma0_pos]
            return -float(np.sum(self.sigma_d * np.abs(tr) ** 2))
        if self.kind == "A2":
            w = (self.lap_matrix @ u)[self.gamma0_pos]
            return -float(np.sum(self.sigma_d * np.abs(w) ** 2))
        raise ValueError(f"no dissipation law for kind {self.kind}")

    # -- structural checks -------------------------------------------------

    def hermitian_residual(self):
        """|| L A + (L A)^H ||_F / || L A ||_F with L the declared inner product."""
        B = (self.inner_matrix @ self.matrix).tocsr()
        num = sp.linalg.norm(B + B.getH())
        den = sp.linalg.norm(B)
        return float(num / den)

    def dissipativity_margin(self):
        """Largest eigenvalue of the Hermitian part of L A, relative to ||L A||_F.

        Nonpositive (to eigensolver accuracy) certifies Re (u | A u)_L <= 0
        for every u.
        """
        B = (self.inner_matrix @ self.matrix).tocsr()
        H = (B + B.getH()) * 0.5
        scale = sp.linalg.norm(B)
        H = H.tocsr()
        off = H - sp.diags(H.diagonal())
        if sp.linalg.norm(off) <= 1e-15 * max(scale, 1.0):
            lam = float(np.max(H.diagonal().real))
        elif H.shape[0] <= 600:
            lam = float(np.linalg.eigvalsh(H.toarray())[-1])
        else:
            shift = 1e-8 * max(scale, 1.0)
            try:
                lam = float(
                    spla.eigsh(H, k=1, sigma=shift, which="LM",
                               return_eigenvectors=False)[0]
                )
            except Exception:
                lam = float(
                    spla.eigsh(H, k=1, which="LA", return_eigenvectors=False,
                               maxiter=5000)[0]
                )
        return lam, float(scale)


def assemble_magnetic_laplacian(grid, a, scheme="link-phase", dirichlet="all"):
    """Discrete Delta_a with homogeneous Dirichlet rows eliminated.

    ``dirichlet`` is "all" (whole boundary) or an explicit node set.
    """
    if a.grid is not grid:
        raise ValueError("potential was sampled on a different grid")
    if isinstance(dirichlet, str):
        if dirichlet != "all":
            raise ValueError("dirichlet must be 'all' or a node set")
        eliminated = grid.boundary_idx
    else:
        eliminated = np.asarray(dirichlet, dtype=int)
    state_idx = np.setdiff1d(np.arange(grid.num_nodes), eliminated)
    mass = grid.volume_weights[state_idx]
    S = magnetic_stiffness(grid, a, state_idx)
    if scheme == "link-phase":
        lap = (sp.diags(-1.0 / mass) @ S).tocsr()
    elif scheme == "expansion":
        full = laplacian_stencil_full(grid, a)
        lap = full[state_idx][:, state_idx].tocsr()
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return GeneratorMatrix(
        kind="laplacian", matrix=lap, scheme=scheme, grid=grid,
        state_idx=state_idx, mass_diag=mass, stiffness=S, inner_kind="mass",
        lap_matrix=lap, potential=a,
    )


def assemble_generator(kind, grid, a, damping=None, split=None, scheme="link-phase"):
    """Assemble one of the generators A0..A3 on the given grid."""
    if kind not in ("A0", "A1", "A2", "A3"):
        raise ValueError(f"unknown generator kind {kind!r}")
    if damping is None:
        damping = DampingConfig.none(grid)

    if kind in ("A0", "A1"):
        lapgen = assemble_magnetic_laplacian(grid, a, scheme=scheme, dirichlet="all")
        state, mass, S = lapgen.state_idx, lapgen.mass_diag, lapgen.stiffness
        lap = lapgen.matrix
        A = (1j * lap).tocsr()
        cvals = None
        if kind == "A1":
            cvals = damping.c[state]
            A = (A - sp.diags(cvals)).tocsr()
        return GeneratorMatrix(
            kind=kind, matrix=A, scheme=scheme, grid=grid, state_idx=state,
            mass_diag=mass, stiffness=S, inner_kind="mass", lap_matrix=lap,
            damping_c=cvals, potential=a, damping=damping, split=split,
        )

    # boundary-damped kinds need the observation split
    if split is None:
        raise ValueError("boundary_split: A2/A3 require a boundary split")
    if split.gamma0_empty:
        raise ValueError("boundary_split: gamma0 is empty, no damped boundary part")
    if scheme != "link-phase":
        raise ValueError("boundary elimination is implemented for the link-phase scheme")

    state = np.sort(np.concatenate([grid.interior_idx, split.gamma0]))
    mass = grid.volume_weights[state]
    S = magnetic_stiffness(grid, a, state)
    pos = _positions(grid.num_nodes, state)
    g0_pos = pos[split.gamma0]
    sigma = grid.surface_weights[split.gamma0]
    dvals = damping.d[split.gamma0]
    sigma_d = sigma * dvals

    D = np.zeros(state.size)
    D[g0_pos] = sigma_d
    if kind == "A3":
        # M Delta u = -S u + i sigma d u on gamma0; A3 = i Delta
        lap = (sp.diags(1.0 / mass) @ (-S + 1j * sp.diags(D))).tocsr()
        A = (1j * lap).tocsr()
    else:
        # flux = -i d Delta u: (M + i sigma d) Delta u = -S u
        lap = (sp.diags(1.0 / (mass + 1j * D)) @ (-S)).tocsr()
        A = (1j * lap).tocsr()
    return GeneratorMatrix(
        kind=kind, matrix=A, scheme="link-phase", grid=grid, state_idx=state,
        mass_diag=mass, stiffness=S,
        inner_kind="stiffness" if kind == "A2" else "mass",
        lap_matrix=lap, gamma0_pos=g0_pos, sigma_d=sigma_d,
        potential=a, damping=damping, split=split,
    )


# ---------------------------------------------------------------------------
# node-wise operators


def magnetic_gradient(grid, a, u):
    """(grad + i a) u at every node; one-sided stencils on the boundary."""
    u = np.asarray(u, dtype=complex)
    grads = gradient_matrices(grid)
    out = np.empty((grid.num_nodes, grid.dim), dtype=complex)
    for ax in range(grid.dim):
        out[:, ax] = grads[ax] @ u + 1j * a.values[:, ax] * u
    return out


def conormal_derivative(grid, a, u, where=None):
    """(d_nu + i a.nu) u at the requested boundary nodes."""
    u = np.asarray(u, dtype=complex)
    nodes = grid.boundary_idx if where is None else np.asarray(where, dtype=int)
    if np.any(grid.owner_face[nodes] < 0):
        raise ValueError("conormal derivative requested at non-boundary nodes")
    grads = gradient_matrices(grid)
    full = np.zeros(grid.num_nodes, dtype=complex)
    for ax in range(grid.dim):
        du = grads[ax] @ u
        sel = grid.normals[nodes, ax] != 0.0
        full[nodes[sel]] = grid.normals[nodes[sel], ax] * du[nodes[sel]]
    bpos = _positions(grid.num_nodes, grid.boundary_idx)[nodes]
    return full[nodes] + 1j * a.a_dot_nu[bpos] * u[nodes]


# ---------------------------------------------------------------------------
# structural identity checks


@dataclass(frozen=True, eq=False)
class GreenReport:
    residual: float
    matrix_residual: float | None
    volume_term: complex
    gradient_term: complex
    boundary_term: complex


def check_green_identity(grid, a, f, g):
    """Residual of (Delta_a f | g) + (grad_a f | grad_a g) - (flux f | g)_Gamma.

    Uses full-grid stencils and trapezoid quadratures, so the residual is
    O(h) for smooth data.  When both fields vanish on the boundary the same
    balance is also evaluated at matrix level through the stiffness form,
    where it holds to rounding.
    """
    f = np.asarray(f, dtype=complex)
    g = np.asarray(g, dtype=complex)
    lap_f = laplacian_stencil_full(grid, a) @ f
    gf = magnetic_gradient(grid, a, f)
    gg = magnetic_gradient(grid, a, g)
    t_vol = np.sum(grid.volume_weights * lap_f * np.conj(g))
    t_grad = np.sum(grid.volume_weights * np.einsum("ij,ij->i", gf, np.conj(gg)))
    flux = conormal_derivative(grid, a, f)
    t_bnd = np.sum(grid.surface_weights[grid.boundary_idx] * flux
                   * np.conj(g[grid.boundary_idx]))
    residual = abs(t_vol + t_grad - t_bnd)

    matrix_residual = None
    b = grid.boundary_idx
    scale_fg = max(np.max(np.abs(f)), np.max(np.abs(g)), 1e-300)
    if max(np.max(np.abs(f[b]), initial=0.0),
           np.max(np.abs(g[b]), initial=0.0)) <= 1e-14 * scale_fg:
        interior = grid.interior_idx
        S = magnetic_stiffness(grid, a, interior)
        fi, gi = f[interior], g[interior]
        mass = grid.volume_weights[interior]
        lap_fi = -(S @ fi) / mass
        matrix_residual = abs(np.vdot(gi, mass * lap_fi) + np.vdot(gi, S @ fi))
    return GreenReport(
        residual=float(residual),
        matrix_residual=None if matrix_residual is None else float(matrix_residual),
        volume_term=complex(t_vol),
        gradient_term=complex(t_grad),
        boundary_term=complex(t_bnd),
    )


@dataclass(frozen=True, eq=False)
class DiamagneticReport:
    min_margin: float
    argmin_node: int
    h_scale: float


def check_diamagnetic(grid, a, f):
    """Node-wise margin |grad_a f| - |grad |f||; nonnegative up to O(h)."""
    f = np.asarray(f, dtype=complex)
    grads = gradient_matrices(grid)
    mod = np.abs(f)
    gmod = np.column_stack([grads[ax] @ mod for ax in range(grid.dim)])
    gmag = magnetic_gradient(grid, a, f)
    margin = np.linalg.norm(gmag, axis=1) - np.linalg.norm(gmod, axis=1)
    k = int(np.argmin(margin))
    return DiamagneticReport(min_margin=float(margin[k]), argmin_node=k,
                             h_scale=float(max(grid.h)))


@dataclass(frozen=True, eq=False)
class NormEquivalenceReport:
    kappa: float
    coupling: float                # ||a||_inf * kappa
    smallness_met: bool            # coupling < 1
    worst_lower_slack: float       # min over samples of ||grad_a u|| - (1-coupling)||grad u||
    worst_upper_slack: float       # min over samples of (1+coupling)||grad u|| - ||grad_a u||
    flagged: bool                  # violation beyond O(h) resolution


def norm_equivalence_bounds(grid, a, samples, dirichlet_part):
    """Check (1 -+ ||a|| kappa) ||grad u|| brackets for ||grad_a u||."""
    rep = poincare_constant(grid, dirichlet_part)
    kappa = rep.kappa
    coupling = a.sup_norm * kappa
    lo_slack, up_slack = np.inf, np.inf
    hmax = float(max(grid.h))
    for u in samples:
        u = np.asarray(u, dtype=complex)
        if np.max(np.abs(u[np.asarray(dirichlet_part, dtype=int)]), initial=0.0) > 1e-12:
            raise ValueError("samples must vanish on the Dirichlet part")
        grads = gradient_matrices(grid)
        g = np.column_stack([grads[ax] @ u for ax in range(grid.dim)])
        gnorm = np.sqrt(np.sum(grid.volume_weights * np.sum(np.abs(g) ** 2, axis=1)).real)
        gm = magnetic_gradient(grid, a, u)
        mnorm = np.sqrt(np.sum(grid.volume_weights * np.sum(np.abs(gm) ** 2, axis=1)).real)
        lo_slack = min(lo_slack, mnorm - (1 - coupling) * gnorm)
        up_slack = min(up_slack, (1 + coupling) * gnorm - mnorm)
    scale = max(1.0, a.sup_norm)
    flagged = (lo_slack < -10 * hmax * scale) or (up_slack < -10 * hmax * scale)
    return NormEquivalenceReport(
        kappa=kappa, coupling=coupling, smallness_met=bool(coupling < 1.0),
        worst_lower_slack=float(lo_slack), worst_upper_slack=float(up_slack),
        flagged=bool(flagged),
    )


# ---------------------------------------------------------------------------
# gauge machinery


def gauge_transform(gen, psi):
    """Conjugate a generator by the phase exp(i psi); spectra are unchanged."""
    psi = np.asarray(psi, dtype=float)
    phase = np.exp(1j * psi[gen.state_idx])
    D = sp.diags(phase)
    Dinv = sp.diags(np.conj(phase))
    new_matrix = (Dinv @ gen.matrix @ D).tocsr()
    new_lap = (Dinv @ gen.lap_matrix @ D).tocsr() if gen.lap_matrix is not None else None
    return replace(gen, matrix=new_matrix, lap_matrix=new_lap,
                   uid=next(_GEN_COUNTER))


def edge_gradient(grid, psi):
    """Per-axis edge differences (psi_head - psi_tail)/h, matching the links."""
    psi = np.asarray(psi, dtype=float)
    out = []
    for ax in range(grid.dim):
        tails, heads, _ = _edges(grid, ax)
        out.append((psi[heads] - psi[tails]) / grid.h[ax])
    return out


def potential_plus_edge_gradient(a, psi):
    """The potential a + grad(psi) with edge values taken by edge differences.

    Assembling the link-phase operator with this potential reproduces the
    gauge conjugation of the original operator to rounding.
    """
    grid = a.grid
    grads = gradient_matrices(grid)
    psi = np.asarray(psi, dtype=float)
    node_vals = a.values + np.column_stack([grads[ax] @ psi for ax in range(grid.dim)])
    eg = edge_gradient(grid, psi)
    edges = tuple(a.edge_values[ax] + eg[ax] for ax in range(grid.dim))
    return MagneticPotential._finish(grid, node_vals, edges)


def edge_antiderivative_1d(grid, a):
    """psi with psi(0) = 0 whose edge differences equal the potential's edges."""
    if grid.dim != 1:
        raise ValueError("the antiderivative reduction is one-dimensional")
    psi = np.zeros(grid.num_nodes)
    psi[1:] = np.cumsum(grid.h[0] * a.edge_values[0])
    return psi


def export_coo(gen, path):
    """Write the generator matrix in (row, col, re, im) coordinate text form."""
    coo = gen.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# kind={gen.kind} n={gen.size} scheme={gen.scheme}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v.real:.17g} {v.imag:.17g}\n")
