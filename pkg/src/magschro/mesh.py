"""Interval and rectangle grids: boundary classification, quadrature, Poincare constants.

Grids are uniform tensor products.  Volume integrals use the trapezoid rule
and surface integrals the trapezoid rule along each face, so the weights sum
to the domain measure and to each face measure exactly.  Every boundary node
is owned by exactly one face (x-faces take priority over y-faces at corners)
and carries that face's outward unit normal.

The observation split classifies boundary nodes by the strict sign of
m(x) . nu(x) with m(x) = x - x0: positive goes to the observed part
``gamma0``, the rest (including the measure-zero tie set) to ``gamma1``.

Poincare constants are computed from the smallest eigenvalue of the discrete
Laplacian with Dirichlet condition on a prescribed node set and natural
condition elsewhere, assembled in lumped finite-element form so the mixed
eigenvalues converge at second order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class EigenSolveError(RuntimeError):
    """Eigenvalue iteration failed; carries solver diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True, eq=False)
class Face:
    """One axis-aligned boundary face with its surface quadrature."""

    name: str
    axis: int
    side: int                 # 0 = low end, 1 = high end
    nodes: np.ndarray         # all nodes geometrically on the face (corners included)
    weights: np.ndarray       # trapezoid weights along the face, sum = face measure
    normal: np.ndarray        # outward unit normal

    @property
    def measure(self):
        return float(self.weights.sum())


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor-product grid with quadrature and boundary metadata.

    Immutable after construction (arrays are write-protected); safe to share
    read-only across parallel workers.
    """

    dim: int
    extents: tuple
    n: tuple
    origin: tuple
    h: tuple
    shape: tuple
    coords: np.ndarray          # (N, dim)
    interior_idx: np.ndarray
    boundary_idx: np.ndarray
    normals: np.ndarray         # (N, dim), zero rows at interior nodes
    owner_face: np.ndarray      # (N,), -1 at interior nodes
    volume_weights: np.ndarray  # (N,), trapezoid, sums to |Omega|
    surface_weights: np.ndarray # (N,), per-node total face weight, sums to |Gamma|
    faces: tuple = field(repr=False)

    @property
    def num_nodes(self):
        return self.coords.shape[0]

    @property
    def measure(self):
        out = 1.0
        for e in self.extents:
            out *= e
        return out

    def multi_index(self, flat):
        return np.unravel_index(flat, self.shape)

    def flat_index(self, multi):
        return np.ravel_multi_index(multi, self.shape)

    def axis_nodes(self, axis):
        n = self.n[axis]
        return self.origin[axis] + self.h[axis] * np.arange(n)

    def integrate(self, values):
        """Trapezoid volume integral of a node field."""
        return complex(np.sum(self.volume_weights * np.asarray(values)))

    def surface_integrate(self, values, nodes=None):
        """Trapezoid surface integral over a boundary node subset (default: all)."""
        idx = self.boundary_idx if nodes is None else np.asarray(nodes)
        vals = np.asarray(values)
        if vals.shape[0] == self.num_nodes:
            vals = vals[idx]
        return complex(np.sum(self.surface_weights[idx] * vals))

    def box_nodes(self, lo, hi):
        """Indices of nodes inside the closed box [lo, hi] (per-axis bounds)."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        mask = np.ones(self.num_nodes, dtype=bool)
        for ax in range(self.dim):
            mask &= (self.coords[:, ax] >= lo[ax] - 1e-12) & (self.coords[:, ax] <= hi[ax] + 1e-12)
        return np.nonzero(mask)[0]

    def to_json(self):
        """Serialize the grid descriptor and boundary classes for reproducibility."""
        doc = {
            "dim": self.dim,
            "extents": list(self.extents),
            "n": list(self.n),
            "origin": list(self.origin),
            "h": list(self.h),
            "faces": {f.name: [int(i) for i in f.nodes] for f in self.faces},
        }
        return json.dumps(doc, sort_keys=True)


def _trapezoid_1d(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = h / 2.0
    return w


def build_grid(dim, extents, n, origin=None):
    """Build a 1D interval or 2D rectangle grid with n nodes per axis.

    ``extents`` and ``n`` may be scalars (shared by every axis) or per-axis
    sequences.  Spacing is h = extent/(n-1); quadrature is trapezoid.
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    extents = tuple(float(e) for e in np.atleast_1d(extents)) if np.ndim(extents) else (float(extents),) * dim
    if len(extents) == 1 and dim == 2:
        extents = extents * 2
    ns = tuple(int(v) for v in np.atleast_1d(n)) if np.ndim(n) else (int(n),) * dim
    if len(ns) == 1 and dim == 2:
        ns = ns * 2
    if len(extents) != dim or len(ns) != dim:
        raise ValueError("extents and n must match dim")
    if any(e <= 0 for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if any(v < 4 for v in ns):
        raise ValueError(f"need at least 4 nodes per axis for the stencils, got {ns}")
    if origin is None:
        origin = (0.0,) * dim
    origin = tuple(float(o) for o in np.atleast_1d(origin))

    h = tuple(extents[a] / (ns[a] - 1) for a in range(dim))
    axes = [origin[a] + h[a] * np.arange(ns[a]) for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.column_stack([m.ravel() for m in mesh])
    num = coords.shape[0]
    shape = ns

    w1d = [_trapezoid_1d(ns[a], h[a]) for a in range(dim)]
    vol = w1d[0]
    for a in range(1, dim):
        vol = np.multiply.outer(vol, w1d[a])
    volume_weights = vol.ravel()

    faces = []
    if dim == 1:
        faces.append(Face("x0", 0, 0, np.array([0]), np.array([1.0]), np.array([-1.0])))
        faces.append(Face("x1", 0, 1, np.array([num - 1]), np.array([1.0]), np.array([1.0])))
    else:
        nx, ny = ns
        idx = np.arange(num).reshape(shape)
        wy = _trapezoid_1d(ny, h[1])
        wx = _trapezoid_1d(nx, h[0])
        faces.append(Face("x0", 0, 0, idx[0, :].copy(), wy.copy(), np.array([-1.0, 0.0])))
        faces.append(Face("x1", 0, 1, idx[-1, :].copy(), wy.copy(), np.array([1.0, 0.0])))
        faces.append(Face("y0", 1, 0, idx[:, 0].copy(), wx.copy(), np.array([0.0, -1.0])))
        faces.append(Face("y1", 1, 1, idx[:, -1].copy(), wx.copy(), np.array([0.0, 1.0])))

    normals = np.zeros((num, dim))
    owner = np.full(num, -1, dtype=int)
    surface_weights = np.zeros(num)
    for fi, f in enumerate(faces):
        surface_weights[f.nodes] += f.weights
        for node in f.nodes:
            if owner[node] < 0:      # x-faces first in the list, so corners go to them
                owner[node] = fi
                normals[node] = f.normal

    boundary_idx = np.nonzero(owner >= 0)[0]
    interior_idx = np.nonzero(owner < 0)[0]

    grid = Grid(
        dim=dim,
        extents=extents,
        n=ns,
        origin=origin,
        h=h,
        shape=shape,
        coords=coords,
        interior_idx=interior_idx,
        boundary_idx=boundary_idx,
        normals=normals,
        owner_face=owner,
        volume_weights=volume_weights,
        surface_weights=surface_weights,
        faces=tuple(faces),
    )
    for arr in (coords, interior_idx, boundary_idx, normals, owner,
                volume_weights, surface_weights):
        arr.setflags(write=False)
    return grid


@dataclass(frozen=True, eq=False)
class BoundarySplit:
    """Partition of the boundary by the sign of m . nu, with m = x - x0."""

    x0: np.ndarray
    gamma0: np.ndarray          # nodes with m . nu > 0
    gamma1: np.ndarray          # the rest of the boundary
    m: np.ndarray               # (N, dim), m sampled at every node
    transition_pairs: int       # adjacent boundary node pairs with opposite class

    @property
    def gamma0_empty(self):
        return self.gamma0.size == 0


def split_boundary(grid, x0):
    """Classify boundary nodes by the strict sign test m(x) . nu(x) > 0.

    Ties (m . nu == 0) go to gamma1.  The count of adjacent boundary-node
    pairs with opposite classification is recorded: on a domain whose two
    boundary parts do not have disjoint closures this count is positive and
    observability constants should be read with that caveat.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape[0] != grid.dim:
        raise ValueError(f"x0 must have {grid.dim} coordinates")
    m = grid.coords - x0[None, :]
    b = grid.boundary_idx
    sign = np.einsum("ij,ij->i", m[b], grid.normals[b])
    gamma0 = b[sign > 0]
    gamma1 = b[sign <= 0]

    in_g0 = np.zeros(grid.num_nodes, dtype=bool)
    in_g0[gamma0] = True
    transitions = 0
    if grid.dim == 2:
        shape = grid.shape
        idx = np.arange(grid.num_nodes).reshape(shape)
        on_b = np.zeros(grid.num_nodes, dtype=bool)
        on_b[b] = True
        for axis in range(2):
            lo = idx.take(range(shape[axis] - 1), axis=axis).ravel()
            hi = idx.take(range(1, shape[axis]), axis=axis).ravel()
            both = on_b[lo] & on_b[hi]
            transitions += int(np.sum(in_g0[lo[both]] != in_g0[hi[both]]))

    split = BoundarySplit(x0=x0, gamma0=gamma0, gamma1=gamma1, m=m,
                          transition_pairs=transitions)
    for arr in (split.gamma0, split.gamma1, split.m):
        arr.setflags(write=False)
    return split


@dataclass(frozen=True, eq=False)
class PoincareReport:
    """Best constant kappa with ||u|| <= kappa ||grad u|| on the subspace."""

    subspace: str
    kappa: float
    eigenvalue: float
    resolution: tuple
    dirichlet_count: int


def _stiffness_1d(n, h):
    """Neumann-natural 1D stiffness (lumped P1 elements)."""
    main = np.full(n, 2.0 / h)
    main[0] = main[-1] = 1.0 / h
    off = np.full(n - 1, -1.0 / h)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _mass_1d(n, h):
    return sp.diags(_trapezoid_1d(n, h), format="csr")


def neumann_stiffness(grid):
    """Scalar stiffness matrix with natural boundary condition on all faces."""
    if grid.dim == 1:
        return _stiffness_1d(grid.n[0], grid.h[0])
    kx = _stiffness_1d(grid.n[0], grid.h[0])
    ky = _stiffness_1d(grid.n[1], grid.h[1])
    mx = _mass_1d(grid.n[0], grid.h[0])
    my = _mass_1d(grid.n[1], grid.h[1])
    return (sp.kron(kx, my) + sp.kron(mx, ky)).tocsr()


def poincare_constant(grid, dirichlet_part, label=None):
    """kappa = 1/sqrt(lambda_min) for the mixed Dirichlet/natural Laplacian.

    ``dirichlet_part`` is a nonempty node set carrying the zero trace; the
    remaining boundary carries the natural condition.
    """
    dirichlet = np.asarray(dirichlet_part, dtype=int)
    if dirichlet.size == 0:
        raise ValueError("dirichlet_part must be nonempty")
    keep = np.setdiff1d(np.arange(grid.num_nodes), dirichlet)
    K = neumann_stiffness(grid)[keep][:, keep]
    M = sp.diags(grid.volume_weights[keep], format="csc")

    nkeep = keep.size
    try:
        if nkeep <= 400:
            import scipy.linalg as la

            w = la.eigh(K.toarray(), M.toarray(), eigvals_only=True,
                        subset_by_index=[0, 0])
            lam = float(w[0])
        else:
            w = spla.eigsh(K.tocsc(), k=1, M=M, sigma=0.0, which="LM",
                           return_eigenvectors=False)
            lam = float(w[0])
    except spla.ArpackNoConvergence as exc:
        raise EigenSolveError(
            "Poincare eigenvalue iteration did not converge",
            diagnostics={"converged_eigenvalues": len(exc.eigenvalues),
                         "size": nkeep},
        ) from exc
    if lam <= 0:
        raise EigenSolveError("nonpositive smallest eigenvalue",
                              diagnostics={"eigenvalue": lam})
    return PoincareReport(
        subspace=label or f"zero trace on {dirichlet.size} nodes",
        kappa=1.0 / np.sqrt(lam),
        eigenvalue=lam,
        resolution=grid.n,
        dirichlet_count=int(dirichlet.size),
    )
