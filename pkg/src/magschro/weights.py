"""Construction and certification of Carleman / pseudo-convex weight functions.

A weight is a base function psi with gradient and Hessian fields plus a
composition phi = exp(lambda * psi), possibly on a cylinder (s, x) with an
added axis carrying -beta s^2.  Certification has three layers:

* pseudo-convexity: the node-wise smallest eigenvalue of
  grad psi grad psi^T + Hess psi, positive away from the control region,
  together with the sign conditions psi > 0, grad psi != 0, d_nu psi <= 0;
* sub-ellipticity: positivity of the Poisson bracket of the conjugated
  symbol p_phi = |eta|^2 - tau^2 |grad phi|^2 + 2 i tau eta . grad phi on
  its characteristic set {|eta| = tau |grad phi|, eta perp grad phi}:

      {Im p_phi, Re p_phi} = 4 tau^3 (Hess phi grad phi . grad phi)
                             + 4 tau (Hess phi eta . eta),

  sampled over random characteristic directions per node and parameter
  (the sign convention is fixed by phi = exp(lambda psi) with grad psi != 0
  being admissible for large lambda, where the bracket grows like
  4 tau^3 lambda^4 phi^3 |grad psi|^4);
* empirical probes of the weighted a-priori inequalities on compactly
  supported test functions, restricted to the discrete validity window
  tau * h <= 1/2 beyond which exponential weights alias on the grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import magop
from .mesh import Grid


# ---------------------------------------------------------------------------
# cylinder domain: an auxiliary axis s in (-s_half, s_half) times a grid


@dataclass(frozen=True, eq=False)
class CylinderGrid:
    """Tensor extension (s, x) of a spatial grid by one auxiliary axis."""

    spatial: Grid
    s_nodes: np.ndarray
    s_h: float

    @property
    def ns(self):
        return self.s_nodes.size

    @property
    def num_nodes(self):
        return self.ns * self.spatial.num_nodes

    @property
    def total_dim(self):
        return 1 + self.spatial.dim

    @property
    def min_h(self):
        return float(min(self.s_h, min(self.spatial.h)))

    def weights(self):
        ws = np.full(self.ns, self.s_h)
        ws[0] = ws[-1] = self.s_h / 2.0
        return np.outer(ws, self.spatial.volume_weights)

    def coords(self):
        """(ns * N, 1 + dim) array of (s, x) points, s-major order."""
        N = self.spatial.num_nodes
        out = np.empty((self.num_nodes, self.total_dim))
        out[:, 0] = np.repeat(self.s_nodes, N)
        out[:, 1:] = np.tile(self.spatial.coords, (self.ns, 1))
        return out


def make_cylinder(spatial, s_half=2.0, ns=None):
    if ns is None:
        ns = max(spatial.n)
    s = np.linspace(-s_half, s_half, int(ns))
    return CylinderGrid(spatial=spatial, s_nodes=s, s_h=float(s[1] - s[0]))


class CylinderOperator:
    """P = d_ss + Delta_a (+ i c) acting on (ns, N) cylinder fields."""

    def __init__(self, cylinder, potential=None, c=None):
        self.cylinder = cylinder
        self.spatial_op = magop.laplacian_stencil_full(
            cylinder.spatial,
            potential if potential is not None else None,
        )
        self.c = c
        self._d2s = magop._d2_matrix(cylinder.ns, cylinder.s_h)

    def apply(self, F):
        F = np.asarray(F, dtype=complex)
        out = self._d2s @ F                      # second derivative along s
        out += (self.spatial_op @ F.T).T
        if self.c is not None:
            out += 1j * self.c[None, :] * F
        return out

    def gradient(self, F):
        """Full (s, x) gradient, shape (ns, N, 1 + dim)."""
        cyl = self.cylinder
        F = np.asarray(F, dtype=complex)
        grads = magop.gradient_matrices(cyl.spatial)
        out = np.empty((cyl.ns, cyl.spatial.num_nodes, cyl.total_dim), dtype=complex)
        out[:, :, 0] = magop._d1_matrix(cyl.ns, cyl.s_h) @ F
        for ax in range(cyl.spatial.dim):
            out[:, :, 1 + ax] = (grads[ax] @ F.T).T
        return out


class GridOperator:
    """Plain full-grid Delta_a for probes without the auxiliary axis."""

    def __init__(self, grid, potential=None):
        self.grid = grid
        self._op = magop.laplacian_stencil_full(grid, potential)
        self._pot = potential

    def apply(self, f):
        return self._op @ np.asarray(f, dtype=complex)

    def gradient(self, f):
        f = np.asarray(f, dtype=complex)
        grads = magop.gradient_matrices(self.grid)
        return np.column_stack([grads[ax] @ f for ax in range(self.grid.dim)])


# ---------------------------------------------------------------------------
# weight functions


@dataclass(eq=False)
class WeightFunction:
    """Base function psi with derivative fields and composition parameters.

    ``domain`` is a Grid or CylinderGrid; psi/grad/hess are sampled per node
    (cylinder fields flattened s-major).  ``analytic_mask`` marks nodes whose
    derivatives are exact; elsewhere they came from finite differences and
    certification near those nodes is sensitive to stencil noise.
    """

    domain: object
    psi: np.ndarray
    grad: np.ndarray                  # (N, D)
    hess: np.ndarray                  # (N, D, D)
    lam: float = 1.0
    beta: float = 0.0
    analytic_mask: np.ndarray = None
    label: str = "custom"

    def __post_init__(self):
        if self.analytic_mask is None:
            self.analytic_mask = np.ones(self.psi.shape[0], dtype=bool)
        if np.any(self.phi() <= 0):
            raise ValueError("composed weight must be positive")

    @property
    def num_nodes(self):
        return self.psi.shape[0]

    @property
    def total_dim(self):
        return self.grad.shape[1]

    @property
    def sup_psi(self):
        return float(np.max(np.abs(self.psi)))

    def phi(self):
        return np.exp(self.lam * self.psi)

    def phi_grad(self):
        return self.lam * self.phi()[:, None] * self.grad

    def phi_hess(self):
        ph = self.phi()
        outer = np.einsum("nj,nk->njk", self.grad, self.grad)
        return self.lam * ph[:, None, None] * (self.lam * outer + self.hess)

    def with_lambda(self, lam):
        out = WeightFunction(domain=self.domain, psi=self.psi, grad=self.grad,
                             hess=self.hess, lam=float(lam), beta=self.beta,
                             analytic_mask=self.analytic_mask, label=self.label)
        return out

    def derivative_consistency(self):
        """Max mismatch between the stored gradient and finite differences of
        the stored values (second order for smooth analytic fields)."""
        dom = self.domain
        if isinstance(dom, Grid):
            grads = magop.gradient_matrices(dom)
            fd = np.column_stack([grads[ax] @ self.psi for ax in range(dom.dim)])
            return float(np.max(np.abs(fd - self.grad)))
        psi2 = self.psi.reshape(dom.ns, dom.spatial.num_nodes)
        grads = magop.gradient_matrices(dom.spatial)
        worst = float(np.max(np.abs(
            (magop._d1_matrix(dom.ns, dom.s_h) @ psi2).ravel()
            - self.grad[:, 0])))
        for ax in range(dom.spatial.dim):
            fd = (grads[ax] @ psi2.T).T.ravel()
            worst = max(worst, float(np.max(np.abs(fd - self.grad[:, 1 + ax]))))
        return worst


def quadratic_weight(grid, x0, shift=0.0):
    """psi = shift + 1 + |x - x0|^2 with exact derivative fields."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    diff = grid.coords - x0[None, :]
    psi = shift + 1.0 + np.sum(diff**2, axis=1)
    grad = 2.0 * diff
    hess = np.broadcast_to(2.0 * np.eye(grid.dim),
                           (grid.num_nodes, grid.dim, grid.dim)).copy()
    return WeightFunction(domain=grid, psi=psi, grad=grad, hess=hess,
                          label="quadratic")


def linear_weight(grid, direction, offset=2.0):
    """psi = offset + e . x; the classic weight with constant gradient."""
    e = np.atleast_1d(np.asarray(direction, dtype=float))
    psi = offset + grid.coords @ e
    if np.any(psi <= 0):
        raise ValueError("offset too small: psi must stay positive")
    grad = np.broadcast_to(e, (grid.num_nodes, grid.dim)).copy()
    hess = np.zeros((grid.num_nodes, grid.dim, grid.dim))
    return WeightFunction(domain=grid, psi=psi, grad=grad, hess=hess,
                          label="linear")


def cylinder_extend(weight, cylinder, beta):
    """Extend a spatial weight to psi~(s, x) = -beta s^2 + psi(x)."""
    grid = weight.domain
    if grid is not cylinder.spatial:
        raise ValueError("weight must live on the cylinder's spatial grid")
    ns, N = cylinder.ns, grid.num_nodes
    D = cylinder.total_dim
    s = cylinder.s_nodes
    psi = (-beta * s[:, None] ** 2 + weight.psi[None, :]).ravel()
    grad = np.zeros((ns * N, D))
    grad[:, 0] = np.repeat(-2.0 * beta * s, N)
    grad[:, 1:] = np.tile(weight.grad, (ns, 1))
    hess = np.zeros((ns * N, D, D))
    hess[:, 0, 0] = -2.0 * beta
    hess[:, 1:, 1:] = np.tile(weight.hess, (ns, 1, 1))
    mask = np.tile(weight.analytic_mask, ns)
    return WeightFunction(domain=cylinder, psi=psi, grad=grad, hess=hess,
                          lam=weight.lam, beta=float(beta),
                          analytic_mask=mask, label=f"{weight.label}+s")


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def construct_psi_G(grid, omega, x0):
    """Cutoff-composed weight psi = 1 + chi |x - x0|^2, shifted so that
    min psi > (2/3) max psi.

    ``omega`` is a boundary-collar node set; the quintic cutoff chi equals 1
    on the complement of the collar and 0 at the boundary nodes inside it.
    The pushed-in point x0 must lie outside the closed domain.
    """
    from scipy.spatial import cKDTree

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.extents)
    if np.all((x0 >= lo - 1e-12) & (x0 <= hi + 1e-12)):
        raise ValueError("x0 must lie outside the closed domain for this construction")
    omega = np.asarray(omega, dtype=int)
    coords = grid.coords
    N = grid.num_nodes

    chi = np.ones(N)
    transition = np.zeros(N, dtype=bool)
    if omega.size:
        in_omega = np.zeros(N, dtype=bool)
        in_omega[omega] = True
        outer = np.intersect1d(omega, grid.boundary_idx)
        inner = np.nonzero(~in_omega)[0]
        if outer.size and inner.size:
            t_in = cKDTree(coords[inner])
            t_out = cKDTree(coords[outer])
            d_in, _ = t_in.query(coords[omega])
            d_out, _ = t_out.query(coords[omega])
            frac = d_out / np.maximum(d_out + d_in, 1e-300)
            chi[omega] = _smoothstep(frac)
            transition[omega] = (chi[omega] > 0) & (chi[omega] < 1)

    diff = coords - x0[None, :]
    r2 = np.sum(diff**2, axis=1)
    psi = 1.0 + chi * r2

    # exact derivatives where chi is locked at 0 or 1, finite differences in
    # the ramp
    grad = np.zeros((N, grid.dim))
    hess = np.zeros((N, grid.dim, grid.dim))
    ones = chi >= 1.0
    grad[ones] = 2.0 * diff[ones]
    hess[ones] = 2.0 * np.eye(grid.dim)
    if np.any(transition):
        grads = magop.gradient_matrices(grid)
        g_fd = np.column_stack([grads[ax] @ psi for ax in range(grid.dim)])
        grad[transition] = g_fd[transition]
        for ax in range(grid.dim):
            row = np.column_stack([grads[bx] @ g_fd[:, ax] for bx in range(grid.dim)])
            hess[transition, ax, :] = row[transition]

    shift = max(0.0, 2.0 * float(np.max(psi)) - 3.0 * float(np.min(psi)))
    if shift > 0:
        shift += 1.0          # strict inequality min > (2/3) max
    psi = psi + shift
    mask = ~transition
    return WeightFunction(domain=grid, psi=psi, grad=grad, hess=hess,
                          analytic_mask=mask, label="collar-cutoff")


# ---------------------------------------------------------------------------
# certification


@dataclass(eq=False)
class PseudoconvexityReport:
    margin: float                   # min over region of lambda_min(gg^T + H)
    certified: bool
    min_grad: float
    min_psi: float
    max_normal_derivative: float    # of psi over boundary nodes in the domain
    transition_nodes: int           # region nodes with finite-difference fields
    failures: list

    def to_json(self):
        return json.dumps({
            "pseudoconvexity_margin": self.margin,
            "certified": self.certified,
            "min_grad": self.min_grad,
            "min_psi": self.min_psi,
            "max_normal_derivative": self.max_normal_derivative,
            "transition_nodes": self.transition_nodes,
            "failing_witnesses": self.failures,
        }, sort_keys=True)


def check_pseudoconvexity(weight, region):
    """Node-wise eigenvalue margin of grad psi grad psi^T + Hess psi.

    Certifies the pointwise convexity condition iff the margin is positive
    and the sign conditions (psi > 0, grad psi != 0 on the region,
    d_nu psi <= 0 on the boundary) hold.
    """
    region = np.asarray(region, dtype=int)
    if region.size == 0:
        raise ValueError("empty certification region")
    g = weight.grad[region]
    H = weight.hess[region]
    mats = np.einsum("nj,nk->njk", g, g) + H
    eigs = np.linalg.eigvalsh(mats)
    margin = float(np.min(eigs[:, 0]))
    min_grad = float(np.min(np.linalg.norm(g, axis=1)))
    min_psi = float(np.min(weight.psi[region]))

    max_dnu = -np.inf
    failures = []
    domain = weight.domain
    if isinstance(domain, Grid):
        b = domain.boundary_idx
        dnu = np.einsum("nj,nj->n", weight.grad[b], domain.normals[b])
        max_dnu = float(np.max(dnu))
        bad = b[dnu > 1e-12]
        failures += [{"condition": "normal_derivative", "node": int(n)} for n in bad[:16]]
    transition = int(np.sum(~weight.analytic_mask[region]))
    if transition:
        failures.append({"condition": "finite-difference fields in region",
                         "count": transition})
    certified = (margin > 0 and min_grad > 0 and min_psi > 0
                 and (max_dnu <= 1e-12 or max_dnu == -np.inf))
    return PseudoconvexityReport(
        margin=margin, certified=bool(certified), min_grad=min_grad,
        min_psi=min_psi,
        max_normal_derivative=float(max_dnu) if np.isfinite(max_dnu) else 0.0,
        transition_nodes=transition, failures=failures,
    )


@dataclass(eq=False)
class SubellipticityReport:
    min_bracket: float              # raw Poisson bracket minimum
    margin: float                   # bracket normalized by 4 tau^3 (lam phi)^3
    certified: bool
    witness: dict | None            # most negative sample, when any
    excluded_nodes: np.ndarray      # |grad phi| below threshold
    per_tau_min: dict

    def to_json(self):
        return json.dumps({
            "subellipticity_min_bracket": self.min_bracket,
            "subellipticity_margin": self.margin,
            "certified": self.certified,
            "failing_witnesses": [] if self.witness is None else [self.witness],
            "excluded_nodes": [int(i) for i in self.excluded_nodes],
            "per_tau_min": {str(k): v for k, v in self.per_tau_min.items()},
        }, sort_keys=True)


def check_subellipticity(weight, region, tau_grid, samples_per_node=64, seed=0):
    """Sampled Poisson-bracket positivity of the conjugated symbol.

    At each region node and parameter tau the characteristic directions
    eta perp grad phi with |eta| = tau |grad phi| are sampled uniformly and
    the bracket 4 tau^3 (H_phi g_phi . g_phi) + 4 tau (H_phi eta . eta) is
    evaluated from the analytic chain-rule fields of phi = exp(lambda psi).
    """
    region = np.asarray(region, dtype=int)
    if weight.total_dim < 2:
        raise ValueError("characteristic set is empty in total dimension 1; "
                         "extend the weight to the cylinder first")
    rng = np.random.default_rng(seed)
    gphi = weight.phi_grad()[region]
    hphi = weight.phi_hess()[region]
    gnorm = np.linalg.norm(gphi, axis=1)
    ok = gnorm > 1e-10
    excluded = region[~ok]
    gphi, hphi, gnorm = gphi[ok], hphi[ok], gnorm[ok]
    nodes = region[ok]
    if nodes.size == 0:
        raise ValueError("grad phi vanishes on the whole region")

    cubic = np.einsum("njk,nj,nk->n", hphi, gphi, gphi)
    phi_scale = (weight.lam * weight.phi()[region][ok]) ** 3
    best = np.inf
    best_margin = np.inf
    witness = None
    per_tau = {}
    D = weight.total_dim
    for tau in np.atleast_1d(tau_grid):
        tau = float(tau)
        ghat = gphi / gnorm[:, None]
        z = rng.normal(size=(nodes.size, samples_per_node, D))
        z -= np.einsum("nsj,nj->ns", z, ghat)[:, :, None] * ghat[:, None, :]
        zn = np.linalg.norm(z, axis=2)
        zn[zn == 0] = 1.0
        eta = z / zn[:, :, None] * (tau * gnorm)[:, None, None]
        quad = np.einsum("njk,nsj,nsk->ns", hphi, eta, eta)
        bracket = 4.0 * tau**3 * cubic[:, None] + 4.0 * tau * quad
        tau_min = float(bracket.min())
        per_tau[tau] = tau_min
        best_margin = min(best_margin, float(
            (bracket / (4.0 * tau**3 * phi_scale)[:, None]).min()))
        if tau_min < best:
            best = tau_min
            flat = int(np.argmin(bracket))
            ni, si = np.unravel_index(flat, bracket.shape)
            witness = {"node": int(nodes[ni]), "tau": tau,
                       "eta": [float(v) for v in eta[ni, si]],
                       "bracket": tau_min}
    certified = best > 0
    return SubellipticityReport(
        min_bracket=float(best), margin=float(best_margin),
        certified=bool(certified), witness=None if certified else witness,
        excluded_nodes=excluded, per_tau_min=per_tau,
    )


# ---------------------------------------------------------------------------
# empirical probes of the weighted estimates


@dataclass(eq=False)
class CarlemanProbeReport:
    taus: np.ndarray
    ratios: np.ndarray              # max over samples per tau
    trend_slope: float
    trend_stderr: float
    samples_used: int

    @property
    def bounded(self):
        """No growth trend beyond regression noise."""
        return self.trend_slope <= 2.0 * self.trend_stderr

    def export_csv(self, path):
        with open(path, "w") as fh:
            fh.write("tau,ratio\n")
            for t, r in zip(self.taus, self.ratios):
                fh.write(f"{t:.17g},{r:.17g}\n")


def _tau_window_check(taus, min_h):
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    tau_max = 0.5 / min_h
    if np.any(taus > tau_max + 1e-12):
        raise ValueError(
            f"tau beyond the discrete validity window tau <= 0.5/h = {tau_max:.3g}"
        )
    return taus


def carleman_probe(operator, weight, test_functions, tau_grid):
    """Ratio trace C(tau) of the conjugated a-priori estimate.

    C(tau) = max over samples f of
        (tau^3 ||e^{tau phi} f||^2 + tau ||e^{tau phi} grad f||^2)
        / ||e^{tau phi} P f||^2.

    Test functions must vanish near the domain boundary (compact support);
    zero samples are excluded from the max.  tau is restricted to the
    aliasing window tau h <= 1/2.  The exponential weight is renormalized by
    its maximum over each sample's support, which leaves every ratio exactly
    invariant and keeps the arithmetic in range.
    """
    cyl = isinstance(operator, CylinderOperator)
    if cyl:
        dom = operator.cylinder
        wq = dom.weights()
        min_h = dom.min_h
    else:
        dom = operator.grid
        wq = dom.volume_weights
        min_h = float(min(dom.h))
    taus = _tau_window_check(tau_grid, min_h)
    phi = weight.phi()
    if cyl:
        phi = phi.reshape(dom.ns, dom.spatial.num_nodes)

    ratios = np.full(taus.size, -np.inf)
    used = 0
    for f in test_functions:
        f = np.asarray(f, dtype=complex)
        if cyl and f.ndim == 1:
            f = f.reshape(dom.ns, dom.spatial.num_nodes)
        _check_support(f, dom, cyl)
        if np.max(np.abs(f)) == 0:
            continue
        used += 1
        Pf = operator.apply(f)
        gf = operator.gradient(f)
        # the stencils are local: everything vanishes off the widened support,
        # so the weighted norms are evaluated there only (and the weight is
        # renormalized by its maximum on it, which cancels in the ratio)
        support = ((np.abs(f) > 0) | (np.abs(Pf) > 0)
                   | np.any(np.abs(gf) > 0, axis=-1))
        phimax = float(np.max(phi[support]))
        spread = phimax - float(np.min(phi[support]))
        if float(np.max(taus)) * spread > 700.0:
            raise ValueError(
                "exp(tau * phi) spans more than double precision on a test "
                "support; reduce lambda or the tau window")
        for i, tau in enumerate(taus):
            w = np.zeros_like(phi)
            w[support] = np.exp(tau * (phi[support] - phimax))
            nf = np.sum(wq * np.abs(w * f) ** 2)
            ngf = np.sum(wq * np.sum(np.abs(w[..., None] * gf) ** 2, axis=-1))
            npf = np.sum(wq * np.abs(w * Pf) ** 2)
            if npf == 0:
                continue
            ratios[i] = max(ratios[i], (tau**3 * nf + tau * ngf) / npf)
    if used == 0:
        raise ValueError("all test functions were identically zero")
    slope, stderr = _trend(taus, ratios)
    return CarlemanProbeReport(taus=taus, ratios=ratios, trend_slope=slope,
                               trend_stderr=stderr, samples_used=used)


def _check_support(f, dom, cyl):
    if cyl:
        edge = np.max(np.abs(f[0])) + np.max(np.abs(f[-1]))
        b = dom.spatial.boundary_idx
        edge += np.max(np.abs(f[:, b]))
    else:
        edge = np.max(np.abs(np.asarray(f)[dom.boundary_idx]))
    if edge > 1e-12 * max(np.max(np.abs(f)), 1e-300):
        raise ValueError("test functions must be compactly supported "
                         "(zero near the domain boundary)")


def _trend(x, y):
    good = np.isfinite(y)
    x, y = np.asarray(x, dtype=float)[good], np.asarray(y, dtype=float)[good]
    if x.size < 2:
        return 0.0, float("inf")
    A = np.column_stack([x, np.ones_like(x)])
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(x.size - 2, 1)
    xx = float(np.sum((x - x.mean()) ** 2))
    stderr = float(np.sqrt(np.sum(resid**2) / dof / xx)) if xx > 0 else float("inf")
    return float(coef[0]), stderr


# ---------------------------------------------------------------------------
# parabolic-style space-time weights and the evolution-form probe


@dataclass(eq=False)
class SpaceTimeWeights:
    """theta = e^{lambda psi} / t(T-t) and phi = (e^{2 lambda max psi}
    - e^{lambda psi}) / t(T-t) on interior time slices."""

    t_nodes: np.ndarray             # strictly inside (0, T)
    theta: np.ndarray               # (nt, N)
    phi: np.ndarray                 # (nt, N)
    lam: float
    T: float
    psi_sup: float


def spacetime_weights(weight, lam, T, nt):
    """Sample the blow-up weights on nt interior time nodes."""
    if nt < 3:
        raise ValueError("need at least 3 time nodes to have interior ones")
    t_all = np.linspace(0.0, T, int(nt))
    t = t_all[1:-1]
    psi = weight.psi
    sup = float(np.max(psi))
    e_psi = np.exp(lam * psi)
    denom = t * (T - t)
    theta = e_psi[None, :] / denom[:, None]
    phi = (np.exp(2.0 * lam * sup) - e_psi)[None, :] / denom[:, None]
    return SpaceTimeWeights(t_nodes=t, theta=theta, phi=phi, lam=float(lam),
                            T=float(T), psi_sup=sup)


def carleman_probe_evolution(grid, potential, stw, test_functions, s_grid,
                             omega):
    """Ratio trace of the evolution-form weighted estimate.

    For space-time samples w(x, t) vanishing near t = 0, T and near the
    spatial boundary, compares

        || sqrt(lam s theta) e^{-s phi} grad_a w || + || lam^2 s theta
        sqrt(s theta) e^{-s phi} w ||   over Q

    against the same norms restricted to Q_omega plus
    || e^{-s phi} (i d_t + Delta_a) w ||.  The parameter s is restricted to
    the discrete window s <= 0.5/h.
    """
    omega = np.asarray(omega, dtype=int)
    if omega.size == 0:
        raise ValueError("empty observation region")
    s_vals = _tau_window_check(s_grid, float(min(grid.h)))
    t = stw.t_nodes
    wt = np.empty(t.size)
    wt[1:-1] = 0.5 * (t[2:] - t[:-2])
    wt[0] = t[1] - t[0]
    wt[-1] = t[-1] - t[-2]
    wv = grid.volume_weights
    lam = stw.lam
    lap = magop.laplacian_stencil_full(grid, potential)
    grads = magop.gradient_matrices(grid)
    mask_omega = np.zeros(grid.num_nodes)
    mask_omega[omega] = 1.0

    ratios = np.full(s_vals.size, -np.inf)
    for w in test_functions:
        w = np.asarray(w, dtype=complex)
        if w.shape != (t.size, grid.num_nodes):
            raise ValueError("samples must be (nt_interior, N) space-time fields")
        if np.max(np.abs(w[:, grid.boundary_idx])) > 1e-12 * max(np.max(np.abs(w)), 1e-300):
            raise ValueError("samples must vanish on the spatial boundary")
        if np.max(np.abs(w)) == 0:
            continue
        wt_deriv = np.gradient(w, t, axis=0)
        Pw = 1j * wt_deriv + (lap @ w.T).T
        gw = np.empty((t.size, grid.num_nodes, grid.dim), dtype=complex)
        for ax in range(grid.dim):
            gw[:, :, ax] = (grads[ax] @ w.T).T + 1j * potential.values[None, :, ax] * w
        for i, s in enumerate(s_vals):
            damp = np.exp(-s * (stw.phi - np.min(stw.phi)))
            w1 = np.sqrt(lam * s * stw.theta) * damp
            w2 = lam**2 * s * stw.theta * np.sqrt(s * stw.theta) * damp
            g2 = np.sum(np.abs(w1[:, :, None] * gw) ** 2, axis=-1)
            gn = np.sqrt(np.sum(wt[:, None] * wv[None, :] * g2))
            zn = np.sqrt(np.sum(wt[:, None] * wv[None, :] * np.abs(w2 * w) ** 2))
            lhs = gn + zn
            gn_o = np.sqrt(np.sum(wt[:, None] * (wv * mask_omega)[None, :] * g2))
            zn_o = np.sqrt(np.sum(wt[:, None] * (wv * mask_omega)[None, :]
                                  * np.abs(w2 * w) ** 2))
            pn = np.sqrt(np.sum(wt[:, None] * wv[None, :] * np.abs(damp * Pw) ** 2))
            rhs = pn + gn_o + zn_o
            if rhs > 0:
                ratios[i] = max(ratios[i], lhs / rhs)
    slope, stderr = _trend(s_vals, ratios)
    return CarlemanProbeReport(taus=s_vals, ratios=ratios, trend_slope=slope,
                               trend_stderr=stderr,
                               samples_used=len(test_functions))


# ---------------------------------------------------------------------------
# test-function generators


def bump_functions(dom, count, seed, cylinder=False):
    """Smooth compactly supported random bumps (products of quintic ramps)."""
    rng = np.random.default_rng(seed)
    out = []
    if cylinder:
        pts = dom.coords()
        los = np.concatenate([[dom.s_nodes[0]], np.asarray(dom.spatial.origin)])
        his = np.concatenate([[dom.s_nodes[-1]],
                              np.asarray(dom.spatial.origin)
                              + np.asarray(dom.spatial.extents)])
    else:
        pts = dom.coords
        los = np.asarray(dom.origin)
        his = los + np.asarray(dom.extents)
    D = pts.shape[1]
    for _ in range(count):
        center = los + (0.3 + 0.4 * rng.random(D)) * (his - los)
        radius = (0.1 + 0.15 * rng.random(D)) * (his - los)
        r2 = np.sum(((pts - center) / radius) ** 2, axis=1)
        prof = _smoothstep(1.0 - r2)
        phase = np.exp(1j * (pts @ rng.normal(size=D)))
        f = prof * phase * (0.5 + rng.random())
        if cylinder:
            f = f.reshape(dom.ns, dom.spatial.num_nodes)
        out.append(f)
    return out
