"""Brillouin-zone partition, current assembly (brute force, J1, J2), and the
epsilon-ladder convergence harness.

The zone is split by a smooth partition of unity chi1 + chi2 = 1 built from
the ellipsoidal radius rho_j(p) = |W_j (p - p0_j)|: chi2 = 1 inside rho <
r2/2, 0 outside rho > r2. Smooth (chi1-weighted) integrands go on a uniform
periodic grid (spectral accuracy); nodal (chi2-weighted) integrands go on
W-adapted spherical patches, radially resolved, with antipodally symmetric
angular rules so principal-value cancellations are exact on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dynamics, grids, weyl


class CurrentError(RuntimeError):
    pass


def _bump(x):
    """C-infinity transition: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        g = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return f / (f + g)


@dataclass
class BZPartition:
    nodes: list
    r1: float
    r2: float
    epsilon: float
    lattice: object

    def rho(self, p):
        """min_j |W_j (p - p0_j)| with the periodic image convention."""
        p = np.asarray(p, dtype=float)
        out = np.full(p.shape[:-1], np.inf)
        for node in self.nodes:
            d = self.lattice.reduce_to_bz(p - node.p0)
            out = np.minimum(out, np.linalg.norm(d @ node.w_vectors.T, axis=-1))
        return out

    def chi2(self, p):
        if not self.nodes:
            return np.zeros(np.asarray(p, dtype=float).shape[:-1])
        rho = self.rho(p)
        # 1 inside r2/2, 0 outside r2
        return _bump((self.r2 - rho) / (0.5 * self.r2))

    def chi1(self, p):
        return 1.0 - self.chi2(p)

    def gamma_s_volume(self) -> float:
        return sum((4.0 * np.pi / 3.0) * (self.epsilon * self.r1) ** 3
                   / abs(np.linalg.det(n.w_vectors)) for n in self.nodes)


def build_partition(model, nodes, r1: float, r2: float, epsilon: float,
                    drive=None, horizon: float = 0.0,
                    delta_samples: int = 14) -> BZPartition:
    """Validated partition; raises on overlapping ellipsoids, a violated
    radial-monotonicity window, or characteristics entering the node cores."""
    lattice = model.lattice
    part = BZPartition(nodes=list(nodes), r1=r1, r2=r2, epsilon=epsilon,
                       lattice=lattice)
    # pairwise disjoint ellipsoids (through the periodic images)
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            d = lattice.reduce_to_bz(b.p0 - a.p0)
            ra = r2 / min(np.linalg.svd(a.w_vectors, compute_uv=False))
            rb = r2 / min(np.linalg.svd(b.w_vectors, compute_uv=False))
            if np.linalg.norm(d) < ra + rb:
                raise CurrentError("r2 too large: node ellipsoids overlap")
    # radial monotonicity window (delta condition): |d gap / d rho| within a
    # factor-2 band along W-rays out to r2
    rule = grids.sphere_rule(11, "gauss")
    for node in nodes:
        w_inv = np.linalg.inv(node.w_vectors)
        for rho in np.linspace(r2 / delta_samples, r2, delta_samples):
            pts = node.p0 + rho * rule.points @ w_inv.T
            h = 1e-5
            pts_hi = node.p0 + (rho + h) * rule.points @ w_inv.T
            slope = (model.gap(pts_hi) - model.gap(pts)) / h
            c_ref = 1.0  # d|Wq|/drho = 1 in the W-radial coordinate
            if np.any(np.abs(slope) < 0.5 * c_ref) or \
                    np.any(np.abs(slope) > 2.0 * c_ref):
                bad = rule.points[int(np.argmax(np.abs(np.abs(slope) - 1.0)))]
                raise CurrentError(
                    f"delta condition violated at rho={rho:.3f} along "
                    f"omega={np.round(bad, 3)}")
    # containment: characteristics started outside Gamma_s keep a gap
    # >= eps * d from every node over [0, horizon]
    if drive is not None and horizon > 0 and nodes:
        shift_max = epsilon * np.abs([drive.integral(t) for t in
                                      np.linspace(0, horizon, 33)]).max()
        if r1 * epsilon <= 2.0 * shift_max:
            raise CurrentError(
                f"containment: eps*r1 = {epsilon * r1:.3e} does not dominate "
                f"the drive excursion {shift_max:.3e}")
    return part


# ---------------------------------------------------------------------------
# Hybrid quadrature grid
# ---------------------------------------------------------------------------


@dataclass
class NodalPatch:
    node: object
    points: np.ndarray    # (n, 3) absolute p
    weights: np.ndarray   # (n,) includes rho^2/|det W| and angular weights
    rho: np.ndarray       # (n,) ellipsoidal radius |W (p - p0)|
    omega: np.ndarray     # (n, 3) unit sphere parameters


@dataclass
class QuadratureGrid:
    uniform_points: np.ndarray
    uniform_weight: float
    patches: list

    def total_weight(self) -> float:
        w = self.uniform_weight * self.uniform_points.shape[0]
        return w  # patch weights overlap the uniform region via chi


def build_grid(partition: BZPartition, n_uniform: int,
               angular_degree: int = 23, r_min_frac: float = 2e-3,
               n_inner: int = 12, osc_width: float | None = None,
               n_gl: int = 6) -> QuadratureGrid:
    """Uniform periodic grid + W-adapted spherical patches out to r2.

    osc_width caps the radial panel width (set it to ~2.5*eps/horizon when
    the integrand carries the e^{i t lambda / eps} phase).
    """
    upts, uw = grids.bz_uniform_grid(partition.lattice.recip, n_uniform)
    patches = []
    r2 = partition.r2
    width = r2 / 6.0 if osc_width is None else min(osc_width, r2 / 6.0)
    rule = grids.sphere_rule(angular_degree, "lebedev")
    for node in partition.nodes:
        edges = grids.graded_edges(r_min_frac * r2, min(8 * r_min_frac * r2, r2 / 4),
                                   r2, n_inner, width)
        r_nodes, r_wts = grids.gauss_panels(edges, n_gl)
        w_inv = np.linalg.inv(node.w_vectors)
        det = abs(np.linalg.det(node.w_vectors))
        pts = node.p0[None, None, :] \
            + r_nodes[:, None, None] * (rule.points @ w_inv.T)[None, :, :]
        wts = (r_wts[:, None] * r_nodes[:, None] ** 2 / det) * rule.weights[None, :]
        rho = np.broadcast_to(r_nodes[:, None], wts.shape)
        om = np.broadcast_to(rule.points[None, :, :], pts.shape)
        patches.append(NodalPatch(node=node,
                                  points=pts.reshape(-1, 3),
                                  weights=wts.ravel(),
                                  rho=np.ascontiguousarray(rho).ravel(),
                                  omega=np.ascontiguousarray(om).reshape(-1, 3)))
    return QuadratureGrid(uniform_points=upts, uniform_weight=uw,
                          patches=patches)


def hybrid_integral(partition: BZPartition, grid: QuadratureGrid, f_uniform,
                    f_patch) -> np.ndarray:
    """int f dp = int chi1 f (uniform) + sum_j int chi2 f (patches).

    f_uniform(points) and f_patch(patch, points) return (n, k) arrays.
    """
    chi1 = partition.chi1(grid.uniform_points)
    vals = f_uniform(grid.uniform_points)
    total = grid.uniform_weight * np.einsum("n,n...->...", chi1, vals)
    for patch in grid.patches:
        chi2 = partition.chi2(patch.points)
        vals = f_patch(patch, patch.points)
        total = total + np.einsum("n,n,n...->...", patch.weights, chi2, vals)
    return total


# ---------------------------------------------------------------------------
# Brute-force current
# ---------------------------------------------------------------------------


def current_brute(model, drive, initial: dynamics.InitialData,
                  partition: BZPartition, grid: QuadratureGrid,
                  epsilon: float, t_out, theta_max: float = 0.25,
                  imag_tol: float = 1e-7):
    """J_k(t) = int sum_mn c_nm D_mn dp via Bloch-vector propagation.

    The integrand at label p is u+ (dH/dp_k)(P_t(p)) u, which is real by
    construction here; the Hermiticity guard applies to the density route.
    Returns an array (len(t_out), 3).
    """
    t_out = np.atleast_1d(np.asarray(t_out, dtype=float))
    chi1 = partition.chi1(grid.uniform_points)
    keep_u = chi1 > 1e-14
    pts_u = grid.uniform_points[keep_u]
    w_u = grid.uniform_weight * chi1[keep_u]
    batches = [(pts_u, w_u)]
    for patch in grid.patches:
        chi2 = partition.chi2(patch.points)
        keep = chi2 > 1e-14
        batches.append((patch.points[keep], patch.weights[keep] * chi2[keep]))
    out = np.zeros((len(t_out), 3))
    for pts, wts in batches:
        if pts.shape[0] == 0:
            continue
        c00 = initial.c00(pts)
        n0, traj = dynamics._bloch_run(model, drive, pts, epsilon, t_out,
                                       theta_max, 48, weights=c00)
        for k, t in enumerate(t_out):
            integ = dynamics.brute_current_integrand(
                model, drive, pts, epsilon, t, n0, traj[k])
            out[k] += wts @ integ
    return out


# ---------------------------------------------------------------------------
# J1: the six summands
# ---------------------------------------------------------------------------


def _field_d00(model, pts):
    return model.band_velocity(pts)[..., 0, :]


def _field_offdiag_products(model, pts):
    """(n, 3 l, 3 k): D^l_01 D^k_10 (gauge-free products)."""
    d01 = model.offdiag_d(pts)
    return np.einsum("nl,nk->nlk", d01, np.conj(d01))


@dataclass
class J1Report:
    time: float
    epsilon: float
    summands: dict
    total: np.ndarray


def current_j1(model, drive, initial: dynamics.InitialData,
               partition: BZPartition, grid: QuadratureGrid,
               epsilon: float, t: float, n_bands: int = 2) -> J1Report:
    """The six J1 summands (two-band fast path; n >= 2 sums vanish).

        (i)   int D00 c00
        (ii)  -eps (int_0^t E) . int (grad c00) D00
        (iii) +(eps^2/2) (int E)x(int E) : int (hess c00) D00
        (iv)  -2 eps^2 sum_{n>=1} int c00 E(t).Im(D_0n D^k_n0)/lam_n0^2
        (v)   +2 eps^3 sum_{n>=2} int c00 E'(t).Re(D_0n D^k_n0)/lam_n0^3
        (vi)  +2 eps^3 E'(t) . int Re[c00 D_01 D^k_10 / lam10^3
                  - sum_j 1_{B_j(r2)} c00(p0_j) D_j01 D^k_j10 / |W_j q|^3]

    ((iv)/(v) signs follow the re-derived expansion; see the ledger.)
    """
    if n_bands != 2:
        raise CurrentError("the J1 fast path is two-band; higher bands of the "
                           "plane-wave scenario enter through (v) only")
    q_e = drive.integral(t)
    e_t = drive(t)
    ep_t = drive.derivative(t)

    def f_i(pts):
        return _field_d00(model, pts) * initial.c00(pts)[:, None]

    s_i = hybrid_integral(partition, grid, f_i, lambda _, pts: f_i(pts))

    def f_ii(pts):
        return np.einsum("ni,nk->nik", initial.grad_c00(pts),
                         _field_d00(model, pts))

    g_ii = hybrid_integral(partition, grid, f_ii, lambda _, pts: f_ii(pts))
    s_ii = -epsilon * np.einsum("i,ik->k", q_e, g_ii)

    def f_iii(pts):
        return np.einsum("nij,nk->nijk", initial.hess_c00(pts),
                         _field_d00(model, pts))

    g_iii = hybrid_integral(partition, grid, f_iii, lambda _, pts: f_iii(pts))
    s_iii = 0.5 * epsilon**2 * np.einsum("i,j,ijk->k", q_e, q_e, g_iii)

    def f_iv(pts):
        lam10 = model.gap(pts)
        prod = _field_offdiag_products(model, pts)
        return initial.c00(pts)[:, None] * \
            np.einsum("l,nlk->nk", e_t, np.imag(prod)) / lam10[:, None] ** 2

    s_iv = -2.0 * epsilon**2 * hybrid_integral(
        partition, grid, f_iv, lambda _, pts: f_iv(pts))

    s_v = np.zeros(3)  # two-band scenarios have no n >= 2 bands

    def f_vi_smooth(pts):
        lam10 = model.gap(pts)
        prod = np.einsum("l,nlk->nk", ep_t,
                         np.real(_field_offdiag_products(model, pts)))
        out = initial.c00(pts)[:, None] * prod / lam10[:, None] ** 3
        for node in partition.nodes:
            q = partition.lattice.reduce_to_bz(pts - node.p0)
            rho = np.linalg.norm(q @ node.w_vectors.T, axis=-1)
            inside = rho < partition.r2
            if not np.any(inside):
                continue
            d_eff = weyl.effective_d(node, q[inside])[:, :, 1, 0]
            prod_eff = np.einsum("l,nl,nk->nk", ep_t, np.conj(d_eff), d_eff)
            out[inside] -= initial.c00(node.p0) * np.real(prod_eff) \
                / rho[inside, None] ** 3
        return out

    s_vi = 2.0 * epsilon**3 * hybrid_integral(
        partition, grid, f_vi_smooth, lambda _, pts: f_vi_smooth(pts))

    summands = {"i": s_i, "ii": s_ii, "iii": s_iii, "iv": s_iv,
                "v": s_v, "vi": s_vi}
    total = sum(summands.values())
    return J1Report(time=t, epsilon=epsilon, summands=summands, total=total)


# ---------------------------------------------------------------------------
# J2: nodal limit-system current
# ---------------------------------------------------------------------------


@dataclass
class J2Report:
    time: float
    epsilon: float
    per_node: list
    tail_estimates: list
    total: np.ndarray


def _j2_radial_grid(node, r2: float, epsilon: float, horizon: float,
                    r_max_factor: float, angular_degree: int, n_gl: int):
    r_cut = r2 / epsilon
    r_max = r_max_factor * r_cut
    width_osc = 2.5 / max(horizon, 1e-6)
    edges = grids.graded_edges(2e-3, 1.0, r_max, 10,
                               max_width=min(width_osc, r_max / 24))
    r_nodes, r_wts = grids.gauss_panels(edges, n_gl)
    rule = grids.sphere_rule(angular_degree, "lebedev")
    return r_nodes, r_wts, rule, r_cut, r_max


def current_j2(nodes, drive, initial: dynamics.InitialData,
               partition: BZPartition, epsilon: float, t: float,
               r_max_factor: float = 4.0, angular_degree: int = 17,
               n_gl: int = 6, theta_max: float = 0.25,
               tail_tol: float = 1e-2) -> J2Report:
    """J2_k = eps^3 sum_j int [ tr(H_k sigma_j(t, p~))
        - 1_{|W p~| > r2/eps} 2 c00(p0) E'(t).Re(D_j01 D^k_j10)(p~)/|W p~|^3 ] dp~.

    Eulerian grid in p~ (W-adapted shells, antipodal angular rules) so the
    principal-value structure cancels on the grid; sigma is the limit-system
    solution transported from labels q = p~ - int_0^t E.
    """
    ep_t = drive.derivative(t)
    q_e = drive.integral(t)
    reports, tails = [], []
    total = np.zeros(3)
    for node in nodes:
        r_nodes, r_wts, rule, r_cut, r_max = _j2_radial_grid(
            node, partition.r2, epsilon, t, r_max_factor, angular_degree, n_gl)
        w_inv = np.linalg.inv(node.w_vectors)
        det = abs(np.linalg.det(node.w_vectors))
        p_t = (r_nodes[:, None, None] * (rule.points @ w_inv.T)[None, :, :])
        shape = p_t.shape[:2]
        p_t = p_t.reshape(-1, 3)
        labels = p_t - q_e[None, :]
        c00_node = float(initial.c00(node.p0))
        [st] = dynamics.integrate_limit_system(
            node, labels, drive, [t], c00_node, theta_max=theta_max)
        integ = st.velocity_trace()  # tr(H_k sigma) at the Eulerian points
        rho = np.repeat(r_nodes, rule.n)
        outside = rho > r_cut
        if np.any(outside):
            d_eff = weyl.effective_d(node, p_t[outside])[:, :, 1, 0]
            ct = 2.0 * c00_node * np.real(
                np.einsum("l,nl,nk->nk", ep_t, np.conj(d_eff), d_eff)) \
                / rho[outside, None] ** 3
            integ = integ.copy()
            integ[outside] -= ct
        wts = (r_wts[:, None] * r_nodes[:, None] ** 2 / det
               * rule.weights[None, :]).ravel()
        node_val = epsilon**3 * (wts @ integ)
        # tail: the counterterm-matched integrand decays like rho^-4, so the
        # angular shell density alpha(rho) = rho^2/det * sum_ang w f behaves
        # like C rho^-2; fit C on the outer shells and add int_{rmax} = C/rmax
        alpha = (integ.reshape(shape + (3,))
                 * rule.weights[None, :, None]).sum(axis=1) \
            * (r_nodes[:, None] ** 2 / det)
        outer = r_nodes > 0.8 * r_max
        c_fit = float(np.median(np.abs(alpha[outer]).max(axis=1)
                                * r_nodes[outer] ** 2))
        tail = epsilon**3 * c_fit / r_max
        if tail > max(tail_tol * np.abs(node_val).max(), 1e-10):
            raise CurrentError(
                f"J2 tail estimate {tail:.2e} too large: increase R_max")
        reports.append(node_val)
        tails.append(float(tail))
        total = total + node_val
    return J2Report(time=t, epsilon=epsilon, per_node=reports,
                    tail_estimates=tails, total=total)


def s2b_vanishing_check(node, drive, t: float, c00_at_node: float = 1.0,
                        angular_degree: int = 23, n_radial: int = 24,
                        r_lo: float = 0.5, r_hi: float = 40.0) -> float:
    """Principal-value check of int D^k_nm |Wp~|^-2 s^{j,2,b}_mn dp~ = 0.

    The pairing reduces to 2 c00 E(t).Im(D_j10 D^k_j01)(p~)/|W P~_t|^2 whose
    angular mean vanishes by the (2 pi/3)(W^T W)/|det W| identity; evaluated
    shell-by-shell with an antipodal rule and radial Gauss panels.
    """
    rule = grids.sphere_rule(angular_degree, "lebedev")
    w_inv = np.linalg.inv(node.w_vectors)
    det = abs(np.linalg.det(node.w_vectors))
    edges = np.geomspace(r_lo, r_hi, n_radial + 1)
    r_nodes, r_wts = grids.gauss_panels(edges, 6)
    e_t = drive(t)
    q_e = drive.integral(t)
    total = np.zeros(3)
    for r, wr in zip(r_nodes, r_wts):
        pts = r * rule.points @ w_inv.T
        d_eff = weyl.effective_d(node, pts)[:, :, 1, 0]
        shifted = pts + q_e[None, :]
        m_t2 = np.sum((shifted @ node.w_vectors.T) ** 2, axis=-1)
        val = 2.0 * c00_at_node * np.imag(
            np.einsum("l,nl,nk->nk", e_t, d_eff, np.conj(d_eff))) \
            * (r ** 2 / m_t2)[:, None]
        total = total + wr * (r**2 / det) * (rule.weights @ val)
    return float(np.abs(total).max())


# ---------------------------------------------------------------------------
# Convergence harness
# ---------------------------------------------------------------------------


@dataclass
class LadderRow:
    epsilon: float
    time: float
    j_brute: np.ndarray
    j1_summands: dict
    j1_total: np.ndarray
    j2_total: np.ndarray
    residual: np.ndarray

    @property
    def rho(self) -> float:
        return float(np.abs(self.residual).max() / self.epsilon**3)


@dataclass
class CurrentReport:
    rows: list

    def rho_by_epsilon(self):
        eps_vals = sorted({r.epsilon for r in self.rows}, reverse=True)
        return [(e, max(r.rho for r in self.rows if r.epsilon == e))
                for e in eps_vals]


def convergence_harness(scenario, eps_ladder, t_out, include_j2: bool = True,
                        quad_opts: dict | None = None) -> CurrentReport:
    """Run brute-force and expansion currents over the epsilon ladder."""
    eps_ladder = list(eps_ladder)
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise CurrentError("epsilon ladder must be strictly decreasing")
    opts = dict(n_uniform=32, angular_degree=23, theta_max=0.25,
                j2_angular_degree=17, r_max_factor=4.0)
    if quad_opts:
        opts.update(quad_opts)
    rows = []
    for eps in eps_ladder:
        partition = scenario.partition(eps)
        osc_w = 2.5 * eps / max(t_out[-1], 1e-9)
        grid = build_grid(partition, opts["n_uniform"],
                          angular_degree=opts["angular_degree"],
                          osc_width=osc_w)
        jb = current_brute(scenario.model, scenario.drive, scenario.initial,
                           partition, grid, eps, t_out,
                           theta_max=opts["theta_max"])
        for k, t in enumerate(t_out):
            j1 = current_j1(scenario.model, scenario.drive, scenario.initial,
                            partition, grid, eps, t)
            if include_j2 and partition.nodes:
                j2 = current_j2(partition.nodes, scenario.drive,
                                scenario.initial, partition, eps, t,
                                r_max_factor=opts["r_max_factor"],
                                angular_degree=opts["j2_angular_degree"],
                                theta_max=opts["theta_max"])
                j2_total = j2.total
            else:
                j2_total = np.zeros(3)
            resid = jb[k] - j1.total - j2_total
            rows.append(LadderRow(epsilon=eps, time=float(t), j_brute=jb[k],
                                  j1_summands=j1.summands, j1_total=j1.total,
                                  j2_total=j2_total, residual=resid))
    return CurrentReport(rows=rows)
