"""Weyl node detection, extraction, and effective (conical) quantities.

Near a double degeneracy at p0 the two crossing bands are governed by the
2x2 restriction R(q) = sum_i q_i H_i with (H_i)_jk = <phi_j, dH/dp_i phi_k>.
Writing H_i = 1/2[(w0)_i I + sum_a (w_a)_i sigma~_a] over the conjugated Pauli
triple sigma~ = (s1, -s2, s3) gives

    R(q) = 1/2 [ (w0.q) I + (W q).sigma~ ],   W rows = w1, w2, w3,

with exact eigenvalues lambda_{+-}(q) = 1/2 (w0.q +- |W q|); the gap is |W q|
and the chirality is sign(det W) (nodal Berry flux = 2 pi sign(det W)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import grids
from .models import pauli_bands

_SIGMA_T = np.array([
    [[0.0, 1.0], [1.0, 0.0]],
    [[0.0, 1.0j], [-1.0j, 0.0]],
    [[1.0, 0.0], [0.0, -1.0]],
], dtype=complex)

_EPS3 = np.zeros((3, 3, 3))
_EPS3[0, 1, 2] = _EPS3[1, 2, 0] = _EPS3[2, 0, 1] = 1.0
_EPS3[0, 2, 1] = _EPS3[2, 1, 0] = _EPS3[1, 0, 2] = -1.0


class NodeError(RuntimeError):
    pass


@dataclass
class WeylNode:
    p0: np.ndarray
    band_pair: tuple
    phi: np.ndarray          # (dim, 2) degenerate eigenbasis
    h_matrices: np.ndarray   # (3, 2, 2) Hermitian <phi_j, dH_i phi_k>
    w0: np.ndarray
    w_vectors: np.ndarray    # rows w1, w2, w3
    gap_residual: float

    @property
    def W(self) -> np.ndarray:
        return self.w_vectors

    @property
    def chirality(self) -> int:
        d = np.linalg.det(self.w_vectors)
        if abs(d) < 1e-12:
            raise NodeError("singular W: w-vectors not linearly independent")
        return 1 if d > 0 else -1

    @property
    def tilted(self) -> bool:
        return bool(np.linalg.norm(self.w0) > 1e-10)

    def velocity_matrices(self) -> np.ndarray:
        """The 2x2 velocity matrices H_k reconstructed from (w0, W)."""
        out = 0.5 * np.einsum("ak,aij->kij", self.w_vectors, _SIGMA_T)
        return out + 0.5 * self.w0[:, None, None] * np.eye(2)


@dataclass
class NodeCandidate:
    p0: np.ndarray
    gap: float
    is_node: bool


def find_nodes(model, coarse_n: int = 12, gap_tol: float = 0.25,
               refine_tol: float = 1e-9, merge_radius: float | None = None,
               max_iter: int = 400) -> list:
    """Locate gap minima of bands 0-1 below gap_tol and refine them.

    Coarse scan on an n^3 grid of the reciprocal cell, local minima collected,
    Nelder-Mead refinement of the gap; candidates that stall above refine_tol
    are reported with is_node = False.
    """
    recip = model.lattice.recip
    if merge_radius is None:
        merge_radius = 1e-4 * np.linalg.norm(recip.sum(axis=0))
    f = (np.arange(coarse_n) + 0.5) / coarse_n - 0.5
    fx, fy, fz = np.meshgrid(f, f, f, indexing="ij")
    frac = np.stack([fx, fy, fz], axis=-1)
    pts = frac @ recip
    gap = model.gap(pts)

    # local minima on the periodic grid; all of them are refined and the
    # gap_tol filter is applied to the refined value (a coarse grid can sit
    # well above the true minimum)
    mins = np.ones(gap.shape, dtype=bool)
    for axis in range(3):
        for shift in (1, -1):
            mins &= gap <= np.roll(gap, shift, axis=axis)
    seeds = pts[mins]

    found: list[NodeCandidate] = []
    for seed in seeds:
        res = scipy.optimize.minimize(
            lambda q: float(model.gap(q)), seed, method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": max_iter})
        p0 = model.lattice.reduce_to_bz(res.x)
        g = float(model.gap(p0))
        if g > gap_tol:
            continue
        dup = False
        for c in found:
            d = model.lattice.reduce_to_bz(c.p0 - p0)
            if np.linalg.norm(d) < merge_radius:
                if g < c.gap:
                    c.p0, c.gap = p0, g
                dup = True
                break
        if not dup:
            found.append(NodeCandidate(p0=p0, gap=g, is_node=g < refine_tol))
    for c in found:
        c.is_node = c.gap < refine_tol
    found.sort(key=lambda c: tuple(np.round(c.p0, 9)))
    return found


def extract_node(model, p0: np.ndarray, degeneracy_tol: float = 1e-7,
                 band_pair: tuple = (0, 1)) -> WeylNode:
    """Build the node data (H_i, w-vectors, W, chirality) at p0."""
    p0 = np.asarray(p0, dtype=float)
    lam, vec = model.bands(p0)
    n0, n1 = band_pair
    gap = lam[n1] - lam[n0]
    if gap > degeneracy_tol:
        raise NodeError(f"bands {band_pair} not degenerate at p0: gap {gap:.3e}")
    if n1 - n0 != 1 or (n0 > 0 and lam[n0] - lam[n0 - 1] < degeneracy_tol) \
            or (n1 + 1 < len(lam) and lam[n1 + 1] - lam[n1] < degeneracy_tol):
        raise NodeError("degeneracy is not double-fold")
    phi = vec[:, [n0, n1]]
    dh = model.dhamiltonian(p0)  # (3, dim, dim)
    h_i = np.einsum("gj,igh,hk->ijk", phi.conj(), dh, phi)
    h_i = 0.5 * (h_i + np.conj(np.swapaxes(h_i, 1, 2)))
    w0 = np.real(h_i[:, 0, 0] + h_i[:, 1, 1])
    w3 = np.real(h_i[:, 0, 0] - h_i[:, 1, 1])
    w1 = 2.0 * np.real(h_i[:, 1, 0])
    # sigma~ convention: w2 from the (1,2) entry (= -Im (H_i)_{21}); this is
    # what makes H_i == 1/2[(w0)_i I + sum_a (w_a)_i sigma~_a] an identity and
    # locks chirality = sign(det W) to the +2 pi Berry flux
    w2 = 2.0 * np.imag(h_i[:, 0, 1])
    W = np.stack([w1, w2, w3], axis=0)
    if abs(np.linalg.det(W)) < 1e-10:
        raise NodeError("w-vectors are linearly dependent (det W ~ 0)")
    return WeylNode(p0=p0, band_pair=band_pair, phi=phi, h_matrices=h_i,
                    w0=w0, w_vectors=W, gap_residual=float(gap))


# ---------------------------------------------------------------------------
# Effective quantities of the conical model
# ---------------------------------------------------------------------------


def node_bands(node: WeylNode, q: np.ndarray):
    """Eigen-system of R(q) = sum q_i H_i in the canonical (w0, W) frame.

    Returns (lambda (..., 2) ascending, vectors (..., 2, 2)) with the
    deterministic first-component-real-positive gauge. The vectors live in the
    sigma~ representation; contract them with node.velocity_matrices().
    """
    q = np.asarray(q, dtype=float)
    m = q @ node.w_vectors.T  # m_a = (W q)_a
    gflip = 0.5 * np.stack([m[..., 0], -m[..., 1], m[..., 2]], axis=-1)
    lam, vec = pauli_bands(gflip, 0.5 * (q @ node.w0))
    return lam, vec


@dataclass
class EffectiveQuantities:
    """Closed-form conical quantities at displacement q from the node."""

    q: np.ndarray
    lam_minus: np.ndarray
    lam_plus: np.ndarray
    gap: np.ndarray                # |W q|
    d_matrix: np.ndarray           # (..., 3, 2, 2): D^k_{mn}, band order (-, +)
    a_plus_minus: np.ndarray       # (..., 3) A_{+-} = D_{+-}/(i |Wq|)
    lambda_plus_minus: np.ndarray  # (..., 3) A_{++} - A_{--}, fixed gauge
    delta_plus_minus: np.ndarray   # (..., 3) grad(lambda_+ - lambda_-)
    omega_plus: np.ndarray         # (..., 3) Berry curvature of the + band


def effective_quantities(node: WeylNode, q: np.ndarray) -> EffectiveQuantities:
    q = np.asarray(q, dtype=float)
    W = node.w_vectors
    m = q @ W.T
    r = np.linalg.norm(m, axis=-1)
    if np.any(r <= 0):
        raise NodeError("effective quantities are singular at q = 0")
    lam, vec = node_bands(node, q)
    hk = node.velocity_matrices()
    d = np.einsum("...gm,kgh,...hn->...kmn", vec.conj(), hk, vec)
    a_pm = d[..., :, 1, 0] / (1j * r[..., None])
    # diagonal connection difference A_{++} - A_{--} = -cos(theta) grad_q phi
    # in the first-component-real gauge; theta, phi are the angles of
    # m-hat = Wq/|Wq|
    mhat = m / r[..., None]
    rho2 = mhat[..., 0] ** 2 + mhat[..., 1] ** 2
    grad_phi_m = np.stack([-mhat[..., 1], mhat[..., 0],
                           np.zeros_like(r)], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        grad_phi_m = grad_phi_m / np.where(rho2 > 0, rho2, np.inf)[..., None]
    # grad_q = W^T (grad_m phi)/r with the projector already inside grad_m phi
    lam_pm = -mhat[..., 2:3] * (grad_phi_m @ W) / r[..., None]
    delta = (m @ W) / r[..., None]  # grad |Wq| = W^T W q / |Wq|
    omega = 1j * np.cross(a_pm, np.conj(a_pm))
    return EffectiveQuantities(
        q=q, lam_minus=lam[..., 0], lam_plus=lam[..., 1], gap=r,
        d_matrix=d, a_plus_minus=a_pm, lambda_plus_minus=lam_pm,
        delta_plus_minus=delta, omega_plus=np.real(omega))


def effective_d(node: WeylNode, q: np.ndarray) -> np.ndarray:
    """(..., 3, 2, 2) velocity matrix elements in the conical band basis."""
    _, vec = node_bands(node, q)
    hk = node.velocity_matrices()
    return np.einsum("...gm,kgh,...hn->...kmn", vec.conj(), hk, vec)


# ---------------------------------------------------------------------------
# Angular identities (Prop. "eff result" with convention-consistent targets)
# ---------------------------------------------------------------------------


@dataclass
class IdentityReport:
    name: str
    value: np.ndarray
    target: np.ndarray
    deviation: float


def angular_identities(node: WeylNode, r: float = 1.0,
                       quadrature_degree: int = 23,
                       kind: str = "lebedev") -> list:
    """Evaluate the three angular integrals over S^2_W and their closed forms.

    The S^2_W integral of g is |det W|^-1 int_{S^2} g(r W^-1 w) dS(w) (the
    measure induced by the radial change of variables). Closed forms, exact
    for the conical model:

        int D^k_{--}              = 0
        int D^k_{+-} D^l_{-+}     = (2 pi/3) (W^T W)_{kl} / |det W|
        int w^j D^k_{+-} D^l_{-+} = -(i pi/3) sgn(det W) eps_{klm} (W^-1 W^-T)_{mj}

    (the last reduces to -(i pi/3) eps^{jkl} sgn(det W) for orthogonal W; note
    the orientation is conjugate to the paper's print, which is tied to
    Omega_+ = +p/(2 r^3)).
    """
    if r <= 0:
        raise NodeError("identity radius must be positive")
    if quadrature_degree < 6:
        raise ValueError("quadrature degree below the integrand degree")
    rule = grids.sphere_rule(quadrature_degree, kind)
    W = node.w_vectors
    w_inv = np.linalg.inv(W)
    det = np.linalg.det(W)
    qpts = r * rule.points @ w_inv.T  # |W q| = r on these points
    d = effective_d(node, qpts)
    dpm = d[:, :, 1, 0]
    dmp = d[:, :, 0, 1]
    dmm = d[:, :, 0, 0]

    val_mm = np.einsum("n,nk->k", rule.weights, dmm) / abs(det)
    tgt_mm = 0.5 * node.w0 * 4.0 * np.pi / abs(det)  # = 0 for untilted nodes

    val_kl = np.einsum("n,nk,nl->kl", rule.weights, dpm, dmp) / abs(det)
    tgt_kl = (2.0 * np.pi / 3.0) * (W.T @ W) / abs(det)

    val_jkl = np.einsum("n,nj,nk,nl->jkl", rule.weights, rule.points @ w_inv.T,
                        dpm, dmp) / abs(det)
    wwt = w_inv @ w_inv.T
    tgt_jkl = -(1j * np.pi / 3.0) * np.sign(det) * \
        np.einsum("klm,mj->jkl", _EPS3, wwt)

    return [
        IdentityReport("D_minus_minus", val_mm, tgt_mm,
                       float(np.abs(val_mm - tgt_mm).max())),
        IdentityReport("D_pm_D_mp", val_kl, tgt_kl,
                       float(np.abs(val_kl - tgt_kl).max())),
        IdentityReport("omega_D_pm_D_mp", val_jkl, tgt_jkl,
                       float(np.abs(val_jkl - tgt_jkl).max())),
    ]


def unit_conical_node(w_matrix: np.ndarray | None = None,
                      tilt: np.ndarray | None = None) -> WeylNode:
    """Synthetic node record for a pure conical model (no host crystal)."""
    W = np.eye(3) if w_matrix is None else np.asarray(w_matrix, dtype=float)
    w0 = np.zeros(3) if tilt is None else np.asarray(tilt, dtype=float)
    h_i = 0.5 * np.einsum("ak,aij->kij", W, _SIGMA_T) \
        + 0.5 * w0[:, None, None] * np.eye(2)
    return WeylNode(p0=np.zeros(3), band_pair=(0, 1), phi=np.eye(2, dtype=complex),
                    h_matrices=h_i, w0=w0,
                    w_vectors=np.stack([2.0 * np.real(h_i[:, 1, 0]),
                                        2.0 * np.imag(h_i[:, 0, 1]),
                                        np.real(h_i[:, 0, 0] - h_i[:, 1, 1])]),
                    gap_residual=0.0)
