"""Band models: the common fibre-Hamiltonian interface used by the dynamics
and current pipelines.

A model provides, vectorised over quasi-momenta of shape (..., 3):

* ``hamiltonian(p)``   -> (..., N, N) complex Hermitian
* ``dhamiltonian(p)``  -> (..., 3, N, N) gradient of H wrt p
* ``bands(p)``         -> (eigenvalues (..., N) ascending, vectors (..., N, N))

Two families are shipped: analytic two-band Pauli models (synthetic gapped /
Weyl scenarios) and the plane-wave discretisation of a periodic potential.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lattice as lat

_SIGMA = np.array([
    [[0.0, 1.0], [1.0, 0.0]],
    [[0.0, -1.0j], [1.0j, 0.0]],
    [[1.0, 0.0], [0.0, -1.0]],
], dtype=complex)


def pauli_matrix(g: np.ndarray, h: np.ndarray | None = None) -> np.ndarray:
    """(..., 3) real g, optional (...,) h -> (..., 2, 2) h*I + g.sigma."""
    g = np.asarray(g, dtype=float)
    out = np.einsum("...a,aij->...ij", g, _SIGMA)
    if h is not None:
        out = out + np.asarray(h)[..., None, None] * np.eye(2)
    return out


def pauli_bands(g: np.ndarray, h: np.ndarray | None = None):
    """Closed-form eigensystem of h*I + g.sigma, ascending, with the
    deterministic first-large-component-real-positive gauge."""
    g = np.asarray(g, dtype=float)
    r = np.linalg.norm(g, axis=-1)
    # at an exact degeneracy any orthonormal basis will do; use the z-axis
    # convention there (basis-invariant quantities do not care)
    safe = np.where(r > 0, r, 1.0)
    n = np.where(r[..., None] > 0, g / safe[..., None],
                 np.array([0.0, 0.0, 1.0]))
    ct = np.clip(n[..., 2], -1.0, 1.0)
    cos_half = np.sqrt(0.5 * (1.0 + ct))
    sin_half = np.sqrt(0.5 * (1.0 - ct))
    phase = np.where(np.abs(n[..., 0]) + np.abs(n[..., 1]) > 1e-15,
                     (n[..., 0] + 1j * n[..., 1]),
                     1.0)
    phase = phase / np.abs(phase)
    # upper = (cos t/2, e^{i phi} sin t/2), lower = (sin t/2, -e^{i phi} cos t/2);
    # both have a real nonnegative first component
    shape = g.shape[:-1]
    vec = np.empty(shape + (2, 2), dtype=complex)
    vec[..., 0, 0] = sin_half            # column 0 = lower band
    vec[..., 1, 0] = -phase * cos_half
    vec[..., 0, 1] = cos_half            # column 1 = upper band
    vec[..., 1, 1] = phase * sin_half
    lam = np.empty(shape + (2,), dtype=float)
    base = np.zeros(shape) if h is None else np.asarray(h)
    lam[..., 0] = base - r
    lam[..., 1] = base + r
    return lam, vec


@dataclass
class TwoBandModel:
    """H(p) = h(p) I + g(p).sigma on a periodic reciprocal cell.

    g and h are given by small trig series so gradients and Hessians are
    closed-form: each component is sum_j amp_j * trig(m_j . p) with integer
    triples m_j (the lattice is cubic with b_i = e_i unless stated).
    """

    g_terms: list  # [(component 0..2, (m1,m2,m3), amp, 'sin'|'cos'|'const')]
    h_terms: list = field(default_factory=list)
    lattice: lat.LatticeSpec = field(default_factory=lambda: lat.LatticeSpec(direct=np.eye(3)))
    name: str = "two-band"

    n_bands: int = 2

    def _gvec(self, m):
        # BZ-periodic functions have Fourier phases e^{i X.p} with X in the
        # DIRECT lattice: the triple labels X = m1 a1 + m2 a2 + m3 a3
        return np.asarray(m, dtype=float) @ self.lattice.direct

    def _eval_series(self, terms, p):
        p = np.asarray(p, dtype=float)
        val = {}
        for comp, m, amp, kind in terms:
            phase = p @ self._gvec(m)
            if kind == "sin":
                v = amp * np.sin(phase)
            elif kind == "cos":
                v = amp * np.cos(phase)
            elif kind == "const":
                v = amp * np.ones(p.shape[:-1])
            else:
                raise ValueError(kind)
            val[comp] = val.get(comp, 0.0) + v
        return val

    def _eval_series_grad(self, terms, p):
        p = np.asarray(p, dtype=float)
        out = {}
        for comp, m, amp, kind in terms:
            gv = self._gvec(m)
            phase = p @ gv
            if kind == "sin":
                dv = amp * np.cos(phase)[..., None] * gv
            elif kind == "cos":
                dv = -amp * np.sin(phase)[..., None] * gv
            else:
                dv = np.zeros(p.shape[:-1] + (3,))
            out[comp] = out.get(comp, 0.0) + dv
        return out

    def g(self, p):
        p = np.asarray(p, dtype=float)
        val = self._eval_series(self.g_terms, p)
        g = np.zeros(p.shape[:-1] + (3,))
        for comp, v in val.items():
            g[..., comp] = v
        return g

    def h(self, p):
        p = np.asarray(p, dtype=float)
        if not self.h_terms:
            return np.zeros(p.shape[:-1])
        val = self._eval_series(self.h_terms, p)
        return val.get(0, np.zeros(p.shape[:-1]))

    def grad_g(self, p):
        """(..., 3 pauli, 3 momentum) gradient d g_a / d p_i."""
        p = np.asarray(p, dtype=float)
        val = self._eval_series_grad(self.g_terms, p)
        dg = np.zeros(p.shape[:-1] + (3, 3))
        for comp, v in val.items():
            dg[..., comp, :] = v
        return dg

    def grad_h(self, p):
        p = np.asarray(p, dtype=float)
        if not self.h_terms:
            return np.zeros(p.shape[:-1] + (3,))
        val = self._eval_series_grad(self.h_terms, p)
        return val.get(0, np.zeros(p.shape[:-1] + (3,)))

    # -- fibre interface ----------------------------------------------------

    def hamiltonian(self, p):
        return pauli_matrix(self.g(p), self.h(p))

    def dhamiltonian(self, p):
        dg = self.grad_g(p)  # (..., a, i)
        dh = self.grad_h(p)  # (..., i)
        out = np.einsum("...ai,ajk->...ijk", dg, _SIGMA)
        out = out + dh[..., None, None] * np.eye(2)
        return out

    def bands(self, p):
        return pauli_bands(self.g(p), self.h(p))

    def gap(self, p):
        """lambda_1 - lambda_0 = 2|g|."""
        return 2.0 * np.linalg.norm(self.g(p), axis=-1)

    def band_velocity(self, p):
        """D_nn = grad lambda_n, shape (..., 2, 3)."""
        g = self.g(p)
        r = np.linalg.norm(g, axis=-1)
        dgr = np.einsum("...ai,...a->...i", self.grad_g(p), g) / r[..., None]
        dh = self.grad_h(p)
        return np.stack([dh - dgr, dh + dgr], axis=-2)

    def offdiag_d(self, p):
        """D_01 = <v_0, grad_p H v_1>, shape (..., 3) complex (lower->upper)."""
        lam, vec = self.bands(p)
        dh = self.dhamiltonian(p)  # (..., i, 2, 2)
        return np.einsum("...j,...ijk,...k->...i",
                         vec[..., 0].conj(), dh, vec[..., 1])

    def diag_connection(self, p):
        """A_nn = <v_n, i grad_p v_n> in the pauli_bands gauge, (..., 2, 3).

        With n-hat = g/|g| and angles (theta, phi) of n-hat, the gauge with
        real first components has A_00 = -cos^2(theta/2) grad_p phi and
        A_11 = -sin^2(theta/2) grad_p phi, singular on the phi strings
        (n-hat = +-z); callers must keep their points off the strings.
        """
        g = self.g(p)
        r = np.linalg.norm(g, axis=-1)
        nhat = g / r[..., None]
        rho2 = nhat[..., 0] ** 2 + nhat[..., 1] ** 2
        grad_phi_g = np.stack([-nhat[..., 1], nhat[..., 0],
                               np.zeros_like(r)], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            grad_phi_g = grad_phi_g / np.where(rho2 > 0, rho2, np.inf)[..., None]
        dg = self.grad_g(p)  # (..., a, i)
        grad_phi = np.einsum("...a,...ai->...i", grad_phi_g, dg) / r[..., None]
        ct = nhat[..., 2]
        c0 = -0.5 * (1.0 + ct)   # -cos^2(theta/2)
        c1 = -0.5 * (1.0 - ct)   # -sin^2(theta/2)
        return np.stack([c0[..., None] * grad_phi,
                         c1[..., None] * grad_phi], axis=-2)


def weyl_pair_model(kappa: float = 1.0, mass: float = 2.5) -> TwoBandModel:
    """Two Weyl nodes of opposite chirality at (0, 0, +-arccos(mass - 2)).

    g = kappa (sin p1, sin p2, mass - cos p1 - cos p2 - cos p3); untilted
    (h = 0) so the nodal current integrals are principal-value clean.
    """
    if not 1.0 < mass < 3.0:
        raise ValueError("mass outside the two-node window (1, 3)")
    g_terms = [
        (0, (1, 0, 0), kappa, "sin"),
        (1, (0, 1, 0), kappa, "sin"),
        (2, (0, 0, 0), kappa * mass, "const"),
        (2, (1, 0, 0), -kappa, "cos"),
        (2, (0, 1, 0), -kappa, "cos"),
        (2, (0, 0, 1), -kappa, "cos"),
    ]
    return TwoBandModel(g_terms=g_terms, name="weyl-pair")


def gapped_model(kappa: float = 1.0, mass: float = 3.55) -> TwoBandModel:
    """Fully gapped two-band model (same series, mass > 3): min gap 2k(m-3)."""
    if mass <= 3.0:
        raise ValueError("mass must exceed 3 for a gapped model")
    g_terms = [
        (0, (1, 0, 0), kappa, "sin"),
        (1, (0, 1, 0), kappa, "sin"),
        (2, (0, 0, 0), kappa * mass, "const"),
        (2, (1, 0, 0), -kappa, "cos"),
        (2, (0, 1, 0), -kappa, "cos"),
        (2, (0, 0, 1), -kappa, "cos"),
    ]
    return TwoBandModel(g_terms=g_terms, name="gapped")


def conical_model(w_matrix: np.ndarray | None = None,
                  tilt: np.ndarray | None = None,
                  period: float = 20.0 * np.pi) -> TwoBandModel:
    """Exactly conical node at p = 0: H = (tilt.p)/2 I + (W p).sigma~ / 2.

    sigma~ = (s1, -s2, s3) is the conjugated triple the closed forms use; with
    W = I this is the reference node with Omega_+ = +p/(2 r^3). Linear g is
    periodised on a large cell so the model still lives on a torus.
    """
    w = np.eye(3) if w_matrix is None else np.asarray(w_matrix, dtype=float)
    k = 2.0 * np.pi / period  # sin(k p)/k ~ p near the node
    g_terms = []
    for a in range(3):
        sign = -1.0 if a == 1 else 1.0  # sigma~ second component
        for i in range(3):
            if abs(w[a, i]) > 0:
                m = tuple(1 if j == i else 0 for j in range(3))
                g_terms.append((a, m, sign * 0.5 * w[a, i] / k, "sin"))
    h_terms = []
    if tilt is not None:
        t = np.asarray(tilt, dtype=float)
        for i in range(3):
            if abs(t[i]) > 0:
                m = tuple(1 if j == i else 0 for j in range(3))
                h_terms.append((0, m, 0.5 * t[i] / k, "sin"))
    lattice = lat.LatticeSpec(direct=k * np.eye(3))  # BZ side = period
    return TwoBandModel(g_terms=g_terms, h_terms=h_terms,
                        lattice=lattice, name="conical")


@dataclass
class PlaneWaveModel:
    """Plane-wave discretised H(p) = 1/2(-i grad + p)^2 + V as a band model."""

    basis: lat.PlaneWaveBasis
    potential: lat.PotentialSpec
    n_bands: int
    name: str = "plane-wave"

    def hamiltonian(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            return lat.assemble_hamiltonian(self.basis, self.potential, p)
        flat = p.reshape(-1, 3)
        out = np.stack([lat.assemble_hamiltonian(self.basis, self.potential, q)
                        for q in flat])
        return out.reshape(p.shape[:-1] + out.shape[1:])

    def dhamiltonian(self, p):
        """d H / d p_i = diag((p + G)_i)."""
        p = np.asarray(p, dtype=float)
        n = self.basis.dim
        kin = p[..., None, :] + self.basis.g_vectors  # (..., dim, 3)
        out = np.zeros(p.shape[:-1] + (3, n, n), dtype=complex)
        ii = np.arange(n)
        for i in range(3):
            out[..., i, ii, ii] = kin[..., :, i]
        return out

    def bands(self, p):
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            es = lat.solve_bands(self.hamiltonian(p), self.n_bands, p)
            return es.eigenvalues, es.vectors
        flat = p.reshape(-1, 3)
        lams, vecs = [], []
        for q in flat:
            es = lat.solve_bands(self.hamiltonian(q), self.n_bands, q)
            lams.append(es.eigenvalues)
            vecs.append(es.vectors)
        lam = np.stack(lams).reshape(p.shape[:-1] + (self.n_bands,))
        vec = np.stack(vecs).reshape(p.shape[:-1] + (self.basis.dim, self.n_bands))
        return lam, vec

    def gap(self, p):
        lam, _ = self.bands(p)
        return lam[..., 1] - lam[..., 0]
