"""Periodic lattice, plane-wave Bloch Hamiltonian, and the Bloch transform.

The lattice-periodic Schroedinger operator is discretised in the plane-wave
basis {e^{iG.z}} with |G| <= cutoff; the fibre Hamiltonian at quasi-momentum p
is

    H(p)[G, G'] = 1/2 |p + G|^2 delta_{GG'} + V_{G-G'}

with V the Fourier coefficients of the real periodic potential (hbar = m = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    """Direct/reciprocal lattice pair; a_i . b_j = 2 pi delta_ij."""

    direct: np.ndarray  # rows a1,a2,a3
    recip: np.ndarray = field(init=False)  # rows b1,b2,b3
    cell_volume: float = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.direct, dtype=float).reshape(3, 3)
        vol = np.linalg.det(a)
        if abs(vol) < 1e-14:
            raise LatticeError("degenerate lattice basis")
        b = 2.0 * np.pi * np.linalg.inv(a).T
        object.__setattr__(self, "direct", a)
        object.__setattr__(self, "recip", b)
        object.__setattr__(self, "cell_volume", abs(vol))

    @property
    def bz_volume(self) -> float:
        return abs(np.linalg.det(self.recip))

    def reduce_to_bz(self, p: np.ndarray) -> np.ndarray:
        """Reduce quasi-momenta to the first reciprocal cell.

        Nearest-lattice-point rule; ties broken toward the lexicographically
        smaller integer triple so reduction is deterministic.
        """
        p = np.asarray(p, dtype=float)
        frac = p @ np.linalg.inv(self.recip)
        n = np.floor(frac + 0.5)
        # tie-break: on exact half-integers floor(x+1/2) already picks the
        # upper integer; shift to the smaller one
        tie = np.isclose(frac - np.floor(frac), 0.5, atol=1e-15)
        n = n - tie.astype(float)
        return p - n @ self.recip


def cubic_lattice(a: float = 2.0 * np.pi) -> LatticeSpec:
    """Simple cubic lattice with spacing a (b_i = (2 pi / a) e_i)."""
    return LatticeSpec(direct=a * np.eye(3))


@dataclass(frozen=True)
class PotentialSpec:
    """Real periodic potential as Fourier coefficients V_G keyed by (m1,m2,m3)."""

    coeffs: dict

    def __post_init__(self):
        object.__setattr__(self, "coeffs",
                           {tuple(int(i) for i in k): complex(v)
                            for k, v in self.coeffs.items()})

    def validate_reality(self, tol: float = 1e-12) -> None:
        for k, v in self.coeffs.items():
            mk = tuple(-i for i in k)
            if mk not in self.coeffs:
                raise LatticeError(f"potential misses conjugate index {mk}")
            if abs(np.conj(v) - self.coeffs[mk]) > tol:
                raise LatticeError(f"V_-G != conj(V_G) at {k}")

    def max_index_norm(self, recip: np.ndarray) -> float:
        if not self.coeffs:
            return 0.0
        g = np.array(list(self.coeffs.keys()), dtype=float) @ recip
        return float(np.linalg.norm(g, axis=1).max())


def cosine_chain_potential(v: float, axis: int = 0) -> PotentialSpec:
    """V(z) = 2 v cos(b_axis . z), the weak-coupling two-wave test potential."""
    plus = tuple(1 if i == axis else 0 for i in range(3))
    minus = tuple(-x for x in plus)
    return PotentialSpec({plus: v, minus: v})


@dataclass(frozen=True)
class PlaneWaveBasis:
    lattice: LatticeSpec
    cutoff: float
    indices: np.ndarray  # (dim, 3) integer triples, lexicographic order
    g_vectors: np.ndarray  # (dim, 3) cartesian

    @property
    def dim(self) -> int:
        return self.indices.shape[0]


def build_basis(lattice: LatticeSpec, cutoff: float) -> PlaneWaveBasis:
    """All G = m1 b1 + m2 b2 + m3 b3 with |G| <= cutoff, deterministic order."""
    if cutoff <= 0:
        raise LatticeError("cutoff must be positive")
    b = lattice.recip
    # bound the index search box by the shortest dual direction
    lengths = np.linalg.norm(np.linalg.inv(b), axis=0)
    mmax = int(np.ceil(cutoff * lengths.max())) + 1
    rng = np.arange(-mmax, mmax + 1)
    m = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    g = m @ b
    keep = np.linalg.norm(g, axis=1) <= cutoff * (1 + 1e-12)
    m = m[keep]
    order = np.lexsort((m[:, 2], m[:, 1], m[:, 0]))
    m = m[order]
    return PlaneWaveBasis(lattice=lattice, cutoff=float(cutoff),
                          indices=m, g_vectors=m @ b)


def assemble_hamiltonian(basis: PlaneWaveBasis, potential: PotentialSpec,
                         p: np.ndarray) -> np.ndarray:
    """H(p)[G,G'] = 1/2|p+G|^2 delta + V_{G-G'} (Hermitian by construction)."""
    p = np.asarray(p, dtype=float)
    n = basis.dim
    h = np.zeros((n, n), dtype=complex)
    kin = 0.5 * np.sum((basis.g_vectors + p) ** 2, axis=1)
    h[np.diag_indices(n)] = kin
    idx = basis.indices
    lookup = {tuple(row): i for i, row in enumerate(idx)}
    for key, v in potential.coeffs.items():
        if key == (0, 0, 0):
            h[np.diag_indices(n)] += v.real
            continue
        # entry (G, G') gets V_{G - G'}
        for j, row in enumerate(idx):
            tgt = (row[0] + key[0], row[1] + key[1], row[2] + key[2])
            i = lookup.get(tgt)
            if i is not None:
                h[i, j] += v
    return 0.5 * (h + h.conj().T)


def potential_representable(basis: PlaneWaveBasis, potential: PotentialSpec) -> bool:
    """True if every stored V_G connects at least one basis pair."""
    lookup = {tuple(row) for row in basis.indices}
    for key in potential.coeffs:
        if key == (0, 0, 0):
            continue
        hit = any((r[0] + key[0], r[1] + key[1], r[2] + key[2]) in lookup
                  for r in basis.indices)
        if not hit:
            return False
    return True


@dataclass
class EigenSystem:
    """Lowest bands of H(p): ascending eigenvalues, orthonormal columns."""

    p: np.ndarray
    eigenvalues: np.ndarray  # (n_bands,)
    vectors: np.ndarray  # (dim, n_bands), column n = coefficients of band n

    @property
    def n_bands(self) -> int:
        return self.eigenvalues.shape[0]


def solve_bands(h: np.ndarray, n_bands: int, p: np.ndarray | None = None,
                residual_tol: float = 1e-10) -> EigenSystem:
    if n_bands > h.shape[0]:
        raise LatticeError(
            f"basis too small: {h.shape[0]} plane waves < {n_bands} bands")
    w, v = scipy.linalg.eigh(h, subset_by_index=(0, n_bands - 1))
    res = np.linalg.norm(h @ v - v * w[None, :], axis=0)
    if res.max() > residual_tol * max(1.0, np.abs(w).max()):
        raise LatticeError(f"eigensolver residual {res.max():.3e}")
    return EigenSystem(p=np.zeros(3) if p is None else np.asarray(p, float),
                       eigenvalues=w, vectors=v)


# ---------------------------------------------------------------------------
# Discrete Bloch transform
#
# Forward:  (Bf)(z, p_k) = |BZ|^{-1/2} sum_X f(z + X) e^{-i p_k.(z+X)}
# Inverse:  f(z + X)     = |BZ|^{+1/2} M^{-3} sum_k e^{+i p_k.(z+X)} (Bf)(z, p_k)
#
# with p_k the M^3 uniform divisions of the reciprocal cell. This is the exact
# discretisation of the paper's pair (sum_k |BZ|/M^3 ~ integral dp), and it is
# an exact isometry for the discrete norms used below.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlochGrid:
    """Sampling of M^3 unit cells with n_z^3 points per cell."""

    lattice: LatticeSpec
    m_cells: int
    n_z: int

    def z_cell_points(self) -> np.ndarray:
        f = np.arange(self.n_z) / self.n_z
        fx, fy, fz = np.meshgrid(f, f, f, indexing="ij")
        frac = np.stack([fx, fy, fz], axis=-1)
        return frac @ self.lattice.direct

    def cell_shifts(self) -> np.ndarray:
        r = np.arange(self.m_cells)
        nx, ny, nz = np.meshgrid(r, r, r, indexing="ij")
        n = np.stack([nx, ny, nz], axis=-1)
        return n @ self.lattice.direct

    def p_points(self) -> np.ndarray:
        f = np.arange(self.m_cells) / self.m_cells
        fx, fy, fz = np.meshgrid(f, f, f, indexing="ij")
        frac = np.stack([fx, fy, fz], axis=-1)
        return frac @ self.lattice.recip


def bloch_transform(samples: np.ndarray, grid: BlochGrid) -> np.ndarray:
    """Discrete Bloch transform.

    samples: complex array of shape (M,M,M, nz,nz,nz) = f on cell X, offset z.
    Returns (M,M,M, nz,nz,nz) = (Bf)(z, p_k) indexed (k, z-offset).
    """
    m, nz = grid.m_cells, grid.n_z
    if samples.shape != (m, m, m, nz, nz, nz):
        raise LatticeError("samples incommensurate with the Bloch grid")
    z = grid.z_cell_points().reshape(nz, nz, nz, 3)
    p = grid.p_points().reshape(m, m, m, 3)
    # sum over X with e^{-ip.X} is an FFT over the cell index; the e^{-ip.z}
    # twiddle acts pointwise on the offset.
    fhat = np.fft.fftn(samples, axes=(0, 1, 2))  # sum_X f(z+X) e^{-i 2pi k.n/M}
    phase = np.exp(-1j * np.tensordot(p, np.moveaxis(z, -1, 0), axes=([3], [0])))
    return fhat * phase / np.sqrt(grid.lattice.bz_volume)


def inverse_bloch_transform(bf: np.ndarray, grid: BlochGrid) -> np.ndarray:
    m, nz = grid.m_cells, grid.n_z
    if bf.shape != (m, m, m, nz, nz, nz):
        raise LatticeError("field incommensurate with the Bloch grid")
    z = grid.z_cell_points().reshape(nz, nz, nz, 3)
    p = grid.p_points().reshape(m, m, m, 3)
    phase = np.exp(1j * np.tensordot(p, np.moveaxis(z, -1, 0), axes=([3], [0])))
    g = bf * phase
    out = np.fft.ifftn(g, axes=(0, 1, 2))  # M^-3 sum_k e^{+i 2pi k.n/M}
    return out * np.sqrt(grid.lattice.bz_volume)


def bloch_norms(samples: np.ndarray, bf: np.ndarray, grid: BlochGrid):
    """Discrete L2 norms on both sides of the transform (Parseval pair)."""
    dz = grid.lattice.cell_volume / grid.n_z**3
    dp = grid.lattice.bz_volume / grid.m_cells**3
    nf = np.sqrt(np.sum(np.abs(samples) ** 2) * dz)
    nb = np.sqrt(np.sum(np.abs(bf) ** 2) * dz * dp)
    return nf, nb
