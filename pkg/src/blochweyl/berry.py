"""Velocity matrices, Berry connection, and Berry curvature.

Gauge conventions
-----------------
Eigenvectors carry an arbitrary phase per band. Two deterministic gauges are
used:

* ``fix_gauge``: the coefficient of largest modulus is made real and
  nonnegative (local, used for static fields and diagonal-connection finite
  differences);
* ``align_gauge``: phases maximise the overlap with a reference frame
  (path-aligned, used wherever a derivative along a curve is taken).

The diagonal connection A_nn is gauge dependent; everything exported to the
current pipeline uses only differences A_nn - A_mm or off-diagonal entries, and
the J-level observables are gauge invariant (tested).
"""

from __future__ import annotations

import numpy as np

from .lattice import EigenSystem, PlaneWaveBasis


class NearDegenerateError(RuntimeError):
    """Raised when the A = D/(i lambda_mn) route hits a tiny gap."""

    def __init__(self, pair, gap):
        super().__init__(f"near-degenerate pair {pair}: |lambda_mn| = {gap:.3e}; "
                         "route this region through the weyl module")
        self.pair = pair
        self.gap = gap


def fix_gauge(vectors: np.ndarray, pivots: np.ndarray | None = None) -> np.ndarray:
    """Largest-modulus coefficient of each column made real and >= 0.

    The pivot row may be supplied explicitly (per band); reusing one pivot
    across neighbouring momenta keeps the gauge smooth even when two
    coefficients compete for the argmax.
    """
    v = np.asarray(vectors)
    idx = np.argmax(np.abs(v), axis=-2) if pivots is None else np.asarray(pivots)
    idx = np.broadcast_to(idx, v.shape[:-2] + (v.shape[-1],))
    lead = np.take_along_axis(v, idx[..., None, :], axis=-2)[..., 0, :]
    phase = np.where(np.abs(lead) > 0, lead / np.abs(lead), 1.0)
    return v * np.conj(phase)[..., None, :]


def gauge_pivots(vectors: np.ndarray) -> np.ndarray:
    """Per-band pivot rows (argmax modulus) for fix_gauge reuse."""
    return np.argmax(np.abs(np.asarray(vectors)), axis=-2)


def align_gauge(vectors: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rotate each column's phase to maximise Re<ref_n, v_n>."""
    ov = np.sum(np.conj(reference) * vectors, axis=-2)
    phase = np.where(np.abs(ov) > 0, ov / np.abs(ov), 1.0)
    return vectors * np.conj(phase)[..., None, :]


def velocity_matrix(eig: EigenSystem, basis: PlaneWaveBasis) -> np.ndarray:
    """D[k, m, n] = sum_G conj(c_mG) (p + G)_k c_nG for plane-wave bands."""
    kin = eig.p[None, :] + basis.g_vectors  # (dim, 3)
    return np.einsum("gm,gk,gn->kmn", eig.vectors.conj(), kin, eig.vectors)


def velocity_matrix_generic(vectors: np.ndarray, dham: np.ndarray) -> np.ndarray:
    """D[..., k, m, n] = <v_m, dH/dp_k v_n> for any fibre model."""
    return np.einsum("...gm,...kgh,...hn->...kmn",
                     np.conj(vectors), dham, vectors)


def connection_offdiag(d: np.ndarray, eigenvalues: np.ndarray,
                       gap_floor: float) -> np.ndarray:
    """A_mn = D_mn / (i lambda_mn) for m != n; diagonal left zero.

    d has shape (..., 3, N, N); raises NearDegenerateError if any pair's gap
    is below gap_floor.
    """
    lam = np.asarray(eigenvalues)
    lmn = lam[..., :, None] - lam[..., None, :]
    n = lam.shape[-1]
    off = ~np.eye(n, dtype=bool)
    gaps = np.abs(lmn)[..., off]
    if gaps.size and gaps.min() < gap_floor:
        flat = np.abs(lmn) + np.where(off, 0.0, np.inf)
        idx = np.unravel_index(np.argmin(flat), flat.shape)
        raise NearDegenerateError(idx[-2:], float(flat[idx]))
    denom = np.where(off, 1j * lmn, 1.0)
    a = d / denom[..., None, :, :]
    return np.where(off[None, :, :] if a.ndim == 3 else off, a, 0.0)


def default_gap_floor(eigenvalues: np.ndarray) -> float:
    span = float(np.max(eigenvalues) - np.min(eigenvalues))
    return 1e-6 * max(span, 1.0)


def connection_diag(bands_fn, band: int, p: np.ndarray, step: float = 1e-4,
                    gap_floor: float | None = None,
                    imag_tol: float = 1e-8, gauge: str = "fixed") -> np.ndarray:
    """A_nn(p) = Re <v_n, i grad_p v_n> by central differences.

    bands_fn(p) -> (eigenvalues, vectors). With gauge="fixed" (default) the
    eigenvectors at the centre and the displaced points share the centre's
    largest-coefficient pivot phase convention; gauge="field" trusts the
    phases bands_fn returns (for analytically gauged eigenvector fields).
    """
    p = np.asarray(p, dtype=float)
    lam0, v0 = bands_fn(p)
    if gap_floor is None:
        gap_floor = default_gap_floor(lam0)
    gaps = np.diff(lam0)
    lo = gaps[band - 1] if band > 0 else np.inf
    hi = gaps[band] if band < len(lam0) - 1 else np.inf
    if min(lo, hi) < gap_floor:
        raise NearDegenerateError((band, band + (1 if hi < lo else -1)),
                                  float(min(lo, hi)))
    if gauge not in ("fixed", "field"):
        raise ValueError(f"unknown gauge mode {gauge!r}")
    pivots = gauge_pivots(v0)
    if gauge == "fixed":
        v0 = fix_gauge(v0, pivots)
    out = np.zeros(3)
    for i in range(3):
        dp = np.zeros(3)
        dp[i] = step
        _, vp = bands_fn(p + dp)
        _, vm = bands_fn(p - dp)
        if gauge == "fixed":
            # the connection of the pivot-gauge eigenvector field; aligning
            # the displaced frames to the centre would parallel-transport the
            # phase away and always return zero, so only the pivot is shared
            vp = fix_gauge(vp, pivots)
            vm = fix_gauge(vm, pivots)
        dv = (vp[..., band] - vm[..., band]) / (2.0 * step)
        a = 1j * np.vdot(v0[..., band], dv)
        # discretisation leaks ~ step^2 |dv|^2 into the imaginary part; that
        # grows near small gaps where |dv| ~ |D|/gap
        bound = max(imag_tol, 10.0 * step**2 * float(np.vdot(dv, dv).real))
        if abs(a.imag) > bound:
            raise RuntimeError(f"diagonal connection not real: {a!r}")
        out[i] = a.real
    return out


def berry_curvature(a: np.ndarray, imag_tol: float = 1e-10) -> np.ndarray:
    """Omega_n = i sum_{m != n} A_nm x A_mn, real (..., N, 3)."""
    a = np.asarray(a)
    cross = np.cross(np.moveaxis(a, -3, -1), np.moveaxis(np.swapaxes(a, -1, -2), -3, -1))
    # cross[..., n, m, :] = A[.., :, n, m] x A[.., :, m, n]
    omega = 1j * np.sum(cross, axis=-2)
    if np.abs(omega.imag).max() > imag_tol * max(1.0, np.abs(omega.real).max()):
        raise RuntimeError("Berry curvature has a non-vanishing imaginary part")
    return omega.real


def ellipsoid_flux(field_fn, w_matrix: np.ndarray, radius: float, rule) -> np.ndarray:
    """Flux of a vector field through the ellipsoid |W (p - p0)| = radius.

    field_fn maps displacement points (n, 3) to vectors (n, 3); the surface is
    parameterised by q(w) = radius * W^-1 w over the unit sphere, for which
    the oriented surface element is radius^2 det(W^-1) W^T w dS(w).
    """
    w_inv = np.linalg.inv(w_matrix)
    pts = rule.points @ w_inv.T * radius
    vals = field_fn(pts)
    # outward normal direction is grad|Wq| ~ W^T w; the oriented element is
    # radius^2 |det W|^-1 (W^T w) dS(w)
    normal = rule.points @ w_matrix
    scale = radius**2 / abs(np.linalg.det(w_matrix))
    return scale * np.einsum("n,ni,ni->", rule.weights, vals, normal)


def loop_integral(bands_fn, band: int, loop_points: np.ndarray) -> float:
    """Berry phase of one band around a closed discrete loop (gauge free)."""
    _, v = bands_fn(loop_points[0])
    first = v[..., band]
    prev = first
    phase = 1.0 + 0.0j
    for p in loop_points[1:]:
        _, v = bands_fn(p)
        cur = v[..., band]
        phase *= np.vdot(prev, cur)
        prev = cur
    phase *= np.vdot(prev, first)
    return float(-np.angle(phase))
