"""Quadrature grids: sphere rules, radial panels, periodic BZ grids.

Sphere rules come in two independent flavours so identity checks can be
dual-routed:

* Lebedev rules (octahedral symmetry, orders 17/23/29) from the standard
  generator scheme; exactness is asserted by the test suite up to the stated
  degree.
* product Gauss-Legendre x trapezoid rules, exact for spherical harmonics of
  degree <= 2*n_theta - 1, used as the fallback for arbitrary degree.

All sphere rules returned here are antipodally symmetric, which the nodal
principal-value quadratures rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SphereRule:
    """Unit-sphere quadrature: sum(w * f(points)) ~ integral over S^2."""

    points: np.ndarray  # (n, 3) unit vectors
    weights: np.ndarray  # (n,), sums to 4*pi
    degree: int
    kind: str

    @property
    def n(self) -> int:
        return self.points.shape[0]


def _gen_oh(code: int, a: float = 0.0, b: float = 0.0) -> np.ndarray:
    """Generate one octahedral orbit of Lebedev points."""
    pts = []
    if code == 1:
        for i in range(3):
            for s in (1.0, -1.0):
                v = [0.0, 0.0, 0.0]
                v[i] = s
                pts.append(v)
    elif code == 2:
        c = 1.0 / np.sqrt(2.0)
        for i in range(3):
            j, k = [x for x in range(3) if x != i]
            for sj in (c, -c):
                for sk in (c, -c):
                    v = [0.0, 0.0, 0.0]
                    v[j], v[k] = sj, sk
                    pts.append(v)
    elif code == 3:
        c = 1.0 / np.sqrt(3.0)
        for sx in (c, -c):
            for sy in (c, -c):
                for sz in (c, -c):
                    pts.append([sx, sy, sz])
    elif code == 4:
        # (a, a, b) orbit, 2a^2 + b^2 = 1
        bb = np.sqrt(max(1.0 - 2.0 * a * a, 0.0))
        for pos in range(3):  # slot of the b component
            for sa in (a, -a):
                for sb in (a, -a):
                    for sc in (bb, -bb):
                        v = [sa, sb]
                        v.insert(pos, sc)
                        pts.append(v)
    elif code == 5:
        # (a, b, 0) orbit, a^2 + b^2 = 1
        bb = np.sqrt(max(1.0 - a * a, 0.0))
        base = [(a, bb, 0.0), (bb, a, 0.0), (a, 0.0, bb),
                (bb, 0.0, a), (0.0, a, bb), (0.0, bb, a)]
        for (x, y, z) in base:
            for sx in (1, -1):
                for sy in (1, -1):
                    # z slot sign folded in via the zero entry; enumerate all
                    # sign patterns of the two nonzero slots
                    v = [sx * x, sy * y, z]
                    pts.append(v)
                    pts.append([sx * x, sy * y, -z] if z != 0.0 else None)
        pts = [p for p in pts if p is not None]
        # dedupe exact duplicates from the zero slot
        uniq = []
        seen = set()
        for p in pts:
            key = tuple(np.round(p, 14))
            if key not in seen:
                seen.add(key)
                uniq.append(p)
        pts = uniq
    elif code == 6:
        # (a, b, c) general orbit, 48 points
        cc = np.sqrt(max(1.0 - a * a - b * b, 0.0))
        import itertools
        for perm in itertools.permutations((a, b, cc)):
            for sx in (1, -1):
                for sy in (1, -1):
                    for sz in (1, -1):
                        pts.append([sx * perm[0], sy * perm[1], sz * perm[2]])
    else:
        raise ValueError(f"unknown orbit code {code}")
    return np.asarray(pts, dtype=float)


# (code, a, b, weight) rows; weights are per-point (normalised to sum to 1).
_LEBEDEV_TABLES = {
    17: [  # 110 points
        (1, 0.0, 0.0, 0.00382827049493716),
        (3, 0.0, 0.0, 0.00979373751248751),
        (4, 0.185115635344736, 0.0, 0.00821173728319111),
        (4, 0.690421048382292, 0.0, 0.00994281489117810),
        (4, 0.395689473055942, 0.0, 0.00959547133607096),
        (5, 0.478369028812150, 0.0, 0.00969499636166302),
    ],
    23: [  # 194 points
        (1, 0.0, 0.0, 0.00178234044724461),
        (2, 0.0, 0.0, 0.00571690594997710),
        (3, 0.0, 0.0, 0.00557338317884873),
        (4, 0.671297344269523, 0.0, 0.00560870408258800),
        (4, 0.289246562757544, 0.0, 0.00515823771180538),
        (4, 0.444693317871744, 0.0, 0.00551877146727361),
        (4, 0.129933544765007, 0.0, 0.00410677702816939),
        (5, 0.345770219761128, 0.0, 0.00505184606461480),
        (6, 0.159041710538353, 0.836036015482459, 0.00553024891623309),
    ],
    29: [  # 302 points
        (1, 0.0, 0.0, 0.000854591172512815),
        (3, 0.0, 0.0, 0.00359911928502557),
        (4, 0.701176641608955, 0.0, 0.00365004580767726),
        (4, 0.656632941021961, 0.0, 0.00360482260141988),
        (4, 0.472905413258100, 0.0, 0.00357672966174337),
        (4, 0.351564034557011, 0.0, 0.00344978842430588),
        (4, 0.221964523629418, 0.0, 0.00310895312241368),
        (4, 0.096183085226148, 0.0, 0.00235210141368916),
        (5, 0.571895589187896, 0.0, 0.00360082093221646),
        (5, 0.264415288706066, 0.0, 0.00298234496317180),
        (6, 0.251003475177046, 0.800072749407395, 0.00357154055427339),
        (6, 0.123354853258333, 0.412772408316853, 0.00339231220500617),
    ],
}


def lebedev_rule(degree: int) -> SphereRule:
    """Smallest tabulated Lebedev rule with exactness >= degree."""
    for order in sorted(_LEBEDEV_TABLES):
        if order >= degree:
            break
    else:
        raise ValueError(f"no Lebedev table of degree >= {degree}; "
                         "use gauss_sphere_rule instead")
    pts_list, w_list = [], []
    for (code, a, b, w) in _LEBEDEV_TABLES[order]:
        orbit = _gen_oh(code, a, b)
        pts_list.append(orbit)
        w_list.append(np.full(orbit.shape[0], w))
    pts = np.vstack(pts_list)
    w = np.concatenate(w_list) * 4.0 * np.pi
    return SphereRule(points=pts, weights=w, degree=order, kind="lebedev")


def gauss_sphere_rule(degree: int) -> SphereRule:
    """Product Gauss-Legendre (cos theta) x trapezoid (phi) sphere rule.

    Exact for spherical polynomials of degree <= 2*n_t - 1 with n_t Gauss
    nodes; n_phi is even so the rule is antipodally symmetric.
    """
    n_t = degree // 2 + 1
    n_phi = 2 * (degree + 1)
    if n_phi % 2:
        n_phi += 1
    x, wx = np.polynomial.legendre.leggauss(n_t)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    ct = x[:, None]
    st = np.sqrt(1.0 - ct**2)
    pts = np.stack([
        (st * np.cos(phi)[None, :]).ravel(),
        (st * np.sin(phi)[None, :]).ravel(),
        np.broadcast_to(ct, (n_t, n_phi)).ravel(),
    ], axis=1)
    w = np.broadcast_to(wx[:, None], (n_t, n_phi)).ravel() * (2.0 * np.pi / n_phi)
    return SphereRule(points=pts, weights=w, degree=2 * n_t - 1, kind="gauss")


def sphere_rule(degree: int, kind: str = "lebedev") -> SphereRule:
    if kind == "lebedev":
        try:
            return lebedev_rule(degree)
        except ValueError:
            return gauss_sphere_rule(degree)
    if kind == "gauss":
        return gauss_sphere_rule(degree)
    raise ValueError(f"unknown sphere rule kind {kind!r}")


def gauss_panels(edges: np.ndarray, n_gl: int = 6):
    """Composite Gauss-Legendre nodes/weights on consecutive panels.

    edges is an increasing 1D array of panel boundaries; returns flat
    (nodes, weights).
    """
    edges = np.asarray(edges, dtype=float)
    x, w = np.polynomial.legendre.leggauss(n_gl)
    lo = edges[:-1][:, None]
    hi = edges[1:][:, None]
    nodes = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x[None, :]
    wts = 0.5 * (hi - lo) * w[None, :]
    return nodes.ravel(), wts.ravel()


def graded_edges(r_min: float, r_inner: float, r_max: float,
                 n_inner: int, max_width: float) -> np.ndarray:
    """Panel edges geometric on [r_min, r_inner], capped-width on [r_inner, r_max]."""
    if r_min <= 0:
        raise ValueError("r_min must be positive")
    inner = np.geomspace(r_min, r_inner, n_inner + 1)
    n_outer = max(int(np.ceil((r_max - r_inner) / max_width)), 1)
    outer = np.linspace(r_inner, r_max, n_outer + 1)[1:]
    return np.concatenate([inner, outer])


def bz_uniform_grid(recip: np.ndarray, n: int):
    """Uniform periodic grid on the reciprocal unit cell.

    recip holds b1,b2,b3 as rows. Returns (points (n^3,3), weight scalar);
    trapezoid weights on the torus, spectrally accurate for smooth periodic
    integrands. Points are offset by half a cell so lattice-symmetric
    singular points (e.g. p=0) are not sampled.
    """
    recip = np.asarray(recip, dtype=float)
    f = (np.arange(n) + 0.5) / n - 0.5
    fx, fy, fz = np.meshgrid(f, f, f, indexing="ij")
    frac = np.stack([fx.ravel(), fy.ravel(), fz.ravel()], axis=1)
    pts = frac @ recip
    vol = abs(np.linalg.det(recip))
    return pts, vol / n**3
