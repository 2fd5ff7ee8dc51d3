"""Pure-numpy twin of the compiled propagation kernel.

The hot loop of every current evaluation is the propagation of a batch of
Bloch vectors n under dn/dt = omega(t) x n (the two-band Schroedinger and the
nodal limit system are both of this form). One step combines the two
Gauss-node angular velocities into a Magnus-4 rotation vector and applies it
with the Rodrigues formula.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"

_SQRT3_12 = np.sqrt(3.0) / 12.0


def magnus_rotation_step(omega1: np.ndarray, omega2: np.ndarray, h: float,
                         n: np.ndarray) -> np.ndarray:
    """Advance n by one Magnus-4 step of dn/dt = omega(t) x n.

    omega1, omega2: (batch, 3) angular velocities at the Gauss nodes
    t + (1/2 -+ sqrt(3)/6) h; n: (batch, 3) updated out of place.
    """
    rot = 0.5 * h * (omega1 + omega2) \
        + (_SQRT3_12 * h * h) * np.cross(omega2, omega1)
    theta = np.linalg.norm(rot, axis=-1)
    small = theta < 1e-300
    axis = rot / np.where(small, 1.0, theta)[..., None]
    ct = np.cos(theta)[..., None]
    st = np.sin(theta)[..., None]
    dot = np.sum(axis * n, axis=-1, keepdims=True)
    out = ct * n + st * np.cross(axis, n) + (1.0 - ct) * dot * axis
    return np.where(small[..., None], n, out)


def rotate_bloch(omega_fn, t0: float, t1: float, n_steps: int,
                 n: np.ndarray) -> np.ndarray:
    """Propagate the batch from t0 to t1 with n_steps Magnus-4 steps.

    omega_fn(t) -> (batch, 3) angular velocity field along the batch's
    characteristics.
    """
    h = (t1 - t0) / n_steps
    c1 = 0.5 - np.sqrt(3.0) / 6.0
    c2 = 0.5 + np.sqrt(3.0) / 6.0
    out = np.array(n, dtype=float, copy=True)
    for k in range(n_steps):
        tk = t0 + k * h
        w1 = omega_fn(tk + c1 * h)
        w2 = omega_fn(tk + c2 * h)
        out = magnus_rotation_step(w1, w2, h, out)
    return out
