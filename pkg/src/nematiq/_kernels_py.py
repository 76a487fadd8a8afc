"""Pure numpy versions of the pointwise kernels."""

import numpy as np


def cross(a, b):
    """Pointwise a x b over the component axis (-3)."""
    a0, a1, a2 = a[..., 0, :, :], a[..., 1, :, :], a[..., 2, :, :]
    b0, b1, b2 = b[..., 0, :, :], b[..., 1, :, :], b[..., 2, :, :]
    return np.stack((a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0), axis=-3)


def poly_f(n, coeffs):
    """ftilde(|n|^2) n with ftilde(r) = sum_k coeffs[k] r^k."""
    r = (n * n).sum(axis=-3)
    phi = np.full_like(r, coeffs[-1])
    for c in coeffs[-2::-1]:
        phi = phi * r + c
    return phi[..., None, :, :] * n


def poly_eval(r, coeffs):
    out = np.full_like(r, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * r + c
    return out


def advect(u, grad):
    """sum_i u_i d_i w, with grad[..., c, i, :, :] = d_i w_c."""
    return u[..., None, 0, :, :] * grad[..., 0, :, :] + u[..., None, 1, :, :] * grad[..., 1, :, :]
