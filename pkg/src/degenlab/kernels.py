"""Hot inner loops, each in a numba and a numpy flavour.

``energy_gradient`` and ``divergence_bracket`` dispatch on
:data:`degenlab._accel.USE_NUMBA`; the ``*_numpy`` / ``*_numba`` variants are
importable directly for testing and benchmarking.

Quadrature layout used by the grid kernels: cell ``(i, j)`` spans nodes
``(i..i+1, j..j+1)``; its four Gauss points are ordered
``(g0,g0), (g1,g0), (g0,g1), (g1,g1)`` in local ``(xi, eta)`` coordinates.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

G0 = 0.5 - 0.5 / np.sqrt(3.0)
G1 = 0.5 + 0.5 / np.sqrt(3.0)
GAUSS_XI = np.array([G0, G1, G0, G1])
GAUSS_ETA = np.array([G0, G0, G1, G1])


def cell_gradients(u, hx, hr):
    """Bilinear gradients at the 4 Gauss points of every cell, shape ``(nx-1, nr-1, 4)``."""
    du_x0 = (u[1:, :-1] - u[:-1, :-1]) / hx  # along eta = 0
    du_x1 = (u[1:, 1:] - u[:-1, 1:]) / hx  # along eta = 1
    du_r0 = (u[:-1, 1:] - u[:-1, :-1]) / hr  # along xi = 0
    du_r1 = (u[1:, 1:] - u[1:, :-1]) / hr  # along xi = 1
    gx = du_x0[..., None] * (1.0 - GAUSS_ETA) + du_x1[..., None] * GAUSS_ETA
    gr = du_r0[..., None] * (1.0 - GAUSS_XI) + du_r1[..., None] * GAUSS_XI
    return gx, gr


def cell_values(u):
    """Bilinear values at the Gauss points, shape ``(nx-1, nr-1, 4)``."""
    xi, eta = GAUSS_XI, GAUSS_ETA
    return (
        u[:-1, :-1, None] * (1 - xi) * (1 - eta)
        + u[1:, :-1, None] * xi * (1 - eta)
        + u[:-1, 1:, None] * (1 - xi) * eta
        + u[1:, 1:, None] * xi * eta
    )


def scatter_gradient(fx, fr, hx, hr, shape):
    """Transpose of :func:`cell_gradients`: nodal sums of ``fx*dphi/dx + fr*dphi/dr``."""
    xi, eta = GAUSS_XI, GAUSS_ETA
    out = np.zeros(shape)
    # d(gx)/du per node: u00 -> -(1-eta)/hx, u10 -> (1-eta)/hx, u01 -> -eta/hx, u11 -> eta/hx
    # d(gr)/du per node: u00 -> -(1-xi)/hr, u01 -> (1-xi)/hr, u10 -> -xi/hr, u11 -> xi/hr
    c00 = (-(1 - eta) / hx * fx - (1 - xi) / hr * fr).sum(-1)
    c10 = ((1 - eta) / hx * fx - xi / hr * fr).sum(-1)
    c01 = (-eta / hx * fx + (1 - xi) / hr * fr).sum(-1)
    c11 = (eta / hx * fx + xi / hr * fr).sum(-1)
    out[:-1, :-1] += c00
    out[1:, :-1] += c10
    out[:-1, 1:] += c01
    out[1:, 1:] += c11
    return out


def energy_gradient_numpy(u, w, hx, hr, p, eps):
    """Energy ``sum w (|g|^2+eps^2)^{p/2} / p``, its nodal gradient and the absolute-flux scale.

    ``w`` holds the full quadrature weight (area, geometric factor, coefficient,
    region mask) per Gauss point.
    """
    gx, gr = cell_gradients(u, hx, hr)
    s2 = gx * gx + gr * gr + eps * eps
    energy = float(np.sum(w * s2 ** (0.5 * p))) / p
    kappa = w * s2 ** (0.5 * p - 1.0)
    grad = scatter_gradient(kappa * gx, kappa * gr, hx, hr, u.shape)
    ax, ar = np.abs(kappa * gx), np.abs(kappa * gr)
    xi, eta = GAUSS_XI, GAUSS_ETA
    gabs = np.zeros(u.shape)
    gabs[:-1, :-1] += ((1 - eta) / hx * ax + (1 - xi) / hr * ar).sum(-1)
    gabs[1:, :-1] += ((1 - eta) / hx * ax + xi / hr * ar).sum(-1)
    gabs[:-1, 1:] += (eta / hx * ax + (1 - xi) / hr * ar).sum(-1)
    gabs[1:, 1:] += (eta / hx * ax + xi / hr * ar).sum(-1)
    return energy, grad, gabs


@njit(cache=True)
def _energy_gradient_loop(u, w, hx, hr, p, eps, xi_q, eta_q):
    nx, nr = u.shape
    grad = np.zeros((nx, nr))
    gabs = np.zeros((nx, nr))
    energy = 0.0
    half_p = 0.5 * p
    for i in range(nx - 1):
        for j in range(nr - 1):
            u00 = u[i, j]
            u10 = u[i + 1, j]
            u01 = u[i, j + 1]
            u11 = u[i + 1, j + 1]
            for q in range(4):
                wq = w[i, j, q]
                if wq == 0.0:
                    continue
                xi = xi_q[q]
                eta = eta_q[q]
                gx = ((u10 - u00) * (1.0 - eta) + (u11 - u01) * eta) / hx
                gr = ((u01 - u00) * (1.0 - xi) + (u11 - u10) * xi) / hr
                s2 = gx * gx + gr * gr + eps * eps
                energy += wq * s2**half_p
                k = wq * s2 ** (half_p - 1.0)
                fx = k * gx
                fr = k * gr
                grad[i, j] += -(1.0 - eta) / hx * fx - (1.0 - xi) / hr * fr
                grad[i + 1, j] += (1.0 - eta) / hx * fx - xi / hr * fr
                grad[i, j + 1] += -eta / hx * fx + (1.0 - xi) / hr * fr
                grad[i + 1, j + 1] += eta / hx * fx + xi / hr * fr
                ax = abs(fx)
                ar = abs(fr)
                gabs[i, j] += (1.0 - eta) / hx * ax + (1.0 - xi) / hr * ar
                gabs[i + 1, j] += (1.0 - eta) / hx * ax + xi / hr * ar
                gabs[i, j + 1] += eta / hx * ax + (1.0 - xi) / hr * ar
                gabs[i + 1, j + 1] += eta / hx * ax + xi / hr * ar
    return energy / p, grad, gabs


def energy_gradient_numba(u, w, hx, hr, p, eps):
    return _energy_gradient_loop(
        np.ascontiguousarray(u, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        float(hx),
        float(hr),
        float(p),
        float(eps),
        GAUSS_XI,
        GAUSS_ETA,
    )


def divergence_bracket_numpy(phi, dphi, ddphi, lap, alpha, p):
    """Bracket of the closed-form p-Laplacian of ``exp(alpha x1) phi(r)`` and its absolute scale.

    ``lap`` is the radial Laplacian ``phi'' + (d-2) phi'/r`` supplied in
    closed form by the caller. The full divergence equals
    ``H**((p-4)/2) * bracket * exp(alpha (p-1) x1)`` with ``H = alpha^2 phi^2 + phi'^2``.
    """
    a2 = alpha * alpha
    dphi2 = dphi * dphi
    H = a2 * phi * phi + dphi2
    t1 = a2 * (p - 1.0) * H * phi
    t2 = (p - 2.0) * dphi2 * (a2 * phi + ddphi)
    t3 = H * lap
    scale = np.abs(t1) + abs(p - 2.0) * dphi2 * (a2 * np.abs(phi) + np.abs(ddphi)) + np.abs(t3)
    return t1 + t2 + t3, scale, H


@njit(cache=True)
def _divergence_bracket_loop(phi, dphi, ddphi, lap, alpha, p):
    n = phi.shape[0]
    out = np.empty(n)
    scale = np.empty(n)
    Hs = np.empty(n)
    a2 = alpha * alpha
    for k in range(n):
        f = phi[k]
        g = dphi[k]
        g2 = g * g
        H = a2 * f * f + g2
        t1 = a2 * (p - 1.0) * H * f
        t2 = (p - 2.0) * g2 * (a2 * f + ddphi[k])
        t3 = H * lap[k]
        out[k] = t1 + t2 + t3
        scale[k] = abs(t1) + abs(p - 2.0) * g2 * (a2 * abs(f) + abs(ddphi[k])) + abs(t3)
        Hs[k] = H
    return out, scale, Hs


def divergence_bracket_numba(phi, dphi, ddphi, lap, alpha, p):
    arrs = [np.ascontiguousarray(np.ravel(a), dtype=np.float64) for a in (phi, dphi, ddphi, lap)]
    shape = np.shape(phi)
    b, s, h = _divergence_bracket_loop(*arrs, float(alpha), float(p))
    return b.reshape(shape), s.reshape(shape), h.reshape(shape)


if USE_NUMBA:
    energy_gradient = energy_gradient_numba
    divergence_bracket = divergence_bracket_numba
else:
    energy_gradient = energy_gradient_numpy
    divergence_bracket = divergence_bracket_numpy
