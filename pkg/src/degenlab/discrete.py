"""Axisymmetric discretisation of the weighted p-Dirichlet energy and the bound checks built on it.

A function of ``x in R^d`` that depends only on ``(x1, r = |x'|)`` is stored
at the nodes of a uniform ``(x1, r)`` grid and interpolated bilinearly. Cell
integrals use 2x2 Gauss points with the volume factor ``sigma_{d-2} r^{d-2}``;
coefficients such as ``lambda`` and ``mu`` are sampled at cell centres.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .params import ConfigError, ExponentConfig, RegimeTag, classify, moser_constants, s_star, sphere_case
from .quadrature import (
    ShellQuadRule,
    ball_volume,
    leggauss,
    sphere_area,
    truncated_sobolev_norm,
    truncated_weight_norms,
)

log = logging.getLogger(__name__)

__all__ = [
    "AxisymGrid",
    "GridField",
    "DirichletProblem",
    "SolveReport",
    "energy",
    "weak_residual",
    "minimize_energy",
    "caccioppoli_check",
    "cutoff_optimize",
    "moser_bound_check",
    "sphere_max_bound",
    "corollary_check",
    "sharpness_ratio",
    "grid_sobolev_norm",
    "reference_boundary",
    "calibrate",
    "CALIBRATION",
]

REGIONS = ("ball", "annulus", "cylinder")
FIELD_MAGIC = b"DGLF"
FIELD_VERSION = 1
_HEADER = struct.Struct("<4sIIIII6d")


# grid -----------------------------------------------------------------------------------


@dataclass(frozen=True)
class AxisymGrid:
    """Uniform node grid on ``x1_range x r_range``.

    When ``r_range[0] == 0`` the radial nodes sit at ``(j + 1/2) h_r`` so the
    axis is never sampled; the bottom row is then a symmetry (natural)
    boundary. ``region`` selects the active cells by their centre:
    ``ball`` (full radius ``< outer``), ``annulus`` (``inner < rho < outer``)
    or ``cylinder`` (every cell).
    """

    nx: int
    nr: int
    d: int = 3
    x1_range: tuple[float, float] = (-1.0, 1.0)
    r_range: tuple[float, float] = (0.0, 1.0)
    region: str = "ball"
    inner: float = 0.0
    outer: float = 1.0

    def __post_init__(self) -> None:
        if self.nx < 2 or self.nr < 2:
            raise ConfigError("need at least 2 nodes per direction")
        if self.region not in REGIONS:
            raise ConfigError(f"region must be one of {REGIONS}")
        if not self.x1_range[1] > self.x1_range[0] or not self.r_range[1] > self.r_range[0] >= 0:
            raise ConfigError("ranges must be increasing with r >= 0")
        if self.d < 2:
            raise ConfigError("d must be >= 2")

    @classmethod
    def uniform(cls, h: float, d: int = 3, x1_range=(-1.0, 1.0), r_range=(0.0, 1.0), **kw) -> "AxisymGrid":
        nx = int(round((x1_range[1] - x1_range[0]) / h)) + 1
        if r_range[0] == 0.0:
            nr = int(round(r_range[1] / h))
        else:
            nr = int(round((r_range[1] - r_range[0]) / h)) + 1
        return cls(nx, nr, d, tuple(x1_range), tuple(r_range), **kw)

    @property
    def axis(self) -> bool:
        return self.r_range[0] == 0.0

    @property
    def hx(self) -> float:
        return (self.x1_range[1] - self.x1_range[0]) / (self.nx - 1)

    @property
    def hr(self) -> float:
        if self.axis:
            return self.r_range[1] / self.nr
        return (self.r_range[1] - self.r_range[0]) / (self.nr - 1)

    @property
    def x1(self) -> np.ndarray:
        return self.x1_range[0] + self.hx * np.arange(self.nx)

    @property
    def r(self) -> np.ndarray:
        if self.axis:
            return self.hr * (np.arange(self.nr) + 0.5)
        return self.r_range[0] + self.hr * np.arange(self.nr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.nr)

    def mesh(self):
        return np.meshgrid(self.x1, self.r, indexing="ij")

    def cell_centers(self):
        x = self.x1[:-1] + 0.5 * self.hx
        r = self.r[:-1] + 0.5 * self.hr
        return np.meshgrid(x, r, indexing="ij")

    def gauss_points(self):
        X = self.x1[:-1, None, None] + self.hx * kernels.GAUSS_XI
        R = self.r[None, :-1, None] + self.hr * kernels.GAUSS_ETA
        return np.broadcast_to(X, (self.nx - 1, self.nr - 1, 4)), np.broadcast_to(R, (self.nx - 1, self.nr - 1, 4))

    def in_region(self, x1, r):
        rho = np.hypot(x1, r)
        if self.region == "ball":
            return rho < self.outer
        if self.region == "annulus":
            return (rho > self.inner) & (rho < self.outer)
        return np.ones(np.broadcast(x1, r).shape, dtype=bool)

    @property
    def active(self) -> np.ndarray:
        return self.in_region(*self.cell_centers())

    def gauss_weights(self, cell_mask=None) -> np.ndarray:
        """Volume weights per Gauss point, zero outside active (and masked) cells."""
        _, R = self.gauss_points()
        w = sphere_area(self.d - 2) * R ** (self.d - 2) * (0.25 * self.hx * self.hr)
        mask = self.active if cell_mask is None else self.active & cell_mask
        return w * mask[..., None]

    def node_roles(self):
        """``(used, free)`` node masks; used nodes that are not free carry Dirichlet data."""
        act = self.active
        nx, nr = self.shape
        used = np.zeros((nx, nr), dtype=bool)
        for di in (0, 1):
            for dj in (0, 1):
                used[di : nx - 1 + di, dj : nr - 1 + dj] |= act
        pad = np.zeros((nx + 1, nr + 1), dtype=bool)
        pad[1:-1, 1:-1] = act
        free = pad[:-1, :-1] & pad[1:, :-1] & pad[:-1, 1:] & pad[1:, 1:]
        if self.axis:
            # bottom row: only the two cells above exist
            free[:, 0] = pad[:-1, 1] & pad[1:, 1]
            free[0, 0] = free[-1, 0] = False
        return used, free & used

    def cell_sample(self, coeff) -> np.ndarray:
        """Cell-centre values of a scalar, a callable ``(x1, r)`` or a ``(nx-1, nr-1)`` array."""
        shape = (self.nx - 1, self.nr - 1)
        if callable(coeff):
            return np.broadcast_to(np.asarray(coeff(*self.cell_centers()), dtype=float), shape)
        arr = np.asarray(coeff, dtype=float)
        if arr.ndim == 0:
            return np.full(shape, float(arr))
        if arr.shape != shape:
            raise ValueError(f"coefficient shape {arr.shape} does not match cells {shape}")
        return arr

    def gradient_operator(self) -> sp.csr_matrix:
        """Sparse map from nodal values to ``(gx, gr)`` at every Gauss point (``2 * ncells * 4`` rows)."""
        nx, nr = self.shape
        xi, eta = kernels.GAUSS_XI, kernels.GAUSS_ETA
        I, J = np.meshgrid(np.arange(nx - 1), np.arange(nr - 1), indexing="ij")
        n00 = (I * nr + J)[..., None]
        n10 = ((I + 1) * nr + J)[..., None]
        n01 = (I * nr + J + 1)[..., None]
        n11 = ((I + 1) * nr + J + 1)[..., None]
        nq = (nx - 1) * (nr - 1) * 4
        q = np.arange(nq).reshape(nx - 1, nr - 1, 4)
        shp = q.shape
        rows, cols, vals = [], [], []
        for node, cx, cr in (
            (n00, -(1 - eta) / self.hx, -(1 - xi) / self.hr),
            (n10, (1 - eta) / self.hx, -xi / self.hr),
            (n01, -eta / self.hx, (1 - xi) / self.hr),
            (n11, eta / self.hx, xi / self.hr),
        ):
            nodes = np.broadcast_to(node, shp).ravel()
            rows += [q.ravel(), (q + nq).ravel()]
            cols += [nodes, nodes]
            vals += [np.broadcast_to(cx, shp).ravel(), np.broadcast_to(cr, shp).ravel()]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * nq, nx * nr)
        )

    def region_code(self) -> int:
        return REGIONS.index(self.region)


# fields ------------------------------------------------------------------------------


@dataclass(frozen=True)
class GridField:
    """Nodal values on an :class:`AxisymGrid` with a Dirichlet tag per node."""

    grid: AxisymGrid
    values: np.ndarray
    dirichlet: np.ndarray = None

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        tags = self.dirichlet
        if tags is None:
            used, free = self.grid.node_roles()
            tags = used & ~free
        tags = np.array(tags, dtype=bool)
        tags.setflags(write=False)
        object.__setattr__(self, "dirichlet", tags)

    @classmethod
    def from_function(cls, grid: AxisymGrid, fn: Callable) -> "GridField":
        X, R = grid.mesh()
        return cls(grid, np.broadcast_to(np.asarray(fn(X, R), dtype=float), grid.shape))

    def gauss_values(self):
        return kernels.cell_values(self.values)

    def gauss_gradients(self):
        return kernels.cell_gradients(self.values, self.grid.hx, self.grid.hr)

    def positive_part(self) -> "GridField":
        return GridField(self.grid, np.maximum(self.values, 0.0), self.dirichlet)

    def interpolate(self, x1, r):
        """Bilinear value and gradient at arbitrary points; radii below the first row are clamped."""
        g = self.grid
        x1 = np.asarray(x1, dtype=float)
        r = np.asarray(r, dtype=float)
        fx = np.clip((x1 - g.x1[0]) / g.hx, 0.0, g.nx - 1 - 1e-12)
        fr = np.clip((r - g.r[0]) / g.hr, 0.0, g.nr - 1 - 1e-12)
        i = np.floor(fx).astype(int)
        j = np.floor(fr).astype(int)
        a = fx - i
        b = fr - j
        u = self.values
        u00, u10, u01, u11 = u[i, j], u[i + 1, j], u[i, j + 1], u[i + 1, j + 1]
        val = u00 * (1 - a) * (1 - b) + u10 * a * (1 - b) + u01 * (1 - a) * b + u11 * a * b
        gx = ((u10 - u00) * (1 - b) + (u11 - u01) * b) / g.hx
        gr = ((u01 - u00) * (1 - a) + (u11 - u10) * a) / g.hr
        gr = np.where(r < g.r[0], 0.0, gr)
        return val, gx, gr

    # serialisation

    def to_bytes(self) -> bytes:
        g = self.grid
        head = _HEADER.pack(
            FIELD_MAGIC, FIELD_VERSION, g.nx, g.nr, g.d, g.region_code(),
            g.x1_range[0], g.x1_range[1], g.r_range[0], g.r_range[1], g.inner, g.outer,
        )
        body = np.ascontiguousarray(self.values, dtype="<f8").tobytes(order="C")
        tags = np.ascontiguousarray(self.dirichlet, dtype=np.uint8).tobytes(order="C")
        return head + body + tags

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridField":
        if len(data) < _HEADER.size:
            raise ValueError("truncated field header")
        magic, version, nx, nr, d, code, x0, x1, r0, r1, inner, outer = _HEADER.unpack_from(data)
        if magic != FIELD_MAGIC:
            raise ValueError("not a degenlab field file")
        if version != FIELD_VERSION:
            raise ValueError(f"unsupported field version {version}")
        n = nx * nr
        expect = _HEADER.size + 8 * n + n
        if len(data) != expect:
            raise ValueError(f"field payload has {len(data)} bytes, expected {expect}")
        grid = AxisymGrid(nx, nr, d, (x0, x1), (r0, r1), REGIONS[code], inner, outer)
        vals = np.frombuffer(data, dtype="<f8", count=n, offset=_HEADER.size).reshape(nx, nr)
        tags = np.frombuffer(data, dtype=np.uint8, count=n, offset=_HEADER.size + 8 * n).reshape(nx, nr)
        return cls(grid, vals.astype(float), tags.astype(bool))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GridField":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def csv_rows(self):
        X, R = self.grid.mesh()
        yield ["x1", "r", "value", "dirichlet"]
        for x, r, v, t in zip(X.ravel(), R.ravel(), self.values.ravel(), self.dirichlet.ravel()):
            yield [repr(float(x)), repr(float(r)), repr(float(v)), str(int(t))]


def _same_grid(*fields: GridField) -> AxisymGrid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")
    return g


# energy and weak form ------------------------------------------------------------------


def energy(u: GridField, lam=1.0, p: float = 2.0, eps: float = 0.0) -> float:
    """``(1/p) int lambda (|grad u|^2 + eps^2)^{p/2}`` over the active region."""
    g = u.grid
    w = g.gauss_weights() * g.cell_sample(lam)[..., None]
    e, _, _ = kernels.energy_gradient(u.values, w, g.hx, g.hr, p, eps)
    return e


def _flux_weight(gx, gr, p):
    s = np.hypot(gx, gr)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(s > 0, s ** (p - 2.0), 0.0)
    return k


def weak_residual(u: GridField, phi: GridField, lam=1.0, p: float = 2.0, absolute: bool = False) -> float:
    """``A(u, phi) = int lambda |grad u|^{p-2} grad u . grad phi``.

    With ``absolute=True`` returns ``int lambda |grad u|^{p-1} |grad phi|``, the
    natural scale of the residual.
    """
    g = _same_grid(u, phi)
    w = g.gauss_weights() * g.cell_sample(lam)[..., None]
    ux, ur = u.gauss_gradients()
    px, pr = phi.gauss_gradients()
    k = _flux_weight(ux, ur, p)
    if absolute:
        return float(np.sum(w * k * np.hypot(ux, ur) * np.hypot(px, pr)))
    return float(np.sum(w * k * (ux * px + ur * pr)))


# solver -------------------------------------------------------------------------------


@dataclass(frozen=True)
class DirichletProblem:
    grid: AxisymGrid
    p: float
    boundary: Callable | np.ndarray
    lam: object = 1.0
    eps: float | None = None
    tol: float = 1e-9
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not self.p > 1:
            raise ConfigError("p must exceed 1")
        if np.any(self.grid.cell_sample(self.lam)[self.grid.active] <= 0):
            raise ConfigError("lambda must be positive on the active cells")


@dataclass(frozen=True)
class SolveReport:
    energy_history: tuple[float, ...]
    final_residual: float
    iterations: int
    converged: bool
    regularization: float

    def csv_rows(self):
        yield ["iteration", "energy"]
        for k, e in enumerate(self.energy_history):
            yield [str(k), repr(float(e))]
        yield ["# final_residual", repr(float(self.final_residual))]
        yield ["# converged", str(self.converged).lower()]
        yield ["# regularization", repr(float(self.regularization))]


def _boundary_values(problem: DirichletProblem) -> np.ndarray:
    g = problem.grid
    if callable(problem.boundary):
        X, R = g.mesh()
        return np.broadcast_to(np.asarray(problem.boundary(X, R), dtype=float), g.shape).copy()
    b = np.array(problem.boundary, dtype=float)
    if b.shape != g.shape:
        raise ValueError("boundary array must match the grid")
    return b


def _hessian(B, gx, gr, w, p, eps, floor):
    s2 = gx * gx + gr * gr + eps * eps
    k = w * np.maximum(s2, floor * floor) ** (0.5 * p - 1.0)
    c = np.where(s2 > 0, (p - 2.0) / np.where(s2 > 0, s2, 1.0), 0.0)
    dxx = (k * (1.0 + c * gx * gx)).ravel()
    dxr = (k * c * gx * gr).ravel()
    drr = (k * (1.0 + c * gr * gr)).ravel()
    nq = dxx.size
    D = sp.bmat([[sp.diags(dxx), sp.diags(dxr)], [sp.diags(dxr), sp.diags(drr)]], format="csr")
    return (B.T @ D @ B).tocsr(), nq


def minimize_energy(problem: DirichletProblem) -> tuple[GridField, SolveReport]:
    """Minimise the discrete energy with Newton directions and Armijo backtracking.

    The Newton system uses the exact Hessian of the regularised energy (with a
    small floor on ``|grad u|`` for ``p > 2``); a steepest-descent step is used
    whenever the Newton direction is not a descent direction. The start is the
    discrete ``p = 2`` solution with the same data.
    """
    g = problem.grid
    p = problem.p
    ub = _boundary_values(problem)
    scale = max(1.0, float(np.max(np.abs(ub))))
    eps = problem.eps if problem.eps is not None else (1e-8 * scale if p < 2 else 0.0)
    floor = 1e-8 * scale
    used, free = g.node_roles()
    F = np.flatnonzero(free.ravel())
    w = g.gauss_weights() * g.cell_sample(problem.lam)[..., None]
    B = g.gradient_operator()
    u = ub.ravel().copy()

    # p = 2 warm start
    zero = np.zeros(w.shape)
    H2, _ = _hessian(B, zero, zero, w, 2.0, 0.0, 0.0)
    H2ff = H2[F][:, F]
    rhs = -(H2[F] @ u) + H2ff @ u[F]
    u[F] = spla.spsolve(H2ff.tocsc(), rhs)

    def eval_e(vec):
        return kernels.energy_gradient(vec.reshape(g.shape), w, g.hx, g.hr, p, eps)

    e, grad, gabs = eval_e(u)
    history = [e]
    residual = math.inf
    converged = False
    it = 0
    for it in range(1, problem.max_iter + 1):
        gF = grad.ravel()[F]
        residual = float(np.max(np.abs(gF)) / max(np.max(gabs.ravel()[F]), 1e-300)) if F.size else 0.0
        if residual < problem.tol and len(history) > 1:
            rel = (history[-2] - history[-1]) / max(abs(history[-1]), 1e-300)
            if rel < 1e-12:
                converged = True
                break
        gx, gr = kernels.cell_gradients(u.reshape(g.shape), g.hx, g.hr)
        H, _ = _hessian(B, gx, gr, w, p, eps, floor if p > 2 else 0.0)
        try:
            direction = -spla.spsolve(H[F][:, F].tocsc(), gF)
        except RuntimeError:
            direction = -gF
        slope = float(gF @ direction)
        if not np.all(np.isfinite(direction)) or slope >= 0:
            direction = -gF
            slope = -float(gF @ gF)
        if slope == 0.0:
            converged = residual < problem.tol
            break
        step = 1.0
        accepted = False
        for _ in range(60):
            trial = u.copy()
            trial[F] += step * direction
            e_new, g_new, a_new = eval_e(trial)
            if e_new <= e + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted or not e_new < e:
            # no representable decrease left: stationary to round-off
            converged = residual < problem.tol * 1e3
            break
        u, e, grad, gabs = trial, e_new, g_new, a_new
        history.append(e)
    else:
        log.warning("minimize_energy hit the iteration budget (%d)", problem.max_iter)
    gF = grad.ravel()[F]
    if F.size:
        residual = float(np.max(np.abs(gF)) / max(np.max(gabs.ravel()[F]), 1e-300))
    tags = used & ~free
    field_out = GridField(g, u.reshape(g.shape), tags)
    return field_out, SolveReport(tuple(history), residual, it, converged, eps)


# Caccioppoli -----------------------------------------------------------------------------


@dataclass(frozen=True)
class CaccioppoliResult:
    lhs: float
    rhs: float
    slack: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.slack)


def caccioppoli_check(u: GridField, lam, mu, eta: GridField, beta: float, p: float, slack: float | None = None):
    """``int eta^p lambda u_+^{beta-1} |grad u_+|^p`` against ``(p/beta)^p int u_+^{p+beta-1} mu |grad eta|^p``.

    ``slack`` defaults to ``10 h`` with ``h`` the larger grid spacing.
    """
    if beta < 1:
        raise ConfigError("beta must be >= 1")
    g = _same_grid(u, eta)
    w = g.gauss_weights()
    up = u.positive_part()
    uq = up.gauss_values()
    ux, ur = up.gauss_gradients()
    eq = eta.gauss_values()
    ex, er = eta.gauss_gradients()
    lam_c = g.cell_sample(lam)[..., None]
    mu_c = g.cell_sample(mu)[..., None]
    lhs = float(np.sum(w * np.abs(eq) ** p * lam_c * uq ** (beta - 1.0) * np.hypot(ux, ur) ** p))
    rhs = (p / beta) ** p * float(np.sum(w * uq ** (p + beta - 1.0) * mu_c * np.hypot(ex, er) ** p))
    if slack is None:
        slack = 10.0 * max(g.hx, g.hr)
    return CaccioppoliResult(lhs, rhs, slack)


# radial cutoff optimisation ----------------------------------------------------------------


@dataclass(frozen=True)
class CutoffResult:
    J_min: float
    bound_rhs: float
    J_ramp: float
    radii: np.ndarray = field(repr=False)
    profile: np.ndarray = field(repr=False)
    ok: bool = True


def _as_callable(obj):
    if isinstance(obj, GridField):
        return lambda x1, r: obj.interpolate(x1, r)[0]
    if callable(obj):
        return obj
    c = float(obj)
    return lambda x1, r: np.full(np.broadcast(x1, r).shape, c)


def _gradient_callable(v, v_grad):
    if isinstance(v, GridField):
        def grad(x1, r):
            _, gx, gr = v.interpolate(x1, r)
            return gx, gr
        return grad
    if v_grad is not None:
        return v_grad
    fn = _as_callable(v)
    step = 1e-6

    def fd(x1, r):
        gx = (fn(x1 + step, r) - fn(x1 - step, r)) / (2 * step)
        gr = (fn(x1, r + step) - fn(x1, np.abs(r - step))) / (2 * step)
        return gx, gr

    return fd


def _polar_nodes(d, edges, n_rho=4, n_psi=64):
    """Nodes ``(x1, r)`` and weights of polar quadrature on the shells between ``edges`` in ``R^d``."""
    xg, wg = leggauss(n_rho)
    yg, vg = leggauss(n_psi)
    a, b = edges[:-1, None], edges[1:, None]
    rho = 0.5 * (a + b) + 0.5 * (b - a) * xg
    w_rho = 0.5 * (b - a) * wg * rho ** (d - 1)
    psi = 0.5 * math.pi * (yg + 1.0)
    w_psi = 0.5 * math.pi * vg * np.sin(psi) ** (d - 2) * sphere_area(d - 2)
    x1 = rho[..., None] * np.cos(psi)
    r = rho[..., None] * np.sin(psi)
    w = w_rho[..., None] * w_psi
    return x1, r, w


def cutoff_optimize(
    mu,
    v,
    rho: float,
    sigma: float,
    p: float,
    d: int = 3,
    *,
    s: float = math.inf,
    h: float = 1.0 / 128.0,
    v_grad: Callable | None = None,
    constant: float | None = None,
) -> CutoffResult:
    """Optimal radial cutoff between ``B_rho`` and ``B_sigma`` for ``int mu |v|^p |grad eta|^p``.

    ``eta`` is piecewise linear in the full radius on shells of width about
    ``h``. With shell masses ``m_k = int_{shell k} mu |v|^p`` and drops
    ``delta_k`` summing to 1, the discrete functional is
    ``sum m_k (delta_k / w_k)^p``; its minimiser is
    ``delta_k ~ (m_k / w_k^p)^{-1/(p-1)}`` and the minimum is
    ``(sum (m_k / w_k^p)^{-1/(p-1)})^{-(p-1)}``.

    ``bound_rhs`` is the right-hand side of the radial optimisation bound
    (without its constant), available for ``d >= 3`` and ``s > 1``.
    """
    if not rho < sigma:
        raise ConfigError(f"need rho < sigma, got rho={rho}, sigma={sigma}")
    if not p > 1:
        raise ConfigError("p must exceed 1")
    n = max(4, int(round((sigma - rho) / h)))
    edges = np.linspace(rho, sigma, n + 1)
    widths = np.diff(edges)
    mu_fn = _as_callable(mu)
    v_fn = _as_callable(v)
    x1, r, w = _polar_nodes(d, edges)
    mass = np.sum(w * np.asarray(mu_fn(x1, r), dtype=float) * np.abs(np.asarray(v_fn(x1, r), dtype=float)) ** p, axis=(1, 2))
    if np.any(mass < 0):
        raise ConfigError("mu must be nonnegative")
    c = mass / widths**p
    if np.any(c == 0):
        # a massless shell absorbs the whole drop for free
        J_min = 0.0
        drops = (c == 0) / np.count_nonzero(c == 0)
    else:
        inv = c ** (-1.0 / (p - 1.0))
        J_min = float(np.sum(inv) ** (-(p - 1.0)))
        drops = inv / np.sum(inv)
    profile = np.concatenate(([1.0], 1.0 - np.cumsum(drops)))
    profile[-1] = 0.0
    J_ramp = float(np.sum(mass)) / (sigma - rho) ** p

    bound = math.nan
    ok = True
    if d >= 3 and s > 1:
        ss = s_star(ExponentConfig(d, p, s, math.inf))
        grad = _gradient_callable(v, v_grad)
        mu_vals = np.asarray(mu_fn(x1, r), dtype=float)
        if math.isinf(s):
            mu_norm = float(np.max(mu_vals))
        else:
            mu_norm = float(np.sum(w * mu_vals**s)) ** (1.0 / s)
        gx, gr = grad(x1, r)
        gv = float(np.sum(w * np.hypot(gx, gr) ** ss)) ** (1.0 / ss)
        vv = float(np.sum(w * np.abs(v_fn(x1, r)) ** ss)) ** (1.0 / ss)
        bound = (sigma - rho) ** (-p * d / (d - 1.0)) * mu_norm * (gv**p + rho ** (-p) * vv**p)
        const = CALIBRATION["cutoff"] if constant is None else constant
        ok = J_min <= 2.0 * const * bound
    return CutoffResult(J_min, bound, J_ramp, edges, profile, ok)


# bound checks --------------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    sup_val: float
    bound_val: float
    ratio: float
    ok: bool


def _ratio(sup_val, bound_val):
    if bound_val > 0:
        return sup_val / bound_val
    return 0.0 if sup_val <= 0 else math.inf


def _ball_mask(grid: AxisymGrid, R: float):
    X, Rr = grid.cell_centers()
    return np.hypot(X, Rr) < R


def _node_sup(u: GridField, radius: float) -> float:
    X, R = u.grid.mesh()
    inside = np.hypot(X, R) <= radius * (1.0 + 1e-12)
    if not np.any(inside):
        raise ValueError(f"no grid node inside B_{radius}")
    return float(np.max(u.values[inside]))


def _grid_lambda(grid, lam, mu, s, t, R) -> float:
    mask = _ball_mask(grid, R)
    w = grid.gauss_weights(mask)
    vol = float(np.sum(w))
    lam_c = np.broadcast_to(grid.cell_sample(lam)[..., None], w.shape)
    mu_c = np.broadcast_to(grid.cell_sample(mu)[..., None], w.shape)
    sel = w > 0
    if np.any(lam_c[sel] <= 0):
        raise ConfigError("lambda must be positive")
    if math.isinf(s):
        a = float(np.max(mu_c[sel]))
    else:
        a = (float(np.sum(w * mu_c**s)) / vol) ** (1.0 / s)
    if math.isinf(t):
        b = float(np.max(1.0 / lam_c[sel]))
    else:
        b = (float(np.sum(w * lam_c ** (-t))) / vol) ** (1.0 / t)
    return a * b


def grid_sobolev_norm(u: GridField, gamma: float, R: float = 1.0) -> float:
    """Underlined ``W^{1,gamma}(B_R)`` norm of a grid field."""
    if not gamma >= 1:
        raise ConfigError(f"gamma must be >= 1, got {gamma}")
    g = u.grid
    w = g.gauss_weights(_ball_mask(g, R))
    uq = u.gauss_values()
    ux, ur = u.gauss_gradients()
    lv = float(np.sum(w * np.abs(uq) ** gamma)) ** (1.0 / gamma)
    lg = float(np.sum(w * np.hypot(ux, ur) ** gamma)) ** (1.0 / gamma)
    d = g.d
    return R ** (-d / gamma) * lv + R ** (1.0 - d / gamma) * lg


def moser_bound_check(u: GridField, lam, mu, config: ExponentConfig, R: float = 1.0, constant: float | None = None):
    """``sup_{B_{R/2}} u`` against ``Lambda(B_R)^{1/(p delta)} ||u_+||_{W^{1, tp/(t+1)}(B_R)}``."""
    mc = moser_constants(config)
    if u.grid.d != config.d:
        raise ConfigError("grid dimension differs from config.d")
    sup_val = _node_sup(u, 0.5 * R)
    lam_val = _grid_lambda(u.grid, lam, mu, config.s, config.t, R)
    norm = grid_sobolev_norm(u.positive_part(), config.gradient_exponent, R)
    bound = lam_val ** mc.sup_exponent * norm
    ratio = _ratio(sup_val, bound)
    const = CALIBRATION["moser"] if constant is None else constant
    return BoundCheck(sup_val, bound, ratio, ratio <= 2.0 * const)


def corollary_check(u: GridField, lam, mu, config: ExponentConfig, gamma: float, R: float = 1.0, constant=None):
    """``sup_{B_{R/2}} u`` against ``Lambda^{(1/gamma)(s/(s-1))(1+1/delta)} (avg_{B_R} u_+^gamma)^{1/gamma}``."""
    if config.inv_s >= 1.0:
        raise ConfigError("the L^inf-L^gamma estimate needs s > 1")
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    mc = moser_constants(config)
    g = u.grid
    sup_val = _node_sup(u, 0.5 * R)
    lam_val = _grid_lambda(g, lam, mu, config.s, config.t, R)
    w = g.gauss_weights(_ball_mask(g, R))
    avg = (float(np.sum(w * u.positive_part().gauss_values() ** gamma)) / float(np.sum(w))) ** (1.0 / gamma)
    bound = lam_val ** mc.corollary_exponent(gamma) * avg
    ratio = _ratio(sup_val, bound)
    const = CALIBRATION["corollary"] if constant is None else constant
    return BoundCheck(sup_val, bound, ratio, ratio <= 2.0 * const)


@dataclass(frozen=True)
class SphereCheck:
    interior_sup: float
    sphere_sup: float
    sphere_bound: float
    r0: float
    ok: bool


def _sphere_norm(u: GridField, r0: float, gamma: float, n_psi: int = 256):
    """``(||u_+||^gamma_{L^gamma(S)} + ||grad_T u_+||^gamma_{L^gamma(S)})`` on the sphere of radius ``r0`` and its max."""
    d = u.grid.d
    yg, vg = leggauss(n_psi)
    psi = 0.5 * math.pi * (yg + 1.0)
    x1 = r0 * np.cos(psi)
    r = r0 * np.sin(psi)
    val, gx, gr = u.interpolate(x1, r)
    pos = val > 0
    up = np.where(pos, val, 0.0)
    tang = np.where(pos, -np.sin(psi) * gx + np.cos(psi) * gr, 0.0)
    if d == 2:
        # S^1 is two copies of the half circle
        w = 2.0 * 0.5 * math.pi * vg * r0
    else:
        w = 0.5 * math.pi * vg * np.sin(psi) ** (d - 2) * sphere_area(d - 2) * r0 ** (d - 1)
    total = float(np.sum(w * (up**gamma + np.abs(tang) ** gamma)))
    return total, float(np.max(up)), float(np.sum(w))


def sphere_max_bound(u: GridField, config: ExponentConfig, n_radii: int = 33, tol: float = 1e-6) -> SphereCheck:
    """Maximum principle on a generic sphere ``S_{r0}``, ``1/2 < r0 < 1``.

    ``r0`` minimises the sphere Sobolev energy over ``n_radii`` candidates,
    so it satisfies the averaging bound against the ball norm. The returned
    ``sphere_bound`` is the scale-free sphere norm of ``u_+`` with exponent
    ``pt/(t+1)`` (1 when ``d = 2``).
    """
    d = config.d
    if d == 2:
        gamma = 1.0
    else:
        if not sphere_case(config):
            raise ConfigError("sphere bound needs 1 + 1/t < p/(d-1) (or d = 2)")
        gamma = config.gradient_exponent
    if u.grid.d != d:
        raise ConfigError("grid dimension differs from config.d")
    radii = 0.5 + 0.5 * (np.arange(n_radii) + 0.5) / n_radii
    energies = [_sphere_norm(u, r0, gamma)[0] for r0 in radii]
    r0 = float(radii[int(np.argmin(energies))])
    total, sphere_sup, area = _sphere_norm(u, r0, gamma)
    interior = max(_node_sup(u, 0.5), 0.0)
    bound = (total / area) ** (1.0 / gamma)
    return SphereCheck(interior, sphere_sup, bound, r0, interior <= sphere_sup + tol)


# counterexample family ---------------------------------------------------------------------


@dataclass(frozen=True)
class SharpnessRow:
    k: int
    sup_val: float
    lambda_val: float
    exponent: float
    norm: float
    ratio: float


def sharpness_ratio(ce, config: ExponentConfig, k: int, rule: ShellQuadRule | None = None) -> SharpnessRow:
    """Sup-to-bound ratio of the truncated subsolution ``v_k`` with weight ``lambda_{theta,k}``.

    ``v_k = exp(alpha x1) min(phi, k)`` and ``lambda_{theta,k}`` equals the shell
    weight for ``|x'| > 4^{-k}`` and 1 inside. The Lambda power is ``1/(p delta)``
    for admissible pairs and 0 when ``delta <= 0``, where no power is defined.
    """
    if k > ce.i_max:
        raise ConfigError(f"k={k} exceeds i_max={ce.i_max}")
    rule = rule or ShellQuadRule(depth=max(32, k + 8))
    try:
        exponent = moser_constants(config).sup_exponent
    except ConfigError:
        exponent = 0.0
    ns, nt = truncated_weight_norms(ce, config.s, config.t, k, rule)
    vol = ball_volume(ce.d)
    lam_val = (ns.value / vol ** config.inv_s) * (nt.value / vol ** config.inv_t)
    norm = truncated_sobolev_norm(ce, config.gradient_exponent, k, rule)
    sup_val = k * math.exp(0.5 * ce.alpha)
    bound = lam_val**exponent * norm
    return SharpnessRow(k, sup_val, lam_val, exponent, norm, sup_val / bound)


# calibration ------------------------------------------------------------------------------


# frozen output of calibrate() on the reference family
CALIBRATION = {
    "moser": 0.4382389158621735,
    "corollary": 483.7684702828173,
    "sphere_2d": 0.9385965408230703,
    "cutoff": 0.14165028970407428,
}

CALIBRATION_H = 1.0 / 16.0
CALIBRATION_SEED = 20240601
CALIBRATION_PS = (1.5, 2.0, 3.0)
CALIBRATION_SAMPLES = 20


def reference_boundary(seed: int, index: int):
    """Random axisymmetric cubic ``sum c_ab x1^a r^(2b)`` with standard normal coefficients."""
    rng = np.random.default_rng([seed, index])
    terms = [(a, b) for a in range(4) for b in range(2) if a + 2 * b <= 3]
    coef = rng.standard_normal(len(terms))

    def g(x1, r):
        return sum(c * x1**a * r ** (2 * b) for c, (a, b) in zip(coef, terms))

    return g


def _reference_solutions(d: int, h: float, ps, samples: int, seed: int):
    grid = AxisymGrid.uniform(h, d=d)
    for p in ps:
        for m in range(samples):
            u, rep = minimize_energy(DirichletProblem(grid, p, reference_boundary(seed, m)))
            yield p, m, u, rep


def calibrate(h: float = CALIBRATION_H, samples: int = CALIBRATION_SAMPLES, seed: int = CALIBRATION_SEED) -> dict:
    """Largest observed ratios on the uniformly elliptic reference family (``lambda = mu = 1``)."""
    out = {"moser": 0.0, "corollary": 0.0, "sphere_2d": 0.0, "cutoff": 0.0}
    for p, _, u, _ in _reference_solutions(3, h, CALIBRATION_PS, samples, seed):
        cfg = ExponentConfig(3, p)
        out["moser"] = max(out["moser"], moser_bound_check(u, 1.0, 1.0, cfg, constant=math.inf).ratio)
        for gamma in (0.25, 0.5, 1.0, 2.0, p):
            chk = corollary_check(u, 1.0, 1.0, cfg, gamma, constant=math.inf)
            out["corollary"] = max(out["corollary"], chk.ratio)
    for p, _, u, _ in _reference_solutions(2, h, CALIBRATION_PS, samples, seed):
        chk = sphere_max_bound(u, ExponentConfig(2, p))
        out["sphere_2d"] = max(out["sphere_2d"], _ratio(chk.interior_sup, chk.sphere_bound))
    for p in CALIBRATION_PS:
        for rho, sigma in ((0.5, 1.0), (0.5, 0.75), (0.75, 1.0), (0.5, 0.5625)):
            for v in (1.0, lambda x1, r: x1 + 2.0, lambda x1, r: 1.0 + x1 * x1 + r * r):
                res = cutoff_optimize(1.0, v, rho, sigma, p, 3, s=math.inf, h=1.0 / 64.0, constant=math.inf)
                out["cutoff"] = max(out["cutoff"], res.J_min / res.bound_rhs)
    return out


def regime_for_family(config: ExponentConfig) -> RegimeTag:
    return classify(config).tag
