"""The dyadic-shell unbounded subsolution and its numerical certificate.

The weight ``omega_theta(|x'|)`` and the profile ``phi(|x'|)`` are defined
shell by shell on ``r in [4^{-i-1}, 4^{-i})``. Each shell has an outer LOG
branch ``[4^{-i}/2, 4^{-i})`` (power-law profile) and an inner QUAD branch
``[4^{-i}/4, 4^{-i}/2)`` (quadratic profile). The subsolution is
``v(x) = exp(alpha x1) phi(|x'|)``.

The flux-matching parameters ``eta_i`` approach 1 like ``16^{-i}``, so the
table stores ``eps_i = 1 - eta_i`` to full relative precision and all
branch formulas use ``eps_i`` directly.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .params import ConfigError, CounterexampleParams, counterexample_params

__all__ = [
    "Branch",
    "ShellPoint",
    "EtaTable",
    "Counterexample",
    "VerificationError",
    "build_counterexample",
    "shell_index",
    "solve_eta",
    "flux_balance_log",
    "F",
    "eta_lower_bound_gap",
    "FluxJump",
    "ShellReport",
]

LOG4 = math.log(4.0)
LOG8 = math.log(8.0)
SCAN_STEP = 1e-3
# the eta lower bound is asymptotically tight, so it is compared with this slack
BOUND_RTOL = 1e-12
BISECTION_STEPS = 200
DIVERGENCE_RTOL = 1e-9


class VerificationError(RuntimeError):
    """A property the construction guarantees failed numerically."""


class Branch(str, enum.Enum):
    LOG = "LOG"
    QUAD = "QUAD"


@dataclass(frozen=True)
class ShellPoint:
    i: int
    branch: Branch
    r: float
    x1: float = 0.0

    def __post_init__(self) -> None:
        lo, hi = branch_interval(self.i, self.branch)
        if not lo <= self.r < hi:
            raise ValueError(f"r={self.r!r} not in {self.branch.value} branch [{lo}, {hi}) of shell {self.i}")


def branch_interval(i: int, branch: Branch) -> tuple[float, float]:
    top = math.ldexp(1.0, -2 * i)
    if branch is Branch.LOG:
        return 0.5 * top, top
    return 0.25 * top, 0.5 * top


def shell_index(r):
    """Shell index and LOG flag for radii in (0, 1); exact for binary floats.

    ``r = m 2^e`` with ``m in [1/2, 1)`` lies in shell ``(-e)//2`` and on its
    LOG branch exactly when ``e`` is even.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= 1):
        raise ValueError("radius must lie in (0, 1)")
    _, e = np.frexp(r)
    return (-e) // 2, (e % 2) == 0


def _log_hypot(la, lb):
    """``log(sqrt(exp(2 la) + exp(2 lb)))`` without overflow."""
    hi = np.maximum(la, lb)
    lo = np.minimum(la, lb)
    with np.errstate(invalid="ignore"):
        out = hi + 0.5 * np.log1p(np.exp(2.0 * (lo - hi)))
    return np.where(np.isneginf(hi), -np.inf, out)


def _flux_terms_log(i: int, eps, alpha: float, C_Q: float, p: float):
    """Logs of the two terms of ``F_i`` at ``eta = 1 - eps``; vectorised over ``eps``."""
    eps = np.asarray(eps, dtype=float)
    eta = 1.0 - eps
    with np.errstate(divide="ignore", invalid="ignore"):
        l_eta = np.log1p(-eps)
        l_eps = np.log(eps)
        l_drift = np.log(alpha * (i + eta))
        l_cq = math.log(C_Q) + l_eta
        log_t1 = (p - 2.0) * _log_hypot(l_drift - i * LOG4, l_cq) + l_cq
        l_scale = LOG8 + l_eps + i * LOG4 - math.log(i + 1)
        log_t2 = (p - 2.0) * _log_hypot(l_drift - math.log(i + 1), l_scale) + l_scale + i * LOG4
    log_t1 = np.where(eta > 0, log_t1, -np.inf)
    log_t2 = np.where(eps > 0, log_t2, -np.inf)
    if log_t1.ndim == 0:
        return float(log_t1), float(log_t2)
    return log_t1, log_t2


def flux_balance_log(i: int, eps: float, alpha: float, C_Q: float, p: float) -> float:
    """``log(term1) - log(term2)`` of ``F_i`` at ``eta = 1 - eps``; same sign as ``F_i``."""
    l1, l2 = _flux_terms_log(i, eps, alpha, C_Q, p)
    with np.errstate(invalid="ignore"):
        return np.where(l1 == l2, 0.0, np.subtract(l1, l2)) if np.ndim(l1) else (0.0 if l1 == l2 else l1 - l2)


def F(i: int, eta: float, alpha: float, C_Q: float, p: float) -> float:
    """The flux-matching function in direct (linear) form."""
    t1 = math.sqrt((alpha * (i + eta) * 4.0**-i) ** 2 + (C_Q * eta) ** 2) ** (p - 2.0) * C_Q * eta
    t2 = (
        math.sqrt((alpha * (i + eta) / (i + 1)) ** 2 + (8.0 * (1.0 - eta) * 4.0**i / (i + 1)) ** 2) ** (p - 2.0)
        * 8.0
        * (1.0 - eta)
        * 4.0 ** (2 * i)
        / (i + 1)
    )
    return t1 - t2


@dataclass(frozen=True)
class EtaSolution:
    eps: float
    residual: float
    sign_changes: int


def solve_eta(i: int, alpha: float, C_Q: float, p: float) -> EtaSolution:
    """Largest root ``eta_i = 1 - eps_i`` of ``F_i`` in (0, 1].

    Scans ``eta`` downward from 1 in steps of ``SCAN_STEP`` for the first sign
    change, then bisects. The bracket is refined geometrically in ``eps``
    because ``eps_i`` can be far below the scan step.
    """
    if i < 0:
        raise ValueError("shell index must be nonnegative")

    def g(eps):
        return flux_balance_log(i, eps, alpha, C_Q, p)

    n_scan = int(round(1.0 / SCAN_STEP))
    signs = np.sign(g(np.arange(1, n_scan + 1) * SCAN_STEP))
    signs[-1] = -1.0  # eta = 0 end: F_i < 0
    negative = np.nonzero(signs <= 0)[0]
    if negative.size == 0:
        raise VerificationError(f"F_{i} has no sign change on (0, 1) at scan resolution {SCAN_STEP}")
    k = int(negative[0]) + 1
    hi = k * SCAN_STEP
    # sign changes of the whole scan; more than one flags possible extra roots
    seq = np.concatenate(([1.0], signs))
    changes = int(np.count_nonzero(np.diff(np.sign(seq + (seq == 0) * -1.0)) != 0))
    if g(hi) == 0.0:
        return EtaSolution(eps=hi, residual=0.0, sign_changes=changes)
    lo = (k - 1) * SCAN_STEP
    if lo == 0.0:
        lo = hi
        while g(lo) <= 0:
            lo *= 1e-4
            if lo < 1e-300:
                raise VerificationError(f"F_{i}: no positive value near eta = 1")
    for _ in range(BISECTION_STEPS):
        mid = math.sqrt(lo * hi) if hi > 2.0 * lo else 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = g(mid)
        if gm == 0.0:
            lo = hi = mid
            break
        if gm > 0:
            lo = mid
        else:
            hi = mid
    eps = lo if abs(g(lo)) <= abs(g(hi)) else hi
    l1, l2 = _flux_terms_log(i, eps, alpha, C_Q, p)
    residual = abs(math.expm1(-abs(l1 - l2)))
    return EtaSolution(eps=eps, residual=residual, sign_changes=changes)


def eta_lower_bound_gap(i: int, p: float, C_Q: float, alpha: float) -> float:
    """Upper bound on ``1 - eta_i`` implied by the explicit lower bounds on ``eta_i``.

    For ``p >= 2``: ``(4^{p-2} C_Q) 4^{-2i} (i+1) / 8``; for ``1 < p < 2``:
    ``alpha 4^{-2i} (i+1) / 8``.
    """
    lead = 4.0 ** (p - 2.0) * C_Q if p >= 2 else alpha
    return lead * 4.0 ** (-2 * i) * (i + 1) / 8.0


@dataclass(frozen=True)
class EtaTable:
    alpha: float
    i_max: int
    eps: np.ndarray
    residuals: np.ndarray
    sign_changes: np.ndarray

    @property
    def eta(self) -> np.ndarray:
        return 1.0 - self.eps

    @classmethod
    def solve(cls, params: CounterexampleParams, alpha: float, i_max: int) -> "EtaTable":
        sols = [solve_eta(i, alpha, params.C_Q, params.p) for i in range(i_max + 1)]
        return cls(
            alpha=alpha,
            i_max=i_max,
            eps=np.array([s.eps for s in sols]),
            residuals=np.array([s.residual for s in sols]),
            sign_changes=np.array([s.sign_changes for s in sols], dtype=int),
        )


@dataclass(frozen=True)
class FluxJump:
    gamma: float
    kind: str  # "inner" at 4^{-i}/2, "outer" at 4^{-i}
    i: int
    left: float
    right: float
    rel_mismatch: float
    ok: bool


@dataclass(frozen=True)
class ShellReport:
    i: int
    branch: Branch
    eta: float
    residual: float
    min_divergence: float
    flux_left: float
    flux_right: float
    ok: bool


@dataclass(frozen=True)
class Counterexample:
    """Frozen description of ``v = exp(alpha x1) phi(|x'|)`` with weight ``omega_theta``."""

    params: CounterexampleParams
    theta: float
    alpha: float
    etas: EtaTable
    j: int | None = None

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def p(self) -> float:
        return self.params.p

    @property
    def i_max(self) -> int:
        return self.etas.i_max

    @property
    def rho(self) -> float:
        if self.j is None:
            raise VerificationError("j has not been determined")
        return math.ldexp(1.0, -2 * self.j)

    # weight --------------------------------------------------------------

    def log_omega_branch(self, i, log_branch):
        i = np.asarray(i, dtype=float)
        p, th = self.p, self.theta
        lg = np.log(i + 1.0)
        log_w = (p - 1.0) * th * lg - p * i * th * LOG4
        quad_w = (1.0 - th) * (-(p - 1.0) * lg + p * i * LOG4)
        return np.where(log_branch, log_w, quad_w)

    def omega(self, r):
        """The weight ``omega_theta(r)`` for ``r in (0, 1)``."""
        i, is_log = shell_index(r)
        return np.exp(self.log_omega_branch(i, is_log))

    # profile -------------------------------------------------------------

    def _check_depth(self, i):
        if np.any(np.asarray(i) > self.i_max):
            raise ValueError(f"radius below the resolved depth 4^-(i_max+1), i_max={self.i_max}")

    def branch_eval(self, i, is_log, r, order: int = 0):
        """Evaluate the branch formula of shell ``i`` at ``r`` (also at its closure)."""
        i = np.asarray(i)
        r = np.asarray(r, dtype=float)
        is_log = np.asarray(is_log)
        self._check_depth(i)
        Q = self.params.Q
        eps = self.etas.eps[i]
        eta = 1.0 - eps
        c = eta / (2.0**Q - 1.0)
        y = np.ldexp(r, 2 * i)  # 4^i r
        z = np.ldexp(r, 2 * i + 2)  # 4^{i+1} r
        four_ip1 = np.ldexp(1.0, 2 * i + 2)
        yq = y ** (-Q)
        if order == 0:
            log_v = i + c * (yq - 1.0)
            quad_v = (i + 1) - eps * (z - 1.0) ** 2
        elif order == 1:
            log_v = -Q * c * yq / r
            quad_v = -2.0 * eps * four_ip1 * (z - 1.0)
        elif order == 2:
            log_v = Q * (Q + 1.0) * c * yq / r**2
            quad_v = -2.0 * eps * four_ip1**2
        elif order == 3:
            # radial Laplacian phi'' + (d-2) phi'/r, combined before evaluation
            d = self.d
            log_v = Q * (Q + 3.0 - d) * c * yq / r**2
            quad_v = -2.0 * eps * four_ip1 * (four_ip1 + (d - 2) * (z - 1.0) / r)
        else:
            raise ValueError("order must be 0, 1, 2 (or 3 for the radial Laplacian)")
        return np.where(is_log, log_v, quad_v)

    def phi(self, r, order: int = 0, k: int | None = None):
        """Profile ``phi`` (order 0), ``phi'`` (1), ``phi''`` (2); truncated at ``4^{-k}`` if ``k`` given.

        The truncation replaces ``phi`` by ``k`` on ``r <= 4^{-k}``.
        """
        r = np.asarray(r, dtype=float)
        if k is not None:
            inner = r <= math.ldexp(1.0, -2 * k)
            r_safe = np.where(inner, 0.5, r)
            out = self.phi(r_safe, order)
            return np.where(inner, float(k) if order == 0 else 0.0, out)
        i, is_log = shell_index(r)
        return self.branch_eval(i, is_log, r, order)

    def radial_laplacian(self, r, k: int | None = None):
        return self.phi(r, 3, k) if k is None else np.where(
            np.asarray(r) <= math.ldexp(1.0, -2 * k), 0.0, self.phi(np.maximum(r, math.ldexp(1.0, -2 * k) * 1.0000001), 3)
        )

    # field ---------------------------------------------------------------

    def field(self, x1, r, k: int | None = None):
        """``v``, its gradient ``(d/dx1, d/dr)`` and the strain ``|grad v|^{p-2} grad v``."""
        x1 = np.asarray(x1, dtype=float)
        f = self.phi(r, 0, k)
        df = self.phi(r, 1, k)
        a = self.alpha
        ex = np.exp(a * x1)
        v = ex * f
        grad = np.stack([a * f * ex, df * ex])
        H = a * a * f * f + df * df
        strain = np.stack([a * f, df]) * H ** (0.5 * (self.p - 2.0)) * np.exp(a * (self.p - 1.0) * x1)
        return v, grad, strain

    def divergence(self, x1, r):
        """Closed-form ``div(|grad v|^{p-2} grad v)``, with the bracket-relative margin.

        Returns ``(value, margin)`` where ``margin = bracket / scale`` is the
        sign indicator normalised by the sum of absolute term sizes.
        """
        r = np.asarray(r, dtype=float)
        f = self.phi(r, 0)
        df = self.phi(r, 1)
        ddf = self.phi(r, 2)
        lap = self.phi(r, 3)
        bracket, scale, H = kernels.divergence_bracket(f, df, ddf, lap, self.alpha, self.p)
        if np.any(H == 0):
            raise VerificationError("degenerate gradient: alpha^2 phi^2 + phi'^2 = 0")
        value = H ** (0.5 * (self.p - 4.0)) * bracket * np.exp(self.alpha * (self.p - 1.0) * np.asarray(x1))
        return value, bracket / scale

    def shell_divergence(self, pt: ShellPoint) -> float:
        if pt.r in branch_interval(pt.i, pt.branch)[:1]:
            raise ValueError("shell_divergence needs a point strictly inside its branch")
        value, _ = self.divergence(pt.x1, pt.r)
        return float(value)

    def sample_divergence(self, i: int, n: int = 10_000, seed: int = 0):
        """Minimum normalised divergence over ``n`` uniform samples of shell ``i``.

        Samples are split evenly over the two branches, strictly inside each.
        """
        rng = np.random.default_rng([seed, i])
        out = {}
        for branch in (Branch.LOG, Branch.QUAD):
            lo, hi = branch_interval(i, branch)
            m = n // 2
            r = lo + (hi - lo) * rng.uniform(0.0, 1.0, m)
            r = np.clip(r, np.nextafter(lo, hi), np.nextafter(hi, lo))
            half = np.sqrt(1.0 - r * r)
            x1 = rng.uniform(-1.0, 1.0, m) * half
            _, margin = self.divergence(x1, r)
            out[branch] = float(np.min(margin))
        return out

    # flux at interfaces --------------------------------------------------

    def radial_flux(self, i: int, is_log: bool, r: float, x1: float = 0.0) -> float:
        """``omega |grad v|^{p-2} phi'`` (radial strain times weight) from a given branch."""
        f = float(self.branch_eval(i, is_log, r, 0))
        df = float(self.branch_eval(i, is_log, r, 1))
        if df == 0.0:
            return 0.0
        H = self.alpha**2 * f * f + df * df
        log_mag = (
            float(self.log_omega_branch(i, is_log))
            + 0.5 * (self.p - 2.0) * math.log(H)
            + math.log(abs(df))
            + self.alpha * (self.p - 1.0) * x1
        )
        return math.copysign(math.exp(log_mag), df)

    def flux_jumps(self, i: int) -> tuple[FluxJump, FluxJump]:
        """One-sided fluxes at ``4^{-i}/2`` (must match) and at ``4^{-i}`` (must jump up)."""
        gamma_in = math.ldexp(0.5, -2 * i)
        left = self.radial_flux(i, False, gamma_in)
        right = self.radial_flux(i, True, gamma_in)
        mism = abs(left - right) / max(abs(left), abs(right))
        inner = FluxJump(gamma_in, "inner", i, left, right, mism, mism <= 1e-10)
        gamma_out = math.ldexp(1.0, -2 * i)
        left_o = self.radial_flux(i, True, gamma_out)
        right_o = self.radial_flux(i - 1, False, gamma_out) if i >= 1 else 0.0
        outer = FluxJump(gamma_out, "outer", i, left_o, right_o, math.nan, right_o == 0.0 and left_o < 0.0)
        return inner, outer

    # certificate -----------------------------------------------------------

    def unbounded_point(self, M: float) -> tuple[float, float, float]:
        """A point ``(x1, r)`` with ``v >= M``, and the value there (``v = ceil(M)``)."""
        m = max(1, math.ceil(M))
        if m > self.i_max:
            raise ValueError(f"M={M} exceeds the resolved depth i_max={self.i_max}")
        r = math.ldexp(1.0, -2 * m)
        v, _, _ = self.field(0.0, r)
        return 0.0, r, float(v)

    def mollified_residual(self, k: int, testfn=None, nodes: int = 32) -> float:
        """Axis-commutator integral ``int eta omega |grad v|^{p-2} |grad v . grad psi_k|``.

        ``psi_k(|x'|)`` is the C^1 smoothstep from 0 at ``4^{-k}/2`` to 1 at
        ``4^{-k}``, with slope at most ``3 * 4^k``. ``testfn=None`` is the
        unit test function on ``|x1| < 1/2``; ``testfn=0`` gives 0; any other
        callable ``testfn(x1, r)`` is integrated over the full axial chord.
        """
        from .quadrature import leggauss, sphere_area

        if isinstance(testfn, (int, float)) and testfn == 0:
            return 0.0
        a, b = math.ldexp(0.5, -2 * k), math.ldexp(1.0, -2 * k)
        xg, wg = leggauss(nodes)
        r = 0.5 * (a + b) + 0.5 * (b - a) * xg
        wr = 0.5 * (b - a) * wg
        s = (r - a) / (b - a)
        dpsi = 6.0 * s * (1.0 - s) / (b - a)
        f = self.phi(r, 0)
        df = self.phi(r, 1)
        H = self.alpha**2 * f * f + df * df
        radial = self.omega(r) * H ** (0.5 * (self.p - 2.0)) * np.abs(df) * dpsi
        c = self.alpha * (self.p - 1.0)
        if testfn is None:
            axial = np.full_like(r, 2.0 * math.sinh(0.5 * c) / c)
        else:
            half = np.sqrt(1.0 - r * r)
            xa, wa = leggauss(nodes)
            panels = 16
            axial = np.zeros_like(r)
            for m in range(panels):
                lo = -half + 2.0 * half * m / panels
                hi = -half + 2.0 * half * (m + 1) / panels
                xs = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * xa
                vals = np.asarray(testfn(xs, np.broadcast_to(r[:, None], xs.shape))) * np.exp(c * xs)
                axial += 0.5 * (hi - lo) * (vals * wa).sum(-1)
        return float(sphere_area(self.d - 2) * np.sum(wr * radial * axial * r ** (self.d - 2)))

    # j and the report ------------------------------------------------------

    def shell_ok(self, i: int, n_samples: int = 512, seed: int = 0) -> dict:
        p, C_Q = self.p, self.params.C_Q
        gap = eta_lower_bound_gap(i, p, C_Q, self.alpha)
        bound_ok = bool(0.0 < gap < 1.0 and self.etas.eps[i] <= gap * (1.0 + BOUND_RTOL))
        div = self.sample_divergence(i, n_samples, seed)
        div_ok = min(div.values()) >= -DIVERGENCE_RTOL
        return {"bound_ok": bound_ok, "div_ok": div_ok, "div": div, "gap": gap}

    def report(self, i_range=None, n_samples: int = 10_000, seed: int = 0) -> list[ShellReport]:
        if i_range is None:
            lo = self.j if self.j is not None else 1
            i_range = range(lo, self.i_max + 1)
        rows = []
        for i in i_range:
            div = self.sample_divergence(i, n_samples, seed)
            inner, outer = self.flux_jumps(i)
            res = float(self.etas.residuals[i])
            gap_ok = self.etas.eps[i] <= eta_lower_bound_gap(i, self.p, self.params.C_Q, self.alpha) * (1.0 + BOUND_RTOL)
            common = res <= 1e-12 and gap_ok
            rows.append(
                ShellReport(i, Branch.LOG, float(self.etas.eta[i]), res, div[Branch.LOG],
                            outer.left, outer.right, common and outer.ok and div[Branch.LOG] >= -DIVERGENCE_RTOL)
            )
            rows.append(
                ShellReport(i, Branch.QUAD, float(self.etas.eta[i]), res, div[Branch.QUAD],
                            inner.left, inner.right, common and inner.ok and div[Branch.QUAD] >= -DIVERGENCE_RTOL)
            )
        return rows


def determine_j(ce: Counterexample, n_samples: int = 512) -> int:
    """Smallest ``j >= 2`` from which every resolved shell passes the bound and sign checks."""
    if ce.alpha < ce.params.alpha0 * (1.0 - 1e-15):
        raise VerificationError(
            f"alpha={ce.alpha:.6g} is below alpha0={ce.params.alpha0:.6g}; refusing to certify"
        )
    ok = [False] * (ce.i_max + 1)
    for i in range(1, ce.i_max + 1):
        chk = ce.shell_ok(i, n_samples)
        ok[i] = chk["bound_ok"] and chk["div_ok"]
    j = ce.i_max + 1
    for i in range(ce.i_max, 1, -1):
        if not ok[i]:
            break
        j = i
    if j > ce.i_max:
        raise VerificationError(f"no j <= i_max={ce.i_max} certifies the shells")
    return j


def build_counterexample(
    d: int,
    p: float,
    theta: float,
    alpha: float | None = None,
    i_max: int = 64,
    certify: bool = True,
) -> Counterexample:
    """Solve the ``eta`` table and (optionally) determine ``j`` and ``rho = 4^{-j}``."""
    params = counterexample_params(d, p)
    if not 0.0 <= theta <= 1.0:
        raise ConfigError(f"theta must lie in [0, 1], got {theta}")
    if not (1.0 - theta) * p < d - 1:
        raise ConfigError(f"(1-theta)p={(1 - theta) * p:.6g} must be < d-1={d - 1}")
    if i_max < 2:
        raise ConfigError("i_max must be at least 2")
    alpha = params.alpha0 if alpha is None else float(alpha)
    etas = EtaTable.solve(params, alpha, i_max)
    ce = Counterexample(params=dataclasses.replace(params, theta=theta), theta=theta, alpha=alpha, etas=etas)
    if certify:
        ce = dataclasses.replace(ce, j=determine_j(ce))
    return ce
