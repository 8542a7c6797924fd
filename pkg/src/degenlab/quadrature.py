"""Shell-adaptive quadrature over the unit ball in axisymmetric coordinates.

Integrals are taken over ``B_R`` in ``R^d`` written as ``(x1, r = |x'|)``:

    int_{B_R} f = sigma_{d-2} int_0^R [ int_{-h(r)}^{h(r)} f(x1, r) dx1 ] r^{d-2} dr,

with ``h(r) = sqrt(R^2 - r^2)``. The radial integral is split at the dyadic
radii ``R 4^{-i}`` and ``R 4^{-i}/2`` so that integrands that are smooth on
each branch of the shell construction are integrated by Gauss-Legendre.
Shells below ``R 4^{-depth}`` are not resolved; their contribution is
extrapolated from the last resolved shells and reported as ``tail_estimate``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import mpmath
import numpy as np

from .params import ConfigError

__all__ = [
    "ShellQuadRule",
    "IntegralResult",
    "sphere_area",
    "ball_volume",
    "integrate_ball_radial",
    "integrate_radial",
    "weight_norms",
    "energy_integrals",
    "sobolev_norm",
    "lambda_functional",
    "truncated_weight_norms",
    "truncated_sobolev_norm",
    "power_series_tail",
]

DEFAULT_RTOL = 1e-6
AXIAL_PANELS = 4
# exponents within this distance of 0 are treated as exactly critical
CRITICAL_ATOL = 1e-12


@functools.lru_cache(maxsize=None)
def _leggauss_cached(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def leggauss(n: int):
    """Cached Gauss-Legendre nodes and weights on [-1, 1]."""
    return _leggauss_cached(int(n))


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere ``S^n`` in ``R^{n+1}``."""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / math.gamma((n + 1) / 2.0)


def ball_volume(d: int, R: float = 1.0) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * R**d


@dataclass(frozen=True)
class ShellQuadRule:
    depth: int = 32
    panels_per_shell: int = 2
    nodes_per_panel: int = 16
    rtol: float = DEFAULT_RTOL

    def __post_init__(self) -> None:
        if self.depth < 4:
            raise ConfigError(f"depth must be >= 4, got {self.depth}")
        if self.panels_per_shell < 2:
            raise ConfigError(f"panels_per_shell must be >= 2, got {self.panels_per_shell}")
        if self.nodes_per_panel < 4:
            raise ConfigError(f"nodes_per_panel must be >= 4, got {self.nodes_per_panel}")

    def with_depth(self, depth: int) -> "ShellQuadRule":
        return ShellQuadRule(depth, self.panels_per_shell, self.nodes_per_panel, self.rtol)


@dataclass(frozen=True)
class IntegralResult:
    """Quadrature value with refinement evidence.

    ``value`` includes the estimated contribution of unresolved shells;
    ``tail_estimate`` bounds the error of that estimate. Divergent
    integrals carry ``tail_estimate = inf`` and ``converged = False``.
    """

    value: float
    tail_estimate: float
    refinement_history: tuple[tuple[int, float], ...]
    converged: bool
    shells: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False, compare=False)

    def csv_row(self, name: str) -> list[str]:
        depth = self.refinement_history[-1][0] if self.refinement_history else 0
        return [name, repr(float(self.value)), repr(float(self.tail_estimate)), str(depth), str(self.converged).lower()]


def _is_converged(history, tail, rtol) -> bool:
    value = history[-1][1]
    if not (math.isfinite(value) and math.isfinite(tail)):
        return False
    scale = max(abs(value), 1e-300)
    if len(history) > 1 and abs(value - history[-2][1]) / scale >= rtol:
        return False
    return tail < rtol * scale or tail == 0.0


def _gauss(n):
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _shell_nodes(rule: ShellQuadRule, R: float):
    """Radial nodes and weights, shape ``(depth, n)``; shell ``i`` covers ``[R 4^{-i-1}, R 4^{-i})``.

    The panel ending at ``R`` uses ``r = R - u^2`` to absorb the
    ``sqrt(R - r)`` behaviour of chord lengths.
    """
    xg, wg = _gauss(rule.nodes_per_panel)
    n_log = rule.panels_per_shell // 2
    n_quad = rule.panels_per_shell - n_log
    # panel edges in units of 4^{-i}: QUAD [1/4, 1/2), LOG [1/2, 1)
    edges = np.concatenate([np.linspace(0.25, 0.5, n_quad + 1)[:-1], np.linspace(0.5, 1.0, n_log + 1)])
    lo, hi = edges[:-1], edges[1:]
    scale = R * np.ldexp(1.0, -2 * np.arange(rule.depth))[:, None, None]
    a = scale * lo[None, :, None]
    b = scale * hi[None, :, None]
    r = a + (b - a) * xg
    w = (b - a) * wg * np.ones_like(r)
    # outermost panel: substitution for the endpoint singularity
    a0, b0 = a[0, -1, 0], b[0, -1, 0]
    umax = math.sqrt(b0 - a0)
    u = umax * xg
    r[0, -1] = b0 - u * u
    w[0, -1] = 2.0 * u * umax * wg
    return r.reshape(rule.depth, -1), w.reshape(rule.depth, -1)


def _axial_closed(c: float, h):
    """``int_{-h}^{h} exp(c x1) dx1``."""
    if c == 0.0:
        return 2.0 * h
    return 2.0 * np.sinh(c * h) / c


def _axial_gauss(f, r, h, n):
    xg, wg = _gauss(n)
    total = np.zeros_like(r)
    for m in range(AXIAL_PANELS):
        lo = -h + 2.0 * h * m / AXIAL_PANELS
        hi = -h + 2.0 * h * (m + 1) / AXIAL_PANELS
        xs = lo[..., None] + (hi - lo)[..., None] * xg
        vals = np.asarray(f(xs, np.broadcast_to(r[..., None], xs.shape)), dtype=float)
        total = total + (hi - lo) * (vals * wg).sum(-1)
    return total


def _geometric_tail(contrib: np.ndarray, upto: int) -> float:
    """Extrapolated sum of shells ``>= upto`` from the last resolved ratios; ``inf`` if not decaying."""
    c = contrib[:upto]
    if upto < 3:
        return math.inf
    last = c[-3:]
    if np.all(last == 0.0):
        return 0.0
    if np.any(last == 0.0) or np.any(np.sign(last) != np.sign(last[-1])):
        return math.inf
    q = float(np.max(last[1:] / last[:-1]))
    if not q < 1.0:
        return math.inf
    return float(c[-1] * q / (1.0 - q))


def _history_depths(depth: int) -> list[int]:
    out = [depth]
    while out[-1] // 2 >= 4:
        out.append(out[-1] // 2)
    return sorted(out)


def _finish(contrib: np.ndarray, rule: ShellQuadRule, tail_fn) -> IntegralResult:
    history = []
    tail = math.nan
    for dp in _history_depths(rule.depth):
        t, err = tail_fn(dp)
        history.append((dp, float(np.sum(contrib[:dp])) + t))
        tail = err
    value = history[-1][1]
    return IntegralResult(
        value=value,
        tail_estimate=tail,
        refinement_history=tuple(history),
        converged=_is_converged(history, tail, rule.rtol),
        shells=contrib,
    )


def _shell_contributions(f, d, rule, axial_rate, R):
    r, w = _shell_nodes(rule, R)
    h = np.sqrt(np.maximum(R * R - r * r, 0.0))
    if axial_rate is None:
        vals = _axial_gauss(f, r, h, rule.nodes_per_panel)
    else:
        vals = np.asarray(f(r), dtype=float) * _axial_closed(float(axial_rate), h)
    integrand = vals * r ** (d - 2)
    bad = ~np.isfinite(integrand)
    if np.any(bad):
        i, n = np.argwhere(bad)[0]
        raise FloatingPointError(f"non-finite integrand in shell i={i} at r={r[i, n]!r}")
    return sphere_area(d - 2) * np.sum(integrand * w, axis=1)


def integrate_ball_radial(
    f: Callable,
    d: int,
    rule: ShellQuadRule | None = None,
    *,
    axial_rate: float | None = None,
    R: float = 1.0,
    core: str = "extrapolate",
) -> IntegralResult:
    """Integrate over ``B_R`` in ``R^d`` with dyadic radial panels.

    With ``axial_rate=c`` the integrand is ``f(r) * exp(c x1)`` and the
    axial integral is done in closed form; otherwise ``f(x1, r)`` is
    integrated by composite Gauss-Legendre along each chord.

    ``core="extrapolate"`` estimates shells below ``R 4^{-depth}`` from the
    decay of the last resolved shells (for integrands singular at the axis);
    ``core="gauss"`` integrates the core disc as one more panel (for
    integrands smooth at the axis).
    """
    rule = rule or ShellQuadRule()
    if d < 2:
        raise ConfigError("d must be >= 2")
    contrib = _shell_contributions(f, d, rule, axial_rate, R)
    if core == "gauss":
        deep = rule.with_depth(rule.depth + 1)
        r, w = _shell_nodes(deep, R)
        rc = r[-1] * 4.0 / 3.0 - R * 4.0 ** (-rule.depth) / 3.0  # map [1/4,1) -> [0,1) of the core
        wc = w[-1] * 4.0 / 3.0
        h = np.sqrt(R * R - rc * rc)
        if axial_rate is None:
            vals = _axial_gauss(f, rc, h, rule.nodes_per_panel)
        else:
            vals = np.asarray(f(rc), dtype=float) * _axial_closed(float(axial_rate), h)
        core_val = sphere_area(d - 2) * float(np.sum(vals * rc ** (d - 2) * wc))

        def tail_fn(dp):
            if dp == rule.depth:
                return core_val, 0.0
            return float(np.sum(contrib[dp:])) + core_val, 0.0

        return _finish(contrib, rule, tail_fn)
    if core != "extrapolate":
        raise ValueError("core must be 'extrapolate' or 'gauss'")

    def tail_fn(dp):
        t = _geometric_tail(contrib, dp)
        return (t if math.isfinite(t) else 0.0), abs(t)

    res = _finish(contrib, rule, tail_fn)
    if not math.isfinite(res.tail_estimate):
        return IntegralResult(res.value, math.inf, res.refinement_history, False, contrib)
    return res


def integrate_radial(g: Callable, rule: ShellQuadRule | None = None, *, core: str = "gauss") -> IntegralResult:
    """``int_0^1 g(r) dr`` on the dyadic panels (no geometric factor)."""
    return _integrate_plain(g, rule or ShellQuadRule(), core)


def _integrate_plain(g, rule, core):
    r, w = _shell_nodes(rule, 1.0)
    contrib = np.sum(np.asarray(g(r), dtype=float) * w, axis=1)
    if core == "gauss":
        xg, wg = _gauss(rule.nodes_per_panel)
        top = 4.0 ** (-rule.depth)
        core_val = float(np.sum(np.asarray(g(top * xg), dtype=float) * top * wg))

        def tail_fn(dp):
            return float(np.sum(contrib[dp:])) + core_val, 0.0

    else:

        def tail_fn(dp):
            t = _geometric_tail(contrib, dp)
            return (t if math.isfinite(t) else 0.0), abs(t)

    return _finish(contrib, rule, tail_fn)


# weight norms of the shell construction ------------------------------------------------


def power_series_tail(a: float, b: float, start: int) -> float:
    """``sum_{i >= start} (i+1)^a 4^{b i}``; ``inf`` when the series diverges."""
    if abs(b) <= CRITICAL_ATOL:
        if not a < -1.0:
            return math.inf
        return float(mpmath.zeta(-a, start + 1))
    if b > 0:
        return math.inf
    z = mpmath.power(4, b)
    return float(mpmath.power(z, start) * mpmath.lerchphi(z, -a, start + 1))


def _branch_measures(d: int, depth: int, rule: ShellQuadRule):
    """``int_{B_1} 1`` restricted to each branch of shells ``0..depth-1``: arrays ``(LOG, QUAD)``."""
    r, w = _shell_nodes(rule.with_depth(depth), 1.0)
    h = np.sqrt(np.maximum(1.0 - r * r, 0.0))
    vals = sphere_area(d - 2) * 2.0 * h * r ** (d - 2) * w
    n = rule.nodes_per_panel
    n_quad = (rule.panels_per_shell - rule.panels_per_shell // 2) * n
    return vals[:, n_quad:].sum(1), vals[:, :n_quad].sum(1)


def _branch_log_weights(d, p, theta, exponent, inverse, i):
    """``log(omega^e)`` per branch (``omega^{-e}`` when ``inverse``) and the tail series exponents."""
    sgn = -1.0 if inverse else 1.0
    e = sgn * exponent
    lg = np.log(i + 1.0)
    log_lw = e * ((p - 1.0) * theta * lg - p * theta * i * math.log(4.0))
    log_qw = e * (1.0 - theta) * (-(p - 1.0) * lg + p * i * math.log(4.0))
    series = {
        "LOG": (e * (p - 1.0) * theta, -e * p * theta - (d - 1)),
        "QUAD": (-e * (p - 1.0) * (1.0 - theta), e * p * (1.0 - theta) - (d - 1)),
    }
    return log_lw, log_qw, series


def _sup_branch_growth(p, theta, inverse):
    sgn = -1.0 if inverse else 1.0
    return {
        "LOG": (sgn * (p - 1.0) * theta, -sgn * p * theta),
        "QUAD": (-sgn * (p - 1.0) * (1.0 - theta), sgn * p * (1.0 - theta)),
    }


def _weight_norm(d, p, theta, exponent, inverse, rule, truncate_at=None) -> IntegralResult:
    if math.isinf(exponent):
        return _weight_sup(d, p, theta, inverse, rule, truncate_at)
    mlog, mquad = _branch_measures(d, rule.depth, rule)
    i = np.arange(rule.depth, dtype=float)
    log_lw, log_qw, series = _branch_log_weights(d, p, theta, exponent, inverse, i)
    with np.errstate(divide="ignore"):
        shells = np.exp(log_lw + np.log(mlog)) + np.exp(log_qw + np.log(mquad))

    if truncate_at is not None:
        # weight 1 inside |x'| < 4^{-k}: everything below the cut is exact
        k = truncate_at
        contrib = np.where(np.arange(rule.depth) < k, shells, 0.0)
        core = _core_measure(d, k, rule)

        def tail_fn(dp):
            return float(np.sum(contrib[dp:])) + core, 0.0

    else:
        contrib = shells
        sigma = sphere_area(d - 2)
        kappa = {"LOG": 1.0 - 2.0 ** -(d - 1), "QUAD": 2.0 ** -(d - 1) - 4.0 ** -(d - 1)}

        def tail_fn(dp):
            # deep shells: branch measure 2 sigma kappa 4^{-i(d-1)}/(d-1) up to a factor 1 - O(16^{-dp})
            total = sum(
                sigma * 2.0 * kappa[name] / (d - 1) * power_series_tail(a, b, dp) for name, (a, b) in series.items()
            )
            if not math.isfinite(total):
                return 0.0, math.inf
            return total, total * 16.0 ** (-dp)

    raw = _finish(contrib, rule, tail_fn)
    if not math.isfinite(raw.tail_estimate):
        partial = tuple((dp, float(np.sum(contrib[:dp])) ** (1.0 / exponent)) for dp, _ in raw.refinement_history)
        return IntegralResult(partial[-1][1], math.inf, partial, False, contrib)
    hist = tuple((dp, v ** (1.0 / exponent)) for dp, v in raw.refinement_history)
    value = hist[-1][1]
    tail = raw.tail_estimate / (exponent * raw.value) * value
    return IntegralResult(value, tail, hist, _is_converged(hist, tail, rule.rtol), contrib)


def _core_measure(d: int, k: int, rule: ShellQuadRule) -> float:
    """Measure of ``B_1 cap {|x'| < 4^{-k}}``."""
    rho = 4.0 ** (-k)
    # sigma int_0^rho 2 sqrt(1-r^2) r^{d-2} dr by Gauss on the small disc
    xg, wg = _gauss(rule.nodes_per_panel)
    r = rho * xg
    return sphere_area(d - 2) * float(np.sum(2.0 * np.sqrt(1.0 - r * r) * r ** (d - 2) * rho * wg))


def _weight_sup(d, p, theta, inverse, rule, truncate_at) -> IntegralResult:
    growth = _sup_branch_growth(p, theta, inverse)
    depth = rule.depth if truncate_at is None else min(rule.depth, truncate_at)
    i = np.arange(depth, dtype=float)
    lg = np.log(i + 1.0)
    vals = [np.exp(a * lg + b * i * math.log(4.0)) for a, b in growth.values()]
    sup = float(max(v.max() for v in vals))
    if truncate_at is not None:
        sup = max(sup, 1.0)
        hist = ((depth, sup),)
        return IntegralResult(sup, 0.0, hist, True)
    unbounded = any(b > CRITICAL_ATOL or (abs(b) <= CRITICAL_ATOL and a > 0) for a, b in growth.values())
    hist = ((depth, sup),)
    if unbounded:
        return IntegralResult(sup, math.inf, hist, False)
    return IntegralResult(sup, 0.0, hist, True)


def weight_norms(ce, s: float, t: float, rule: ShellQuadRule | None = None) -> tuple[IntegralResult, IntegralResult]:
    """``||lambda_theta||_{L^s(B_1)}`` and ``||lambda_theta^{-1}||_{L^t(B_1)}`` by exact shell sums.

    The weight is constant on every branch, so resolved shells contribute
    weight times branch measure and the unresolved tail is a polylogarithm
    sum in closed form. ``ce`` needs ``d``, ``p`` and ``theta``.
    """
    rule = rule or ShellQuadRule()
    return (
        _weight_norm(ce.d, ce.p, ce.theta, s, False, rule),
        _weight_norm(ce.d, ce.p, ce.theta, t, True, rule),
    )


def truncated_weight_norms(ce, s: float, t: float, k: int, rule: ShellQuadRule | None = None):
    """Weight norms of ``lambda_{theta,k}``: ``omega_theta`` for ``|x'| > 4^{-k}``, 1 inside."""
    rule = rule or ShellQuadRule()
    if rule.depth < k:
        rule = rule.with_depth(k)
    return (
        _weight_norm(ce.d, ce.p, ce.theta, s, False, rule, truncate_at=k),
        _weight_norm(ce.d, ce.p, ce.theta, t, True, rule, truncate_at=k),
    )


def energy_integrals(ce, rule: ShellQuadRule | None = None) -> tuple[IntegralResult, IntegralResult]:
    """``int lambda_theta |v|^p`` and ``int lambda_theta |grad v|^p`` over ``B_1``."""
    rule = rule or ShellQuadRule()
    if rule.depth > ce.i_max + 1:
        raise ConfigError(f"depth {rule.depth} exceeds the eta table (i_max={ce.i_max})")
    d, p, a = ce.d, ce.p, ce.alpha
    if not (1.0 - ce.theta) * p < d - 1:
        raise ConfigError("(1-theta)p >= d-1: the weighted energy diverges")

    def zeroth(r):
        return ce.omega(r) * ce.phi(r, 0) ** p

    def first(r):
        f = ce.phi(r, 0)
        g = ce.phi(r, 1)
        return ce.omega(r) * (a * a * f * f + g * g) ** (0.5 * p)

    return (
        integrate_ball_radial(zeroth, d, rule, axial_rate=p * a),
        integrate_ball_radial(first, d, rule, axial_rate=p * a),
    )


def truncated_sobolev_norm(ce, gamma: float, k: int, rule: ShellQuadRule | None = None) -> float:
    """Underlined ``W^{1,gamma}(B_1)`` norm of the truncation ``v_k = exp(alpha x1) min(phi, k)``."""
    rule = rule or ShellQuadRule()
    if rule.depth < k + 4:
        rule = rule.with_depth(k + 4)
    a = ce.alpha

    def val(r):
        return ce.phi(r, 0, k) ** gamma

    def grad(r):
        f = ce.phi(r, 0, k)
        g = ce.phi(r, 1, k)
        return (a * a * f * f + g * g) ** (0.5 * gamma)

    lv = integrate_ball_radial(val, ce.d, rule, axial_rate=gamma * a).value
    lg = integrate_ball_radial(grad, ce.d, rule, axial_rate=gamma * a).value
    return lv ** (1.0 / gamma) + lg ** (1.0 / gamma)


def sobolev_norm(
    value: Callable,
    gradient: Callable,
    gamma: float,
    d: int,
    R: float = 1.0,
    rule: ShellQuadRule | None = None,
) -> float:
    """``R^{-d/gamma} ||u||_{L^gamma(B_R)} + R^{1-d/gamma} ||grad u||_{L^gamma(B_R)}``.

    ``value(x1, r)`` and ``gradient(x1, r) -> (g_x1, g_r)`` are evaluated on the
    axisymmetric quadrature nodes.
    """
    if not gamma >= 1:
        raise ConfigError(f"gamma must be >= 1, got {gamma}")
    rule = rule or ShellQuadRule(depth=16)

    def fv(x1, r):
        return np.abs(value(x1, r)) ** gamma

    def fg(x1, r):
        gx, gr = gradient(x1, r)
        return (np.asarray(gx) ** 2 + np.asarray(gr) ** 2) ** (0.5 * gamma)

    lv = integrate_ball_radial(fv, d, rule, R=R, core="gauss").value
    lg = integrate_ball_radial(fg, d, rule, R=R, core="gauss").value
    return R ** (-d / gamma) * lv ** (1.0 / gamma) + R ** (1.0 - d / gamma) * lg ** (1.0 / gamma)


def lambda_functional(
    lam: Callable,
    mu: Callable,
    s: float,
    t: float,
    d: int,
    R: float = 1.0,
    rule: ShellQuadRule | None = None,
) -> float:
    """``(avg mu^s)^{1/s} (avg lambda^{-t})^{1/t}`` over ``B_R``; infinite exponents give ess sup.

    ``lam`` and ``mu`` are callables of ``(x1, r)``.
    """
    rule = rule or ShellQuadRule(depth=16)
    vol = ball_volume(d, R)
    r, _ = _shell_nodes(rule, R)
    h = np.sqrt(np.maximum(R * R - r * r, 0.0))
    xg, _ = _gauss(rule.nodes_per_panel)
    xs = (2.0 * xg - 1.0) * h[..., None]
    rs = np.broadcast_to(r[..., None], xs.shape)
    lam_s = np.asarray(lam(xs, rs), dtype=float)
    if np.any(lam_s <= 0):
        raise ConfigError("lambda must be positive")

    def avg_power(fn, e):
        if math.isinf(e):
            return float(np.max(np.asarray(fn(xs, rs), dtype=float)))
        res = integrate_ball_radial(lambda x1, rr: np.asarray(fn(x1, rr), dtype=float) ** e, d, rule, R=R, core="gauss")
        return (res.value / vol) ** (1.0 / e)

    return avg_power(mu, s) * avg_power(lambda x1, rr: 1.0 / np.asarray(lam(x1, rr), dtype=float), t)
