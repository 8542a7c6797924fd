"""Exponent bookkeeping for weighted p-Laplace problems.

Everything here is closed-form arithmetic on the tuple (d, p, s, t):
admissibility of the integrability pair, the Moser-iteration exponents,
and the parameters of the dyadic-shell counterexample.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

__all__ = [
    "ConfigError",
    "ExponentConfig",
    "Regime",
    "RegimeTag",
    "MoserConstants",
    "CounterexampleParams",
    "classify",
    "moser_constants",
    "counterexample_params",
    "theta_from_st",
    "project_to_critical_line",
    "sphere_case",
]

# equality on the critical line is decided with this relative tolerance
LINE_RTOL = 1e-12


class ConfigError(ValueError):
    """Invalid exponent configuration or a request outside an operation's regime."""


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def _cmp(a: float, b: float) -> int:
    if math.isclose(a, b, rel_tol=LINE_RTOL, abs_tol=LINE_RTOL):
        return 0
    return -1 if a < b else 1


@dataclass(frozen=True)
class ExponentConfig:
    """Dimension ``d``, growth ``p`` and integrability exponents ``s`` (of mu), ``t`` (of 1/lambda).

    ``s`` and ``t`` may be ``math.inf``; all formulas go through ``inv_s`` and
    ``inv_t`` so that infinity never enters a product.
    """

    d: int
    p: float
    s: float = math.inf
    t: float = math.inf

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 2:
            raise ConfigError(f"d must be an integer >= 2, got d={self.d}")
        if not self.p > 1:
            raise ConfigError(f"p must exceed 1, got p={self.p}")
        if not self.s >= 1:
            raise ConfigError(f"s must be >= 1, got s={self.s}")
        if not self.t > 1.0 / (self.p - 1.0):
            raise ConfigError(
                f"t must exceed 1/(p-1)={1.0 / (self.p - 1.0):.6g}, got t={self.t}"
            )
        object.__setattr__(self, "d", int(self.d))

    @property
    def inv_s(self) -> float:
        return _inv(self.s)

    @property
    def inv_t(self) -> float:
        return _inv(self.t)

    @property
    def critical_sum(self) -> float:
        """Right-hand side ``p/(d-1)`` of the boundedness condition."""
        return self.p / (self.d - 1)

    @property
    def gradient_exponent(self) -> float:
        """The exponent ``t p/(t+1)`` of the Sobolev norm in the sup bound."""
        return self.p / (1.0 + self.inv_t)


class RegimeTag(str, enum.Enum):
    THEOREM_ADMISSIBLE = "THEOREM_ADMISSIBLE"
    CRITICAL = "CRITICAL"
    COUNTEREXAMPLE_STRICT = "COUNTEREXAMPLE_STRICT"
    COUNTEREXAMPLE_CRITICAL = "COUNTEREXAMPLE_CRITICAL"
    OUTSIDE = "OUTSIDE"


@dataclass(frozen=True)
class Regime:
    tag: RegimeTag
    reasons: tuple[str, ...] = field(default_factory=tuple)

    def __str__(self) -> str:
        return self.tag.value


def classify(config: ExponentConfig) -> Regime:
    d, p = config.d, config.p
    lhs = config.inv_s + config.inv_t
    rhs = config.critical_sum
    side = _cmp(lhs, rhs)
    reasons = [f"1/s+1/t={lhs:.12g} {'<' if side < 0 else ('=' if side == 0 else '>')} p/(d-1)={rhs:.12g}"]
    if side < 0:
        reasons.append("boundedness condition holds strictly")
        return Regime(RegimeTag.THEOREM_ADMISSIBLE, tuple(reasons))

    dim_ok = d >= 3
    reasons.append(f"d>=3: {dim_ok}")
    side_cond = p / (1.0 + config.inv_t) < d - 1
    reasons.append(f"(t/(t+1))p={p / (1.0 + config.inv_t):.12g} < d-1={d - 1}: {side_cond}")
    if dim_ok:
        p_split = 1.0 + 1.0 / (d - 2)
        large_p = p > p_split
        reasons.append(f"p > 1+1/(d-2)={p_split:.12g}: {large_p}")
        if side_cond and large_p:
            return Regime(RegimeTag.COUNTEREXAMPLE_CRITICAL, tuple(reasons))
        if side_cond and not large_p and side > 0:
            return Regime(RegimeTag.COUNTEREXAMPLE_STRICT, tuple(reasons))
    if side == 0:
        reasons.append("on the critical line, counterexample hypotheses fail")
        return Regime(RegimeTag.CRITICAL, tuple(reasons))
    return Regime(RegimeTag.OUTSIDE, tuple(reasons))


def sphere_case(config: ExponentConfig) -> bool:
    """True when ``1 + 1/t < p/(d-1)``, where the sup bound follows from a sphere maximum principle."""
    return 1.0 + config.inv_t < config.critical_sum


@dataclass(frozen=True)
class MoserConstants:
    config: ExponentConfig
    s_star: float
    delta: float

    @property
    def chi(self) -> float:
        return 1.0 + self.delta

    @property
    def sup_exponent(self) -> float:
        """Power of Lambda in the sup bound, ``1/(p delta)``."""
        return 1.0 / (self.config.p * self.delta)

    def corollary_exponent(self, gamma: float) -> float:
        """Power of Lambda in the L^inf-L^gamma estimate (requires s > 1)."""
        if gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        if self.config.inv_s >= 1.0:
            raise ConfigError("the L^inf-L^gamma estimate needs s > 1")
        return (1.0 / gamma) / (1.0 - self.config.inv_s) * (1.0 + 1.0 / self.delta)

    def kappa(self, alpha: float) -> float:
        c = self.config
        return c.d / (alpha * c.p) * (
            (c.inv_t + c.inv_s) * (1.0 + 1.0 / self.delta) + 1.0 - c.inv_s
        )


def s_star(config: ExponentConfig) -> float:
    inner = (1.0 - config.inv_s) / config.p + 1.0 / (config.d - 1)
    return max(1.0, 1.0 / inner)


def moser_constants(config: ExponentConfig) -> MoserConstants:
    regime = classify(config)
    ss = s_star(config)
    delta = 1.0 / ss - (1.0 + config.inv_t) / config.p
    if regime.tag is not RegimeTag.THEOREM_ADMISSIBLE or not delta > 0:
        # exact zero on the critical line is reported as such
        if abs(delta) < 1e-14:
            delta = 0.0
        raise ConfigError(
            f"Moser constants need an admissible pair; regime={regime.tag.value}, delta={delta:.6g}"
        )
    return MoserConstants(config=config, s_star=ss, delta=delta)


@dataclass(frozen=True)
class CounterexampleParams:
    d: int
    p: float
    Q: float
    C_Q: float
    alpha0: float
    theta: float | None = None


def counterexample_params(d: int, p: float) -> CounterexampleParams:
    if int(d) != d or d < 3:
        raise ConfigError(f"the shell construction needs d >= 3, got d={d}")
    if not p > 1:
        raise ConfigError(f"p must exceed 1, got p={p}")
    d = int(d)
    if p >= 2:
        Q = float(max(d - 3, 1))
    else:
        Q = (d - 2) / (p - 1) - 1.0
    C_Q = Q * 2.0 ** (Q + 1) / (2.0**Q - 1.0)
    alpha0 = max(
        1.0,
        C_Q,
        2.0 ** ((2.0 - p) / (p - 1.0)) * C_Q,
        2.0**p * math.sqrt(C_Q * (1.0 + (d - 2) / (p - 1.0))),
        8.0 * (d - 1) / (p - 1.0),
    )
    return CounterexampleParams(d=d, p=p, Q=Q, C_Q=C_Q, alpha0=alpha0)


def project_to_critical_line(config: ExponentConfig) -> tuple[float, float]:
    """Scale ``(1/s, 1/t)`` along the ray through the origin onto ``1/s+1/t = p/(d-1)``.

    Returns the projected reciprocals ``(1/s_bar, 1/t_bar)``.
    """
    total = config.inv_s + config.inv_t
    if total <= 0:
        raise ConfigError("s = t = inf has no projection onto the critical line")
    scale = config.critical_sum / total
    return config.inv_s * scale, config.inv_t * scale


def theta_from_st(config: ExponentConfig) -> float:
    """Interpolation parameter of the shell weight realising the pair ``(s, t)``.

    On the critical line this is ``(1/t)(d-1)/p``; strictly above it the pair is
    first projected onto the line, which increases both exponents.
    """
    regime = classify(config)
    if regime.tag not in (RegimeTag.COUNTEREXAMPLE_CRITICAL, RegimeTag.COUNTEREXAMPLE_STRICT):
        raise ConfigError(f"no counterexample weight for regime {regime.tag.value}")
    d, p = config.d, config.p
    if _cmp(config.inv_s + config.inv_t, config.critical_sum) == 0:
        inv_s_bar, inv_t_bar = config.inv_s, config.inv_t
    else:
        inv_s_bar, inv_t_bar = project_to_critical_line(config)
    theta = inv_t_bar * (d - 1) / p
    if not (1.0 - theta) * p < d - 1:
        raise ConfigError(f"(1-theta)p={(1.0 - theta) * p:.6g} >= d-1; weighted energy would be infinite")
    return min(max(theta, 0.0), 1.0)
