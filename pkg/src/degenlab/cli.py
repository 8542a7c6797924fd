"""Command-line front end.

Every command writes a CSV document that starts with ``# degenlab-csv v1``.
Exit status: 0 when every check of the campaign passed, 1 when a check
failed, 2 for an invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .params import (
    ConfigError,
    ExponentConfig,
    RegimeTag,
    classify,
    moser_constants,
    project_to_critical_line,
    s_star,
    theta_from_st,
)

log = logging.getLogger("degenlab")

CSV_HEADER = "# degenlab-csv v1"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("constants", "classify", "counterexample-verify", "norms", "solve", "moser-check", "sweep")


class VerificationFailed(Exception):
    pass


def _extended(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise argparse.ArgumentTypeError("NaN is not a valid exponent")
    return value


def _pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for item in filter(None, (x.strip() for x in text.split(","))):
        try:
            s, t = item.split(":")
            out.append((_extended(s), _extended(t)))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad pair {item!r}; expected s:t") from exc
    return out


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


# knob name -> (type, default, valid-range predicate, help)
KNOBS = {
    "imax": (int, 64, lambda v: 2 <= v <= 400, "deepest shell index of the eta table"),
    "alpha": (float, None, lambda v: v > 0, "drift rate (default alpha0)"),
    "samples": (int, 10_000, lambda v: v >= 2, "divergence samples per shell"),
    "shells": (int, 10, lambda v: v >= 0, "verify shells j..j+shells"),
    "depth": (int, 32, lambda v: 4 <= v <= 400, "quadrature shell depth"),
    "theta": (float, None, lambda v: 0.0 <= v <= 1.0, "override the weight parameter"),
    "h": (float, 1.0 / 32.0, lambda v: 0 < v <= 0.25, "grid spacing"),
    "boundary": (str, "affine", lambda v: v in ("affine", "radial", "poly"), "boundary data"),
    "seed": (int, 0, lambda v: v >= 0, "seed for random boundary data"),
    "family": (str, "counterexample", lambda v: v in ("counterexample", "reference"), "test family"),
    "kmin": (int, 4, lambda v: v >= 1, "smallest truncation depth"),
    "kmax": (int, 12, lambda v: v >= 1, "largest truncation depth"),
    "pairs": (_pairs, None, lambda v: True, "comma list of s:t pairs"),
    "sums": (_floats, None, lambda v: all(x > 0 for x in v), "comma list of 1/s+1/t values with s=t"),
    "field_out": (str, None, lambda v: True, "binary field output path"),
}

COMMAND_KNOBS = {
    "constants": (),
    "classify": (),
    "counterexample-verify": ("imax", "alpha", "samples", "shells", "depth"),
    "norms": ("imax", "depth", "theta"),
    "solve": ("h", "boundary", "seed", "field_out"),
    "moser-check": ("family", "kmin", "kmax", "imax", "h"),
    "sweep": ("family", "kmin", "kmax", "imax", "h", "pairs", "sums"),
}

EXPONENT_DEFAULTS = {"d": None, "p": None, "s": math.inf, "t": math.inf}


@dataclass(frozen=True)
class RunConfig:
    command: str
    exponents: ExponentConfig | None
    knobs: dict = field(default_factory=dict)
    out: str | None = None

    def knob(self, name):
        return self.knobs.get(name, KNOBS[name][1])


# argument parsing ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degenlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--d", type=int, default=None)
        sp.add_argument("--p", type=float, default=None)
        sp.add_argument("--s", type=_extended, default=None)
        sp.add_argument("--t", type=_extended, default=None)
        sp.add_argument("--config", default=None, help="key=value file; command-line flags win")
        sp.add_argument("--out", default=None, help="CSV output path (default stdout)")
        for knob in COMMAND_KNOBS[name]:
            typ, _, _, helptext = KNOBS[knob]
            flag = "--" + knob.replace("_", "-")
            sp.add_argument(flag, dest=knob, type=typ, default=None, help=helptext)
    return parser


def read_config_file(path: str, command: str) -> dict:
    allowed = set(EXPONENT_DEFAULTS) | set(COMMAND_KNOBS[command]) | {"out"}
    types = {"d": int, "p": float, "s": _extended, "t": _extended, "out": str}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (x.strip() for x in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for command {command}")
            typ = types.get(key) or KNOBS[key][0]
            try:
                out[key] = typ(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def resolve(args: argparse.Namespace) -> RunConfig:
    command = args.command
    merged = read_config_file(args.config, command) if args.config else {}
    for key in list(EXPONENT_DEFAULTS) + list(COMMAND_KNOBS[command]) + ["out"]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    knobs = {}
    for key in COMMAND_KNOBS[command]:
        if key in merged and merged[key] is not None:
            if not KNOBS[key][2](merged[key]):
                raise ConfigError(f"{key}={merged[key]!r} is out of range ({KNOBS[key][3]})")
            knobs[key] = merged[key]
    ex = {k: merged.get(k, v) for k, v in EXPONENT_DEFAULTS.items()}
    exponents = None
    if command not in ("solve", "sweep") or ex["d"] is not None:
        if ex["d"] is None or ex["p"] is None:
            raise ConfigError("--d and --p are required")
        exponents = ExponentConfig(ex["d"], ex["p"], ex["s"], ex["t"])
    if command == "solve" and exponents is None:
        raise ConfigError("--d and --p are required")
    if command == "sweep":
        if ex["d"] is None or ex["p"] is None:
            raise ConfigError("--d and --p are required")
    return RunConfig(command, exponents if command != "sweep" else (ex["d"], ex["p"]), knobs, merged.get("out"))


# output helpers ---------------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


class Report:
    def __init__(self) -> None:
        self.buf = io.StringIO()
        self.writer = csv.writer(self.buf, lineterminator="\n")
        self.buf.write(CSV_HEADER + "\n")
        self.failures: list[str] = []

    def row(self, *cells) -> None:
        self.writer.writerow([_fmt(c) for c in cells])

    def section(self, name: str) -> None:
        self.buf.write(f"# {name}\n")

    def check(self, ok: bool, what: str) -> bool:
        if not ok:
            self.failures.append(what)
        return ok

    def text(self) -> str:
        return self.buf.getvalue()


def _rational(x: float) -> str:
    if not math.isfinite(x):
        return "inf"
    return str(Fraction(x).limit_denominator(10**6))


# campaigns -----------------------------------------------------------------------------------


def cmd_constants(cfg: RunConfig, rep: Report) -> None:
    mc = moser_constants(cfg.exponents)
    rep.row("name", "value", "rational")
    for name, value in (
        ("s_star", mc.s_star),
        ("delta", mc.delta),
        ("chi", mc.chi),
        ("sup_exponent", mc.sup_exponent),
    ):
        rep.row(name, value, _rational(value))
    if cfg.exponents.inv_s < 1.0:
        rep.row("corollary_exponent_gamma1", mc.corollary_exponent(1.0), _rational(mc.corollary_exponent(1.0)))


def cmd_classify(cfg: RunConfig, rep: Report) -> None:
    regime = classify(cfg.exponents)
    rep.row("regime", regime.tag.value)
    for reason in regime.reasons:
        rep.row("reason", reason)


def _counterexample(cfg: RunConfig, certify: bool = True):
    from .counterexample import build_counterexample

    theta = cfg.knob("theta") if "theta" in COMMAND_KNOBS[cfg.command] else None
    if theta is None:
        theta = theta_from_st(cfg.exponents)
    return build_counterexample(
        cfg.exponents.d, cfg.exponents.p, theta,
        alpha=cfg.knob("alpha") if "alpha" in COMMAND_KNOBS[cfg.command] else None,
        i_max=cfg.knob("imax"), certify=certify,
    )


def _integral_rows(rep: Report, ce, depth: int, s: float, t: float, energies: bool) -> None:
    from .quadrature import ShellQuadRule, energy_integrals, weight_norms

    rule = ShellQuadRule(depth=depth)
    rep.row("name", "value", "tail", "depth", "converged")
    ns, nt = weight_norms(ce, s, t, rule)
    results = [(f"norm_lambda_L{_fmt(s)}", ns), (f"norm_inv_lambda_L{_fmt(t)}", nt)]
    if energies:
        if depth > ce.i_max + 1:
            raise ConfigError(f"depth={depth} needs imax >= {depth - 1}")
        z, f = energy_integrals(ce, rule)
        results += [("energy_zeroth", z), ("energy_first", f)]
    for name, res in results:
        rep.row(*res.csv_row(name))
        rep.check(res.converged, f"{name} not converged (value={res.value!r}, tail={res.tail_estimate!r})")


def cmd_counterexample_verify(cfg: RunConfig, rep: Report) -> None:
    ce = _counterexample(cfg)
    rep.row("d", "p", "theta", "alpha", "Q", "C_Q", "j", "rho")
    rep.row(ce.d, ce.p, ce.theta, ce.alpha, ce.params.Q, ce.params.C_Q, ce.j, ce.rho)
    rep.section("shells")
    rep.row("i", "branch", "eta", "one_minus_eta", "residual", "min_divergence", "flux_left", "flux_right", "pass")
    last = min(ce.j + cfg.knob("shells"), ce.i_max)
    rows = ce.report(range(ce.j, last + 1), n_samples=cfg.knob("samples"))
    for r in rows:
        rep.row(r.i, r.branch.value, r.eta, ce.etas.eps[r.i], r.residual, r.min_divergence, r.flux_left, r.flux_right, r.ok)
        rep.check(r.ok, f"shell {r.i} {r.branch.value} failed")
    multi = [i for i in range(1, ce.i_max + 1) if ce.etas.sign_changes[i] > 1]
    rep.row("multiple_sign_changes", ";".join(map(str, multi)) or "none")
    rep.section("integrability")
    s, t = cfg.exponents.s, cfg.exponents.t
    _integral_rows(rep, ce, min(cfg.knob("depth"), ce.i_max + 1), s, t, energies=True)
    rep.section("unboundedness")
    rep.row("M", "x1", "r", "v")
    for M in (1, ce.i_max // 2, ce.i_max):
        x1, r, v = ce.unbounded_point(M)
        rep.row(M, x1, r, v)
        rep.check(v >= M, f"unbounded point for M={M} has v={v}")


def cmd_norms(cfg: RunConfig, rep: Report) -> None:
    theta = cfg.knob("theta")
    if theta is None:
        theta = theta_from_st(cfg.exponents)
    from .counterexample import build_counterexample

    ce = build_counterexample(cfg.exponents.d, cfg.exponents.p, theta, i_max=cfg.knob("imax"), certify=False)
    depth = cfg.knob("depth")
    _integral_rows(rep, ce, depth, cfg.exponents.s, cfg.exponents.t, energies=depth <= ce.i_max + 1)


def _boundary_fn(cfg: RunConfig):
    from .discrete import reference_boundary

    kind = cfg.knob("boundary")
    d, p = cfg.exponents.d, cfg.exponents.p
    if kind == "affine":
        return "ball", (lambda x1, r: x1)
    if kind == "radial":
        if p == d:
            raise ConfigError("radial boundary data needs p != d")
        e = (p - d) / (p - 1.0)
        return "annulus", (lambda x1, r: np.hypot(x1, r) ** e)
    return "ball", reference_boundary(cfg.knob("seed"), 0)


def cmd_solve(cfg: RunConfig, rep: Report) -> None:
    from .discrete import AxisymGrid, DirichletProblem, minimize_energy

    region, fn = _boundary_fn(cfg)
    kw = {"region": region, "inner": 0.5, "outer": 1.0} if region == "annulus" else {"region": region}
    grid = AxisymGrid.uniform(cfg.knob("h"), d=cfg.exponents.d, **kw)
    u, report = minimize_energy(DirichletProblem(grid, cfg.exponents.p, fn))
    for row in report.csv_rows():
        rep.row(*row)
    if cfg.knob("field_out"):
        u.save(cfg.knob("field_out"))
    rep.check(report.converged, f"solver did not converge (residual={report.final_residual!r})")
    diffs = np.diff(report.energy_history)
    rep.check(bool(np.all(diffs <= 0)), "energy history increased")


def family_theta(d: int, p: float, s: float, t: float) -> float:
    """Weight parameter of the counterexample family used for the pair ``(s, t)``.

    ``(1/s, 1/t)`` is moved along its ray onto the critical line and the
    shell weight realising the projected pair is used.
    """
    cfg = ExponentConfig(d, p, s, t)
    inv_s, inv_t = project_to_critical_line(cfg)
    theta = inv_t * (d - 1) / p
    if not (1.0 - theta) * p < d - 1:
        raise ConfigError(f"pair (s={s}, t={t}) gives (1-theta)p >= d-1")
    return theta


def _raw_delta(cfg: ExponentConfig) -> float:
    delta = 1.0 / s_star(cfg) - (1.0 + cfg.inv_t) / cfg.p
    return 0.0 if abs(delta) < 1e-14 else delta


PAIR_COLUMNS = ("s", "t", "inv_sum", "regime", "delta", "theta")


def _pair_rows(d, p, pairs, cfg: RunConfig, rep: Report) -> None:
    family = cfg.knob("family")
    if family == "counterexample":
        from .counterexample import build_counterexample
        from .discrete import sharpness_ratio

        kmin, kmax = cfg.knob("kmin"), cfg.knob("kmax")
        if kmin >= kmax:
            raise ConfigError("kmin must be < kmax")
        if kmax > cfg.knob("imax"):
            raise ConfigError("kmax must not exceed imax")
        ks = list(range(kmin, kmax + 1))
        rep.row(*PAIR_COLUMNS, *(f"ratio_k{k}" for k in ks), "growth", "pass")
        cache = {}
        for s, t in pairs:
            ec = ExponentConfig(d, p, s, t)
            theta = family_theta(d, p, s, t)
            key = round(theta, 15)
            if key not in cache:
                cache[key] = build_counterexample(d, p, theta, i_max=cfg.knob("imax"), certify=False)
            ce = cache[key]
            ratios = [sharpness_ratio(ce, ec, k).ratio for k in ks]
            growth = ratios[-1] / ratios[0]
            tag = classify(ec).tag
            if tag is RegimeTag.THEOREM_ADMISSIBLE:
                ok = max(ratios) / min(ratios) < 2.0
                what = "ratio not bounded (variation >= 2x)"
            else:
                ok = bool(np.all(np.diff(ratios) > 0)) and growth >= 5.0
                what = "ratio does not grow by 5x"
            rep.row(s, t, ec.inv_s + ec.inv_t, tag.value, _raw_delta(ec), theta, *ratios, growth, ok)
            rep.check(ok, f"pair s={s}, t={t}: {what}")
    else:
        from .discrete import AxisymGrid, DirichletProblem, minimize_energy, moser_bound_check

        grid = AxisymGrid.uniform(cfg.knob("h"), d=d)
        u, report = minimize_energy(DirichletProblem(grid, p, lambda x1, r: x1))
        rep.check(report.converged, "reference solve did not converge")
        rep.row(*PAIR_COLUMNS, "h", "sup", "bound", "ratio", "pass")
        for s, t in pairs:
            ec = ExponentConfig(d, p, s, t)
            tag = classify(ec).tag
            if tag is not RegimeTag.THEOREM_ADMISSIBLE:
                rep.row(s, t, ec.inv_s + ec.inv_t, tag.value, _raw_delta(ec), "", cfg.knob("h"), "", "", "", "skipped")
                continue
            chk = moser_bound_check(u, 1.0, 1.0, ec)
            rep.row(s, t, ec.inv_s + ec.inv_t, tag.value, _raw_delta(ec), "", cfg.knob("h"), chk.sup_val, chk.bound_val, chk.ratio, chk.ok)
            rep.check(chk.ok, f"pair s={s}, t={t}: ratio {chk.ratio!r} above calibrated bound")


def cmd_moser_check(cfg: RunConfig, rep: Report) -> None:
    e = cfg.exponents
    _pair_rows(e.d, e.p, [(e.s, e.t)], cfg, rep)


def cmd_sweep(cfg: RunConfig, rep: Report) -> None:
    d, p = cfg.exponents
    pairs = list(cfg.knob("pairs") or [])
    for total in cfg.knob("sums") or []:
        pairs.append((2.0 / total, 2.0 / total))
    if not pairs:
        raise ConfigError("sweep needs a nonempty --pairs or --sums grid")
    _pair_rows(d, p, pairs, cfg, rep)


HANDLERS = {
    "constants": cmd_constants,
    "classify": cmd_classify,
    "counterexample-verify": cmd_counterexample_verify,
    "norms": cmd_norms,
    "solve": cmd_solve,
    "moser-check": cmd_moser_check,
    "sweep": cmd_sweep,
}


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    """Execute one campaign; returns the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    rep = Report()
    try:
        HANDLERS[cfg.command](cfg, rep)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=stderr)
        return EXIT_CONFIG
    text = rep.text()
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    for failure in rep.failures:
        print(f"FAIL: {failure}", file=stderr)
    return EXIT_FAIL if rep.failures else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
