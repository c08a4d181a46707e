"""Command-line front end: config ingestion, dispatch, CSV/report emission.

The config document is JSON (file path via ``--config``).  Top-level keys:

``model``   (required)  ``{"kind": "cascade", "N": 2, "theta": 0.75}`` |
                        ``{"kind": "atoms", "atoms": [[p, [w, ...]], ...]}`` |
                        ``{"kind": "deterministic", "weights": [w, ...]}``
``alpha``   (optional)  number, or ``"auto"`` to solve ``m(alpha) = 1``
``grid``    (optional)  ``{"mode": "interp-loglinear", "lo", "hi", "points"}`` |
                        ``{"mode": "dyadic", "points", "per_octave"}`` |
                        ``{"mode": "lattice-step", "r", "residues", "n_lo", "n_hi"}``
``mc``      (optional)  ``{"depth", "replicates", "seed", "node_cap"}``
``out``     (optional)  artifact path prefix (``--out`` overrides)
``options`` (optional)  command-specific settings (see each runner)

Unknown keys anywhere are rejected with their full path.  Exit codes: 0 on
success, 1 on usage/config errors, 2 when a verification quantity (residual,
z-score) lands beyond its tolerance.  Artifacts are byte-identical for
identical configs regardless of ``--threads``.

CSV conventions: comma separator, ``.`` decimal point, scientific notation
for ``|x| < 1e-4``, one header row, and a trailing comment block recording
the sha256 of the effective config and the master seed.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import cascade as casc
from .branching import (
    EmpiricalLaplace,
    biggins_check,
    increment_distribution,
    renewal_measure_check,
    replicate_traces,
    sample_W_limit,
)
from .curves import (
    CurveShapeError,
    LaplaceCurve,
    LatticeSpec,
    OffLatticeError,
    PeriodicModulation,
    SurvivalCurve,
    constant_modulation,
    dyadic_grid,
    log_grid,
)
from .fixpoint import (
    GridDepthError,
    build_stable_mixture,
    build_weibull_mixture,
    fixed_point_residual,
    mixture_residual_report,
    regularity_diagnostic,
)
from .weights import (
    BernoulliCascade,
    Deterministic,
    FiniteAtoms,
    ModelError,
    characteristic_exponent,
    check_assumptions,
    detect_lattice,
    moment_m,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2

COMMANDS = (
    "weights-analyze",
    "wbp-simulate",
    "fixpoint-verify",
    "fixpoint-construct",
    "cascade-solve",
    "cascade-extend",
    "regularity",
    "biggins",
    "renewal-check",
)


class ConfigError(ValueError):
    """Config validation failure carrying one message per offending key path."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class McSpec:
    depth: int
    replicates: int
    seed: int
    node_cap: int = 10**7


@dataclass
class RunConfig:
    """Validated run configuration; ``raw`` preserves the input losslessly."""

    raw: dict
    model: object
    alpha: Optional[float]
    alpha_mode: Optional[str]  # None, "fixed", or "auto"
    grid: object  # np.ndarray, LatticeSpec, or None
    mc: Optional[McSpec]
    out: Optional[str]
    options: dict

    def to_document(self) -> dict:
        return copy.deepcopy(self.raw)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check_keys(doc: dict, allowed, path: str, errors) -> None:
    for key in doc:
        if key not in allowed:
            errors.append(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")


def _parse_model(doc, errors):
    if not isinstance(doc, dict):
        errors.append("model: must be an object")
        return None
    kind = doc.get("kind")
    if kind == "cascade":
        _check_keys(doc, {"kind", "N", "theta"}, "model", errors)
        n, theta = doc.get("N"), doc.get("theta")
        ok = True
        if not _is_int(n) or n < 2:
            errors.append("model.N: must be an integer >= 2")
            ok = False
        if not _is_number(theta) or not (0.0 < theta < 1.0):
            errors.append("model.theta: theta must lie in (0,1)")
            ok = False
        return BernoulliCascade(int(n), float(theta)) if ok else None
    if kind == "atoms":
        _check_keys(doc, {"kind", "atoms"}, "model", errors)
        try:
            return FiniteAtoms(doc.get("atoms") or [])
        except (ModelError, TypeError, ValueError) as exc:
            errors.append(f"model.atoms: {exc}")
            return None
    if kind == "deterministic":
        _check_keys(doc, {"kind", "weights"}, "model", errors)
        try:
            return Deterministic(doc.get("weights") or [])
        except (ModelError, TypeError, ValueError) as exc:
            errors.append(f"model.weights: {exc}")
            return None
    errors.append(
        "model.kind: must be one of 'cascade', 'atoms', 'deterministic'"
    )
    return None


def _parse_grid(doc, errors):
    if not isinstance(doc, dict):
        errors.append("grid: must be an object")
        return None
    mode = doc.get("mode")
    if mode == "interp-loglinear":
        _check_keys(doc, {"mode", "lo", "hi", "points"}, "grid", errors)
        lo = doc.get("lo", 1e-6)
        hi = doc.get("hi", 1e6)
        points = doc.get("points", 512)
        if not (_is_number(lo) and _is_number(hi) and 0.0 < lo < hi):
            errors.append("grid.lo: need numbers 0 < lo < hi")
            return None
        if not _is_int(points) or points < 2:
            errors.append("grid.points: must be an integer >= 2")
            return None
        return log_grid(float(lo), float(hi), int(points))
    if mode == "dyadic":
        _check_keys(doc, {"mode", "points", "per_octave"}, "grid", errors)
        points = doc.get("points", 512)
        per_octave = doc.get("per_octave", 12)
        if not _is_int(points) or points < 2 or not _is_int(per_octave) or per_octave < 1:
            errors.append("grid.points: need integers points >= 2, per_octave >= 1")
            return None
        return dyadic_grid(int(points), int(per_octave))
    if mode == "lattice-step":
        _check_keys(doc, {"mode", "r", "residues", "n_lo", "n_hi"}, "grid", errors)
        r = doc.get("r", math.e)
        residues = doc.get("residues", [1.0])
        n_lo = doc.get("n_lo", -40)
        n_hi = doc.get("n_hi", 40)
        if not _is_number(r) or r <= 1.0:
            errors.append("grid.r: must be a number > 1")
            return None
        if not _is_int(n_lo) or not _is_int(n_hi) or n_lo >= n_hi:
            errors.append("grid.n_lo: need integers n_lo < n_hi")
            return None
        try:
            return LatticeSpec(float(r), tuple(float(s) for s in residues), n_lo, n_hi)
        except (TypeError, ValueError) as exc:
            errors.append(f"grid.residues: {exc}")
            return None
    errors.append(
        "grid.mode: must be one of 'interp-loglinear', 'dyadic', 'lattice-step'"
    )
    return None


_MC_REQUIRED = ("depth", "replicates", "seed")


def _parse_mc(doc, errors):
    if not isinstance(doc, dict):
        errors.append("mc: must be an object")
        return None
    _check_keys(doc, {"depth", "replicates", "seed", "node_cap"}, "mc", errors)
    missing = [k for k in _MC_REQUIRED if k not in doc]
    if missing:
        for k in missing:
            errors.append(
                f"mc.{k}: missing required key (mc requires depth, replicates, seed)"
            )
        return None
    ok = True
    if not _is_int(doc["depth"]) or doc["depth"] < 0:
        errors.append("mc.depth: must be an integer >= 0")
        ok = False
    if not _is_int(doc["replicates"]) or doc["replicates"] < 1:
        errors.append("mc.replicates: must be an integer >= 1")
        ok = False
    if not _is_int(doc["seed"]) or doc["seed"] < 0:
        errors.append("mc.seed: must be an integer >= 0")
        ok = False
    node_cap = doc.get("node_cap", 10**7)
    if not _is_int(node_cap) or node_cap < 1:
        errors.append("mc.node_cap: must be an integer >= 1")
        ok = False
    if not ok:
        return None
    return McSpec(doc["depth"], doc["replicates"], doc["seed"], node_cap)


def parse_config(document) -> RunConfig:
    """Validate a config document (dict or JSON text) into a RunConfig.

    Raises :class:`ConfigError` carrying every problem found, each tagged
    with the key path it concerns.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<config>: invalid JSON: {exc}"]) from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ConfigError(["<config>: top level must be an object"])

    errors = []
    _check_keys(doc, {"model", "alpha", "grid", "mc", "out", "options"}, "", errors)

    if "model" not in doc:
        errors.append("model: missing required key")
        model = None
    else:
        model = _parse_model(doc["model"], errors)

    alpha = None
    alpha_mode = None
    if "alpha" in doc:
        spec = doc["alpha"]
        if spec == "auto":
            alpha_mode = "auto"
            if model is not None:
                res = characteristic_exponent(model)
                if res.alpha is None:
                    errors.append(
                        f"alpha: model admits no characteristic exponent ({res.reason})"
                    )
                else:
                    alpha = res.alpha
        elif _is_number(spec) and spec > 0.0:
            alpha_mode = "fixed"
            alpha = float(spec)
        else:
            errors.append("alpha: must be a positive number or \"auto\"")

    grid = _parse_grid(doc["grid"], errors) if "grid" in doc else None
    mc = _parse_mc(doc["mc"], errors) if "mc" in doc else None

    out = doc.get("out")
    if out is not None and not isinstance(out, str):
        errors.append("out: must be a string path prefix")
        out = None

    options = doc.get("options", {})
    if not isinstance(options, dict):
        errors.append("options: must be an object")
        options = {}

    if errors:
        raise ConfigError(errors)
    return RunConfig(copy.deepcopy(doc), model, alpha, alpha_mode, grid, mc, out, options)


# ---------------------------------------------------------------------------
# CSV / report helpers
# ---------------------------------------------------------------------------


def format_number(x) -> str:
    """CSV cell format: ints plain, floats via repr, scientific below 1e-4."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return repr(x)
    if x == 0.0:
        return "0.0"
    if abs(x) < 1e-4:
        return np.format_float_scientific(x, unique=True)
    return repr(x)


def config_digest(config: RunConfig) -> str:
    """sha256 of the effective config in canonical JSON form."""
    canon = json.dumps(config.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class _Emitter:
    """Collects report lines and writes CSV artifacts with metadata."""

    def __init__(self, config: RunConfig, out_prefix: str):
        self.config = config
        self.prefix = out_prefix
        self.digest = config_digest(config)
        self.seed = config.mc.seed if config.mc is not None else None
        self.lines = []
        self.artifacts = []

    def say(self, line: str = "") -> None:
        self.lines.append(line)

    def csv(self, name: str, header, rows) -> str:
        path = Path(f"{self.prefix}-{name}.csv")
        if path.parent != Path("."):
            path.parent.mkdir(parents=True, exist_ok=True)
        out = [",".join(header)]
        for row in rows:
            out.append(",".join(format_number(c) for c in row))
        out.append(f"# config_sha256: {self.digest}")
        out.append(f"# seed: {self.seed if self.seed is not None else 'none'}")
        path.write_text("\n".join(out) + "\n", encoding="utf-8")
        self.artifacts.append(str(path))
        self.say(f"wrote {path}")
        return str(path)

    def finish(self) -> str:
        self.say(f"config sha256: {self.digest}")
        self.say(f"seed: {self.seed if self.seed is not None else 'none'}")
        text = "\n".join(self.lines) + "\n"
        path = Path(f"{self.prefix}-report.txt")
        if path.parent != Path("."):
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        self.artifacts.append(str(path))
        return text


def _describe_model(model) -> str:
    if isinstance(model, BernoulliCascade):
        return f"cascade(N={model.N}, theta={format_number(model.theta)})"
    if isinstance(model, Deterministic):
        return "deterministic(" + ", ".join(format_number(w) for w in model.weights) + ")"
    return f"atoms({len(model.atoms)} atoms)"


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)


def _options(config: RunConfig, allowed: set, command: str) -> dict:
    unknown = sorted(set(config.options) - allowed)
    _require(
        not unknown,
        f"options: unknown keys for {command}: {', '.join(unknown)}",
    )
    return config.options


def _parse_modulation(spec) -> PeriodicModulation:
    if spec is None:
        return constant_modulation(1.0)
    if _is_number(spec):
        return constant_modulation(float(spec))
    if isinstance(spec, dict):
        unknown = sorted(set(spec) - {"period", "residues", "values"})
        _require(not unknown, f"modulation: unknown keys: {', '.join(unknown)}")
        period = spec.get("period", math.e)
        return PeriodicModulation(
            float(period),
            np.asarray(spec.get("residues", [1.0]), dtype=np.float64),
            np.asarray(spec.get("values", [1.0]), dtype=np.float64),
        )
    raise ValueError("modulation: must be a number or an object")


# ---------------------------------------------------------------------------
# curve construction shared by verify / construct / regularity
# ---------------------------------------------------------------------------


@dataclass
class _BuiltCurve:
    curve: object
    phi: Optional[EmpiricalLaplace]
    modulation: Optional[PeriodicModulation]
    alpha: Optional[float]


def _build_curve(config: RunConfig, spec, kind: str, threads: int) -> _BuiltCurve:
    _require(isinstance(spec, dict), "options.curve: must be an object")
    form = spec.get("form")
    if form == "exponential":
        unknown = sorted(set(spec) - {"form", "rate"})
        _require(not unknown, f"options.curve: unknown keys: {', '.join(unknown)}")
        rate = spec.get("rate", 1.0)
        _require(_is_number(rate) and rate > 0.0, "options.curve.rate: must be > 0")
        grid = config.grid
        _require(
            isinstance(grid, np.ndarray),
            "exponential curves need an interpolated grid section",
        )
        values = np.exp(-float(rate) * grid)
        tail = -np.expm1(-float(rate) * grid)
        cls = LaplaceCurve if kind == "sum" else SurvivalCurve
        return _BuiltCurve(cls(grid, values, tail=tail), None, None, None)
    if form == "weibull":
        unknown = sorted(set(spec) - {"form", "alpha", "modulation"})
        _require(not unknown, f"options.curve: unknown keys: {', '.join(unknown)}")
        a = spec.get("alpha")
        _require(_is_number(a) and a > 0.0, "options.curve.alpha: must be > 0")
        h = _parse_modulation(spec.get("modulation"))
        grid = config.grid
        _require(
            isinstance(grid, np.ndarray),
            "closed-form weibull curves need an interpolated grid section",
        )
        args = h.eval_many(grid) * grid ** float(a)
        values = np.exp(-args)
        tail = -np.expm1(-args)
        cls = LaplaceCurve if kind == "sum" else SurvivalCurve
        return _BuiltCurve(cls(grid, values, tail=tail), None, h, float(a))
    if form in ("weibull-mixture", "stable-mixture"):
        unknown = sorted(set(spec) - {"form", "modulation"})
        _require(not unknown, f"options.curve: unknown keys: {', '.join(unknown)}")
        _require(config.alpha is not None, f"{form} curves need the alpha key")
        _require(config.mc is not None, f"{form} curves need the mc section")
        _require(config.grid is not None, f"{form} curves need a grid section")
        h = _parse_modulation(spec.get("modulation"))
        mc = config.mc
        phi = sample_W_limit(
            config.model,
            config.alpha,
            mc.depth,
            mc.replicates,
            mc.seed,
            node_cap=mc.node_cap,
            threads=threads,
        )
        if form == "weibull-mixture":
            curve = build_weibull_mixture(phi, h, config.alpha, config.grid)
        else:
            curve = build_stable_mixture(phi, h, config.alpha, config.grid)
        return _BuiltCurve(curve, phi, h, config.alpha)
    raise ValueError(
        "options.curve.form: must be one of 'exponential', 'weibull', "
        "'weibull-mixture', 'stable-mixture'"
    )


def _curve_csv(em: _Emitter, curve, name: str = "curve") -> None:
    header = ["t", "value", "tail"]
    tails = curve.tail if curve.tail is not None else 1.0 - curve.values
    rows = [
        (t, v, w) for t, v, w in zip(curve.grid, curve.values, tails)
    ]
    em.csv(name, header, rows)


def _pick_points(curve, count: int) -> np.ndarray:
    """Interior grid points for residual spot checks, geometrically spread."""
    grid = curve.grid
    lo = len(grid) // 4
    hi = max(lo + 1, (3 * len(grid)) // 4)
    idx = np.unique(np.linspace(lo, hi - 1, count).round().astype(int))
    return grid[idx]


# ---------------------------------------------------------------------------
# command runners
# ---------------------------------------------------------------------------


def _run_weights_analyze(config: RunConfig, em: _Emitter, threads: int) -> int:
    _options(config, set(), "weights-analyze")
    model = config.model
    em.say(f"model: {_describe_model(model)}")
    res = characteristic_exponent(model)
    if res.alpha is not None:
        em.say(f"characteristic exponent: {format_number(res.alpha)}")
    elif isinstance(model, BernoulliCascade):
        try:
            regime = casc.classify(casc.CascadeParams(model.N, model.theta))
        except ValueError:
            regime = "degenerate"
        em.say(f"no characteristic exponent; {regime} regime")
    else:
        em.say(f"no characteristic exponent; {res.reason}")
    lat = detect_lattice(model)
    if lat.kind == "geometric":
        em.say(f"weight lattice: geometric with ratio {format_number(lat.r)}")
    else:
        em.say(f"weight lattice: {lat.kind}")
    rep = check_assumptions(model)
    em.say(
        "assumptions: "
        f"branching={rep.a1} subunit-weights={rep.a2} "
        f"supercritical-counts={rep.a3} nondegenerate-weights={rep.a4}"
    )
    if rep.degenerate_sup_one:
        em.say("largest weight is 1 almost surely (degenerate family)")
    if rep.sup_ge_one:
        em.say("largest weight >= 1 a.s. and > 1 with positive probability: "
               "no fixed points in this regime")
    alpha_col = res.alpha if res.alpha is not None else 1.0
    betas = np.linspace(0.0, 2.0 * alpha_col if alpha_col > 0 else 2.0, 41)
    rows = [(b, moment_m(model, float(b))) for b in betas]
    em.csv("moments", ["beta", "m"], rows)
    return EXIT_OK


def _run_wbp_simulate(config: RunConfig, em: _Emitter, threads: int) -> int:
    opts = _options(config, {"z_max", "renewal_interval"}, "wbp-simulate")
    _require(config.alpha is not None, "wbp-simulate requires the alpha key")
    _require(config.mc is not None, "wbp-simulate requires the mc section")
    z_max = float(opts.get("z_max", 4.0))
    interval = opts.get("renewal_interval")
    mc = config.mc
    traces = replicate_traces(
        config.model,
        config.alpha,
        mc.depth,
        mc.replicates,
        mc.seed,
        node_cap=mc.node_cap,
        threads=threads,
        renewal_interval=tuple(interval) if interval is not None else None,
    )
    em.say(f"model: {_describe_model(config.model)}")
    em.say(f"alpha: {format_number(config.alpha)}")
    em.say(f"replicates: {mc.replicates}, depth: {mc.depth}")
    rows = []
    for i in range(mc.replicates):
        for n in range(mc.depth + 1):
            rows.append((i, n, traces.W[i, n], traces.R_sup[i, n]))
    em.csv("traces", ["replicate", "n", "W_n_alpha", "R_n"], rows)

    mean_one = abs(moment_m(config.model, config.alpha) - 1.0) <= 1e-9
    worst = 0.0
    for n in range(1, mc.depth + 1):
        col = traces.W[:, n]
        mean = float(np.mean(col))
        se = float(np.std(col, ddof=1) / math.sqrt(len(col))) if len(col) > 1 else 0.0
        z = abs(mean - 1.0) / se if se > 0.0 else (0.0 if mean == 1.0 else math.inf)
        worst = max(worst, z)
        em.say(
            f"generation {n}: mean W = {format_number(mean)} "
            f"(se {format_number(se)}, z {format_number(z)})"
        )
    if mean_one:
        verdict = worst <= z_max
        em.say(
            f"martingale mean check: {'PASS' if verdict else 'FAIL'} "
            f"(max |z| = {format_number(worst)}, limit {format_number(z_max)})"
        )
        return EXIT_OK if verdict else EXIT_VERIFY
    em.say("martingale mean check: skipped (m(alpha) is not 1; no mean-one normalization)")
    return EXIT_OK


def _run_fixpoint_verify(config: RunConfig, em: _Emitter, threads: int) -> int:
    opts = _options(config, {"kind", "curve", "tol", "z_max", "points"}, "fixpoint-verify")
    kind = opts.get("kind", "min")
    _require(kind in ("min", "sum"), "options.kind: must be 'min' or 'sum'")
    _require("curve" in opts, "fixpoint-verify requires options.curve")
    built = _build_curve(config, opts["curve"], kind, threads)
    em.say(f"model: {_describe_model(config.model)}")
    em.say(f"operator: {kind}")
    _curve_csv(em, built.curve)

    if built.phi is not None:
        z_max = float(opts.get("z_max", 3.0))
        points = _pick_points(built.curve, int(opts.get("points", 24)))
        rep = mixture_residual_report(
            built.phi, built.modulation, built.alpha, config.model, points, kind
        )
        rows = list(zip(rep.points, rep.residuals, rep.se, rep.z))
        em.csv("residuals", ["t", "residual", "se", "z"], rows)
        em.say(
            f"{kind}-operator residual (sample z-scores at {len(points)} points): "
            f"max |z| = {format_number(rep.max_abs_z)}"
        )
        verdict = rep.max_abs_z <= z_max
        em.say(
            f"{kind}-operator check: {'PASS' if verdict else 'FAIL'} "
            f"(limit {format_number(z_max)})"
        )
        return EXIT_OK if verdict else EXIT_VERIFY

    tol = float(opts.get("tol", 1e-10))
    rep = fixed_point_residual(built.curve, config.model, kind=kind)
    rows = list(zip(built.curve.grid, rep.residuals, rep.point_clamped))
    em.csv("residuals", ["t", "residual", "clamped"], rows)
    for w in rep.warnings:
        em.say(f"warning: {w}")
    if math.isnan(rep.sup_norm):
        raise ValueError(
            "every grid point needed clamped lookups; nothing was verified "
            "(widen the grid)"
        )
    em.say(
        f"{kind}-operator residual: sup-norm {format_number(rep.sup_norm)} over "
        f"clean points (all points: {format_number(rep.sup_norm_all)}, "
        f"clamp fraction {format_number(rep.clamp_fraction)})"
    )
    verdict = rep.sup_norm <= tol
    em.say(
        f"{kind}-operator check: {'PASS' if verdict else 'FAIL'} "
        f"(tolerance {format_number(tol)})"
    )
    return EXIT_OK if verdict else EXIT_VERIFY


def _run_fixpoint_construct(config: RunConfig, em: _Emitter, threads: int) -> int:
    opts = _options(
        config, {"kind", "modulation", "z_max", "points"}, "fixpoint-construct"
    )
    kind = opts.get("kind", "min")
    _require(kind in ("min", "sum"), "options.kind: must be 'min' or 'sum'")
    form = "weibull-mixture" if kind == "min" else "stable-mixture"
    built = _build_curve(
        config, {"form": form, "modulation": opts.get("modulation")}, kind, threads
    )
    em.say(f"model: {_describe_model(config.model)}")
    em.say(f"constructed: {form} at alpha = {format_number(built.alpha)}")
    for w in built.phi.warnings:
        em.say(f"warning: {w}")
    diag = built.phi.diagnostics
    em.say(
        f"sample diagnostics: mean W = {format_number(diag['mean_depth'])} "
        f"(se {format_number(diag['se_depth'])}) at depth {diag['depth']}, "
        f"mean W = {format_number(diag['mean_half_depth'])} "
        f"(se {format_number(diag['se_half_depth'])}) at depth {diag['half_depth']}"
    )
    _curve_csv(em, built.curve)
    z_max = float(opts.get("z_max", 3.0))
    points = _pick_points(built.curve, int(opts.get("points", 24)))
    rep = mixture_residual_report(
        built.phi, built.modulation, built.alpha, config.model, points, kind
    )
    rows = list(zip(rep.points, rep.residuals, rep.se, rep.z))
    em.csv("residuals", ["t", "residual", "se", "z"], rows)
    em.say(
        f"{kind}-operator residual: max |z| = {format_number(rep.max_abs_z)} "
        f"at {len(points)} points"
    )
    verdict = rep.max_abs_z <= z_max
    em.say(
        f"self-consistency check: {'PASS' if verdict else 'FAIL'} "
        f"(limit {format_number(z_max)})"
    )
    return EXIT_OK if verdict else EXIT_VERIFY


def _cascade_params(config: RunConfig) -> casc.CascadeParams:
    model = config.model
    _require(
        isinstance(model, BernoulliCascade),
        "this command needs model.kind = 'cascade'",
    )
    return casc.CascadeParams(model.N, model.theta)


def _run_cascade_solve(config: RunConfig, em: _Emitter, threads: int) -> int:
    opts = _options(config, {"depth", "scale", "below", "tol"}, "cascade-solve")
    params = _cascade_params(config)
    regime = casc.classify(params)
    _require(
        regime == casc.SUPERCRITICAL,
        f"cascade-solve needs the supercritical regime; got {regime} "
        f"(theta vs 1 - 1/N)",
    )
    depth = int(opts.get("depth", 30))
    scale = float(opts.get("scale", 1.0))
    below = int(opts.get("below", 1))
    tol = float(opts.get("tol", 1e-10))
    sol = casc.explicit_solution(params, scale=scale, depth=depth, below=below)
    em.say(f"model: {_describe_model(config.model)} ({regime})")
    em.say(f"scale: {format_number(scale)}, cells n in [{-below}, {depth}]")
    rows = [(k, sol.a[k], bool(sol.exact_flags[k])) for k in range(depth + 1)]
    em.csv("thresholds", ["n", "a_n", "exact_preimage"], rows)
    cells = []
    for n in sol.cells():
        value = 1.0 if n < 0 else float(sol.a[n])
        cells.append((n, scale * math.e**n, scale * math.e ** (n + 1), value))
    em.csv("solution", ["n", "lower_t", "upper_t", "survival_value"], cells)
    if sol.underflow_index is not None:
        em.say(
            f"float64 underflow from a_{sol.underflow_index} on "
            "(exact chain kept in extended precision)"
        )
    rep = casc.step_identity_residual(sol)
    em.say(
        f"step-identity residual: max = {format_number(rep.max_residual)}"
        + (" (exactly 0)" if rep.exact else "")
    )
    verdict = rep.max_residual <= tol
    em.say(
        f"step-identity check: {'PASS' if verdict else 'FAIL'} "
        f"(tolerance {format_number(tol)})"
    )
    return EXIT_OK if verdict else EXIT_VERIFY


def _run_cascade_extend(config: RunConfig, em: _Emitter, threads: int) -> int:
    opts = _options(
        config,
        {"seed_grid", "seed_values", "seed_value", "n_lo", "n_hi", "tol", "check_tol"},
        "cascade-extend",
    )
    params = _cascade_params(config)
    regime = casc.classify(params)
    if "seed_value" in opts:
        _require(
            "seed_grid" not in opts and "seed_values" not in opts,
            "options.seed_value: give either seed_value or seed_grid/seed_values",
        )
        seed = casc.SeedFunction(
            np.array([math.e]), np.array([float(opts["seed_value"])])
        )
    else:
        _require(
            "seed_grid" in opts and "seed_values" in opts,
            "cascade-extend requires options.seed_value or options.seed_grid "
            "plus options.seed_values",
        )
        seed = casc.SeedFunction(
            np.asarray(opts["seed_grid"], dtype=np.float64),
            np.asarray(opts["seed_values"], dtype=np.float64),
        )
    n_lo = int(opts.get("n_lo", -20))
    n_hi = int(opts.get("n_hi", 20))
    tol = float(opts.get("tol", 1e-13))
    check_tol = float(opts.get("check_tol", 1e-10))
    curve = casc.extend_from_seed(params, seed, n_lo=n_lo, n_hi=n_hi, tol=tol)
    em.say(f"model: {_describe_model(config.model)} ({regime})")
    em.say(
        f"seed points: {len(seed.grid)}, extension cells n in [{n_lo}, {n_hi}]"
    )
    q = len(curve.residues)
    rows = []
    for i, (t, v) in enumerate(zip(curve.grid, curve.values)):
        n = curve.n_lo + i // q
        rows.append((n, curve.residues[i % q], t, v))
    em.csv("extension", ["n", "residue", "t", "value"], rows)
    rep = casc.curve_step_residuals(params, curve)
    em.say(f"step-identity residual: max = {format_number(rep.max_residual)}")
    verdict = rep.max_residual <= check_tol
    em.say(
        f"step-identity check: {'PASS' if verdict else 'FAIL'} "
        f"(tolerance {format_number(check_tol)})"
    )
    return EXIT_OK if verdict else EXIT_VERIFY


def _run_regularity(config: RunConfig, em: _Emitter, threads: int) -> int:
    opts = _options(config, {"curve", "window", "kind"}, "regularity")
    _require("curve" in opts, "regularity requires options.curve")
    kind = opts.get("kind", "min")
    built = _build_curve(config, opts["curve"], kind, threads)
    alpha = config.alpha if config.alpha is not None else built.alpha
    _require(alpha is not None, "regularity requires the alpha key (or a curve form carrying one)")
    window = int(opts.get("window", 12))
    rep = regularity_diagnostic(built.curve, alpha, window=window)
    em.say(f"model: {_describe_model(config.model)}")
    em.say(f"alpha: {format_number(alpha)}, window points: {rep.window_points}")
    em.say(f"classification: {rep.classification}")
    em.say(
        f"normalized tail range: [{format_number(rep.liminf_estimate)}, "
        f"{format_number(rep.limsup_estimate)}]"
    )
    for note in rep.notes:
        em.say(f"note: {note}")
    rows = []
    if rep.per_residue:
        for label, limit in sorted(
            rep.per_residue.items(), key=lambda kv: (kv[0] is None, kv[0])
        ):
            rows.append(("all" if label is None else label, limit))
    em.csv("regularity", ["residue", "stabilized_limit"], rows)
    _curve_csv(em, built.curve)
    return EXIT_OK


def _run_biggins(config: RunConfig, em: _Emitter, threads: int) -> int:
    _options(config, set(), "biggins")
    _require(config.alpha is not None, "biggins requires the alpha key")
    rep = biggins_check(config.model, config.alpha)
    inc = increment_distribution(config.model, config.alpha)
    em.say(f"model: {_describe_model(config.model)}")
    em.say(f"alpha: {format_number(config.alpha)}")
    em.say(f"increment drift: {format_number(rep.drift)}")
    em.say(f"mean-one normalization integral: {format_number(rep.integral)}")
    em.say(f"mean-one limit verdict: {rep.verdict}")
    em.csv(
        "increments",
        ["location", "mass"],
        list(zip(inc.locations, inc.masses)),
    )
    em.csv(
        "generation-one",
        ["W_1_value", "probability"],
        list(zip(rep.w1_values, rep.w1_probs)),
    )
    return EXIT_OK


def _run_renewal_check(config: RunConfig, em: _Emitter, threads: int) -> int:
    opts = _options(config, {"interval", "z_max"}, "renewal-check")
    _require(config.alpha is not None, "renewal-check requires the alpha key")
    _require(config.mc is not None, "renewal-check requires the mc section")
    interval = opts.get("interval")
    _require(
        isinstance(interval, (list, tuple)) and len(interval) == 2,
        "renewal-check requires options.interval = [a, b]",
    )
    z_max = float(opts.get("z_max", 3.0))
    mc = config.mc
    rep = renewal_measure_check(
        config.model,
        config.alpha,
        (float(interval[0]), float(interval[1])),
        mc.depth,
        mc.replicates,
        mc.seed,
        node_cap=mc.node_cap,
        threads=threads,
    )
    em.say(f"model: {_describe_model(config.model)}")
    em.say(
        f"interval: [{format_number(rep.interval[0])}, "
        f"{format_number(rep.interval[1])}], depth {mc.depth}, "
        f"replicates {mc.replicates}"
    )
    em.say(
        f"empirical mass: {format_number(rep.empirical_mean)} "
        f"(se {format_number(rep.empirical_se)})"
    )
    em.say(f"exact convolution mass: {format_number(rep.exact)}")
    em.say(f"z-score: {format_number(rep.z_score)}")
    em.csv(
        "renewal",
        ["interval_lo", "interval_hi", "empirical_mean", "empirical_se",
         "exact_value", "z_score"],
        [(rep.interval[0], rep.interval[1], rep.empirical_mean,
          rep.empirical_se, rep.exact, rep.z_score)],
    )
    verdict = abs(rep.z_score) <= z_max
    em.say(
        f"renewal mass check: {'PASS' if verdict else 'FAIL'} "
        f"(limit {format_number(z_max)})"
    )
    return EXIT_OK if verdict else EXIT_VERIFY


_RUNNERS = {
    "weights-analyze": _run_weights_analyze,
    "wbp-simulate": _run_wbp_simulate,
    "fixpoint-verify": _run_fixpoint_verify,
    "fixpoint-construct": _run_fixpoint_construct,
    "cascade-solve": _run_cascade_solve,
    "cascade-extend": _run_cascade_extend,
    "regularity": _run_regularity,
    "biggins": _run_biggins,
    "renewal-check": _run_renewal_check,
}


def run_command(config: RunConfig, command: str, threads: int = 1,
                out: Optional[str] = None) -> int:
    """Run one command; writes artifacts and returns the exit status."""
    if command not in _RUNNERS:
        raise ValueError(f"unknown command {command!r}")
    prefix = out or config.out or command
    em = _Emitter(config, prefix)
    em.say(f"command: {command}")
    code = _RUNNERS[command](config, em, threads)
    text = em.finish()
    sys.stdout.write(text)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="branchfix",
        description="Weighted-branching fixed-point toolkit command line",
    )
    parser.add_argument("--config", required=True, help="path to a JSON config file")
    parser.add_argument("--command", required=True, choices=COMMANDS)
    parser.add_argument("--out", default=None, help="artifact path prefix")
    parser.add_argument("--seed", type=int, default=None,
                        help="override mc.seed from the config")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (never changes results)")
    args = parser.parse_args(argv)

    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        if not isinstance(doc, dict) or "mc" not in doc or not isinstance(doc["mc"], dict):
            print("error: --seed given but the config has no mc section",
                  file=sys.stderr)
            return EXIT_USAGE
        doc["mc"]["seed"] = args.seed
    try:
        config = parse_config(doc)
    except ConfigError as exc:
        print("config error(s):", file=sys.stderr)
        for line in exc.errors:
            print(f"  {line}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run_command(config, args.command, threads=args.threads, out=args.out)
    except (ValueError, ModelError, CurveShapeError, OffLatticeError,
            GridDepthError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
