"""Command line front end: config parsing, orchestration and result files.

Usage::

    irflow <flow|verify|sweep|selfcheck> --config run.ini [--out DIR] [--threads N] [--seed N]

Config files are INI text. Keys that appear before the first section header belong to
``[model]``. Sections and keys:

``[model]``
    Any field of ``ModelParams`` (alpha, Lambda, P, epsilon, J, Nmax, n_radial, n_theta,
    n_phi, rho_minus, mu, rho_plus, nu_min, nu_max, eig_tol, solve_tol, herm_tol, n_quad,
    mode, delta, gauge_axis, leak_tol, dim_cap). Vectors are comma separated.
``[run]``
    label (str, "run"), out (str, "irflow-out"), seed (int, 0), threads (int, 1),
    strategy (direct|recursive|both, defaults to model.mode), fd_step (float, 1e-3;
    0 disables the finite-difference gradient), contraction (bool, true),
    on_gap_collapse (record|raise), timing (bool, false: wall times in summary.json).
``[verify]``
    Boolean toggles: convergence, energy_shift, i4, pull_through, photon_number, holder,
    gradient_bounds, marginal_decay. Scan settings: i4_samples (int, 200), i4_scales, i4_alphas,
    photon_momenta (|P| list), photon_scales (int, 8), photon_tail (int, 4; 0 fits all
    scales), pull_through_scale (int, 2),
    holder_dP, holder_scales, bounds_momenta, marginal_scales.
``[thresholds]``
    convergence_slope (0.3), r2_min (0.9), ratio_tol (0.5), pull_through_factor (3.0),
    holder_growth (2.0), bounds_stability (0.25), marginal_slope_tol (0.3),
    fd_tol (1e-4).
``[sweep]``
    axis (P|alpha|Nmax|grid), values (comma separated list).

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    ContractionFailure,
    InvalidParams,
    InvariantViolation,
    IRFlowError,
    NoConvergence,
    ParseError,
    SchemaViolation,
    TruncationWarning,
)
from .params import STRATEGIES, ModelParams

log = logging.getLogger("irflow")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("flow", "verify", "sweep", "selfcheck")

_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelParams) if f.name != "extra"}
_VECTOR_KEYS = {"P", "gauge_axis"}

RUN_DEFAULTS = {
    "label": "run",
    "out": "irflow-out",
    "seed": 0,
    "threads": 1,
    "strategy": None,
    "fd_step": 1e-3,
    "contraction": True,
    "on_gap_collapse": "record",
    "timing": False,
}

CHECKS = ("convergence", "energy_shift", "i4", "pull_through", "photon_number", "holder",
          "gradient_bounds", "marginal_decay")

VERIFY_DEFAULTS = {
    **{name: name in ("convergence", "i4", "pull_through", "photon_number", "gradient_bounds")
       for name in CHECKS},
    "i4_samples": 200,
    "i4_scales": (1, 2),
    "i4_alphas": (0.01, 0.005, 0.001),
    "photon_momenta": (0.0, 0.15, 0.3),
    "photon_scales": 8,
    "photon_tail": 4,
    "pull_through_scale": 2,
    "holder_dP": (0.0025, 0.005, 0.01, 0.02),
    "holder_scales": (1, 2, 3),
    "bounds_momenta": (0.1, 0.2, 0.3),
    "marginal_scales": None,
}

THRESHOLD_DEFAULTS = {
    "convergence_slope": 0.3,
    "r2_min": 0.9,
    "ratio_tol": 0.5,
    "pull_through_factor": 3.0,
    "holder_growth": 2.0,
    "bounds_stability": 0.25,
    "marginal_slope_tol": 0.3,
    "fd_tol": 1e-4,
}

SWEEP_DEFAULTS = {"axis": None, "values": ()}
SWEEP_AXES = ("P", "alpha", "Nmax", "grid")

SECTIONS = {"run": RUN_DEFAULTS, "verify": VERIFY_DEFAULTS, "thresholds": THRESHOLD_DEFAULTS,
            "sweep": SWEEP_DEFAULTS}

FLOW_COLUMNS = ["j", "sigma", "E", "gradE_x", "gradE_y", "gradE_z", "gradE_fd_x", "gradE_fd_y",
                "gradE_fd_z", "gap", "gap_over_sigma", "Nf", "dPsi", "dPhi", "dGradE", "gamma_orth",
                "contraction", "trunc_leak", "strategy", "config_hash"]


@dataclass
class RunConfig:
    model: ModelParams
    out: str = "irflow-out"
    label: str = "run"
    seed: int = 0
    threads: int = 1
    strategy: str = None
    fd_step: float = 1e-3
    contraction: bool = True
    on_gap_collapse: str = "record"
    timing: bool = False
    verify: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    text: bytes = b""
    path: str = ""

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.text).hexdigest()


@dataclass
class ResultBundle:
    flow: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    passed: bool = True


# parsing ------------------------------------------------------------------------

def _line_of(lines, section, key):
    current = "model"
    for no, raw in enumerate(lines, 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and "=" in s and s.split("=", 1)[0].strip() == key:
            return no
    return 0


def _convert(kind, raw: str):
    """Convert ``raw`` to the type of the default value ``kind``."""
    raw = raw.strip()
    if isinstance(kind, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    if isinstance(kind, int):
        return int(raw)
    if isinstance(kind, float):
        return float(raw)
    if isinstance(kind, tuple):
        return tuple(float(x) for x in raw.split(",") if x.strip())
    return raw


def _model_value(name, raw):
    if name in _VECTOR_KEYS:
        vals = tuple(float(x) for x in raw.split(","))
        if len(vals) != 3:
            raise ValueError("expected three components")
        return vals
    default = _MODEL_FIELDS[name].default
    return _convert(default, raw)


def parse_config(path) -> RunConfig:
    """Strict parse of an INI config file; unknown sections or keys are rejected."""
    path = Path(path)
    data = path.read_bytes()
    text = data.decode("utf-8")
    lines = text.splitlines()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    body, offset = text, 0
    first = next((s.strip() for s in lines if s.strip() and not s.strip().startswith(("#", ";"))), "")
    if not first.startswith("["):
        body, offset = "[model]\n" + text, 1
        lines = ["[model]"] + lines
    try:
        cp.read_string(body, source=str(path))
    except configparser.Error as exc:
        lineno = max(0, (getattr(exc, "lineno", 0) or 0) - offset)
        raise ParseError(lineno, getattr(exc, "option", "") or "", str(exc).splitlines()[0]) from exc

    for sec in cp.sections():
        if sec != "model" and sec not in SECTIONS:
            raise SchemaViolation(f"[{sec}]", "unknown section")

    model_kw = {}
    if cp.has_section("model"):
        for key, raw in cp.items("model"):
            if key not in _MODEL_FIELDS:
                raise SchemaViolation(key)
            try:
                model_kw[key] = _model_value(key, raw)
            except ValueError as exc:
                raise ParseError(_line_of(lines, "model", key) - offset, key, f"({exc})") from exc

    values = {}
    for sec, defaults in SECTIONS.items():
        vals = dict(defaults)
        if cp.has_section(sec):
            for key, raw in cp.items(sec):
                if key not in defaults:
                    raise SchemaViolation(f"{sec}.{key}")
                kind = defaults[key]
                if kind is None:
                    kind = {"strategy": "", "axis": ""}.get(key, ())
                try:
                    vals[key] = _convert(kind, raw)
                except ValueError as exc:
                    raise ParseError(_line_of(lines, sec, key) - offset, key, f"({exc})") from exc
        values[sec] = vals

    try:
        model = ModelParams(**model_kw)
    except InvalidParams as exc:
        raise InvariantViolation(str(exc)) from exc

    run = values["run"]
    if run["strategy"] not in (None, *STRATEGIES):
        raise InvariantViolation(f"run.strategy must be one of {STRATEGIES}")
    if run["on_gap_collapse"] not in ("record", "raise"):
        raise InvariantViolation("run.on_gap_collapse must be record or raise")
    if run["threads"] < 1:
        raise InvariantViolation("run.threads must be >= 1")
    sweep = values["sweep"]
    if sweep["axis"] is not None and sweep["axis"] not in SWEEP_AXES:
        raise InvariantViolation(f"sweep.axis must be one of {SWEEP_AXES}")
    return RunConfig(model=model, verify=values["verify"], thresholds=values["thresholds"],
                     sweep=sweep, text=data, path=str(path), **run)


# output helpers -----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path: Path, payload: dict):
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def flow_rows(records, config_hash: str) -> list:
    rows = []
    for r in records:
        rows.append([r.j, r.sigma, r.E, *r.gradE_FH, *r.gradE_FD, r.gap, r.gap_over_sigma, r.Nf_expect,
                     r.dPsi, r.dPhi, r.dGradE, r.gamma_orth_residual, r.contraction, r.truncation_leak,
                     r.strategy, config_hash])
    return rows


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="")


def _check_provenance(out: Path, config_hash: str):
    summary = out / "summary.json"
    if summary.exists():
        try:
            old = json.loads(summary.read_text(encoding="utf-8")).get("config_hash")
        except (ValueError, OSError):
            old = None
        if old is not None and old != config_hash:
            raise ConfigError(f"{out} holds results of config {old[:12]}, refusing to mix provenance")


# commands -----------------------------------------------------------------------

def _flow(cfg: RunConfig, params: ModelParams = None, lean: bool = False):
    """Flow for ``cfg``; ``lean`` runs the direct strategy only, without gradients
    checks or contraction estimates (auxiliary flows of the scans)."""
    from .flow import run_flow

    params = cfg.model if params is None else params
    if lean:
        return run_flow(params, strategy="direct", fd_step=None, threads=cfg.threads, seed=cfg.seed,
                        on_gap_collapse=cfg.on_gap_collapse, measure_contraction=False,
                        keep_vectors=False)
    return run_flow(params, strategy=cfg.strategy, fd_step=cfg.fd_step or None, threads=cfg.threads,
                    seed=cfg.seed, on_gap_collapse=cfg.on_gap_collapse,
                    measure_contraction=cfg.contraction, keep_vectors=False)


def _flow_checks(cfg: RunConfig, records) -> dict:
    """Pass/fail of the per-scale invariants of one flow table."""
    p = cfg.model
    gaps = [r.gap_over_sigma for r in records if r.j > 0]
    out = {"gap_ladder": all(g >= p.rho_minus for g in gaps)}
    if cfg.fd_step:
        fd = [float(np.max(np.abs(np.subtract(r.gradE_FH, r.gradE_FD)))) for r in records]
        out["fd_gradient"] = bool(p.alpha > 0.01 or max(fd) <= cfg.thresholds["fd_tol"])
    if p.alpha == 0:
        E0 = 0.5 * float(np.dot(p.P_vec, p.P_vec))
        out["free_energy"] = all(abs(r.E - E0) <= 1e-12 for r in records)
    return out


def cmd_flow(cfg: RunConfig, out: Path, bundle: ResultBundle):
    t0 = time.perf_counter()
    records = _flow(cfg)
    bundle.provenance.setdefault("wall_times", {})["flow"] = time.perf_counter() - t0
    bundle.flow = records
    write_csv(out / "flow.csv", FLOW_COLUMNS, flow_rows(records, cfg.config_hash))
    checks = _flow_checks(cfg, records)
    bundle.reports["flow"] = checks
    bundle.passed &= all(checks.values())


def _momenta(values):
    return [(float(v), 0.0, 0.0) for v in values]


def _verify_reports(cfg: RunConfig, records):
    from . import verify as V
    from .flow import energy_shift_check

    p, v, th = cfg.model, cfg.verify, cfg.thresholds
    rng = np.random.default_rng(cfg.seed)
    if v["convergence"]:
        yield "convergence", convergence_report(p, records, th["convergence_slope"])
    if v["energy_shift"]:
        es = energy_shift_check(records, p.alpha, p.epsilon)
        target = math.log(p.epsilon)
        rel = abs(es.log_slope - target) / abs(target) if math.isfinite(es.log_slope) else math.nan
        yield "energy_shift", V.VerificationReport(
            check="energy_shift", grid={"J": p.J}, passed=es.passed,
            constants={"c": es.c, "C1": es.C1, "log_slope": es.log_slope, "ln_epsilon": target,
                       "slope_relative_error": rel},
            table=[{"j": j, "E_next": a, "bound": b, "pass": ok} for j, a, b, ok in es.rows])
    if v["i4"]:
        scales = sorted({min(int(s), p.J) for s in v["i4_scales"]})
        n_P = 4
        n_k = max(1, math.ceil(v["i4_samples"] / (n_P * len(scales))))
        # momenta spread over the region up to its edge, random photon momenta
        dirs = rng.normal(size=(n_P, 3))
        Ps = dirs / np.linalg.norm(dirs, axis=1)[:, None] * rng.uniform(0.0, 0.33, n_P)[:, None]
        ks = rng.normal(size=(n_k, 3))
        ks *= (rng.uniform(0.02, 0.6, n_k) / np.linalg.norm(ks, axis=1))[:, None]
        yield "i4", V.verify_I4(p, ks, Ps, scales=scales, alphas=list(v["i4_alphas"]) or None)
    if v["pull_through"]:
        j = min(max(1, v["pull_through_scale"]), p.J)
        rep = V.verify_pull_through(p, j)
        finer = p.replace(n_theta=p.n_theta + 1)
        ref = V.pull_through_refinement(p, j, finer, th["pull_through_factor"])
        rep.constants["refinement"] = ref.constants
        rep.passed = rep.passed and ref.passed
        yield "pull_through", rep
    if v["photon_number"]:
        J = v["photon_scales"]
        runs = {}
        for P in _momenta(v["photon_momenta"]):
            runs[P] = records if P == tuple(p.P) and J == p.J else _flow(cfg, p.replace(P=P, J=J), lean=True)
        yield "photon_number", V.photon_number_scan(runs, th["r2_min"], th["ratio_tol"],
                                                     n_tail=v["photon_tail"] or None)
    if v["holder"]:
        yield "holder", V.holder_scan(p, list(v["holder_dP"]), [int(s) for s in v["holder_scales"]],
                                      growth=th["holder_growth"])
    if v["gradient_bounds"]:
        runs = {P: (records if P == tuple(p.P) else _flow(cfg, p.replace(P=P), lean=True))
                for P in _momenta(v["bounds_momenta"])}
        yield "gradient_bounds", V.gradient_bounds_scan(runs, p, th["bounds_stability"])
    if v["marginal_decay"]:
        scales = [int(s) for s in v["marginal_scales"]] if v["marginal_scales"] else None
        yield "marginal_decay", V.marginal_decay_check(p, scales, th["marginal_slope_tol"])


def convergence_report(params: ModelParams, records, slope_factor: float = 0.3):
    """||Phi_{j+1} - Phi_j|| log-slope per scale against -slope_factor ln(1/epsilon),
    together with the gap ladder gap_j / sigma_j >= rho_minus."""
    from .verify import VerificationReport

    steps = [r for r in records if r.j > 0]
    table = [{"j": r.j, "dPhi": r.dPhi, "gap_over_sigma": r.gap_over_sigma,
              "gap_ok": bool(r.gap_over_sigma >= params.rho_minus)} for r in steps]
    threshold = -slope_factor * math.log(1.0 / params.epsilon)
    pos = [r for r in steps if r.dPhi > 0]
    slope = math.nan
    if len(pos) >= 2:
        slope = float(np.polyfit([r.j for r in pos], np.log([r.dPhi for r in pos]), 1)[0])
    if params.alpha == 0:
        ladder_ok = all(r.dPhi == 0 for r in steps)
    else:
        ladder_ok = math.isfinite(slope) and slope <= threshold
    gaps_ok = all(row["gap_ok"] for row in table)
    return VerificationReport(
        check="convergence", grid={"J": params.J, "epsilon": params.epsilon},
        passed=bool(ladder_ok and gaps_ok),
        constants={"log_slope": slope, "threshold": threshold, "rho_minus": params.rho_minus,
                   "min_gap_over_sigma": min((r["gap_over_sigma"] for r in table), default=math.inf)},
        margin=(threshold - slope) if math.isfinite(slope) else math.nan, table=table,
    )


def cmd_verify(cfg: RunConfig, out: Path, bundle: ResultBundle):
    t0 = time.perf_counter()
    records = _flow(cfg)
    bundle.flow = records
    times = bundle.provenance.setdefault("wall_times", {})
    times["flow"] = time.perf_counter() - t0
    for name, rep in _verify_reports(cfg, records):
        t1 = time.perf_counter()
        payload = {**rep.to_dict(), "config_hash": cfg.config_hash}
        write_json(out / f"report_{name}.json", payload)
        bundle.reports[name] = bool(rep.passed)
        bundle.passed &= bool(rep.passed)
        times[name] = time.perf_counter() - t1
        log.info("%s: %s", name, "pass" if rep.passed else "FAIL")


def _sweep_params(p: ModelParams, axis: str, value: float) -> ModelParams:
    if axis == "P":
        direction = p.P_vec / np.linalg.norm(p.P_vec) if np.linalg.norm(p.P_vec) > 0 else np.array([1.0, 0, 0])
        return p.replace(P=tuple(value * direction))
    if axis == "alpha":
        return p.replace(alpha=value)
    if axis == "Nmax":
        return p.replace(Nmax=int(value))
    return p.replace(n_theta=int(value), n_phi=int(value))


def cmd_sweep(cfg: RunConfig, out: Path, bundle: ResultBundle):
    axis, values = cfg.sweep["axis"], cfg.sweep["values"]
    if axis is None or not values:
        raise InvariantViolation("sweep needs [sweep] axis and values")
    rows = []
    points = {}
    for value in values:
        try:
            params = _sweep_params(cfg.model, axis, value)
        except InvalidParams as exc:
            raise InvariantViolation(f"sweep point {axis}={value}: {exc}") from exc
        records = _flow(cfg, params)
        checks = _flow_checks(dataclasses.replace(cfg, model=params), records)
        points[_fmt(value)] = checks
        bundle.passed &= all(checks.values())
        for row in flow_rows(records, cfg.config_hash):
            rows.append([value, *row])
    write_csv(out / "sweep.csv", [axis, *FLOW_COLUMNS], rows)
    bundle.reports["sweep"] = points


def cmd_selfcheck(cfg: RunConfig, out: Path, bundle: ResultBundle):
    from .selfcheck import run_selfcheck

    results = run_selfcheck(cfg.model, seed=cfg.seed)
    write_json(out / "report_selfcheck.json", {"check": "selfcheck", "config_hash": cfg.config_hash,
                                               "pass": all(r["pass"] for r in results), "table": results})
    bundle.reports["selfcheck"] = {r["name"]: r["pass"] for r in results}
    bundle.passed &= all(r["pass"] for r in results)


HANDLERS = {"flow": cmd_flow, "verify": cmd_verify, "sweep": cmd_sweep, "selfcheck": cmd_selfcheck}


def execute(command: str, cfg: RunConfig) -> int:
    """Run ``command`` and write its result files into ``cfg.out``; returns the exit code."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _check_provenance(out, cfg.config_hash)
    bundle = ResultBundle()
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("default", TruncationWarning)
        HANDLERS[command](cfg, out, bundle)
    bundle.provenance.setdefault("wall_times", {})["total"] = time.perf_counter() - t0
    (out / "config.ini").write_bytes(cfg.text)
    summary = {
        "command": command,
        "label": cfg.label,
        "config_hash": cfg.config_hash,
        "version": __version__,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "params": cfg.model.to_dict(),
        "checks": bundle.reports,
        "pass": bool(bundle.passed),
    }
    if cfg.timing:
        summary["wall_times"] = bundle.provenance["wall_times"]
    write_json(out / "summary.json", summary)
    return EXIT_OK if bundle.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="irflow", description="Infrared scale flow for a truncated fiber model.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI config file")
    ap.add_argument("--out", default=None, help="output directory (overrides run.out)")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        if args.out is not None:
            cfg.out = args.out
        if args.threads is not None:
            if args.threads < 1:
                raise InvariantViolation("--threads must be >= 1")
            cfg.threads = args.threads
        if args.seed is not None:
            cfg.seed = args.seed
        code = execute(args.command, cfg)
    except (ConfigError, OSError) as exc:
        print(f"irflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NoConvergence, ContractionFailure, IRFlowError, np.linalg.LinAlgError) as exc:
        print(f"irflow: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"irflow {args.command}: {'pass' if code == EXIT_OK else 'FAIL'} -> {cfg.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
