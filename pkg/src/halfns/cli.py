"""Command-line scenario runner.

    halfns <scenario> --config <path> [--out <dir>] [--workers k] [--strict-deterministic]

Exit codes: 0 all assertions pass, 2 assertion failure, 3 reported divergence,
4 configuration error.  See README.md for the config grammar.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

log = logging.getLogger("halfns")

SCENARIOS = ("exponents", "helmholtz-check", "besov-norm", "stokes-linear", "navier-picard",
             "uniqueness")

EXIT_OK, EXIT_ASSERT, EXIT_DIVERGED, EXIT_CONFIG = 0, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ---------------------------------------------------------------------------
# config grammar


def _rational(s: str) -> Fraction:
    return Fraction(s.strip())


def _floatish(s: str) -> float:
    s = s.strip()
    if s.lower() in ("pi", "π"):
        return math.pi
    try:
        return float(Fraction(s))
    except ValueError:
        return float(s)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(_floatish(x) for x in s.split(",") if x.strip())


def _optional_rational(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else _rational(s)


SCHEMA: dict[str, dict[str, tuple]] = {
    "": {"scenario": (str, None)},
    "exponents": {"n": (int, 2), "p": (_rational, Fraction(2)), "q": (_rational, Fraction(3)),
                  "eps1": (_optional_rational, None), "eps2": (_optional_rational, None),
                  "strategy": (str, "midpoint")},
    "grid": {"M": (int, 32), "L": (_floatish, math.pi), "x_max": (_floatish, 12.0),
             "wall": (str, "zoned"), "wall_nodes": (int, 64), "wall_ratio": (_floatish, 1.05),
             "h0": (_floatish, 0.008), "ratio": (_floatish, 1.1), "h_core": (_floatish, 0.08),
             "z_core": (_floatish, 4.0), "far_ratio": (_floatish, 1.15),
             "time_nodes": (int, 24), "T": (_floatish, 1.0), "time_exponent": (_floatish, 2.0)},
    "data": {"family": (str, "gaussian-roll"), "amplitude": (_floatish, 1.0),
             "center": (_floats, (0.0,)), "width": (_floatish, 0.9), "offset": (_floatish, 1.2),
             "depth": (_floatish, 0.7), "wave": (int, 1), "calibrate": (str, "none"),
             "margin": (_floatish, 0.7), "target_ratio": (_floatish, 0.25),
             "scale": (_floatish, 1.0)},
    "forcing": {"kind": (str, "none"), "rate": (_floatish, 1.0)},
    "norm": {"s": (_rational, Fraction(0)), "p": (_rational, Fraction(2)),
             "q": (_rational, Fraction(2)), "flavor": (str, "halfspace_zero"), "n_t": (int, 64),
             "k": (int, 0), "tail_tol": (_floatish, 0.01)},
    "picard": {"maxiter": (int, 30), "stop_tol": (_floatish, 1e-15), "weak_check": (_bool, True)},
    "uniqueness": {"seed": (int, 0), "epsilon": (_floatish, 1e-3)},
    "helmholtz": {"count": (int, 10), "seed": (int, 0)},
    "tolerances": {"no_slip": (_floatish, 1e-4), "solenoidal": (_floatish, 1e-4),
                   "momentum": (_floatish, 1e-3), "div": (_floatish, 1e-4),
                   "trace": (_floatish, 1e-4), "annihilation": (_floatish, 1e-4),
                   "idempotence": (_floatish, 1e-8), "two_path": (_floatish, 1e-3),
                   "weak": (_floatish, 1e-2), "uniqueness": (_floatish, 1e-2),
                   "manufactured": (_floatish, 1e-3)},
    "output": {"dir": (str, "out"), "dump_fields": (_bool, True)},
    "run": {"workers": (int, 1), "log_level": (str, "info")},
}


@dataclass
class RunConfig:
    scenario: str
    sections: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]


def defaults() -> dict:
    return {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items() if sec}


def parse_config(text: str, scenario: str | None = None) -> RunConfig:
    """Parse the flat ``[section]`` / ``key = value`` format; ``#`` starts a comment."""
    sections = defaults()
    explicit: dict[str, set] = {}
    current = ""
    cfg_scenario = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            current = line[1:-1].strip()
            if current not in SCHEMA or current == "":
                raise ConfigError(f"unknown section [{current}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        spec = SCHEMA[current].get(key)
        if spec is None:
            where = f"[{current}]" if current else "top level"
            raise ConfigError(f"unknown key {key!r} in {where}", lineno)
        if key in explicit.setdefault(current, set()):
            raise ConfigError(f"duplicate key {key!r}", lineno)
        explicit[current].add(key)
        try:
            parsed = spec[0](value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        if current == "":
            cfg_scenario = parsed
        else:
            sections[current][key] = parsed
    name = scenario or cfg_scenario
    if name is None:
        raise ConfigError("no scenario given")
    if scenario and cfg_scenario and scenario != cfg_scenario:
        raise ConfigError(f"scenario {scenario!r} conflicts with config scenario {cfg_scenario!r}")
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return RunConfig(name, sections)


# ---------------------------------------------------------------------------
# builders


def build_exponents(cfg: RunConfig):
    from .exponents import ExponentError, choose_epsilons, derive_exponents, validate_tuple
    e = cfg["exponents"]
    try:
        t = validate_tuple(e["n"], e["p"], e["q"])
        if e["eps1"] is not None or e["eps2"] is not None:
            if e["eps1"] is None or e["eps2"] is None:
                raise ConfigError("give both eps1 and eps2 or neither")
            e1, e2 = choose_epsilons(t, "explicit", (e["eps1"], e["eps2"]))
        else:
            e1, e2 = choose_epsilons(t, e["strategy"])
        return derive_exponents(t, e1, e2)
    except ExponentError as exc:
        raise ConfigError(f"exponents: {exc}") from None


def build_grid(cfg: RunConfig, n: int | None = None):
    from .grid import make_grid
    gs = cfg["grid"]
    n = n or cfg["exponents"]["n"]
    kw = dict(n=n, L=gs["L"], M=gs["M"], x_max=gs["x_max"], time_nodes=gs["time_nodes"],
              T=gs["T"], time_exponent=gs["time_exponent"])
    try:
        if gs["wall"] == "zoned":
            kw["zones"] = {k: gs[k] for k in ("h0", "ratio", "h_core", "z_core", "far_ratio")}
        elif gs["wall"] == "graded":
            kw.update(wall_nodes=gs["wall_nodes"], wall_ratio=gs["wall_ratio"])
        else:
            raise ConfigError(f"grid.wall must be 'zoned' or 'graded', got {gs['wall']!r}")
        return make_grid(**kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"grid: {exc}") from None


def build_data_spec(cfg: RunConfig):
    from .data import FAMILIES, DataSpec
    d = cfg["data"]
    if d["family"] not in FAMILIES:
        raise ConfigError(f"unknown data family {d['family']!r}; choose from {', '.join(FAMILIES)}")
    return DataSpec(family=d["family"], amplitude=d["amplitude"], center=d["center"],
                    width=d["width"], offset=d["offset"], depth=d["depth"], wave=d["wave"])


def build_data(cfg: RunConfig, grid, exps=None):
    from dataclasses import replace
    from .data import make_initial_data
    from .picard import calibrate_amplitude, smallness_amplitude
    spec = build_data_spec(cfg)
    mode = cfg["data"]["calibrate"]
    if mode == "smallness":
        spec = smallness_amplitude(spec, grid, exps, cfg["data"]["margin"])
    elif mode == "ratio":
        spec = calibrate_amplitude(spec, grid, exps, cfg["data"]["target_ratio"])
    elif mode != "none":
        raise ConfigError(f"data.calibrate must be none, smallness or ratio, got {mode!r}")
    spec = replace(spec, amplitude=spec.amplitude * cfg["data"]["scale"])
    return spec, make_initial_data(spec, grid)


# ---------------------------------------------------------------------------
# results


@dataclass
class Outcome:
    assertions: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    diverged: bool = False

    def check(self, name: str, value: float, threshold: float, op: str = "<") -> bool:
        value = float(value)
        ok = {"<": value < threshold, "<=": value <= threshold, ">": value > threshold,
              ">=": value >= threshold, "==": value == threshold}[op]
        self.assertions.append({"name": name, "value": value, "op": op,
                                "threshold": float(threshold), "passed": bool(ok)})
        return ok

    def flag(self, name: str, ok: bool) -> bool:
        return self.check(name, 1.0 if ok else 0.0, 1.0, "==")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0].keys())
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])


def _pmap(fn, items, workers: int) -> list:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# scenarios


def scenario_exponents(cfg: RunConfig, workers: int) -> Outcome:
    from .exponents import classify_region
    d = build_exponents(cfg)
    out = Outcome()
    out.tables["exponents"] = [{"name": k, "value": str(v), "float": float(v)} for k, v in d.as_rows()]
    rows = []
    for name, (lhs, rhs) in d.identities().items():
        rows.append({"identity": name, "lhs": str(lhs), "rhs": str(rhs), "holds": lhs == rhs})
        out.flag(f"identity {name}", lhs == rhs)
    for name, ok in d.orderings().items():
        rows.append({"identity": name, "lhs": "", "rhs": "", "holds": ok})
        out.flag(f"ordering {name}", ok)
    out.tables["identities"] = rows
    out.info["region"] = classify_region(d.base)
    return out


def scenario_helmholtz(cfg: RunConfig, workers: int) -> Outcome:
    from .data import helmholtz_corpus
    from .helmholtz import corpus_metrics
    g = build_grid(cfg)
    hs = cfg["helmholtz"]
    corpus = helmholtz_corpus(g, hs["count"], hs["seed"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        metrics = _pmap(corpus_metrics, corpus, workers)
    out = Outcome()
    out.tables["helmholtz"] = [{"field": i, **m} for i, m in enumerate(metrics)]
    tol = cfg["tolerances"]
    for key in ("div", "trace", "annihilation", "idempotence", "two_path"):
        out.check(f"max {key}", max(m[key] for m in metrics), tol[key])
    return out


def scenario_besov(cfg: RunConfig, workers: int) -> Outcome:
    from .besov import NormSpec, besov_norm, lp_dyadic_oracle
    from .grid import extend
    g = build_grid(cfg)
    _, h = build_data(cfg, g)
    ns = cfg["norm"]
    spec = NormSpec(float(ns["s"]), float(ns["p"]), float(ns["q"]), k=ns["k"] or None,
                    flavor=ns["flavor"], n_t=ns["n_t"], tail_tol=ns["tail_tol"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = besov_norm(h, spec)
    vals, box = extend(h, "zero")
    oracle = lp_dyadic_oracle(vals, box, spec.s, spec.p, spec.q)
    out = Outcome()
    out.tables["besov"] = [{"s": str(ns["s"]), "p": str(ns["p"]), "q": str(ns["q"]),
                            "flavor": rep.flavor, "k": rep.k, "value": rep.value,
                            "tail_low": rep.tail_low, "tail_high": rep.tail_high,
                            "extension": rep.detail or "zero", "lp_oracle": oracle,
                            "ratio": rep.value / oracle if oracle else float("nan")}]
    out.check("tail_low", rep.tail_low, spec.tail_tol)
    out.check("tail_high", rep.tail_high, spec.tail_tol)
    out.check("value finite", rep.value if math.isfinite(rep.value) else math.inf, math.inf)
    return out


def scenario_stokes(cfg: RunConfig, workers: int) -> Outcome:
    from .data import manufactured_flow
    from .green import momentum_residual, no_slip_residual, solenoidal_residual, stokes_solve
    from .grid import lp_norm
    g = build_grid(cfg)
    tol = cfg["tolerances"]
    out = Outcome()
    rows = []
    kind = cfg["forcing"]["kind"]
    if kind == "none":
        _, h = build_data(cfg, g)
        u, parts = stokes_solve(h, None)
        r = {"case": "caloric", "no_slip": no_slip_residual(u), "solenoidal": solenoidal_residual(u),
             "momentum": momentum_residual(u, parts)}
        _, ua = u.with_initial()
        r["initial_error"] = float(lp_norm(g, ua[1] - h.values, 2) / (lp_norm(g, h.values, 2) or 1.0))
    elif kind == "manufactured":
        w, f = manufactured_flow(g, build_data_spec(cfg), cfg["forcing"]["rate"])
        u, parts = stokes_solve(None, f, kind="vector")
        num = np.sqrt(g.time_integrate(np.array([lp_norm(g, x, 2) ** 2 for x in (u.values - w.values)])))
        den = np.sqrt(g.time_integrate(np.array([lp_norm(g, x, 2) ** 2 for x in w.values])))
        r = {"case": "manufactured", "no_slip": no_slip_residual(u),
             "solenoidal": solenoidal_residual(u), "momentum": momentum_residual(u, parts, f),
             "solution_error": float(num / den)}
        out.check("manufactured solution error", r["solution_error"], tol["manufactured"])
    else:
        raise ConfigError(f"forcing.kind must be none or manufactured, got {kind!r}")
    rows.append(r)
    out.tables["stokes"] = rows
    out.check("no-slip", r["no_slip"], tol["no_slip"])
    out.check("solenoidal", r["solenoidal"], tol["solenoidal"])
    out.check("momentum", r["momentum"], tol["momentum"])
    out.fields["velocity"] = u
    return out


def _picard_run(cfg: RunConfig):
    from .picard import run_iteration
    exps = build_exponents(cfg)
    g = build_grid(cfg)
    spec, h = build_data(cfg, g, exps)
    pc = cfg["picard"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        u, tr = run_iteration(h, exps, g, pc["maxiter"], pc["stop_tol"])
    return exps, g, spec, h, u, tr


def scenario_picard(cfg: RunConfig, workers: int) -> Outcome:
    from .picard import smallness_monitor, weak_limit_check
    exps, g, spec, h, u, tr = _picard_run(cfg)
    tol = cfg["tolerances"]
    out = Outcome(diverged=tr.diverged)
    out.info.update(amplitude=spec.amplitude, message=tr.message, iterations=tr.iterations)
    out.tables["trace"] = tr.rows()
    if tr.iterations >= 2:
        mon = smallness_monitor(tr)
        out.tables["monitor"] = ([{"quantity": k, "value": v} for k, v in mon.constants.items()]
                                 + [{"quantity": k, "value": v} for k, v in mon.contraction.items()]
                                 + [{"quantity": f"verdict {k}", "value": v} for k, v in mon.verdicts.items()])
        for k, v in mon.verdicts.items():
            out.flag(k, v)
    out.check("max no-slip residual", max(tr.no_slip), tol["no_slip"])
    out.check("max solenoidal residual", max(tr.solenoidal), tol["solenoidal"])
    out.flag("converged", tr.converged)
    if tr.converged and cfg["picard"]["weak_check"] and tr.u_leb[0] > 0:
        res = weak_limit_check(u, h)["residual"]
        out.check("weak-form residual", res, tol["weak"])
    out.fields["velocity"] = u
    out.fields["initial"] = h
    return out


def scenario_uniqueness(cfg: RunConfig, workers: int) -> Outcome:
    from .picard import uniqueness_experiment
    exps, g, spec, h, u, tr = _picard_run(cfg)
    out = Outcome(diverged=tr.diverged)
    if not tr.converged:
        out.flag("base run converged", False)
        return out
    uq = cfg["uniqueness"]
    pc = cfg["picard"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = uniqueness_experiment(h, exps, uq["seed"], uq["epsilon"], pc["maxiter"], pc["stop_tol"],
                                    base=(u, tr))
    out.tables["windows"] = [{"window": i, "t_start": 0.0 if lo < 0 else float(g.t[lo]),
                              "t_end": float(g.t[hi]), "distance": d,
                              "relative": d / rep.perturbation_scale if rep.perturbation_scale else 0.0}
                             for i, ((lo, hi), d) in enumerate(zip(rep.windows, rep.distances))]
    out.info.update(perturbation_scale=rep.perturbation_scale, final_distance=rep.final_distance)
    out.flag("perturbed run converged", rep.perturbed_trace.converged)
    out.check("max windowed distance / perturbation", rep.max_window_relative,
              cfg["tolerances"]["uniqueness"])
    return out


RUNNERS = {"exponents": scenario_exponents, "helmholtz-check": scenario_helmholtz,
           "besov-norm": scenario_besov, "stokes-linear": scenario_stokes,
           "navier-picard": scenario_picard, "uniqueness": scenario_uniqueness}


def run(cfg: RunConfig, out_dir: Path, workers: int = 1) -> int:
    """Execute a scenario, write its artifacts and return the exit status."""
    from .grid import write_field
    outcome = RUNNERS[cfg.scenario](cfg, workers)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for name, rows in outcome.tables.items():
        path = out_dir / f"{name}.csv"
        write_csv(path, rows)
        artifacts.append(path.name)
    if cfg["output"]["dump_fields"]:
        for name, f in outcome.fields.items():
            path = out_dir / f"{name}.field"
            write_field(str(path), f)
            artifacts.append(path.name)
    failed = [a["name"] for a in outcome.assertions if not a["passed"]]
    if outcome.diverged:
        status = EXIT_DIVERGED
    elif failed:
        status = EXIT_ASSERT
    else:
        status = EXIT_OK
    manifest = {
        "scenario": cfg.scenario,
        "status": status,
        "diverged": outcome.diverged,
        "assertions": outcome.assertions,
        "failed": failed,
        "info": {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in outcome.info.items()},
        "artifacts": artifacts,
        "config": {s: {k: str(v) for k, v in kv.items()} for s, kv in cfg.sections.items()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for a in outcome.assertions:
        log.info("%s %s: %.6g %s %.6g", "PASS" if a["passed"] else "FAIL", a["name"], a["value"],
                 a["op"], a["threshold"])
    if outcome.diverged:
        log.warning("divergence reported: %s", outcome.info.get("message", ""))
    return status


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="halfns", description="Half-space Navier-Stokes desk experiments")
    ap.add_argument("scenario", help=" | ".join(SCENARIOS))
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--strict-deterministic", action="store_true",
                    help="single worker; byte-identical outputs")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.scenario)
        level = cfg["run"]["log_level"].upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ConfigError(f"run.log_level must be debug, info, warning or error, got {level.lower()!r}")
        logging.getLogger().setLevel(level)
        workers = args.workers if args.workers is not None else cfg["run"]["workers"]
        if args.strict_deterministic:
            workers = 1
        out_dir = args.out or Path(cfg["output"]["dir"])
        return run(cfg, out_dir, max(1, workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
