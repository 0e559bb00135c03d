"""Command-line front end.

Every command resolves its settings from built-in defaults, then an
optional JSON config file (``--config``), then explicit flags (flags win).
The resolved settings and seed are embedded in the CSV header, so a run
can be repeated exactly; only the first header line (a timestamp) differs
between repeats. ``--threads`` changes scheduling only and is left out of
the embedded settings.

Exit status: 0 when every requested check passes (INCONCLUSIVE counts as
a pass unless ``--strict``), 1 on any failure, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys

import numpy as np

from . import density_lab as dl
from . import rng as _rng
from . import suites
from .gaussian_reference import GaussianReference, parse_spectrum
from .integrability import ConditionSpec, check_condition
from .model import DiffusionModel, DriftSpec
from .report import CertificateReport, DomainError, SingSDEError, Verdict
from .simulate import SimConfig, running_variance, simulate_ensemble
from .spde_galerkin import (SpectrumSpec, TruncatedDrift,
                            invariant_consistency_study)

SEED_ENV = "SINGSDE_SEED"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

COMMON = {"seed": None, "dim": 1, "lambda0": 1.0, "sigma_scale": 1.0,
          "drift": "zero", "dt": 0.01, "tmax": 10.0, "paths": 1000,
          "scheme": None, "adaptive": False, "x0": "mu0",
          "radii": "10,100,1000"}

DEFAULTS = {
    "simulate": {"girsanov": False, "record_every": None},
    "check-conditions": {"condition": ["XG3:0.4"], "samples": 200_000,
                         "spectrum": None},
    "estimate-invariant": {"burn_in": 10.0, "grid": "-7,7,60",
                           "record_every": 0.4},
    "verify-bounds": {"burn_in": 10.0, "grid": "-7,7,60", "record_every": 0.4,
                      "lam": 1.0, "samples": 200_000},
    "harnack": {"spectrum": "power:2,8", "theta": 0.6, "tuples": 1000},
    "inequalities": {"spectrum": "power:2,8", "theta": 0.6, "bank": 1000,
                     "young": 1000, "t": 0.3},
    "spde": {"spectrum": "power:2,16", "theta": 0.6, "levels": "4,8,16",
             "spde_drift": "tanh:1,4", "burn_in": 5.0, "dt": 0.05,
             "tmax": 40.0, "paths": 2000, "record_every": 0.5},
    "reproduce": {"suite": None, "paths": None},
}
COMMANDS = tuple(DEFAULTS)


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------
# parsing


def parse_drift(text: str, dim: int, lambda0: float = 1.0) -> DriftSpec:
    """``zero``, ``linear:r`` (Z = r lambda0 x), ``tanh[:scale]``, ``cubic``,
    ``constant:c1,...`` or ``star002[:theta]``."""
    name, _, arg = text.strip().partition(":")
    try:
        args = [float(a) for a in arg.split(",") if a.strip()]
    except ValueError as exc:
        raise UsageError(f"bad drift parameters in {text!r}") from exc
    if name == "zero":
        return DriftSpec.zero(dim)
    if name == "linear" and len(args) == 1:
        return DriftSpec.linear(dim, args[0] * lambda0)
    if name == "tanh":
        return DriftSpec.tanh(dim, args[0] if args else 1.0)
    if name == "cubic":
        return DriftSpec.cubic(dim)
    if name == "constant" and len(args) == dim:
        return DriftSpec.constant(args)
    if name == "star002":
        return DriftSpec.star002(dim, args[0] if args else 0.5)
    raise UsageError(f"unknown or malformed drift {text!r}")


def _parsed(fn, *args):
    """Run a module parser; its DomainError is a usage error here."""
    try:
        return fn(*args)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad {what}: {text!r}") from exc


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", help="JSON file with settings (flags win)")
    g.add_argument("--seed", type=int, help=f"default: ${SEED_ENV} or built-in")
    g.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    g.add_argument("--out", help="CSV output path (default: stdout)")
    g.add_argument("--strict", action="store_true",
                   help="treat INCONCLUSIVE as failure")
    g.add_argument("--dim", type=int)
    g.add_argument("--lambda0", type=float)
    g.add_argument("--sigma-scale", type=float)
    g.add_argument("--drift")
    g.add_argument("--dt", type=float)
    g.add_argument("--tmax", type=float)
    g.add_argument("--paths", type=int)
    g.add_argument("--scheme", choices=("euler_maruyama", "tamed_euler",
                                        "exact_ou_splitting"))
    g.add_argument("--adaptive", action="store_true", default=None)
    g.add_argument("--x0", help="'mu0' or comma-separated start point")
    g.add_argument("--radii", help="explosion ladder, e.g. 10,100,1000")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="singsde",
        description="Simulation and certificate checks for diffusions with "
                    "singular drift perturbations.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an ensemble, one row per path")
    _add_common(p)
    p.add_argument("--girsanov", action="store_true", default=None,
                   help="reference paths with Girsanov weight columns")
    p.add_argument("--record-every", type=float)

    p = sub.add_parser("check-conditions", help="integrability conditions")
    _add_common(p)
    p.add_argument("--condition", action="append",
                   help="KIND:param, e.g. XG3:0.6 (repeatable)")
    p.add_argument("--samples", type=int)
    p.add_argument("--spectrum")

    for name in ("estimate-invariant", "verify-bounds"):
        p = sub.add_parser(name, help="invariant density ratio and its "
                           "energy functionals" if name == "estimate-invariant"
                           else "PD, 2.4 and Q2 checks")
        _add_common(p)
        p.add_argument("--burn-in", type=float)
        p.add_argument("--grid", help="lo,hi,cells (cube)")
        p.add_argument("--record-every", type=float)
        if name == "verify-bounds":
            p.add_argument("--lam", type=float)
            p.add_argument("--samples", type=int)

    p = sub.add_parser("harnack", help="Harnack inequality on exact tuples")
    _add_common(p)
    p.add_argument("--spectrum")
    p.add_argument("--theta", type=float)
    p.add_argument("--tuples", type=int)

    p = sub.add_parser("inequalities", help="log-Sobolev, Young, "
                       "hypercontractivity")
    _add_common(p)
    p.add_argument("--spectrum")
    p.add_argument("--theta", type=float)
    p.add_argument("--bank", type=int)
    p.add_argument("--young", type=int)
    p.add_argument("--t", type=float)

    p = sub.add_parser("spde", help="Galerkin cross-level consistency")
    _add_common(p)
    p.add_argument("--spectrum")
    p.add_argument("--theta", type=float)
    p.add_argument("--levels")
    p.add_argument("--spde-drift", help="zero, tanh[:scale[,modes]], "
                   "tanh-coupled[:scale], sin-pair, linear-mode1:c")
    p.add_argument("--burn-in", type=float)
    p.add_argument("--record-every", type=float)

    p = sub.add_parser("reproduce", help="run a scripted suite")
    _add_common(p)
    p.add_argument("--suite", choices=suites.SUITES)
    return ap


_META = ("config", "threads", "out", "strict", "command")


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cmd = args.command
    conf = dict(COMMON)
    conf.update(DEFAULTS[cmd])
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(loaded) - set(conf)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        conf.update(loaded)
    for k, v in vars(args).items():
        if k in _META or v is None:
            continue
        if k not in conf:
            raise UsageError(f"option {k} does not apply to {cmd}")
        conf[k] = v
    if conf["seed"] is None:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                conf["seed"] = int(env)
            except ValueError as exc:
                raise UsageError(f"{SEED_ENV} must be an integer") from exc
    if conf["seed"] is None:
        conf["seed"] = suites.DEFAULT_SEEDS.get(conf.get("suite"), 0)
    if not 0 <= int(conf["seed"]) < 2 ** 64:
        raise UsageError("seed must be a 64-bit unsigned integer")
    if cmd == "reproduce" and conf["suite"] is None:
        raise UsageError("reproduce needs --suite")
    if int(conf["dim"]) < 1 or (conf["paths"] is not None
                                and int(conf["paths"]) < 2):
        raise UsageError("need dim >= 1 and paths >= 2")
    return conf


# ----------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(rows: list[dict], fields, conf: dict, command: str) -> str:
    buf = io.StringIO()
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    buf.write(f"# generated {stamp}\n")
    buf.write("# command " + command + " config "
              + json.dumps(conf, sort_keys=True, default=str) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f, "")) for f in fields])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


CHECK_FIELDS = ("case", "check", "lhs", "rhs", "se", "verdict")


def _check_row(case: str, rep) -> dict:
    return {"case": case, "check": rep.name, "lhs": rep.lhs, "rhs": rep.rhs,
            "se": rep.se, "verdict": rep.verdict.value}


# ----------------------------------------------------------------------
# commands


def _model(conf) -> DiffusionModel:
    return DiffusionModel.ou(int(conf["dim"]), float(conf["lambda0"]),
                             float(conf["sigma_scale"]))


def _sim_config(conf, threads, record_every=None, record_from=0.0) -> SimConfig:
    dt = float(conf["dt"])
    stride = 0
    if record_every:
        stride = max(1, int(round(float(record_every) / dt)))
    kw = dict(dt=dt, t_max=float(conf["tmax"]),
              explosion_radii=tuple(_floats(conf["radii"], "radii")),
              scheme=conf["scheme"], adaptive=bool(conf["adaptive"]),
              seed=int(conf["seed"]), record_stride=stride,
              record_from=record_from, threads=threads)
    return _parsed(lambda: SimConfig(**kw))


def _x0(conf, dim):
    if str(conf["x0"]).strip() == "mu0":
        return "mu0"
    pt = _floats(conf["x0"], "x0")
    if len(pt) != dim:
        raise UsageError("x0 dimension does not match --dim")
    return np.array(pt)


def cmd_simulate(conf, threads):
    model = _model(conf)
    drift = parse_drift(conf["drift"], model.dim, model.lambda0)
    every = conf["record_every"] or float(conf["tmax"]) / 50
    cfg = _sim_config(conf, threads, every)
    ens = simulate_ensemble(model, drift, cfg, _x0(conf, model.dim),
                            int(conf["paths"]), girsanov=bool(conf["girsanov"]))
    d = model.dim
    fields = ["path"] + [f"x{i + 1}" for i in range(d)] + ["exploded"] + \
        [f"exit_r{r:g}" for r in ens.radii]
    w = None
    if ens.girsanov is not None:
        fields += ["log_weight", "quad_var", "ess_contribution"]
        w = np.where(ens.exploded, 0.0, ens.girsanov.weight)
        wmax = w.max(initial=0.0)
    rows = []
    for i in range(ens.n_paths):
        row = {"path": int(ens.path_ids[i]), "exploded": bool(ens.exploded[i])}
        for j in range(d):
            row[f"x{j + 1}"] = ens.final[i, j]
        for k, r in enumerate(ens.radii):
            row[f"exit_r{r:g}"] = ens.exit_times[i, k]
        if w is not None:
            row["log_weight"] = ens.girsanov.log_weight[i]
            row["quad_var"] = ens.girsanov.quad_var[i]
            row["ess_contribution"] = w[i] / wmax if wmax > 0 else 0.0
        rows.append(row)
    # diagnostics only: never a failure
    n_exp = int(ens.exploded.sum())
    _say(f"simulate: {ens.n_paths} paths to t={ens.t_final:g}, "
         f"{n_exp} exploded")
    if ens.records is not None and len(ens.record_times) >= 4:
        t, v = running_variance(ens)
        half = v[len(v) // 2]
        if (np.nanmax(v) > 1e3 or v[-1] > 10 * half or n_exp > 0):
            _say(f"diagnostic: non-stationary (running variance {half:.4g} at "
                 f"t={t[len(v) // 2]:g}, {v[-1]:.4g} at t={t[-1]:g}; "
                 f"max {np.nanmax(v):.4g})")
        else:
            _say(f"diagnostic: running variance settles near {v[-1]:.4g}")
    if w is not None:
        _say(f"girsanov: mean weight {w.mean():.6g}, "
             f"effective sample size {w.sum() / wmax if wmax > 0 else 0:.4g}")
    return rows, fields, []


def _ref_for(conf) -> GaussianReference:
    if conf.get("spectrum"):
        return _parsed(parse_spectrum, conf["spectrum"], conf.get("theta", 0.5) or 0.5)
    return GaussianReference.isotropic(int(conf["dim"]), float(conf["lambda0"]))


def cmd_check_conditions(conf, threads):
    model = _model(conf)
    drift = parse_drift(conf["drift"], model.dim, model.lambda0)
    ref = _ref_for(conf)
    rows, verdicts = [], []
    for item in conf["condition"]:
        kind, _, par = str(item).partition(":")
        try:
            spec = ConditionSpec(kind.strip(), float(par) if par else 0.5)
        except (ValueError, SingSDEError) as exc:
            raise UsageError(f"bad condition {item!r}") from exc
        rep = check_condition(model, drift, spec, ref,
                              n_samples=int(conf["samples"]),
                              seed=int(conf["seed"]))
        rows.append(_check_row(item, rep))
        verdicts.append(rep.verdict)
        _say(f"[{rep.verdict.value}] {item}: value {rep.lhs:.6g} "
             f"(se {rep.se:.3g})")
    return rows, CHECK_FIELDS, verdicts


def _invariant(conf, threads):
    model = _model(conf)
    drift = parse_drift(conf["drift"], model.dim, model.lambda0)
    ref = GaussianReference.isotropic(model.dim, model.lambda0)
    burn = float(conf["burn_in"])
    if burn >= float(conf["tmax"]):
        raise UsageError("burn-in must be below tmax")
    cfg = _sim_config(conf, threads, conf["record_every"], burn)
    grid = _parsed(dl.GridSpec.parse, conf["grid"], model.dim)
    run = suites.invariant_pipeline(model, drift, ref, cfg, int(conf["paths"]),
                                    burn, grid, _x0(conf, model.dim))
    return model, drift, ref, run


def _oracle(conf, drift):
    if drift.growth == "linear":
        r = drift.params["r"] / float(conf["lambda0"])
        try:
            return dl.gaussian_oracle_linear(r, int(conf["dim"]),
                                             float(conf["lambda0"]))
        except dl.NoStationaryMeasureError:
            return None
    return None


def cmd_estimate_invariant(conf, threads):
    model, drift, ref, run = _invariant(conf, threads)
    orc = _oracle(conf, drift)
    f = run.fun
    vals = [("variance", run.variance, run.variance_se,
             orc.variance if orc else math.nan),
            ("dirichlet_sqrt", f.dirichlet_sqrt, f.dirichlet_se,
             orc.dirichlet_sqrt if orc else math.nan),
            ("fisher", f.fisher, f.fisher_se, orc.fisher if orc else math.nan),
            ("normalization", run.est.normalization, 0.0, 1.0),
            ("excluded_mass", f.excluded_mass, 0.0, math.nan)]
    for delta, v in sorted(f.fisher_trace.items(), reverse=True):
        vals.append((f"fisher_delta={delta:g}", v, 0.0, math.nan))
    rows = [{"quantity": q, "value": v, "se": se, "closed_form": c}
            for q, v, se, c in vals]
    for q, v, se, c in vals[:3]:
        _say(f"{q}: {v:.6g} +- {se:.3g}" + (f" (closed form {c:.6g})"
                                             if math.isfinite(c) else ""))
    for wmsg in f.warnings:
        _say("warning: " + wmsg)
    return rows, ("quantity", "value", "se", "closed_form"), []


def _z_moments(model, drift, ref, lam, n, seed):
    """Plain Monte Carlo ``mu0(|sigma^-1 Z|^2)`` and the exponential moment
    from the integrability module."""
    x = ref.sample(_rng.normals(seed, np.arange(n, dtype=np.uint64), _rng.AUX,
                                0, 1, ref.dim)[0])
    z = model.solve_sigma(x, drift.evaluate(x))
    q = np.sum(z * z, axis=-1)
    rep = check_condition(model, drift, ConditionSpec("PP2", lam), ref,
                          n_samples=n, seed=seed)
    return float(q.mean()), rep


def cmd_verify_bounds(conf, threads):
    model, drift, ref, run = _invariant(conf, threads)
    lam = float(conf["lam"])
    seed = int(conf["seed"])
    zm, mom = _z_moments(model, drift, ref, lam, int(conf["samples"]), seed)
    reps = []
    if mom.verdict is Verdict.FAILS or not math.isfinite(mom.lhs):
        reps.append(CertificateReport("PD", run.fun.dirichlet_sqrt, math.nan,
                                      Verdict.INCONCLUSIVE, run.fun.dirichlet_se,
                                      {}, ["exponential moment diverged"]))
    else:
        reps.append(dl.verify_bound_PD(run.fun, ref, mom.lhs, lam))
    reps.append(dl.verify_bound_24(run.fun, zm))
    reps.append(dl.verify_identity_Q2(run.est, run.occ, model, drift))
    case = conf["drift"]
    for rep in reps:
        _say(f"[{rep.verdict.value}] {rep.name}: lhs {rep.lhs:.6g} rhs "
             f"{rep.rhs:.6g}")
    return [_check_row(case, r) for r in reps], CHECK_FIELDS, \
        [r.verdict for r in reps]


def _suite_output(res: suites.SuiteResult):
    for r in res.rows:
        _say(f"[{r['verdict']}] {r['case']} {r['check']}: lhs {r['lhs']:.6g} "
             f"rhs {r['rhs']:.6g}")
    return res.rows, suites.ROW_FIELDS, res.verdicts()


def cmd_harnack(conf, threads):
    ref = _parsed(SpectrumSpec.parse, conf["spectrum"], conf["theta"]).reference()
    res = suites.SuiteResult("harnack")
    suites.hn_checks(res, ref, np.random.default_rng(int(conf["seed"])),
                     int(conf["tuples"]), conf["spectrum"])
    return _suite_output(res)


def cmd_inequalities(conf, threads):
    ref = _parsed(SpectrumSpec.parse, conf["spectrum"], conf["theta"]).reference()
    g = np.random.default_rng(int(conf["seed"]))
    res = suites.SuiteResult("inequalities")
    suites.ls_checks(res, ref, g, int(conf["bank"]), conf["spectrum"])
    suites.young_checks(res, g, int(conf["young"]), conf["spectrum"])
    suites.hpc_checks(res, ref, g, float(conf["t"]), case=conf["spectrum"])
    return _suite_output(res)


def cmd_spde(conf, threads):
    spec = _parsed(SpectrumSpec.parse, conf["spectrum"], conf["theta"])
    levels = [int(v) for v in _floats(conf["levels"], "levels")]
    td = _parsed(TruncatedDrift.parse, conf["spde_drift"])
    cfg = _sim_config(conf, threads, conf["record_every"])
    rep = invariant_consistency_study(spec, td, levels, cfg, int(conf["paths"]),
                                      float(conf["burn_in"]))
    rows = [dict(r, verdict="") for r in rep.details.get("comparisons", [])]
    for m in rep.details.get("moments", []):
        for i in range(m.mean.size):
            rows.append({"levels": str(m.level), "mode": i + 1, "stat": "mean",
                         "diff": m.mean[i], "combined_se": m.mean_se[i],
                         "z": math.nan, "verdict": ""})
            rows.append({"levels": str(m.level), "mode": i + 1, "stat": "var",
                         "diff": m.var[i], "combined_se": m.var_se[i],
                         "z": math.nan, "verdict": ""})
    rows.append({"levels": ",".join(map(str, levels)), "mode": 0,
                 "stat": "worst_z", "diff": math.nan, "combined_se": math.nan,
                 "z": rep.lhs, "verdict": rep.verdict.value})
    _say(f"[{rep.verdict.value}] consistency across levels {levels}: worst "
         f"z {rep.lhs:.3g} (limit {rep.rhs:g})")
    for wmsg in rep.warnings:
        _say("warning: " + wmsg)
    return rows, ("levels", "mode", "stat", "diff", "combined_se", "z",
                  "verdict"), [rep.verdict]


def cmd_reproduce(conf, threads):
    name = conf["suite"]
    seed = conf["seed"]
    kw = {}
    paths = conf["paths"]
    if paths is not None:
        paths = int(paths)
        if name == "linear-drift":
            kw["budget"] = suites.LinearBudget(n_paths=paths)
        elif name == "spde-consistency":
            kw["budget"] = suites.SpdeBudget(n_paths=paths,
                                             coupled_paths=min(500, paths))
    res = suites.run_suite(name, int(seed), threads, **kw) \
        if name != "harnack-ou" else suites.run_suite(name, int(seed))
    return _suite_output(res)


HANDLERS = {"simulate": cmd_simulate, "check-conditions": cmd_check_conditions,
            "estimate-invariant": cmd_estimate_invariant,
            "verify-bounds": cmd_verify_bounds, "harnack": cmd_harnack,
            "inequalities": cmd_inequalities, "spde": cmd_spde,
            "reproduce": cmd_reproduce}


def exit_status(verdicts, strict: bool) -> int:
    for v in verdicts:
        v = Verdict(v)
        if v.failed or (strict and v is Verdict.INCONCLUSIVE):
            return EXIT_FAIL
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        conf = resolve(args)
        threads = max(1, int(args.threads))
        rows, fields, verdicts = HANDLERS[args.command](conf, threads)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return EXIT_USAGE
    except SingSDEError as exc:
        _say(f"error [{exc.code}]: {exc}")
        return EXIT_FAIL
    _emit(render_csv(rows, fields, conf, args.command), args.out)
    return exit_status(verdicts, args.strict)


if __name__ == "__main__":
    sys.exit(main())
