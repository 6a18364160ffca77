"""Command-line entry point: ``python -m perceptron_flow <subcommand> ...``.

Every subcommand writes a CSV, an SVG plot and a JSON manifest into
``--out-dir``. Settings resolve as command-line flags, then the matching
section of ``--config``, then built-in defaults.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(divergence or a threshold never reached).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .drift import RuleConfig
from .experiments import (NotReached, anisotropy_sweep, covariance_decay, default_mu,
                          forgetting_flow, forgetting_run, noise_sweep, tilted_start)
from .flow import FlowConfig, WeightState, find_fixed_point, integrate_cov_flow, write_columns
from .plotting import PlotError, PlotSpec, render_plot
from .simulate import BaselineConfig, SimConfig, run
from .task import IsotropicTaskParams, TaskSpec

log = logging.getLogger("perceptron_flow")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# Built-in defaults per subcommand. Figure aliases override a few of them.
DEFAULTS = {
    "flow": dict(rule="sl", sigma=1.0, epsilon=0.0, lam=0.0, dim=2, tmax=10.0, dt=0.01,
                 record_every=10, hessian=False, cov0=0.0, task=None),
    "simulate": dict(rule="sl", sigma=1.0, epsilon=0.0, lam=0.0, dim=2, eta=1e-3, steps=10000,
                     runs=10, activation="logistic", baseline="ema", ema_decay=0.99, record_every=10),
    "fixed-point": dict(rule="sl", sigma=0.0, lam=0.1),
    "sweep-noise": dict(rule="both", sigmas=[0.25, 0.5, 1.0, 2.0], dim=2, threshold=0.8,
                        tmax=100.0, dt=0.01),
    "sweep-anisotropy": dict(rule="both", epsilons=[-0.5, -0.25, 0.0, 0.25, 0.5], sigma=1.0, dim=2,
                             threshold=0.8, tmax=100.0, dt=0.01),
    "cov-decay": dict(rule="both", sigmas=[0.0, 0.5, 1.0], lam=0.1, dim=10, tmax=20.0, dt=0.01,
                      cov0=0.01),
    "forget": dict(rule="both", sigmas=[0.1, 1.0], lam=10.0, eta=1e-2, dim=500, runs=50, tasks=10,
                   threshold=0.8, geometry="orthogonal", method="sim", activation="logistic"),
    "mnist": dict(mode="gabor", fetch=False, data_dir=None, lam=1.0, eta=1e-3, steps=None,
                  repeats=10, dt=0.01),
    "specfun-check": dict(),
}
ALIASES = {
    "fig3a": ("sweep-noise", dict(dim=500)),
    "fig3c": ("sweep-anisotropy", dict()),
    "fig4": ("cov-decay", dict()),
    "fig6": ("forget", dict()),
}


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _rules(name):
    return ["sl", "rl"] if name == "both" else [name]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Accepted before or after the subcommand; the subcommand copy must not
    # overwrite a value given before it, hence SUPPRESS there.
    unset = argparse.SUPPRESS if suppress else None
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=unset, help="random seed (default 0)")
    common.add_argument("--out-dir", default=unset, help="output directory (default ./out)")
    common.add_argument("--threads", type=int, default=unset, help="worker threads for sweeps")
    common.add_argument("--config", default=unset, help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = _Parser(prog="perceptron-flow", description=__doc__.splitlines()[0],
                parents=[_global_flags(suppress=False)])
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True

    def add(name, help_, aliases=()):
        return sub.add_parser(name, help=help_, aliases=list(aliases), parents=[common])

    def rule_arg(sp, both=False):
        sp.add_argument("--rule", choices=["sl", "rl", "both"] if both else ["sl", "rl"], default=None)

    s = add("flow", "integrate the mean (and covariance) flow")
    rule_arg(s)
    s.add_argument("--sigma", type=float)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--dim", type=int)
    s.add_argument("--tmax", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--record-every", type=int)
    s.add_argument("--hessian", action="store_true", default=None, help="include the Hessian correction")
    s.add_argument("--cov0", type=float, help="initial covariance c*I")
    s.add_argument("--task", help="JSON task file (overrides sigma/epsilon/dim)")

    s = add("simulate", "Monte Carlo ensemble of the online rule")
    rule_arg(s)
    for flag, typ in [("--sigma", float), ("--epsilon", float), ("--dim", int), ("--eta", float),
                      ("--steps", int), ("--runs", int), ("--ema-decay", float), ("--record-every", int)]:
        s.add_argument(flag, type=typ)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--activation", choices=["erf", "logistic"])
    s.add_argument("--baseline", choices=["ema", "analytic", "none"])

    s = add("fixed-point", "norm of the fixed point of the isotropic flow")
    rule_arg(s)
    s.add_argument("--sigma", type=float)
    s.add_argument("--lambda", dest="lam", type=float)

    s = add("sweep-noise", "time to threshold alignment vs isotropic noise", ["fig3a"])
    rule_arg(s, both=True)
    s.add_argument("--sigmas", type=_floats)
    for flag, typ in [("--dim", int), ("--threshold", float), ("--tmax", float), ("--dt", float)]:
        s.add_argument(flag, type=typ)

    s = add("sweep-anisotropy", "time to threshold alignment vs anisotropy", ["fig3c"])
    rule_arg(s, both=True)
    s.add_argument("--epsilons", type=_floats)
    for flag, typ in [("--sigma", float), ("--dim", int), ("--threshold", float), ("--tmax", float),
                      ("--dt", float)]:
        s.add_argument(flag, type=typ)

    s = add("cov-decay", "decay of tr Cov(w) under the covariance flow", ["fig4"])
    rule_arg(s, both=True)
    s.add_argument("--sigmas", type=_floats)
    s.add_argument("--lambda", dest="lam", type=float)
    for flag, typ in [("--dim", int), ("--tmax", float), ("--dt", float), ("--cov0", float)]:
        s.add_argument(flag, type=typ)

    s = add("forget", "forgetting curves over a sequence of tasks", ["fig6"])
    rule_arg(s, both=True)
    s.add_argument("--sigmas", type=_floats)
    s.add_argument("--lambda", dest="lam", type=float)
    for flag, typ in [("--eta", float), ("--dim", int), ("--runs", int), ("--tasks", int),
                      ("--threshold", float)]:
        s.add_argument(flag, type=typ)
    s.add_argument("--geometry", choices=["orthogonal", "random"])
    s.add_argument("--method", choices=["sim", "flow"])
    s.add_argument("--activation", choices=["erf", "logistic"])

    s = add("mnist", "theory vs SGD on MNIST digits 0 and 1")
    s.add_argument("--mode", choices=["gabor", "raw"])
    s.add_argument("--fetch", action="store_true", default=None, help="download the dataset if missing")
    s.add_argument("--data-dir")
    s.add_argument("--lambda", dest="lam", type=float)
    for flag, typ in [("--eta", float), ("--steps", int), ("--repeats", int), ("--dt", float)]:
        s.add_argument(flag, type=typ)

    add("specfun-check", "compare special functions against reference values")
    return p


def _canonical(command):
    for alias, (target, _) in ALIASES.items():
        if command == alias:
            return target, alias
    return command, None


def resolve_config(args) -> tuple:
    """Merge defaults, config file and flags; return ``(command, settings)``."""
    command, alias = _canonical(args.command)
    settings = dict(DEFAULTS[command])
    settings.update(seed=0, out_dir="out", threads=1)
    if alias:
        settings.update(ALIASES[alias][1])
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        section = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
        for key in (command, alias):
            if key and isinstance(cfg.get(key), dict):
                section.update(cfg[key])
        section = {k.replace("-", "_"): v for k, v in section.items()}
        if "lambda" in section:
            section["lam"] = section.pop("lambda")
        unknown = set(section) - set(settings)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        settings.update(section)
    for key, value in vars(args).items():
        if key in settings and value is not None:
            settings[key] = value
    if settings["threads"] < 1:
        raise ConfigError("--threads must be >= 1")
    return command, alias, settings


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def write_manifest(out_dir: Path, name: str, command: str, settings: dict, outputs: list,
                   status: str) -> Path:
    manifest = {
        "subcommand": command,
        "config": {k: _jsonable(v) for k, v in sorted(settings.items())},
        "seed": settings["seed"],
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": [str(p) for p in outputs],
        "status": status,
        "version": version_string(),
    }
    path = out_dir / f"{name}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _iso_task(s):
    if s.get("task"):
        return TaskSpec.load_json(s["task"]), None
    params = IsotropicTaskParams.standard(s["dim"], s["sigma"], s["epsilon"])
    return params.to_task(), params


def _emit(out_dir, name, cols, spec):
    csv_path = out_dir / f"{name}.csv"
    svg_path = out_dir / f"{name}.svg"
    write_columns(csv_path, cols)
    render_plot(csv_path, spec, svg_path)
    return [csv_path, svg_path]


def cmd_flow(s, out_dir):
    task, _ = _iso_task(s)
    rule = RuleConfig(s["rule"], s["lam"])
    cfg = FlowConfig(dt=s["dt"], t_max=s["tmax"], hessian_correction=bool(s["hessian"]),
                     record_every=s["record_every"])
    w0 = tilted_start(task.coding_direction if np.any(task.coding_direction) else default_mu(task.dim))
    state = WeightState(w0, s["cov0"] * np.eye(task.dim))
    traj = integrate_cov_flow(task, rule, state, cfg)
    cols = traj.columns(include_mean=True)
    outputs = _emit(out_dir, "flow", cols, PlotSpec("t", ["alignment", "accuracy"], "mean flow", ylabel="value"))
    print(f"t={traj.t[-1]:g} alignment={traj.alignment[-1]:.6f} norm={traj.norm[-1]:.6g} "
          f"tr_cov={traj.tr_cov[-1]:.6g} status={traj.status}")
    if traj.status == "diverged":
        raise NumericalFailure("mean weights diverged")
    return outputs


def cmd_simulate(s, out_dir):
    task, _ = _iso_task(dict(s, task=None))
    cfg = SimConfig(eta=s["eta"], steps=s["steps"], runs=s["runs"], seed=s["seed"],
                    activation=s["activation"],
                    baseline=BaselineConfig(s["baseline"], s["ema_decay"]),
                    record_every=s["record_every"])
    w0 = tilted_start(task.coding_direction)
    traj = run(s["rule"], task, s["lam"], w0, cfg)
    outputs = _emit(out_dir, "simulate", traj.columns(),
                    PlotSpec("t", ["alignment_mean", "alignment_of_mean"], "ensemble simulation",
                             ylabel="alignment"))
    st = traj.stats(with_cov=False)
    print(f"t={traj.t[-1]:g} alignment_mean={st['alignment_mean'][-1]:.6f} "
          f"alignment_of_mean={st['alignment_of_mean'][-1]:.6f} status={traj.status}")
    if traj.status == "diverged":
        raise NumericalFailure("weights diverged")
    return outputs


def cmd_fixed_point(s, out_dir):
    params = IsotropicTaskParams(np.array([1.0]), s["sigma"], 0.0)
    fp = find_fixed_point(params, RuleConfig(s["rule"], s["lam"]))
    path = out_dir / "fixed_point.csv"
    write_columns(path, {"sigma": [s["sigma"]], "lambda": [s["lam"]], "w_star_norm": [fp.norm],
                         "residual": [fp.residual]})
    print(f"|w*| = {fp.norm:.12g}  residual = {fp.residual:.3e}  status = {fp.status}")
    if fp.status != "ok":
        raise NumericalFailure("no finite fixed point (lambda = sigma = 0)")
    return [path]


def _sweep_cmd(s, out_dir, name, param, grid, runner):
    rules = _rules(s["rule"])
    results = _pmap(runner, rules, s["threads"])
    cols = {param: np.asarray(grid, dtype=float)}
    for rule, res in zip(rules, results):
        cols[f"time_{rule}"] = res.outcome
        print(f"{rule}: " + ", ".join(f"{param}={g:g} -> {v:.6g}" for g, v in zip(res.grid, res.outcome)))
    outputs = _emit(out_dir, name, cols, PlotSpec(param, [f"time_{r}" for r in rules],
                                                  f"time to {s['threshold']:g} alignment",
                                                  ylabel="time"))
    if any(st != "ok" for res in results for st in res.status):
        raise NumericalFailure("some sweep points never reached the threshold")
    return outputs


def cmd_sweep_noise(s, out_dir):
    kw = dict(threshold=s["threshold"], t_max=s["tmax"], dt=s["dt"])
    return _sweep_cmd(s, out_dir, "sweep_noise", "sigma", s["sigmas"],
                      lambda r: noise_sweep(RuleConfig(r), s["sigmas"], dim=s["dim"], **kw))


def cmd_sweep_anisotropy(s, out_dir):
    kw = dict(threshold=s["threshold"], t_max=s["tmax"], dt=s["dt"])
    return _sweep_cmd(s, out_dir, "sweep_anisotropy", "epsilon", s["epsilons"],
                      lambda r: anisotropy_sweep(RuleConfig(r), s["epsilons"], sigma=s["sigma"],
                                                 dim=s["dim"], **kw))


def cmd_cov_decay(s, out_dir):
    rules = _rules(s["rule"])
    dim = s["dim"]
    results = _pmap(lambda r: covariance_decay(RuleConfig(r, s["lam"]), s["sigmas"],
                                               cov0=s["cov0"] * np.eye(dim), dim=dim,
                                               dt=s["dt"], t_max=s["tmax"]), rules, s["threads"])
    cols = {"sigma": np.asarray(s["sigmas"], dtype=float)}
    for rule, res in zip(rules, results):
        cols[f"rate_{rule}"] = res.sweep.outcome
        print(f"{rule}: " + ", ".join(f"sigma={g:g} -> rate {v:.6g}"
                                      for g, v in zip(res.sweep.grid, res.sweep.outcome)))
    write_columns(out_dir / "cov_decay_rates.csv", cols)
    traj_cols = {"t": results[0].trajectories[0].t}
    for rule, res in zip(rules, results):
        for sigma, tr in zip(s["sigmas"], res.trajectories):
            traj_cols[f"tr_cov_{rule}_sigma{sigma:g}"] = tr.tr_cov
    outputs = [out_dir / "cov_decay_rates.csv"]
    outputs += _emit(out_dir, "cov_decay", traj_cols,
                     PlotSpec("t", [k for k in traj_cols if k != "t"], "tr Cov(w)", ylabel="tr Cov",
                              logy=True))
    if any(st == "diverged" for res in results for st in res.sweep.status):
        raise NumericalFailure("covariance flow diverged")
    return outputs


def cmd_forget(s, out_dir):
    jobs = [(r, sigma) for r in _rules(s["rule"]) for sigma in s["sigmas"]]

    def one(job):
        rule, sigma = job
        if s["method"] == "flow":
            return forgetting_flow(rule, s["tasks"], sigma, s["lam"], s["threshold"], s["dim"],
                                   seed=s["seed"], geometry=s["geometry"])
        return forgetting_run(rule, s["tasks"], sigma, s["lam"], s["threshold"], s["dim"], s["eta"],
                              s["runs"], s["seed"], s["activation"], geometry=s["geometry"])

    try:
        results = _pmap(one, jobs, s["threads"])
    except NotReached as exc:
        raise NumericalFailure(str(exc)) from exc
    cols = {"task": np.arange(s["tasks"])}
    for (rule, sigma), res in zip(jobs, results):
        key = f"{rule}_sigma{sigma:g}"
        cols[f"alignment_{key}"] = res.curve
        cols[f"stderr_{key}"] = res.stderr
        try:
            fit = res.fit()
            lo, hi = fit.ci
            print(f"{key}: decay rate {fit.rate:.4f} (95% CI {lo:.4f}..{hi:.4f}), "
                  f"R^2 {fit.r2:.4f} over {fit.points} tasks")
        except ValueError as exc:
            print(f"{key}: no exponential fit ({exc})")
    outputs = _emit(out_dir, "forget", cols,
                    PlotSpec("task", [k for k in cols if k.startswith("alignment_")],
                             "alignment with the first task mean", ylabel="alignment"))
    return outputs


def cmd_mnist(s, out_dir):
    from .idx import default_data_dir, fetch_mnist
    from .mnist import empirical_curve, fit_gaussians, prepare, theory_curve

    data_dir = Path(s["data_dir"]) if s["data_dir"] else default_data_dir()
    if s["fetch"]:
        fetch_mnist(data_dir)
    try:
        data = prepare(data_dir, s["mode"])
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    steps = s["steps"] or data.train_x.shape[0]
    fit = fit_gaussians(data.train_x, data.train_y)
    theory = theory_curve(fit, s["lam"], s["eta"], steps, dt=s["dt"])
    emp = empirical_curve(data, s["lam"], s["eta"], steps, s["repeats"], s["seed"])
    cols = emp.columns("empirical_")
    cols["theory_accuracy"] = np.interp(emp.steps, theory.steps, theory.accuracy)
    cols["theory_alignment"] = np.interp(emp.steps, theory.steps, theory.alignment)
    name = f"mnist_{s['mode']}"
    outputs = _emit(out_dir, name, cols, PlotSpec("step", ["theory_accuracy", "empirical_accuracy"],
                                                  f"MNIST 0/1 ({s['mode']})", ylabel="test accuracy"))
    svg = out_dir / f"{name}_alignment.svg"
    render_plot(outputs[0], PlotSpec("step", ["theory_alignment", "empirical_alignment"],
                                     "alignment with digit-1 mean", ylabel="alignment"), svg)
    outputs.append(svg)
    print(f"final accuracy: theory {cols['theory_accuracy'][-1]:.4f}, "
          f"empirical {emp.accuracy[-1]:.4f} +- {emp.accuracy_std[-1]:.4f}")
    return outputs


def cmd_specfun_check(s, out_dir):
    from scipy import special

    from .specfun import erf_sigmoid, normal_cdf, owens_t

    hs = np.linspace(-4, 4, 41)
    as_ = np.linspace(0, 2, 21)
    rows = {"h": [], "a": [], "owens_t": [], "reference": [], "abs_err": []}
    for h in hs:
        for a in as_:
            v, ref = owens_t(h, a), float(special.owens_t(h, a))
            rows["h"].append(h)
            rows["a"].append(a)
            rows["owens_t"].append(v)
            rows["reference"].append(ref)
            rows["abs_err"].append(abs(v - ref))
    worst = max(rows["abs_err"])
    print(f"erf_sigmoid(4/sqrt(pi)) = {erf_sigmoid(4 / math.sqrt(math.pi)):.15f}")
    print(f"normal_cdf(1) = {normal_cdf(1.0):.15f}")
    print(f"owens_t(0.5, 1) = {owens_t(0.5, 1.0):.15f}")
    print(f"max |owens_t - scipy.special.owens_t| on 41x21 grid: {worst:.3e}")
    outputs = _emit(out_dir, "specfun_check", rows,
                    PlotSpec("h", ["abs_err"], "Owen's T absolute error", ylabel="abs error"))
    if worst > 1e-10:
        raise NumericalFailure("Owen's T deviates from the reference by more than 1e-10")
    return outputs


COMMANDS = {
    "flow": cmd_flow,
    "simulate": cmd_simulate,
    "fixed-point": cmd_fixed_point,
    "sweep-noise": cmd_sweep_noise,
    "sweep-anisotropy": cmd_sweep_anisotropy,
    "cov-decay": cmd_cov_decay,
    "forget": cmd_forget,
    "mnist": cmd_mnist,
    "specfun-check": cmd_specfun_check,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        command, alias, settings = resolve_config(args)
        out_dir = Path(settings["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        name = alias or command
        status, code = "ok", EXIT_OK
        try:
            outputs = COMMANDS[command](settings, out_dir)
        except NumericalFailure as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            outputs, status, code = sorted(out_dir.glob(f"{command.replace('-', '_')}*")), "failed", EXIT_NUMERIC
        write_manifest(out_dir, name, command, settings, outputs, status)
        return code
    except (ConfigError, PlotError, ValueError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(dispatch())
