"""Command-line entry point.

Experiments are configured by a flat TOML table and/or command-line
flags (flags win).  Outputs are a node-trajectory CSV and a JSON run
report; exit status is 0 on convergence, 2 on a Newton failure (the
report is still written with the best iterate's statistics), and 1 on
configuration or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from . import missions
from .bvp_newton import MeshSolution, NewtonOptions
from .errors import ConfigError, ConvergenceError, HbvmError
from .hamiltonian_models import (CrtbpParams, crtbp_model, extended_hill_model,
                                 extended_model, hill_model, nondim_to_days)
from .hbvm_core import dense_output, energy_drift, make_partition, propagate

__all__ = ["main", "run", "write_trajectory", "write_report", "EXPERIMENT_KINDS"]

# kind -> (required fields, optional fields with defaults)
_COMMON_OPTIONAL = {
    "k": 6, "s": 2, "n": 100, "tol": 1e-12, "max_iters": 60,
    "trajectory": None, "report": None, "oversample": 1, "gnuplot": None,
}

EXPERIMENT_KINDS = {
    "ivp": (("model", "y0", "tf"), {"mu": missions.DEFAULT_MU}),
    "lyapunov-period": (("mu", "T_days"),
                        {"guess_amplitude": 4e-3, "via_period_days": None}),
    "lyapunov-energy": (("mu", "H"),
                        {"guess_amplitude": 4e-3, "guess_period_days": None}),
    "halo-period": (("mu", "T_days"),
                    {"guess_amplitude": 3e-3, "aspect": missions._HALO_ASPECT}),
    "halo-energy": (("mu", "H"),
                    {"guess_amplitude": 3e-3, "aspect": missions._HALO_ASPECT,
                     "guess_period_days": None}),
    "hill-transfer": (("tf",),
                      {"p2": (0.005, 0.0044), "tf_continuation": ()}),
    "halo-transfer": (("mu", "period_a_days", "energy_b"),
                      {"T_days": None, "guess_amplitude": 3e-3,
                       "aspect": missions._HALO_ASPECT}),
    "continuation": (("experiment", "values", "mu"),
                     {"guess_amplitude": 4e-3, "aspect": missions._HALO_ASPECT}),
}


def _load_config(kind: str, config_path: str | None, overrides: dict) -> dict:
    required, optional = EXPERIMENT_KINDS[kind]
    config: dict = {}
    if config_path is not None:
        try:
            with open(config_path, "rb") as fh:
                config.update(tomllib.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {config_path}: {exc}") from exc
    config.update({k: v for k, v in overrides.items() if v is not None})
    known = set(required) | set(optional) | set(_COMMON_OPTIONAL)
    unknown = sorted(set(config) - known)
    if unknown:
        raise ConfigError(f"unknown field(s) for {kind}: {', '.join(unknown)}")
    missing = sorted(set(required) - set(config))
    if missing:
        raise ConfigError(f"missing required field(s) for {kind}: {', '.join(missing)}")
    for key, default in {**_COMMON_OPTIONAL, **optional}.items():
        config.setdefault(key, default)
    if not (config["k"] >= config["s"] >= 1):
        raise ConfigError(f"need k >= s >= 1, got k={config['k']}, s={config['s']}")
    if config["n"] < 2:
        raise ConfigError(f"need n >= 2, got n={config['n']}")
    config["kind"] = kind
    return config


def write_trajectory(mesh: MeshSolution, model, path: str, oversample: int = 1,
                     part=None) -> None:
    """Write the node trajectory as CSV: t, q1..qm, p1..pm, H, H_drift.

    With ``oversample > 1`` (needs ``part``), each interval is refined by
    evaluating the collocation polynomial at equally spaced fractions.
    """
    m = model.dim // 2
    header = (["t"] + [f"q{i + 1}" for i in range(m)]
              + [f"p{i + 1}" for i in range(m)] + ["H", "H_drift"])
    rows = []
    H0 = model.H(mesh.ys[0])
    def add_row(t, y):
        H = model.H(y)
        rows.append([t] + list(y) + [H, H - H0])
    for i in range(mesh.n):
        t_i = mesh.t0 + i * mesh.h
        add_row(t_i, mesh.ys[i])
        if oversample > 1:
            for j in range(1, oversample):
                c = j / oversample
                y = dense_output(part, mesh.ys[i], mesh.Zs[i], mesh.h, c)
                add_row(t_i + c * mesh.h, y)
    add_row(mesh.t0 + mesh.n * mesh.h, mesh.ys[mesh.n])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{val:.17g}" for val in row) + "\n")


def write_report(report: dict, path: str) -> None:
    """Write the run report as deterministic JSON (timing field excepted)."""
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_gnuplot_script(csv_path: str, script_path: str, dim: int) -> None:
    """Emit a gnuplot script plotting the trajectory CSV (no plotting
    dependency in-process; run ``gnuplot <script>`` separately)."""
    planar = dim <= 8
    plot = ("plot csv using 2:3 with lines title 'orbit'" if planar
            else "splot csv using 2:3:4 with lines title 'orbit'")
    lines = [
        "set datafile separator ','",
        f"csv = '{csv_path}'",
        "set key top right",
        "set xlabel 'q1'",
        "set ylabel 'q2'",
    ]
    if not planar:
        lines.append("set zlabel 'q3'")
    lines += [plot, "pause -1"]
    with open(script_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _report_from_mesh(config, model, mesh, extra=None) -> dict:
    rep = mesh.report
    drift = energy_drift(model, mesh.ys)
    H0 = model.H(mesh.ys[0])
    out = {
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in config.items()},
        "converged": bool(rep.converged) if rep else True,
        "iterations": rep.iterations if rep else 0,
        "residual_history": rep.residual_history if rep else [],
        "lstsq_residual": rep.lstsq_residual if rep else None,
        "energy": H0,
        "period_days": nondim_to_days(mesh.n * mesh.h),
        "period_nondim": mesh.n * mesh.h,
        "max_energy_drift": float(np.max(np.abs(drift))),
        "max_energy_drift_rel": float(np.max(np.abs(drift)) / max(1e-300, abs(H0))),
    }
    if extra:
        out.update(extra)
    return out


def _model_for_ivp(config):
    name = config["model"]
    if name == "hill":
        return hill_model()
    if name == "crtbp-planar":
        return crtbp_model(CrtbpParams(config["mu"], spatial=False))
    if name == "crtbp-spatial":
        return crtbp_model(CrtbpParams(config["mu"], spatial=True))
    if name == "hill-extended":
        return extended_hill_model()
    if name == "crtbp-extended":
        return extended_model(crtbp_model(CrtbpParams(config["mu"], spatial=True)))
    raise ConfigError(f"unknown model {name!r}")


def _run_ivp(config):
    model = _model_for_ivp(config)
    y0 = np.asarray(config["y0"], float)
    if y0.shape != (model.dim,):
        raise ConfigError(f"y0 must have {model.dim} components, got {len(y0)}")
    part = make_partition(config["k"], config["s"])
    n = config["n"]
    h = config["tf"] / n
    traj = propagate(model, y0, h, n, part)
    Zs = np.repeat(traj[:-1, None, :], part.s, axis=1)
    mesh = MeshSolution(t0=0.0, h=h, n=n, ys=traj, Zs=Zs)
    return model, part, mesh, {}


def _newton_opts(config):
    return NewtonOptions(tol=config["tol"], max_iters=config["max_iters"])


def _run_lyapunov_period(config):
    hbvm = (config["k"], config["s"])
    n, mu = config["n"], config["mu"]
    guess = missions.lyapunov_guess(mu, config["guess_amplitude"], n)
    opts = _newton_opts(config)
    via = config["via_period_days"]
    stages = ([via] if np.isscalar(via) else list(via)) if via else []
    for T in stages + [config["T_days"]]:
        orbit = missions.lyapunov_by_period(mu, T, guess, hbvm, n, opts=opts)
        guess = orbit.mesh
    model = crtbp_model(CrtbpParams(mu, spatial=False))
    part = make_partition(*hbvm)
    return model, part, orbit.mesh, {"classification": orbit.classification}


def _run_lyapunov_energy(config):
    hbvm = (config["k"], config["s"])
    n, mu = config["n"], config["mu"]
    opts = _newton_opts(config)
    guess = missions.lyapunov_guess(mu, config["guess_amplitude"], n)
    if config["guess_period_days"] is not None:
        guess = missions.lyapunov_by_period(
            mu, config["guess_period_days"], guess, hbvm, n, opts=opts).mesh
    orbit = missions.lyapunov_by_energy(mu, config["H"], guess, hbvm, n, opts=opts)
    model = crtbp_model(CrtbpParams(mu, spatial=False))
    part = make_partition(*hbvm)
    return model, part, orbit.mesh, {"classification": orbit.classification}


def _run_halo_period(config):
    hbvm = (config["k"], config["s"])
    n, mu = config["n"], config["mu"]
    guess = missions.halo_guess(mu, config["guess_amplitude"], n, config["aspect"])
    orbit = missions.halo_by_period(mu, config["T_days"], guess, hbvm, n,
                                    opts=_newton_opts(config))
    model = crtbp_model(CrtbpParams(mu, spatial=True))
    part = make_partition(*hbvm)
    return model, part, orbit.mesh, {"classification": orbit.classification}


def _run_halo_energy(config):
    hbvm = (config["k"], config["s"])
    n, mu = config["n"], config["mu"]
    opts = _newton_opts(config)
    guess = missions.halo_guess(mu, config["guess_amplitude"], n, config["aspect"])
    if config["guess_period_days"] is not None:
        guess = missions.halo_by_period(
            mu, config["guess_period_days"], guess, hbvm, n, opts=opts).mesh
    orbit = missions.halo_by_energy(mu, config["H"], guess, hbvm, n, opts=opts)
    model = crtbp_model(CrtbpParams(mu, spatial=True))
    part = make_partition(*hbvm)
    return model, part, orbit.mesh, {"classification": orbit.classification}


def _run_hill_transfer(config):
    hbvm = (config["k"], config["s"])
    n = config["n"]
    xi = (1.0 / 3.0) ** (1.0 / 3.0)
    P1 = np.array([xi, 0.0, 0.0, xi])
    dq1, dq2 = config["p2"]
    q1, q2 = xi + dq1, dq2
    P2 = np.array([q1, q2, -q2, q1])  # null velocity: p1 = -q2, p2 = q1
    result = missions.hill_transfer(P1, P2, config["tf"], hbvm, n,
                                    opts=_newton_opts(config),
                                    tf_continuation=config["tf_continuation"])
    model = extended_hill_model()
    part = make_partition(*hbvm)
    extra = {"cost": result.cost,
             "boundary_mismatch": result.boundary_mismatch,
             "extended_energy_error": result.energy_error,
             "max_control_norm": float(np.max(np.linalg.norm(result.control, axis=1)))}
    return model, part, result.mesh, extra


def _run_halo_transfer(config):
    hbvm = (config["k"], config["s"])
    n, mu = config["n"], config["mu"]
    opts = _newton_opts(config)
    guess = missions.halo_guess(mu, config["guess_amplitude"], n, config["aspect"])
    orbit_a = missions.halo_by_period(mu, config["period_a_days"], guess, hbvm, n,
                                      opts=opts)
    orbit_b = missions.halo_by_energy(mu, config["energy_b"], orbit_a.mesh.copy(),
                                      hbvm, n, opts=opts)
    T = config["T_days"]
    if T is None:
        T = 0.5 * (orbit_a.period_days + orbit_b.period_days)
    result = missions.halo_transfer(orbit_a, orbit_b, T, hbvm, n, opts=opts)
    model = extended_model(crtbp_model(CrtbpParams(mu, spatial=True)))
    part = make_partition(*hbvm)
    extra = {"cost": result.cost,
             "boundary_mismatch": result.boundary_mismatch,
             "extended_energy_error": result.energy_error,
             "period_a_days": orbit_a.period_days,
             "period_b_days": orbit_b.period_days}
    return model, part, result.mesh, extra


def _run_continuation(config):
    hbvm = (config["k"], config["s"])
    n, mu = config["n"], config["mu"]
    opts = _newton_opts(config)
    experiment = config["experiment"]
    if experiment == "lyapunov-period":
        guess = missions.lyapunov_guess(mu, config["guess_amplitude"], n)
        driver = lambda p, g: missions.lyapunov_by_period(mu, p, g, hbvm, n, opts=opts)
        model = crtbp_model(CrtbpParams(mu, spatial=False))
    elif experiment == "lyapunov-energy":
        guess = missions.lyapunov_guess(mu, config["guess_amplitude"], n)
        driver = lambda p, g: missions.lyapunov_by_energy(mu, p, g, hbvm, n, opts=opts)
        model = crtbp_model(CrtbpParams(mu, spatial=False))
    elif experiment == "halo-period":
        guess = missions.halo_guess(mu, config["guess_amplitude"], n, config["aspect"])
        driver = lambda p, g: missions.halo_by_period(mu, p, g, hbvm, n, opts=opts)
        model = crtbp_model(CrtbpParams(mu, spatial=True))
    elif experiment == "halo-energy":
        guess = missions.halo_guess(mu, config["guess_amplitude"], n, config["aspect"])
        driver = lambda p, g: missions.halo_by_energy(mu, p, g, hbvm, n, opts=opts)
        model = crtbp_model(CrtbpParams(mu, spatial=True))
    else:
        raise ConfigError(f"continuation does not support experiment {experiment!r}")
    steps = missions.continuation(driver, config["values"], guess)
    failures = [s.parameter for s in steps if not s.ok]
    successes = [s for s in steps if s.ok]
    if not successes:
        raise ConvergenceError("no continuation step converged")
    last = successes[-1].result
    part = make_partition(*hbvm)
    extra = {"continuation_values": list(config["values"]),
             "continuation_failures": failures,
             "energies": [s.result.energy for s in successes],
             "periods_days": [s.result.period_days for s in successes]}
    return model, part, last.mesh, extra


_RUNNERS = {
    "ivp": _run_ivp,
    "lyapunov-period": _run_lyapunov_period,
    "lyapunov-energy": _run_lyapunov_energy,
    "halo-period": _run_halo_period,
    "halo-energy": _run_halo_energy,
    "hill-transfer": _run_hill_transfer,
    "halo-transfer": _run_halo_transfer,
    "continuation": _run_continuation,
}


def run(kind: str, config_path: str | None = None, **overrides) -> int:
    """Execute one experiment; returns the process exit status."""
    try:
        config = _load_config(kind, config_path, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    t_start = time.perf_counter()
    try:
        model, part, mesh, extra = _RUNNERS[kind](config)
    except ConvergenceError as exc:
        print(f"error: Newton iteration failed: {exc}", file=sys.stderr)
        if config["report"] is not None:
            try:
                report = {
                    "config": {k: (list(v) if isinstance(v, tuple) else v)
                               for k, v in config.items()},
                    "converged": False,
                    "message": str(exc),
                    "iterations": exc.report.iterations if exc.report else None,
                    "residual_history": (exc.report.residual_history
                                         if exc.report else []),
                    "timing_s": time.perf_counter() - t_start,
                }
                write_report(report, config["report"])
            except OSError as io_exc:
                print(f"error: {io_exc}", file=sys.stderr)
                return 1
        return 2
    except HbvmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = _report_from_mesh(config, model, mesh, extra)
    report["timing_s"] = time.perf_counter() - t_start
    try:
        if config["trajectory"] is not None:
            write_trajectory(mesh, model, config["trajectory"],
                             oversample=config["oversample"], part=part)
            if config["gnuplot"] is not None:
                write_gnuplot_script(config["trajectory"], config["gnuplot"],
                                     model.dim)
        if config["report"] is not None:
            write_report(report, config["report"])
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary = {k: report[k] for k in ("converged", "iterations", "energy",
                                      "period_days", "max_energy_drift_rel")}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _add_common_flags(sub):
    sub.add_argument("--config", help="TOML configuration file")
    sub.add_argument("--k", type=int, dest="k")
    sub.add_argument("--s", type=int, dest="s")
    sub.add_argument("--n", type=int, dest="n")
    sub.add_argument("--tol", type=float)
    sub.add_argument("--max-iters", type=int, dest="max_iters")
    sub.add_argument("--trajectory", help="trajectory CSV output path")
    sub.add_argument("--report", help="JSON report output path")
    sub.add_argument("--oversample", type=int)
    sub.add_argument("--gnuplot", help="emit a gnuplot script for the CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hbvm",
        description="Energy-conserving collocation solves of Hamiltonian "
                    "boundary value problems: periodic orbits and optimal "
                    "transfers in the restricted three-body problem.")
    subs = parser.add_subparsers(dest="kind", required=True)

    sub = subs.add_parser("ivp", help="fixed-step initial value propagation")
    _add_common_flags(sub)
    sub.add_argument("--model", choices=["hill", "crtbp-planar", "crtbp-spatial",
                                         "hill-extended", "crtbp-extended"])
    sub.add_argument("--mu", type=float)
    sub.add_argument("--y0", type=float, nargs="+")
    sub.add_argument("--tf", type=float)

    sub = subs.add_parser("lyapunov-period", help="planar orbit by period")
    _add_common_flags(sub)
    sub.add_argument("--mu", type=float)
    sub.add_argument("--T-days", type=float, dest="T_days")
    sub.add_argument("--guess-amplitude", type=float, dest="guess_amplitude")
    sub.add_argument("--via-period-days", type=float, nargs="+",
                     dest="via_period_days")

    sub = subs.add_parser("lyapunov-energy", help="planar orbit by energy")
    _add_common_flags(sub)
    sub.add_argument("--mu", type=float)
    sub.add_argument("--H", type=float, dest="H")
    sub.add_argument("--guess-amplitude", type=float, dest="guess_amplitude")
    sub.add_argument("--guess-period-days", type=float, dest="guess_period_days")

    sub = subs.add_parser("halo-period", help="spatial halo orbit by period")
    _add_common_flags(sub)
    sub.add_argument("--mu", type=float)
    sub.add_argument("--T-days", type=float, dest="T_days")
    sub.add_argument("--guess-amplitude", type=float, dest="guess_amplitude")
    sub.add_argument("--aspect", type=float)

    sub = subs.add_parser("halo-energy", help="spatial halo orbit by energy")
    _add_common_flags(sub)
    sub.add_argument("--mu", type=float)
    sub.add_argument("--H", type=float, dest="H")
    sub.add_argument("--guess-amplitude", type=float, dest="guess_amplitude")
    sub.add_argument("--aspect", type=float)
    sub.add_argument("--guess-period-days", type=float, dest="guess_period_days")

    sub = subs.add_parser("hill-transfer", help="optimal deployment transfer "
                                                "near the Hill L2 point")
    _add_common_flags(sub)
    sub.add_argument("--tf", type=float)
    sub.add_argument("--p2", type=float, nargs=2, metavar=("DQ1", "DQ2"))
    sub.add_argument("--tf-continuation", type=float, nargs="+",
                     dest="tf_continuation")

    sub = subs.add_parser("halo-transfer", help="optimal halo-to-halo transfer")
    _add_common_flags(sub)
    sub.add_argument("--mu", type=float)
    sub.add_argument("--period-a-days", type=float, dest="period_a_days")
    sub.add_argument("--energy-b", type=float, dest="energy_b")
    sub.add_argument("--T-days", type=float, dest="T_days")
    sub.add_argument("--guess-amplitude", type=float, dest="guess_amplitude")
    sub.add_argument("--aspect", type=float)

    sub = subs.add_parser("continuation", help="warm-started parameter sweep")
    _add_common_flags(sub)
    sub.add_argument("--mu", type=float)
    sub.add_argument("--experiment", choices=["lyapunov-period", "lyapunov-energy",
                                              "halo-period", "halo-energy"])
    sub.add_argument("--values", type=float, nargs="+")
    sub.add_argument("--guess-amplitude", type=float, dest="guess_amplitude")
    sub.add_argument("--aspect", type=float)

    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    kind = args.pop("kind")
    config_path = args.pop("config", None)
    return run(kind, config_path, **args)


if __name__ == "__main__":
    sys.exit(main())
