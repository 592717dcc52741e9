"""Command-line front end: every experiment as a reproducible CSV + JSON run.

Each subcommand writes ``<out>.csv`` (the data) and ``<out>.json`` (a
summary with the command, the echoed configuration, the seed, a version
string and the wall time).  The data file depends only on the
configuration and seed, never on the thread count.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

THREADS_ENV = "ARTIFACT_THREADS"


def fmt(v) -> str:
    """17 significant digits, round-trip exact for doubles."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".16e")


def version_string() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")


# ---------------------------------------------------------------- commands

def cmd_complexity_table(a):
    from .complexity import ModelParams, annealed_complexity, scaled_log_potential
    params = ModelParams(a.p, a.tau)
    u = np.linspace(a.u_min, a.u_max, a.steps)
    rows = [(x, scaled_log_potential(params, x), annealed_complexity(params, x)) for x in u]
    return ["u", "phi_tau", "sigma"], rows, {}


def cmd_two_point(a):
    from .complexity import ModelParams, g_factor, q_function, two_point_complexity
    params = ModelParams(a.p, a.tau)
    rows = []
    for r in np.linspace(a.r_min, a.r_max, a.r_steps):
        for u in np.linspace(a.u_min, a.u_max, a.u_steps):
            rows.append((r, u, two_point_complexity(params, r, u, u), g_factor(params, r), q_function(params, r, u)))
    return ["r", "u", "sigma2", "g", "q"], rows, {}


def cmd_thresholds(a):
    from .complexity import ModelParams, thresholds
    t = thresholds(ModelParams(a.p, a.tau))
    vals = {"e_inf": t.e_inf, "e_zero": t.e_zero, "tau_p": t.tau_p, "theta": t.theta, "u_th": t.u_th}
    return list(vals), [tuple(vals.values())], vals


def cmd_sample_spectrum(a):
    from .ensemble import eigen_spectrum, sample_gee, singular_spectrum, stream
    m = sample_gee(a.n, a.tau, stream(a.seed, 0)).entries
    if a.kind == "eigen":
        ev = eigen_spectrum(m - a.z * np.eye(a.n))
        return ["re", "im"], [(z.real, z.imag) for z in ev], {}
    s = singular_spectrum(m, a.z).atoms
    return ["singular_value"], [(v,) for v in s], {}


def cmd_det_moments(a):
    from .kernel import moment_via_kernel
    from .montecarlo import estimate_abs_det_moment
    est = estimate_abs_det_moment(a.n, a.tau, a.x, a.ell, a.samples, a.seed, a.threads)
    ksign, klog = (float("nan"), float("nan"))
    if a.ell == 1 and 0 < a.tau < 1 and a.n <= 40:
        ksign, klog = moment_via_kernel(a.n, a.tau, [a.x])
    row = (a.n, a.x, a.ell, 1.0, est.log_mean, est.stderr_of_log, ksign, klog)
    extra = {"log_mean": est.log_mean, "stderr_of_log": est.stderr_of_log, "kernel_log": klog,
             "singular_samples": est.singular}
    return ["n", "x", "ell", "mc_sign", "mc_log", "mc_stderr_of_log", "kernel_sign", "kernel_log"], [row], extra


def cmd_moment_ratio_scan(a):
    from .montecarlo import moment_ratio_scan
    res = moment_ratio_scan(a.n_list, a.tau, a.x, a.ell, a.samples, a.seed, a.threads)
    rows = [(r["n"], r["log_ratio"], r["stderr"]) for r in res["rows"]]
    return ["n", "log_ratio", "stderr"], rows, {"slope": res["slope"]}


def cmd_real_density(a):
    from .montecarlo import real_eigenvalue_density
    edges = np.linspace(a.lo, a.hi, a.bins + 1)
    d = real_eigenvalue_density(a.n, a.tau, edges, a.samples, a.seed, a.threads)
    rows = [(lo, hi, v, s, k) for lo, hi, v, s, k in zip(edges[:-1], edges[1:], d.density, d.stderr, d.kernel)]
    extra = {"mean_count": d.mean_count, "mean_count_stderr": d.mean_count_stderr,
             "kernel_count": d.kernel_count, "parity_ok": d.parity_ok}
    return ["bin_lo", "bin_hi", "density", "stderr", "kernel"], rows, extra


def cmd_kernel_residual(a):
    from .kernel import kernel_residual
    rows = [(n, a.x, a.y, kernel_residual(n, a.tau, a.x, a.y)) for n in a.n_list]
    return ["n", "x", "y", "residual"], rows, {}


def cmd_delta_ratio(a):
    from .complexity import ModelParams
    from .montecarlo import delta_ratio_estimate
    est = delta_ratio_estimate(ModelParams(a.p, a.tau), a.n, a.r, a.u1, a.u2, a.samples, a.seed, a.threads)
    row = (a.n, a.r, a.u1, a.u2, 1.0, est.log_mean, est.stderr_of_log)
    return ["n", "r", "u1", "u2", "sign", "log_delta", "stderr_of_log"], [row], {
        "delta": math.exp(est.log_mean), "stderr_of_log": est.stderr_of_log}


def cmd_kacrice_count(a):
    from concurrent.futures import ThreadPoolExecutor
    from .complexity import ModelParams
    from .ensemble import stream
    from .kacrice import count_equilibria_circle, expected_crit_first_moment, sample_field

    def one(i):
        return count_equilibria_circle(sample_field(a.p, a.tau, 2, stream(a.seed, 7, i)))

    if a.threads > 1:
        with ThreadPoolExecutor(max_workers=a.threads) as ex:
            counts = list(ex.map(one, range(a.fields)))
    else:
        counts = [one(i) for i in range(a.fields)]
    good = [c for c in counts if c is not None]
    mean, se = _mean_se(good)
    rows = [(i, -1 if c is None else c) for i, c in enumerate(counts)]
    extra = {"mean_count": mean, "stderr": se, "degenerate": len(counts) - len(good),
             "all_even": all(c % 2 == 0 for c in good),
             "kac_rice": expected_crit_first_moment(ModelParams(a.p, a.tau), 2)}
    return ["field", "count"], rows, extra


def cmd_covcheck(a):
    from .montecarlo import covariance_audit
    rows, extra = covariance_audit(a.p, a.tau, a.r, a.samples, a.seed, n_field=a.n)
    return ["quantity", "i", "j", "analytic", "empirical", "stderr", "z"], rows, extra


COMMANDS = {
    "complexity-table": cmd_complexity_table,
    "two-point": cmd_two_point,
    "thresholds": cmd_thresholds,
    "sample-spectrum": cmd_sample_spectrum,
    "det-moments": cmd_det_moments,
    "moment-ratio-scan": cmd_moment_ratio_scan,
    "real-density": cmd_real_density,
    "kernel-residual": cmd_kernel_residual,
    "delta-ratio": cmd_delta_ratio,
    "kacrice-count": cmd_kacrice_count,
    "covcheck": cmd_covcheck,
}
STOCHASTIC = {"sample-spectrum", "det-moments", "moment-ratio-scan", "real-density", "delta-ratio",
              "kacrice-count", "covcheck"}


class _JsonErrorParser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}, sort_keys=True), file=sys.stderr)
        raise SystemExit(2)


def _int_list(s):
    return [int(v) for v in s.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = _JsonErrorParser(prog="artifact", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_JsonErrorParser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out", default=None, help="output stem (default: ./<command>)")
        sp.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")
        if name in STOCHASTIC:
            sp.add_argument("--seed", type=int, required=True)
        return sp

    sp = add("complexity-table", "annealed complexity and log-potential on a u grid")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--u-min", type=float, default=-4.0)
    sp.add_argument("--u-max", type=float, default=4.0)
    sp.add_argument("--steps", type=int, default=81)

    sp = add("two-point", "two-point complexity on an r x u grid (u1 = u2 = u)")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--r-min", type=float, default=-0.9)
    sp.add_argument("--r-max", type=float, default=0.9)
    sp.add_argument("--r-steps", type=int, default=19)
    sp.add_argument("--u-min", type=float, default=-3.0)
    sp.add_argument("--u-max", type=float, default=0.0)
    sp.add_argument("--u-steps", type=int, default=7)

    sp = add("thresholds", "stability edge, zero of the complexity and critical tau")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)

    sp = add("sample-spectrum", "eigenvalues or singular values of one GEE matrix")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--kind", choices=["eigen", "singular"], default="eigen")
    sp.add_argument("--z", type=float, default=0.0)

    sp = add("det-moments", "MC estimate of E|det(A - x)|^ell with the kernel value for ell = 1")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--x", type=float, default=0.0)
    sp.add_argument("--ell", type=int, default=1)
    sp.add_argument("--samples", type=int, default=10000)

    sp = add("moment-ratio-scan", "log E|det|^ell - ell log E|det| across n")
    sp.add_argument("--n-list", type=_int_list, default=[20, 40, 80, 160])
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--x", type=float, default=0.0)
    sp.add_argument("--ell", type=int, default=2)
    sp.add_argument("--samples", type=int, default=10000)

    sp = add("real-density", "histogram of real eigenvalues against the kernel density")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--bins", type=int, default=10)
    sp.add_argument("--lo", type=float, default=-2.0)
    sp.add_argument("--hi", type=float, default=2.0)
    sp.add_argument("--samples", type=int, default=100000)

    sp = add("kernel-residual", "distance between the finite-n and limiting kernels")
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--n-list", type=_int_list, default=[10, 20, 30])
    sp.add_argument("--x", type=float, default=0.0)
    sp.add_argument("--y", type=float, default=0.0)

    sp = add("delta-ratio", "MC estimate of the two-point determinant ratio")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--r", type=float, default=0.0)
    sp.add_argument("--u1", type=float, default=0.0)
    sp.add_argument("--u2", type=float, default=0.0)
    sp.add_argument("--samples", type=int, default=10000)

    sp = add("kacrice-count", "count equilibria of sampled fields on the circle")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--fields", type=int, default=2000)

    sp = add("covcheck", "MC audit of the field and conditional Jacobian covariances")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--r", type=float, default=0.3)
    sp.add_argument("--n", type=int, default=3, help="dimension for the field covariance audit")
    sp.add_argument("--samples", type=int, default=100000)
    return ap


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        try:
            args.threads = max(1, int(os.environ.get(THREADS_ENV, "1")))
        except ValueError:
            args.threads = 1
    config = {k: v for k, v in vars(args).items() if k not in ("out", "threads")}
    stem = Path(args.out or args.command)
    t0 = time.perf_counter()
    try:
        header, rows, extra = COMMANDS[args.command](args)
    except Exception as exc:  # report any module error as JSON
        print(json.dumps({"command": args.command, "error": type(exc).__name__, "message": str(exc)},
                         sort_keys=True), file=sys.stderr)
        return 1
    stem.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(stem.with_suffix(".csv"), header, rows)
    summary = {
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "threads": args.threads,
        "version": version_string(),
        "wall_time_s": time.perf_counter() - t0,
        "results": extra,
        "data_file": str(stem.with_suffix(".csv")),
    }
    text = json.dumps(_clean(summary), indent=2, sort_keys=True)
    stem.with_suffix(".json").write_text(text + "\n")
    print(text)
    return 0


def main():
    raise SystemExit(run())


if __name__ == "__main__":
    main()
