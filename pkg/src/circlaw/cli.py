"""Command-line driver: profile loading, experiment dispatch, report files.

Subcommands: solve, density, stability-audit, and montecarlo with the trial
runners {locallaw | radius | histogram | girko-audit | eigenstats}.  Runs
are reproducible: every trial derives its stream from (seed, trial index),
trials may fan out over a thread pool but are aggregated in index order,
and every output artifact embeds the run configuration and a format
version.

Exit codes: 0 success, 2 input error, 3 numeric failure, 4 acceptance-cap
violation in --check mode.  Failures are reported as one machine-readable
JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import density, dyson, ensemble, girko, linalg, stability

FORMAT_VERSION = "1"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_CAP = 4


class CliInputError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class CapViolation(Exception):
    pass


def _f17(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _write_json(path: Path, config: dict, payload: dict):
    doc = {"format_version": FORMAT_VERSION, "config": _jsonable(config), **_jsonable(payload)}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, config: dict, header: str, rows):
    lines = [f"# format_version={FORMAT_VERSION}",
             "# config=" + json.dumps(_jsonable(config), sort_keys=True),
             header]
    for row in rows:
        lines.append(",".join(_f17(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _load_profile(args) -> dyson.VarianceProfile:
    spec = args.profile
    if spec is None:
        raise CliInputError("missing-argument", "--profile is required")
    if spec.endswith(".csv"):
        profile = dyson.load_profile_csv(spec)
    else:
        if args.n is None:
            raise CliInputError("missing-argument", "--n is required with a generator profile")
        params = {}
        if spec in ("twoblock", "two-block"):
            params = {"a": args.block_a, "b": args.block_b, "split": args.split}
        elif spec == "smooth":
            params = {"kind": args.smooth_kind}
        profile = dyson.profile_from_spec(spec, args.n, **params)
    return dyson.normalize(profile)


def _resolve_eta(args, n: int) -> tuple[float, str]:
    if args.eta == "auto":
        return n ** -0.5, "bulk"
    eta = float(args.eta)
    tau = abs(complex(args.z_re, args.z_im)) ** 2 if hasattr(args, "z_re") else 0.0
    regime, _, _ = ensemble.predicted_local_law_bounds(n, eta, tau)
    return eta, regime


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("CIRCLAW_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_trials(n_threads: int, trials: int, fn):
    """Run trial indices through a pool; deterministic aggregation by index."""
    results: list = [None] * trials
    failures: list[dict] = []

    def wrapped(t):
        try:
            return t, fn(t), None
        except Exception as exc:  # recorded, excluded from aggregates
            return t, None, f"{type(exc).__name__}: {exc}"

    if n_threads <= 1:
        outcomes = [wrapped(t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(wrapped, range(trials)))
    for t, value, err in outcomes:
        if err is None:
            results[t] = value
        else:
            failures.append({"trial": t, "error": err})
    if trials and len(failures) > 0.10 * trials:
        raise dyson.NoConvergenceError(
            f"{len(failures)} of {trials} trials failed: {failures[0]['error']}"
        )
    return [r for r in results if r is not None], failures


def _config_echo(args) -> dict:
    skip = {"func"}
    out = {}
    for key, val in sorted(vars(args).items()):
        if key in skip or val is None:
            continue
        out[key] = val
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_solve(args) -> int:
    profile = _load_profile(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = dyson.SolverOptions(tol=args.tol)
    if args.limit:
        sol = dyson.solve_limit(profile, args.tau, tau_star=args.tau_star, opts=opts)
    else:
        if args.eta is None:
            raise CliInputError("missing-argument", "--eta is required unless --limit is set")
        sol = dyson.solve(profile, float(args.eta), args.tau, opts=opts)
    cfg = _config_echo(args)
    rows = [(i, sol.v1[i], sol.v2[i], sol.u[i]) for i in range(sol.n)]
    _write_csv(out / "solution.csv", cfg, "index,v1,v2,u", rows)
    _write_json(out / "solve.json", cfg, {
        "eta": sol.eta, "tau": sol.tau, "iterations": sol.iterations,
        "residual": sol.residual, "v1_mean": float(sol.v1.mean()),
        "v2_mean": float(sol.v2.mean()),
    })
    return EXIT_OK


def cmd_density(args) -> int:
    profile = _load_profile(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    taus = _parse_grid(args.tau_grid)
    cfg = _config_echo(args)

    methods = ("derivative", "integral") if args.method == "both" else (args.method,)
    profiles = {m: density.density_profile(profile, taus, tau_star=args.tau_star, method=m)
                for m in methods}
    main = profiles[methods[0]]
    main.to_csv(out / "density.csv")
    summary = {"methods": list(methods), **main.summary()}
    if len(profiles) == 2:
        gap = float(np.abs(profiles["derivative"].sigma_vals - profiles["integral"].sigma_vals).max())
        summary["cross_method_gap"] = gap
    _write_json(out / "density.json", cfg, summary)
    if args.grid_2d:
        density.export_2d(main, out / "density_2d.csv")
    return EXIT_OK


def cmd_stability_audit(args) -> int:
    profile = _load_profile(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    points = _parse_points(args.points)
    sols = [dyson.solve(profile, eta, tau) for eta, tau in points]
    report = stability.diagnostic_report(profile, sols)
    _write_json(out / "stability.json", _config_echo(args), {"points": report})
    return EXIT_OK


def _mc_locallaw(args, profile, out, cfg) -> int:
    n = args.n
    eta, regime = _resolve_eta(args, n)
    z = complex(args.z_re, args.z_im)
    config = ensemble.EnsembleConfig(n=n, profile=profile, entry_law=args.entry_law,
                                     base_seed=args.seed, trials=args.trials)
    sol = dyson.solve(profile, eta, abs(z) ** 2)
    reports, failures = _run_trials(_threads(args), args.trials,
                                    lambda t: ensemble.local_law_error(config, z, eta, t, sol=sol))
    scaled_inf = [r.err_inf / r.predicted_inf for r in reports]
    scaled_avg = [r.err_avg / r.predicted_avg for r in reports]
    payload = {
        "z": z, "eta": eta, "regime": regime,
        "err_inf_max": max(r.err_inf for r in reports),
        "err_avg_max": max(r.err_avg for r in reports),
        "scaled_inf_max": max(scaled_inf), "scaled_avg_max": max(scaled_avg),
        "failures": failures,
    }
    _write_json(out / "locallaw.json", cfg, payload)
    _write_csv(out / "locallaw.csv", cfg, "trial,err_inf,err_avg,scaled_inf,scaled_avg",
               [(t, r.err_inf, r.err_avg, si, sa)
                for t, (r, si, sa) in enumerate(zip(reports, scaled_inf, scaled_avg))])
    if args.check and max(max(scaled_inf), max(scaled_avg)) > args.cap:
        raise CapViolation(f"scaled local-law error exceeds cap {args.cap}")
    return EXIT_OK


def _mc_radius(args, profile, out, cfg) -> int:
    config = ensemble.EnsembleConfig(n=args.n, profile=profile, entry_law=args.entry_law,
                                     base_seed=args.seed, trials=args.trials)
    reports, failures = _run_trials(
        _threads(args), args.trials,
        lambda t: float(np.abs(linalg.general_eigenvalues(ensemble.sample(config, t).x)).max()))
    radii = np.array(reports)
    rep = ensemble.RadiusReport(n=args.n, trials=len(reports), radii=radii)
    payload = {"quantiles": rep.quantiles(), "max_deviation": float(rep.deviations.max()),
               "failures": failures}
    _write_json(out / "radius.json", cfg, payload)
    _write_csv(out / "radius.csv", cfg, "trial,rho", list(enumerate(radii)))
    if args.check and rep.deviations.max() > args.cap:
        raise CapViolation(f"spectral radius deviation exceeds cap {args.cap}")
    return EXIT_OK


def _mc_histogram(args, profile, out, cfg) -> int:
    config = ensemble.EnsembleConfig(n=args.n, profile=profile, entry_law=args.entry_law,
                                     base_seed=args.seed, trials=args.trials)
    rep = girko.histogram_vs_sigma(config, radial_bins=args.bins, tau_star=args.tau_out - 1.0)
    bulk = rep.bulk_mask(0.8)
    devs = np.abs(rep.empirical_density - rep.sigma)[bulk] / np.maximum(rep.stderr[bulk], 1e-300)
    payload = {
        "outside_fraction": rep.outside_fraction,
        "outside_threshold": rep.outside_threshold,
        "bulk_max_stderr_multiples": float(devs.max()),
        "total_eigenvalues": rep.total_eigenvalues,
    }
    rep.to_csv(out / "histogram.csv")
    _write_json(out / "histogram.json", cfg, payload)
    if args.check and (rep.outside_fraction > 0 or devs.max() > args.cap):
        raise CapViolation("histogram deviates from the density beyond the cap")
    return EXIT_OK


def _mc_girko_audit(args, profile, out, cfg) -> int:
    config = ensemble.EnsembleConfig(n=args.n, profile=profile, entry_law=args.entry_law,
                                     base_seed=args.seed, trials=args.trials)
    tf = girko.TestFunction(center=complex(args.z_re, args.z_im),
                            scale_exponent=args.scale_exponent, n=args.n)
    rep = girko.master_formula_audit(config, tf)
    payload = rep.to_dict()
    payload["constants"] = rep.constants
    _write_json(out / "girko_audit.json", cfg, payload)
    _write_csv(out / "girko_audit.csv", cfg,
               "trial,term1,term2,term3,total,lhs_discrepancy,identity_gap",
               [(t.trial, t.term1, t.term2, t.term3, t.total, t.lhs_discrepancy, t.identity_gap)
                for t in rep.trials])
    if args.check and rep.constants.max() > args.cap:
        raise CapViolation(f"master-formula constant exceeds cap {args.cap}")
    return EXIT_OK


def _mc_eigenstats(args, profile, out, cfg) -> int:
    config = ensemble.EnsembleConfig(n=args.n, profile=profile, entry_law=args.entry_law,
                                     base_seed=args.seed, trials=args.trials)
    z = complex(args.z_re, args.z_im)

    def one(t):
        rep = ensemble.eigen_statistics(ensemble.sample(config, t), z,
                                        compute_vectors=args.vectors)
        return rep

    reports, failures = _run_trials(_threads(args), args.trials, one)
    min_abs = [r.min_abs_lambda for r in reports]
    payload = {
        "z": z,
        "min_abs_lambda": min_abs,
        "count_constants_max": float(max(r.count_constants.max() for r in reports)),
        "failures": failures,
    }
    if args.vectors:
        sup = np.concatenate([r.sup_norms for r in reports])
        payload["sup_norm_max"] = float(sup.max())
        payload["delocalization_bound"] = args.n ** (-0.5 + 0.25)
    _write_json(out / "eigenstats.json", cfg, payload)
    _write_csv(out / "eigenstats.csv", cfg, "trial,min_abs_lambda",
               list(enumerate(min_abs)))
    if args.check and args.vectors and payload["sup_norm_max"] > payload["delocalization_bound"]:
        raise CapViolation("eigenvector sup norm exceeds the delocalization bound")
    return EXIT_OK


MONTECARLO = {
    "locallaw": _mc_locallaw,
    "radius": _mc_radius,
    "histogram": _mc_histogram,
    "girko-audit": _mc_girko_audit,
    "eigenstats": _mc_eigenstats,
}


def cmd_montecarlo(args) -> int:
    profile = _load_profile(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return MONTECARLO[args.experiment](args, profile, out, _config_echo(args))


# ---------------------------------------------------------------------------
# Argument handling


def _parse_grid(spec: str) -> np.ndarray:
    """Parse 'start:stop:count' or a comma list into a tau grid."""
    try:
        if ":" in spec:
            start, stop, count = spec.split(":")
            return np.linspace(float(start), float(stop), int(count))
        return np.array([float(v) for v in spec.split(",")])
    except ValueError as exc:
        raise CliInputError("grid-parse", f"cannot parse grid {spec!r}: {exc}") from exc


def _parse_points(spec: str) -> list[tuple[float, float]]:
    """Parse 'eta,tau;eta,tau;...' into (eta, tau) pairs."""
    try:
        pts = []
        for chunk in spec.split(";"):
            eta_s, tau_s = chunk.split(",")
            pts.append((float(eta_s), float(tau_s)))
        return pts
    except ValueError as exc:
        raise CliInputError("points-parse", f"cannot parse points {spec!r}: {exc}") from exc


def _add_profile_flags(p):
    p.add_argument("--profile", help="constant | twoblock | smooth | path/to/profile.csv")
    p.add_argument("--n", type=int, help="dimension for generator profiles")
    p.add_argument("--block-a", type=float, default=1.0)
    p.add_argument("--block-b", type=float, default=4.0)
    p.add_argument("--split", type=float, default=0.3)
    p.add_argument("--smooth-kind", default="cosine")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", help="TOML file with defaults for any flag")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="circlaw")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the self-consistent equations at one point")
    _add_profile_flags(p)
    p.add_argument("--eta")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--limit", action="store_true", help="eta = 0 limit solution")
    p.add_argument("--tau-star", type=float, default=0.05)
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("density", help="radial density of states on a tau grid")
    _add_profile_flags(p)
    p.add_argument("--tau-grid", default="0:0.9:10")
    p.add_argument("--method", choices=["derivative", "integral", "both"], default="derivative")
    p.add_argument("--tau-star", type=float, default=0.05)
    p.add_argument("--grid-2d", action="store_true", help="also export a 2-D rendering")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("stability-audit", help="operator identities at (eta, tau) points")
    _add_profile_flags(p)
    p.add_argument("--points", default="0.1,0.3;0.01,0.5;1,0;0.05,2")
    p.set_defaults(func=cmd_stability_audit)

    p = sub.add_parser("montecarlo", help="sampled-matrix experiments")
    p.add_argument("experiment", choices=sorted(MONTECARLO))
    _add_profile_flags(p)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entry-law", choices=list(ensemble.ENTRY_LAWS), default="complex-gaussian")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: CIRCLAW_THREADS or cpu count)")
    p.add_argument("--z-re", type=float, default=0.3)
    p.add_argument("--z-im", type=float, default=0.0)
    p.add_argument("--eta", default="auto", help="spectral scale or 'auto' for n^(-1/2)")
    p.add_argument("--bins", type=int, default=24)
    p.add_argument("--tau-out", type=float, default=1.2, help="outside threshold on |z|^2")
    p.add_argument("--scale-exponent", type=float, default=0.0)
    p.add_argument("--vectors", action="store_true", help="eigenstats: also measure eigenvectors")
    p.add_argument("--check", action="store_true", help="exit 4 when a cap is violated")
    p.add_argument("--cap", type=float, default=10.0)
    p.set_defaults(func=cmd_montecarlo)

    return parser


def _apply_config_file(args, argv):
    """Merge TOML values under explicit command-line flags.

    Precedence: argparse defaults < config file < flags actually present in
    argv (full option names, --key or --key=value form).
    """
    try:
        with open(args.config, "rb") as fh:
            overrides = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise CliInputError("config-parse", f"cannot read config file: {exc}") from exc
    explicit = {tok.split("=", 1)[0][2:].replace("-", "_")
                for tok in argv if tok.startswith("--")}
    known = set(vars(args))
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if attr not in known:
            raise CliInputError("config-parse", f"unknown config key {key!r}")
        if attr not in explicit:
            setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:  # pragma: no cover - script entry
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None) is not None:
            args = _apply_config_file(args, argv)
        return args.func(args)
    except CliInputError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_INPUT
    except dyson.ProfileParseError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_INPUT
    except (FileNotFoundError, ValueError) as exc:
        _emit_error("input", str(exc))
        return EXIT_INPUT
    except CapViolation as exc:
        _emit_error("cap-violation", str(exc))
        return EXIT_CAP
    except (dyson.NoConvergenceError, dyson.EdgeTooCloseError, dyson.SingularStabilityError,
            linalg.NoConvergenceError, linalg.ExactSingularError, linalg.MinusInfinityError,
            girko.GridTooCoarseError, ArithmeticError) as exc:
        _emit_error("numeric", str(exc))
        return EXIT_NUMERIC


def _emit_error(kind: str, message: str):
    sys.stderr.write(json.dumps({"error": {"kind": kind, "message": message}}) + "\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
