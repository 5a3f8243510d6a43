"""Command-line driver for reproducible experiments.

Subcommands: sample, solve, expand, lattice, density, minimize, verify,
report.  Every run writes a schema-versioned JSON manifest containing
the canonical configuration and its SHA-256 hash, so an output directory
is sufficient to re-run the command bit-identically.

Exit codes: 0 success, 1 usage or invalid configuration, 2 I/O failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .fbm import (
    GridPath,
    HurstParam,
    empirical_covariance,
    covariance,
    sample_paths,
    write_binary,
    write_csv,
)
from .young import holder_seminorm, solve_ode, write_solution_csv
from .models import get_model, REGISTRY
from .expansion import build_lattice, phi_hierarchy, write_hierarchy_csv, remainder
from .malliavin import (
    directional_derivative,
    estimate_density,
    second_derivative,
    nondegeneracy_profile,
    write_density_csv,
)
from .cameron_martin import (
    VolterraKernel,
    KernelProjector,
    minimize_energy,
    minimizer_to_json,
    second_order_form,
)
from .asymptotics import (
    off_diagonal_pipeline,
    on_diagonal_pipeline,
    write_pipeline_csv,
)

MANIFEST_SCHEMA = "fbmflow.manifest/1"
REPORT_SCHEMA = "fbmflow.report/1"

LATTICE_KINDS = (
    "lambda1", "lambda2", "lambda2-prime",
    "lambda3", "lambda3-prime", "lambda4",
)


class UsageError(Exception):
    """Invalid configuration or arguments (exit 1)."""


class NumericalError(Exception):
    """Numerical failure such as solver non-convergence (exit 3)."""


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1 in this tool, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration


def read_config(path: str) -> dict:
    """Single key = value per line; # comments and blank lines ignored."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected 'key = value'")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def canonical_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_config(cfg).encode()).hexdigest()


def _merged_config(args, keys) -> dict:
    """File config overridden by explicitly supplied flags."""
    cfg = dict(args._file_config)
    for key in keys:
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            cfg[key] = ",".join(str(v) for v in val) if isinstance(val, list) \
                else str(val)
    return cfg


def write_manifest(outdir: str, command: str, cfg: dict, outputs) -> str:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "command": command,
        "config": {k: cfg[k] for k in sorted(cfg)},
        "config_hash": config_hash(cfg),
        "outputs": sorted(outputs),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _outdir(args) -> str:
    out = args.out or os.environ.get("FBMFLOW_OUT", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _model_from_config(cfg: dict):
    name = cfg.get("model", "affine")
    kwargs = {}
    if name == "affine" and "b" in cfg:
        kwargs["drift"] = float(cfg["b"])
    return get_model(name, **kwargs)


def _parse_point(text: str, n: int) -> np.ndarray:
    vals = np.array([float(x) for x in text.split(",")], dtype=float)
    if vals.shape[0] != n:
        raise UsageError(f"point '{text}' has dimension {vals.shape[0]}, "
                         f"model needs {n}")
    return vals


def _hurst(cfg: dict) -> HurstParam:
    return HurstParam(float(cfg.get("H", 0.75)))


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(args) -> int:
    cfg = _merged_config(args, ("H", "N", "M", "seed", "dim"))
    hurst = _hurst(cfg)
    n, m = int(cfg.get("N", 128)), int(cfg.get("M", 100))
    seed, dim = int(cfg.get("seed", 0)), int(cfg.get("dim", 1))
    ens = sample_paths(hurst, n, m, seed, dim=dim)
    outdir = _outdir(args)
    csv_path = os.path.join(outdir, "paths.csv")
    bin_path = os.path.join(outdir, "paths.bin")
    with open(csv_path, "w", encoding="utf-8") as fh:
        write_csv(fh, ens)
    with open(bin_path, "wb") as fh:
        write_binary(fh, ens)
    write_manifest(outdir, "sample", cfg, ["paths.csv", "paths.bin"])
    print(f"wrote {m} paths (H={hurst.value}, N={n}) to {outdir}")
    return 0


def cmd_solve(args) -> int:
    cfg = _merged_config(args, ("model", "b", "H", "N", "seed", "a",
                                "clock-scale"))
    hurst = _hurst(cfg)
    vf = _model_from_config(cfg)
    n = int(cfg.get("N", 128))
    seed = int(cfg.get("seed", 0))
    a = _parse_point(cfg.get("a", ",".join(["0"] * vf.n)), vf.n)
    ens = sample_paths(hurst, n, 1, seed, dim=vf.d)
    sol = solve_ode(vf, ens.path(0), a,
                    clock_scale=float(cfg.get("clock-scale", 1.0)))
    outdir = _outdir(args)
    path = os.path.join(outdir, "solution.csv")
    with open(path, "w", encoding="utf-8") as fh:
        write_solution_csv(fh, sol)
    write_manifest(outdir, "solve", cfg, ["solution.csv"])
    print(f"solved {vf.name} at N={n}; endpoint {sol.endpoint}")
    return 0


def cmd_expand(args) -> int:
    cfg = _merged_config(args, ("model", "b", "H", "N", "seed", "a",
                                "kappa-max", "gamma-slope"))
    hurst = _hurst(cfg)
    vf = _model_from_config(cfg)
    n = int(cfg.get("N", 128))
    seed = int(cfg.get("seed", 0))
    a = _parse_point(cfg.get("a", ",".join(["0"] * vf.n)), vf.n)
    kappa_max = float(cfg.get("kappa-max", 2.0))
    slope = float(cfg.get("gamma-slope", 1.0))
    times = np.linspace(0.0, 1.0, n + 1)
    gamma = GridPath(times, np.broadcast_to(slope * times, (vf.d, n + 1)).copy())
    ens = sample_paths(hurst, n, 1, seed, dim=vf.d)
    hier = phi_hierarchy(vf, gamma, ens.values[0], hurst, kappa_max, a)
    outdir = _outdir(args)
    path = os.path.join(outdir, "hierarchy.csv")
    with open(path, "w", encoding="utf-8") as fh:
        write_hierarchy_csv(fh, hier)
    write_manifest(outdir, "expand", cfg, ["hierarchy.csv"])
    print(f"expanded {vf.name} up to kappa={kappa_max} "
          f"({len(hier.kappas)} exponents)")
    return 0


def cmd_lattice(args) -> int:
    cfg = _merged_config(args, ("H", "cutoff", "kinds"))
    hurst = _hurst(cfg)
    cutoff = float(cfg.get("cutoff", 5.0))
    kinds = cfg.get("kinds", ",".join(LATTICE_KINDS)).split(",")
    for kind in kinds:
        if kind not in LATTICE_KINDS:
            raise UsageError(f"unknown lattice kind '{kind}'")
    from .expansion import lattice_table
    table = lattice_table([build_lattice(k, hurst, cutoff) for k in kinds])
    if args.out is None:
        sys.stdout.write(table)
        return 0
    outdir = _outdir(args)
    path = os.path.join(outdir, "lattice.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(table)
    write_manifest(outdir, "lattice", cfg, ["lattice.csv"])
    return 0


def cmd_density(args) -> int:
    cfg = _merged_config(args, ("model", "b", "H", "N", "M", "seed", "a",
                                "t", "points"))
    hurst = _hurst(cfg)
    vf = _model_from_config(cfg)
    a = _parse_point(cfg.get("a", ",".join(["0"] * vf.n)), vf.n)
    t = float(cfg.get("t", 0.5))
    pts_text = cfg.get("points", cfg.get("a", ",".join(["0"] * vf.n)))
    points = np.array([
        [float(x) for x in chunk.split(",")] for chunk in pts_text.split(";")
    ])
    est = estimate_density(
        vf, t, a, points, hurst,
        n_paths=int(cfg.get("M", 10000)), seed=int(cfg.get("seed", 0)),
        n_steps=int(cfg.get("N", 64)),
    )
    outdir = _outdir(args)
    path = os.path.join(outdir, "density.csv")
    with open(path, "w", encoding="utf-8") as fh:
        write_density_csv(fh, est)
    write_manifest(outdir, "density", cfg, ["density.csv"])
    print(f"density at t={t}: {est.values}")
    return 0


def cmd_minimize(args) -> int:
    cfg = _merged_config(args, ("model", "b", "H", "a", "a-prime"))
    hurst = _hurst(cfg)
    vf = _model_from_config(cfg)
    a = _parse_point(cfg.get("a", ",".join(["0"] * vf.n)), vf.n)
    a_prime = _parse_point(cfg.get("a-prime", ",".join(["1"] * vf.n)), vf.n)
    try:
        sol = minimize_energy(vf, a, a_prime, hurst)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"minimization failed: {exc}") from exc
    if not sol.converged:
        raise NumericalError(
            f"minimizer did not converge in {sol.iterations} iterations; "
            f"endpoint residual {sol.endpoint_residual:.3e}, "
            f"stationarity residual {sol.stationarity_residual:.3e}"
        )
    outdir = _outdir(args)
    path = os.path.join(outdir, "minimizer.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(minimizer_to_json(sol))
        fh.write("\n")
    write_manifest(outdir, "minimize", cfg, ["minimizer.json"])
    print(f"energy {sol.energy:.12g} in {sol.iterations} iterations")
    return 0


# ---------------------------------------------------------------------------
# verification suites


def _suite_fbm(cfg):
    hurst, seed = _hurst(cfg), int(cfg.get("seed", 0))
    n, m = int(cfg.get("N", 128)), int(cfg.get("M", 5000))
    ens = sample_paths(hurst, n, m, seed)
    rng = np.random.default_rng(seed)
    checks = []
    for _ in range(20):
        i, j = sorted(rng.integers(1, n + 1, size=2))
        emp, se = empirical_covariance(ens, i, j)
        exact = float(covariance(hurst, ens.times[i], ens.times[j]))
        checks.append({
            "s": float(ens.times[i]), "t": float(ens.times[j]),
            "empirical": emp, "exact": exact, "std_error": se,
            "pass": bool(abs(emp - exact) <= 3.0 * se),
        })
    return {"checks": checks}, all(c["pass"] for c in checks)


def _suite_young(cfg):
    hurst, seed = _hurst(cfg), int(cfg.get("seed", 0))
    n = int(cfg.get("N", 1024))
    vf = get_model("1d-sin")
    ens = sample_paths(hurst, n, 4, seed)
    sol = solve_ode(vf, ens.values, np.zeros(1), times=ens.times)
    prod = np.einsum("...ijt,...jkt->...ikt", sol.jacobian, sol.jacobian_inv)
    resid = float(np.max(np.abs(prod - np.eye(vf.n)[:, :, None])))
    ok = resid < 1e-4
    return {"jacobian_identity_residual": resid, "tolerance": 1e-4}, ok


def _suite_expansion(cfg):
    hurst = _hurst(cfg)
    h = hurst.value
    report = {}
    lat = build_lattice("lambda1", hurst, 3.0)
    vals = sorted({
        n1 + n2 / h
        for n1 in range(4) for n2 in range(4)
        if n1 + n2 / h <= 3.0 + 1e-12
    })
    got = [e.value for e in lat]
    ok = len(vals) == len(got) and all(
        abs(x - y) < 1e-9 for x, y in zip(vals, got)
    )
    report["lambda1_brute_force"] = {"expected": vals, "got": got}
    # affine hierarchy sub-checks: phi^1 = w, phi^2 = 0
    vf = get_model("affine")
    times = np.linspace(0.0, 1.0, 129)
    gamma = GridPath(times, np.zeros((1, 129)))
    ens = sample_paths(hurst, 128, 2, int(cfg.get("seed", 0)))
    hier = phi_hierarchy(vf, gamma, ens.values, hurst, 2.0 + 1e-9, np.zeros(1))
    r1 = float(np.max(np.abs(hier.path(1.0) - ens.values)))
    r2 = float(np.max(np.abs(hier.path(2.0))))
    report["affine_phi1_is_w"] = r1
    report["affine_phi2_is_zero"] = r2
    ok = ok and r1 < 1e-12 and r2 < 1e-12
    return report, ok


def _suite_malliavin(cfg):
    hurst, seed = _hurst(cfg), int(cfg.get("seed", 0))
    vf = get_model("1d-sin")
    n = int(cfg.get("N", 128))
    times = np.linspace(0.0, 1.0, n + 1)
    gamma = GridPath(times, np.zeros((1, n + 1)))
    ens = sample_paths(hurst, n, 8, seed)
    a = np.zeros(1)
    hpath = GridPath(times, (times**1.5)[None, :])
    eps_grid = [0.125, 0.0625, 0.03125, 0.015625]
    first, second = [], []
    for eps in eps_grid:
        xi = directional_derivative(vf, eps, ens.values, gamma, a, hpath, hurst)
        first.append(float(np.sqrt(np.mean(xi[..., -1] ** 2))))
        xi2 = second_derivative(vf, eps, ens.values, gamma, a, hpath, hpath, hurst)
        second.append(float(np.sqrt(np.mean(xi2[..., -1] ** 2))))
    s1 = float(np.polyfit(np.log(eps_grid), np.log(first), 1)[0])
    s2 = float(np.polyfit(np.log(eps_grid), np.log(second), 1)[0])
    ok = abs(s1 - 1.0) < 0.05 and abs(s2 - 2.0) < 0.1
    return {"first_order_slope": s1, "second_order_slope": s2}, ok


def _suite_cm(cfg):
    hurst = _hurst(cfg)
    kern = VolterraKernel(hurst)
    resid = float(kern.factorization_residual(np.linspace(0.05, 1.0, 24)))
    vf = get_model("affine")
    sol = minimize_energy(vf, np.zeros(1), np.ones(1), hurst)
    report = {
        "factorization_residual": resid,
        "affine_energy": sol.energy,
        "affine_nu_bar": float(np.asarray(sol.nu_bar)[0]),
    }
    ok = (resid < 1e-3 and abs(sol.energy - 1.0) < 1e-8
          and abs(float(np.asarray(sol.nu_bar)[0]) - 1.0) < 1e-6)
    return report, ok


def _suite_on_diag(cfg):
    hurst = _hurst(cfg)
    vf = _model_from_config(cfg)
    res = on_diagonal_pipeline(
        vf, np.zeros(vf.n), hurst,
        n_paths=int(cfg.get("M", 100000)),
        n_steps=int(cfg.get("N", 64)),
        seed=int(cfg.get("seed", 0)),
    )
    fit = res["fit"]
    c0 = float(fit.coefficients[0])
    target = (2.0 * math.pi) ** (-vf.n / 2.0)
    ok = abs(c0 / target - 1.0) < 0.03
    return {
        "c0": c0, "c0_target": target,
        "coefficients": [float(c) for c in fit.coefficients],
        "exponents": [e.value for e in fit.exponents],
        "rows": res["rows"],
    }, ok


def _suite_off_diag(cfg):
    hurst = _hurst(cfg)
    vf = _model_from_config(cfg)
    rep = off_diagonal_pipeline(
        vf, np.zeros(vf.n), np.ones(vf.n), hurst,
        n_paths=int(cfg.get("M", 100000)),
        n_steps=int(cfg.get("N", 64)),
        seed=int(cfg.get("seed", 0)),
    )
    target = (2.0 * math.pi) ** (-vf.n / 2.0)
    ok = (abs(rep.energy - float(vf.n)) < 1e-6
          and abs(rep.leading_coeff / target - 1.0) < 0.05)
    return {
        "energy": rep.energy,
        "beta": rep.beta,
        "leading_coeff": rep.leading_coeff,
        "leading_target": target,
        "rows": rep.rows,
    }, ok


_SUITES = {
    "fbm": _suite_fbm,
    "young": _suite_young,
    "expansion": _suite_expansion,
    "malliavin": _suite_malliavin,
    "cm": _suite_cm,
    "on-diag": _suite_on_diag,
    "off-diag": _suite_off_diag,
}


def cmd_verify(args) -> int:
    if args.suite not in _SUITES:
        raise UsageError(
            f"unknown suite '{args.suite}'; choose from {sorted(_SUITES)}"
        )
    cfg = _merged_config(args, ("model", "b", "H", "N", "M", "seed"))
    report, ok = _SUITES[args.suite](cfg)
    payload = {
        "schema": REPORT_SCHEMA,
        "suite": args.suite,
        "pass": bool(ok),
        "config": {k: cfg[k] for k in sorted(cfg)},
        "config_hash": config_hash(cfg),
        "report": report,
    }
    outdir = _outdir(args)
    path = os.path.join(outdir, f"verify_{args.suite}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    write_manifest(outdir, f"verify {args.suite}", cfg,
                   [os.path.basename(path)])
    print(f"suite {args.suite}: {'PASS' if ok else 'FAIL'} ({path})")
    return 0 if ok else 3


# ---------------------------------------------------------------------------
# report: delimited output plus rendered figures


def cmd_report(args) -> int:
    cfg = _merged_config(args, ("model", "b", "H", "N", "M", "seed", "kind"))
    kind = cfg.get("kind", "on-diag")
    hurst = _hurst(cfg)
    vf = _model_from_config(cfg)
    outdir = _outdir(args)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outputs = []
    if kind == "fbm":
        ens = sample_paths(hurst, int(cfg.get("N", 128)),
                           min(int(cfg.get("M", 20)), 50),
                           int(cfg.get("seed", 0)))
        csv_path = os.path.join(outdir, "paths.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            write_csv(fh, ens)
        fig, ax = plt.subplots(figsize=(7, 4))
        for i in range(ens.n_paths):
            ax.plot(ens.times, ens.values[i, 0], lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("w(t)")
        ax.set_title(f"fractional Brownian paths, H={hurst.value}")
        fig.tight_layout()
        fig.savefig(os.path.join(outdir, "paths.png"), dpi=120)
        plt.close(fig)
        outputs = ["paths.csv", "paths.png"]
    elif kind in ("on-diag", "off-diag"):
        if kind == "on-diag":
            res = on_diagonal_pipeline(
                vf, np.zeros(vf.n), hurst,
                n_paths=int(cfg.get("M", 20000)),
                n_steps=int(cfg.get("N", 64)), seed=int(cfg.get("seed", 0)),
            )
            rows, fit = res["rows"], res["fit"]
        else:
            rep = off_diagonal_pipeline(
                vf, np.zeros(vf.n), np.ones(vf.n), hurst,
                n_paths=int(cfg.get("M", 20000)),
                n_steps=int(cfg.get("N", 64)), seed=int(cfg.get("seed", 0)),
            )
            rows, fit = rep.rows, rep.fit
        csv_path = os.path.join(outdir, "pipeline.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            write_pipeline_csv(fh, rows)
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.errorbar(fit.t, fit.values, yerr=fit.value_errors, fmt="o",
                    label="estimates")
        tt = np.linspace(fit.t.min(), fit.t.max(), 200)
        pred = sum(
            c * tt ** (e.value * fit.hurst)
            for c, e in zip(fit.coefficients, fit.exponents)
        )
        ax.plot(tt, pred, "-", label="fitted series")
        ax.set_xlabel("t")
        ax.set_ylabel("scaled density")
        ax.set_title(f"{kind} expansion, {vf.name}, H={hurst.value}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(outdir, "fit.png"), dpi=120)
        plt.close(fig)
        fit_json = {
            "schema": REPORT_SCHEMA,
            "kind": kind,
            "exponents": [e.value for e in fit.exponents],
            "coefficients": [float(c) for c in fit.coefficients],
            "std_errors": [float(s) for s in fit.std_errors],
            "residual_norm": fit.residual_norm,
            "condition_number": fit.condition_number,
        }
        with open(os.path.join(outdir, "fit.json"), "w", encoding="utf-8") as fh:
            json.dump(fit_json, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs = ["pipeline.csv", "fit.png", "fit.json"]
    else:
        raise UsageError(f"unknown report kind '{kind}'")
    write_manifest(outdir, f"report {kind}", cfg, outputs)
    print(f"report ({kind}) written to {outdir}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> _Parser:
    parser = _Parser(prog="fbmflow", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", help="output directory (default: cwd or "
                                      "FBMFLOW_OUT)")
    common.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (results are independent "
                             "of this setting)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, flags):
        p = sub.add_parser(name, parents=[common])
        for flag, kw in flags:
            p.add_argument(flag, **kw)
        p.set_defaults(func=fn)
        return p

    num = {"type": float}
    intg = {"type": int}
    txt = {}
    add("sample", cmd_sample, [("--H", num), ("--N", intg), ("--M", intg),
                               ("--seed", intg), ("--dim", intg)])
    add("solve", cmd_solve, [("--model", txt), ("--b", num), ("--H", num),
                             ("--N", intg), ("--seed", intg), ("--a", txt),
                             ("--clock-scale", num)])
    add("expand", cmd_expand, [("--model", txt), ("--b", num), ("--H", num),
                               ("--N", intg), ("--seed", intg), ("--a", txt),
                               ("--kappa-max", num), ("--gamma-slope", num)])
    add("lattice", cmd_lattice, [("--H", num), ("--cutoff", num),
                                 ("--kinds", txt)])
    add("density", cmd_density, [("--model", txt), ("--b", num), ("--H", num),
                                 ("--N", intg), ("--M", intg), ("--seed", intg),
                                 ("--a", txt), ("--t", num), ("--points", txt)])
    add("minimize", cmd_minimize, [("--model", txt), ("--b", num),
                                   ("--H", num), ("--a", txt),
                                   ("--a-prime", txt)])
    p = add("verify", cmd_verify, [("--model", txt), ("--b", num),
                                   ("--H", num), ("--N", intg), ("--M", intg),
                                   ("--seed", intg)])
    p.add_argument("suite")
    add("report", cmd_report, [("--model", txt), ("--b", num), ("--H", num),
                               ("--N", intg), ("--M", intg), ("--seed", intg),
                               ("--kind", txt)])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args._file_config = read_config(args.config) if args.config else {}
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be at least 1")
            import threadpoolctl
            with threadpoolctl.threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
