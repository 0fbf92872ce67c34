"""Command-line experiment runner.

Each subcommand reads a JSON config, writes CSV data with (seed, trial)
provenance columns, a JSON summary, and a run manifest holding the
config hash and sha256 checksums of every output.  All randomness flows
through counter-based streams keyed by the master seed, and results are
reduced in a canonical order, so outputs are byte-identical for any
``--jobs`` value.

Exit codes: 0 success, 2 invalid config, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import jsonschema

from . import __version__
from ._parallel import parallel_map
from .entropy import EllipsoidAxes, build_cover, eps_entropy_bound, kb_mb, \
    m_eps, verify_cover
from .concentration import Nonlinearity, SearchConfig, scaling_experiment
from .precond import ErmProblem, Loss, Preconditioner, precond_bgd, \
    relative_condition, solve_erm, tune_mu, vanilla_gd
from .rng import RngStream
from .smoothing import SmoothingConfig, iters_to_gap, rs_optimize
from .spectrum import CovarianceSpectrum, effective_dimension, make_spectrum, \
    sample_gaussian


class ConfigInvalid(Exception):
    pass


_SPECTRUM_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["isotropic", "power_law", "custom"]},
        "d": {"type": "integer", "minimum": 1},
        "sigma1": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "minimum": 0},
        "values": {"type": "array", "items": {"type": "number"}},
    },
    "required": ["kind"],
}

_SEARCH_SCHEMA = {
    "type": "object",
    "properties": {
        "restarts": {"type": "integer", "minimum": 1},
        "iters": {"type": "integer", "minimum": 1},
        "step": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMAS = {
    "effdim": {
        "type": "object",
        "properties": {
            "spectrum": _SPECTRUM_SCHEMA,
            "r_values": {"type": "array", "items": {"type": "number", "minimum": 1},
                         "minItems": 1},
        },
        "required": ["spectrum", "r_values"],
    },
    "entropy": {
        "type": "object",
        "properties": {
            "spectrum": _SPECTRUM_SCHEMA,
            "eps_grid": {"type": "array", "minItems": 1,
                         "items": {"type": "number", "exclusiveMinimum": 0}},
            "r": {"type": "number", "minimum": 1},
            "c": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["spectrum", "eps_grid"],
    },
    "cover": {
        "type": "object",
        "properties": {
            "axes": {"type": "array", "minItems": 1,
                     "items": {"type": "number", "exclusiveMinimum": 0}},
            "eps": {"type": "number", "exclusiveMinimum": 0},
            "n_samples": {"type": "integer", "minimum": 1},
            "delete_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        },
        "required": ["axes", "eps", "n_samples"],
    },
    "concentration": {
        "type": "object",
        "properties": {
            "spectra": {
                "type": "object",
                "additionalProperties": _SPECTRUM_SCHEMA,
                "minProperties": 1,
            },
            "n_grid": {"type": "array", "minItems": 1,
                       "items": {"type": "integer", "minimum": 2}},
            "trials": {"type": "integer", "minimum": 30},
            "r": {"type": "integer", "minimum": 2},
            "fs": {"type": "array", "items": {
                "type": "object",
                "properties": {"kind": {"enum": ["identity", "relu", "clip"]},
                               "bound": {"type": "number", "exclusiveMinimum": 0}},
                "required": ["kind"],
            }},
            "centered": {"type": "boolean"},
            "search": _SEARCH_SCHEMA,
        },
        "required": ["spectra", "n_grid", "trials", "r"],
    },
    "precondition": {
        "type": "object",
        "properties": {
            "spectrum": _SPECTRUM_SCHEMA,
            "n": {"type": "integer", "minimum": 2},
            "n_aux": {"type": "integer", "minimum": 2},
            "loss": {"enum": ["logistic", "ridge"]},
            "lam": {"type": "number", "exclusiveMinimum": 0},
            "mu_method": {"enum": ["measured", "formula"]},
            "iters": {"type": "integer", "minimum": 1},
            "probes": {"type": "integer", "minimum": 1},
            "gap_tol": {"type": "number", "exclusiveMinimum": 0},
            "gd_iters": {"type": "integer", "minimum": 1},
        },
        "required": ["spectrum", "n", "loss", "lam"],
    },
    "smooth": {
        "type": "object",
        "properties": {
            "spectrum": _SPECTRUM_SCHEMA,
            "n": {"type": "integer", "minimum": 1},
            "radius": {"type": "number", "exclusiveMinimum": 0},
            "iters": {"type": "integer", "minimum": 1},
            "batch": {"type": "integer", "minimum": 1},
            "trials": {"type": "integer", "minimum": 1},
            "gap_tol": {"type": "number", "exclusiveMinimum": 0},
            "directions": {"type": "array", "minItems": 1,
                           "items": {"enum": ["iso", "data"]}},
            "u": {"type": "number", "exclusiveMinimum": 0},
        },
        "required": ["spectrum", "n", "radius", "iters", "batch", "trials"],
    },
}


def _spectrum(cfg: dict) -> CovarianceSpectrum:
    return make_spectrum(
        cfg["kind"], d=cfg.get("d"), sigma1=cfg.get("sigma1", 1.0),
        alpha=cfg.get("alpha"), values=cfg.get("values"),
    )


def _search(cfg: dict | None, **defaults) -> SearchConfig:
    merged = dict(defaults)
    merged.update(cfg or {})
    return SearchConfig(**merged)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in fieldnames])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_effdim(config, seed, jobs, out: Path):
    sp = _spectrum(config["spectrum"])
    rows = [
        {"seed": seed, "trial": 0, "r": float(r),
         "d_eff": effective_dimension(sp, r)}
        for r in config["r_values"]
    ]
    _write_csv(out / "effdim.csv", ["seed", "trial", "r", "d_eff"], rows)
    summary = {"d": sp.dim, "sigma1": float(sp.sigmas[0]),
               "d_eff": {str(r["r"]): r["d_eff"] for r in rows}}
    return summary, ["effdim.csv"]


def run_entropy(config, seed, jobs, out: Path):
    sp = _spectrum(config["spectrum"])
    r = config.get("r", 1)
    c = config.get("c", 1.0)
    rows = []
    for eps in config["eps_grid"]:
        rows.append({
            "seed": seed, "trial": 0, "eps": float(eps),
            "m_eps": m_eps(sp, eps),
            "bound": eps_entropy_bound(sp, eps, r=r, c=c),
        })
    rows.sort(key=lambda row: -row["eps"])
    _write_csv(out / "entropy.csv", ["seed", "trial", "eps", "m_eps", "bound"], rows)
    axes = EllipsoidAxes(np.asarray(sp.sigmas) / float(sp.sigmas[0]))
    kb, mb = kb_mb(axes)
    summary = {"d": sp.dim, "r": r, "c": c, "kb_unit": kb, "mb_unit": mb}
    return summary, ["entropy.csv"]


def run_cover(config, seed, jobs, out: Path):
    axes = EllipsoidAxes(np.asarray(config["axes"], dtype=float))
    eps = config["eps"]
    root = RngStream(seed)
    cover = build_cover(axes, eps, root.child(0))
    report = verify_cover(cover, axes, config["n_samples"], root.child(1))
    rows = [{
        "seed": seed, "trial": 0, "size": cover.size,
        "violations": report["violations"], "max_dist": report["max_dist"],
    }]
    frac = config.get("delete_fraction", 0.0)
    if frac > 0:
        # Negative control: drop the cap of centers with the largest first
        # coordinate.  Uniform deletion cannot damage this grid cover (any
        # point keeps an inward grid neighbor well within eps), so the
        # control removes a contiguous extreme region instead.
        keep = max(1, int(round(cover.size * (1.0 - frac))))
        order = np.argsort(cover.centers[:, 0])[:keep]
        from .entropy import BallCover
        damaged = BallCover(eps, cover.centers[np.sort(order)], cover.grid_spacing)
        bad = verify_cover(damaged, axes, config["n_samples"], root.child(1))
        rows.append({
            "seed": seed, "trial": 1, "size": damaged.size,
            "violations": bad["violations"], "max_dist": bad["max_dist"],
        })
    _write_csv(out / "cover.csv",
               ["seed", "trial", "size", "violations", "max_dist"], rows)
    kb, mb = kb_mb(axes)
    summary = {
        "size": cover.size, "ln_size": float(np.log(cover.size)),
        "violations": rows[0]["violations"],
        "volumetric_lower": float(np.sum(np.log(np.asarray(config["axes"]) / eps))),
        "kb": kb, "mb": mb,
    }
    return summary, ["cover.csv"]


def run_concentration(config, seed, jobs, out: Path):
    spectra = {sid: _spectrum(sc) for sid, sc in config["spectra"].items()}
    r = config["r"]
    fs = None
    if "fs" in config:
        fs = [Nonlinearity(f["kind"], f.get("bound")) for f in config["fs"]]
        if len(fs) != r:
            raise ConfigInvalid("fs must list one nonlinearity per factor")
    result = scaling_experiment(
        spectra, config["n_grid"], config["trials"], r, fs=fs,
        centered=config.get("centered", True),
        search=_search(config.get("search"), restarts=8, iters=100),
        rng=RngStream(seed), jobs=jobs,
    )
    rows = [
        {"seed": row["seed"], "trial": row["trial"], "spectrum_id": row["spectrum_id"],
         "n": row["n"], "value": row["value"], "mode": row["mode"]}
        for row in result["rows"]
    ]
    rows.sort(key=lambda row: (row["spectrum_id"], row["n"], row["trial"]))
    _write_csv(out / "deviations.csv",
               ["seed", "trial", "spectrum_id", "n", "value", "mode"], rows)
    summary = {
        sid: {"slope": fit["slope"], "stderr": fit["stderr"],
              "means": [{"n": n, "mean": m, "std": s} for n, m, s in fit["means"]]}
        for sid, fit in sorted(result["slopes"].items())
    }
    return summary, ["deviations.csv"]


def run_precondition(config, seed, jobs, out: Path):
    sp = _spectrum(config["spectrum"])
    n = config["n"]
    n_aux = config.get("n_aux", n)
    lam = config["lam"]
    loss = Loss(config["loss"])
    root = RngStream(seed)
    A = sample_gaussian(sp, n, root.child(0)).rows
    A_aux = sample_gaussian(sp, n_aux, root.child(1)).rows
    gen = root.child(2).generator()
    x_nat = gen.standard_normal(sp.dim)
    x_nat /= np.linalg.norm(x_nat)
    if loss.kind == "logistic":
        b = np.where(A @ x_nat >= 0, 1.0, -1.0)
        b_aux = np.where(A_aux @ x_nat >= 0, 1.0, -1.0)
    else:
        noise = gen.standard_normal(n + n_aux)
        b = A @ x_nat + 0.1 * noise[:n]
        b_aux = A_aux @ x_nat + 0.1 * noise[n:]
    problem = ErmProblem(A, b, loss, lam)
    aux = ErmProblem(A_aux, b_aux, loss, lam)
    probes_gen = root.child(4).generator()
    n_probes = config.get("probes", 50)
    probes = probes_gen.standard_normal((n_probes, sp.dim))
    probes *= (probes_gen.uniform(0, 1, n_probes) ** (1.0 / sp.dim)
               / np.linalg.norm(probes, axis=1))[:, None]
    # Seeding the deviation search with the probe points makes the
    # measured mu dominate the deviation at every probe by construction.
    mu = tune_mu(problem, aux, method=config.get("mu_method", "measured"),
                 spectrum=sp, rng=root.child(3), inits=probes)
    phi = Preconditioner(aux, mu)
    cond = relative_condition(problem, phi, probes)
    f_star = problem.value(solve_erm(problem))
    gap_tol = config.get("gap_tol", 1e-6)
    run_p = precond_bgd(problem, phi, iters=config.get("iters", 200),
                        f_star=f_star, gap_tol=gap_tol, workers=max(jobs, 1))
    run_g = vanilla_gd(problem, iters=config.get("gd_iters", 200_000),
                       f_star=f_star, gap_tol=gap_tol, workers=max(jobs, 1))
    rows = []
    for method, run in (("precond_bgd", run_p), ("vanilla_gd", run_g)):
        for t, gap in enumerate(run.gaps):
            rows.append({"seed": seed, "trial": 0, "method": method,
                         "iter": t, "gap": float(gap)})
    _write_csv(out / "precondition.csv",
               ["seed", "trial", "method", "iter", "gap"], rows)
    summary = {
        "mu": mu, "kappa": phi.kappa,
        "L_rel": cond["L_rel"], "sigma_rel": cond["sigma_rel"],
        "f_star": f_star, "gap_tol": gap_tol,
        "rounds_precond": run_p.rounds, "rounds_gd": run_g.rounds,
        "reached_precond": bool(run_p.gaps and run_p.gaps[-1] <= gap_tol),
        "reached_gd": bool(run_g.gaps and run_g.gaps[-1] <= gap_tol),
    }
    return summary, ["precondition.csv"]


def run_smooth(config, seed, jobs, out: Path):
    sp = _spectrum(config["spectrum"])
    n = config["n"]
    R = config["radius"]
    directions = config.get("directions", ["iso", "data"])
    gap_tol = config.get("gap_tol", 1e-2)
    root = RngStream(seed)

    def run_trial(trial):
        stream = root.child(trial)
        A = sample_gaussian(sp, n, stream.child(0)).rows
        gen = stream.child(1).generator()
        x_nat = gen.standard_normal(sp.dim)
        x_nat *= 0.5 * R / np.linalg.norm(x_nat)
        b = A @ x_nat
        problem = ErmProblem(A, b, Loss("hinge"), 0.0)
        out_rows = []
        for k, direction in enumerate(directions):
            cfg = SmoothingConfig(
                radius=R, iters=config["iters"], batch=config["batch"],
                u=config.get("u"),
                direction=sp if direction == "data" else None,
            )
            run = rs_optimize(problem, cfg, rng=stream.child(2 + k),
                              f_star=0.0, gap_tol=gap_tol)
            hit = iters_to_gap(run, gap_tol)
            out_rows.append({
                "seed": seed, "trial": trial, "direction": direction,
                "iters_to_tol": -1 if hit is None else hit,
                "final_gap": float(run.gaps[-1]),
            })
        return out_rows

    chunks = parallel_map(run_trial, range(config["trials"]), jobs)
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda row: (row["trial"], row["direction"]))
    _write_csv(out / "smooth.csv",
               ["seed", "trial", "direction", "iters_to_tol", "final_gap"], rows)
    summary = {}
    for direction in sorted(set(directions)):
        hits = [row["iters_to_tol"] for row in rows
                if row["direction"] == direction and row["iters_to_tol"] >= 0]
        misses = sum(1 for row in rows
                     if row["direction"] == direction and row["iters_to_tol"] < 0)
        summary[direction] = {
            "median_iters": float(np.median(hits)) if hits else None,
            "unreached": misses,
        }
    return summary, ["smooth.csv"]


RUNNERS = {
    "effdim": run_effdim,
    "entropy": run_entropy,
    "cover": run_cover,
    "concentration": run_concentration,
    "precondition": run_precondition,
    "smooth": run_smooth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effdim",
        description="Effective-dimension concentration and optimization experiments",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--validate-only", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            config = json.load(fh)
        jsonschema.validate(config, SCHEMAS[args.subcommand])
        seed = args.seed
        if seed is None:
            env = os.environ.get("EFFDIM_SEED")
            seed = int(env) if env is not None else config.get("seed", 0)
        if not 0 <= seed < 2**64:
            raise ConfigInvalid("seed must fit in an unsigned 64-bit integer")
        jobs = args.jobs
        if jobs is None:
            env = os.environ.get("EFFDIM_JOBS")
            jobs = int(env) if env is not None else 1
        if jobs < 1:
            raise ConfigInvalid("jobs must be >= 1")
    except (OSError, ValueError, jsonschema.ValidationError, ConfigInvalid) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else exc
        print(f"config error: {msg}", file=sys.stderr)
        return 2

    if args.validate_only:
        print("config ok")
        return 0

    out = Path(args.out) if args.out else Path.cwd() / f"effdim-{args.subcommand}"
    try:
        out.mkdir(parents=True, exist_ok=True)
        started = datetime.datetime.now(datetime.timezone.utc).isoformat()
        summary, outputs = RUNNERS[args.subcommand](config, seed, jobs, out)
        _write_json(out / "summary.json", summary)
        outputs = list(outputs) + ["summary.json"]
        manifest = {
            "tool": "effdim", "version": __version__,
            "subcommand": args.subcommand,
            "config_sha256": hashlib.sha256(
                json.dumps(config, sort_keys=True).encode()).hexdigest(),
            "seed": seed, "jobs": jobs,
            "started": started,
            "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "outputs": {name: _sha256(out / name) for name in sorted(outputs)},
        }
        _write_json(out / "manifest.json", manifest)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and signal via exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(json.dumps({"out": str(out), "summary": summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
