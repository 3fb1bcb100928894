"""Command-line runner: config parsing, subcommands, persistence, sweeps.

Configs are single JSON documents with physical numbers as decimal strings, so
validation happens on exact rationals. Every run lands in a directory named by a
content hash of its canonicalized config (output location excluded), which makes
sweeps resumable and results deduplicated. Files are committed write-then-rename,
with manifest.json written last as the completion marker; wall-clock metadata
lives in a separate meta.json so the scientific outputs are byte-deterministic.

Exit codes: 0 success, 2 configuration/validation problems, 3 numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from fractions import Fraction
from itertools import product

import numpy as np

from . import criteria, evolution, functionals, ground_state, problem
from . import grid as gridmod

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

CONFIG_ERRORS = (
    problem.SpecError,
    gridmod.InvalidResolution,
    gridmod.AlphaOutOfRange,
    functionals.InvalidRadius,
    criteria.FileFormat,
    criteria.SpecMismatch,
    evolution.EvolutionRestricted,
    json.JSONDecodeError,
    KeyError,
    TypeError,
    ValueError,
    OSError,
)

NUMERIC_ERRORS = (
    ground_state.NonConvergence,
    ground_state.Degenerate,
    gridmod.FactorizationFailure,
    criteria.RescaleFailure,
    criteria.DegenerateFit,
    criteria.NoBlowupVerdict,
    criteria.InsufficientSamples,
)


# ---------------------------------------------------------------------------
# config handling

def _dec(x) -> float:
    """Decimal-string (or plain number) to float, via exact rationals."""
    return float(Fraction(str(x)))


def load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def spec_from_config(cfg: dict) -> problem.ProblemSpec:
    sc = cfg["spec"]
    nl = sc["nl"]
    kind = nl["kind"]
    params = {k: v for k, v in nl.items() if k != "kind"}
    spec = problem.ProblemSpec.from_decimal(
        s=int(sc["s"]), N=int(sc["N"]), lam=sc["lam"], tau=sc["tau"],
        nl_kind=kind, **params)
    problem.validate_spec(spec)
    return spec


def grid_from_config(cfg: dict, N: int) -> gridmod.Grid:
    gc = cfg["grid"]
    return gridmod.make_grid(int(gc["M"]), _dec(gc["r_max"]), N)


def controls_from_config(cfg: dict) -> evolution.EvolveControls:
    cc = dict(cfg.get("controls", {}))
    kwargs = {}
    for key in ("t_end", "dt0", "dt_min", "cfl_c", "grad_blowup_factor",
                "conservation_tol", "R"):
        if key in cc:
            kwargs[key] = _dec(cc[key])
    for key in ("snapshot_stride", "max_steps"):
        if key in cc:
            kwargs[key] = int(cc[key])
    return evolution.EvolveControls(**kwargs)


def datum_kind_from_config(cfg: dict, default_seed: int) -> criteria.DatumKind:
    dc = cfg["datum"]
    kind = dc["kind"]
    if kind == "scaled_ground_state":
        return criteria.ScaledGroundState(c=_dec(dc["c"]))
    if kind == "nehari_rescaled":
        return criteria.NehariRescaled(seed=int(dc.get("seed", default_seed)))
    if kind == "custom":
        return criteria.Custom(path=dc["path"])
    raise ValueError(f"unknown datum kind {kind!r}")


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical config (output location excluded), first 16 hex."""
    scrubbed = {k: v for k, v in cfg.items() if k != "outputs"}
    blob = json.dumps(scrubbed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# atomic persistence

def write_text_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json_atomic(path: str, obj) -> None:
    write_text_atomic(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_snapshot_atomic(path: str, field: gridmod.RadialField) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    gridmod.save_snapshot(tmp, field)
    os.replace(tmp, path)


def write_meta(run_dir: str, elapsed: float) -> None:
    import datetime
    write_json_atomic(os.path.join(run_dir, "meta.json"), {
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "elapsed_s": elapsed,
    })


def run_dir_for(out: str, cfg: dict) -> str:
    d = os.path.join(out, "runs", config_hash(cfg))
    os.makedirs(d, exist_ok=True)
    return d


def is_complete(run_dir: str) -> bool:
    return os.path.exists(os.path.join(run_dir, "manifest.json"))


# ---------------------------------------------------------------------------
# shared run pieces

def _series_csv(traj: evolution.Trajectory) -> str:
    lines = [functionals.Diagnostics.CSV_HEADER]
    lines.extend(d.csv_row() for d in traj.series)
    return "\n".join(lines) + "\n"


def _verdict_dict(verdict) -> dict:
    d = {"kind": type(verdict).__name__}
    for key in ("t", "t_star_estimate", "trigger", "reason"):
        if hasattr(verdict, key):
            d[key] = getattr(verdict, key)
    return d


def _classification_dict(cl: criteria.Classification) -> dict:
    return {
        "virial_sign": cl.virial_sign, "action_vs_m": cl.action_vs_m,
        "in_A_minus": cl.in_A_minus, "MG": cl.MG, "ME": cl.ME,
        "condition_ss": cl.condition_ss, "condition_t13": cl.condition_t13,
        "predicted": cl.predicted, "notes": cl.notes,
    }


def _solve_gs(spec, grid):
    return ground_state.solve_ground_state(spec, grid)


# ---------------------------------------------------------------------------
# subcommands

def cmd_ground_state(cfg: dict, out: str) -> int:
    import time
    t0 = time.time()
    spec = spec_from_config(cfg)
    grd = grid_from_config(cfg, spec.N)
    run = run_dir_for(out, cfg)
    gs = _solve_gs(spec, grd)
    write_snapshot_atomic(os.path.join(run, "ground_state.snap"), gs.field)
    field64 = np.asarray(gs.field.values, np.complex128)
    lines = ["r,re,im"]
    for rj, vj in zip(grd.r, field64):
        lines.append(f"{rj!r},{vj.real!r},{vj.imag!r}")
    write_text_atomic(os.path.join(run, "field.csv"), "\n".join(lines) + "\n")
    manifest = {
        "command": "ground-state",
        "certificate": gs.certificate_dict(),
        "validation_notes": problem.validation_notes(spec),
    }
    write_meta(run, time.time() - t0)
    write_json_atomic(os.path.join(run, "manifest.json"), manifest)
    print(f"[ground-state] run={os.path.basename(run)} residual={gs.residual:.3e} "
          f"defects=({gs.pohozaev_defect_1:.3e}, {gs.pohozaev_defect_2:.3e}) "
          f"status={gs.status}")
    return EXIT_OK


def cmd_classify(cfg: dict, out: str) -> int:
    import time
    t0 = time.time()
    spec = spec_from_config(cfg)
    grd = grid_from_config(cfg, spec.N)
    run = run_dir_for(out, cfg)
    gs = _solve_gs(spec, grd)
    kind = datum_kind_from_config(cfg, int(cfg.get("seed", 0)))
    u0 = criteria.build_datum(kind, gs, grd)
    cl = criteria.classify(spec, u0, gs)
    manifest = {
        "command": "classify",
        "classification": _classification_dict(cl),
        "certificate": gs.certificate_dict(),
        "validation_notes": problem.validation_notes(spec),
    }
    write_meta(run, time.time() - t0)
    write_json_atomic(os.path.join(run, "manifest.json"), manifest)
    print(f"[classify] run={os.path.basename(run)} predicted={cl.predicted} "
          f"MG={cl.MG:.4f} ME={cl.ME:.4f} I-sign={cl.virial_sign:+.0f}")
    return EXIT_OK


def cmd_evolve(cfg: dict, out: str) -> int:
    import time
    t0 = time.time()
    spec = spec_from_config(cfg)
    grd = grid_from_config(cfg, spec.N)
    controls = controls_from_config(cfg)
    run = run_dir_for(out, cfg)
    gs = _solve_gs(spec, grd)
    kind = datum_kind_from_config(cfg, int(cfg.get("seed", 0)))
    u0 = criteria.build_datum(kind, gs, grd)
    cl = criteria.classify(spec, u0, gs)
    traj = evolution.evolve(spec, u0, controls)

    write_text_atomic(os.path.join(run, "series.csv"), _series_csv(traj))
    snap_dir = os.path.join(run, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    snap_index = []
    for i, (ts, fld) in enumerate(traj.snapshots):
        name = f"snap_{i:06d}.snap"
        write_snapshot_atomic(os.path.join(snap_dir, name), fld)
        snap_index.append({"t": ts, "file": f"snapshots/{name}"})

    manifest = {
        "command": "evolve",
        "classification": _classification_dict(cl),
        "verdict": _verdict_dict(traj.verdict),
        "R_used": traj.R_used,
        "samples": len(traj.series),
        "snapshots": snap_index,
        "validation_notes": problem.validation_notes(spec),
    }
    if isinstance(traj.verdict, evolution.BlowupDetected):
        try:
            rep = criteria.odi_fit(traj, spec)
            manifest["odi"] = {
                "window": list(rep.window), "c_lower": rep.c_lower,
                "t_star_bound": rep.t_star_bound,
                "monotone_fraction": rep.monotone_fraction,
                "kappa": rep.kappa, "kappa_inferred": rep.kappa_inferred,
            }
        except (criteria.DegenerateFit, criteria.NoBlowupVerdict) as exc:
            manifest["odi"] = {"error": str(exc)}
    try:
        mor = evolution.morawetz_rate_check(traj, spec, traj.R_used)
        manifest["morawetz"] = {
            "R": mor.R, "kappa": mor.kappa,
            "violated_fraction": mor.violated_fraction,
            "samples": mor.samples,
            "decreasing_slope": mor.decreasing_slope,
        }
    except criteria.InsufficientSamples as exc:
        manifest["morawetz"] = {"error": str(exc)}
    write_meta(run, time.time() - t0)
    write_json_atomic(os.path.join(run, "manifest.json"), manifest)
    v = manifest["verdict"]
    print(f"[evolve] run={os.path.basename(run)} verdict={v['kind']} "
          f"t={v.get('t', float('nan')):.6g} samples={len(traj.series)}")
    if isinstance(traj.verdict, evolution.ResolutionFailure):
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# invariant suite

def _suite_pohozaev(spec, grd) -> dict:
    gs = _solve_gs(spec, grd)
    # defect tolerance is grid-limited (second-order quadrature of the
    # stationary identities), hence looser than the certificate residual
    ok = gs.residual <= 1e-8 and max(gs.pohozaev_defect_1,
                                     gs.pohozaev_defect_2) <= 1e-3
    return {"name": "pohozaev", "passed": bool(ok),
            "residual": gs.residual,
            "defect_1": gs.pohozaev_defect_1, "defect_2": gs.pohozaev_defect_2,
            "note": "defect tolerance 1e-3 is grid-limited at this resolution"}


def _suite_gn_bound(spec, grd, seed: int, trials: int = 500) -> dict:
    gs = _solve_gs(spec, grd)
    C = gs.sharp_constant
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        amps = rng.uniform(0.1, 2.0, n)
        widths = rng.uniform(0.2, 4.0, n)
        u = criteria.gaussian_mixture(grd, amps, widths)
        W = ground_state.weinstein_quotient(spec, u)
        worst = max(worst, W / C)
    return {"name": "gn_bound", "passed": bool(worst <= 1.0 + 1e-6),
            "trials": trials, "worst_quotient_ratio": worst}


def _suite_scaling(spec, seed: int) -> dict:
    g = gridmod.make_grid(2048, 10.0, spec.N)
    ex = problem.derive_exponents(spec)
    sB = float(spec.s) * float(ex.B)
    rng = np.random.default_rng(seed)
    amps = list(rng.uniform(0.3, 1.0, 2))
    widths = list(rng.uniform(0.8, 2.0, 2))
    u = criteria.gaussian_mixture(g, amps, widths)
    m0 = functionals.mass(u)
    k0 = functionals.kinetic(spec, u)
    p0 = functionals.potential(spec, u)
    worst = {"mass": 0.0, "kinetic": 0.0, "potential": 0.0}
    for rho in (0.5, 2.0):
        a2, w2 = criteria.mixture_rescaled(amps, widths, rho, spec.N)
        ur = criteria.gaussian_mixture(g, a2, w2)
        worst["mass"] = max(worst["mass"], abs(functionals.mass(ur) - m0) / m0)
        worst["kinetic"] = max(worst["kinetic"],
                               abs(functionals.kinetic(spec, ur)
                                   - rho ** (2 * spec.s) * k0)
                               / (rho ** (2 * spec.s) * k0))
        worst["potential"] = max(worst["potential"],
                                 abs(functionals.potential(spec, ur)
                                     - rho ** sB * p0) / (rho ** sB * p0))
    ok = worst["mass"] <= 1e-8 and worst["kinetic"] <= 1e-4 \
        and worst["potential"] <= 1e-3
    return {"name": "scaling", "passed": bool(ok), **worst}


def _suite_hardy(spec, grd, seed: int, trials: int = 1000) -> dict:
    rng = np.random.default_rng(seed)
    const = (spec.N - 2) ** 2 / 4.0
    worst = np.inf
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        u = criteria.gaussian_mixture(grd, rng.uniform(-1.0, 1.0, n),
                                      rng.uniform(0.2, 4.0, n))
        lhs = gridmod.gradient_norm_sq(u)
        rhs = const * float(np.sum(grd.w * np.abs(u.values) ** 2 / grd.r ** 2))
        if rhs > 0:
            worst = min(worst, lhs / rhs)
    return {"name": "hardy", "passed": bool(worst >= 1.0 - 5e-2),
            "trials": trials, "worst_ratio": float(worst)}


def _suite_conservation(spec, grd) -> dict:
    gs = _solve_gs(spec, grd)
    u0 = criteria.build_datum(criteria.ScaledGroundState(0.5), gs, grd)
    # the fourth-order flow sheds a slow energy drift near the endpoints that
    # no step refinement removes, so its smoke tolerance is necessarily loose
    e_tol = 1e-6 if spec.s == 1 else 5e-2
    controls = evolution.EvolveControls(t_end=0.2, dt0=1e-3,
                                        conservation_tol=max(1e-4, 2 * e_tol))
    traj = evolution.evolve(spec, u0, controls)
    m = traj.column("mass")
    e = traj.column("energy")
    dm = float(np.max(np.abs(m - m[0])) / m[0])
    de = float(np.max(np.abs(e - e[0])) / max(abs(e[0]), traj.series[0].kinetic))
    ok = isinstance(traj.verdict, evolution.ReachedHorizon) \
        and dm <= 1e-8 and de <= e_tol
    return {"name": "conservation", "passed": bool(ok),
            "mass_drift": dm, "energy_drift": de, "energy_tol": e_tol,
            "verdict": type(traj.verdict).__name__}


def cmd_check_identities(cfg: dict, out: str) -> int:
    import time
    t0 = time.time()
    spec = spec_from_config(cfg)
    grd = grid_from_config(cfg, spec.N)
    seed = int(cfg.get("seed", 0))
    run = run_dir_for(out, cfg)
    suites = [
        _suite_pohozaev(spec, grd),
        _suite_gn_bound(spec, grd, seed),
        _suite_scaling(spec, seed + 1),
        _suite_hardy(spec, grd, seed + 2),
        _suite_conservation(spec, grd),
    ]
    all_ok = all(s["passed"] for s in suites)
    manifest = {"command": "check-identities", "passed": all_ok, "suites": suites,
                "validation_notes": problem.validation_notes(spec)}
    write_meta(run, time.time() - t0)
    write_json_atomic(os.path.join(run, "manifest.json"), manifest)
    for s in suites:
        print(f"[check-identities] {s['name']:<14} "
              f"{'PASS' if s['passed'] else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# sweep

def _set_path(cfg: dict, dotted: str, value) -> None:
    node = cfg
    parts = dotted.split(".")
    for key in parts[:-1]:
        node = node[key]
    node[parts[-1]] = value


def _sweep_worker(args):
    command, child_cfg, out = args
    runner = {"evolve": cmd_evolve, "ground-state": cmd_ground_state,
              "classify": cmd_classify,
              "check-identities": cmd_check_identities}[command]
    h = config_hash(child_cfg)
    try:
        code = runner(child_cfg, out)
        return h, code, None
    except CONFIG_ERRORS + NUMERIC_ERRORS as exc:
        return h, EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"


def _sweep_children(manifest: dict):
    base = manifest["base"]
    axes = manifest.get("axes", [])
    paths = [ax[0] for ax in axes]
    value_lists = [ax[1] for ax in axes]
    total = 1
    for vals in value_lists:
        total *= max(len(vals), 1)
    if total > 10 ** 5:
        raise ValueError(f"sweep cartesian size {total} exceeds guard 1e5")
    for combo in product(*value_lists) if value_lists else [()]:
        child = json.loads(json.dumps(base))
        for pth, val in zip(paths, combo):
            _set_path(child, pth, val)
        yield dict(zip(paths, combo)), child


def _rebuild_summary(out: str, manifest: dict) -> None:
    paths = [ax[0] for ax in manifest.get("axes", [])]
    rows = []
    for axis_values, child in _sweep_children(manifest):
        h = config_hash(child)
        man_path = os.path.join(out, "runs", h, "manifest.json")
        if not os.path.exists(man_path):
            continue
        with open(man_path) as fh:
            child_man = json.load(fh)
        verdict = child_man.get("verdict", {})
        row = [h] + [str(axis_values[p]) for p in paths]
        row.append(verdict.get("kind", child_man.get("command", "")))
        row.append(repr(verdict["t"]) if "t" in verdict else "")
        row.append(repr(verdict["t_star_estimate"])
                   if "t_star_estimate" in verdict else "")
        rows.append(",".join(row))
    rows.sort()
    header = ",".join(["run"] + paths + ["verdict", "t", "t_star"])
    write_text_atomic(os.path.join(out, "summary.csv"),
                      header + "\n" + "\n".join(rows) + ("\n" if rows else ""))


def cmd_sweep(manifest: dict, out: str, workers: int) -> int:
    command = manifest.get("command", "evolve")
    pending = []
    done = skipped = failed = 0
    for _, child in _sweep_children(manifest):
        run = os.path.join(out, "runs", config_hash(child))
        if is_complete(run):
            skipped += 1
        else:
            pending.append((command, child, out))
    max_parallel = int(manifest.get("max_parallel", workers))
    workers = max(1, min(workers, max_parallel))
    if pending:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_worker, args) for args in pending]
            for fut in as_completed(futures):
                h, code, err = fut.result()
                if err is not None or code != EXIT_OK:
                    failed += 1
                    print(f"[sweep] run {h} failed: {err or f'exit {code}'}")
                else:
                    done += 1
                _rebuild_summary(out, manifest)
    _rebuild_summary(out, manifest)
    print(f"[sweep] completed={done} skipped={skipped} failed={failed}")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# entry point

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to JSON config")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="64-bit seed override")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="inlslab",
        description="radial dispersive-equation laboratory: ground states, "
                    "blow-up classification, split-step evolution")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ground-state", "classify", "evolve", "check-identities"):
        _add_common(sub.add_parser(name))
    sp = sub.add_parser("sweep")
    _add_common(sp)
    sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    rp = sub.add_parser("report", help="render figures from a completed run")
    rp.add_argument("--run", required=True, help="run directory")
    rp.add_argument("--out", default=None, help="figure directory (default: run dir)")
    args = parser.parse_args(argv)

    if args.command == "report":
        from . import report
        try:
            files = report.render_run(args.run, args.out)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        for f in files:
            print(f"[report] wrote {f}")
        return EXIT_OK

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out, args.workers)
        runner = {"ground-state": cmd_ground_state, "classify": cmd_classify,
                  "evolve": cmd_evolve,
                  "check-identities": cmd_check_identities}[args.command]
        return runner(cfg, args.out)
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CONFIG_ERRORS as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
