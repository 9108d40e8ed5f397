"""Command line front end: ``vkplate <command> [-c config] [--set key=value ...]``.

Commands write CSV files (and PNG/SVG figures unless ``figures = false``)
into the output directory, which ``$VKPLATE_OUTPUT_DIR`` overrides.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 failed acceptance check (``validate`` only).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, dump_config, load_config
from .continuation import sweep_2d, sweep_diagram
from .eigen import buckling_eigs, convergence_order, exact_eigenvalue, spectrum_vs_lambda
from .errors import ConfigError, InvalidArgumentError, VKError
from .fespace import build_space
from .mesh import build_mesh, mesh_size, subdivisions_for
from .rom import (
    FIELDS,
    collect_snapshots,
    load_rom,
    pod,
    project_operators,
    rb_error,
    save_rom,
    trace_reduced,
    truncate,
    truncate_operators,
)
from .solver import State

log = logging.getLogger("vkplate")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

DIAGRAM_COLUMNS = ["branch_id", "seed_m", "seed_n", "seed_sign", "psi", "lambda", "ordinate", "converged", "iterations"]


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) for v in r])
    log.info("wrote %s", path)
    return path


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _space(cfg: RunConfig):
    return build_space(build_mesh(cfg.L, cfg.nx, cfg.ny), cfg.degree)


def _grid(start, stop, step):
    n = int(np.floor((stop - start) / step + 1e-9))
    return start + step * np.arange(n + 1)


def _figures(cfg):
    if not cfg.figures:
        return None
    from . import plotting

    return plotting


# --- eigs ---------------------------------------------------------------------


def cmd_eigs(cfg: RunConfig, args) -> int:
    if args.exact:
        m, n, L = int(args.exact[0]), int(args.exact[1]), float(args.exact[2])
        print(f"{exact_eigenvalue(m, n, L):.10f}")
        return EXIT_OK
    out = cfg.out
    if args.order:
        exact = min(exact_eigenvalue(m, 1, cfg.L) for m in range(1, 8))
        data = []
        for h in (0.1, 0.05, 0.025):
            nx, ny = subdivisions_for(cfg.L, h)
            s = build_space(build_mesh(cfg.L, nx, ny), cfg.degree)
            data.append((mesh_size(s.mesh), buckling_eigs(s, cfg.psi, k=1)[0].value))
        order = convergence_order(data, exact)
        write_csv(out / "order.csv", ["mesh_size", "value", "error"], [(h, v, abs(v - exact)) for h, v in data])
        print(f"order {order:.4f}")
        return EXIT_OK
    s = _space(cfg)
    pairs = buckling_eigs(s, cfg.psi, k=cfg.k)
    write_csv(out / "eigs.csv", ["index", "value", "multiplicity"],
              [(i + 1, p.value, p.multiplicity) for i, p in enumerate(pairs)])
    for i, p in enumerate(pairs):
        print(f"{i + 1:3d} {p.value:.6f} x{p.multiplicity}")
    trace = spectrum_vs_lambda(s, _grid(cfg.spectrum_start, cfg.spectrum_end, cfg.spectrum_step), cfg.psi, k=cfg.k)
    write_csv(out / "spectrum.csv", ["lambda"] + [f"sigma{i + 1}" for i in range(cfg.k)],
              [(lam, *trace.sigma_curves[:, j]) for j, lam in enumerate(trace.lambda_grid)])
    first = trace.first_crossing()
    if first is not None:
        print(f"first crossing: curve {first[0] + 1} at lambda = {first[1][1]:g}")
    plots = _figures(cfg)
    if plots:
        plots.plot_spectrum(trace, out / "spectrum")
    return EXIT_OK


# --- diagram ------------------------------------------------------------------


def diagram_rows(diagram):
    rows = []
    for bid, b in enumerate(diagram.branches):
        for p in b.points:
            rows.append((bid, b.seed.mode[0], b.seed.mode[1], b.seed.sign, p.psi, p.lam, p.ordinate,
                         p.converged, p.iterations))
    return rows


def _plot_rows(rows, labels):
    return [{"branch_id": r[0], "lambda": r[5], "ordinate": r[6], "label": labels.get(r[0], str(r[0]))} for r in rows]


def cmd_diagram(cfg: RunConfig, args) -> int:
    out = cfg.out
    s = _space(cfg)
    d = sweep_diagram(s, (cfg.lambda_start, cfg.lambda_end), cfg.d_lambda, cfg.psi, list(cfg.seeds),
                      cfg.delta, cfg.newton_tol, cfg.newton_max_iter, cfg.store_every)
    rows = diagram_rows(d)
    write_csv(out / "diagram.csv", DIAGRAM_COLUMNS, rows)
    write_csv(out / "bifurcations.csv", ["branch_id", "lambda_star"], d.detected_bifurcations)
    n_end = d.nontrivial_at(float(d.trivial_branch[-1][0]))
    print(f"{len(d.branches)} branches, {n_end} nontrivial at lambda = {d.trivial_branch[-1][0]:g}")
    for bid, lam in d.detected_bifurcations:
        print(f"  branch {bid} {d.branches[bid].seed.label}: departs at {lam:.4f}")
    plots = _figures(cfg)
    if plots:
        labels = {i: b.seed.label for i, b in enumerate(d.branches)}
        plots.plot_diagram(_plot_rows(rows, labels), out / "diagram")
    return EXIT_OK


# --- pod / online -------------------------------------------------------------


def cmd_pod(cfg: RunConfig, args) -> int:
    out = cfg.out
    s = _space(cfg)
    d = sweep_diagram(s, (cfg.lambda_start, cfg.lambda_end), cfg.d_lambda, cfg.psi, list(cfg.seeds),
                      cfg.delta, cfg.newton_tol, cfg.newton_max_iter, cfg.store_every)
    snaps = collect_snapshots(d.branches, cfg.stride)
    basis = pod(snaps, cfg.n_max, cfg.energy_tol)
    ro = project_operators(basis)
    save_rom(out / "basis.rom", basis, ro, {"psi": cfg.psi, "seeds": [b.seed.label for b in d.branches]})
    # training states, so the online phase can compare against matched full solves
    stored = [(bid, lam, st) for bid, b in enumerate(d.branches) for lam, _, st in b.stored_states()]
    np.savez(out / "snapshots.npz",
             branch=np.array([t[0] for t in stored]), lam=np.array([t[1] for t in stored]),
             **{f: np.column_stack([getattr(t[2], f).coeffs for t in stored]) for f in FIELDS})
    write_csv(out / "pod_energy.csv", ["mode"] + list(FIELDS),
              [(i + 1, *(basis.pod_energies[f][i] for f in FIELDS))
               for i in range(min(len(basis.pod_energies[f]) for f in FIELDS))])
    write_csv(out / "training_diagram.csv", DIAGRAM_COLUMNS, diagram_rows(d))
    print(f"{snaps.count} snapshots, N = {basis.N} per field (online dimension {4 * basis.N})")
    return EXIT_OK


class _StoredBranch:
    """Stand-in for a traced branch built from snapshots.npz."""

    def __init__(self, items):
        self._items = items

    def stored_states(self):
        return self._items


def cmd_online(cfg: RunConfig, args) -> int:
    out = cfg.out
    rom_path = Path(args.rom) if args.rom else out / "basis.rom"
    if not rom_path.exists():
        raise ConfigError(f"{rom_path} not found; run 'vkplate pod' first")
    _, ro_probe = load_rom(rom_path)
    meta = ro_probe.meta
    s = build_space(build_mesh(meta["L"], meta["nx"], meta["ny"]), meta["degree"])
    basis, ro = load_rom(rom_path, s)
    psi = float(meta.get("psi", cfg.psi))

    from .rom import branch_full_solver

    snap_path = rom_path.with_name("snapshots.npz")
    rows_err = []
    if snap_path.exists():
        z = np.load(snap_path)
        bid = args.branch
        sel = np.flatnonzero(z["branch"] == bid)
        if sel.size == 0:
            raise ConfigError(f"no stored states for branch {bid}")
        items = [(float(z["lam"][i]), psi, State.from_vector(s, np.concatenate([z[f][:, i] for f in FIELDS])))
                 for i in sel]
        solver = branch_full_solver(s, _StoredBranch(items), psi, cfg.newton_tol, cfg.newton_max_iter)
        lams = np.linspace(cfg.test_start, cfg.test_end, cfg.test_points)
        for N in range(1, basis.N + 1):
            rep = rb_error(truncate(basis, N), truncate_operators(ro, N), lams, solver, psi,
                           cfg.newton_tol, cfg.newton_max_iter)
            rows_err.append((N, rep.E_N, rep.t_online_ms, rep.t_full_ms))
            print(f"N={N}: E_N={rep.E_N:.3e}  online {rep.t_online_ms:.2f} ms  full {rep.t_full_ms:.1f} ms")
            if rep.excluded:
                print(f"  excluded: {rep.excluded}")
        write_csv(out / "rb_error.csv", ["N", "E_N", "t_online_ms", "t_full_ms"], rows_err)
    else:
        log.warning("%s missing: skipping the error study", snap_path)

    grid = _grid(cfg.lambda_start, cfg.lambda_end, cfg.d_lambda)
    rows = []
    for bid, seed in enumerate(cfg.seeds):
        for lam, o, conv, its in trace_reduced(basis, ro, grid, psi, seed, cfg.delta, cfg.newton_tol,
                                               cfg.newton_max_iter):
            rows.append((bid, seed.mode[0], seed.mode[1], seed.sign, psi, lam, o, conv, its))
    write_csv(out / "reduced_diagram.csv", DIAGRAM_COLUMNS, rows)
    plots = _figures(cfg)
    if plots:
        if rows_err:
            plots.plot_rb_error([r[0] for r in rows_err], [r[1] for r in rows_err], out / "rb_error")
        labels = {i: sd.label for i, sd in enumerate(cfg.seeds)}
        plots.plot_diagram(_plot_rows(rows, labels), out / "reduced_diagram", title=f"reduced, N={basis.N}")
    return EXIT_OK


# --- sweep2d ------------------------------------------------------------------


def cmd_sweep2d(cfg: RunConfig, args) -> int:
    out = cfg.out
    s = _space(cfg)
    seed = cfg.seeds[0] if cfg.seeds else None
    if seed is None:
        raise ConfigError("sweep2d needs at least one seed")
    res = sweep_2d(s, (cfg.lambda_start, cfg.lambda_end), cfg.d_lambda, cfg.psi_grid, seed,
                   cfg.delta, cfg.newton_tol, cfg.newton_max_iter, cfg.store_every)
    rows, crit = [], []
    for psi, branch, lam_star in res:
        for p in branch.points:
            rows.append((psi, p.lam, p.ordinate, p.converged))
        eig = buckling_eigs(s, psi, k=1)[0].value
        ls = float("nan") if lam_star is None else lam_star
        crit.append((psi, ls, eig, abs(ls - eig) / eig))
        print(f"psi={psi:g}: lambda*={ls:.4f}  eigen={eig:.4f}")
    write_csv(out / "sweep2d.csv", ["psi", "lambda", "ordinate", "converged"], rows)
    write_csv(out / "sweep2d_critical.csv", ["psi", "lambda_star", "lambda_eig", "rel_diff"], crit)
    plots = _figures(cfg)
    if plots:
        plots.plot_sweep2d([{"psi": r[0], "lambda": r[1], "ordinate": r[2]} for r in rows], out / "sweep2d")
    return EXIT_OK


# --- validate -----------------------------------------------------------------


def cmd_validate(cfg: RunConfig, args) -> int:
    from .validation import ALL_CHECKS, run_checks

    ids = ALL_CHECKS if not args.only else tuple(sorted({int(t) for t in args.only.split(",")}))
    bad = [i for i in ids if i not in ALL_CHECKS]
    if bad:
        raise ConfigError(f"unknown check ids {bad}")
    results = run_checks(ids, ny=cfg.ny, seed=cfg.seed, progress=lambda r: print(r.line(), flush=True))
    report = {
        "passed": all(r.passed for r in results),
        "checks": [{"id": r.id, "name": r.name, "passed": r.passed, "seconds": r.seconds,
                    "measured": r.measured} for r in results],
    }
    path = cfg.out / "validate.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, default=float) + "\n")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_config(cfg: RunConfig, args) -> int:
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


COMMANDS = {
    "eigs": cmd_eigs,
    "diagram": cmd_diagram,
    "trace": cmd_diagram,
    "pod": cmd_pod,
    "online": cmd_online,
    "sweep2d": cmd_sweep2d,
    "validate": cmd_validate,
    "config": cmd_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="config file (key = value with [section] headers)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-o", "--output-dir", help="output directory (overrides the config file)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="vkplate", description="Von Karman plate buckling: eigenloads, "
                                "bifurcation diagrams and a POD reduced model.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    e = sub.add_parser("eigs", parents=[common], help="buckling loads and sigma(lambda) curves")
    e.add_argument("--exact", nargs=3, metavar=("M", "N", "L"), help="print the closed-form load and exit")
    e.add_argument("--order", action="store_true", help="convergence order over mesh sizes 0.1, 0.05, 0.025")
    for name in ("diagram", "trace"):
        sub.add_parser(name, parents=[common], help="bifurcation diagram by natural continuation")
    sub.add_parser("pod", parents=[common], help="offline phase: snapshots, POD, basis.rom")
    o = sub.add_parser("online", parents=[common], help="online phase: reduced diagram and E_N study")
    o.add_argument("--rom", help="basis.rom path (default: <output>/basis.rom)")
    o.add_argument("--branch", type=int, default=0, help="training branch used for the error study")
    sub.add_parser("sweep2d", parents=[common], help="first branch for every psi in psi_grid")
    v = sub.add_parser("validate", parents=[common], help="run the acceptance checks")
    v.add_argument("--only", help="comma separated check ids (1-11)")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.output_dir:
            overrides.append(f"output_dir={args.output_dir}")
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"vkplate: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (VKError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"vkplate: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
