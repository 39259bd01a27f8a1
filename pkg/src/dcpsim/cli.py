"""Command-line entry point and experiment runner.

    dcpsim simulate CFG [--out DIR] [--jobs N]
    dcpsim analyze theta CFG [--out DIR]
    dcpsim analyze phi CFG --direction DEG
    dcpsim capacity CFG --direction DX,DY
    dcpsim rinf --delta D --rho-phi R --l1 L
    dcpsim verdict RUN_DIR

CFG is a JSON experiment config, a bundled name (``example1``,
``example2``) or a ``manifest.json`` written by ``simulate``. Run seeds
come from ``SeedSequence(sim.seed, spawn_key=(load_index, replication))``.
Exit status: 0 on success, 2 on a config error, 3 on a runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DirectionGrid,
    RinfParams,
    boundary_csv,
    capacity_boundary_along,
    chi_of,
    direction_table,
    phi_estimates,
    r_infinity,
    theta_csv,
    unit_direction,
)
from .config import MANIFEST_KEY, ExperimentConfig, bundled_config_path, from_dict, load_config
from .dcp import DcpConfig
from .errors import ConfigInvalid, DcpSimError
from .sim import read_queue_csv, run_sim, stability_verdict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
JOBS_ENV = "DCPSIM_JOBS"
ROUND_COLUMNS = ("round", "t_start", "n1_candidate", "phi_test", "n1", "n3", "phi_update", "adopted")


def resolve_config(spec: str) -> ExperimentConfig:
    p = Path(spec)
    if not p.exists() and not p.suffix:
        try:
            p = bundled_config_path(spec)
        except FileNotFoundError:
            pass
    return load_config(p)


def run_dir_name(load: float, rep: int) -> str:
    return f"gamma_{load:.4f}_rep{rep}"


def _write_rounds(rounds: np.ndarray, path: Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUND_COLUMNS)
    for r in rounds:
        w.writerow([int(r[0]), int(r[1]), int(r[2]), repr(float(r[3])), int(r[4]), int(r[5]), repr(float(r[6])), int(r[7])])
    path.write_text(buf.getvalue())


def _run_one(raw: dict, load_index: int, rep: int, out_dir: str) -> dict:
    cfg = from_dict(raw)
    load = cfg.loads[load_index]
    seed = cfg.run_seed(load_index, rep)
    m = run_sim(cfg.channel, cfg.rates, cfg.policy, cfg.arrivals(load), cfg.horizon, seed, cfg.window)
    d = Path(out_dir) / "runs" / run_dir_name(load, rep)
    d.mkdir(parents=True, exist_ok=True)
    m.to_csv(d / "queue.csv")
    if isinstance(cfg.policy, DcpConfig):
        _write_rounds(m.rounds, d / "rounds.csv")
    return {
        "gamma": load,
        "seed": seed,
        "verdict": stability_verdict(m).value,
        "final_mean": float(np.sum(m.final_mean_queue)),
    }


def _default_jobs() -> int:
    v = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(v))
    except ValueError:
        raise ConfigInvalid(JOBS_ENV, f"expected an integer, got {v!r}") from None


def manifest_for(cfg: ExperimentConfig) -> dict:
    runs = [
        {"gamma": g, "load_index": i, "replication": r, "seed": cfg.run_seed(i, r), "dir": f"runs/{run_dir_name(g, r)}"}
        for i, g in enumerate(cfg.loads)
        for r in range(cfg.replications)
    ]
    return {MANIFEST_KEY: __version__, "config": cfg.resolved(), "runs": runs}


def run_experiment(cfg: ExperimentConfig, out_dir, jobs: int = 1, analysis: bool = True) -> Path:
    """Run every (load, replication) pair and write all artifacts under ``out_dir``.

    The output depends only on the config, so rerunning (also from the
    written manifest) reproduces every file byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = manifest_for(cfg)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tasks = [(cfg.raw, r["load_index"], r["replication"], str(out)) for r in manifest["runs"]]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, *zip(*tasks)))
    else:
        results = [_run_one(*t) for t in tasks]

    with open(out / "verdicts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "seed", "verdict", "final_mean"])
        for res in results:
            w.writerow([repr(res["gamma"]), res["seed"], res["verdict"], repr(res["final_mean"])])

    with open(out / "fig2.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "mean_queue", "n_stable", "n_unstable", "n_inconclusive"])
        for g in cfg.loads:
            rs = [r for r in results if r["gamma"] == g]
            verdicts = [r["verdict"] for r in rs]
            w.writerow([
                repr(g), repr(float(np.mean([r["final_mean"] for r in rs]))),
                verdicts.count("Stable"), verdicts.count("Unstable"), verdicts.count("Inconclusive"),
            ])

    if analysis:
        write_analysis(cfg, out, jobs)
    return out


def write_analysis(cfg: ExperimentConfig, out: Path, jobs: int = 1):
    table = direction_table(
        DirectionGrid.uniform(cfg.grid), cfg.channel, cfg.rates, cfg.variant, cfg.dcp.n1_set,
        cfg.mc_samples, cfg.analysis_seed, jobs,
    )
    theta_csv(table, out / "theta.csv")
    table.to_csv(out / "directions.csv")
    d = np.asarray(cfg.base_rate, dtype=float)
    boundary_csv(d, capacity_boundary_along(d, cfg.channel, cfg.rates, cfg.weight_angles), out / "boundary.csv")
    return table


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = resolve_config(args.config)
    out = Path(args.out) if args.out else Path(f"{cfg.name}-out")
    t0 = time.time()
    run_experiment(cfg, out, args.jobs, analysis=not args.skip_analysis)
    print((out / "fig2.csv").read_text(), end="")
    print(f"wrote {out} in {time.time() - t0:.1f} s", file=sys.stderr)
    return EXIT_OK


def cmd_analyze_theta(args) -> int:
    cfg = resolve_config(args.config)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        table = write_analysis(cfg, out, args.jobs)
    else:
        table = direction_table(
            DirectionGrid.uniform(cfg.grid), cfg.channel, cfg.rates, cfg.variant, cfg.dcp.n1_set,
            cfg.mc_samples, cfg.analysis_seed, args.jobs,
        )
    print(theta_csv(table), end="")
    n1, best = table.theta_static_best()
    value, j = table.theta_inf()
    print(f"# best static N1 = {n1} ({best:.4f}); theta_inf = {value:.4f} at {np.degrees(table.angles[j]):.2f} deg",
          file=sys.stderr)
    return EXIT_OK


def cmd_analyze_phi(args) -> int:
    cfg = resolve_config(args.config)
    X = unit_direction(args.direction)
    rng = np.random.default_rng(cfg.analysis_seed)
    n1_set = sorted(cfg.dcp.n1_set)
    phi, se = phi_estimates(X, n1_set, cfg.channel, cfg.rates, cfg.variant, cfg.mc_samples, rng)
    chi = chi_of(X, cfg.channel, cfg.rates)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["n1", "phi", "phi_se", "chi", "ratio"])
    for n1, p, s in zip(n1_set, phi, se):
        w.writerow([n1, repr(float(p)), repr(float(s)), repr(chi), repr(float(p / chi))])
    return EXIT_OK


def _pair(text: str) -> np.ndarray:
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected DX,DY, got {text!r}") from None
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected DX,DY, got {text!r}")
    return np.array(parts)


def cmd_capacity(args) -> int:
    cfg = resolve_config(args.config)
    point = capacity_boundary_along(args.direction, cfg.channel, cfg.rates, cfg.weight_angles)
    print(boundary_csv(args.direction, point), end="")
    return EXIT_OK


def cmd_rinf(args) -> int:
    params = RinfParams(args.delta, args.rho_phi, args.l1, args.k_max)
    print(repr(r_infinity(params)))
    return EXIT_OK


def cmd_verdict(args) -> int:
    root = Path(args.run_dir)
    files = [root / "queue.csv"] if (root / "queue.csv").exists() else sorted(root.glob("runs/*/queue.csv"))
    if not files:
        print(f"no queue.csv under {root}", file=sys.stderr)
        return EXIT_RUNTIME
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["run", "verdict"])
    for f in files:
        t, y = read_queue_csv(f)
        w.writerow([f.parent.name, stability_verdict(y, t).value])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcpsim", description="Queueing simulation and analysis of runtime-tuned scheduling.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    jobs = argparse.ArgumentParser(add_help=False)
    jobs.add_argument("--jobs", type=int, default=None, help=f"worker processes (default ${JOBS_ENV} or 1)")

    s = sub.add_parser("simulate", parents=[jobs], help="run every load/replication of a config")
    s.add_argument("config")
    s.add_argument("--out", help="artifact directory (default ./<name>-out)")
    s.add_argument("--skip-analysis", action="store_true", help="do not write theta/direction/boundary tables")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="steady-state scaling factors")
    asub = a.add_subparsers(dest="what", required=True)
    t = asub.add_parser("theta", parents=[jobs], help="static and best-N1 scaling factors over the direction grid")
    t.add_argument("config")
    t.add_argument("--out", help="also write theta.csv, directions.csv and boundary.csv here")
    t.set_defaults(func=cmd_analyze_theta)
    f = asub.add_parser("phi", help="phi(X, N1) per N1 at one backlog direction")
    f.add_argument("config")
    f.add_argument("--direction", type=float, required=True, help="angle of X from the first axis, in degrees")
    f.set_defaults(func=cmd_analyze_phi)

    c = sub.add_parser("capacity", help="capacity-region boundary point along a direction")
    c.add_argument("config")
    c.add_argument("--direction", type=_pair, required=True, help="DX,DY")
    c.set_defaults(func=cmd_capacity)

    r = sub.add_parser("rinf", help="long-run update-interval fraction")
    r.add_argument("--delta", type=float, required=True)
    r.add_argument("--rho-phi", type=float, required=True)
    r.add_argument("--l1", type=int, required=True)
    r.add_argument("--k-max", type=int, default=1000)
    r.set_defaults(func=cmd_rinf)

    v = sub.add_parser("verdict", help="stability verdicts of finished runs")
    v.add_argument("run_dir")
    v.set_defaults(func=cmd_verdict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "jobs", 0) is None:
            args.jobs = _default_jobs()
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DcpSimError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
