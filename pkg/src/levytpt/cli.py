"""Command-line pipeline: simulate, extract, solve, sample-tpp, report.

Each stage reads one TOML config, writes CSV artifacts plus a hash-chained
manifest into the output directory, and is byte-reproducible for a fixed
seed.  Exit codes: 0 ok, 2 config error, 3 empty result, 4 numeric
failure, 5 missing or mismatched dependency.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import artifacts as art
from .config import RunConfig, apply_overrides, load_config
from .errors import (ConfigError, DependencyError, EmptyResultError,
                     LevyTptError, NumericError)
from .simulate import Trajectory, simulate_path
from .solvers import (solve_backward_committor_1d, solve_forward_committor_1d,
                      solve_mean_hitting_time_1d, solve_stationary_density_1d)
from .stats import (boundary_distributions, divergence_residual,
                    probability_current_1d, rate_report, reactive_density)
from .tpp import (TppConfig, corrupted_committor, equivalence_report,
                  sample_tpp_ensemble)
from .transitions import empirical_rate, extract_transitions, transitions_to_csv

EXIT_CODES = {ConfigError: 2, EmptyResultError: 3, NumericError: 4,
              DependencyError: 5}

FIELD_FILES = {"rho": "rho.csv", "q": "q.csv", "qbar": "qbar.csv",
               "uA": "u_a.csv", "uB": "u_b.csv"}


def _load(args) -> tuple:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg,
                          seed=getattr(args, "seed", None),
                          dt=getattr(args, "dt", None),
                          T=getattr(args, "T", None),
                          threads=getattr(args, "threads", None))
    outdir = args.out or cfg.output["directory"]
    os.makedirs(outdir, exist_ok=True)
    return cfg, outdir


def cmd_simulate(args) -> int:
    cfg, outdir = _load(args)
    model = cfg.build_model()
    a, b = cfg.region_pair()
    nm = cfg.numerics
    x0 = nm["x0"]
    if x0 is None:
        x0 = 0.5 * (a.lo + a.hi)
    traj = simulate_path(model, float(x0), T=float(nm["T"]), dt=float(nm["dt"]),
                         seed=int(nm["seed"]))
    path = os.path.join(outdir, "trajectory.csv")
    traj.to_csv(path)
    art.write_meta(path, {"kind": "trajectory", "config_sha256": cfg.hash(),
                          "seed": int(nm["seed"]),
                          "params": {"x0": float(x0), "T": float(nm["T"]),
                                     "dt": float(nm["dt"])},
                          "versions": art.versions()})
    art.write_manifest(outdir, "simulate", cfg.hash(), int(nm["seed"]),
                       outputs=["trajectory.csv"])
    in_a = np.mean(a.contains_closure(traj.states))
    in_b = np.mean(b.contains_closure(traj.states))
    print(f"simulated {traj.n_steps} steps (T={float(nm['T']):g}, dt={float(nm['dt']):g}), "
          f"{len(traj.jump_steps)} jumps")
    print(f"time fraction in source {in_a:.4f}, in destination {in_b:.4f}")
    print(f"wrote {path}")
    return 0


def cmd_extract(args) -> int:
    cfg, outdir = _load(args)
    a, b = cfg.region_pair()
    tr_path = art.require_artifact(outdir, "trajectory.csv", "extract")
    traj = Trajectory.from_csv(tr_path)
    q = None
    qp = os.path.join(outdir, "q.csv")
    if os.path.exists(qp):
        q = art.field_from_csv(qp, name="committor", edge="clamp")
    tts = extract_transitions(traj, a, b, q=q,
                              q_level=float(cfg.numerics["q_level"]),
                              keep_segments=False)
    if not tts:
        raise EmptyResultError("no transitions observed; increase T or noise")
    est = empirical_rate(traj, a, b)
    out_csv = os.path.join(outdir, "transitions.csv")
    transitions_to_csv(tts, out_csv)
    summary = {"n_transitions": est.n_transitions, "window": est.window,
               "k_ab": est.k_ab, "k_stderr": est.k_stderr,
               "t_ab": est.t_ab, "t_ab_stderr": est.t_ab_stderr,
               "t_ba": est.t_ba, "t_ba_stderr": est.t_ba_stderr,
               "config_sha256": cfg.hash()}
    sum_path = os.path.join(outdir, "transitions_summary.json")
    with open(sum_path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for p in (out_csv,):
        art.write_meta(p, {"kind": "transitions", "config_sha256": cfg.hash(),
                           "inputs": art.input_hashes(outdir, ["trajectory.csv"]),
                           "versions": art.versions()})
    art.write_manifest(outdir, "extract", cfg.hash(), None,
                       outputs=["transitions.csv", "transitions_summary.json"],
                       inputs=art.input_hashes(outdir, ["trajectory.csv"]))
    n_ab = sum(1 for t in tts if t.direction == "AB")
    print(f"N_T={n_ab} A-to-B legs over window {est.window:g} "
          f"({len(tts)} legs both directions)")
    print(f"k_AB={est.k_ab:.6g} +- {est.k_stderr:.2g}")
    print(f"T_AB={est.t_ab:.6g} +- {est.t_ab_stderr:.2g}   "
          f"T_BA={est.t_ba:.6g} +- {est.t_ba_stderr:.2g}")
    print(f"wrote {out_csv}")
    return 0


def _solve_one(field: str, cfg: RunConfig, solver_cfg, outdir):
    model = cfg.build_model()
    a, b = cfg.region_pair()
    if field == "rho":
        return solve_stationary_density_1d(model, solver_cfg)
    if field == "q":
        return solve_forward_committor_1d(model, a, b, solver_cfg)
    if field == "qbar":
        rp = os.path.join(outdir, "rho.csv")
        if not os.path.exists(rp):
            raise DependencyError("solving qbar requires rho.csv; "
                                  "run solve --field rho first")
        rho = art.field_from_csv(rp, name="stationary_density", edge="zero")
        if len(rho.x) != solver_cfg.n:
            raise DependencyError(f"rho.csv grid ({len(rho.x)} nodes) does not "
                                  f"match the configured grid ({solver_cfg.n})")
        return solve_backward_committor_1d(model, rho, a, b, solver_cfg)
    if field == "uA":
        return solve_mean_hitting_time_1d(model, a, solver_cfg)
    if field == "uB":
        return solve_mean_hitting_time_1d(model, b, solver_cfg)
    raise ConfigError(f"unknown field '{field}' (choose from {list(FIELD_FILES)})")


def cmd_solve(args) -> int:
    cfg, outdir = _load(args)
    tol = float(cfg.numerics["tolerance"])
    base = cfg.solver_config()
    sol = _solve_one(args.field, cfg, base, outdir)
    verdict = "ok" if sol.residual <= tol else "ABOVE TOLERANCE"
    print(f"{args.field}: residual {sol.residual:.3e} (tolerance {tol:g}) {verdict}")
    if args.refine and args.refine > 1:
        # diagnostic ladder; the artifact stays on the configured grid
        diffs = []
        prev = sol.field
        for level in (args.refine, args.refine * 2):
            fine = _solve_one(args.field, cfg, cfg.solver_config(refine=level),
                              outdir).field
            on_prev = np.interp(prev.x, fine.x, fine.values)
            diffs.append(float(np.max(np.abs(prev.values - on_prev))))
            prev = fine
        ratio = diffs[0] / max(diffs[1], 1e-300)
        print(f"refinement x{args.refine}: sup-diffs {diffs[0]:.3e} -> "
              f"{diffs[1]:.3e}, convergence ratio {ratio:.2f}")
        a, b = cfg.region_pair()
        dx = (base.hi - base.lo) / (base.n - 1)
        walls = [w for reg in (a, b) for w in reg.bounds()]
        off = max(abs((w - base.lo) / dx - round((w - base.lo) / dx))
                  for w in walls)
        if off > 1e-9:
            print("note: region walls fall between grid nodes; wall-cell "
                  "offsets contaminate the ratio. For a clean convergence "
                  "measurement choose numerics.n so the walls land on nodes.")
    if sol.residual > tol:
        raise NumericError(f"{args.field} residual {sol.residual:.3e} "
                           f"exceeds tolerance {tol:g}")
    path = os.path.join(outdir, FIELD_FILES[args.field])
    inputs = {}
    if args.field == "qbar":
        inputs = art.input_hashes(outdir, ["rho.csv"])
    art.field_to_csv(sol.field, path,
                     meta={"kind": f"field:{args.field}",
                           "config_sha256": cfg.hash(),
                           "grid": {"lo": base.lo, "hi": base.hi, "n": base.n},
                           "residual": sol.residual, "inputs": inputs,
                           "versions": art.versions()})
    art.write_manifest(outdir, f"solve_{args.field}", cfg.hash(), None,
                       outputs=[FIELD_FILES[args.field]], inputs=inputs)
    print(f"wrote {path}")
    return 0


def cmd_sample_tpp(args) -> int:
    cfg, outdir = _load(args)
    model = cfg.build_model()
    a, b = cfg.region_pair()
    nm = cfg.numerics
    qp = art.require_artifact(outdir, "q.csv", "sample-tpp")
    tp = art.require_artifact(outdir, "trajectory.csv", "sample-tpp")
    q = art.field_from_csv(qp, name="committor", edge="clamp")
    traj = Trajectory.from_csv(tp)
    tts = extract_transitions(traj, a, b, q=q,
                              q_level=float(nm["q_level"]), keep_segments=False)
    starts = np.array([t.start_point for t in tts if t.direction == "AB"])
    if len(starts) == 0:
        raise EmptyResultError("no A-to-B legs in the trajectory to seed "
                               "the sampler or compare against")
    q_used = q
    if args.negative_control:
        q_used = corrupted_committor(q)
        print("negative control: sampling against a deliberately corrupted committor")
    n = args.n or int(nm["n_tpp"])
    tcfg = TppConfig(dt=float(nm["dt"]), t_cap=float(nm["t_cap"]),
                     q_level=float(nm["q_level"]))
    ens = sample_tpp_ensemble(model, q_used, a, b, starts, n, tcfg,
                              seed=int(nm["seed"]), threads=int(nm["threads"]))
    rep = equivalence_report(tts, ens, dt=float(nm["dt"]))
    out_csv = os.path.join(outdir, "tpp_summary.csv")
    with open(out_csv, "w") as fh:
        fh.write("n,status,duration,y_start,y_end,cross,n_jumps,substeps\n")
        for i, p in enumerate(ens.paths):
            fh.write(f"{i},{p.status},{p.duration:.17g},{p.y_start:.17g},"
                     f"{p.y_end:.17g},{p.cross_x:.17g},{p.n_jumps},{p.substeps}\n")
    summary = {"n": ens.n, "hits": ens.n_b, "rejected_count": ens.n_a,
               "floor": ens.n_floor, "timeout": ens.n_timeout,
               "rejection_rate": ens.rejection_rate,
               "negative_control": bool(args.negative_control),
               "ks": {k: {"d": d, "p": p} for k, (d, p, _, _) in rep.stats.items()},
               "equivalence_ok": rep.ok,
               "config_sha256": cfg.hash()}
    sum_path = os.path.join(outdir, "tpp_summary.json")
    with open(sum_path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    art.write_meta(out_csv, {"kind": "tpp_ensemble", "config_sha256": cfg.hash(),
                             "seed": int(nm["seed"]),
                             "inputs": art.input_hashes(outdir, ["q.csv", "trajectory.csv"]),
                             "versions": art.versions()})
    art.write_manifest(outdir, "sample_tpp", cfg.hash(), int(nm["seed"]),
                       outputs=["tpp_summary.csv", "tpp_summary.json"],
                       inputs=art.input_hashes(outdir, ["q.csv", "trajectory.csv"]))
    print(f"sampled {ens.n} tilted paths: {ens.n_b} hits, "
          f"{ens.n_a} rejected (rate {ens.rejection_rate:.4f}), "
          f"{ens.n_floor} floor, {ens.n_timeout} timeout")
    for line in rep.lines():
        print(line)
    if args.negative_control:
        print("negative control result: " +
              ("test FAILED as required" if not rep.ok
               else "WARNING: corrupted committor was not detected"))
    print(f"wrote {out_csv}")
    return 0


def cmd_report(args) -> int:
    cfg, outdir = _load(args)
    model = cfg.build_model()
    a, b = cfg.region_pair()
    needed = ["rho.csv", "q.csv", "qbar.csv", "u_a.csv", "u_b.csv"]
    for fn in needed:
        art.require_artifact(outdir, fn, "report")
    art.check_config_hashes(outdir, needed, cfg.hash())
    rho = art.field_from_csv(os.path.join(outdir, "rho.csv"),
                             name="stationary_density", edge="zero")
    q = art.field_from_csv(os.path.join(outdir, "q.csv"),
                           name="committor", edge="clamp")
    qbar = art.field_from_csv(os.path.join(outdir, "qbar.csv"),
                              name="backward_committor", edge="clamp")
    u_a = art.field_from_csv(os.path.join(outdir, "u_a.csv"),
                             name="hitting_time_a", edge="clamp")
    u_b = art.field_from_csv(os.path.join(outdir, "u_b.csv"),
                             name="hitting_time_b", edge="clamp")
    sum_path = art.require_artifact(outdir, "transitions_summary.json", "report")
    with open(sum_path) as fh:
        tsum = json.load(fh)
    if tsum.get("config_sha256") != cfg.hash():
        raise DependencyError("config hash mismatch: transitions_summary.json "
                              "was produced under a different config")
    rho_r, z_ab, _ = reactive_density(rho, q, qbar)
    j = probability_current_1d(model, rho, q, qbar,
                               n_quad=2 * int(cfg.numerics["n_quad"]),
                               n_theta=int(cfg.numerics["n_theta"]))
    resid = divergence_residual(j, a, b)
    bd = boundary_distributions(model, rho, q, qbar, a, b,
                                n_quad=int(cfg.numerics["n_quad"]))
    rep = rate_report(float(tsum["k_ab"]), j, q, u_a, u_b,
                      bd.eta_a_plus, bd.eta_b_plus)
    lines = [
        f"reactive fraction z_AB = {z_ab:.6g}",
        f"divergence residual   = {resid:.3e}",
        "rates:",
        f"  k_count   = {rep.k_count:.6g}   (N_T/T from extraction)",
    ]
    for z, v in sorted(rep.k_flux.items()):
        lines.append(f"  k_flux({z:.1f}) = {v:.6g}")
    lines += [
        f"  k_hitting = {rep.k_hitting:.6g}   "
        f"(T_AB={rep.t_ab:.6g}, T_BA={rep.t_ba:.6g})",
        f"  reciprocal-sum display value = {rep.reciprocal_sum_value:.6g} "
        "(not an estimator of k)",
        "pairwise discrepancies:",
    ]
    for pair, d in rep.discrepancies.items():
        lines.append(f"  {pair}: {d:.4f}")
    text = "\n".join(lines) + "\n"
    rep_path = os.path.join(outdir, "rate_report.txt")
    with open(rep_path, "w") as fh:
        fh.write(text)
    curves = os.path.join(outdir, "curves.csv")
    with open(curves, "w") as fh:
        fh.write("x,q,qbar,rho,rho_r,j_ab\n")
        for i in range(len(rho.x)):
            fh.write(f"{rho.x[i]:.17g},{q.values[i]:.17g},{qbar.values[i]:.17g},"
                     f"{rho.values[i]:.17g},{rho_r.values[i]:.17g},"
                     f"{j.values[i]:.17g}\n")
    art.write_meta(curves, {"kind": "curves", "config_sha256": cfg.hash(),
                            "inputs": art.input_hashes(outdir, needed),
                            "versions": art.versions()})
    art.write_manifest(outdir, "report", cfg.hash(), None,
                       outputs=["rate_report.txt", "curves.csv"],
                       inputs=art.input_hashes(outdir, needed + ["transitions_summary.json"]))
    print(text, end="")
    print(f"wrote {rep_path} and {curves}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="levytpt",
        description="Transition path analysis for jump-diffusions: simulate, "
                    "extract transitions, solve nonlocal fields, sample the "
                    "conditioned path process, and report rates.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", default=None, help="output directory "
                       "(default: [output].directory from the config)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--T", type=float, default=None)

    p = sub.add_parser("simulate", help="sample one equilibrium path")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract", help="decompose a trajectory into transition legs")
    common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("solve", help="solve a stationary field on the grid")
    common(p)
    p.add_argument("--field", required=True, choices=sorted(FIELD_FILES))
    p.add_argument("--refine", type=int, default=None,
                   help="also solve on a refined ladder and report the "
                        "convergence ratio (diagnostic only)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sample-tpp", help="sample conditioned transition paths "
                                          "and test them against extracted legs")
    common(p)
    p.add_argument("--n", type=int, default=None,
                   help="ensemble size (default numerics.n_tpp)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--negative-control", action="store_true",
                   help="corrupt the committor; the equivalence test must fail")
    p.set_defaults(func=cmd_sample_tpp)

    p = sub.add_parser("report", help="rates, current, and plot-ready curves")
    common(p)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LevyTptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for etype, code in EXIT_CODES.items():
            if isinstance(exc, etype):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
