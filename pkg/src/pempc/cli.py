"""Command-line front end: refgen, simulate, check, and sweep.

Exit codes: 0 success, 2 aborted run or failed generation, 3
configuration error. Verbosity via the PEMPC_LOG environment variable.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import loop as loopmod
from . import model as mdl
from . import refgen
from .errors import CertificationFailed, ConfigurationError, PempcError, SimulationAborted

log = logging.getLogger("pempc")

EXIT_OK = 0
EXIT_RUN_FAILED = 2
EXIT_CONFIG = 3

# config-file paths accepted by `sweep` -> ExperimentConfig attribute paths
SWEEP_PATHS = {
    "sim.noise.w_bar": "w_bar",
    "sim.noise.seed": "seed",
    "sim.K_total": "K_total",
    "sim.x0": "x0",
    "rls.lambda": "rls_lambda",
    "rls.theta_hat_0": "theta_hat_0",
    "mpc.N": "mpc.N",
    "mpc.gn_tol": "mpc.gn_tol",
    "mpc.max_iter": "mpc.max_iter",
}


def _write_reference(traj: refgen.ReferenceTrajectory, out_dir: str, formats):
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    if "json" in formats:
        path = os.path.join(out_dir, "reference.json")
        with open(path, "w") as fh:
            json.dump(traj.to_dict(), fh, indent=2, sort_keys=True)
        paths["json"] = path
    if "csv" in formats:
        path = os.path.join(out_dir, "reference.csv")
        n = traj.x_r.shape[1]
        m = traj.u_r.shape[1]
        with open(path, "w") as fh:
            cols = ["k"] + [f"xr{i}" for i in range(n)] + [f"ur{i}" for i in range(m)]
            fh.write(",".join(cols) + "\n")
            for k in range(traj.M):
                row = [float(k)] + list(traj.x_r[k]) + list(traj.u_r[k])
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        paths["csv"] = path
    return paths


def cmd_refgen(args) -> int:
    cfg = cfgmod.load_config(args.config)
    model = cfgmod.build_model(cfg)
    if cfg["reference"]["mode"] == "load":
        raise ConfigurationError("refgen requires reference.mode 'generate' or 'optimize'")
    out_dir = args.out or cfg["output"]["dir"]
    try:
        traj = cfgmod.build_reference(cfg, model)
    except CertificationFailed as exc:
        print(f"reference generation failed at stage: {exc.stage} ({exc})", file=sys.stderr)
        return EXIT_RUN_FAILED
    except PempcError as exc:
        print(f"reference generation failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    paths = _write_reference(traj, out_dir, cfg["output"]["formats"])
    cert = traj.pe
    print(
        f"certified period-{traj.M} reference: x_r(0)="
        f"{np.array2string(traj.x_r[0], precision=6)} "
        f"alpha={cert.alpha:.6g} beta={cert.beta:.6g} "
        f"residual={traj.feasibility_residual:.3e} -> {paths}"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = cfgmod.load_config(args.config)
    model = cfgmod.build_model(cfg)
    out_dir = args.out or cfg["output"]["dir"]
    try:
        reference = cfgmod.build_reference(cfg, model)
    except PempcError as exc:
        print(f"reference generation failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    experiment = cfgmod.build_experiment(cfg, model, reference)
    if args.seed is not None:
        experiment = replace(experiment, seed=args.seed)
    if args.no_noise:
        experiment = replace(experiment, w_bar=0.0)
    if args.fixed_theta:
        experiment = replace(experiment, rls_enabled=False)
    os.makedirs(out_dir, exist_ok=True)
    code = EXIT_OK
    try:
        trace = loopmod.run(experiment)
    except SimulationAborted as exc:
        log.warning("run aborted: %s", exc)
        trace = exc.trace
        code = EXIT_RUN_FAILED
    formats = cfg["output"]["formats"]
    if "csv" in formats:
        trace.to_csv(os.path.join(out_dir, "trace.csv"))
    summary = trace.summary()
    if "json" in formats:
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    def _fmt(v):
        return "n/a" if v is None else f"{v:.6g}"
    print(
        f"{'aborted' if summary['aborted'] else 'completed'} after {summary['rows']} steps: "
        f"final |theta_err|={_fmt(summary['final_theta_err'])} "
        f"steady tracking error={_fmt(summary['steady_track_err'])} "
        f"k_pe={summary['k_pe']}"
    )
    return code


def _controllability_rank(A: np.ndarray, B: np.ndarray) -> int:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    K = np.hstack(blocks)
    return refgen._numerical_rank(K)


def cmd_check(args) -> int:
    cfg = cfgmod.load_config(args.config)
    model = cfgmod.build_model(cfg)
    rsec = cfg["reference"]
    u_s = rsec.get("u_s", [0.0] * model.m)
    x_guess = rsec.get("x_guess", [0.0] * model.n)
    theta = model.theta_true
    try:
        eq = refgen.find_equilibrium(model, theta, u_s, x_guess, require_hyperbolic=False)
    except PempcError as exc:
        print(f"equilibrium solve failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    lin = mdl.linearize(model, eq.x_s, eq.u_s, theta)
    report = refgen.output_reachability(lin)
    ctrl_rank = _controllability_rank(lin.A, lin.B)
    eig_ok = [bool(abs(ev - 1.0) > refgen.HYPERBOLIC_TOL) for ev in eq.eigenvalues]
    result = {
        "equilibrium": eq.to_dict(),
        "controllability_rank": ctrl_rank,
        "controllable": ctrl_rank == model.n,
        "eigenvalue_not_one": eig_ok,
        "reachability": report.to_dict(),
        "hypotheses": {
            "periodic_reference_exists": bool(ctrl_rank == model.n and all(eig_ok)),
            "pe_transferable_from_input": bool(report.any_reachable),
        },
    }
    if args.json:
        print(json.dumps(result, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"equilibrium: x_s={eq.x_s} u_s={eq.u_s} residual={eq.residual:.3e}")
    for i, ev in enumerate(eq.eigenvalues):
        marker = "" if eig_ok[i] else "  <- eigenvalue at 1 violates the hypothesis"
        print(f"eigenvalue {i}: {ev:.6g}{marker}")
    print(f"controllability rank: {ctrl_rank}/{model.n} "
          f"({'controllable' if ctrl_rank == model.n else 'NOT controllable'})")
    for row in report.rows:
        verdict = "output reachable" if row.output_reachable else "not output reachable"
        print(f"state row {row.index}: rank {row.rank}/{model.S}, degree {row.degree}: {verdict}")
    hyp = result["hypotheses"]
    print(f"periodic reference existence hypotheses hold: {hyp['periodic_reference_exists']}")
    print(f"input excitation transfers to the regressor: {hyp['pe_transferable_from_input']}")
    return EXIT_OK


def _load_sweep_spec(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read sweep spec {path}: {exc}")
    spec = {
        "grids": raw.get("grids", []),
        "seeds": int(raw.get("seeds", 1)),
        "base_seed": int(raw.get("base_seed", 0)),
    }
    unknown = set(raw) - {"grids", "seeds", "base_seed"}
    if unknown:
        raise ConfigurationError(f"sweep spec: unknown keys {sorted(unknown)}")
    for grid in spec["grids"]:
        if set(grid) != {"path", "values"}:
            raise ConfigurationError("each grid needs exactly 'path' and 'values'")
        if grid["path"] not in SWEEP_PATHS:
            raise ConfigurationError(
                f"unsupported sweep path {grid['path']!r}; "
                f"supported: {sorted(SWEEP_PATHS)}"
            )
    return spec


def cmd_sweep(args) -> int:
    cfg = cfgmod.load_config(args.config)
    spec = _load_sweep_spec(args.spec) if args.spec else {"grids": [], "seeds": 1, "base_seed": 0}
    model = cfgmod.build_model(cfg)
    out_dir = args.out or cfg["output"]["dir"]
    try:
        reference = cfgmod.build_reference(cfg, model)
    except PempcError as exc:
        print(f"reference generation failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    experiment = cfgmod.build_experiment(cfg, model, reference)
    grids = spec["grids"]
    combos = list(itertools.product(*[g["values"] for g in grids])) if grids else [()]
    overrides = []
    labels = []
    for combo in combos:
        for j in range(spec["seeds"]):
            pairs = [
                (SWEEP_PATHS[g["path"]], v) for g, v in zip(grids, combo)
            ]
            pairs.append(("seed", spec["base_seed"] + j))
            overrides.append(pairs)
            labels.append({g["path"]: v for g, v in zip(grids, combo)})
    summaries = loopmod.sweep(experiment, overrides)
    for label, entry in zip(labels, summaries):
        entry["grid"] = label
    os.makedirs(out_dir, exist_ok=True)
    fields = [
        "index", "seed", "grid", "rows", "aborted", "final_theta_err",
        "steady_theta_err", "track_err_last_period", "steady_track_err",
        "k_pe", "worst_pe_after_k_pe", "error",
    ]
    with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
        fh.write(",".join(fields) + "\n")
        for entry in summaries:
            cells = []
            for f in fields:
                v = entry.get(f)
                if isinstance(v, float):
                    cells.append(f"{v:.17g}")
                elif isinstance(v, dict):
                    cells.append(json.dumps(v).replace(",", ";"))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")
    aggregates = []
    for combo, label in zip(combos, labels[:: max(spec["seeds"], 1)]):
        rows = [e for e, lab in zip(summaries, labels) if lab == label and e.get("error") is None]
        vals = [e["steady_theta_err"] for e in rows if e.get("steady_theta_err") is not None]
        aggregates.append(
            {
                "grid": label,
                "runs": len(rows),
                "failures": sum(
                    1 for e, lab in zip(summaries, labels)
                    if lab == label and e.get("error") is not None
                ),
                "steady_theta_err_quantiles": {
                    q: float(np.quantile(vals, float(q))) for q in ("0.25", "0.5", "0.75")
                }
                if vals
                else None,
            }
        )
    with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
        json.dump(aggregates, fh, indent=2, sort_keys=True)
    failures = sum(1 for e in summaries if e.get("error") is not None)
    print(f"sweep finished: {len(summaries)} runs, {failures} failures -> {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pempc",
        description="Persistently exciting reference generation, tracking MPC, "
        "and closed-loop identification experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="output directory (default: config output.dir)")
        p.add_argument("--seed", type=int, default=None, help="override the noise seed")
        p.add_argument("--json", action="store_true", help="machine-readable stdout")

    p = sub.add_parser("refgen", help="generate and certify a periodic reference")
    add_common(p)
    p.set_defaults(func=cmd_refgen)

    p = sub.add_parser("simulate", help="run the adaptive closed loop")
    add_common(p)
    p.add_argument("--no-noise", action="store_true", help="force the disturbance bound to 0")
    p.add_argument("--fixed-theta", action="store_true",
                   help="freeze the estimate at theta_hat_0 (estimator ablation)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="verify reference-existence hypotheses for the model")
    add_common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="run parameter/seed ensembles")
    add_common(p)
    p.add_argument("--spec", default=None, help="sweep spec (JSON: grids, seeds, base_seed)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PEMPC_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationAborted as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())
