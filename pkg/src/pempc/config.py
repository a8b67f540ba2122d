"""Experiment configuration files: schema validation and builders.

A config is a single JSON document with sections model / reference /
mpc / rls / sim / output. Validation fills defaults, rejects unknown
keys, and checks shapes before any numerics run; `validate_config` is
idempotent, so parse -> serialize -> parse is the identity on the
canonical form.
"""

from __future__ import annotations

import json

import numpy as np

from . import refgen
from .errors import ConfigurationError
from .loop import ExperimentConfig
from .model import ParametricModel
from .mpc import MpcConfig


def _require_keys(section: dict, where: str, allowed: dict):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {sorted(unknown)}")
    out = {}
    for key, (required, default) in allowed.items():
        if key in section:
            out[key] = section[key]
        elif required:
            raise ConfigurationError(f"{where}: missing required key {key!r}")
        else:
            out[key] = default
    return out


def _as_matrix(value, where, rows=None, cols=None):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ConfigurationError(f"{where}: expected a matrix (list of rows)")
    if rows is not None and arr.shape[0] != rows:
        raise ConfigurationError(f"{where}: expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ConfigurationError(f"{where}: expected {cols} columns, got {arr.shape[1]}")
    return arr


def _validate_terms(rows, where, n, m):
    if not isinstance(rows, list) or len(rows) != n:
        raise ConfigurationError(f"{where}: expected a list of {n} rows of terms")
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, list):
            raise ConfigurationError(f"{where} row {i}: expected a list of terms")
        terms = []
        for t in row:
            if not isinstance(t, dict):
                raise ConfigurationError(f"{where} row {i}: terms must be objects")
            t = _require_keys(
                t,
                f"{where} row {i} term",
                {"coeff": (True, None), "x_powers": (True, None), "u_powers": (True, None)},
            )
            if len(t["x_powers"]) != n or len(t["u_powers"]) != m:
                raise ConfigurationError(
                    f"{where} row {i}: power lists must have lengths n={n}, m={m}"
                )
            terms.append(
                {
                    "coeff": float(t["coeff"]),
                    "x_powers": [int(p) for p in t["x_powers"]],
                    "u_powers": [int(p) for p in t["u_powers"]],
                }
            )
        out.append(terms)
    return out


def validate_config(raw: dict) -> dict:
    """Validate and canonicalize a parsed config document."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be an object")
    doc = _require_keys(
        raw,
        "config",
        {
            "model": (True, None),
            "reference": (True, None),
            "mpc": (True, None),
            "rls": (True, None),
            "sim": (True, None),
            "output": (False, {}),
        },
    )
    msec = _require_keys(
        doc["model"],
        "model",
        {
            "n": (True, None),
            "m": (True, None),
            "f0": (True, None),
            "basis": (True, None),
            "theta_true": (True, None),
            "w_bar": (False, 0.0),
        },
    )
    n, m = int(msec["n"]), int(msec["m"])
    if n < 1 or m < 1:
        raise ConfigurationError("model: n and m must be >= 1")
    if not isinstance(msec["basis"], list) or len(msec["basis"]) < 1:
        raise ConfigurationError("model: basis must be a nonempty list of maps")
    model_out = {
        "n": n,
        "m": m,
        "f0": _validate_terms(msec["f0"], "model.f0", n, m),
        "basis": [
            _validate_terms(bmap, f"model.basis[{j}]", n, m)
            for j, bmap in enumerate(msec["basis"])
        ],
        "theta_true": [float(v) for v in msec["theta_true"]],
        "w_bar": float(msec["w_bar"]),
    }
    S = len(model_out["basis"])
    if len(model_out["theta_true"]) != S:
        raise ConfigurationError(
            f"model.theta_true must have one entry per basis map ({S})"
        )

    rsec = doc["reference"]
    mode = rsec.get("mode")
    if mode == "generate":
        ref_out = _require_keys(
            rsec,
            "reference",
            {
                "mode": (True, None),
                "M": (True, None),
                "amplitude": (True, None),
                "shape": (False, "sinusoid"),
                "u_s": (True, None),
                "x_guess": (True, None),
                "seed": (False, 0),
            },
        )
        ref_out["M"] = int(ref_out["M"])
        ref_out["amplitude"] = float(ref_out["amplitude"])
        ref_out["u_s"] = [float(v) for v in ref_out["u_s"]]
        ref_out["x_guess"] = [float(v) for v in ref_out["x_guess"]]
        ref_out["seed"] = int(ref_out["seed"])
        if ref_out["shape"] not in ("sinusoid", "prbs"):
            raise ConfigurationError("reference.shape must be 'sinusoid' or 'prbs'")
        if len(ref_out["u_s"]) != m or len(ref_out["x_guess"]) != n:
            raise ConfigurationError("reference: u_s / x_guess dimensions disagree with model")
    elif mode == "optimize":
        ref_out = _require_keys(
            rsec,
            "reference",
            {
                "mode": (True, None),
                "M": (True, None),
                "alpha": (True, None),
                "beta": (True, None),
                "Q": (True, None),
                "R": (True, None),
                "seed": (False, 0),
            },
        )
        ref_out["M"] = int(ref_out["M"])
        ref_out["alpha"] = float(ref_out["alpha"])
        ref_out["beta"] = float(ref_out["beta"])
        ref_out["Q"] = _as_matrix(ref_out["Q"], "reference.Q", n, n).tolist()
        ref_out["R"] = _as_matrix(ref_out["R"], "reference.R", m, m).tolist()
        ref_out["seed"] = int(ref_out["seed"])
    elif mode == "load":
        ref_out = _require_keys(
            rsec, "reference", {"mode": (True, None), "path": (True, None)}
        )
    else:
        raise ConfigurationError(
            "reference.mode must be 'generate', 'optimize', or 'load'"
        )

    csec = _require_keys(
        doc["mpc"],
        "mpc",
        {
            "Q": (True, None),
            "R": (True, None),
            "N": (True, None),
            "gn_tol": (False, 1e-9),
            "max_iter": (False, 50),
            "lm_damping": (False, 0.0),
            "hessian_check": (False, "fast"),
        },
    )
    mpc_out = {
        "Q": _as_matrix(csec["Q"], "mpc.Q", n, n).tolist(),
        "R": _as_matrix(csec["R"], "mpc.R", m, m).tolist(),
        "N": int(csec["N"]),
        "gn_tol": float(csec["gn_tol"]),
        "max_iter": int(csec["max_iter"]),
        "lm_damping": float(csec["lm_damping"]),
        "hessian_check": csec["hessian_check"],
    }
    if mpc_out["hessian_check"] not in ("fast", "strict"):
        raise ConfigurationError("mpc.hessian_check must be 'fast' or 'strict'")

    esec = _require_keys(
        doc["rls"],
        "rls",
        {
            "lambda": (True, None),
            "T": (True, None),
            "P_init": (False, 10.0),
            "theta_hat_0": (True, None),
        },
    )
    P_init = esec["P_init"]
    if np.isscalar(P_init):
        P_init_out = float(P_init)
    else:
        P_init_out = _as_matrix(P_init, "rls.P_init", S, S).tolist()
    rls_out = {
        "lambda": float(esec["lambda"]),
        "T": _as_matrix(esec["T"], "rls.T", n, n).tolist(),
        "P_init": P_init_out,
        "theta_hat_0": [float(v) for v in esec["theta_hat_0"]],
    }
    if not (0.0 < rls_out["lambda"] < 1.0):
        raise ConfigurationError("rls.lambda must lie strictly in (0, 1)")
    if len(rls_out["theta_hat_0"]) != S:
        raise ConfigurationError(f"rls.theta_hat_0 must have length {S}")

    ssec = _require_keys(
        doc["sim"],
        "sim",
        {
            "x0": (False, None),
            "K_total": (False, 300),
            "noise": (False, {}),
        },
    )
    noise = _require_keys(
        ssec["noise"] if isinstance(ssec["noise"], dict) else {},
        "sim.noise",
        {"kind": (False, "uniform"), "w_bar": (False, None), "seed": (False, 0)},
    )
    if noise["kind"] != "uniform":
        raise ConfigurationError("sim.noise.kind must be 'uniform'")
    sim_out = {
        "x0": None if ssec["x0"] is None else [float(v) for v in ssec["x0"]],
        "K_total": int(ssec["K_total"]),
        "noise": {
            "kind": noise["kind"],
            "w_bar": None if noise["w_bar"] is None else float(noise["w_bar"]),
            "seed": int(noise["seed"]),
        },
    }
    if sim_out["x0"] is not None and len(sim_out["x0"]) != n:
        raise ConfigurationError(f"sim.x0 must have length {n}")

    osec = _require_keys(
        doc["output"] if isinstance(doc["output"], dict) else {},
        "output",
        {"dir": (False, "out"), "formats": (False, ["csv", "json"])},
    )
    for fmt in osec["formats"]:
        if fmt not in ("csv", "json"):
            raise ConfigurationError(f"output.formats: unknown format {fmt!r}")

    return {
        "model": model_out,
        "reference": ref_out,
        "mpc": mpc_out,
        "rls": rls_out,
        "sim": sim_out,
        "output": {"dir": str(osec["dir"]), "formats": list(osec["formats"])},
    }


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}")
    return validate_config(raw)


def config_to_json(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def _terms_to_tuples(rows):
    return tuple(
        tuple((t["coeff"], tuple(t["x_powers"]), tuple(t["u_powers"])) for t in row)
        for row in rows
    )


def build_model(cfg: dict) -> ParametricModel:
    msec = cfg["model"]
    return ParametricModel(
        n=msec["n"],
        m=msec["m"],
        f0=_terms_to_tuples(msec["f0"]),
        basis=tuple(_terms_to_tuples(bmap) for bmap in msec["basis"]),
        theta_true=np.asarray(msec["theta_true"], dtype=float),
        w_bar=msec["w_bar"],
    )


def build_reference(cfg: dict, model: ParametricModel) -> refgen.ReferenceTrajectory:
    rsec = cfg["reference"]
    theta = model.theta_true
    if rsec["mode"] == "generate":
        eq = refgen.find_equilibrium(
            model, theta, rsec["u_s"], rsec["x_guess"], require_hyperbolic=False
        )
        return refgen.generate_pe_reference(
            model,
            theta,
            eq,
            M=rsec["M"],
            amplitude=rsec["amplitude"],
            shape=rsec["shape"],
            seed=rsec["seed"],
        )
    if rsec["mode"] == "optimize":
        traj = refgen.optimize_pe_reference(
            model,
            theta,
            Q=np.asarray(rsec["Q"]),
            R=np.asarray(rsec["R"]),
            M=rsec["M"],
            alpha=rsec["alpha"],
            beta=rsec["beta"],
            seed=rsec["seed"],
        )
        return traj
    with open(rsec["path"]) as fh:
        data = json.load(fh)
    traj = refgen.reference_from_dict(data)
    refgen.certify_pe(model, theta, traj)
    return traj


def build_experiment(
    cfg: dict, model: ParametricModel, reference: refgen.ReferenceTrajectory
) -> ExperimentConfig:
    S = model.S
    rsec = cfg["rls"]
    P_init = rsec["P_init"]
    P = float(P_init) * np.eye(S) if np.isscalar(P_init) else np.asarray(P_init, dtype=float)
    sim = cfg["sim"]
    x0 = reference.state_at(0) if sim["x0"] is None else np.asarray(sim["x0"], dtype=float)
    return ExperimentConfig(
        model=model,
        reference=reference,
        mpc=MpcConfig(
            Q=np.asarray(cfg["mpc"]["Q"]),
            R=np.asarray(cfg["mpc"]["R"]),
            N=cfg["mpc"]["N"],
            gn_tol=cfg["mpc"]["gn_tol"],
            max_iter=cfg["mpc"]["max_iter"],
            lm_damping=cfg["mpc"]["lm_damping"],
        ),
        rls_lambda=rsec["lambda"],
        rls_T=np.asarray(rsec["T"], dtype=float),
        rls_P_init=P,
        theta_hat_0=np.asarray(rsec["theta_hat_0"], dtype=float),
        x0=x0,
        K_total=sim["K_total"],
        w_bar=sim["noise"]["w_bar"],
        seed=sim["noise"]["seed"],
        hessian_mode=cfg["mpc"]["hessian_check"],
    )
