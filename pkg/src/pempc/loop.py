"""Closed-loop simulation: MPC with the current estimate, bounded noise,
recursive least squares, and persistent-excitation monitoring.

Each run is a pure function of (config, seed): the disturbance stream
comes from a named seeded generator recorded in the trace header, so
repeated runs produce bit-identical traces.
"""

from __future__ import annotations

import copy
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as mdl
from . import mpc, rls
from .errors import (
    ConfigurationError,
    ConvergenceFailure,
    IllConditionedUpdate,
    RolloutDiverged,
    SimulationAborted,
)
from .refgen import ReferenceTrajectory

RNG_ID = "numpy.random.Generator(PCG64)"


@dataclass
class ExperimentConfig:
    model: mdl.ParametricModel
    reference: ReferenceTrajectory
    mpc: mpc.MpcConfig
    rls_lambda: float
    rls_T: np.ndarray
    rls_P_init: np.ndarray
    theta_hat_0: np.ndarray
    x0: np.ndarray
    K_total: int = 300
    w_bar: float | None = None  # None: use model.w_bar
    seed: int = 0
    noise_kind: str = "uniform"
    hessian_mode: str = "fast"  # "strict": every step, "fast": every M steps
    rls_enabled: bool = True
    allow_uncertified_reference: bool = False
    pe_threshold: float | None = None

    def __post_init__(self):
        if self.noise_kind != "uniform":
            raise ConfigurationError(f"unsupported noise kind {self.noise_kind!r}")
        if self.hessian_mode not in ("strict", "fast"):
            raise ConfigurationError("hessian_mode must be 'strict' or 'fast'")
        if self.K_total < 1:
            raise ConfigurationError("K_total must be >= 1")

    @property
    def noise_bound(self) -> float:
        return self.model.w_bar if self.w_bar is None else self.w_bar


class PeMonitor:
    """Rolling window sum of regressor outer products.

    Keeps the last `window` regressors in a circular buffer; the window
    sum is maintained incrementally and recomputed from scratch every
    `window` updates to cancel floating-point drift. `k_pe` is the first
    step after which every full window so far has stayed above the
    threshold.
    """

    def __init__(self, S: int, window: int, threshold: float):
        self.window = window
        self.threshold = threshold
        self._buffer = []
        self._sum = np.zeros((S, S))
        self._count = 0
        self.lambda_min_stream = []
        self.k_pe = None

    def update(self, phi: np.ndarray):
        """Push one regressor; returns (window lambda_min or nan, is_pe_now)."""
        outer = phi @ phi.T
        self._buffer.append(outer)
        self._sum += outer
        if len(self._buffer) > self.window:
            self._sum -= self._buffer.pop(0)
        self._count += 1
        if self._count % self.window == 0:
            self._sum = np.sum(self._buffer, axis=0)
        if len(self._buffer) < self.window:
            self.lambda_min_stream.append(np.nan)
            return np.nan, False
        lam_min = float(np.linalg.eigvalsh(0.5 * (self._sum + self._sum.T))[0])
        self.lambda_min_stream.append(lam_min)
        is_pe = lam_min > self.threshold
        if is_pe:
            if self.k_pe is None:
                self.k_pe = self._count - 1
        else:
            self.k_pe = None
        return lam_min, is_pe

    def window_sum(self) -> np.ndarray:
        return self._sum.copy()


@dataclass
class SimTrace:
    columns: list
    data: np.ndarray  # (rows, len(columns))
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    def to_csv(self, path_or_buf):
        if hasattr(path_or_buf, "write"):
            self._write(path_or_buf)
        else:
            with open(path_or_buf, "w") as fh:
                self._write(fh)

    def _write(self, fh):
        fh.write(f"# rng={self.meta.get('rng', RNG_ID)} seed={self.meta.get('seed')}\n")
        fh.write(",".join(self.columns) + "\n")
        for row in self.data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self._write(buf)
        return buf.getvalue()

    def summary(self) -> dict:
        steady = min(50, self.rows)
        M = self.meta.get("M", 1)
        theta_err = self["theta_err"]
        track = self["track_err"]
        pe = self["pe_lambda_min"]
        k_pe = self.meta.get("k_pe")
        worst_pe = None
        if k_pe is not None:
            tail = pe[k_pe:]
            tail = tail[np.isfinite(tail)]
            worst_pe = float(tail.min()) if tail.size else None
        return {
            "rows": self.rows,
            "seed": self.meta.get("seed"),
            "rng": self.meta.get("rng", RNG_ID),
            "aborted": self.meta.get("aborted", False),
            "abort_reason": self.meta.get("abort_reason"),
            "final_theta_err": float(theta_err[-1]) if self.rows else None,
            "steady_theta_err": float(np.median(theta_err[-steady:])) if self.rows else None,
            "track_err_last_period": float(np.mean(track[-M:])) if self.rows else None,
            "steady_track_err": float(np.mean(track[-steady:])) if self.rows else None,
            "k_pe": k_pe,
            "worst_pe_after_k_pe": worst_pe,
            "theta0_offset": self.meta.get("theta0_offset"),
            "x0_offset": self.meta.get("x0_offset"),
        }


def trace_columns(n: int, m: int, S: int) -> list:
    cols = ["k"]
    cols += [f"x{i}" for i in range(n)]
    cols += [f"u{i}" for i in range(m)]
    cols += [f"xr{i}" for i in range(n)]
    cols += [f"ur{i}" for i in range(m)]
    cols += ["track_err"]
    cols += [f"thetahat{i}" for i in range(S)]
    cols += ["theta_err"]
    cols += [f"theta_ctrl{i}" for i in range(S)]
    cols += ["v_n", "mpc_iters", "mpc_grad_norm", "hess_lambda_min"]
    cols += ["innovation_norm", "pe_lambda_min", "rls_pinv_lambda_min"]
    cols += [f"w{i}" for i in range(n)]
    return cols


def run(config: ExperimentConfig) -> SimTrace:
    """Simulate the closed loop for K_total steps.

    The controller uses theta_hat_0 for the first M steps, then the
    running estimate. The estimator ingests data from step 0 either way.
    Aborts (carrying the partial trace) on MPC failure or a non-finite
    state.
    """
    model = config.model
    ref = config.reference
    M = ref.M
    if not config.allow_uncertified_reference:
        if ref.pe is None or not ref.pe.passed:
            raise ConfigurationError(
                "reference trajectory is not certified persistently exciting; "
                "set allow_uncertified_reference to run anyway"
            )
    n, m, S = model.n, model.m, model.S
    theta0 = mdl._as_vector(config.theta_hat_0, S, "theta_hat_0")
    x = mdl._as_vector(config.x0, n, "x0").copy()
    w_bar = config.noise_bound
    rng = np.random.default_rng(config.seed)
    state = rls.RlsState(
        theta_hat=theta0.copy(),
        P=np.asarray(config.rls_P_init, dtype=float),
        lam=config.rls_lambda,
        T=np.asarray(config.rls_T, dtype=float),
    )
    if config.pe_threshold is not None:
        pe_threshold = config.pe_threshold
    elif ref.pe is not None:
        pe_threshold = 0.5 * ref.pe.alpha
    else:
        pe_threshold = 1e-8
    monitor = PeMonitor(S, M, pe_threshold)
    cols = trace_columns(n, m, S)
    rows = []
    meta = {
        "rng": RNG_ID,
        "seed": config.seed,
        "M": M,
        "w_bar": w_bar,
        "pe_threshold": pe_threshold,
        "theta0_offset": float(np.linalg.norm(model.theta_true - theta0)),
        "x0_offset": float(np.linalg.norm(x - ref.state_at(0))),
        "rls_enabled": config.rls_enabled,
        "hessian_mode": config.hessian_mode,
        "ill_conditioned_skips": 0,
        "aborted": False,
        "abort_reason": None,
    }

    def make_trace(aborted=False, reason=None, step=None):
        meta_out = dict(meta)
        meta_out["aborted"] = aborted
        meta_out["abort_reason"] = reason
        meta_out["k_pe"] = monitor.k_pe
        data = (
            np.asarray(rows, dtype=float)
            if rows
            else np.empty((0, len(cols)))
        )
        return SimTrace(columns=cols, data=data, meta=meta_out)

    warm = None
    for k in range(config.K_total):
        theta_ctrl = theta0 if k < M else state.theta_hat
        try:
            sol = mpc.solve(model, theta_ctrl, x, ref, k, config.mpc, warm_start=warm)
        except (ConvergenceFailure, RolloutDiverged) as exc:
            raise SimulationAborted(
                f"MPC solve failed at step {k}: {exc}",
                trace=make_trace(aborted=True, reason=str(exc), step=k),
                step=k,
            ) from exc
        u = sol.first_input
        hess_lam = np.nan
        if config.hessian_mode == "strict" or k % M == 0:
            hess_lam, _ = mpc.check_hessian_pd(model, theta_ctrl, sol, ref, k, config.mpc)
        if w_bar > 0:
            w = rng.uniform(-w_bar, w_bar, size=n)
        else:
            w = np.zeros(n)
        phi = mdl.regressor(model, x, u)
        f0v = mdl.f0_value(model, x, u)
        x_next = mdl.step(model, x, u, model.theta_true, w)
        if not np.isfinite(x_next).all():
            raise SimulationAborted(
                f"non-finite state at step {k}",
                trace=make_trace(aborted=True, reason="non-finite state", step=k),
                step=k,
            )
        innovation = rls.predict_error(state, phi, x_next, f0v)
        if config.rls_enabled:
            try:
                state = rls.rls_update(state, phi, x_next, f0v)
            except IllConditionedUpdate:
                meta["ill_conditioned_skips"] += 1
        pe_lam, _ = monitor.update(phi)
        pinv_lam_min = 1.0 / float(np.linalg.eigvalsh(state.P)[-1])
        row = [float(k)]
        row += list(x)
        row += list(u)
        row += list(ref.state_at(k))
        row += list(ref.input_at(k))
        row += [float(np.linalg.norm(x - ref.state_at(k)))]
        row += list(state.theta_hat)
        row += [float(np.linalg.norm(model.theta_true - state.theta_hat))]
        row += list(theta_ctrl)
        row += [sol.value, float(sol.iterations), sol.grad_norm, hess_lam]
        row += [float(np.linalg.norm(innovation)), pe_lam, pinv_lam_min]
        row += list(w)
        rows.append(row)
        x = x_next
        warm = np.vstack([sol.u_star[1:], sol.u_star[-1:]])
    return make_trace()


def pe_monitor_update(monitor: PeMonitor, phi: np.ndarray):
    """Functional alias for PeMonitor.update."""
    return monitor.update(phi)


def _apply_override(config: ExperimentConfig, path: str, value):
    if "." in path:
        head, rest = path.split(".", 1)
        sub = getattr(config, head)
        new_sub = replace(sub, **{rest: value})
        return replace(config, **{head: new_sub})
    return replace(config, **{path: value})


def sweep(config: ExperimentConfig, overrides: list) -> list:
    """Run one simulation per override set; failures are recorded, not raised.

    Each entry of `overrides` is a list of (path, value) pairs applied to
    a copy of the config. Runs that do not override the seed get
    config.seed + index so every run owns an independent stream. An
    empty list means a single unmodified run.
    """
    sets = overrides if overrides else [[]]
    summaries = []
    for idx, pairs in enumerate(sets):
        entry = {"index": idx, "overrides": list(pairs), "seed": None, "error": None}
        try:
            cfg = copy.copy(config)
            seed_overridden = False
            for path, value in pairs:
                cfg = _apply_override(cfg, path, value)
                if path == "seed":
                    seed_overridden = True
            if overrides and not seed_overridden:
                cfg = replace(cfg, seed=config.seed + idx)
            entry["seed"] = cfg.seed
            trace = run(cfg)
            entry.update(trace.summary())
            entry["error"] = None
        except SimulationAborted as exc:
            if exc.trace is not None:
                entry.update(exc.trace.summary())
            entry["error"] = str(exc)
        except Exception as exc:  # bad override path or config error
            entry["error"] = str(exc)
        summaries.append(entry)
    return summaries
