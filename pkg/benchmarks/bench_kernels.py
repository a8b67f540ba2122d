#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Times the raw evaluation kernels on the scalar bilinear model and on a
denser 3-state polynomial model, then a full MPC solve and a closed-loop
run with each backend swapped in. Usage: python benchmarks/bench_kernels.py
"""

import time
from contextlib import contextmanager

import numpy as np

import pempc.kernels as kernels
from pempc import (
    ExperimentConfig,
    MpcConfig,
    ParametricModel,
    find_equilibrium,
    generate_pe_reference,
    run,
    solve,
)
from pempc.kernels import available_backends

KERNEL_NAMES = (
    "basis_values",
    "basis_jacobians",
    "step_eval",
    "rollout",
    "rollout_with_jacobians",
)


@contextmanager
def backend(impl):
    saved = {name: getattr(kernels, name) for name in KERNEL_NAMES}
    try:
        for name in KERNEL_NAMES:
            setattr(kernels, name, getattr(impl, name))
        yield
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def timeit(fn, min_time=0.2):
    fn()  # warm up
    n = 1
    while True:
        start = time.perf_counter()
        for _ in range(n):
            fn()
        elapsed = time.perf_counter() - start
        if elapsed >= min_time:
            return elapsed / n
        n = max(n * 2, int(n * min_time / max(elapsed, 1e-9)))


def scalar_model():
    return ParametricModel(
        n=1,
        m=1,
        f0=(((1.0, (0,), (1,)),),),
        basis=((((1.0, (1,), (0,)),),), (((1.0, (1,), (1,)),),)),
        theta_true=np.array([1.1, 0.1]),
        w_bar=0.2,
    )


def dense_model(rng):
    n, m, S = 3, 2, 4
    maps = []
    for _ in range(S + 1):
        rows = []
        for _ in range(n):
            rows.append(
                tuple(
                    (
                        float(rng.normal(scale=0.3)),
                        tuple(int(p) for p in rng.integers(0, 3, n)),
                        tuple(int(p) for p in rng.integers(0, 2, m)),
                    )
                    for _ in range(4)
                )
            )
        maps.append(tuple(rows))
    return ParametricModel(
        n=n, m=m, f0=maps[0], basis=tuple(maps[1:]),
        theta_true=0.3 * rng.normal(size=S), w_bar=0.0,
    )


def bench_case(name, fn, impls):
    times = {}
    for label, impl in impls.items():
        with backend(impl):
            times[label] = timeit(fn)
    speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
    cy = times.get("cython", float("nan"))
    print(
        f"{name:38s} python {times['python'] * 1e6:10.1f} us   "
        f"cython {cy * 1e6:10.1f} us   speedup {speedup:5.1f}x"
    )


def main():
    impls = available_backends()
    print(f"backends available: {sorted(impls)}")
    rng = np.random.default_rng(0)
    small = scalar_model()
    big = dense_model(rng)

    x1, u1 = np.array([1.0]), np.array([-0.09])
    x3, u3 = rng.normal(size=3), rng.normal(size=2)
    th1 = small.theta_true
    th3 = big.theta_true
    useq1 = rng.normal(size=(4, 1))
    useq3 = 0.2 * rng.normal(size=(4, 2))

    bench_case(
        "basis_values (1-state bilinear)",
        lambda: kernels.basis_values(*small._terms, 3, x1, u1),
        impls,
    )
    bench_case(
        "basis_values (3-state polynomial)",
        lambda: kernels.basis_values(*big._terms, 5, x3, u3),
        impls,
    )
    bench_case(
        "basis_jacobians (3-state polynomial)",
        lambda: kernels.basis_jacobians(*big._terms, 5, x3, u3),
        impls,
    )
    bench_case(
        "rollout N=4 (3-state polynomial)",
        lambda: kernels.rollout(*big._terms, 5, th3, 0.1 * x3, useq3),
        impls,
    )
    bench_case(
        "rollout_with_jacobians N=4 (3-state)",
        lambda: kernels.rollout_with_jacobians(*big._terms, 5, th3, 0.1 * x3, useq3),
        impls,
    )

    eq = find_equilibrium(small, th1, [-0.09], [1.0])
    traj = generate_pe_reference(small, th1, eq, M=4, amplitude=0.3)
    cfg = MpcConfig(Q=[[6.0]], R=[[0.1]], N=4)
    bench_case(
        "mpc.solve (bilinear, off reference)",
        lambda: solve(small, th1, traj.x_r[0] + 0.2, traj, 0, cfg),
        impls,
    )

    exp = ExperimentConfig(
        model=small,
        reference=traj,
        mpc=cfg,
        rls_lambda=0.9,
        rls_T=np.eye(1),
        rls_P_init=10 * np.eye(2),
        theta_hat_0=np.array([1.5, -0.4]),
        x0=np.array([1.0]),
        K_total=100,
        w_bar=0.2,
        seed=0,
    )
    bench_case("closed loop, 100 steps", lambda: run(exp), impls)


if __name__ == "__main__":
    main()
