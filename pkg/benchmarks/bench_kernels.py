"""Benchmark the Jacobian-assembly kernel: compiled extension vs numpy.

Runs dSbus_dV on the bundled cases at a solved operating point and reports
per-call wall time for both implementations plus the largest entrywise
deviation between them.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import importlib
import os
import sys
import time

import numpy as np


def _load_impls():
    from vstab.kernels import _jac_np
    impls = {"numpy": _jac_np}
    try:
        from vstab.kernels import _jac_cy
        impls["cython"] = _jac_cy
    except ImportError:
        pass
    return impls


def bench(fn, ybus, v, repeat):
    fn(ybus, v)  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(ybus, v)
    return (time.perf_counter() - t0) / repeat


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args(argv)

    if os.environ.get("VSTAB_NO_EXT") == "1":
        print("note: VSTAB_NO_EXT=1 only affects the packaged selection; "
              "this benchmark imports both implementations directly")

    from vstab import load_case
    from vstab.acpf import solve_power_flow

    impls = _load_impls()
    if "cython" not in impls:
        print("compiled extension not importable; benchmarking numpy only")

    header = f"{'case':<10}{'n_bus':>6}" + "".join(
        f"{name + ' [us]':>14}" for name in impls) + f"{'max |diff|':>14}"
    print(header)
    print("-" * len(header))
    for case in ("case9", "case14", "case57", "case118"):
        model = load_case(case)
        state = solve_power_flow(model)
        ybus = state.ybus
        v = state.v
        times = {name: bench(mod.dSbus_dV, ybus, v, args.repeat)
                 for name, mod in impls.items()}
        results = {name: mod.dSbus_dV(ybus, v) for name, mod in impls.items()}
        if len(results) == 2:
            (a_va, a_vm), (b_va, b_vm) = results.values()
            diff = max(np.max(np.abs(a_va - b_va)), np.max(np.abs(a_vm - b_vm)))
        else:
            diff = 0.0
        row = f"{case:<10}{model.n_bus:>6}" + "".join(
            f"{1e6 * times[name]:>14.1f}" for name in impls)
        print(row + f"{diff:>14.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
