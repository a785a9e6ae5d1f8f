"""Wall time of the compiled and pure-Python propagation kernels.

Runs the same final-infidelity calculations through both backends, checks
that they agree and prints the speed-up::

    python3 benchmarks/bench_propagator.py --repeat 3
"""

import argparse
import time

import numpy as np

from qdrive import _kernels
from qdrive.models import LipkinModel, TwoLevelModel
from qdrive.protocols import build_protocol
from qdrive.propagator import PreparedProtocol

CASES = [
    ("two-level A, T=100", TwoLevelModel(), "A", (-0.5, 1.0), (0.5, 1.0), 100.0),
    ("two-level D, T=1000", TwoLevelModel(), "D", (-0.5, 1.0), (0.5, 1.0), 1000.0),
    ("Lipkin N=10 C, T=300", LipkinModel(10), "C", (0.0, 0.0), (1.2, 0.4), 300.0),
    ("Lipkin N=20 A, T=100", LipkinModel(20), "A", (0.0, 0.0), (1.5, 0.2), 100.0),
]


def best_time(func, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        value = func()
        times.append(time.perf_counter() - t0)
    return min(times), value


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--tol", type=float, default=1e-10)
    args = parser.parse_args(argv)
    backends = _kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernel not available; only the Python backend can run")
    print(f"{'case':<24}" + "".join(f"{b + ' [s]':>14}" for b in backends)
          + f"{'speed-up':>10}{'|dI|':>11}")
    for name, model, label, start, end, T in CASES:
        prep = PreparedProtocol(model, build_protocol(model, label, start, end))
        results = {b: best_time(lambda: prep.final_infidelity(T, args.tol, backend=b),
                                args.repeat) for b in backends}
        row = f"{name:<24}" + "".join(f"{results[b][0]:>14.4f}" for b in backends)
        if len(backends) == 2:
            speed = results["python"][0] / results["cython"][0]
            diff = abs(results["python"][1] - results["cython"][1])
            row += f"{speed:>10.1f}{diff:>11.1e}"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
