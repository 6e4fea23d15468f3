"""Kernel throughput comparison, run as ``python3 -m lsalab.bench``.

Times the coupled two-step-size kernel on the compiled backend and on
the pure-numpy fallback with identical inputs, and reports ns/step plus
the speedup.  The first compiled call is excluded via a warmup run.
"""

from __future__ import annotations

import argparse
import time

from . import _kernels
from .cli import _preset_spec
from .model import build_model
from .rng import substream


def _run_once(backend, model, alpha: float, n: int, seed: int) -> float:
    chain = model.chain
    rng = substream(seed, 0)
    t0 = time.perf_counter()
    div, *_ = backend.rr_stream(
        rng, chain.pi_cdf, chain.row_cdf,
        model.a_of, model.b_of, model.eps_of,
        alpha, model.theta_star, n, n // 2, -1,
    )
    elapsed = time.perf_counter() - t0
    if div >= 0:
        raise RuntimeError(f"benchmark run diverged at step {div}")
    return elapsed


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="compare compiled and pure-numpy kernel throughput")
    parser.add_argument("--n", type=int, default=500_000, help="steps per run")
    parser.add_argument("--repeats", type=int, default=3, help="runs per backend; best kept")
    parser.add_argument("--alpha", type=float, default=0.01)
    parser.add_argument("--preset", default="two_state", help="packaged model preset")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    model = build_model(_preset_spec(args.preset))
    results: dict[str, float] = {}
    for name in ("numba", "numpy"):
        try:
            backend = _kernels.select_backend(name)
        except ImportError as exc:
            print(f"{name:6s}  unavailable ({exc})")
            continue
        _run_once(backend, model, args.alpha, min(args.n, 1000), args.seed)  # warmup/compile
        best = min(
            _run_once(backend, model, args.alpha, args.n, args.seed)
            for _ in range(args.repeats)
        )
        results[name] = best
        print(f"{name:6s}  {best:8.4f} s  {best / args.n * 1e9:9.1f} ns/step  "
              f"(n={args.n}, best of {args.repeats})")
    if set(results) == {"numba", "numpy"}:
        print(f"speedup: {results['numpy'] / results['numba']:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
