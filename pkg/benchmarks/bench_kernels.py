"""Compare the numba kernel backend against the pure-numpy fallback.

The backend is frozen when dialfuse.kernels is imported, so each backend is
timed in its own subprocess and the parent prints a comparison table. The
parent also cross-checks the two backends' outputs on identical seeded
inputs and fails if they disagree beyond float32 reduction noise.

Usage:
    python3 benchmarks/bench_kernels.py [--rounds N] [--quick]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

# (name, shape, iterations); iterations chosen so a round is milliseconds
CASES = [
    ("softmax_rows", (2560, 20), 200),          # attention scores, batch 32 x 4 heads x T 20
    ("softmax_rows", (8192, 128), 40),
    ("softmax_rows_backward", (2560, 20), 200),
    ("softmax_rows_backward", (8192, 128), 40),
    ("layer_combine", (13, 15360), 200),        # 13-layer stack, 20 tokens x 768 dims
    ("layer_combine", (25, 153600), 30),
    ("layer_combine_backward", (13, 15360), 200),
    ("layer_combine_backward", (25, 153600), 30),
]


def make_inputs(name, shape, rng):
    if name == "softmax_rows":
        return (rng.standard_normal(shape).astype(np.float32),)
    if name == "softmax_rows_backward":
        y = rng.random(shape).astype(np.float32)
        y /= y.sum(axis=1, keepdims=True)
        return (y, rng.standard_normal(shape).astype(np.float32))
    if name == "layer_combine":
        w = rng.random(shape[0]).astype(np.float32)
        w /= w.sum()
        return (w, rng.standard_normal(shape).astype(np.float32))
    if name == "layer_combine_backward":
        return (
            rng.standard_normal(shape).astype(np.float32),
            rng.standard_normal(shape[1]).astype(np.float32),
        )
    raise ValueError(name)


def run_worker(rounds, quick):
    import dialfuse.kernels as kernels

    results = []
    for name, shape, iterations in CASES:
        if quick:
            iterations = max(1, iterations // 10)
        fn = getattr(kernels, name)
        rng = np.random.default_rng(42)
        args = make_inputs(name, shape, rng)
        out = fn(*args)  # warmup; first numba call pays compilation
        best = min(
            _time_round(fn, args, iterations) for _ in range(rounds)
        )
        results.append({
            "name": name,
            "shape": list(shape),
            "per_call_us": 1e6 * best / iterations,
            "checksum": float(np.asarray(out, np.float64).sum()),
        })
    json.dump({"backend": kernels.BACKEND, "results": results}, sys.stdout)
    sys.stdout.write("\n")


def _time_round(fn, args, iterations):
    start = time.perf_counter()
    for _ in range(iterations):
        fn(*args)
    return time.perf_counter() - start


def launch(backend, argv):
    env = dict(os.environ, DIALFUSE_BACKEND=backend)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker"] + argv,
        env=env, capture_output=True, text=True,
    )
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(f"{backend} worker failed with code {proc.returncode}")
    payload = json.loads(proc.stdout)
    if payload["backend"] != backend:
        raise SystemExit(f"asked for {backend}, worker picked {payload['backend']}")
    return payload["results"]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rounds", type=int, default=5,
                        help="measurement rounds per case; best round wins")
    parser.add_argument("--quick", action="store_true",
                        help="10x fewer iterations per round")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        run_worker(args.rounds, args.quick)
        return 0

    forwarded = ["--rounds", str(args.rounds)] + (["--quick"] if args.quick else [])
    numpy_rows = launch("numpy", forwarded)
    numba_rows = launch("numba", forwarded)

    print(f"{'kernel':<26} {'shape':<14} {'numpy/call':>12} {'numba/call':>12} {'speedup':>8}")
    disagreement = 0.0
    for np_row, nb_row in zip(numpy_rows, numba_rows):
        assert np_row["name"] == nb_row["name"]
        shape = "x".join(str(s) for s in np_row["shape"])
        speedup = np_row["per_call_us"] / nb_row["per_call_us"]
        print(f"{np_row['name']:<26} {shape:<14} "
              f"{np_row['per_call_us']:>10.1f}us {nb_row['per_call_us']:>10.1f}us "
              f"{speedup:>7.2f}x")
        scale = max(1.0, abs(np_row["checksum"]))
        disagreement = max(
            disagreement, abs(np_row["checksum"] - nb_row["checksum"]) / scale
        )
    print(f"max cross-backend checksum disagreement: {disagreement:.2e}")
    if disagreement > 1e-4:
        print("backends disagree beyond float32 reduction noise", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
