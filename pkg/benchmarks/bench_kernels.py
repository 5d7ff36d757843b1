"""Compare the compiled and pure-Python kernels.

Times likelihood evaluation (value, gradient, Hessian), one meta-gradient
batch and simulation on the same inputs under each backend, checks that the
outputs agree, and prints a table.

    python3 benchmarks/bench_kernels.py [--subjects 50] [--k 6] [--repeat 3]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

import relhawkes
from relhawkes import _backend
from relhawkes.meta_adaptation import AdaptationConfig, meta_batch
from relhawkes.point_process import PackedSequences, simulate
from relhawkes.synth_gen import SynthConfig, generate


def workloads(n_subjects, k, seed):
    seqs, _, _ = generate(SynthConfig(n_subjects=n_subjects, K=min(k, n_subjects), seed=seed))
    packed = PackedSequences(seqs)
    rng = np.random.default_rng(seed)
    thetas = np.column_stack([rng.uniform(10, 200, k), rng.uniform(0.2, 0.8, k),
                              rng.uniform(20, 200, k)])
    params = np.tile(thetas, (n_subjects, 1))
    seq_idx = np.repeat(np.arange(n_subjects), k)
    cfg = AdaptationConfig("maml", 1e-4)
    return {
        "loglik value": lambda: packed.evaluate(params, seq_idx, 0)[0],
        "loglik +grad+Hessian": lambda: packed.evaluate(params, seq_idx, 2)[2],
        "MAML meta batch": lambda: meta_batch(params, packed, seq_idx, cfg, hessian=True).outer,
        "simulate 200 seqs": lambda: np.concatenate(
            [simulate((2.0, 0.6, 5.0), 50.0, s).timestamps for s in range(200)]),
    }, sum(len(s) for s in seqs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--subjects", type=int, default=50)
    ap.add_argument("--k", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if len(_backend.AVAILABLE) < 2:
        print(f"only {_backend.AVAILABLE} available; build the extension with "
              "`pip install -e . --no-build-isolation` to compare")
    jobs, n_events = workloads(args.subjects, args.k, args.seed)
    print(f"relhawkes {relhawkes.__version__}: {args.subjects} subjects, {n_events} events, "
          f"K={args.k}, best of {args.repeat}")
    timings, outputs = {}, {}
    prev = _backend.BACKEND
    try:
        for name in _backend.AVAILABLE:
            _backend.set_backend(name)
            for job, fn in jobs.items():
                outputs[name, job] = fn()
                timings[name, job] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    finally:
        _backend.set_backend(prev)

    names = list(_backend.AVAILABLE)
    header = f"{'workload':<24}" + "".join(f"{n + ' [s]':>14}" for n in names)
    if len(names) == 2:
        header += f"{'speed-up':>11}{'max rel diff':>15}"
    print(header)
    for job in jobs:
        row = f"{job:<24}" + "".join(f"{timings[n, job]:>14.4f}" for n in names)
        if len(names) == 2:
            a, b = (np.asarray(outputs[n, job]) for n in names)
            diff = np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300) if a.size else 0.0
            row += f"{timings[names[1], job] / timings[names[0], job]:>10.1f}x{diff:>15.1e}"
        print(row)


if __name__ == "__main__":
    main()
