"""Benchmark the compiled CSR kernel against the numpy fallback.

Sizes mimic real workloads: adjacency-like square matrices (a few neighbors
per row) multiplied by feature blocks, plus one end-to-end training run per
backend.

    python benchmarks/bench_spmm.py
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from tpcgcn import kernels
from tpcgcn.rng import SeededRng
from tpcgcn.sparse import SparseMatrix


def random_adjacency(n, avg_degree, seed):
    rng = SeededRng(seed)
    entries = [(i, i, 1.0) for i in range(n)]
    m = n * avg_degree // 2
    u = rng.uniform(2 * m)
    seen = {(i, i) for i in range(n)}
    for k in range(m):
        i = int(u[2 * k] * n)
        j = int(u[2 * k + 1] * n)
        if i == j or (i, j) in seen:
            continue
        seen.add((i, j))
        seen.add((j, i))
        entries.append((i, j, 0.5))
        entries.append((j, i, 0.5))
    return SparseMatrix(n, n, entries)


def time_backend(fn, indptr, indices, data, dense, repeats):
    fn(indptr, indices, data, dense)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        out = fn(indptr, indices, data, dense)
    return (time.perf_counter() - t0) / repeats, out


def time_training(repeats=1):
    from tpcgcn.data import SplitMode, make_split
    from tpcgcn.pipeline import prepare_dataset
    from tpcgcn.synth import planted_corpus
    from tpcgcn.train import TrainConfig, train_tpcgcn

    corpus = planted_corpus(
        n_topics=4, posts_per_topic=30, comments_per_post=8, dim=64, seed=0
    )
    prepared = prepare_dataset(corpus.threads, corpus.table)
    split = make_split(corpus.threads, SplitMode.INTRA, (4, 1, 1), seed=0)
    config = TrainConfig(lr=0.01, epochs=20, seed=0, reduced_dim=32, tpc_hidden1=16)
    t0 = time.perf_counter()
    for _ in range(repeats):
        train_tpcgcn(prepared, split, config)
    return (time.perf_counter() - t0) / repeats


def main():
    if kernels._compiled is None:
        print("compiled kernel not built; run `python setup.py build_ext --inplace`")
        backends = [("python", kernels._fallback.csr_dense_matmul)]
    else:
        backends = [
            ("cython", kernels._compiled.csr_dense_matmul),
            ("python", kernels._fallback.csr_dense_matmul),
        ]

    print(f"active backend at import: {kernels.BACKEND}\n")
    print(f"{'case':<28} " + " ".join(f"{name:>12}" for name, _ in backends) + "   speedup")
    for n, deg, cols, repeats in [
        (500, 4, 64, 50),
        (2000, 4, 128, 20),
        (8000, 6, 300, 5),
    ]:
        s = random_adjacency(n, deg, seed=n)
        dense = SeededRng(n + 1).normal(n * cols).reshape(n, cols)
        times = []
        outs = []
        for _, fn in backends:
            dt, out = time_backend(fn, s.indptr, s.indices, s.data, dense, repeats)
            times.append(dt)
            outs.append(out)
        if len(outs) == 2:
            assert np.allclose(outs[0], outs[1], atol=1e-10), "backends disagree"
        label = f"{n}x{n} deg~{deg} x {cols}"
        row = " ".join(f"{dt * 1e3:>10.2f}ms" for dt in times)
        speedup = f"{times[-1] / times[0]:>8.1f}x" if len(times) == 2 else ""
        print(f"{label:<28} {row} {speedup}")

    print("\nend-to-end training (20 epochs, 4 graphs):")
    for name in [b[0] for b in backends]:
        os.environ["TPCGCN_KERNELS"] = name
        # re-select backend in a fresh interpreter for a fair run
        import subprocess

        code = (
            "import sys; sys.path.insert(0, 'src');"
            "from benchmarks.bench_spmm import time_training;"
            "print(f'{time_training():.2f}')"
        )
        dt = subprocess.run(
            [sys.executable, "-c", code],
            capture_output=True,
            text=True,
            env={**os.environ, "TPCGCN_KERNELS": name},
            cwd=os.path.join(os.path.dirname(__file__), ".."),
        )
        print(f"  {name:>8}: {dt.stdout.strip()}s")
    os.environ.pop("TPCGCN_KERNELS", None)


if __name__ == "__main__":
    main()
