"""Time the hot kernels under the numba backend and the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at import
time by REFUSE_DISABLE_NUMBA. Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--n-vectors 2000]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up (JIT compile / cache load)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run_here(repeat: int, n_vectors: int) -> dict:
    from refuse import _kernels
    from refuse.model import ModelConfig, forward_with_cache, backward_from_embedding_grads, init_params
    from refuse.retrieval import normalize_rows

    rng = np.random.default_rng(0)
    cfg = ModelConfig()
    p64 = init_params(cfg, 0).astype(np.float64)
    batch = [rng.integers(0, 256, int(rng.integers(64, 2048)), dtype=np.uint8).tobytes() for _ in range(64)]

    def fwd():
        return forward_with_cache(p64, cfg, batch)

    embs, caches = fwd()
    d_emb = rng.normal(size=embs.shape)

    def bwd():
        backward_from_embedding_grads(p64, cfg, caches, d_emb)

    n = 600
    dist = rng.random((n, n))
    dist = np.triu(dist, 1) + np.triu(dist, 1).T
    labels = np.repeat(np.arange(n // 2), 2)
    vecs = normalize_rows(rng.normal(size=(n_vectors, 128)))
    lab = rng.integers(0, n_vectors // 4, size=n_vectors)
    return {
        "backend": _kernels.BACKEND,
        "forward, 64 functions": _best(fwd, repeat),
        "backward, 64 functions": _best(bwd, repeat),
        "mine_triplets, 600x600": _best(lambda: _kernels.mine_triplets(dist, labels, 0.2), repeat),
        f"exact 30-NN, {n_vectors}x128": _best(lambda: _kernels.exact_knn_all(vecs, 30), repeat),
        f"first-correct ranks, {n_vectors}x128": _best(lambda: _kernels.first_correct_rank_all(vecs, lab), repeat),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n-vectors", type=int, default=2000)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(run_here(args.repeat, args.n_vectors)))
        return
    results = []
    for disable in ("0", "1"):
        env = dict(os.environ, REFUSE_DISABLE_NUMBA=disable)
        cmd = [sys.executable, __file__, "--child", "--repeat", str(args.repeat), "--n-vectors", str(args.n_vectors)]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(out.stdout))
    jit, ref = results
    width = max(len(k) for k in jit if k != "backend")
    print(f"{'kernel':<{width}}  {'numba s':>10}  {'numpy s':>10}  {'speedup':>8}")
    for key in jit:
        if key == "backend":
            continue
        print(f"{key:<{width}}  {jit[key]:>10.4f}  {ref[key]:>10.4f}  {ref[key] / jit[key]:>7.1f}x")


if __name__ == "__main__":
    main()
