"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and size with the best-of-N time for each
backend, the speedup, and whether the two outputs agree.
"""
import argparse
import timeit

import numpy as np

from multishot import kernels
from multishot.masks import build_mask, layout_from_token_frames


def softmax_case(shots, tokens_per_frame, seed=0):
    lay = layout_from_token_frames([4] * shots, tokens_per_frame, 8)
    mask = build_mask(lay).bits
    scores = np.random.default_rng(seed).standard_normal(mask.shape)
    return scores, mask


def match_case(size, seed=0):
    rng = np.random.default_rng(seed)
    ref = rng.random((size, size))
    tgt = np.roll(ref, (2, -3), axis=(0, 1))
    return ref, tgt


def _primary(out):
    # block_match returns (dx, dy, sad); compare the displacements
    return np.stack(out[:2]) if isinstance(out, tuple) else out


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled extension unavailable; only the numpy fallback can be timed")
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"{'kernel':<16}{'size':>10}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}  agree")

    def report(name, size, calls):
        times = {b: best(calls[b], args.repeat) * 1e3 for b in backends}
        outs = {b: _primary(calls[b]()) for b in backends}
        agree = all(np.allclose(outs[b], outs["python"]) for b in backends)
        speed = f"{times['python'] / times['cython']:.1f}x" if "cython" in times else "-"
        print(f"{name:<16}{size:>10}" + "".join(f"{times[b]:>12.2f}" for b in backends) + f"{speed:>10}  {agree}")

    for shots, tpf in [(2, 16), (4, 16), (8, 16), (4, 64)]:
        scores, mask = softmax_case(shots, tpf)
        report("masked_softmax", f"{len(mask)}^2",
               {b: (lambda b=b: kernels.masked_softmax(scores, mask, backend=b)) for b in backends})
    for size in (32, 64, 128):
        ref, tgt = match_case(size)
        report("block_match", f"{size}^2",
               {b: (lambda b=b: kernels.block_match(ref, tgt, 8, 4, backend=b)) for b in backends})


if __name__ == "__main__":
    main()
