"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

Times each kernel on representative shapes, then one full training step
(forward, backward, AdamW) of the default-sized model under each backend.
"""
import argparse
import json
import timeit

import numpy as np

from dsrsd import kernels
from dsrsd.data import SyntheticSpec, generate_synthetic
from dsrsd.losses import LossWeights
from dsrsd.trainer import OptimizerState, TrainConfig, adamw_step, build_model, train_step


def kernel_cases(rng):
    x = rng.standard_normal((128, 128))
    logits = rng.standard_normal((128, 128)) * 3
    n = 20000
    scores = rng.standard_normal(n).round(2)  # rounding forces ties
    labels = (rng.random(n) < 0.5).astype(np.int64)
    order = np.argsort(scores, kind="mergesort")
    s_sorted, y_sorted = scores[order], labels[order]
    return {
        "gelu 128x128": lambda k: k.gelu(x),
        "gelu_grad 128x128": lambda k: k.gelu_grad(x),
        "softmax_rows 128x128": lambda k: k.softmax_rows(logits),
        "log_softmax_rows 128x128": lambda k: k.log_softmax_rows(logits),
        "positive_rank_sum n=20000": lambda k: k.positive_rank_sum(s_sorted, y_sorted),
    }


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def training_step_time(repeat):
    ds = generate_synthetic(SyntheticSpec(n=256), seed=0)
    cfg = TrainConfig()
    model = build_model(cfg, ds)
    batch = ds.subset(np.arange(cfg.batch_size))
    state = OptimizerState.for_params(model.parameters(), weight_decay=cfg.weight_decay, base_lr=cfg.lr)
    weights = LossWeights()

    def step():
        _, grads = train_step(model, batch, weights, cfg, np.random.default_rng(0))
        adamw_step(model.parameters(), grads, state, cfg.lr)

    return best_of(step, repeat, 3)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the fallback will be timed")
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    results = {}
    print(f"{'case':32s}" + "".join(f"{b:>14s}" for b in backends) + "   speedup")
    for name, fn in cases.items():
        row = {b: best_of(lambda: fn(kernels.get_backend(b)), args.repeat, 20) for b in backends}
        results[name] = row
        speed = f"{row['python'] / row['cython']:9.2f}x" if "cython" in row else ""
        print(f"{name:32s}" + "".join(f"{row[b] * 1e6:12.1f}us" for b in backends) + speed)

    row = {}
    original = kernels.BACKEND
    for b in backends:
        kernels.use_backend(b)
        row[b] = training_step_time(max(3, args.repeat // 4))
    kernels.use_backend(original)
    results["train step (default model, B=128)"] = row
    speed = f"{row['python'] / row['cython']:9.2f}x" if "cython" in row else ""
    print(f"{'train step (B=128)':32s}" + "".join(f"{row[b] * 1e3:12.2f}ms" for b in backends) + speed)

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
