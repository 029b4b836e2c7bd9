"""Sweep memory size and decoder depth on one synthetic dataset.

    python3 scripts/ablation.py --memory-items 1,5,10,20 --dec-layers 1,2,3

Every setting trains from the same seed; the table reports bi-dimensional F1
at p=1 and the best phase-2 validation loss.
"""

import argparse
import dataclasses

import torch

from memto import ModelConfig, TrainConfig
from memto.data import SyntheticSpec, generate_synthetic
from memto.detection import evaluate, score_series
from memto.training import train_two_phase


def run(data, model_cfg, train_cfg):
    ckpt, report, model = train_two_phase(data.train, model_cfg, train_cfg)
    pool = score_series(model, data.train, ckpt.norm_stats)
    test = score_series(model, data.test, ckpt.norm_stats)
    res = evaluate(test, [pool.scores], 1.0)
    hist = report.phase2 or report.phase1
    return res.f1, min(hist.val_loss)


def ints(s):
    return [int(v) for v in s.split(",") if v]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--memory-items", type=ints, default=[1, 5, 10, 20])
    ap.add_argument("--dec-layers", type=ints, default=[1, 2, 3])
    ap.add_argument("--T", type=int, default=5000)
    ap.add_argument("--test-T", type=int, default=5000)
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--C", type=int, default=16)
    ap.add_argument("--max-epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)

    data = generate_synthetic(SyntheticSpec(T=a.T, n=a.n, test_T=a.test_T, seed=a.seed))
    base = ModelConfig(L=100, n=a.n, C=a.C, enc_heads=4)
    tc = TrainConfig(lr=5e-4, max_epochs=a.max_epochs, seed=a.seed)
    print(f"{'setting':>16} {'F1':>8} {'val':>10}")
    for M in a.memory_items:
        f1, val = run(data, dataclasses.replace(base, M=M), tc)
        print(f"{'M=' + str(M):>16} {f1:8.4f} {val:10.4g}", flush=True)
    for depth in a.dec_layers:
        f1, val = run(data, dataclasses.replace(base, dec_layers=depth), tc)
        print(f"{'dec_layers=' + str(depth):>16} {f1:8.4f} {val:10.4g}", flush=True)


if __name__ == "__main__":
    main()
