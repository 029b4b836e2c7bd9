"""Synthetic end-to-end run through the CLI: synth, train, score, eval, analyze.

    python3 scripts/run_synthetic.py --out runs/synth --compare-skip

Prints point-adjusted F1 for each scoring criterion and the LSD ratio.
"""

import argparse
import json
import time
from pathlib import Path

from memto.cli import main as cli

CRITERIA = ("both", "isd", "lsd")


def score_and_eval(run: Path, data: Path) -> dict:
    f1 = {}
    for crit in CRITERIA:
        ck = str(run / "checkpoint.memto")
        assert cli(["score", "--checkpoint", ck, "--data", str(data / "train.csv"), "--criterion", crit, "--out", str(run / f"pool_{crit}.csv")]) == 0
        assert cli(["score", "--checkpoint", ck, "--data", str(data / "test.csv"), "--labels", "--criterion", crit, "--out", str(run / f"test_{crit}.csv")]) == 0
        assert cli(["eval", "--trace", str(run / f"test_{crit}.csv"), "--pool", str(run / f"pool_{crit}.csv"), "--p", "1.0", "--out", str(run / f"eval_{crit}.json")]) == 0
        f1[crit] = json.loads((run / f"eval_{crit}.json").read_text())["rows"][0]["f1"]
    return f1


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synth")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--T", type=int, default=20000)
    ap.add_argument("--test-T", type=int, default=10000)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--kinds", default="spike")
    ap.add_argument("--C", type=int, default=32)
    ap.add_argument("--lr", type=float, default=5e-4)
    ap.add_argument("--max-epochs", type=int, default=100)
    ap.add_argument("--compare-skip", action="store_true", help="also train with --skip-kmeans")
    a = ap.parse_args()

    out = Path(a.out)
    data = out / "data"
    t0 = time.perf_counter()
    assert cli(["synth", "--T", str(a.T), "--test-T", str(a.test_T), "--n", str(a.n), "--kinds", a.kinds,
                "--seed", str(a.seed), "--out", str(data)]) == 0
    train = ["--train-csv", str(data / "train.csv"), "--C", str(a.C), "--memory-items", "10", "--seed", str(a.seed),
             "--lr", str(a.lr), "--max-epochs", str(a.max_epochs)]
    runs = {"two-phase": []}
    if a.compare_skip:
        runs["skip-kmeans"] = ["--skip-kmeans"]
    for name, extra in runs.items():
        run = out / name
        assert cli(["train", *train, *extra, "--out", str(run)]) == 0
        f1 = score_and_eval(run, data)
        assert cli(["analyze", "lsd", "--checkpoint", str(run / "checkpoint.memto"), "--data", str(data / "test.csv"),
                    "--out", str(run / "lsd.json")]) == 0
        ratio = json.loads((run / "lsd.json").read_text())["ratio"]
        print(f"{name:>12}: " + "  ".join(f"F1[{c}]={f1[c]:.4f}" for c in CRITERIA) + f"  LSD ratio={ratio:.4f}")
    print(f"total {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
