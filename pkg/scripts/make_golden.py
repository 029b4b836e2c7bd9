"""Regenerate the fixed-seed snapshot files under tests/golden/.

Run only when a deliberate change to the model alters its outputs.
"""

from pathlib import Path

import numpy as np
import torch

from memto import MEMTO, ModelConfig
from memto.checkpoint import Checkpoint, save_checkpoint
from memto.data import NormalizationStats, RawSeries, save_csv
from memto.detection import score_series

OUT = Path(__file__).resolve().parents[1] / "tests" / "golden"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(1234)
    cfg = ModelConfig(L=8, n=3, C=4, enc_layers=1, enc_heads=2, dec_layers=2, M=2, tau=0.1, dropout=0.0)
    model = MEMTO(cfg).double().eval()
    rng = np.random.default_rng(1234)
    stats = NormalizationStats(np.array([0.5, -1.0, 2.0]), np.array([1.5, 0.5, 3.0]))
    ckpt = Checkpoint.from_model(model, stats, "phase2", {"note": "golden snapshot"})
    save_checkpoint(ckpt, OUT / "tiny.memto")

    window = rng.normal(size=(cfg.L, cfg.n))
    dec_in = rng.normal(size=(cfg.L, 2 * cfg.C))
    with torch.no_grad():
        x = torch.from_numpy(window)
        q = model.encode(x)
        out = model(x)
        dec = model.decode(torch.from_numpy(dec_in))
    np.savez(
        OUT / "tiny_forward.npz",
        window=window[None],
        queries=q.numpy(),
        reconstruction=out.reconstruction.numpy(),
        decoder_input=dec_in,
        decoder_output=dec.numpy(),
    )

    series = RawSeries(rng.normal(size=(21, cfg.n)) * stats.std + stats.mean, rng.integers(0, 2, 21))
    save_csv(series, OUT / "tiny_series.csv")
    trace = score_series(model, series, stats)
    np.savez(OUT / "tiny_scores.npz", score=trace.scores, lsd=trace.lsd, isd=trace.isd)
    print(f"wrote golden files to {OUT}")


if __name__ == "__main__":
    main()
