"""Two-phase training: reconstruction pretraining, K-means memory init, retraining."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from .checkpoint import Checkpoint
from .config import ModelConfig, TrainConfig
from .data import DataError, NormalizationStats, RawSeries, SubSeriesBatch, fit_normalizer, normalize, split_train_val, window
from .kmeans import KMeansResult, kmeans
from .losses import entropy_loss, reconstruction_loss, total_loss
from .model import MEMTO

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, phase: str, epoch: int, value: float):
        super().__init__(f"non-finite loss ({value}) in {phase} at epoch {epoch}")
        self.phase = phase
        self.epoch = epoch


@dataclass
class PhaseHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0


@dataclass
class TrainReport:
    phase1: PhaseHistory = field(default_factory=PhaseHistory)
    phase2: Optional[PhaseHistory] = None
    kmeans: Optional[dict] = None
    timings: dict = field(default_factory=dict)

    def to_dict(self, include_timings: bool = True) -> dict:
        d = {
            "phase1": asdict(self.phase1),
            "phase2": None if self.phase2 is None else asdict(self.phase2),
            "kmeans": self.kmeans,
        }
        if include_timings:
            d["timings"] = dict(self.timings)
        return d


def objective(out, x, train_cfg: TrainConfig) -> torch.Tensor:
    rec = reconstruction_loss(x, out.reconstruction)
    entr = entropy_loss(out.read_weights)
    if train_cfg.loss_mode == "rec":
        return rec
    if train_cfg.loss_mode == "entr":
        return entr
    return total_loss(rec, entr, train_cfg.lambda_)


@torch.no_grad()
def validation_loss(model: MEMTO, windows: torch.Tensor, train_cfg: TrainConfig) -> float:
    """Window-weighted mean objective over ``windows`` in eval mode."""
    was_training = model.training
    model.eval()
    total = 0.0
    for i in range(0, len(windows), train_cfg.batch_size):
        xb = windows[i : i + train_cfg.batch_size]
        total += float(objective(model(xb), xb, train_cfg)) * len(xb)
    model.train(was_training)
    return total / len(windows)


def run_phase(
    model: MEMTO,
    train_windows: torch.Tensor,
    val_windows: torch.Tensor,
    train_cfg: TrainConfig,
    phase: str,
    generator: torch.Generator,
) -> PhaseHistory:
    """Train until early stopping; leaves ``model`` at its best-validation state."""
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    hist = PhaseHistory()
    best = math.inf
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(1, train_cfg.max_epochs + 1):
        model.train()
        order = torch.randperm(len(train_windows), generator=generator)
        running = 0.0
        for i in range(0, len(order), train_cfg.batch_size):
            xb = train_windows[order[i : i + train_cfg.batch_size]]
            loss = objective(model(xb), xb, train_cfg)
            if not torch.isfinite(loss):
                raise TrainingDivergence(phase, epoch, float(loss.detach()))
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(xb)
        hist.train_loss.append(running / len(order))
        val = validation_loss(model, val_windows, train_cfg)
        if not math.isfinite(val):
            raise TrainingDivergence(phase, epoch, val)
        hist.val_loss.append(val)
        hist.stop_epoch = epoch
        log.info("%s epoch %d train %.6f val %.6f", phase, epoch, hist.train_loss[-1], val)
        if val < best:
            best = val
            hist.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        elif epoch - hist.best_epoch >= train_cfg.patience:
            break
    model.load_state_dict(best_state)
    model.memory.items = best_state["memory.items"].clone()
    return hist


@torch.no_grad()
def init_memory_kmeans(
    model: MEMTO,
    train_windows: torch.Tensor,
    train_cfg: TrainConfig,
    cluster_fn: Callable[..., KMeansResult] = kmeans,
) -> KMeansResult:
    """Reset memory items to centroids of encoded queries from a window sample.

    Gate projections and all other weights are left as they are.
    """
    N = len(train_windows)
    n_rand = min(N, math.ceil(train_cfg.kmeans_sample_frac * N))
    rng = np.random.default_rng(train_cfg.seed + 1)
    idx = np.sort(rng.choice(N, size=n_rand, replace=False))
    was_training = model.training
    model.eval()
    q = model.encode(train_windows[torch.from_numpy(idx)])
    model.train(was_training)
    points = q.reshape(-1, q.shape[-1]).double().cpu().numpy()
    if points.shape[0] < model.cfg.M:
        raise DataError(f"only {points.shape[0]} queries for {model.cfg.M} memory items")
    result = cluster_fn(points, model.cfg.M, iters=train_cfg.kmeans_iters, tol=train_cfg.kmeans_tol, seed=train_cfg.seed)
    model.memory.set_items(torch.from_numpy(result.centroids))
    return result


@dataclass
class PreparedData:
    train: torch.Tensor
    val: torch.Tensor
    stats: NormalizationStats


def prepare_training_data(series: RawSeries, L: int, val_ratio: float = 0.8, dtype=torch.float32) -> PreparedData:
    tr, va = split_train_val(series, val_ratio)
    stats = fit_normalizer(tr)
    tw = window(normalize(tr, stats), L, "train")
    vw = window(normalize(va, stats), L, "train")
    return PreparedData(
        torch.from_numpy(tw.windows).to(dtype),
        torch.from_numpy(vw.windows).to(dtype),
        stats,
    )


def train_two_phase(
    series: RawSeries,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    val_ratio: float = 0.8,
    on_phase1: Optional[Callable[[Checkpoint], None]] = None,
) -> tuple[Checkpoint, TrainReport, MEMTO]:
    """Full training run. Returns the best phase-2 checkpoint (phase 1 with ``skip_kmeans``)."""
    model_cfg.validate()
    train_cfg.validate()
    if series.n != model_cfg.n:
        raise DataError(f"series has {series.n} channels, config expects {model_cfg.n}")
    data = prepare_training_data(series, model_cfg.L, val_ratio)
    torch.manual_seed(train_cfg.seed)
    gen = torch.Generator().manual_seed(train_cfg.seed)
    model = MEMTO(model_cfg)
    report = TrainReport()
    meta = {"train_config": {("lambda" if k == "lambda_" else k): v for k, v in asdict(train_cfg).items()}}

    t0 = time.perf_counter()
    report.phase1 = run_phase(model, data.train, data.val, train_cfg, "phase1", gen)
    report.timings["phase1"] = time.perf_counter() - t0
    ckpt = Checkpoint.from_model(model, data.stats, "phase1", meta)
    if on_phase1 is not None:
        on_phase1(ckpt)
    if train_cfg.skip_kmeans:
        return ckpt, report, model

    t0 = time.perf_counter()
    km = init_memory_kmeans(model, data.train, train_cfg)
    report.timings["kmeans"] = time.perf_counter() - t0
    report.kmeans = {
        "n_points": int(len(km.labels)),
        "n_iter": km.n_iter,
        "shifts": km.shifts,
        "objective": km.objective,
    }

    t0 = time.perf_counter()
    report.phase2 = run_phase(model, data.train, data.val, train_cfg, "phase2", gen)
    report.timings["phase2"] = time.perf_counter() - t0
    return Checkpoint.from_model(model, data.stats, "phase2", meta), report, model


def continue_phase2(
    ckpt: Checkpoint,
    series: RawSeries,
    train_cfg: TrainConfig,
    val_ratio: float = 0.8,
) -> tuple[Checkpoint, TrainReport, MEMTO]:
    """Run K-means init and phase 2 starting from a saved phase-1 checkpoint."""
    model = ckpt.build_model()
    data = prepare_training_data(series, model.cfg.L, val_ratio)
    torch.manual_seed(train_cfg.seed)
    gen = torch.Generator().manual_seed(train_cfg.seed + 2)
    report = TrainReport()
    report.phase1 = PhaseHistory()
    km = init_memory_kmeans(model, data.train, train_cfg)
    report.kmeans = {"n_points": int(len(km.labels)), "n_iter": km.n_iter, "shifts": km.shifts, "objective": km.objective}
    report.phase2 = run_phase(model, data.train, data.val, train_cfg, "phase2", gen)
    return Checkpoint.from_model(model, ckpt.norm_stats or data.stats, "phase2", ckpt.meta), report, model
