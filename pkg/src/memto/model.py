"""Memory-guided Transformer autoencoder.

The encoder turns a window into a query per timestamp, the gated memory
blends each query with prototype items, and a shallow MLP decoder maps the
concatenated ``[query, retrieved]`` features back to the input space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig


@dataclass
class ForwardOutput:
    reconstruction: torch.Tensor  # B x L x n
    queries: torch.Tensor  # B x L x C
    read_weights: torch.Tensor  # B x L x M
    retrieved: torch.Tensor  # B x L x C
    updated_query: torch.Tensor  # B x L x 2C
    memory: torch.Tensor  # M x C, the items the read stage used


def _check_finite(logits: torch.Tensor) -> None:
    if not torch.isfinite(logits).all():
        raise FloatingPointError("non-finite memory/query dot products")


def write_attention(items: torch.Tensor, q: torch.Tensor, tau: float) -> torch.Tensor:
    """Item-to-query attention, normalized over queries.

    ``items`` is M x C, ``q`` is P x C (one window, or a batch flattened to
    B*L rows). Returns M x P; each row sums to one.
    """
    logits = items @ q.transpose(-1, -2) / tau
    _check_finite(logits)
    return torch.softmax(logits, dim=-1)


def read_attention(items: torch.Tensor, q: torch.Tensor, tau: float) -> torch.Tensor:
    """Query-to-item attention, normalized over items. Returns ... x M."""
    logits = q @ items.transpose(-1, -2) / tau
    _check_finite(logits)
    return torch.softmax(logits, dim=-1)


def gated_write(
    items: torch.Tensor,
    q: torch.Tensor,
    v: torch.Tensor,
    U_psi: torch.Tensor,
    W_psi: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Move every item toward its attention-weighted query aggregate.

    Returns ``(new_items, gate)``. The gate lies in (0, 1) per coordinate,
    so every new coordinate is a convex combination of the old item and the
    aggregate.
    """
    agg = v @ q  # M x C
    gate = torch.sigmoid(items @ U_psi.T + agg @ W_psi.T)
    return (1 - gate) * items + gate * agg, gate


def retrieve(items: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    return w @ items


class SinusoidalPositionalEncoding(nn.Module):
    def __init__(self, d_model: int, max_len: int = 5000):
        super().__init__()
        pos = torch.arange(max_len, dtype=torch.float64)[:, None]
        div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
        pe = torch.zeros(max_len, d_model, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)[:, : d_model // 2]
        self.register_buffer("pe", pe.float(), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.pe[: x.shape[-2]].to(x.dtype)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.embed = nn.Linear(cfg.n, cfg.C)
        self.pos = SinusoidalPositionalEncoding(cfg.C, max_len=max(cfg.L, 1))
        self.drop = nn.Dropout(cfg.dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.C,
            nhead=cfg.enc_heads,
            dim_feedforward=4 * cfg.C,
            dropout=cfg.dropout,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        # no final norm: query magnitude must still reflect unusual inputs
        self.layers = nn.TransformerEncoder(layer, cfg.enc_layers, enable_nested_tensor=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(self.drop(self.pos(self.embed(x))))


class WeakDecoder(nn.Module):
    """Per-timestamp MLP with ``depth`` affine layers and a linear output."""

    def __init__(self, C: int, n: int, depth: int = 2):
        super().__init__()
        layers: list[nn.Module] = []
        width = 2 * C
        for _ in range(depth - 1):
            layers += [nn.Linear(width, width), nn.GELU()]
        layers.append(nn.Linear(width, n))
        self.net = nn.Sequential(*layers)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


class GatedMemory(nn.Module):
    def __init__(self, M: int, C: int, tau: float):
        super().__init__()
        self.tau = tau
        self.register_buffer("items", torch.randn(M, C))
        self.U_psi = nn.Parameter(torch.empty(C, C))
        self.W_psi = nn.Parameter(torch.empty(C, C))
        bound = 1.0 / math.sqrt(C)
        nn.init.uniform_(self.U_psi, -bound, bound)
        nn.init.uniform_(self.W_psi, -bound, bound)

    def set_items(self, items: torch.Tensor) -> None:
        if items.shape != self.items.shape:
            raise ValueError(f"memory shape {tuple(items.shape)} != {tuple(self.items.shape)}")
        self.items = items.detach().to(self.items.dtype).clone()

    def write(self, q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        flat = q.reshape(-1, q.shape[-1])
        v = write_attention(self.items, flat, self.tau)
        return gated_write(self.items, flat, v, self.U_psi, self.W_psi)


class MEMTO(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.memory = GatedMemory(cfg.M, cfg.C, cfg.tau)
        self.decoder = WeakDecoder(cfg.C, cfg.n, cfg.dec_layers)

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x[None]
        if x.dim() != 3 or x.shape[-1] != self.cfg.n or x.shape[-2] != self.cfg.L:
            raise ValueError(
                f"expected input of shape (B, {self.cfg.L}, {self.cfg.n}), got {tuple(x.shape)}"
            )
        return x

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(self._check_input(x))

    def decode(self, updated_query: torch.Tensor) -> torch.Tensor:
        if updated_query.shape[-1] != 2 * self.cfg.C:
            raise ValueError(f"decoder expects feature size {2 * self.cfg.C}, got {updated_query.shape[-1]}")
        return self.decoder(updated_query)

    def forward(self, x: torch.Tensor, commit: bool = True) -> ForwardOutput:
        """Run one batch of windows.

        In training mode the memory is written before it is read, and the
        write stays in the autograd graph so the gate projections get
        gradients. With ``commit`` the written items (detached) replace the
        stored bank. In eval mode the bank is only read.
        """
        x = self._check_input(x)
        q = self.encoder(x)
        items: Optional[torch.Tensor] = None
        if self.training:
            items, _ = self.memory.write(q)
            if commit:
                self.memory.items = items.detach()
        else:
            items = self.memory.items
        w = read_attention(items, q, self.memory.tau)
        retrieved = retrieve(items, w)
        updated = torch.cat([q, retrieved], dim=-1)
        recon = self.decode(updated)
        return ForwardOutput(recon, q, w, retrieved, updated, items)
