"""Convolutional feature-transformation encoder.

Deep-Fingerprinting style backbone: four blocks of (conv, BN, act, conv,
BN, act, max-pool, dropout), then a single linear layer to the embedding
dimension instead of DF's classification head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .traces import DEFAULT_INPUT_DIM

DEFAULT_EMBED_DIM = 512
CHECKPOINT_FORMAT = "multitab-wpf-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {"elu": nn.ELU, "relu": nn.ReLU, "tanh": nn.Tanh}


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = DEFAULT_INPUT_DIM
    embed_dim: int = DEFAULT_EMBED_DIM
    block_channel_sizes: tuple[int, int, int, int] = (32, 64, 128, 256)
    kernel_size: int = 7
    pool_size: int = 7
    pool_stride: int = 4
    # DF uses ELU in the first block and ReLU afterwards
    activations: tuple[str, str, str, str] = ("elu", "relu", "relu", "relu")
    batch_norm: bool = True
    dropout: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "block_channel_sizes", tuple(self.block_channel_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.block_channel_sizes) != 4 or len(self.activations) != 4:
            raise ValueError("the encoder has exactly four convolutional blocks")
        if self.embed_dim <= 0 or self.input_dim <= 0:
            raise ValueError("input_dim and embed_dim must be positive")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd to keep block lengths aligned")
        for a in self.activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def tiny(cls, input_dim: int = 512, embed_dim: int = 32, **kw) -> "EncoderConfig":
        """Desk-scale preset for tests and synthetic experiments."""
        kw.setdefault("block_channel_sizes", (8, 16, 32, 32))
        return cls(input_dim=input_dim, embed_dim=embed_dim, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_channel_sizes"] = list(self.block_channel_sizes)
        d["activations"] = list(self.activations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)

    def flat_features(self) -> int:
        n = self.input_dim
        pad = self.pool_size // 2
        for _ in range(4):
            n = (n + 2 * pad - self.pool_size) // self.pool_stride + 1
        return n * self.block_channel_sizes[-1]


class DFEncoder(nn.Module):
    """Maps ``(batch, input_dim)`` direction vectors to ``(batch, embed_dim)``."""

    def __init__(self, config: EncoderConfig = EncoderConfig(), seed: int | None = 0):
        super().__init__()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            blocks = []
            c_in = 1
            for c_out, act in zip(config.block_channel_sizes, config.activations):
                blocks.append(self._block(c_in, c_out, act))
                c_in = c_out
            self.blocks = nn.Sequential(*blocks)
            self.linear = nn.Linear(config.flat_features(), config.embed_dim)

    def _block(self, c_in, c_out, act):
        cfg = self.config
        pad = cfg.kernel_size // 2
        layers = []
        for a, b in ((c_in, c_out), (c_out, c_out)):
            layers.append(nn.Conv1d(a, b, cfg.kernel_size, padding=pad))
            if cfg.batch_norm:
                layers.append(nn.BatchNorm1d(b))
            layers.append(_ACTIVATIONS[act]())
        layers.append(nn.MaxPool1d(cfg.pool_size, stride=cfg.pool_stride, padding=cfg.pool_size // 2))
        if cfg.dropout > 0:
            layers.append(nn.Dropout(cfg.dropout))
        return nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 2 or x.shape[1] != self.config.input_dim:
            raise ValueError(
                f"expected input of shape (batch, {self.config.input_dim}), got {tuple(x.shape)}"
            )
        h = self.blocks(x.unsqueeze(1))
        return self.linear(h.flatten(start_dim=1))


def encode(model: DFEncoder, inputs, batch_size: int = 256) -> np.ndarray:
    """Embed model inputs in inference mode. Returns ``(batch, embed_dim)`` float32."""
    x = torch.as_tensor(np.asarray(inputs), dtype=next(model.parameters()).dtype)
    if x.dim() != 2 or x.shape[1] != model.config.input_dim:
        raise ValueError(
            f"expected inputs of shape (batch, {model.config.input_dim}), got {tuple(x.shape)}"
        )
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = [model(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    finally:
        model.train(was_training)
    if not out:
        return np.zeros((0, model.config.embed_dim), dtype=np.float32)
    return torch.cat(out).numpy().astype(np.float32, copy=False)


def parameter_manifest(model: nn.Module, proxies: torch.Tensor | None = None) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of all trainable parameters, proxies last."""
    out = [(name, tuple(p.shape)) for name, p in model.named_parameters() if p.requires_grad]
    if proxies is not None:
        out.append(("proxies", tuple(proxies.shape)))
    return out


def save_checkpoint(path, model: DFEncoder, proxies: torch.Tensor, extra: dict | None = None) -> None:
    """Versioned container: config echo, encoder state and proxy matrix."""
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder_config": model.config.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "proxies": proxies.detach().clone(),
        "extra": extra or {},
    }
    torch.save(blob, path)


def load_checkpoint(path) -> tuple[DFEncoder, torch.Tensor, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if blob["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob['version']}")
    model = DFEncoder(EncoderConfig.from_dict(blob["encoder_config"]), seed=None)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob["proxies"], blob["extra"]
