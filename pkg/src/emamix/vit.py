"""A small standard vision transformer: patch embedding, pre-norm
encoder blocks with stochastic depth, mean or class-token pooling, and a
linear classifier. No architectural extras; everything the training
pipeline needs (layer-wise parameter groups, encoder checkpoint loading)
lives here too."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .schedules import layer_multiplier

__all__ = ["ViTConfig", "TinyViT", "sincos_pos_embed", "param_groups", "load_encoder_checkpoint"]


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 4
    in_chans: int = 3
    embed_dim: int = 192
    depth: int = 6
    num_heads: int = 3
    mlp_ratio: float = 4.0
    num_classes: int = 10
    pos_embed: str = "sincos"
    pool: str = "mean"
    drop_path_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ValueError(f"patch_size {self.patch_size} must divide image_size {self.image_size}")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.pos_embed not in ("sincos", "learnable"):
            raise ValueError(f"pos_embed must be 'sincos' or 'learnable', got {self.pos_embed!r}")
        if self.pool not in ("mean", "cls_token"):
            raise ValueError(f"pool must be 'mean' or 'cls_token', got {self.pool!r}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ValueError(f"drop_path_rate must be in [0, 1), got {self.drop_path_rate}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_size ** 2 + (1 if self.pool == "cls_token" else 0)


def sincos_pos_embed(dim: int, grid: int) -> torch.Tensor:
    """Fixed 2D sine-cosine position table of shape [grid*grid, dim]."""
    if dim % 4 != 0:
        raise ValueError(f"sincos embedding needs dim divisible by 4, got {dim}")
    quarter = dim // 4
    omega = 1.0 / 10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter)
    ys, xs = np.meshgrid(np.arange(grid, dtype=np.float64),
                         np.arange(grid, dtype=np.float64), indexing="ij")
    out = []
    for coord in (ys.reshape(-1), xs.reshape(-1)):
        angles = np.outer(coord, omega)
        out.extend([np.sin(angles), np.cos(angles)])
    return torch.from_numpy(np.concatenate(out, axis=1)).float()


class DropPath(nn.Module):
    """Per-sample residual-branch dropout (stochastic depth)."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.p == 0.0 or not self.training:
            return x
        keep = 1.0 - self.p
        mask = x.new_empty(x.shape[0], *([1] * (x.ndim - 1))).bernoulli_(keep)
        return x * mask / keep


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, t, d = x.shape
        qkv = self.qkv(x).reshape(n, t, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, t, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float, drop_path: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        self.drop_path = DropPath(drop_path)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.drop_path(self.attn(self.norm1(x)))
        x = x + self.drop_path(self.mlp(self.norm2(x)))
        return x


class TinyViT(nn.Module):
    def __init__(self, cfg: ViTConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(cfg.in_chans, cfg.embed_dim,
                                     kernel_size=cfg.patch_size, stride=cfg.patch_size)
        num_patches = cfg.grid_size ** 2

        if cfg.pool == "cls_token":
            self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        else:
            self.cls_token = None

        if cfg.pos_embed == "learnable":
            self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_tokens, cfg.embed_dim))
        else:
            table = torch.zeros(1, cfg.num_tokens, cfg.embed_dim)
            table[0, -num_patches:] = sincos_pos_embed(cfg.embed_dim, cfg.grid_size)
            self.register_buffer("pos_embed", table)

        # Drop path grows linearly with depth; the first block gets 0.
        rates = torch.linspace(0.0, cfg.drop_path_rate, cfg.depth).tolist()
        self.blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, r) for r in rates
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.num_classes)
        self._init_weights()

    def _init_weights(self) -> None:
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                nn.init.trunc_normal_(module.weight, std=0.02)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        if self.cls_token is not None:
            nn.init.trunc_normal_(self.cls_token, std=0.02)
        if isinstance(self.pos_embed, nn.Parameter):
            nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if images.shape[-2:] != (cfg.image_size, cfg.image_size):
            raise ValueError(
                f"expected {cfg.image_size}x{cfg.image_size} input, got {tuple(images.shape[-2:])}"
            )
        x = self.patch_embed(images).flatten(2).transpose(1, 2)
        if self.cls_token is not None:
            x = torch.cat([self.cls_token.expand(x.shape[0], -1, -1), x], dim=1)
        x = x + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        pooled = x[:, 0] if cfg.pool == "cls_token" else x.mean(dim=1)
        return self.head(pooled)


def _layer_id(name: str, depth: int) -> int:
    """Patch embed and position tokens are layer 0, blocks follow, and
    the final norm plus head are layer depth + 1."""
    if name.startswith(("patch_embed", "pos_embed", "cls_token")):
        return 0
    if name.startswith("blocks."):
        return int(name.split(".")[1]) + 1
    return depth + 1


def param_groups(model: TinyViT, layer_decay: float, weight_decay: float) -> list[dict]:
    """AdamW groups with layer-wise lr multipliers.

    Biases and normalization affine parameters are excluded from weight
    decay. Every trainable parameter lands in exactly one group.
    """
    depth = model.cfg.depth
    num_layers = depth + 1
    groups: dict[tuple[int, bool], dict] = {}
    for name, param in model.named_parameters():
        if not param.requires_grad:
            continue
        layer = _layer_id(name, depth)
        decayed = param.ndim > 1
        key = (layer, decayed)
        if key not in groups:
            groups[key] = {
                "params": [],
                "param_names": [],
                "lr_scale": layer_multiplier(layer, num_layers, layer_decay),
                "weight_decay": weight_decay if decayed else 0.0,
                "name": f"layer{layer}_{'decay' if decayed else 'no_decay'}",
            }
        groups[key]["params"].append(param)
        groups[key]["param_names"].append(name)
    return [groups[key] for key in sorted(groups)]


def load_encoder_checkpoint(model: TinyViT, state: dict[str, torch.Tensor]) -> list[str]:
    """Load a name->tensor mapping; head weights may be absent.

    Returns the names that stayed freshly initialized. Unknown names or
    shape mismatches are errors.
    """
    own = model.state_dict()
    for name, tensor in state.items():
        if name not in own:
            raise ValueError(f"checkpoint tensor {name!r} does not exist in the model")
        if tuple(tensor.shape) != tuple(own[name].shape):
            raise ValueError(
                f"checkpoint tensor {name!r} has shape {tuple(tensor.shape)}, "
                f"model expects {tuple(own[name].shape)}"
            )
    missing = [name for name in own if name not in state]
    bad = [name for name in missing if not name.startswith("head.")]
    if bad:
        raise ValueError(f"checkpoint is missing non-head tensors: {bad}")
    model.load_state_dict(state, strict=False)
    return missing
