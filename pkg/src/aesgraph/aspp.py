"""Cascaded atrous context block with dense branch reuse.

Branch i consumes the concatenation of the block input and all previous
branch outputs, applies BN -> ReLU -> dilated conv, and emits a fixed number
of channels. The block output concatenates the input with every branch, so
the width grows from d to d + len(rates) * branch_channels while the spatial
extent is preserved (padding = dilation * (k - 1) / 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import ConfigError
from .layers import PreActConv
from .tensor import Tensor


@dataclass(frozen=True)
class AsppConfig:
    rates: tuple[int, ...] = (3, 6, 12, 18)
    branch_channels: int = 64
    kernel: int = 3

    def validate(self) -> None:
        if not self.rates or any(r < 1 for r in self.rates):
            raise ConfigError("rates must be positive")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            raise ConfigError("rates must be strictly increasing")
        if self.branch_channels < 1:
            raise ConfigError("branch_channels must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd")


class CascadeBlock:
    """The cascade topology with arbitrary per-branch dilations."""

    def __init__(self, rng: np.random.Generator, in_channels: int,
                 dilations: tuple[int, ...], branch_channels: int, kernel: int):
        self.branches: list[PreActConv] = []
        c = in_channels
        for d in dilations:
            pad = d * (kernel - 1) // 2
            self.branches.append(PreActConv(rng, c, branch_channels, kernel,
                                            dilation=d, padding=pad))
            c += branch_channels
        self.in_channels = in_channels
        self.out_channels = c

    def forward(self, x: Tensor, mode: str) -> Tensor:
        feats = [x]
        for branch in self.branches:
            inp = feats[0] if len(feats) == 1 else T.concat_channels(feats)
            feats.append(branch.forward(inp, mode))
        return T.concat_channels(feats)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, branch in enumerate(self.branches):
            out.update(branch.named_params(f"{prefix}/branch{i}"))
        return out

    def named_state(self, prefix: str) -> dict:
        out = {}
        for i, branch in enumerate(self.branches):
            out.update(branch.named_state(f"{prefix}/branch{i}"))
        return out


class DenseAspp(CascadeBlock):
    def __init__(self, cfg: AsppConfig, in_channels: int, rng: np.random.Generator):
        cfg.validate()
        super().__init__(rng, in_channels, tuple(cfg.rates),
                         cfg.branch_channels, cfg.kernel)
        self.cfg = cfg


def apply_aspp(block: DenseAspp, x: Tensor, mode: str) -> Tensor:
    """Run the context block on a (B, d, H, W) feature map."""
    return block.forward(x, mode)
