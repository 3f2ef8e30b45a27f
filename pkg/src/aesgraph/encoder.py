"""Densely connected fully-convolutional feature encoder at output stride 8.

The downsampling ladder is fixed: a stride-2 stem convolution, a 2x2 stride-2
average pool, and exactly one pooling transition, after which the remaining
transitions keep resolution and the later dense blocks use dilated
convolutions instead. Inside a block every layer's output is concatenated
onto all features before it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d, PreActConv
from .tensor import Tensor


class ConfigError(ValueError):
    """An architectural configuration violates its invariants."""


@dataclass(frozen=True)
class EncoderConfig:
    stem_channels: int = 16
    dense_blocks: tuple[tuple[int, int], ...] = ((3, 12), (3, 12), (3, 12), (3, 12))
    transition_compression: float = 0.5
    dilation_ladder: tuple[int, ...] = (1, 1, 2, 4)
    pool_transitions: tuple[bool, ...] = (True, False, False)

    def validate(self) -> None:
        if self.stem_channels < 1:
            raise ConfigError("stem_channels must be positive")
        if not self.dense_blocks:
            raise ConfigError("need at least one dense block")
        for nlayers, growth in self.dense_blocks:
            if nlayers < 1 or growth < 1:
                raise ConfigError(f"invalid dense block ({nlayers}, {growth})")
        if not 0.0 < self.transition_compression <= 1.0:
            raise ConfigError("transition_compression must lie in (0, 1]")
        if len(self.dilation_ladder) != len(self.dense_blocks):
            raise ConfigError("dilation_ladder must list one rate per block")
        if any(d < 1 for d in self.dilation_ladder):
            raise ConfigError("dilation rates must be >= 1")
        if len(self.pool_transitions) != len(self.dense_blocks) - 1:
            raise ConfigError("pool_transitions must list one flag per transition")
        # Output stride 8: the stem contributes two /2 stages, transitions one.
        if sum(self.pool_transitions) != 1:
            raise ConfigError("exactly one transition may pool (output stride 8)")
        for i, rate in enumerate(self.dilation_ladder):
            if rate > 1 and any(self.pool_transitions[i:]):
                raise ConfigError("dilated blocks must come after all pooling")

    def channel_plan(self) -> list[int]:
        """Channel count entering each block, plus the final output width."""
        plan = [self.stem_channels]
        c = self.stem_channels
        for bi, (nlayers, growth) in enumerate(self.dense_blocks):
            c += nlayers * growth
            if bi < len(self.dense_blocks) - 1:
                c = max(1, int(c * self.transition_compression))
            plan.append(c)
        return plan

    @property
    def out_channels(self) -> int:
        return self.channel_plan()[-1]


def feature_side(input_side: int) -> int:
    """Spatial side of the encoder output for a square input (floor ladder)."""
    side = (input_side + 2 - 3 - 1) // 2 + 1  # stem conv, k=3 s=2 p=1
    side = side // 2                          # stem pool
    side = side // 2                          # pooling transition
    return side


class Encoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.stem = Conv2d(rng, 3, cfg.stem_channels, 3, stride=2, padding=1)
        self.blocks: list[list[PreActConv]] = []
        self.transitions: list[tuple[PreActConv, bool]] = []
        c = cfg.stem_channels
        for bi, (nlayers, growth) in enumerate(cfg.dense_blocks):
            dil = cfg.dilation_ladder[bi]
            layers = []
            for _ in range(nlayers):
                layers.append(PreActConv(rng, c, growth, 3, dilation=dil, padding=dil))
                c += growth
            self.blocks.append(layers)
            if bi < len(cfg.dense_blocks) - 1:
                cout = max(1, int(c * cfg.transition_compression))
                self.transitions.append((PreActConv(rng, c, cout, 1),
                                         cfg.pool_transitions[bi]))
                c = cout
        self.out_channels = c

    def forward(self, images: Tensor, mode: str) -> Tensor:
        """Encode (B, 3, S, S) images into a (B, d, S/8, S/8) feature map."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise T.ShapeError(f"encoder expects (B, 3, S, S), got {images.shape}")
        side = min(images.shape[2], images.shape[3])
        if side < 64 or feature_side(side) < 4:
            raise T.ShapeError(f"input side {side} too small for the downsample ladder")
        x = self.stem.forward(images)
        x = T.avg_pool2d(x)
        for bi, layers in enumerate(self.blocks):
            for layer in layers:
                x = T.concat_channels([x, layer.forward(x, mode)])
            if bi < len(self.transitions):
                trans, pool = self.transitions[bi]
                x = trans.forward(x, mode)
                if pool:
                    x = T.avg_pool2d(x)
        return x

    def _modules(self) -> dict:
        mods: dict = {"stem": self.stem}
        for bi, layers in enumerate(self.blocks):
            for li, layer in enumerate(layers):
                mods[f"block{bi}/layer{li}"] = layer
        for ti, (trans, _) in enumerate(self.transitions):
            mods[f"transition{ti}"] = trans
        return mods

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name, mod in self._modules().items():
            out.update(mod.named_params(f"{prefix}/{name}"))
        return out

    def named_state(self, prefix: str) -> dict:
        out = {}
        for name, mod in self._modules().items():
            out.update(mod.named_state(f"{prefix}/{name}"))
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.named_params("e").values())


def build_encoder(cfg: EncoderConfig, rng_seed: int) -> Encoder:
    """Build an encoder with He-normal kernels; deterministic per seed."""
    return Encoder(cfg, np.random.default_rng(rng_seed))
