"""Assembly of the six architecture variants behind one forward interface.

Variants: FC_CNN (encoder, global average pool, linear classifier), FCN
(encoder plus scoring head), FCN_A (adds the atrous context block), FCN_G
(adds graph reasoning), FCN_A_G (both), and FCN_C_C (context block and graph
stack replaced by an equal count of plain 3x3 convolutions of matched width,
the depth-control baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .aspp import AsppConfig, CascadeBlock, DenseAspp
from .encoder import ConfigError, Encoder, EncoderConfig, feature_side
from .graph import RegionGraphReasoner
from .head import ScoringHead
from .layers import Linear, PreActConv
from .tensor import Tensor

VARIANTS = ("FC_CNN", "FCN", "FCN_A", "FCN_G", "FCN_A_G", "FCN_C_C")

STAGES = ("fcn", "aspp", "graph")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "FCN_A_G"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    aspp: AsppConfig = field(default_factory=AsppConfig)
    graph_blocks: int = 3
    recompute_adjacency: bool = False
    r: float = 4.0
    task: str = "classify"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.encoder.validate()
        self.aspp.validate()
        if self.graph_blocks < 1:
            raise ConfigError("graph_blocks must be >= 1")
        if self.r <= 0:
            raise ConfigError("aggregation smoothness r must be positive")
        if self.task not in ("classify", "regress"):
            raise ConfigError(f"task must be classify or regress, got {self.task!r}")


class Model:
    def __init__(self, cfg: ModelConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg.encoder, rng)
        d = self.encoder.out_channels

        self.aspp: DenseAspp | None = None
        self.cascade: CascadeBlock | None = None
        self.cascade_post: list[PreActConv] = []
        self.graph: RegionGraphReasoner | None = None
        self.head: ScoringHead | None = None
        self.fc: Linear | None = None

        if cfg.variant in ("FCN_A", "FCN_A_G"):
            self.aspp = DenseAspp(cfg.aspp, d, rng)
            d = self.aspp.out_channels
        if cfg.variant == "FCN_C_C":
            self.cascade = CascadeBlock(rng, d, (1,) * len(cfg.aspp.rates),
                                        cfg.aspp.branch_channels, cfg.aspp.kernel)
            d = self.cascade.out_channels
            self.cascade_post = [PreActConv(rng, d, d, 3, padding=1)
                                 for _ in range(cfg.graph_blocks)]
        if cfg.variant in ("FCN_G", "FCN_A_G"):
            self.graph = RegionGraphReasoner(d, rng, blocks=cfg.graph_blocks,
                                             recompute_adjacency=cfg.recompute_adjacency)
        classes = 2 if cfg.task == "classify" else 1
        if cfg.variant == "FC_CNN":
            self.fc = Linear(rng, d, classes)
        else:
            self.head = ScoringHead(d, rng, classes=classes)
        self.feature_channels = d

    # -- forward paths ---------------------------------------------------------

    def features(self, images: Tensor, mode: str, stage: str | None = None) -> Tensor:
        """Feature map after the requested stage (or the full stack)."""
        if stage is not None and stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
        x = self.encoder.forward(images, mode)
        if stage == "fcn":
            return x
        if self.aspp is not None:
            x = self.aspp.forward(x, mode)
        if self.cascade is not None:
            x = self.cascade.forward(x, mode)
            for conv in self.cascade_post:
                x = conv.forward(x, mode)
        if stage == "aspp":
            if self.aspp is None:
                raise ConfigError(f"variant {self.cfg.variant} has no context stage")
            return x
        if self.graph is not None:
            x = self.graph.forward(x, mode)
        if stage == "graph":
            if self.graph is None:
                raise ConfigError(f"variant {self.cfg.variant} has no graph stage")
        return x

    def class_probs(self, images: Tensor, mode: str):
        """Region scores (None for FC_CNN), per-class scores y, probabilities."""
        if self.cfg.task != "classify":
            raise ConfigError("model was built for regression")
        if self.fc is not None:
            pooled = T.mean(self.encoder.forward(images, mode), axis=(2, 3))
            y = self.fc.forward(pooled)
            return None, y, T.softmax_rows(y)
        g = self.features(images, mode)
        return self.head.class_scores(g, self.cfg.r)

    def regress(self, images: Tensor, mode: str) -> Tensor:
        if self.cfg.task != "regress":
            raise ConfigError("model was built for classification")
        if self.fc is not None:
            pooled = T.mean(self.encoder.forward(images, mode), axis=(2, 3))
            return T.reshape(T.sigmoid(self.fc.forward(pooled)), (images.shape[0],))
        g = self.features(images, mode)
        return self.head.regress_score(g, self.cfg.r)

    def region_scores(self, images: Tensor, mode: str = "eval") -> Tensor:
        if self.fc is not None:
            raise ConfigError("FC_CNN has no per-region scores")
        return self.head.region_scores(self.features(images, mode))

    def feature_grid(self, input_side: int) -> tuple[int, int]:
        side = feature_side(input_side)
        return side, side

    # -- parameter registry ------------------------------------------------------

    def _modules(self) -> dict:
        mods: dict = {"encoder": self.encoder}
        if self.aspp is not None:
            mods["aspp"] = self.aspp
        if self.cascade is not None:
            mods["cascade"] = self.cascade
            for i, conv in enumerate(self.cascade_post):
                mods[f"cascade_post{i}"] = conv
        if self.graph is not None:
            mods["graph"] = self.graph
        if self.head is not None:
            mods["head"] = self.head
        if self.fc is not None:
            mods["fc"] = self.fc
        return mods

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, mod in self._modules().items():
            out.update(mod.named_params(name))
        return out

    def named_state(self) -> dict:
        out: dict = {}
        for name, mod in self._modules().items():
            out.update(mod.named_state(name))
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.named_params().values())


def build_model(cfg: ModelConfig, seed: int) -> Model:
    return Model(cfg, seed)
