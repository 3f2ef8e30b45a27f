"""Run configuration: one nested JSON document validated before any compute.

Unknown keys are rejected at every level. The config digest is the SHA-256 of
the canonical serialization of the sections that define the model build and
training identity (variant, encoder, aspp, graph, head, train); data paths
and the output directory are excluded so a checkpoint stays usable wherever
its artifacts live.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

from .aspp import AsppConfig
from .encoder import ConfigError, EncoderConfig
from .model import ModelConfig
from .train import TrainConfig

DEFAULT_DOCUMENT = {
    "variant": "FCN_A_G",
    "encoder": {
        "stem_channels": 16,
        "dense_blocks": [[3, 12], [3, 12], [3, 12], [3, 12]],
        "transition_compression": 0.5,
        "dilation_ladder": [1, 1, 2, 4],
        "pool_transitions": [True, False, False],
    },
    "aspp": {"rates": [3, 6, 12, 18], "channels": 64, "kernel": 3},
    "graph": {"blocks": 3, "recompute_adjacency": False},
    "head": {"r": 4.0},
    "train": {
        "epochs": 80,
        "batch_size": 32,
        "lr0": 1e-4,
        "weight_decay": 1e-5,
        "power": 0.9,
        "seed": 0,
        "input_side": 300,
        "loss": "bce",
        "hflip": True,
        "scale_crop": True,
    },
    "data": {"manifest": None, "eval_manifest": None},
    "out_dir": None,
}

_DIGEST_SECTIONS = ("variant", "encoder", "aspp", "graph", "head", "train")


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {path + key!r}")
    merged = {}
    for key, default in defaults.items():
        if key not in given:
            merged[key] = copy.deepcopy(default)
        elif isinstance(default, dict):
            merged[key] = _merge(default, given[key], path=f"{path}{key}.")
        else:
            merged[key] = given[key]
    return merged


@dataclass
class RunConfig:
    document: dict

    @property
    def model(self) -> ModelConfig:
        doc = self.document
        enc = doc["encoder"]
        task = "regress" if doc["train"]["loss"] == "mse" else "classify"
        return ModelConfig(
            variant=doc["variant"],
            encoder=EncoderConfig(
                stem_channels=int(enc["stem_channels"]),
                dense_blocks=tuple((int(n), int(g)) for n, g in enc["dense_blocks"]),
                transition_compression=float(enc["transition_compression"]),
                dilation_ladder=tuple(int(d) for d in enc["dilation_ladder"]),
                pool_transitions=tuple(bool(p) for p in enc["pool_transitions"]),
            ),
            aspp=AsppConfig(
                rates=tuple(int(r) for r in doc["aspp"]["rates"]),
                branch_channels=int(doc["aspp"]["channels"]),
                kernel=int(doc["aspp"]["kernel"]),
            ),
            graph_blocks=int(doc["graph"]["blocks"]),
            recompute_adjacency=bool(doc["graph"]["recompute_adjacency"]),
            r=float(doc["head"]["r"]),
            task=task,
        )

    @property
    def train(self) -> TrainConfig:
        t = self.document["train"]
        return TrainConfig(
            epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
            lr0=float(t["lr0"]), weight_decay=float(t["weight_decay"]),
            power=float(t["power"]), seed=int(t["seed"]),
            input_side=int(t["input_side"]), loss=t["loss"],
            hflip=bool(t["hflip"]), scale_crop=bool(t["scale_crop"]),
        )

    @property
    def manifest_path(self) -> str | None:
        return self.document["data"]["manifest"]

    @property
    def eval_manifest_path(self) -> str | None:
        return self.document["data"]["eval_manifest"]

    @property
    def out_dir(self) -> str | None:
        return self.document["out_dir"]

    @property
    def seed(self) -> int:
        return int(self.document["train"]["seed"])

    def digest(self) -> str:
        scoped = {k: self.document[k] for k in _DIGEST_SECTIONS}
        blob = json.dumps(scoped, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None,
                       variant: str | None = None) -> "RunConfig":
        doc = copy.deepcopy(self.document)
        if seed is not None:
            doc["train"]["seed"] = int(seed)
        if out_dir is not None:
            doc["out_dir"] = out_dir
        if variant is not None:
            doc["variant"] = variant
        return RunConfig(document=doc)


def config_from_dict(given: dict) -> RunConfig:
    cfg = RunConfig(document=_merge(DEFAULT_DOCUMENT, given))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        try:
            given = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    return config_from_dict(given)


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.document, f, indent=2)
        f.write("\n")
