"""Dataset plumbing: PPM/PGM codecs, label manifests, synthetic benchmarks.

Manifests are line-delimited JSON records, one sample per line, of exactly one
of three kinds::

    {"path": "img.ppm", "label": 0}          binary labels
    {"path": "img.ppm", "mean_score": 6.2}   rating means on [1, 10]
    {"path": "img.ppm", "score": 0.63}       regression scores on [0, 1]

Relative sample paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import colorsys
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .imageops import resize_bilinear
from .tensor import Tensor


class DataError(ValueError):
    """Malformed manifest, image file, or generator specification."""


# -- PPM / PGM codec (binary, 8-bit) ------------------------------------------


def _read_token(f) -> bytes:
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise DataError("malformed header: unexpected end of file")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(2) != magic:
            raise DataError(f"malformed header: not a {magic.decode()} file: {path}")
        try:
            width = int(_read_token(f))
            height = int(_read_token(f))
            maxval = int(_read_token(f))
        except ValueError as e:
            raise DataError(f"malformed header in {path}: {e}") from e
        if width < 1 or height < 1:
            raise DataError(f"malformed header: bad extents {width}x{height}")
        if maxval != 255:
            raise DataError(f"unsupported maxval {maxval} (only 8-bit supported)")
        payload = f.read(width * height * channels)
    if len(payload) != width * height * channels:
        raise DataError(f"truncated payload in {path}")
    shape = (height, width, channels) if channels > 1 else (height, width)
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape).copy()


def read_ppm(path) -> np.ndarray:
    """Decode a binary P6 PPM into (H, W, 3) uint8."""
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """Decode a binary P5 PGM into (H, W) uint8."""
    return _read_netpbm(path, b"P5", 1)


def write_ppm(path, pixels: np.ndarray, comment: str | None = None) -> None:
    """Write (H, W, 3) uint8 pixels as binary P6."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w, _ = pixels.shape
    with open(path, "wb") as f:
        f.write(b"P6\n")
        if comment:
            f.write(f"# {comment}\n".encode())
        f.write(f"{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())


def write_pgm(path, pixels: np.ndarray, comment: str | None = None) -> None:
    """Write (H, W) uint8 pixels as binary P5."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n")
        if comment:
            f.write(f"# {comment}\n".encode())
        f.write(f"{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())


def load_image(path, side: int = 300) -> Tensor:
    """Decode a PPM into a (3, side, side) tensor of values in [0, 1]."""
    pixels = read_ppm(path)
    img = pixels.astype(np.float64).transpose(2, 0, 1) / 255.0
    if img.shape[1] != side or img.shape[2] != side:
        img = resize_bilinear(img, side, side)
    return Tensor(img)


# -- manifests ------------------------------------------------------------------

_KINDS = ("label", "mean_score", "score")


@dataclass
class Sample:
    path: str
    label: int | None = None
    mean_score: float | None = None
    score: float | None = None

    def kind(self) -> str:
        for k in _KINDS:
            if getattr(self, k) is not None:
                return k
        raise DataError(f"sample {self.path!r} carries no target")

    def to_record(self) -> dict:
        return {"path": self.path, self.kind(): getattr(self, self.kind())}

    def binary_label(self) -> int:
        if self.label is not None:
            return int(self.label)
        if self.mean_score is not None:
            return binarize_ava(self.mean_score)
        raise DataError(f"sample {self.path!r} has no binary label")


@dataclass
class Manifest:
    task: str
    samples: list[Sample] = field(default_factory=list)
    base_dir: str = "."

    def __len__(self) -> int:
        return len(self.samples)

    def resolve(self, sample: Sample) -> str:
        if os.path.isabs(sample.path):
            return sample.path
        return os.path.join(self.base_dir, sample.path)


def binarize_ava(mean_score: float) -> int:
    """Rating means below 5 map to the low-aesthetics class."""
    if not 1.0 <= mean_score <= 10.0:
        raise DataError(f"mean score {mean_score} outside [1, 10]")
    return 0 if mean_score < 5.0 else 1


def parse_manifest_line(line: str) -> Sample:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"bad manifest line: {e}") from e
    if not isinstance(rec, dict) or "path" not in rec:
        raise DataError(f"manifest record missing path: {line.strip()!r}")
    keys = set(rec) - {"path"}
    if len(keys) != 1 or keys - set(_KINDS):
        raise DataError(f"manifest record must carry exactly one of {_KINDS}: {line.strip()!r}")
    (key,) = keys
    sample = Sample(path=rec["path"])
    if key == "label":
        if rec["label"] not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {rec['label']!r}")
        sample.label = int(rec["label"])
    else:
        setattr(sample, key, float(rec[key]))
    return sample


def load_manifest(path) -> Manifest:
    samples = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                samples.append(parse_manifest_line(line))
    if not samples:
        raise DataError(f"empty manifest: {path}")
    kinds = {s.kind() for s in samples}
    if len(kinds) != 1:
        raise DataError(f"mixed record kinds in manifest: {sorted(kinds)}")
    paths = [s.path for s in samples]
    if len(set(paths)) != len(paths):
        raise DataError("duplicate paths in manifest")
    return Manifest(task=kinds.pop(), samples=samples,
                    base_dir=os.path.dirname(os.path.abspath(path)))


def save_manifest(path, manifest: Manifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in manifest.samples:
            f.write(json.dumps(s.to_record()) + "\n")


# -- synthetic composition benchmarks ---------------------------------------------


@dataclass
class SynthSpec:
    """Description of a generated benchmark.

    "easy": class 1 is a smooth two-color vertical gradient, class 0 is
    uniform pixel noise; separable from local statistics alone.

    "longrange": a mid-gray canvas with two small colored squares far apart;
    class 1 iff the two hues match within ``hue_match_deg`` degrees, class 0
    hues differ by at least ``hue_differ_deg``. Square positions are drawn
    independently of the label, so the rule is purely relational.
    """

    task: str
    count: int
    side: int = 300
    seed: int = 0
    hue_match_deg: float = 10.0
    hue_differ_deg: float = 60.0
    square_side: int | None = None
    min_distance: float | None = None

    def resolved_square_side(self) -> int:
        if self.square_side is not None:
            return self.square_side
        return max(2, round(self.side * 24 / 300))

    def resolved_min_distance(self) -> float:
        if self.min_distance is not None:
            return self.min_distance
        return self.side / 2.0

    def validate(self) -> None:
        if self.task not in ("easy", "longrange"):
            raise DataError(f"unknown synthetic task {self.task!r}")
        if self.count < 2 or self.count % 2 != 0:
            raise DataError("count must be an even number >= 2 for exact class balance")
        if self.side < 16:
            raise DataError(f"side {self.side} too small")
        if self.task == "longrange":
            sq = self.resolved_square_side()
            if sq >= self.side:
                raise DataError("square side exceeds image side")
            reach = math.sqrt(2.0) * (self.side - sq)
            if reach < self.resolved_min_distance():
                raise DataError(
                    f"side {self.side} too small to place squares "
                    f">= {self.resolved_min_distance():.0f}px apart")
        if not 0 < self.hue_match_deg < self.hue_differ_deg <= 180:
            raise DataError("need 0 < hue_match_deg < hue_differ_deg <= 180")


def _hue_rgb(hue_deg: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb((hue_deg % 360.0) / 360.0, 1.0, 1.0))


def _place_squares(rng, side: int, sq: int, min_dist: float) -> tuple[tuple[int, int], tuple[int, int]]:
    for _ in range(100_000):
        y1, x1, y2, x2 = rng.integers(0, side - sq + 1, size=4)
        if math.hypot(float(y1 - y2), float(x1 - x2)) >= min_dist:
            return (int(y1), int(x1)), (int(y2), int(x2))
    raise DataError("could not satisfy the square distance floor")


def _longrange_image(rng, spec: SynthSpec, label: int) -> tuple[np.ndarray, dict]:
    side, sq = spec.side, spec.resolved_square_side()
    img = np.full((side, side, 3), 0.5)
    hue1 = float(rng.uniform(0.0, 360.0))
    if label == 1:
        delta = float(rng.uniform(-spec.hue_match_deg, spec.hue_match_deg))
    else:
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        delta = sign * float(rng.uniform(spec.hue_differ_deg, 180.0))
    hue2 = (hue1 + delta) % 360.0
    pos1, pos2 = _place_squares(rng, side, sq, spec.resolved_min_distance())
    for (y, x), hue in ((pos1, hue1), (pos2, hue2)):
        img[y:y + sq, x:x + sq] = _hue_rgb(hue)
    meta = {"squares": [list(pos1), list(pos2)], "hues": [hue1, hue2], "square_side": sq}
    return img, meta


def _easy_image(rng, spec: SynthSpec, label: int) -> tuple[np.ndarray, dict]:
    side = spec.side
    if label == 1:
        c0, c1 = rng.uniform(0.0, 1.0, size=(2, 3))
        t = np.linspace(0.0, 1.0, side).reshape(side, 1, 1)
        img = c0 * (1.0 - t) + c1 * t
        img = np.broadcast_to(img, (side, side, 3)).copy()
        meta = {"colors": [c0.tolist(), c1.tolist()]}
    else:
        img = rng.uniform(0.0, 1.0, size=(side, side, 3))
        meta = {}
    return img, meta


def generate_synthetic(spec: SynthSpec, out_dir) -> Manifest:
    """Write ``spec.count`` PPM images plus manifest.jsonl and meta.jsonl.

    Labels alternate 0, 1, ... so both classes appear exactly count/2 times;
    generation is a pure function of the seed.
    """
    spec.validate()
    out_dir = os.path.abspath(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    make = _easy_image if spec.task == "easy" else _longrange_image
    samples, metas = [], []
    for i in range(spec.count):
        label = i % 2
        img, meta = make(rng, spec, label)
        rel = os.path.join("images", f"{spec.task}_{i:05d}.ppm")
        write_ppm(os.path.join(out_dir, rel),
                  np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8))
        samples.append(Sample(path=rel, label=label))
        meta.update({"path": rel, "label": label})
        metas.append(meta)
    manifest = Manifest(task="label", samples=samples, base_dir=out_dir)
    save_manifest(os.path.join(out_dir, "manifest.jsonl"), manifest)
    with open(os.path.join(out_dir, "meta.jsonl"), "w", encoding="utf-8") as f:
        for meta in metas:
            f.write(json.dumps(meta) + "\n")
    return manifest
