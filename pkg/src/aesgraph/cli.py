"""Command-line entry point.

Subcommands: train, eval, score, heatmap, gradcheck, ablate, synth. Global
flags: --config, --seed (overrides the config), --precision {f32,f64},
--out (overrides the config's output directory). Exit codes: 0 success,
2 configuration/validation error, 3 runtime/numeric error.

Report-producing commands write a rendered PNG next to each CSV.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError
from .config import DEFAULT_DOCUMENT, RunConfig, config_from_dict, load_config
from .data import (DataError, Manifest, SynthSpec, generate_synthetic,
                   load_image, load_manifest, write_pgm)
from .encoder import ConfigError
from .figures import save_ablation_chart, save_heatmap_figure, save_training_curves
from .graph import export_similarity
from .head import classify
from .model import VARIANTS
from .tensor import NumericError, Tensor
from .train import (TrainState, evaluate, load_train_state, predict_class_probs,
                    train)
from .gradcheck import DEFAULT_TOLERANCE, all_pass, gradient_check

GRADCHECK_DOCUMENT = {
    "variant": "FCN_A_G",
    "encoder": {
        "stem_channels": 8,
        "dense_blocks": [[2, 6], [2, 6], [2, 6], [2, 6]],
        "dilation_ladder": [1, 1, 2, 4],
        "pool_transitions": [True, False, False],
    },
    "aspp": {"rates": [3, 6], "channels": 16},
    "train": {"input_side": 64, "batch_size": 2},
}


def _fail(kind: str, message: str) -> None:
    message = " ".join(str(message).split())
    print(f"error: {kind}: {message}", file=sys.stderr)


def _resolve_config(args) -> RunConfig:
    if args.config:
        rc = load_config(args.config)
    else:
        rc = config_from_dict({})
    return rc.with_overrides(seed=args.seed, out_dir=args.out)


def _require_out(rc: RunConfig) -> str:
    out = rc.out_dir
    if not out:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    os.makedirs(out, exist_ok=True)
    return out


def _load_state(args, rc: RunConfig) -> TrainState:
    state, _ = load_train_state(args.checkpoint, rc.model, expected_digest=rc.digest())
    return state


def _write_csv(path, digest: str, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# config_digest={digest}\n")
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


# -- subcommands -----------------------------------------------------------------


def cmd_train(args) -> int:
    rc = _resolve_config(args)
    out_dir = _require_out(rc)
    if not rc.manifest_path:
        raise ConfigError("no training manifest: set data.manifest in the config")
    manifest = load_manifest(rc.manifest_path)
    digest = rc.digest()

    def progress(stat):
        print(f"epoch {stat.epoch:3d}  loss {stat.loss:.4f}  "
              f"acc {stat.accuracy:.4f}  lr {stat.lr:.3e}")

    _, stats = train(rc.model, rc.train, manifest, out_dir=out_dir,
                     digest=digest, progress=progress)
    save_training_curves(stats, os.path.join(out_dir, "training_curves.png"))
    final = stats[-1]
    print(f"done: {len(stats)} epochs, final loss {final.loss:.4f}, "
          f"train accuracy {final.accuracy:.4f}")
    print(f"outputs: {out_dir}/metrics.csv, checkpoint.rgck, training_curves.png")
    return 0


def cmd_eval(args) -> int:
    rc = _resolve_config(args)
    state = _load_state(args, rc)
    manifest_path = args.manifest or rc.eval_manifest_path
    if not manifest_path:
        raise ConfigError("no manifest: pass --manifest or set data.eval_manifest")
    manifest = load_manifest(manifest_path)
    metrics = evaluate(state.model, manifest, args.task,
                       input_side=rc.train.input_side)
    if args.task == "classify":
        print(f"accuracy={metrics.accuracy:.6f} ap={metrics.ap:.6f}")
    else:
        print(f"spearman_rho={metrics.spearman_rho:.6f}")
    if rc.out_dir:
        out_dir = _require_out(rc)
        row = metrics.as_row()
        _write_csv(os.path.join(out_dir, "eval_metrics.csv"), rc.digest(),
                   "accuracy,ap,spearman_rho",
                   [(row["accuracy"], row["ap"], row["spearman_rho"])])
    return 0


def cmd_score(args) -> int:
    rc = _resolve_config(args)
    state = _load_state(args, rc)
    side = rc.train.input_side
    rows = []
    images, kept = [], []
    for path in args.images:
        try:
            images.append(load_image(path, side=side).data)
            kept.append(path)
        except (DataError, FileNotFoundError, OSError) as e:
            _fail("decode", f"{path}: {e}")
    if kept:
        probs = predict_class_probs(state.model, images)
        for path, (p0, p1) in zip(kept, probs):
            rows.append((path, repr(float(p0)), repr(float(p1)), classify(p0, p1)))
    print("path,p_low,p_high,label")
    for row in rows:
        print(",".join(str(v) for v in row))
    if rc.out_dir:
        out_dir = _require_out(rc)
        _write_csv(os.path.join(out_dir, "scores.csv"), rc.digest(),
                   "path,p_low,p_high,label", rows)
    return 0


def cmd_heatmap(args) -> int:
    rc = _resolve_config(args)
    out_dir = _require_out(rc)
    state = _load_state(args, rc)
    model = state.model
    img = load_image(args.image, side=rc.train.input_side)
    batch = Tensor(img.data[None])
    with T.no_grad():
        fmap = model.features(batch, "eval", stage=args.stage)
    _, channels, h, w = fmap.shape
    feats = fmap.data[0].transpose(1, 2, 0).reshape(h * w, channels)

    if args.query == "auto":
        with T.no_grad():
            region = model.region_scores(batch, "eval")
        flat = int(np.argmax(region.data[0, 1]))
        qr, qc = divmod(flat, w)
    else:
        try:
            qr, qc = (int(v) for v in args.query.split(","))
        except ValueError as e:
            raise ConfigError(f"query must be 'row,col' or 'auto': {e}") from e
    if not (0 <= qr < h and 0 <= qc < w):
        raise ConfigError(f"query ({qr},{qc}) outside the {h}x{w} feature grid")

    sims = export_similarity(feats)
    heat = sims[qr * w + qc].reshape(h, w)

    digest = rc.digest()
    csv_path = os.path.join(out_dir, "heatmap.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(f"# config_digest={digest}\n")
        for row in heat:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    gray = np.clip(np.round((heat + 1.0) * 0.5 * 255.0), 0, 255).astype(np.uint8)
    write_pgm(os.path.join(out_dir, "heatmap.pgm"), gray,
              comment=f"config_digest={digest}")
    T.save_tensor(os.path.join(out_dir, "similarity.rgt"), sims)
    save_heatmap_figure(heat, (qr, qc), os.path.join(out_dir, "heatmap.png"))
    print(f"stage={args.stage} query=({qr},{qc}) grid={h}x{w}")
    print(f"outputs: {out_dir}/heatmap.csv, heatmap.pgm, heatmap.png, similarity.rgt")
    return 0


def cmd_gradcheck(args) -> int:
    if T.default_dtype() is not np.float64:
        raise ConfigError("gradcheck requires --precision f64")
    if args.config:
        rc = load_config(args.config).with_overrides(seed=args.seed, out_dir=args.out)
    else:
        rc = config_from_dict(GRADCHECK_DOCUMENT).with_overrides(
            seed=args.seed, out_dir=args.out)
    rows = gradient_check(rc.model, input_side=args.side, batch=args.batch,
                          coords_per_tensor=args.coords, h=args.step,
                          seed=rc.seed)
    width = max(len(r.name) for r in rows)
    for r in rows:
        status = "ok" if r.max_rel_error < DEFAULT_TOLERANCE else "FAIL"
        print(f"{r.name:<{width}}  {r.max_rel_error:.3e}  {status}")
    ok = all_pass(rows)
    worst = max(r.max_rel_error for r in rows)
    print(f"{'PASS' if ok else 'FAIL'}: {len(rows)} parameter tensors, "
          f"max relative error {worst:.3e} (tolerance {DEFAULT_TOLERANCE:.0e})")
    if rc.out_dir:
        out_dir = _require_out(rc)
        _write_csv(os.path.join(out_dir, "gradcheck.csv"), rc.digest(),
                   "parameter,max_rel_error,checked,skipped",
                   [(r.name, repr(r.max_rel_error), r.checked, r.skipped) for r in rows])
    return 0 if ok else 3


def cmd_ablate(args) -> int:
    rc = _resolve_config(args)
    out_dir = _require_out(rc)
    if not rc.manifest_path or not rc.eval_manifest_path:
        raise ConfigError("ablate needs data.manifest and data.eval_manifest")
    manifest = load_manifest(rc.manifest_path)
    eval_manifest = load_manifest(rc.eval_manifest_path)
    seeds = [rc.seed + k for k in range(args.seeds)]

    run_rows = []
    summary = []
    for variant in VARIANTS:
        accs, aps = [], []
        for seed in seeds:
            rcv = rc.with_overrides(variant=variant, seed=seed)
            run_dir = os.path.join(out_dir, f"{variant}_s{seed}")
            os.makedirs(run_dir, exist_ok=True)
            state, _ = train(rcv.model, rcv.train, manifest, out_dir=run_dir,
                             digest=rcv.digest())
            metrics = evaluate(state.model, eval_manifest, "classify",
                               input_side=rcv.train.input_side)
            accs.append(metrics.accuracy)
            aps.append(metrics.ap)
            run_rows.append((variant, seed, repr(metrics.accuracy), repr(metrics.ap)))
            print(f"{variant:<8} seed {seed}: accuracy {metrics.accuracy:.4f} "
                  f"ap {metrics.ap:.4f}")
        summary.append({"variant": variant,
                        "accuracy": float(np.mean(accs)),
                        "ap": float(np.mean(aps))})

    digest = rc.digest()
    _write_csv(os.path.join(out_dir, "ablation.csv"), digest, "variant,accuracy,ap",
               [(s["variant"], repr(s["accuracy"]), repr(s["ap"])) for s in summary])
    _write_csv(os.path.join(out_dir, "ablation_runs.csv"), digest,
               "variant,seed,accuracy,ap", run_rows)
    save_ablation_chart(summary, os.path.join(out_dir, "ablation.png"))
    print(f"{'variant':<8} {'accuracy':>9} {'ap':>9}")
    for s in summary:
        print(f"{s['variant']:<8} {s['accuracy']:9.4f} {s['ap']:9.4f}")
    print(f"outputs: {out_dir}/ablation.csv, ablation_runs.csv, ablation.png")
    return 0


def cmd_synth(args) -> int:
    with open(args.spec, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"synth spec is not valid JSON: {e}") from e
    fields = {"task", "count", "side", "seed", "hue_match_deg", "hue_differ_deg",
              "square_side", "min_distance"}
    unknown = set(doc) - fields
    if unknown:
        raise ConfigError(f"unknown synth spec key {sorted(unknown)[0]!r}")
    if "task" not in doc or "count" not in doc:
        raise ConfigError("synth spec needs at least task and count")
    spec = SynthSpec(**doc)
    if args.seed is not None:
        spec.seed = args.seed
    if not args.out:
        raise ConfigError("synth needs --out")
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest)} images and manifest.jsonl under {args.out}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override train.seed")
    common.add_argument("--precision", choices=("f32", "f64"), default="f64",
                        help="numeric precision (default f64)")
    common.add_argument("--out", help="override the output directory")

    parser = argparse.ArgumentParser(
        prog="aesgraph",
        description="Composition-aware image aesthetics scoring")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="evaluation manifest (or data.eval_manifest)")
    p.add_argument("--task", choices=("classify", "regress"), default="classify")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", parents=[common], help="score images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+", help="PPM images to score")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("heatmap", parents=[common],
                       help="region-similarity heatmap for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--query", default="auto", help="'row,col' or 'auto'")
    p.add_argument("--stage", choices=("fcn", "aspp", "graph"), default="graph")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of the backward pass")
    p.add_argument("--side", type=int, default=64, help="input side (default 64)")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--coords", type=int, default=20,
                   help="sampled coordinates per parameter tensor")
    p.add_argument("--step", type=float, default=1e-3, help="difference step h")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", parents=[common],
                       help="train and evaluate all six variants")
    p.add_argument("--seeds", type=int, default=1, help="seeds per variant")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark")
    p.add_argument("--spec", required=True, help="synthetic spec (JSON)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        T.set_default_dtype(args.precision)
        return args.func(args)
    except NumericError as e:
        _fail("numeric", str(e))
        return 3
    except (ConfigError, DataError, CheckpointError) as e:
        _fail("config", str(e))
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        _fail("io", str(e))
        return 2
    except ValueError as e:
        _fail("config", str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
