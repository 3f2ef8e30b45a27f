"""Finite-difference validation of the end-to-end backward pass.

Compares analytic gradients of the training loss against central differences
for a sample of coordinates in every parameter tensor. Requires the 64-bit
build; 32-bit differences are dominated by rounding noise.

The loss surface is piecewise smooth (ReLU gates, probability clamps), and a
central difference whose +/-h window crosses a gate boundary measures a blend
of two branches rather than the derivative of either. Such coordinates are
detected by comparing activation-gate signatures of the two evaluations with
the base point and are redrawn; the analytic gradient plays no part in the
detection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import Model, ModelConfig
from .tensor import Tensor
from .train import bce_loss, mse_loss

DEFAULT_TOLERANCE = 1e-4
# Gradients below this magnitude are compared absolutely, keeping
# central-difference rounding noise (~1e-12 at f64, h=1e-3) harmless.
REL_FLOOR = 1e-6


@dataclass
class GradCheckRow:
    name: str
    max_rel_error: float
    checked: int
    skipped: int


def _loss_value(model: Model, images: Tensor, targets: np.ndarray) -> Tensor:
    if model.cfg.task == "regress":
        return mse_loss(model.regress(images, "train"), targets)
    _, _, probs = model.class_probs(images, "train")
    pick = np.zeros((1, 2))
    pick[0, 1] = 1.0
    p1 = T.sum_(T.mul(probs, Tensor(pick)), axis=1)
    return bce_loss(p1, targets)


def gradient_check(model_cfg: ModelConfig, input_side: int = 64, batch: int = 2,
                   coords_per_tensor: int = 20, h: float = 1e-3,
                   seed: int = 0) -> list[GradCheckRow]:
    """Per-parameter-tensor max relative error of analytic vs numeric grads."""
    if T.default_dtype() is not np.float64:
        raise T.NumericError("gradient_check requires the 64-bit build")
    rng = np.random.default_rng(seed)
    model = Model(model_cfg, seed)
    images = Tensor(rng.uniform(0.0, 1.0, size=(batch, 3, input_side, input_side)))
    if model.cfg.task == "regress":
        targets = rng.uniform(0.2, 0.8, size=batch)
    else:
        targets = rng.integers(0, 2, size=batch).astype(float)

    params = model.named_params()
    loss = _loss_value(model, images, targets)
    T.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    for p in params.values():
        p.grad = None

    def loss_and_gates() -> tuple[float, tuple]:
        with T.no_grad(), T.trace_gates() as gates:
            value = _loss_value(model, images, targets).item()
        return value, tuple(gates)

    _, base_gates = loss_and_gates()

    # High-fanout coordinates (a stem weight feeds tens of thousands of
    # gates) essentially never have a kink-free window at the base step;
    # those fall back to the largest clean step from this ladder.
    steps = (h, h / 8, h / 64, h / 512)

    rows: list[GradCheckRow] = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        candidates = rng.permutation(flat.size)
        worst = 0.0
        checked = skipped = 0
        for c in candidates:
            if checked >= coords_per_tensor:
                break
            keep = flat[c]
            numeric = None
            for step in steps:
                flat[c] = keep + step
                up, gates_up = loss_and_gates()
                flat[c] = keep - step
                down, gates_down = loss_and_gates()
                flat[c] = keep
                if gates_up == base_gates and gates_down == base_gates:
                    numeric = (up - down) / (2.0 * step)
                    break
            if numeric is None:
                skipped += 1
                continue
            err = abs(ga[c] - numeric) / max(abs(ga[c]), abs(numeric), REL_FLOOR)
            worst = max(worst, err)
            checked += 1
        if checked == 0:
            raise T.NumericError(
                f"no kink-free coordinates found for {name!r}; cannot check")
        rows.append(GradCheckRow(name=name, max_rel_error=worst,
                                 checked=checked, skipped=skipped))
    return rows


def all_pass(rows: list[GradCheckRow], tolerance: float = DEFAULT_TOLERANCE) -> bool:
    return all(r.max_rel_error < tolerance for r in rows)
