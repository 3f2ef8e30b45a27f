"""Shared test utilities."""

from __future__ import annotations

import numpy as np

from aesgraph import tensor as T


def fd_max_rel_err(make_loss, params, rng, h=1e-6, coords=10, floor=1e-6):
    """Max relative error of analytic grads vs central differences.

    ``make_loss`` rebuilds the scalar loss from the current parameter data.
    """
    loss = make_loss()
    T.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1).copy()
        p.grad = None
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        for c in picks:
            keep = flat[c]
            with T.no_grad():
                flat[c] = keep + h
                up = make_loss().item()
                flat[c] = keep - h
                down = make_loss().item()
            flat[c] = keep
            numeric = (up - down) / (2 * h)
            err = abs(analytic[c] - numeric) / max(abs(analytic[c]), abs(numeric), floor)
            worst = max(worst, err)
    return worst


class StubRng:
    """Deterministic stand-in for a numpy Generator in augmentation tests."""

    def __init__(self, uniforms=(), integers=()):
        self._uniforms = list(uniforms)
        self._integers = list(integers)

    def uniform(self, low=0.0, high=1.0):
        v = self._uniforms.pop(0)
        if low == 0.0 and high == 1.0:
            return v
        return v

    def integers(self, low, high):
        return self._integers.pop(0)


def fresh_array(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)
