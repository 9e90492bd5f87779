"""Minimal dense-matrix reverse-mode automatic differentiation.

A Tape records every primitive applied to the variables created on it and
replays the adjoint rules in exact reverse order.  Values are 64-bit numpy
arrays; the op set is exactly what the labeling model needs: matmul,
sigmoid, column concatenation, column average pooling, add/scale, and a
masked softmax cross-entropy.  A central finite-difference oracle is
provided for gradient verification.
"""
from __future__ import annotations

import math
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ShapeError, ValidationError


class Var:
    """A matrix value recorded on a tape."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Recorded computation supporting a single reverse sweep.

    Single-owner during recording; distinct tapes are independent.  With
    record=False the ops still compute values but no adjoint information is
    kept (cheap forward-only evaluation).
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._n_values = 0
        # each entry: (out_idx, ((in_idx, vjp_fn), ...))
        self._ops: list = []
        self._params: dict[str, int] = {}
        self._shapes: dict[int, tuple] = {}

    # -- leaves ----------------------------------------------------------

    def _new(self, value: np.ndarray) -> Var:
        idx = self._n_values
        self._n_values += 1
        if self.record:
            self._shapes[idx] = value.shape
        return Var(self, idx, value)

    def constant(self, value: np.ndarray) -> Var:
        return self._new(np.asarray(value, dtype=np.float64))

    def parameter(self, name: str, value: np.ndarray) -> Var:
        var = self._new(np.asarray(value, dtype=np.float64))
        if self.record:
            if name in self._params:
                raise ValidationError(f"duplicate parameter name {name!r}")
            self._params[name] = var.idx
        return var

    def _emit(self, out: Var, adjoints) -> Var:
        if self.record:
            self._ops.append((out.idx, adjoints))
        return out

    # -- primitives ------------------------------------------------------

    def matmul(self, a: Var, b: Var) -> Var:
        if a.value.shape[1] != b.value.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {a.value.shape} x {b.value.shape}")
        out = self._new(a.value @ b.value)
        if not self.record:
            return out
        av, bv = a.value, b.value
        return self._emit(out, (
            (a.idx, lambda g: g @ bv.T),
            (b.idx, lambda g: av.T @ g),
        ))

    def sigmoid(self, x: Var) -> Var:
        y = expit(x.value)
        out = self._new(y)
        if not self.record:
            return out
        return self._emit(out, ((x.idx, lambda g: g * y * (1.0 - y)),))

    def add(self, a: Var, b: Var) -> Var:
        if a.value.shape != b.value.shape:
            raise ShapeError(f"add shapes differ: {a.value.shape} vs {b.value.shape}")
        out = self._new(a.value + b.value)
        if not self.record:
            return out
        return self._emit(out, ((a.idx, lambda g: g), (b.idx, lambda g: g)))

    def scale(self, a: Var, c: float) -> Var:
        c = float(c)
        out = self._new(a.value * c)
        if not self.record:
            return out
        return self._emit(out, ((a.idx, lambda g: g * c),))

    def concat_cols(self, parts: Sequence[Var]) -> Var:
        if len(parts) == 0:
            raise ValidationError("concat_cols needs at least one part")
        rows = parts[0].value.shape[0]
        for p in parts[1:]:
            if p.value.shape[0] != rows:
                raise ShapeError(
                    f"concat_cols row mismatch: {parts[0].value.shape} vs {p.value.shape}")
        if len(parts) == 1:
            # identity; still recorded so gradients route through
            p = parts[0]
            out = self._new(p.value)
            if not self.record:
                return out
            return self._emit(out, ((p.idx, lambda g: g),))
        out = self._new(np.concatenate([p.value for p in parts], axis=1))
        if not self.record:
            return out
        offsets = np.cumsum([0] + [p.value.shape[1] for p in parts])
        adjoints = tuple(
            (p.idx, (lambda lo, hi: lambda g: g[:, lo:hi])(offsets[i], offsets[i + 1]))
            for i, p in enumerate(parts)
        )
        return self._emit(out, adjoints)

    def avgpool_cols(self, x: Var, kernel: int) -> Var:
        if kernel < 1:
            raise ValidationError(f"avgpool kernel must be >= 1, got {kernel}")
        if kernel == 1:
            out = self._new(x.value)
            if not self.record:
                return out
            return self._emit(out, ((x.idx, lambda g: g),))
        n, d = x.value.shape
        nwin = -(-d // kernel)
        widths = np.full(nwin, kernel, dtype=np.int64)
        if d % kernel:
            widths[-1] = d % kernel  # final partial window averaged over its width
        if d % kernel == 0:
            y = x.value.reshape(n, nwin, kernel).mean(axis=2)
        else:
            y = np.empty((n, nwin))
            full = nwin - 1
            y[:, :full] = x.value[:, : full * kernel].reshape(n, full, kernel).mean(axis=2)
            y[:, full] = x.value[:, full * kernel:].mean(axis=1)
        out = self._new(y)
        if not self.record:
            return out
        inv = 1.0 / widths
        return self._emit(out, ((x.idx, lambda g: np.repeat(g * inv, widths, axis=1)),))

    def softmax_cross_entropy(self, logits: Var, targets: np.ndarray,
                              mask: Optional[np.ndarray] = None) -> Var:
        n, c = logits.value.shape
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != (n,):
            raise ShapeError(f"targets length {targets.shape} does not match {n} logit rows")
        if mask is None:
            mask = np.ones(n, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
        count = int(mask.sum())
        if count == 0:
            raise ValidationError("softmax_cross_entropy: all rows masked")
        if np.any((targets[mask] < 0) | (targets[mask] >= c)):
            raise ValidationError(f"target class outside [0, {c})")
        z = logits.value - logits.value.max(axis=1, keepdims=True)
        logsumexp = np.log(np.exp(z).sum(axis=1))
        nll = logsumexp - z[np.arange(n), targets.clip(0, c - 1)]
        loss = float(nll[mask].sum() / count)
        out = self._new(np.float64(loss))
        if not self.record:
            return out
        softmax = np.exp(z - logsumexp[:, None])

        def vjp(g):
            grad = softmax.copy()
            grad[np.arange(n), targets.clip(0, c - 1)] -= 1.0
            grad[~mask] = 0.0
            return grad * (float(g) / count)

        return self._emit(out, ((logits.idx, vjp),))

    # -- reverse sweep ----------------------------------------------------

    def backward(self, loss: Var) -> Dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every named parameter leaf."""
        if not self.record:
            raise ValidationError("backward requires a recording tape")
        if loss.tape is not self:
            raise ValidationError("loss was recorded on a different tape")
        if np.ndim(loss.value) != 0 and np.size(loss.value) != 1:
            raise ValidationError(f"loss must be scalar, got shape {np.shape(loss.value)}")
        grads: dict[int, np.ndarray] = {loss.idx: np.ones_like(np.asarray(loss.value))}
        for out_idx, adjoints in reversed(self._ops):
            g = grads.pop(out_idx, None)
            if g is None:
                continue
            for in_idx, vjp in adjoints:
                contrib = vjp(g)
                if in_idx in grads:
                    grads[in_idx] = grads[in_idx] + contrib
                else:
                    grads[in_idx] = contrib
        result = {}
        for name, idx in self._params.items():
            g = grads.get(idx)
            if g is None:
                g = np.zeros(self._shapes[idx])
            result[name] = np.asarray(g, dtype=np.float64)
        return result


def finite_difference_gradient(f: Callable[[Dict[str, np.ndarray]], float],
                               params: Dict[str, np.ndarray],
                               h: float = 1e-6) -> Dict[str, np.ndarray]:
    """Central-difference gradient of a scalar function of named matrices."""
    grads = {}
    work = {name: np.array(v, dtype=np.float64, copy=True) for name, v in params.items()}
    for name, value in work.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(work)
            flat[i] = orig - h
            down = f(work)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def gradient_relative_error(analytic: Dict[str, np.ndarray],
                            numeric: Dict[str, np.ndarray]) -> Dict[str, float]:
    """Worst relative error per parameter, denominated by max(1, |analytic|)."""
    out = {}
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(1.0, np.abs(a))
        out[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    return out
