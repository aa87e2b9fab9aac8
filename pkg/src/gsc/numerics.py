"""Deterministic numerical primitives shared across the package.

Plain numpy throughout: stable row softmax, cosine similarity, log-sum-exp,
an in-place Adam step, and helpers for deriving independent seeded random
generators. No GPU, no autodiff; gradients are hand-derived in `losses`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AdamState",
    "NumericalError",
    "adam_step",
    "as_matrix",
    "cosine",
    "derive_rng",
    "logsumexp",
    "make_rng",
    "require_finite",
    "softmax_rows",
]


class NumericalError(RuntimeError):
    """A computation produced non-finite values; the message names the stage."""


def require_finite(arr, name: str = "array") -> np.ndarray:
    """Return ``arr`` as a float ndarray, raising ValueError on NaN/inf."""
    out = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate a finite 2-D float matrix."""
    out = np.asarray(m, dtype=float)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    return require_finite(out, name)


def softmax_rows(m, tau: float) -> np.ndarray:
    """Row-wise softmax of ``m / tau``, max-subtracted per row for stability.

    Every output row sums to 1 even for entries of magnitude 1e4 and small
    temperatures; a row-constant shift of the input leaves the result
    unchanged up to rounding.
    """
    if not np.isfinite(tau) or tau <= 0:
        raise ValueError(f"temperature must be positive and finite, got {tau}")
    z = as_matrix(m, "softmax input") / tau
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logsumexp(v) -> float:
    """log(sum(exp(v))) computed max-shifted; exact for a single element."""
    arr = np.asarray(v, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("logsumexp of empty input")
    require_finite(arr, "logsumexp input")
    hi = float(arr.max())
    if arr.size == 1:
        return hi
    return hi + float(np.log(np.exp(arr - hi).sum()))


def cosine(u, v, return_degenerate: bool = False):
    """Cosine similarity of two equal-length vectors, clipped into [-1, 1].

    A zero-norm input yields 0.0 with the degenerate flag set instead of an
    error; embeddings are unit-normalized upstream, so this corner only
    arises in synthetic inputs.
    """
    a = require_finite(np.asarray(u, dtype=float).ravel(), "u")
    b = require_finite(np.asarray(v, dtype=float).ravel(), "v")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        value, degenerate = 0.0, True
    else:
        value = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
        degenerate = False
    return (value, degenerate) if return_degenerate else value


@dataclass
class AdamState:
    """Adam moment buffers and step counter for one ordered parameter list."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])

    def copy(self) -> "AdamState":
        return AdamState(m=[b.copy() for b in self.m], v=[b.copy() for b in self.v],
                         step=self.step, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place.

    ``params`` must be the same (ordered) arrays the state was built for;
    single writer per parameter set.
    """
    if not np.isfinite(lr) or lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {np.shape(g)}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def make_rng(seed: int) -> np.random.Generator:
    """Root generator for a run seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _tag_word(tag) -> int:
    if isinstance(tag, (bool, np.bool_)):
        return int(tag)
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Independent generator keyed by (seed, tags).

    Streams for distinct tag tuples never interact, so adding a consumer
    elsewhere cannot shift an existing stream; this is what makes batch
    schedules, initializations, and noise draws individually reproducible.
    """
    key = tuple(_tag_word(t) for t in tags)
    seq = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.default_rng(seq)
