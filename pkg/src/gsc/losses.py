"""Purified contrastive losses and hand-derived gradients for both encoders.

The cross-modal loss is a soft-label-weighted InfoNCE over rows and columns
of the pair-similarity matrix; the intra-modal loss contrasts weighted
structure-agreement logits w[i, j] = sum_k y_k^2 <I_i,I_k><T_j,T_k>. Labels
are constants throughout: estimation and optimization alternate, so no
gradient flows into the label weights.

The backward pass goes similarity matrices -> losses -> row normalization ->
tanh/affine stack, and is validated coordinate-by-coordinate against central
finite differences by ``fd_check``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Encoder, EmbeddingBatch, ForwardCache, encode
from .numerics import NumericalError, as_matrix, require_finite, softmax_rows

__all__ = [
    "FdCheckReport",
    "GradSet",
    "LossReport",
    "fd_check",
    "grad_total",
    "loss_cm",
    "loss_im",
    "structure_logits",
    "total_loss",
]


@dataclass(frozen=True)
class LossReport:
    """One batch's loss values; total = l_cm + gamma * l_im."""

    l_cm: float
    l_im: float
    gamma: float
    total: float


@dataclass
class GradSet:
    """Gradient buffers in encoder parameter order (W0, b0, W1, b1, ...)."""

    img: list
    txt: list


def _check_square(mat: np.ndarray, name: str) -> np.ndarray:
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got {mat.shape}")
    return mat


def _check_labels(y, b: int) -> np.ndarray:
    yv = require_finite(np.asarray(y, dtype=float).ravel(), "labels")
    if yv.shape[0] != b:
        raise ValueError(f"label length {yv.shape[0]} != batch size {b}")
    return yv


def _log_softmax_diag(z: np.ndarray) -> np.ndarray:
    """Per-row log-softmax of z, evaluated on the diagonal."""
    shift = z.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(z - shift).sum(axis=1))
    return np.diag(z) - lse


def loss_cm(s, y, tau1: float) -> float:
    """Label-weighted InfoNCE over rows and columns at temperature tau1."""
    if tau1 <= 0:
        raise ValueError(f"tau1 must be positive, got {tau1}")
    mat = _check_square(as_matrix(s, "similarity matrix"), "similarity matrix")
    yv = _check_labels(y, mat.shape[0])
    z = mat / tau1
    row = _log_softmax_diag(z)
    col = _log_softmax_diag(z.T)
    return float(-(yv @ row + yv @ col) / (2.0 * mat.shape[0]))


def structure_logits(s_ii, s_tt, y, tau2: float) -> np.ndarray:
    """w / tau2 with w[i, j] = sum_k y_k^2 <I_i,I_k> <T_j,T_k>."""
    if tau2 <= 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    a = _check_square(as_matrix(s_ii, "image structure"), "image structure")
    b = _check_square(as_matrix(s_tt, "text structure"), "text structure")
    if a.shape != b.shape:
        raise ValueError(f"structure shapes differ: {a.shape} vs {b.shape}")
    yv = _check_labels(y, a.shape[0])
    w2 = yv * yv
    return (a * w2[None, :]) @ b.T / tau2


def loss_im(s_ii, s_tt, y, tau2: float) -> float:
    """Contrastive agreement of weighted structure rows; ln B when w is row-constant."""
    z = structure_logits(s_ii, s_tt, y, tau2)
    return float(-_log_softmax_diag(z).mean())


def total_loss(l_cm: float, l_im: float, gamma: float) -> LossReport:
    """Weighted sum; gamma balances the two objectives."""
    if not (np.isfinite(l_cm) and np.isfinite(l_im)):
        raise ValueError("loss terms must be finite")
    if not np.isfinite(gamma) or gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    return LossReport(l_cm=float(l_cm), l_im=float(l_im), gamma=float(gamma),
                      total=float(l_cm) + float(gamma) * float(l_im))


def _embedding_grads(e_img: EmbeddingBatch, e_txt: EmbeddingBatch, y,
                     tau1: float, tau2: float, gamma: float):
    """Loss report plus gradients w.r.t. the two embedding matrices."""
    ei = e_img.matrix
    et = e_txt.matrix
    b = ei.shape[0]
    yv = _check_labels(y, b)
    s = ei @ et.T
    s_ii = ei @ ei.T
    s_tt = et @ et.T
    report = total_loss(loss_cm(s, yv, tau1), loss_im(s_ii, s_tt, yv, tau2), gamma)

    eye = np.eye(b)
    p = softmax_rows(s, tau1)
    q = softmax_rows(s.T, tau1).T  # q[i, j] = column softmax of s at (i, j)
    g_s = -(yv[:, None] * (eye - p) + (eye - q) * yv[None, :]) / (2.0 * b * tau1)

    w2 = yv * yv
    r = softmax_rows((s_ii * w2[None, :]) @ s_tt.T, tau2)
    g_w = -(gamma / (b * tau2)) * (eye - r)
    g_ii = (g_w @ s_tt) * w2[None, :]
    g_tt = (g_w.T @ s_ii) * w2[None, :]

    g_ei = g_s @ et + (g_ii + g_ii.T) @ ei
    g_et = g_s.T @ ei + (g_tt + g_tt.T) @ et
    return report, g_ei, g_et


def _backprop_encoder(enc: Encoder, cache: ForwardCache, emb: np.ndarray,
                      g_emb: np.ndarray) -> list:
    """Chain rule through L2 normalization and the tanh/affine stack."""
    inner = (g_emb * emb).sum(axis=1, keepdims=True)
    dz = (g_emb - inner * emb) / cache.norms[:, None]
    grads: list = []
    for l in range(len(enc.weights) - 1, -1, -1):
        a = cache.inputs[l]
        grads.append(dz.sum(axis=0))  # bias
        grads.append(a.T @ dz)        # weight
        if l > 0:
            da = dz @ enc.weights[l].T
            dz = da * (1.0 - a * a)   # a is tanh output entering layer l
    grads.reverse()
    return grads


def grad_total(enc_img: Encoder, enc_txt: Encoder, x_img, x_txt, y,
               tau1: float, tau2: float, gamma: float):
    """Analytic gradient of the total loss w.r.t. every encoder parameter.

    Returns (LossReport, GradSet). Labels are constants; gradients flow
    through similarity matrices, both losses, the row normalization, and the
    MLP layers only.
    """
    x_img = as_matrix(x_img, "image batch")
    x_txt = as_matrix(x_txt, "text batch")
    if x_img.shape[0] != x_txt.shape[0]:
        raise ValueError("image/text batch sizes differ")
    e_img = encode(enc_img, x_img, "img")
    e_txt = encode(enc_txt, x_txt, "txt")
    for stage, emb in (("image embeddings", e_img), ("text embeddings", e_txt)):
        if not np.all(np.isfinite(emb.matrix)):
            raise NumericalError(f"non-finite values in {stage}")
    report, g_ei, g_et = _embedding_grads(e_img, e_txt, y, tau1, tau2, gamma)
    if not np.isfinite(report.total):
        raise NumericalError("non-finite loss value")
    g_img = _backprop_encoder(enc_img, e_img.cache, e_img.matrix, g_ei)
    g_txt = _backprop_encoder(enc_txt, e_txt.cache, e_txt.matrix, g_et)
    for stage, grads in (("image-encoder gradients", g_img),
                         ("text-encoder gradients", g_txt)):
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite values in {stage}")
    return report, GradSet(img=g_img, txt=g_txt)


def _total_loss_value(enc_img: Encoder, enc_txt: Encoder, x_img, x_txt, y,
                      tau1: float, tau2: float, gamma: float) -> float:
    e_img = encode(enc_img, x_img)
    e_txt = encode(enc_txt, x_txt)
    ei, et = e_img.matrix, e_txt.matrix
    return (loss_cm(ei @ et.T, y, tau1)
            + gamma * loss_im(ei @ ei.T, et @ et.T, y, tau2))


@dataclass
class FdCheckReport:
    """Worst-case agreement between analytic and central FD gradients."""

    max_rel_err: float
    worst_param: str
    n_coords: int
    tol: float
    passed: bool


def fd_check(enc_img: Encoder, enc_txt: Encoder, x_img, x_txt, y,
             tau1: float, tau2: float, gamma: float,
             h: float = 1e-5, tol: float = 1e-4,
             grads: GradSet | None = None) -> FdCheckReport:
    """Compare analytic gradients against central finite differences.

    Every parameter coordinate is perturbed by +-h. The relative error uses
    denominator max(|analytic|, |fd|, 1e-6), so coordinates whose gradient
    sits below 1e-6 are compared at that absolute scale instead of being
    amplified into noise. ``grads`` defaults to the analytic gradients;
    passing a perturbed set turns this into a sensitivity check of the
    harness itself. Intended for small instances only (runtime is linear in
    parameter count times batch cost).
    """
    if grads is None:
        _, grads = grad_total(enc_img, enc_txt, x_img, x_txt, y, tau1, tau2, gamma)
    worst_err = 0.0
    worst_name = ""
    n_coords = 0
    sides = (("img", enc_img, grads.img), ("txt", enc_txt, grads.txt))
    for side, enc, glist in sides:
        params = enc.params()
        names = enc.param_names()
        for p, g, name in zip(params, glist, names):
            flat_p = p.reshape(-1)
            flat_g = np.asarray(g).reshape(-1)
            for i in range(flat_p.size):
                orig = flat_p[i]
                flat_p[i] = orig + h
                up = _total_loss_value(enc_img, enc_txt, x_img, x_txt, y, tau1, tau2, gamma)
                flat_p[i] = orig - h
                down = _total_loss_value(enc_img, enc_txt, x_img, x_txt, y, tau1, tau2, gamma)
                flat_p[i] = orig
                fd = (up - down) / (2.0 * h)
                a = flat_g[i]
                rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
                n_coords += 1
                if rel > worst_err:
                    worst_err = rel
                    idx = tuple(int(d) for d in np.unravel_index(i, p.shape))
                    worst_name = f"{side}.{name}{list(idx)}"
    return FdCheckReport(max_rel_err=worst_err, worst_param=worst_name,
                         n_coords=n_coords, tol=tol, passed=worst_err < tol)
