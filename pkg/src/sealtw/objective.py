"""The SEAL regularizer: total extension, weighted-l1 loss, gradients and A2 updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernels, num_threads
from .hierarchy import check_prob_vector


@dataclass(frozen=True, eq=False)
class TotalVector:
    values: np.ndarray
    num_latent: int

    @property
    def latent(self):
        return self.values[:self.num_latent]

    @property
    def observed(self):
        return self.values[self.num_latent:]


@dataclass(frozen=True, eq=False)
class SealGradients:
    grad_wrt_prediction: np.ndarray
    grad_wrt_A2: np.ndarray


def total_extension(spec, p):
    """Lift a distribution over observed labels to every node of the hierarchy."""
    p = np.asarray(p, dtype=np.float64)
    return TotalVector(np.concatenate([spec.alpha @ p, p]), spec.num_latent)


def seal_loss(spec, prediction, target):
    """Weighted l1 distance between the total prediction and the total target.

    The root entry of both totals is the total mass (1), so it never
    contributes and is skipped.
    """
    K = spec.num_observed
    q_pred = total_extension(spec, check_prob_vector(prediction, K)).values
    q_true = total_extension(spec, check_prob_vector(target, K)).values
    return float(np.sum(spec.weights[1:] * np.abs(q_pred[1:] - q_true[1:])))


def _a2_grad(spec, weighted_signs, D):
    # d/dA2[i, j] of sum_s w_s |z_s| is sum_s w_s sign(z_s) C[s, i] d_j, latent s >= 1 only
    M = spec.num_latent
    latent = weighted_signs[:, :M - 1]
    return spec.closure[1:].T @ latent.T @ D


def seal_grad(spec, prediction, target):
    """Subgradients of :func:`seal_loss` with ``sign(0) = 0``.

    ``grad_wrt_A2`` is zero for hard specs, whose hierarchy is frozen.
    """
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    _, grad, ws, D = _batch(spec, p[None, :], t[None, :])
    if spec.soft:
        ga2 = _a2_grad(spec, ws, D)
    else:
        ga2 = np.zeros_like(spec.A2)
    return SealGradients(grad[0], ga2)


def _batch(spec, P, T):
    E = np.ascontiguousarray(spec.extension[1:])
    w = np.ascontiguousarray(spec.weights[1:])
    D = np.ascontiguousarray(P - T)
    losses, grad, signs = kernels.seal_batch(E, w, D, num_threads())
    return losses, grad, signs * w, D


def seal_batch(spec, P, T, need_a2=True):
    """Per-row losses, prediction gradients and the summed A2 gradient for a batch.

    ``P`` and ``T`` are ``B x K`` arrays of predictions and targets. The A2
    gradient is the sum over rows (callers divide by the batch size).
    """
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    losses, grad, ws, D = _batch(spec, P, T)
    ga2 = _a2_grad(spec, ws, D) if (need_a2 and spec.soft) else None
    return losses, grad, ga2


def project_simplex_columns(A2):
    """Project each column onto the probability simplex (sort-based, exact)."""
    A2 = np.asarray(A2, dtype=np.float64)
    if not np.all(np.isfinite(A2)):
        raise ValueError("cannot project non-finite entries")
    return kernels.project_simplex_columns(A2)


def _softmax_columns(Z):
    Z = Z - Z.max(axis=0, keepdims=True)
    e = np.exp(Z)
    return e / e.sum(axis=0, keepdims=True)


def update_hierarchy(spec, grad_wrt_A2, step_size, method="pgd"):
    """One gradient step on the soft assignment ``A2``.

    ``pgd`` steps and projects each column back onto the simplex. ``softmax``
    is experimental: it treats columns as softmax of logits recovered from the
    current entries and steps in logit space.
    """
    if not spec.soft:
        raise ValueError("update_hierarchy needs a soft spec")
    g = np.asarray(grad_wrt_A2, dtype=np.float64)
    if method == "pgd":
        A2 = project_simplex_columns(spec.A2 - step_size * g)
    elif method == "softmax":
        A = spec.A2
        logits = np.log(np.maximum(A, 1e-12))
        # chain rule through the column softmax
        g_logits = A * (g - np.sum(A * g, axis=0, keepdims=True))
        A2 = _softmax_columns(logits - step_size * g_logits)
    else:
        raise ValueError(f"unknown hierarchy update method {method!r}")
    return spec.with_A2(A2)
