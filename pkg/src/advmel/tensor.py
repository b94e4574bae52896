"""Dense float64 primitives used by the encoders and attacks.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every function
here is pure: inputs are never modified in place.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DomainError, NumericError, ValidationError


def as_tensor(values) -> np.ndarray:
    t = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise NumericError("tensor contains NaN or Inf")
    return t


def l2_norm(t: np.ndarray) -> float:
    return float(np.linalg.norm(np.ravel(t)))


def normalize(v: np.ndarray) -> tuple[np.ndarray, float]:
    """Return ``(v / ||v||, ||v||)``; zero vectors raise DomainError."""
    n = l2_norm(v)
    if n == 0.0:
        raise DomainError("cannot normalise a zero-norm vector")
    return v / n, n


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"cosine_similarity needs equal-length vectors, got {a.shape} and {b.shape}")
    na, nb = l2_norm(a), l2_norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity of a zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_cross_entropy(logits: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of ``softmax(logits)`` against class ``y``.

    Returns the loss and its gradient with respect to the logits
    (``softmax - onehot(y)``).
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValidationError("logits must be rank-1")
    if not 0 <= y < z.shape[0]:
        raise IndexError(f"label {y} out of range for {z.shape[0]} logits")
    shifted = z - z.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = float(log_norm - shifted[y])
    grad = np.exp(shifted - log_norm)
    grad[y] -= 1.0
    return loss, grad


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    return np.clip(delta, -epsilon, epsilon)


def clamp_unit_box(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValidationError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
