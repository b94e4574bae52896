"""PGD, APGD and CW attacks against cosine-logit entity linking."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .encoders import Encoder
from .errors import AttackError, DomainError, ValidationError
from .tensor import clamp_unit_box, l2_norm, project_linf, softmax_cross_entropy

METHODS = ("PGD", "APGD", "CW")
TIERS = ("Normal", "Strong")
TIER_CODES = {"Normal": "N", "Strong": "S"}

# APGD constants
APGD_MOMENTUM = 0.75
APGD_CHECKPOINTS = (0.22, 0.40, 0.55, 0.67, 0.77, 0.85, 0.92, 1.0)
APGD_IMPROVEMENT_RATIO = 0.75


@dataclass(frozen=True)
class AttackConfig:
    method: str
    tier: str
    steps: int
    norm: str
    step_size: float | None = None
    epsilon: float | None = None
    c: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown attack method {self.method!r}")
        if self.tier not in TIERS:
            raise ValidationError(f"unknown tier {self.tier!r}")
        if self.steps < 1:
            raise ValidationError("steps must be positive")
        if self.method in ("PGD", "APGD"):
            if self.norm != "Linf" or self.epsilon is None or self.epsilon <= 0:
                raise ValidationError(f"{self.method} needs a positive epsilon and the Linf norm")
            if self.method == "PGD" and (self.step_size is None or self.step_size <= 0):
                raise ValidationError("PGD needs a positive step_size")
        else:
            if self.norm != "L2" or self.step_size is None or self.c is None or self.kappa is None:
                raise ValidationError("CW needs step_size, c, kappa and the L2 norm")

    @property
    def key(self) -> str:
        return f"{self.method.lower()}_{TIER_CODES[self.tier].lower()}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        return cls(**d)


_PRESETS = {
    ("PGD", "Normal"): dict(steps=20, step_size=2 / 255, epsilon=8 / 255, norm="Linf"),
    ("APGD", "Normal"): dict(steps=20, epsilon=8 / 255, norm="Linf"),
    ("CW", "Normal"): dict(steps=50, step_size=0.01, c=20.0, kappa=0.0, norm="L2"),
    # the published Strong PGD step is 2/225, not 2/255
    ("PGD", "Strong"): dict(steps=40, step_size=2 / 225, epsilon=0.2, norm="Linf"),
    ("APGD", "Strong"): dict(steps=40, epsilon=0.2, norm="Linf"),
    ("CW", "Strong"): dict(steps=75, step_size=0.05, c=100.0, kappa=0.0, norm="L2"),
}

_METHOD_ALIASES = {"pgd": "PGD", "apgd": "APGD", "cw": "CW"}
_TIER_ALIASES = {"n": "Normal", "normal": "Normal", "s": "Strong", "strong": "Strong"}


def preset_config(method: str, tier: str) -> AttackConfig:
    m = _METHOD_ALIASES.get(method.lower())
    t = _TIER_ALIASES.get(tier.lower())
    if m is None or t is None:
        raise ValidationError(f"no preset for ({method!r}, {tier!r})")
    return AttackConfig(method=m, tier=t, **_PRESETS[(m, t)])


def all_presets() -> list[AttackConfig]:
    return [preset_config(m, t) for m in METHODS for t in TIERS]


@dataclass
class AttackResult:
    delta: np.ndarray
    adversarial_image: np.ndarray
    success: bool
    final_loss: float
    loss_trace: list[float] = field(default_factory=list)
    linf_delta: float = 0.0
    l2_delta: float = 0.0


def _result(image, delta, success, final_loss, trace) -> AttackResult:
    adv = clamp_unit_box(image + delta)
    delta = adv - image
    return AttackResult(
        delta=delta,
        adversarial_image=adv,
        success=bool(success),
        final_loss=float(final_loss),
        loss_trace=[float(v) for v in trace],
        linf_delta=float(np.max(np.abs(delta))) if delta.size else 0.0,
        l2_delta=l2_norm(delta),
    )


def _ce(model, x, candidates, y, fused_text):
    logits, vjp = model.logits_with_vjp(x, candidates, fused_text)
    loss, g = softmax_cross_entropy(logits, y)
    return loss, logits, vjp(g, y)


def _predicted(logits: np.ndarray) -> int:
    return int(np.argmax(logits))  # first maximum on ties


def _check(image, candidates, y, config, method):
    if config.method != method:
        raise ValidationError(f"expected a {method} config, got {config.method}")
    image = np.asarray(image, dtype=np.float64)
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValidationError("image pixels must lie in [0, 1]")
    if not 0 <= y < len(candidates):
        raise IndexError(f"gold index {y} out of range")
    return image


def _step_guard(step, fn, *args):
    try:
        return fn(*args)
    except DomainError as exc:
        raise AttackError(str(exc), step) from exc


def pgd_attack(
    model: Encoder,
    image: np.ndarray,
    candidates: Sequence[str],
    y: int,
    config: AttackConfig,
    fused_text: str | None = None,
) -> AttackResult:
    """L-inf PGD from delta = 0; returns the last iterate."""
    x = _check(image, candidates, y, config, "PGD")
    eps, alpha = config.epsilon, config.step_size
    delta = np.zeros_like(x)
    trace = []
    loss, logits, grad = _step_guard(0, _ce, model, x, candidates, y, fused_text)
    for step in range(config.steps):
        delta = project_linf(delta + alpha * np.sign(grad), eps)
        delta = clamp_unit_box(x + delta) - x
        loss, logits, grad = _step_guard(step + 1, _ce, model, x + delta, candidates, y, fused_text)
        trace.append(loss)
    return _result(x, delta, _predicted(logits) != y, loss, trace)


def _apgd_checkpoints(steps: int) -> list[int]:
    points = sorted({max(1, math.ceil(p * steps)) for p in APGD_CHECKPOINTS})
    return points


def apgd_attack(
    model: Encoder,
    image: np.ndarray,
    candidates: Sequence[str],
    y: int,
    config: AttackConfig,
    fused_text: str | None = None,
) -> AttackResult:
    """Momentum PGD with step-size halving at checkpoints; returns the best-loss iterate.

    ``loss_trace`` holds the best loss seen after each step, so it never decreases.
    """
    x = _check(image, candidates, y, config, "APGD")
    eps = config.epsilon
    eta = 2.0 * eps

    def proj(d):
        return clamp_unit_box(x + project_linf(d, eps)) - x

    delta = np.zeros_like(x)
    loss, logits, grad = _step_guard(0, _ce, model, x, candidates, y, fused_text)
    best_loss, best_delta, best_grad, best_logits = loss, delta, grad, logits
    prev_delta = delta
    trace = []
    checkpoints = _apgd_checkpoints(config.steps)
    last_checkpoint = 0
    improvements = 0

    for step in range(config.steps):
        z = proj(delta + eta * np.sign(grad))
        if step == 0:
            new_delta = z
        else:
            new_delta = proj(delta + APGD_MOMENTUM * (z - delta) + (1.0 - APGD_MOMENTUM) * (delta - prev_delta))
        prev_delta, delta = delta, new_delta
        loss, logits, grad = _step_guard(step + 1, _ce, model, x + delta, candidates, y, fused_text)
        if loss > best_loss:
            best_loss, best_delta, best_grad, best_logits = loss, delta, grad, logits
            improvements += 1
        trace.append(best_loss)

        done = step + 1
        if done in checkpoints and done < config.steps:
            window = done - last_checkpoint
            if improvements < APGD_IMPROVEMENT_RATIO * window:
                eta /= 2.0
                delta, grad, prev_delta = best_delta, best_grad, best_delta
            last_checkpoint = done
            improvements = 0

    return _result(x, best_delta, _predicted(best_logits) != y, best_loss, trace)


def cw_margin(logits: np.ndarray, y: int, kappa: float) -> float:
    """max(logit_y - max_{i != y} logit_i, -kappa)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[0] < 2:
        raise ValidationError("need at least two logits")
    if not 0 <= y < z.shape[0]:
        raise IndexError(f"label {y} out of range for {z.shape[0]} logits")
    return float(max(z[y] - np.max(np.delete(z, y)), -kappa))


def _runner_up(logits: np.ndarray, y: int) -> int:
    masked = np.array(logits, dtype=np.float64)
    masked[y] = -np.inf
    return int(np.argmax(masked))


def cw_attack(
    model: Encoder,
    image: np.ndarray,
    candidates: Sequence[str],
    y: int,
    config: AttackConfig,
    fused_text: str | None = None,
) -> AttackResult:
    """Gradient descent on ||delta||_2^2 + c * margin with per-step box clamping.

    Returns the smallest-norm iterate that is misclassified, or the final
    iterate when none was. ``loss_trace[i]`` is the objective at iterate i.
    """
    x = _check(image, candidates, y, config, "CW")
    c, kappa, lr = config.c, config.kappa, config.step_size
    delta = np.zeros_like(x)
    trace = []
    best = None  # (l2, delta, objective)

    def evaluate(step, d):
        logits, vjp = _step_guard(step, model.logits_with_vjp, x + d, candidates, fused_text)
        margin = cw_margin(logits, y, kappa)
        objective = float(np.sum(d * d)) + c * margin
        return logits, vjp, margin, objective

    for step in range(config.steps + 1):
        logits, vjp, margin, objective = evaluate(step, delta)
        if _predicted(logits) != y:
            norm = l2_norm(delta)
            if best is None or norm < best[0]:
                best = (norm, delta, objective)
        if step == config.steps:
            break
        trace.append(objective)
        grad = 2.0 * delta
        j = _runner_up(logits, y)
        if logits[y] - logits[j] > -kappa:
            w = np.zeros(len(logits))
            w[j] = -1.0
            w[y] = 1.0
            grad = grad + c * vjp(w, y)
        delta = clamp_unit_box(x + delta - lr * grad) - x

    if best is not None:
        return _result(x, best[1], True, best[2], trace)
    return _result(x, delta, False, objective, trace)


ATTACKS = {"PGD": pgd_attack, "APGD": apgd_attack, "CW": cw_attack}


def run_attack(model, image, candidates, y, config: AttackConfig, fused_text=None) -> AttackResult:
    return ATTACKS[config.method](model, image, candidates, y, config, fused_text)
