"""Desk-scale differentiable image/text encoders with planted alignment.

The image encoder is a linear projection followed by L2 normalisation; the
text encoder mean-pools seeded-hash token vectors. ``build_planted_model``
solves for a projection that maps each entity's prototype image exactly
onto that entity's prompt embedding, then adds a high-gain component that
is invisible on the prototypes but gives the attacks something to exploit,
the way real encoders have directions they were never trained to ignore.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ConstructionError, DomainError, ValidationError
from .tensor import normalize, softmax_cross_entropy

PROMPT_PREFIX = "a photo of "

# Alignment the construction guarantees between prototype k and prompt k,
# and the minimum clean margin over every other entity's prompt.
PLANTED_ALIGNMENT = 0.99
PLANTED_MARGIN = 0.05

DEFAULT_SENSITIVITY = 0.0052


def render_prompt(entity: str) -> str:
    if not entity:
        raise ValidationError("entity name must be non-empty")
    return PROMPT_PREFIX + entity


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Encoder(Protocol):
    """What attacks and linkers need from a model."""

    height: int
    width: int

    def encode_image(self, image: np.ndarray) -> np.ndarray: ...

    def encode_text(self, text: str) -> np.ndarray: ...

    def logits_with_vjp(
        self, image: np.ndarray, candidates: Sequence[str], fused_text: str | None = None
    ) -> tuple[np.ndarray, Callable[[np.ndarray, int], np.ndarray]]: ...


@dataclass(eq=False)
class DeskModel:
    projection: np.ndarray  # (D, 3*H*W)
    embed_dim: int
    height: int
    width: int
    seed: int
    entities: tuple[str, ...] = ()
    sensitivity: float = DEFAULT_SENSITIVITY
    _text_cache: dict = field(default_factory=dict, repr=False)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (3, self.height, self.width)

    def token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(f"{self.seed}\x1f{token}".encode(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        return rng.standard_normal(self.embed_dim)

    def encode_text(self, text: str) -> np.ndarray:
        cached = self._text_cache.get(text)
        if cached is not None:
            return cached
        tokens = tokenize(text)
        if not tokens:
            raise ValidationError(f"text {text!r} has no tokens")
        pooled = np.mean([self.token_vector(t) for t in tokens], axis=0)
        emb, _ = normalize(pooled)
        emb.setflags(write=False)
        self._text_cache[text] = emb
        return emb

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.image_shape:
            raise ValidationError(f"image shape {image.shape} does not match model {self.image_shape}")
        return image

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        image = self._check_image(image)
        emb, _ = normalize(self.projection @ image.reshape(-1))
        return emb

    def logits_with_vjp(self, image, candidates, fused_text=None):
        """Candidate logits plus a vector-Jacobian product w.r.t. the pixels.

        ``vjp(w, ref)`` returns d(w . logits)/d(image) for a weight vector
        that sums to zero. It is evaluated as sum_{i != ref} w_i (t_i - t_ref)
        so that identical candidates cancel exactly instead of leaving
        rounding residue that sign() would amplify.
        """
        image = self._check_image(image)
        if len(candidates) < 2:
            raise ValidationError("need at least two candidates")
        texts = np.stack([self.encode_text(render_prompt(c)) for c in candidates])
        z = self.projection @ image.reshape(-1)
        e, z_norm = normalize(z)
        f = e + self.encode_text(fused_text) if fused_text is not None else e
        f_hat, f_norm = normalize(f)
        logits = texts @ f_hat

        def vjp(w: np.ndarray, ref: int) -> np.ndarray:
            w = np.asarray(w, dtype=np.float64)
            diff = texts - texts[ref]
            mask = np.ones(len(w), dtype=bool)
            mask[ref] = False
            u = w[mask] @ diff[mask]
            g_f = (u - np.dot(f_hat, u) * f_hat) / f_norm
            g_z = (g_f - np.dot(e, g_f) * e) / z_norm
            return (self.projection.T @ g_z).reshape(image.shape)

        return logits, vjp


def encode_text(model: Encoder, text: str) -> np.ndarray:
    return model.encode_text(text)


def encode_image(model: Encoder, image: np.ndarray) -> np.ndarray:
    return model.encode_image(image)


def fuse_embeddings(image_emb: np.ndarray, text_emb: np.ndarray) -> np.ndarray:
    """Element-wise sum of the two unit-normalised embeddings (sum is not re-normalised)."""
    image_emb = np.asarray(image_emb, dtype=np.float64)
    text_emb = np.asarray(text_emb, dtype=np.float64)
    if image_emb.shape != text_emb.shape:
        raise ValidationError(f"dimension mismatch: {image_emb.shape} vs {text_emb.shape}")
    return normalize(image_emb)[0] + normalize(text_emb)[0]


def candidate_logits(
    model: Encoder, image: np.ndarray, candidates: Sequence[str], fused_text: str | None = None
) -> np.ndarray:
    logits, _ = model.logits_with_vjp(image, candidates, fused_text)
    return logits


def loss_input_gradient(
    model: Encoder, image: np.ndarray, candidates: Sequence[str], y: int, fused_text: str | None = None
) -> tuple[float, np.ndarray]:
    """Cross-entropy over cosine logits and its exact gradient w.r.t. the pixels."""
    logits, vjp = model.logits_with_vjp(image, candidates, fused_text)
    loss, grad_logits = softmax_cross_entropy(logits, y)
    return loss, vjp(grad_logits, y)


# -- planted construction -------------------------------------------------

COLORS = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.75, 0.20),
    "blue": (0.15, 0.25, 0.85),
    "yellow": (0.85, 0.80, 0.15),
    "cyan": (0.15, 0.80, 0.80),
    "magenta": (0.80, 0.15, 0.75),
    "orange": (0.85, 0.50, 0.15),
    "purple": (0.50, 0.20, 0.70),
    "white": (0.85, 0.85, 0.85),
    "black": (0.15, 0.15, 0.15),
}
SHAPES = ("disk", "square", "triangle", "ring", "cross", "diamond", "bar", "dot")

_NAME_RE = re.compile(r"^([a-z]+)_([a-z]+)")


def _shape_mask(shape: str, h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = (yy - cy) / r, (xx - cx) / r
    if shape == "disk":
        return dy**2 + dx**2 <= 1.0
    if shape == "square":
        return (np.abs(dy) <= 0.8) & (np.abs(dx) <= 0.8)
    if shape == "triangle":
        return (dy <= 0.8) & (dy >= -0.9) & (np.abs(dx) <= (dy + 0.9) * 0.55)
    if shape == "ring":
        d2 = dy**2 + dx**2
        return (d2 <= 1.0) & (d2 >= 0.4)
    if shape == "cross":
        return ((np.abs(dy) <= 0.25) & (np.abs(dx) <= 1.0)) | ((np.abs(dx) <= 0.25) & (np.abs(dy) <= 1.0))
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= 1.0
    if shape == "bar":
        return (np.abs(dy) <= 0.3) & (np.abs(dx) <= 1.0)
    return dy**2 + dx**2 <= 0.3  # dot


def render_prototype(entity: str, index: int, height: int, width: int, seed: int) -> np.ndarray:
    """Draw a coloured shape on a textured grey background, pixels in [0.1, 0.9].

    Names of the form ``<colour>_<shape>`` are drawn literally; anything else
    gets a colour and shape picked from a hash of the name.
    """
    digest = hashlib.blake2b(f"{seed}\x1fproto\x1f{index}\x1f{entity}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    m = _NAME_RE.match(entity.lower())
    if m and m.group(1) in COLORS and m.group(2) in SHAPES:
        color, shape = COLORS[m.group(1)], m.group(2)
    else:
        color = tuple(rng.uniform(0.15, 0.85, size=3))
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
    bg = rng.uniform(0.35, 0.6)
    img = np.full((3, height, width), bg) + rng.uniform(-0.04, 0.04, size=(3, height, width))
    cy = height / 2 + rng.uniform(-0.1, 0.1) * height
    cx = width / 2 + rng.uniform(-0.1, 0.1) * width
    mask = _shape_mask(shape, height, width, cy, cx, 0.35 * min(height, width))
    for c in range(3):
        img[c][mask] = color[c] + rng.uniform(-0.03, 0.03, size=int(mask.sum()))
    img = np.clip(img, 0.1, 0.9)
    # 8-bit levels, so the PPM codec stores prototypes losslessly
    return np.clip(np.round(img * 255.0), 26, 229) / 255.0


def build_planted_model(
    entities: Sequence[str],
    embed_dim: int,
    height: int,
    width: int,
    seed: int,
    sensitivity: float = DEFAULT_SENSITIVITY,
) -> tuple[DeskModel, list[np.ndarray]]:
    """Build a DeskModel whose prototype images align with their prompt embeddings.

    The projection is ``T X^+ + s * R (I - X X^+)``: the first term sends
    prototype k to prompt embedding t_k exactly, the second is a seeded
    random map restricted to the orthogonal complement of the prototypes.
    """
    entities = list(entities)
    if not entities:
        raise ConstructionError("need at least one entity")
    if len(set(entities)) != len(entities):
        raise ConstructionError("entity names must be distinct")
    if embed_dim < len(entities):
        raise ConstructionError(f"embedding dimension {embed_dim} < number of entities {len(entities)}")
    if min(height, width) < 4:
        raise ConstructionError("images must be at least 4x4")

    n_pixels = 3 * height * width
    model = DeskModel(
        projection=np.zeros((embed_dim, n_pixels)),
        embed_dim=embed_dim,
        height=height,
        width=width,
        seed=seed,
        entities=tuple(entities),
        sensitivity=sensitivity,
    )
    try:
        targets = np.stack([model.encode_text(render_prompt(e)) for e in entities], axis=1)
    except (ValidationError, DomainError) as exc:
        raise ConstructionError(f"cannot embed entity prompts: {exc}") from exc

    prototypes = [render_prototype(e, k, height, width, seed) for k, e in enumerate(entities)]
    X = np.stack([p.reshape(-1) for p in prototypes], axis=1)
    if np.linalg.matrix_rank(X) < len(entities):
        raise ConstructionError("prototype images are linearly dependent")
    X_pinv = np.linalg.pinv(X)
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((embed_dim, n_pixels))
    projection = targets @ X_pinv + sensitivity * (R - (R @ X) @ X_pinv)
    projection.setflags(write=False)
    model.projection = projection

    for k, proto in enumerate(prototypes):
        emb = model.encode_image(proto)
        sims = targets.T @ emb
        if sims[k] < PLANTED_ALIGNMENT:
            raise ConstructionError(f"entity {entities[k]!r}: planted alignment {sims[k]:.4f} < {PLANTED_ALIGNMENT}")
        others = np.delete(sims, k)
        if others.size and sims[k] - others.max() < PLANTED_MARGIN:
            raise ConstructionError(
                f"entity {entities[k]!r}: prompt embedding too close to another entity's "
                f"(margin {sims[k] - others.max():.4f})"
            )
    return model, prototypes
