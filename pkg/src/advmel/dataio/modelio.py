"""DeskModel serialisation.

A planted model is a pure function of its build parameters, so the file
stores those parameters plus a SHA-256 of the projection; loading rebuilds
the model and refuses to continue if the hash differs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..encoders import DeskModel, build_planted_model
from ..errors import ConstructionError, ValidationError

FORMAT = "advmel-desk-model"


def projection_digest(model: DeskModel) -> str:
    return hashlib.sha256(np.ascontiguousarray(model.projection, dtype="<f8").tobytes()).hexdigest()


def model_to_dict(model: DeskModel) -> dict:
    return {
        "format": FORMAT,
        "version": 1,
        "seed": model.seed,
        "embed_dim": model.embed_dim,
        "height": model.height,
        "width": model.width,
        "entities": list(model.entities),
        "sensitivity": model.sensitivity,
        "projection_sha256": projection_digest(model),
    }


def save_model(path: str | Path, model: DeskModel) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path, verify: bool = True) -> tuple[DeskModel, list[np.ndarray]]:
    """Rebuild a saved model; returns the model and its prototype images."""
    spec = json.loads(Path(path).read_text(encoding="utf-8"))
    if spec.get("format") != FORMAT:
        raise ValidationError(f"{path}: not a {FORMAT} file")
    model, prototypes = build_planted_model(
        spec["entities"], spec["embed_dim"], spec["height"], spec["width"], spec["seed"], spec["sensitivity"]
    )
    if verify and projection_digest(model) != spec["projection_sha256"]:
        raise ConstructionError(f"{path}: rebuilt projection does not match the stored digest")
    return model, prototypes
