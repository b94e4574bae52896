"""I2T / IT2T linking protocols, MLLM clients and dataset evaluation."""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .encoders import Encoder, candidate_logits
from .errors import ValidationError

TASKS = ("I2T", "IT2T")
ATTACK_LABELS = ("RAW", "PGD", "APGD", "CW")
TIER_LABELS = ("P", "N", "S")

I2T_QUESTION = "Which candidate best describes the main object in this image? \n Answer with the index of the candidate."
IT2T_QUESTION = (
    "Please observe the image and understand the description. "
    "Which candidate best describes the main object in the image? \n Answer with the index of the candidate."
)


@dataclass
class LinkingInstance:
    id: str
    image: np.ndarray
    context: str
    candidates: list[str]
    gold_index: int

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise ValidationError(f"{self.id}: need at least two candidates")
        if any(not c for c in self.candidates):
            raise ValidationError(f"{self.id}: empty candidate string")
        if not 0 <= self.gold_index < len(self.candidates):
            raise ValidationError(f"{self.id}: gold_index {self.gold_index} out of range")


@dataclass
class Prediction:
    instance_id: str
    predicted_index: int | None
    gold_index: int
    logits: list[float] | None = None

    @property
    def correct(self) -> bool:
        return self.predicted_index is not None and self.predicted_index == self.gold_index

    def to_dict(self) -> dict:
        d = asdict(self)
        d["correct"] = self.correct
        return d


def _argmax_first(logits: np.ndarray) -> int:
    return int(np.argmax(logits))


def link_i2t(model: Encoder, instance: LinkingInstance, image: np.ndarray | None = None) -> Prediction:
    img = instance.image if image is None else image
    logits = candidate_logits(model, img, instance.candidates)
    return Prediction(instance.id, _argmax_first(logits), instance.gold_index, [float(v) for v in logits])


def link_it2t(model: Encoder, instance: LinkingInstance, image: np.ndarray | None = None) -> Prediction:
    if not instance.context or not instance.context.strip():
        raise ValidationError(f"{instance.id}: IT2T linking needs a non-empty context")
    img = instance.image if image is None else image
    logits = candidate_logits(model, img, instance.candidates, fused_text=instance.context)
    return Prediction(instance.id, _argmax_first(logits), instance.gold_index, [float(v) for v in logits])


def accuracy(predictions: Sequence[Prediction]) -> float:
    if not predictions:
        raise ValidationError("accuracy of an empty prediction list")
    return sum(1 for p in predictions if p.correct) / len(predictions)


# -- MLLM path ------------------------------------------------------------


def build_mllm_prompt(task: str, candidates: Sequence[str], context: str | None = None) -> str:
    if not candidates:
        raise ValidationError("candidate list is empty")
    listing = "\n".join(f"{i}: {c}" for i, c in enumerate(candidates))
    if task == "I2T":
        return f"{listing}\n{I2T_QUESTION}"
    if task == "IT2T":
        if not context:
            raise ValidationError("IT2T prompt needs a description")
        return f"{context}\n{listing}\n{IT2T_QUESTION}"
    raise ValidationError(f"unknown task {task!r}")


_INT_RE = re.compile(r"-?\d+")


def parse_mllm_answer(raw: str, n_candidates: int) -> int | None:
    """First integer in the answer if it is a valid candidate index, else None."""
    m = _INT_RE.search(raw or "")
    if m is None:
        return None
    value = int(m.group())
    return value if 0 <= value < n_candidates else None


def image_digest(image: np.ndarray | None) -> str:
    if image is None:
        return hashlib.sha256(b"").hexdigest()
    return hashlib.sha256(np.ascontiguousarray(image, dtype="<f8").tobytes()).hexdigest()


class MllmClient(Protocol):
    concurrent_safe: bool

    def answer(self, image: np.ndarray | None, prompt: str) -> str: ...


class StubMllmClient:
    """Deterministic stand-in: hashes (image digest, prompt) to a candidate index."""

    concurrent_safe = True

    def __init__(self, seed: int = 0):
        self.seed = seed

    def answer(self, image, prompt):
        n = max(1, len(re.findall(r"^\d+: ", prompt, flags=re.M)))
        h = hashlib.sha256(f"{self.seed}|{image_digest(image)}|{prompt}".encode()).digest()
        return str(int.from_bytes(h[:8], "little") % n)


def _fill(template, values: dict):
    if isinstance(template, str):
        for k, v in values.items():
            template = template.replace("{" + k + "}", v)
        return template
    if isinstance(template, dict):
        return {k: _fill(v, values) for k, v in template.items()}
    if isinstance(template, list):
        return [_fill(v, values) for v in template]
    return template


def extract_path(payload, path: str):
    """Follow a dotted path (``choices.0.message.content``) through JSON."""
    cur = payload
    for part in path.split(".") if path else []:
        if isinstance(cur, list):
            cur = cur[int(part)]
        else:
            cur = cur[part]
    return cur


DEFAULT_REQUEST_TEMPLATE = {"prompt": "{prompt}", "image_digest": "{image_digest}", "image": "{image_b64}"}


class HttpMllmClient:
    """Posts a JSON body built from a template; reads the answer at a dotted path.

    Template strings may contain ``{prompt}``, ``{image_digest}`` and
    ``{image_b64}`` (base64 of the little-endian float64 pixels).
    """

    concurrent_safe = True

    def __init__(
        self,
        endpoint: str,
        request_template: dict | None = None,
        response_path: str = "text",
        headers: dict | None = None,
        timeout: float = 60.0,
        session=None,
    ):
        import requests

        self.endpoint = endpoint
        self.request_template = request_template or DEFAULT_REQUEST_TEMPLATE
        self.response_path = response_path
        self.headers = headers or {}
        self.timeout = timeout
        self.session = session or requests.Session()

    def answer(self, image, prompt):
        import base64

        b64 = "" if image is None else base64.b64encode(np.ascontiguousarray(image, dtype="<f8").tobytes()).decode()
        body = _fill(self.request_template, {"prompt": prompt, "image_digest": image_digest(image), "image_b64": b64})
        resp = self.session.post(self.endpoint, json=body, headers=self.headers, timeout=self.timeout)
        resp.raise_for_status()
        return str(extract_path(resp.json(), self.response_path))


def link_mllm(client: MllmClient, instance: LinkingInstance, task: str, image: np.ndarray | None = None) -> Prediction:
    img = instance.image if image is None else image
    prompt = build_mllm_prompt(task, instance.candidates, instance.context if task == "IT2T" else None)
    raw = client.answer(img, prompt)
    return Prediction(instance.id, parse_mllm_answer(raw, len(instance.candidates)), instance.gold_index)


# -- dataset evaluation ---------------------------------------------------


@dataclass
class EvalReport:
    task: str
    attack: str
    tier: str
    n: int
    accuracy: float
    records: list[dict] = field(default_factory=list)
    exclusions: list[dict] = field(default_factory=list)
    dataset: str = "fixture"
    model: str = "desk"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


ImageSelector = Callable[[LinkingInstance], "np.ndarray | None"]


def raw_selector(instance: LinkingInstance) -> np.ndarray:
    return instance.image


def evaluate_dataset(
    linker,
    instances: Sequence[LinkingInstance],
    task: str,
    selector: ImageSelector = raw_selector,
    attack: str = "RAW",
    tier: str = "P",
    dataset: str = "fixture",
    model_name: str = "desk",
    jobs: int = 1,
) -> EvalReport:
    """Link every instance on the image the selector returns and score with accuracy.

    ``linker`` is an encoder (cosine protocol) or an MLLM client (anything
    with ``answer``). A selector returning None, or raising KeyError, marks
    the instance as excluded; it does not count towards ``n``.
    """
    if task not in TASKS:
        raise ValidationError(f"unknown task {task!r}")
    is_mllm = hasattr(linker, "answer")

    def one(inst):
        try:
            img = selector(inst)
        except KeyError:
            img = None
        if img is None:
            return None
        if is_mllm:
            return link_mllm(linker, inst, task, img)
        if task == "I2T":
            return link_i2t(linker, inst, img)
        return link_it2t(linker, inst, img)

    if jobs > 1 and (not is_mllm or getattr(linker, "concurrent_safe", False)):
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, instances))
    else:
        outcomes = [one(inst) for inst in instances]

    preds, exclusions = [], []
    for inst, pred in zip(instances, outcomes):
        if pred is None:
            exclusions.append({"id": inst.id, "reason": "no image for this attack variant"})
        else:
            preds.append(pred)
    acc = accuracy(preds) if preds else 0.0
    return EvalReport(
        task=task,
        attack=attack,
        tier=tier,
        n=len(preds),
        accuracy=acc,
        records=[p.to_dict() for p in preds],
        exclusions=exclusions,
        dataset=dataset,
        model=model_name,
    )


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, separators=(",", ":"))
