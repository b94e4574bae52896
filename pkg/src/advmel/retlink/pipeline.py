"""The two-stage RetLink pipeline: image descriptors, then evidence-grounded reranking."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..errors import RetriableError, ValidationError
from ..linking import LinkingInstance, MllmClient, Prediction, parse_mllm_answer
from .sources import EvidenceCache, KnowledgeBase, RetrievedEvidence, normalize_text, normalize_tokens

NO_EVIDENCE = "no external evidence"
DEFAULT_TOP_DESCRIPTORS = 2
DEFAULT_PER_QUERY_LIMIT = 3


@dataclass(frozen=True)
class Descriptor:
    surface: str
    confidence: float


class VisionClient(Protocol):
    def describe(self, image: np.ndarray) -> list[Descriptor]: ...


class StubVisionClient:
    """Nearest-prototype lookup standing in for a vision-language model.

    The image is matched to the closest prototype in pixel L2 distance and
    that entity's descriptor words are returned. Confidence decays with the
    distance, so the category word always ranks after the entity's own tokens.
    """

    def __init__(self, prototypes: dict[str, np.ndarray], descriptor_map: dict[str, list[str]]):
        self.names = list(prototypes)
        self.stack = np.stack([np.asarray(prototypes[n], dtype=np.float64).reshape(-1) for n in self.names])
        self.descriptor_map = descriptor_map

    def describe(self, image):
        flat = np.asarray(image, dtype=np.float64).reshape(-1)
        if flat.shape[0] != self.stack.shape[1]:
            return []
        dists = np.linalg.norm(self.stack - flat, axis=1)
        k = int(np.argmin(dists))
        rms = float(dists[k]) / np.sqrt(flat.shape[0])
        base = 1.0 / (1.0 + 10.0 * rms)
        words = self.descriptor_map.get(self.names[k], [])
        n = len(words)
        return [Descriptor(w, round(base * (n - i) / n, 6)) for i, w in enumerate(words)]


def extract_descriptors(client: VisionClient, image: np.ndarray, attempts: int = 3) -> list[Descriptor]:
    """Ask the vision client for descriptors; transport errors are retried."""
    last = None
    for _ in range(attempts):
        try:
            found = client.describe(image)
        except (TimeoutError, ConnectionError, OSError) as exc:
            last = exc
            continue
        cleaned = [Descriptor(d.surface.lower().strip(), float(d.confidence)) for d in found if d.surface.strip()]
        return sorted(cleaned, key=lambda d: -d.confidence)
    raise RetriableError(f"vision client failed: {last}", attempts)


def build_queries(
    descriptors: Sequence[Descriptor], candidates: Sequence[str], top_j: int = DEFAULT_TOP_DESCRIPTORS
) -> list[str]:
    """Each candidate alone, then each candidate with each of the top-j descriptors."""
    if not descriptors and not candidates:
        raise ValidationError("need descriptors or candidates to build queries")
    top = [d.surface for d in descriptors[:top_j]]
    queries = list(candidates) if candidates else list(top)
    queries += [f"{c} {d}" for c in candidates for d in top]
    return list(dict.fromkeys(queries))


@dataclass
class RetrievalOutcome:
    evidence: list[RetrievedEvidence]
    errors: list[dict] = field(default_factory=list)


def retrieve_evidence(
    kb: KnowledgeBase,
    queries: Sequence[str],
    per_query_limit: int = DEFAULT_PER_QUERY_LIMIT,
    cache: EvidenceCache | None = None,
    jobs: int = 1,
) -> RetrievalOutcome:
    """Collect up to ``per_query_limit`` snippets per query; failures become error entries."""
    if per_query_limit < 1:
        raise ValidationError("per_query_limit must be at least 1")

    def one(query):
        if cache is not None:
            hit = cache.get(kb.name, query)
            if hit is not None:
                return hit, None
        try:
            found = kb.search(query, per_query_limit)[:per_query_limit]
        except Exception as exc:  # noqa: BLE001 - every source failure degrades to an error entry
            return [], {"query": query, "source": kb.name, "error": f"{type(exc).__name__}: {exc}"}
        found = [e for e in found if e.snippet]
        if cache is not None:
            cache.put(kb.name, query, found, cache.clock())
        return found, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, queries))
    else:
        results = [one(q) for q in queries]
    evidence, errors = [], []
    for found, err in results:
        evidence.extend(found)
        if err:
            errors.append(err)
    return RetrievalOutcome(evidence, errors)


@dataclass
class CandidateDescription:
    candidate: str
    sentence: str
    evidence: list[dict] = field(default_factory=list)


def _contains(haystack: list[str], needle: list[str]) -> bool:
    n = len(needle)
    return n > 0 and any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def compose_candidate_descriptions(
    candidates: Sequence[str], evidence: Sequence[RetrievedEvidence]
) -> list[CandidateDescription]:
    """Pick, per candidate, the best-ranked snippet mentioning it (title or text)."""
    if not candidates:
        raise ValidationError("no candidates to describe")
    ordered = sorted(enumerate(evidence), key=lambda p: (p[1].rank, p[0]))
    out = []
    for cand in candidates:
        needle = normalize_tokens(cand)
        match = next(
            (
                e
                for _, e in ordered
                if _contains(normalize_tokens(e.title), needle) or _contains(normalize_tokens(e.snippet), needle)
            ),
            None,
        )
        if match is None:
            out.append(CandidateDescription(cand, NO_EVIDENCE))
        else:
            ref = {"source": match.source, "query": match.query, "rank": match.rank, "title": match.title}
            out.append(CandidateDescription(cand, match.snippet, [ref]))
    return out


def lexical_scores(descriptors: Sequence[Descriptor], context: str, descriptions: Sequence[CandidateDescription]):
    query = set()
    for d in descriptors:
        query.update(normalize_tokens(d.surface))
    query.update(normalize_tokens(context or ""))
    return [len(query & set(normalize_tokens(desc.sentence))) for desc in descriptions]


def _lexical_ranking(scores: list[int]) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


@dataclass
class RerankResult:
    ranking: list[int]
    scores: list[int]
    used_llm: bool = False
    fallback: bool = False
    raw_answer: str | None = None


class LexicalScorer:
    """Token overlap between (descriptors + context) and each candidate's description."""

    def rerank(self, descriptors, context, descriptions) -> RerankResult:
        scores = lexical_scores(descriptors, context, descriptions)
        return RerankResult(_lexical_ranking(scores), scores)


def build_rerank_prompt(descriptors, context, descriptions) -> str:
    lines = []
    if descriptors:
        lines.append("Visual cues: " + ", ".join(d.surface for d in descriptors))
    if context:
        lines.append("Context: " + context)
    lines.append("Candidates:")
    lines += [f"{i}: {d.candidate} - {d.sentence}" for i, d in enumerate(descriptions)]
    lines.append("Which candidate does the context refer to? Answer with the index of the candidate.")
    return "\n".join(lines)


class LlmScorer:
    """Lets an LLM pick the top candidate; the rest follow the lexical order.

    Reuses the MLLM transport with no image attached. An unparseable answer
    falls back to the lexical ranking and is flagged.
    """

    def __init__(self, client: MllmClient):
        self.client = client

    def rerank(self, descriptors, context, descriptions) -> RerankResult:
        scores = lexical_scores(descriptors, context, descriptions)
        lexical = _lexical_ranking(scores)
        try:
            raw = self.client.answer(None, build_rerank_prompt(descriptors, context, descriptions))
        except Exception as exc:  # noqa: BLE001
            return RerankResult(lexical, scores, used_llm=True, fallback=True, raw_answer=f"error: {exc}")
        choice = parse_mllm_answer(raw, len(descriptions))
        if choice is None:
            return RerankResult(lexical, scores, used_llm=True, fallback=True, raw_answer=raw)
        return RerankResult([choice] + [i for i in lexical if i != choice], scores, used_llm=True, raw_answer=raw)


def rerank_candidates(scorer, descriptors, context, descriptions) -> RerankResult:
    return scorer.rerank(descriptors, context, descriptions)


@dataclass
class RetlinkOutcome:
    prediction: Prediction
    trace: dict

    def trace_json(self) -> str:
        return json.dumps(self.trace, sort_keys=True, separators=(",", ":"))


def run_retlink(
    vision: VisionClient | None,
    kb: KnowledgeBase | None,
    instance: LinkingInstance,
    adversarial_image: np.ndarray | None = None,
    scorer=None,
    cache: EvidenceCache | None = None,
    top_j: int = DEFAULT_TOP_DESCRIPTORS,
    per_query_limit: int = DEFAULT_PER_QUERY_LIMIT,
    jobs: int = 1,
) -> RetlinkOutcome:
    """Run descriptors -> queries -> retrieval -> descriptions -> rerank for one instance.

    Stage failures are recorded in ``trace["errors"]`` and the pipeline keeps
    going with whatever it has, down to a context-only lexical rerank.
    """
    scorer = scorer or LexicalScorer()
    image = instance.image if adversarial_image is None else adversarial_image
    trace: dict = {"instance": instance.id, "candidates": list(instance.candidates), "errors": []}

    descriptors: list[Descriptor] = []
    if vision is not None:
        try:
            descriptors = extract_descriptors(vision, image)
        except Exception as exc:  # noqa: BLE001
            trace["errors"].append({"stage": "descriptors", "error": f"{type(exc).__name__}: {exc}"})
    trace["descriptors"] = [asdict(d) for d in descriptors]

    try:
        queries = build_queries(descriptors, instance.candidates, top_j)
    except ValidationError as exc:
        queries = []
        trace["errors"].append({"stage": "queries", "error": str(exc)})
    trace["queries"] = queries

    evidence: list[RetrievedEvidence] = []
    if kb is not None and queries:
        outcome = retrieve_evidence(kb, queries, per_query_limit, cache, jobs)
        evidence = outcome.evidence
        trace["errors"].extend({"stage": "retrieval", **e} for e in outcome.errors)
    trace["evidence"] = [e.to_dict() for e in evidence]

    descriptions = compose_candidate_descriptions(instance.candidates, evidence)
    trace["descriptions"] = [asdict(d) for d in descriptions]

    try:
        result = rerank_candidates(scorer, descriptors, instance.context, descriptions)
    except Exception as exc:  # noqa: BLE001
        trace["errors"].append({"stage": "rerank", "error": f"{type(exc).__name__}: {exc}"})
        result = LexicalScorer().rerank(descriptors, instance.context, descriptions)
        result.fallback = True
    trace["rerank"] = asdict(result)

    pred = Prediction(instance.id, result.ranking[0], instance.gold_index)
    trace["prediction"] = pred.to_dict()
    return RetlinkOutcome(pred, trace)
