from .pipeline import (
    NO_EVIDENCE,
    CandidateDescription,
    Descriptor,
    LexicalScorer,
    LlmScorer,
    RerankResult,
    RetlinkOutcome,
    StubVisionClient,
    build_queries,
    compose_candidate_descriptions,
    extract_descriptors,
    rerank_candidates,
    retrieve_evidence,
    run_retlink,
)
from .sources import (
    EvidenceCache,
    FixtureCorpus,
    RateLimiter,
    RetrievedEvidence,
    WikidataSearch,
    WikipediaSearch,
    normalize_text,
    normalize_tokens,
)
