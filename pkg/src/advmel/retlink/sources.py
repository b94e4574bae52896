"""Evidence sources for RetLink: fixture corpus, Wikipedia, Wikidata, and the cache."""

from __future__ import annotations

import html
import json
import re
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol
from urllib.parse import urlparse

from ..errors import RetriableError

_TAG_RE = re.compile(r"<[^>]+>")
_WORD_RE = re.compile(r"\w+")


def normalize_tokens(text: str) -> list[str]:
    """Lowercase word tokens; punctuation other than ``_`` separates words."""
    return _WORD_RE.findall(text.lower())


def normalize_text(text: str) -> str:
    return " ".join(normalize_tokens(text))


@dataclass(frozen=True)
class RetrievedEvidence:
    source: str
    query: str
    title: str
    snippet: str
    rank: int
    fetched_at: float

    def to_dict(self) -> dict:
        return asdict(self)


class KnowledgeBase(Protocol):
    name: str

    def search(self, query: str, limit: int) -> list[RetrievedEvidence]: ...


class FixtureCorpus:
    """Offline source over a ``entity<TAB>sentence`` corpus file.

    Records are ranked by how many query tokens hit the entity name, then by
    overall token overlap, then by file order. Fetch time is pinned to 0 so
    traces stay byte-stable.
    """

    name = "fixture"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records: list[tuple[str, str]] = []
        for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{self.path}:{lineno}: expected entity<TAB>sentence")
            entity, sentence = line.split("\t", 1)
            self.records.append((entity, sentence))
        self.calls = 0

    def search(self, query: str, limit: int) -> list[RetrievedEvidence]:
        self.calls += 1
        q = set(normalize_tokens(query))
        scored = []
        for order, (entity, sentence) in enumerate(self.records):
            name_hits = len(q & set(normalize_tokens(entity)))
            overlap = len(q & (set(normalize_tokens(entity)) | set(normalize_tokens(sentence))))
            if overlap:
                scored.append((-name_hits, -overlap, order, entity, sentence))
        scored.sort()
        return [
            RetrievedEvidence(self.name, query, entity, sentence, rank, 0.0)
            for rank, (_, _, _, entity, sentence) in enumerate(scored[:limit], 1)
        ]


class RateLimiter:
    """Minimum spacing between requests to the same host."""

    def __init__(self, per_second: float = 2.0, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / per_second if per_second > 0 else 0.0
        self.clock = clock
        self.sleep = sleep
        self._next: dict[str, float] = {}
        self._lock = threading.Lock()

    def wait(self, host: str) -> None:
        with self._lock:
            now = self.clock()
            slot = max(now, self._next.get(host, now))
            self._next[host] = slot + self.interval
        if slot > now:
            self.sleep(slot - now)


class _HttpSource:
    name = "http"

    def __init__(self, base_url, session=None, rate_limiter=None, retries=3, backoff=0.5, timeout=20.0, clock=time.time):
        import requests

        self.base_url = base_url
        self.session = session or requests.Session()
        self.rate_limiter = rate_limiter or RateLimiter()
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.clock = clock
        self.calls = 0

    def _get(self, params: dict) -> dict:
        import requests

        host = urlparse(self.base_url).netloc
        last = None
        for attempt in range(1, self.retries + 1):
            self.rate_limiter.wait(host)
            self.calls += 1
            try:
                resp = self.session.get(self.base_url, params=params, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                if attempt < self.retries and self.backoff:
                    time.sleep(self.backoff * attempt)
        raise RetriableError(f"{self.name} request failed: {last}", self.retries)


class WikipediaSearch(_HttpSource):
    """MediaWiki ``list=search``; snippets arrive as HTML fragments."""

    name = "wikipedia"

    def __init__(self, base_url="https://en.wikipedia.org/w/api.php", **kw):
        super().__init__(base_url, **kw)

    def search(self, query, limit):
        data = self._get({"action": "query", "list": "search", "srsearch": query, "format": "json", "srlimit": limit})
        now = self.clock()
        out = []
        for rank, hit in enumerate(data.get("query", {}).get("search", [])[:limit], 1):
            snippet = html.unescape(_TAG_RE.sub("", hit.get("snippet", ""))).strip()
            if snippet:
                out.append(RetrievedEvidence(self.name, query, hit.get("title", ""), snippet, len(out) + 1, now))
        return out


class WikidataSearch(_HttpSource):
    name = "wikidata"

    def __init__(self, base_url="https://www.wikidata.org/w/api.php", **kw):
        super().__init__(base_url, **kw)

    def search(self, query, limit):
        data = self._get(
            {"action": "wbsearchentities", "search": query, "language": "en", "format": "json", "limit": limit}
        )
        now = self.clock()
        out = []
        for hit in data.get("search", [])[:limit]:
            label = hit.get("label", "")
            desc = hit.get("description", "")
            if desc:
                out.append(RetrievedEvidence(self.name, query, label, f"{label}: {desc}", len(out) + 1, now))
        return out


class EvidenceCache:
    """Append-only JSON-lines cache keyed by (source, normalised query).

    Entries older than ``ttl`` seconds (by their fetch time) are ignored on
    lookup; the latest line for a key wins.
    """

    def __init__(self, path: str | Path | None = None, ttl: float | None = None, clock=time.time):
        self.path = Path(path) if path else None
        self.ttl = ttl
        self.clock = clock
        self._entries: dict[tuple[str, str], dict] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._entries[(rec["source"], rec["query"])] = rec

    @staticmethod
    def key(source: str, query: str) -> tuple[str, str]:
        return source, normalize_text(query)

    def get(self, source: str, query: str) -> list[RetrievedEvidence] | None:
        with self._lock:
            rec = self._entries.get(self.key(source, query))
            if rec is None or (self.ttl is not None and self.clock() - rec["fetched_at"] > self.ttl):
                self.misses += 1
                return None
            self.hits += 1
        return [RetrievedEvidence(**e) for e in rec["evidence"]]

    def put(self, source: str, query: str, evidence: list[RetrievedEvidence], fetched_at: float) -> None:
        src, q = self.key(source, query)
        rec = {"source": src, "query": q, "fetched_at": fetched_at, "evidence": [e.to_dict() for e in evidence]}
        with self._lock:
            self._entries[(src, q)] = rec
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
