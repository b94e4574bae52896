"""Newline-delimited JSON manifests of linking instances."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from ..errors import ManifestError
from ..linking import LinkingInstance
from .imagecodec import read_image

FIELDS = ("id", "image_path", "context", "candidates", "gold_index", "entity_id")


@dataclass
class ManifestRecord:
    id: str
    image_path: str
    context: str
    candidates: list[str]
    gold_index: int
    entity_id: str

    def to_dict(self) -> dict:
        return asdict(self)


def canonical_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _check_record(obj, lineno: int) -> list[str]:
    where = f"line {lineno}"
    if not isinstance(obj, dict):
        return [f"{where}: record is not a JSON object"]
    rid = obj.get("id")
    if isinstance(rid, str):
        where = f"line {lineno} (id {rid!r})"
    issues = []
    missing = [f for f in FIELDS if f not in obj]
    if missing:
        issues.append(f"{where}: missing field(s) {', '.join(missing)}")
    extra = sorted(set(obj) - set(FIELDS))
    if extra:
        issues.append(f"{where}: unknown field(s) {', '.join(extra)}")
    if missing:
        return issues
    if not isinstance(rid, str) or not rid:
        issues.append(f"{where}: id must be a non-empty string")
    for key in ("image_path", "context", "entity_id"):
        if not isinstance(obj[key], str):
            issues.append(f"{where}: {key} must be a string")
    if isinstance(obj["image_path"], str):
        if not obj["image_path"]:
            issues.append(f"{where}: image_path is empty")
        elif Path(obj["image_path"]).is_absolute():
            issues.append(f"{where}: image_path must be relative to the manifest directory")
    cands = obj["candidates"]
    if not isinstance(cands, list) or not all(isinstance(c, str) for c in cands):
        issues.append(f"{where}: candidates must be a list of strings")
    else:
        if len(cands) < 2:
            issues.append(f"{where}: need at least two candidates, got {len(cands)}")
        if any(not c for c in cands):
            issues.append(f"{where}: empty candidate string")
    gold = obj["gold_index"]
    if not isinstance(gold, int) or isinstance(gold, bool):
        issues.append(f"{where}: gold_index must be an integer")
    elif isinstance(cands, list) and not 0 <= gold < len(cands):
        issues.append(f"{where}: gold_index {gold} out of range for {len(cands)} candidates")
    return issues


def load_manifest(path: str | Path, check_files: bool = True) -> list[ManifestRecord]:
    """Parse and validate a manifest; any problem rejects the whole file."""
    path = Path(path)
    if not path.exists():
        raise ManifestError([f"manifest file {path} does not exist"])
    issues: list[str] = []
    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            issues.append(f"line {lineno}: invalid JSON ({exc.msg})")
            continue
        problems = _check_record(obj, lineno)
        if problems:
            issues.extend(problems)
            continue
        if obj["id"] in seen:
            issues.append(f"duplicate id {obj['id']!r} on lines {seen[obj['id']]} and {lineno}")
            continue
        seen[obj["id"]] = lineno
        if check_files and not (path.parent / obj["image_path"]).exists():
            issues.append(f"line {lineno} (id {obj['id']!r}): image file {obj['image_path']} not found")
        records.append(ManifestRecord(**{f: obj[f] for f in FIELDS}))
    if issues:
        raise ManifestError(issues)
    return records


def save_manifest(path: str | Path, records: list[ManifestRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(canonical_line(r.to_dict()) + "\n" for r in records)
    path.write_text(text, encoding="utf-8")


def load_instances(path: str | Path, records: list[ManifestRecord] | None = None) -> list[LinkingInstance]:
    path = Path(path)
    records = records if records is not None else load_manifest(path)
    return [
        LinkingInstance(r.id, read_image(path.parent / r.image_path), r.context, list(r.candidates), r.gold_index)
        for r in records
    ]
