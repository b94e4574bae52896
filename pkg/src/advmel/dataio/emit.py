"""Writing and re-reading adversarial datasets.

Layout under ``out_dir``::

    index.jsonl             one AdversarialRecord per line, append-only
    index_header.json       counts for the latest run
    <method>_<tier>/<id>.ppm
    <method>_<tier>/<id>.f64   lossless sidecar

``<method>_<tier>`` is e.g. ``pgd_n`` or ``cw_s``.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..attacks import AttackConfig, run_attack
from ..errors import ValidationError
from ..linking import LinkingInstance
from .imagecodec import atomic_write_bytes, read_image, write_image
from .manifest import canonical_line

log = logging.getLogger(__name__)

INDEX_NAME = "index.jsonl"
HEADER_NAME = "index_header.json"


@dataclass
class AdversarialRecord:
    source_id: str
    method: str
    tier: str
    adversarial_image_path: str
    success: bool
    final_loss: float
    linf_delta: float
    l2_delta: float
    config: dict

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.source_id, self.method, self.tier)

    def to_dict(self) -> dict:
        return asdict(self)


def load_index(out_dir: str | Path) -> list[AdversarialRecord]:
    path = Path(out_dir) / INDEX_NAME
    if not path.exists():
        return []
    return [AdversarialRecord(**json.loads(line)) for line in path.read_text("utf-8").splitlines() if line.strip()]


def _ensure_writable(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write-probe"
    probe.write_bytes(b"")
    probe.unlink()


def emit_adversarial_dataset(
    model,
    instances: Sequence[LinkingInstance],
    configs: Sequence[AttackConfig],
    out_dir: str | Path,
    jobs: int = 1,
) -> list[AdversarialRecord]:
    """Attack every (instance, config) pair not already in the index and write the results.

    Returns the full index (old and new records). Attacks that raise are
    logged, skipped, and counted in the header.
    """
    out_dir = Path(out_dir)
    _ensure_writable(out_dir)
    existing = load_index(out_dir)
    done = {r.key for r in existing}
    todo = [(inst, cfg) for inst in instances for cfg in configs if (inst.id, cfg.method, cfg.tier) not in done]

    def work(item):
        inst, cfg = item
        try:
            res = run_attack(model, inst.image, inst.candidates, inst.gold_index, cfg)
        except Exception as exc:  # noqa: BLE001 - per-record failures are reported, not fatal
            log.warning("attack %s on %s failed: %s", cfg.key, inst.id, exc)
            return None, {"id": inst.id, "config": cfg.key, "error": f"{type(exc).__name__}: {exc}"}
        rel = f"{cfg.key}/{inst.id}.ppm"
        write_image(out_dir / rel, res.adversarial_image, sidecar=True)
        rec = AdversarialRecord(
            source_id=inst.id,
            method=cfg.method,
            tier=cfg.tier,
            adversarial_image_path=rel,
            success=res.success,
            final_loss=res.final_loss,
            linf_delta=res.linf_delta,
            l2_delta=res.l2_delta,
            config=cfg.to_dict(),
        )
        return rec, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, todo))
    else:
        outcomes = [work(item) for item in todo]

    new = [rec for rec, _ in outcomes if rec is not None]
    errors = [err for _, err in outcomes if err is not None]
    if new:
        with (out_dir / INDEX_NAME).open("a", encoding="utf-8") as fh:
            for rec in new:
                fh.write(canonical_line(rec.to_dict()) + "\n")
    header = {
        "attempted": len(todo),
        "written": len(new),
        "skipped_existing": len(instances) * len(configs) - len(todo),
        "failed": len(errors),
        "errors": errors,
        "total_records": len(existing) + len(new),
    }
    atomic_write_bytes(out_dir / HEADER_NAME, (json.dumps(header, indent=2, sort_keys=True) + "\n").encode())
    return existing + new


def adversarial_selector(out_dir: str | Path, method: str, tier: str, records: list[AdversarialRecord] | None = None):
    """Selector for evaluate_dataset: maps an instance to its stored adversarial image.

    Instances with no stored image raise KeyError and are reported as exclusions.
    """
    out_dir = Path(out_dir)
    records = records if records is not None else load_index(out_dir)
    paths = {r.source_id: r.adversarial_image_path for r in records if r.method == method and r.tier == tier}

    def select(instance):
        return read_image(out_dir / paths[instance.id])

    return select


def variants(records: Sequence[AdversarialRecord]) -> list[tuple[str, str]]:
    order = {("PGD", "Normal"): 0, ("PGD", "Strong"): 1, ("APGD", "Normal"): 2, ("APGD", "Strong"): 3}
    order.update({("CW", "Normal"): 4, ("CW", "Strong"): 5})
    found = {(r.method, r.tier) for r in records}
    return sorted(found, key=lambda v: order.get(v, 99))


def check_record_constraints(record: AdversarialRecord, source: np.ndarray, image: np.ndarray) -> list[str]:
    """Constraint violations of one re-read adversarial image (empty list when clean)."""
    problems = []
    if image.min() < 0.0 or image.max() > 1.0:
        problems.append("pixel outside [0, 1]")
    eps = record.config.get("epsilon")
    if record.method in ("PGD", "APGD"):
        if eps is None:
            raise ValidationError(f"{record.source_id}: {record.method} record without epsilon")
        if np.max(np.abs(image - source)) > eps + 1e-12:
            problems.append(f"linf {np.max(np.abs(image - source))} exceeds epsilon {eps}")
    return problems
