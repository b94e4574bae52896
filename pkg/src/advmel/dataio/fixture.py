"""Seeded desk fixture: planted model, instances, retrieval corpus and certification."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..attacks import all_presets, preset_config, run_attack
from ..encoders import COLORS, DEFAULT_SENSITIVITY, SHAPES, DeskModel, build_planted_model, candidate_logits
from ..errors import ConstructionError
from ..linking import LinkingInstance, accuracy, link_i2t, link_it2t
from ..retlink import FixtureCorpus, StubVisionClient, run_retlink
from .imagecodec import write_image
from .manifest import ManifestRecord, save_manifest
from .modelio import save_model

CATEGORY = "shape"

# certified thresholds; acceptance tests assert against these
CLEAN_I2T_MIN = 0.95
NORMAL_DROP_MIN = 0.30
IT2T_GAIN_MIN = 0.10
RETLINK_GAIN_MIN = 0.10
RETLINK_CLEAN_MIN = 0.95
APGD_GE_PGD_MIN = 0.60
CW_NORMAL_SUCCESS_MIN = 0.90

_CONTEXT_TEMPLATES = (
    "the {color} {shape} called {name} is the main object in the picture",
    "{name} appears here as a {color} {shape} on a grey background",
    "this image shows {name}, a {color} {shape}",
    "a {shape} coloured {color} known as {name}",
)


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 7
    n_entities: int = 16
    n_candidates: int = 8
    embed_dim: int = 64
    height: int = 32
    width: int = 32
    n_instances: int = 200
    sensitivity: float = DEFAULT_SENSITIVITY

    def validate(self) -> None:
        for name in ("n_entities", "n_candidates", "embed_dim", "height", "width", "n_instances"):
            if getattr(self, name) <= 0:
                raise ConstructionError(f"{name} must be positive")
        if self.n_candidates < 2:
            raise ConstructionError("need at least two candidates per instance")
        if self.n_candidates > self.n_entities:
            raise ConstructionError(f"{self.n_candidates} candidates per instance but only {self.n_entities} entities")


@dataclass
class Fixture:
    spec: FixtureSpec
    model: DeskModel
    entities: list[str]
    prototypes: dict[str, np.ndarray]
    records: list[ManifestRecord]
    instances: list[LinkingInstance]
    corpus_lines: list[str]
    descriptor_map: dict[str, list[str]]
    certification: dict = field(default_factory=dict)

    def vision_client(self) -> StubVisionClient:
        return StubVisionClient(self.prototypes, self.descriptor_map)


def entity_names(n: int, seed: int) -> list[str]:
    combos = [(c, s) for c in COLORS for s in SHAPES]
    order = np.random.default_rng([seed, 1]).permutation(len(combos))
    names = []
    for i in range(n):
        c, s = combos[order[i % len(combos)]]
        names.append(f"{c}_{s}" if i < len(combos) else f"{c}_{s}_{i // len(combos)}")
    return names


def _parts(name: str) -> tuple[str, str]:
    color, shape = name.split("_")[:2]
    return color, shape


def entity_context(name: str, index: int) -> str:
    color, shape = _parts(name)
    return _CONTEXT_TEMPLATES[index % len(_CONTEXT_TEMPLATES)].format(name=name, color=color, shape=shape)


def corpus_sentence(name: str) -> str:
    color, shape = _parts(name)
    return f"{name} is a {color} {shape} {CATEGORY} drawn on a plain grey background."


def build_fixture(spec: FixtureSpec) -> Fixture:
    """Everything except certification; a pure function of ``spec``."""
    spec.validate()
    names = entity_names(spec.n_entities, spec.seed)
    model, protos = build_planted_model(names, spec.embed_dim, spec.height, spec.width, spec.seed, spec.sensitivity)
    prototypes = dict(zip(names, protos))
    rng = np.random.default_rng([spec.seed, 2])
    records, instances = [], []
    width = max(4, len(str(spec.n_instances - 1)))
    for i in range(spec.n_instances):
        gold = int(rng.integers(spec.n_entities))
        others = [k for k in range(spec.n_entities) if k != gold]
        distractors = rng.choice(others, size=spec.n_candidates - 1, replace=False)
        order = rng.permutation(spec.n_candidates)
        pool = [gold] + [int(d) for d in distractors]
        cands = [names[pool[j]] for j in order]
        gold_index = int(np.flatnonzero(order == 0)[0])
        jitter = rng.integers(-3, 4, size=protos[gold].shape)
        levels = np.clip(np.round(protos[gold] * 255.0) + jitter, 26, 229)
        image = levels / 255.0
        rid = f"fx-{i:0{width}d}"
        context = entity_context(names[gold], gold)
        records.append(ManifestRecord(rid, f"images/{rid}.ppm", context, cands, gold_index, names[gold]))
        instances.append(LinkingInstance(rid, image, context, cands, gold_index))
    corpus = [f"{n}\t{corpus_sentence(n)}" for n in names]
    descriptor_map = {n: n.lower().split() + [CATEGORY] for n in names}
    return Fixture(spec, model, names, prototypes, records, instances, corpus, descriptor_map)


def certify(fx: Fixture, corpus_path: Path) -> dict:
    """Measure clean, attacked, IT2T and RetLink accuracies and check the thresholds."""
    model, insts = fx.model, fx.instances
    clean_i2t = accuracy([link_i2t(model, i) for i in insts])
    clean_it2t = accuracy([link_it2t(model, i) for i in insts])
    attacked = {}
    per_config = {}
    for cfg in all_presets():
        results = [run_attack(model, i.image, i.candidates, i.gold_index, cfg) for i in insts]
        per_config[cfg.key] = results
        attacked[cfg.key] = accuracy([link_i2t(model, i, r.adversarial_image) for i, r in zip(insts, results)])

    cw_n = per_config[preset_config("CW", "N").key]
    adv_images = [r.adversarial_image for r in cw_n]
    it2t_cw_n = accuracy([link_it2t(model, i, img) for i, img in zip(insts, adv_images)])

    vision, kb = fx.vision_client(), FixtureCorpus(corpus_path)
    i2t_view = [LinkingInstance(i.id, i.image, "", i.candidates, i.gold_index) for i in insts]
    retlink_cw_n = accuracy([run_retlink(vision, kb, i, img).prediction for i, img in zip(i2t_view, adv_images)])
    retlink_it2t_cw_n = accuracy([run_retlink(vision, kb, i, img).prediction for i, img in zip(insts, adv_images)])
    retlink_clean = accuracy([run_retlink(vision, kb, i).prediction for i in i2t_view])

    pgd_n, apgd_n = per_config["pgd_n"], per_config["apgd_n"]
    apgd_ge_pgd = float(np.mean([a.final_loss >= p.final_loss for a, p in zip(apgd_n, pgd_n)]))
    cw_success = float(np.mean([r.success for r in cw_n]))

    margin_gain = []
    for inst, img in zip(insts, adv_images):
        plain = candidate_logits(model, img, inst.candidates)
        fused = candidate_logits(model, img, inst.candidates, inst.context)
        y = inst.gold_index
        margin_gain.append((fused[y] - np.delete(fused, y).max()) > (plain[y] - np.delete(plain, y).max()))

    checks = {
        "clean_i2t": clean_i2t >= CLEAN_I2T_MIN,
        "retlink_clean": retlink_clean >= RETLINK_CLEAN_MIN,
        "it2t_gain_cw_n": it2t_cw_n - attacked["cw_n"] >= IT2T_GAIN_MIN,
        "retlink_gain_cw_n": retlink_cw_n - attacked["cw_n"] >= RETLINK_GAIN_MIN,
        "apgd_ge_pgd": apgd_ge_pgd >= APGD_GE_PGD_MIN,
        "cw_normal_success": cw_success >= CW_NORMAL_SUCCESS_MIN,
    }
    for method in ("pgd", "apgd", "cw"):
        checks[f"{method}_strong_le_normal"] = attacked[f"{method}_s"] <= attacked[f"{method}_n"]
        checks[f"{method}_normal_drop"] = attacked[f"{method}_n"] <= clean_i2t - NORMAL_DROP_MIN
    return {
        "spec": asdict(fx.spec),
        "n": len(insts),
        "clean_i2t": clean_i2t,
        "clean_it2t": clean_it2t,
        "attacked_i2t": attacked,
        "it2t_cw_n": it2t_cw_n,
        "retlink_i2t_cw_n": retlink_cw_n,
        "retlink_it2t_cw_n": retlink_it2t_cw_n,
        "retlink_clean_i2t": retlink_clean,
        "apgd_ge_pgd_fraction": apgd_ge_pgd,
        "cw_normal_success": cw_success,
        "it2t_margin_gain_fraction_cw_n": float(np.mean(margin_gain)),
        "thresholds": {
            "clean_i2t_min": CLEAN_I2T_MIN,
            "normal_drop_min": NORMAL_DROP_MIN,
            "it2t_gain_min": IT2T_GAIN_MIN,
            "retlink_gain_min": RETLINK_GAIN_MIN,
            "retlink_clean_min": RETLINK_CLEAN_MIN,
            "apgd_ge_pgd_min": APGD_GE_PGD_MIN,
            "cw_normal_success_min": CW_NORMAL_SUCCESS_MIN,
        },
        "checks": checks,
        "certified": all(checks.values()),
    }


def write_fixture(fx: Fixture, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for rec, inst in zip(fx.records, fx.instances):
        write_image(out / rec.image_path, inst.image)
    paths = {
        "manifest": out / "manifest.jsonl",
        "model": out / "model.json",
        "corpus": out / "corpus.tsv",
        "descriptors": out / "descriptors.json",
    }
    save_manifest(paths["manifest"], fx.records)
    save_model(paths["model"], fx.model)
    paths["corpus"].write_text("".join(line + "\n" for line in fx.corpus_lines), encoding="utf-8")
    paths["descriptors"].write_text(json.dumps(fx.descriptor_map, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def generate_fixture(spec: FixtureSpec, out_dir: str | Path, run_certification: bool = True) -> Fixture:
    """Build the fixture, write it under ``out_dir`` and (optionally) certify it.

    The certification report lands in ``certification.json``.
    """
    fx = build_fixture(spec)
    paths = write_fixture(fx, out_dir)
    if run_certification:
        fx.certification = certify(fx, paths["corpus"])
        (Path(out_dir) / "certification.json").write_text(
            json.dumps(fx.certification, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return fx
