"""Command-line entry point: ``advmel {fixture,attack,eval,retlink,report}``.

Settings resolve as flags > ``--config`` JSON file > defaults. Every command
writes the resolved settings to ``run_config.json`` in its output directory.
Exit status: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .attacks import preset_config
from .errors import ConstructionError, ParseError, ValidationError

log = logging.getLogger("advmel")

COMMANDS = ("fixture", "attack", "eval", "retlink", "report")

ENV_WIKIPEDIA_URL = "ADVMEL_WIKIPEDIA_URL"
ENV_WIKIDATA_URL = "ADVMEL_WIKIDATA_URL"
ENV_MLLM_ENDPOINT = "ADVMEL_MLLM_ENDPOINT"
ENV_MLLM_API_KEY = "ADVMEL_MLLM_API_KEY"


@dataclass
class RunConfig:
    command: str = ""
    out: str | None = None
    manifest: str | None = None
    model: str | None = None
    jobs: int = 1
    # fixture
    seed: int = 7
    entities: int = 16
    candidates: int = 8
    dim: int = 64
    height: int = 32
    width: int = 32
    instances: int = 200
    sensitivity: float | None = None
    certify: bool = True
    # attack
    methods: str = "pgd,apgd,cw"
    tiers: str = "n,s"
    # eval / retlink
    adv: str | None = None
    tasks: str = "i2t,it2t"
    dataset_name: str = "fixture"
    model_name: str = "desk"
    mllm: str = "none"
    mllm_response_path: str = "text"
    mllm_request_template: dict | None = None
    kb: str = "fixture"
    corpus: str | None = None
    descriptors: str | None = None
    cache: str | None = None
    cache_ttl: float | None = None
    rate: float = 2.0
    scorer: str = "lexical"
    top_j: int = 2
    per_query_limit: int = 3
    # report
    inputs: list | None = None
    format: str = "text"

    @classmethod
    def resolve(cls, command: str, flags: dict, config_path: str | None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        merged: dict = {}
        if config_path:
            try:
                file_cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read config file {config_path}: {exc}") from exc
            if not isinstance(file_cfg, dict):
                raise ValidationError("config file must hold a JSON object")
            unknown = sorted(set(file_cfg) - known)
            if unknown:
                raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
            merged.update(file_cfg)
        merged.update(flags)
        merged["command"] = command
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if self.jobs < 1:
            raise ValidationError("--jobs must be at least 1")
        needs = {
            "fixture": ["out"],
            "attack": ["manifest", "out"],
            "eval": ["manifest", "out"],
            "retlink": ["manifest", "out"],
            "report": ["inputs"],
        }[self.command]
        missing = [n for n in needs if not getattr(self, n)]
        if missing:
            raise ValidationError(f"{self.command}: missing required setting(s): {', '.join('--' + m for m in missing)}")
        for task in self.task_list():
            if task not in ("I2T", "IT2T"):
                raise ValidationError(f"unknown task {task!r}")
        for m in self.method_list():
            if m.lower() not in ("pgd", "apgd", "cw"):
                raise ValidationError(f"unknown attack method {m!r}")
        for t in self.tier_list():
            if t.lower() not in ("n", "s", "normal", "strong"):
                raise ValidationError(f"unknown tier {t!r}")
        if self.mllm not in ("none", "stub", "http"):
            raise ValidationError("--mllm must be none, stub or http")
        if self.kb not in ("fixture", "wikipedia", "wikidata"):
            raise ValidationError("--kb must be fixture, wikipedia or wikidata")
        if self.scorer not in ("lexical", "llm-stub", "llm-http"):
            raise ValidationError("--scorer must be lexical, llm-stub or llm-http")
        if self.format not in ("text", "csv", "json"):
            raise ValidationError("--format must be text, csv or json")

    def task_list(self) -> list[str]:
        return [t.strip().upper() for t in self.tasks.split(",") if t.strip()]

    def method_list(self) -> list[str]:
        return [m.strip() for m in self.methods.split(",") if m.strip()]

    def tier_list(self) -> list[str]:
        return [t.strip() for t in self.tiers.split(",") if t.strip()]

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_config.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="advmel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, manifest=True):
        p.add_argument("--config", default=None, help="JSON file with RunConfig keys")
        p.add_argument("--out", default=S)
        p.add_argument("--jobs", type=int, default=S)
        if manifest:
            p.add_argument("--manifest", default=S)
            p.add_argument("--model", default=S, help="model.json (default: next to the manifest)")

    p = sub.add_parser("fixture", help="generate and certify the desk fixture")
    common(p, manifest=False)
    for name, typ in (("seed", int), ("entities", int), ("candidates", int), ("dim", int), ("height", int),
                      ("width", int), ("instances", int), ("sensitivity", float)):
        p.add_argument(f"--{name}", type=typ, default=S)
    p.add_argument("--no-certify", dest="certify", action="store_false", default=S)

    p = sub.add_parser("attack", help="emit an adversarial dataset")
    common(p)
    p.add_argument("--methods", default=S, help="comma list of pgd,apgd,cw")
    p.add_argument("--tiers", default=S, help="comma list of n,s")

    for name, help_text in (("eval", "evaluate I2T/IT2T linking"), ("retlink", "evaluate the RetLink pipeline")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--adv", default=S, help="adversarial dataset directory")
        p.add_argument("--tasks", default=S, help="comma list of i2t,it2t")
        p.add_argument("--dataset-name", dest="dataset_name", default=S)
        p.add_argument("--model-name", dest="model_name", default=S)
        if name == "eval":
            p.add_argument("--mllm", default=S, choices=("none", "stub", "http"))
            p.add_argument("--mllm-response-path", dest="mllm_response_path", default=S)
        else:
            p.add_argument("--kb", default=S, choices=("fixture", "wikipedia", "wikidata"))
            p.add_argument("--corpus", default=S)
            p.add_argument("--descriptors", default=S)
            p.add_argument("--cache", default=S)
            p.add_argument("--cache-ttl", dest="cache_ttl", type=float, default=S)
            p.add_argument("--rate", type=float, default=S, help="requests per second per host")
            p.add_argument("--scorer", default=S, choices=("lexical", "llm-stub", "llm-http"))
            p.add_argument("--top-j", dest="top_j", type=int, default=S)
            p.add_argument("--per-query-limit", dest="per_query_limit", type=int, default=S)

    p = sub.add_parser("report", help="render evaluation reports as a table")
    p.add_argument("--config", default=None)
    p.add_argument("--inputs", nargs="+", default=S)
    p.add_argument("--format", default=S, choices=("text", "csv", "json"))
    p.add_argument("--out", default=S, help="output file (default: stdout)")
    return parser


# -- commands -------------------------------------------------------------


def _model_path(cfg: RunConfig) -> Path:
    return Path(cfg.model) if cfg.model else Path(cfg.manifest).parent / "model.json"


def _load_model_and_instances(cfg: RunConfig):
    from .dataio import load_instances, load_manifest, load_model

    records = load_manifest(cfg.manifest)
    path = _model_path(cfg)
    if not path.exists():
        raise ValidationError(f"model file {path} not found (pass --model)")
    model, prototypes = load_model(path)
    return model, prototypes, load_instances(cfg.manifest, records)


def cmd_fixture(cfg: RunConfig) -> None:
    from .dataio import FixtureSpec, generate_fixture
    from .encoders import DEFAULT_SENSITIVITY

    spec = FixtureSpec(
        seed=cfg.seed,
        n_entities=cfg.entities,
        n_candidates=cfg.candidates,
        embed_dim=cfg.dim,
        height=cfg.height,
        width=cfg.width,
        n_instances=cfg.instances,
        sensitivity=DEFAULT_SENSITIVITY if cfg.sensitivity is None else cfg.sensitivity,
    )
    fx = generate_fixture(spec, cfg.out, run_certification=cfg.certify)
    if cfg.certify:
        status = "certified" if fx.certification["certified"] else "NOT certified"
        print(f"fixture written to {cfg.out} ({status})")
    else:
        print(f"fixture written to {cfg.out}")


def cmd_attack(cfg: RunConfig) -> None:
    from .dataio import emit_adversarial_dataset

    configs = [preset_config(m, t) for m in cfg.method_list() for t in cfg.tier_list()]
    model, _, instances = _load_model_and_instances(cfg)
    records = emit_adversarial_dataset(model, instances, configs, cfg.out, jobs=cfg.jobs)
    print(f"{len(records)} adversarial records in {cfg.out}")


def _write_reports(path: Path, reports) -> None:
    doc = {"reports": [r.to_dict() for r in reports]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_eval(cfg: RunConfig) -> None:
    from .dataio import adversarial_selector, load_index
    from .dataio.emit import variants
    from .linking import HttpMllmClient, StubMllmClient, evaluate_dataset, raw_selector
    from .report import render_report

    model, _, instances = _load_model_and_instances(cfg)
    index = load_index(cfg.adv) if cfg.adv else []
    linkers = [(cfg.model_name, model)]
    if cfg.mllm == "stub":
        linkers.append(("stub-mllm", StubMllmClient(cfg.seed)))
    elif cfg.mllm == "http":
        endpoint = os.environ.get(ENV_MLLM_ENDPOINT)
        if not endpoint:
            raise ValidationError(f"--mllm http needs {ENV_MLLM_ENDPOINT} to be set")
        key = os.environ.get(ENV_MLLM_API_KEY)
        headers = {"Authorization": f"Bearer {key}"} if key else None
        linkers.append(("http-mllm", HttpMllmClient(endpoint, cfg.mllm_request_template, cfg.mllm_response_path, headers)))

    reports = []
    for name, linker in linkers:
        for task in cfg.task_list():
            reports.append(evaluate_dataset(linker, instances, task, raw_selector, "RAW", "P", cfg.dataset_name, name, cfg.jobs))
            for method, tier in variants(index):
                sel = adversarial_selector(cfg.adv, method, tier, index)
                reports.append(
                    evaluate_dataset(linker, instances, task, sel, method, tier[0], cfg.dataset_name, name, cfg.jobs)
                )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_reports(out / "eval_reports.json", reports)
    sys.stdout.write(render_report(reports).decode())


def _knowledge_base(cfg: RunConfig):
    from .retlink import FixtureCorpus, RateLimiter, WikidataSearch, WikipediaSearch

    if cfg.kb == "fixture":
        corpus = Path(cfg.corpus) if cfg.corpus else Path(cfg.manifest).parent / "corpus.tsv"
        return FixtureCorpus(corpus)
    limiter = RateLimiter(cfg.rate)
    if cfg.kb == "wikipedia":
        url = os.environ.get(ENV_WIKIPEDIA_URL, "https://en.wikipedia.org/w/api.php")
        return WikipediaSearch(url, rate_limiter=limiter)
    url = os.environ.get(ENV_WIKIDATA_URL, "https://www.wikidata.org/w/api.php")
    return WikidataSearch(url, rate_limiter=limiter)


def _scorer(cfg: RunConfig):
    from .linking import HttpMllmClient, StubMllmClient
    from .retlink import LexicalScorer, LlmScorer

    if cfg.scorer == "lexical":
        return LexicalScorer()
    if cfg.scorer == "llm-stub":
        return LlmScorer(StubMllmClient(cfg.seed))
    endpoint = os.environ.get(ENV_MLLM_ENDPOINT)
    if not endpoint:
        raise ValidationError(f"--scorer llm-http needs {ENV_MLLM_ENDPOINT} to be set")
    return LlmScorer(HttpMllmClient(endpoint, cfg.mllm_request_template, cfg.mllm_response_path))


def cmd_retlink(cfg: RunConfig) -> None:
    from .dataio import adversarial_selector, load_index
    from .dataio.emit import variants
    from .linking import EvalReport, LinkingInstance, accuracy
    from .report import render_report
    from .retlink import EvidenceCache, StubVisionClient, run_retlink

    model, prototypes, instances = _load_model_and_instances(cfg)
    desc_path = Path(cfg.descriptors) if cfg.descriptors else Path(cfg.manifest).parent / "descriptors.json"
    descriptor_map = json.loads(desc_path.read_text(encoding="utf-8"))
    vision = StubVisionClient(dict(zip(model.entities, prototypes)), descriptor_map)
    kb = _knowledge_base(cfg)
    scorer = _scorer(cfg)
    cache = EvidenceCache(cfg.cache, cfg.cache_ttl) if cfg.cache else None
    index = load_index(cfg.adv) if cfg.adv else []

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    with (out / "traces.jsonl").open("w", encoding="utf-8") as traces:
        for task in cfg.task_list():
            view = instances if task == "IT2T" else [
                LinkingInstance(i.id, i.image, "", i.candidates, i.gold_index) for i in instances
            ]
            plans = [("RAW", "P", None)] + [
                (m, t[0], adversarial_selector(cfg.adv, m, t, index)) for m, t in variants(index)
            ]
            for attack, tier, sel in plans:
                preds, excluded = [], []
                for inst in view:
                    try:
                        img = None if sel is None else sel(inst)
                    except KeyError:
                        excluded.append({"id": inst.id, "reason": "no image for this attack variant"})
                        continue
                    res = run_retlink(vision, kb, inst, img, scorer, cache, cfg.top_j, cfg.per_query_limit, cfg.jobs)
                    preds.append(res.prediction)
                    traces.write(json.dumps({"task": task, "attack": attack, "tier": tier, "trace": res.trace},
                                            sort_keys=True, separators=(",", ":")) + "\n")
                reports.append(EvalReport(
                    task=task, attack=attack, tier=tier, n=len(preds),
                    accuracy=accuracy(preds) if preds else 0.0,
                    records=[p.to_dict() for p in preds], exclusions=excluded,
                    dataset=cfg.dataset_name, model=cfg.model_name + "*",
                ))
    _write_reports(out / "retlink_reports.json", reports)
    sys.stdout.write(render_report(reports).decode())


def cmd_report(cfg: RunConfig) -> None:
    from .report import load_reports, render_report

    data = render_report(load_reports(cfg.inputs), cfg.format)
    if cfg.out:
        Path(cfg.out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())


HANDLERS = {"fixture": cmd_fixture, "attack": cmd_attack, "eval": cmd_eval, "retlink": cmd_retlink, "report": cmd_report}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
        logging.basicConfig(level=logging.INFO if ns.pop("verbose", False) else logging.WARNING)
        command = ns.pop("command", None)
        if command is None:
            parser.print_usage(sys.stderr)
            raise ValidationError("a subcommand is required")
        config_path = ns.pop("config", None)
        cfg = RunConfig.resolve(command, ns, config_path)
    except ValidationError as exc:
        print(f"advmel: error: {exc}", file=sys.stderr)
        return 1
    except TypeError as exc:
        print(f"advmel: error: bad configuration: {exc}", file=sys.stderr)
        return 1
    try:
        if cfg.out and command != "report":
            cfg.write(Path(cfg.out))
        HANDLERS[command](cfg)
    except (ValidationError, ParseError, ConstructionError) as exc:
        print(f"advmel: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"advmel: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
