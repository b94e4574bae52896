import json

import pytest

from advmel.cli import RunConfig, dispatch
from advmel.errors import ValidationError
from advmel.linking import EvalReport
from advmel.report import COLUMN_NAMES, load_reports, render_report

TINY_FLAGS = ["--seed", "3", "--entities", "6", "--candidates", "3", "--dim", "16",
              "--height", "8", "--width", "8", "--instances", "6", "--no-certify"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    fx, adv, ev, rl = root / "fx", root / "adv", root / "eval", root / "rl"
    assert dispatch(["fixture", "--out", str(fx), *TINY_FLAGS]) == 0
    manifest = str(fx / "manifest.jsonl")
    assert dispatch(["attack", "--manifest", manifest, "--methods", "pgd,cw", "--tiers", "n", "--out", str(adv)]) == 0
    assert dispatch(["eval", "--manifest", manifest, "--adv", str(adv), "--out", str(ev), "--mllm", "stub"]) == 0
    assert dispatch(["retlink", "--manifest", manifest, "--adv", str(adv), "--out", str(rl),
                     "--cache", str(root / "cache.jsonl")]) == 0
    return root


def test_fixture_outputs(tiny_run):
    fx = tiny_run / "fx"
    for name in ("manifest.jsonl", "model.json", "corpus.tsv", "descriptors.json", "run_config.json"):
        assert (fx / name).exists(), name
    cfg = json.loads((fx / "run_config.json").read_text())
    assert cfg["command"] == "fixture" and cfg["entities"] == 6 and cfg["certify"] is False


def test_attack_layout(tiny_run):
    adv = tiny_run / "adv"
    assert sorted(p.name for p in adv.iterdir() if p.is_dir()) == ["cw_n", "pgd_n"]
    assert len((adv / "index.jsonl").read_text().splitlines()) == 12


def test_eval_reports(tiny_run, capsys):
    reports = load_reports([tiny_run / "eval" / "eval_reports.json"])
    # (desk, stub) x (I2T, IT2T) x (RAW, PGD-N, CW-N)
    assert len(reports) == 12
    assert {r.model for r in reports} == {"desk", "stub-mllm"}
    assert all(r.n == 6 for r in reports)


def test_retlink_outputs(tiny_run):
    reports = load_reports([tiny_run / "rl" / "retlink_reports.json"])
    assert {r.model for r in reports} == {"desk*"}
    traces = (tiny_run / "rl" / "traces.jsonl").read_text().splitlines()
    assert len(traces) == 6 * 3 * 2
    first = json.loads(traces[0])
    assert first["task"] == "I2T" and first["trace"]["instance"]


def test_report_formats(tiny_run, capsys):
    src = str(tiny_run / "eval" / "eval_reports.json")
    assert dispatch(["report", "--inputs", src]) == 0
    text = capsys.readouterr().out
    header = text.splitlines()[0].split()
    assert header[3:] == list(COLUMN_NAMES)
    out = tiny_run / "r.json"
    assert dispatch(["report", "--inputs", src, "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert [EvalReport.from_dict(d) for d in doc["reports"]] == load_reports([src])
    assert dispatch(["report", "--inputs", src, "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("dataset,model,task,RAW,PGD-N")


def test_rerunning_attack_is_idempotent(tiny_run):
    adv = tiny_run / "adv"
    before = (adv / "index.jsonl").read_bytes()
    manifest = str(tiny_run / "fx" / "manifest.jsonl")
    assert dispatch(["attack", "--manifest", manifest, "--methods", "pgd,cw", "--tiers", "n", "--out", str(adv)]) == 0
    assert (adv / "index.jsonl").read_bytes() == before
    assert json.loads((adv / "index_header.json").read_text())["attempted"] == 0


def test_unknown_flag_exits_1_with_usage(capsys):
    assert dispatch(["fixture", "--bogus"]) == 1
    assert "usage:" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["attack", "--out", "x"],
        ["attack", "--manifest", "m", "--out", "x", "--methods", "fgsm"],
        ["eval", "--manifest", "m", "--out", "x", "--tasks", "t2i"],
        ["report", "--inputs"],
    ],
)
def test_validation_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert dispatch(argv) == 1


def test_bad_manifest_exits_1(tmp_path):
    (tmp_path / "m.jsonl").write_text("{oops\n")
    assert dispatch(["attack", "--manifest", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "a")]) == 1


def test_runtime_error_exits_2(tiny_run, tmp_path):
    manifest = tiny_run / "fx" / "manifest.jsonl"
    # a model file that is not JSON at all is an I/O-level failure, not a config mistake
    (tmp_path / "model.json").write_text("not json")
    code = dispatch(["attack", "--manifest", str(manifest), "--model", str(tmp_path / "model.json"),
                     "--out", str(tmp_path / "a")])
    assert code == 2


def test_config_file_precedence(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"seed": 11, "entities": 9, "out": "from-file"}))
    cfg = RunConfig.resolve("fixture", {"entities": 5}, str(cfg_path))
    assert (cfg.seed, cfg.entities, cfg.out, cfg.dim) == (11, 5, "from-file", 64)
    cfg_path.write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(ValidationError):
        RunConfig.resolve("fixture", {"out": "x"}, str(cfg_path))


def test_config_file_through_dispatch(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"seed": 3, "entities": 6, "candidates": 3, "dim": 16, "height": 8,
                                    "width": 8, "instances": 4, "certify": False, "out": str(tmp_path / "ignored")}))
    assert dispatch(["fixture", "--config", str(cfg_path), "--out", str(tmp_path / "fx")]) == 0
    written = json.loads((tmp_path / "fx" / "run_config.json").read_text())
    assert written["instances"] == 4 and written["out"] == str(tmp_path / "fx")
    assert not (tmp_path / "ignored").exists()


def test_http_mllm_requires_endpoint(tiny_run, tmp_path, monkeypatch):
    monkeypatch.delenv("ADVMEL_MLLM_ENDPOINT", raising=False)
    manifest = str(tiny_run / "fx" / "manifest.jsonl")
    assert dispatch(["eval", "--manifest", manifest, "--out", str(tmp_path), "--mllm", "http"]) == 1


def test_http_mllm_via_env(tiny_run, tmp_path, monkeypatch, http_server):
    http_server.routes["/mllm"] = lambda q, b: (200, {"text": "0"})
    monkeypatch.setenv("ADVMEL_MLLM_ENDPOINT", http_server.base + "/mllm")
    monkeypatch.setenv("ADVMEL_MLLM_API_KEY", "secret")
    manifest = str(tiny_run / "fx" / "manifest.jsonl")
    assert dispatch(["eval", "--manifest", manifest, "--out", str(tmp_path), "--mllm", "http", "--tasks", "i2t"]) == 0
    reports = load_reports([tmp_path / "eval_reports.json"])
    assert [r.model for r in reports] == ["desk", "http-mllm"]
    assert len(http_server.log) == 6


def test_render_report_errors():
    with pytest.raises(ValidationError):
        render_report([])
    rep = EvalReport("I2T", "RAW", "P", 1, 1.0)
    with pytest.raises(ValidationError):
        render_report([rep, EvalReport("I2T", "RAW", "P", 1, 0.0)])
    with pytest.raises(ValidationError):
        render_report([EvalReport("XX", "RAW", "P", 1, 1.0)])
    with pytest.raises(ValidationError):
        render_report([rep], "xml")


def test_text_table_percentages():
    reps = [EvalReport("I2T", "RAW", "P", 3, 2 / 3), EvalReport("I2T", "CW", "N", 3, 0.0)]
    lines = render_report(reps).decode().splitlines()
    assert lines[2].split()[3:] == ["66.7", "-", "-", "-", "-", "0.0", "-"]
