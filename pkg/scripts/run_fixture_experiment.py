"""Run the full desk experiment: fixture, attacks, I2T/IT2T eval, RetLink, tables.

Everything lands under one output directory:

    python3 scripts/run_fixture_experiment.py --out runs/seed7

Prints the embedding-model table followed by the RetLink table.
"""

import argparse
import sys
from pathlib import Path

from advmel.cli import dispatch


def step(argv: list[str]) -> None:
    print("$ advmel " + " ".join(argv), file=sys.stderr)
    code = dispatch(argv)
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--mllm", default="stub", choices=("none", "stub", "http"))
    args = ap.parse_args()

    out = Path(args.out)
    fx, adv = out / "fixture", out / "adversarial"
    manifest = str(fx / "manifest.jsonl")
    step(["fixture", "--seed", str(args.seed), "--instances", str(args.instances), "--out", str(fx)])
    step(["attack", "--manifest", manifest, "--out", str(adv), "--jobs", str(args.jobs)])
    step(["eval", "--manifest", manifest, "--adv", str(adv), "--out", str(out / "eval"), "--mllm", args.mllm])
    step(["retlink", "--manifest", manifest, "--adv", str(adv), "--out", str(out / "retlink")])
    step(["report", "--inputs", str(out / "eval" / "eval_reports.json"), str(out / "retlink" / "retlink_reports.json"),
          "--format", "csv", "--out", str(out / "tables.csv")])
    step(["report", "--inputs", str(out / "eval" / "eval_reports.json"), str(out / "retlink" / "retlink_reports.json")])


if __name__ == "__main__":
    main()
