"""Sweep the planted model's off-prototype gain and report attacked I2T accuracy.

The default sensitivity was picked from this sweep: the smallest value
where the Normal PGD preset drops clean accuracy by well over 30 points
while the attack still has to work for it.

    python3 scripts/sweep_sensitivity.py --values 0.004 0.005 0.0052 0.0056 0.006
"""

import argparse
import json
import time
from dataclasses import replace

from advmel.attacks import preset_config, run_attack
from advmel.dataio import FixtureSpec, build_fixture
from advmel.linking import accuracy, link_i2t


def measure(spec: FixtureSpec, presets) -> dict:
    fx = build_fixture(spec)
    row = {"sensitivity": spec.sensitivity, "clean": accuracy([link_i2t(fx.model, i) for i in fx.instances])}
    for cfg in presets:
        preds = []
        for inst in fx.instances:
            res = run_attack(fx.model, inst.image, inst.candidates, inst.gold_index, cfg)
            preds.append(link_i2t(fx.model, inst, res.adversarial_image))
        row[cfg.key] = accuracy(preds)
    return row


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--values", type=float, nargs="+", default=[0.004, 0.005, 0.0052, 0.0054, 0.0056, 0.006])
    ap.add_argument("--instances", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--presets", default="pgd:n,apgd:n", help="comma list of method:tier")
    ap.add_argument("--json", action="store_true", help="print JSON lines instead of a table")
    args = ap.parse_args()

    presets = [preset_config(*item.split(":")) for item in args.presets.split(",")]
    base = FixtureSpec(seed=args.seed, n_instances=args.instances)
    header = ["sensitivity", "clean", *(p.key for p in presets), "seconds"]
    if not args.json:
        print("  ".join(f"{h:>11}" for h in header))
    for s in args.values:
        t0 = time.perf_counter()
        row = measure(replace(base, sensitivity=s), presets)
        row["seconds"] = round(time.perf_counter() - t0, 1)
        if args.json:
            print(json.dumps(row))
        else:
            print("  ".join(f"{row[h]:>11.4g}" for h in header))


if __name__ == "__main__":
    main()
