"""Mainline versus ramp-section accuracy for the E2E workflow at a fixed horizon.

Ramp sections force merges (on-ramp) or offer exits (off-ramp), so their
lane-change mix differs from a plain three-lane segment.

    python3 scripts/ramp_study.py --horizon 2 --quick
"""

import argparse
import json
from pathlib import Path

from lcforecast import pipeline
from lcforecast.features import SampleSet, balance_classes, extract_samples, split
from lcforecast.seqnet import NetworkConfig
from lcforecast.synthgen import ScenarioConfig, generate_scenario


def samples_for(ramp, args, offset):
    sets = []
    for k in range(args.recordings):
        cfg = ScenarioConfig(vehicle_count=args.vehicles, duration=args.duration, ramp=ramp,
                             random_lane_changes=args.changes, seed=args.seed + offset + k,
                             recording_id=f"{ramp or 'main'}{k:02d}")
        sets.append(extract_samples(generate_scenario(cfg), args.horizon))
    return balance_classes(SampleSet.concat(sets), args.seed)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--horizon", type=float, default=2.0)
    ap.add_argument("--recordings", type=int, default=2)
    ap.add_argument("--vehicles", type=int, default=60)
    ap.add_argument("--changes", type=int, default=120)
    ap.add_argument("--duration", type=float, default=60)
    ap.add_argument("--seed", type=int, default=21)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    if args.quick:
        args.recordings, args.vehicles, args.changes, args.epochs = 1, 30, 60, 10
    network = NetworkConfig(epochs=args.epochs, init_seed=args.seed, train_seed=args.seed)
    results = {}
    for offset, ramp in enumerate([None, "on", "off"]):
        data = split(samples_for(ramp, args, 100 * offset), args.seed + 1)
        model, _ = pipeline.train_e2e(data, network)
        report = pipeline.evaluate(model, data.test)
        results[ramp or "mainline"] = report.to_dict()
        print(f"{ramp or 'mainline':<9} n={len(data.train)}/{len(data.test)}  acc={report.accuracy:.4f}", flush=True)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(results, indent=2) + "\n")


if __name__ == "__main__":
    main()
