"""Train both workflows at each prediction horizon on one synthetic highway and tabulate accuracy.

    python3 scripts/horizon_sweep.py --out runs/sweep.json
    python3 scripts/horizon_sweep.py --quick
"""

import argparse
import json
import time
from pathlib import Path

from lcforecast import pipeline
from lcforecast.features import balance_classes, extract_samples, split
from lcforecast.seqnet import NetworkConfig
from lcforecast.synthgen import ScenarioConfig, generate_scenario


def run(scenario, horizons, network, seed):
    rec = generate_scenario(scenario)
    rows = []
    for h in horizons:
        data = split(balance_classes(extract_samples(rec, h), seed), seed + 1)
        row = {"horizonS": h, "train": len(data.train), "test": len(data.test)}
        t0 = time.perf_counter()
        e2e, _ = pipeline.train_e2e(data, network)
        row["e2e"] = pipeline.evaluate(e2e, data.test).to_dict()
        cascade = pipeline.train_cascade(data, network, seed=seed)
        row["multiL"] = pipeline.evaluate(cascade, data.test).to_dict()
        row["seconds"] = time.perf_counter() - t0
        print(f"h={h:g}s  n={len(data.train)}/{len(data.test)}  "
              f"e2e={row['e2e']['accuracy']:.4f}  multi-l={row['multiL']['accuracy']:.4f}  "
              f"({row['seconds']:.0f}s)", flush=True)
        rows.append(row)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--horizons", type=float, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--vehicles", type=int, default=100)
    ap.add_argument("--changes", type=int, default=250)
    ap.add_argument("--duration", type=float, default=60)
    ap.add_argument("--ramp", choices=["on", "off"])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--quick", action="store_true", help="small scenario and 10 epochs")
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    if args.quick:
        args.vehicles, args.changes, args.duration, args.epochs = 30, 60, 40, 10
    scenario = ScenarioConfig(vehicle_count=args.vehicles, duration=args.duration,
                              random_lane_changes=args.changes, ramp=args.ramp, seed=args.seed)
    network = NetworkConfig(epochs=args.epochs, init_seed=args.seed, train_seed=args.seed)
    rows = run(scenario, args.horizons, network, args.seed)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps({"scenario": scenario.to_dict(), "rows": rows}, indent=2) + "\n")


if __name__ == "__main__":
    main()
