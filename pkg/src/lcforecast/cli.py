"""Command-line entry point: synth | prepare | train | eval | predict | compare | importance."""

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import features, pipeline, seqnet
from .config import WORKFLOWS, RunConfig
from .errors import ParseError, ValidationError
from .ingest import find_recordings, parse_recording, write_recording
from .synthgen import generate_scenario

META_COLUMNS = ["label", "recordingId", "vehicleId", "anchorFrame", "horizonS", "split"]


def _h(cfg):
    return f"{cfg.horizon_s:g}"


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _stamp(cfg, command, paths):
    """Record config hash and seeds for each artifact in the output directory's manifest."""
    manifest = Path(cfg.output_dir) / "provenance.json"
    data = json.loads(manifest.read_text()) if manifest.exists() else {}
    for p in paths:
        data[Path(p).name] = {"command": command, **cfg.provenance()}
    _write_json(manifest, data)


def samples_paths(cfg):
    out = Path(cfg.output_dir)
    return out / f"samples_h{_h(cfg)}.csv", out / f"samples_h{_h(cfg)}.json"


def model_paths(cfg, workflow=None):
    workflow = workflow or cfg.workflow
    out = Path(cfg.output_dir)
    if workflow == "e2e":
        return {"e2e": out / f"model_e2e_h{_h(cfg)}.lcm"}
    return {"lane_change": out / f"model_multil_lc_h{_h(cfg)}.lcm",
            "direction": out / f"model_multil_dir_h{_h(cfg)}.lcm"}


def write_samples(path, split_obj):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(features.FEATURE_NAMES) + META_COLUMNS)
        for tag, s in (("train", split_obj.train), ("test", split_obj.test)):
            for i in range(len(s)):
                w.writerow([repr(v) for v in s.X[i].tolist()] + [
                    features.Label(int(s.y[i])).name, s.recording_id[i], int(s.vehicle_id[i]),
                    int(s.anchor_frame[i]), repr(float(s.horizon_s[i])), tag])


def read_samples(path):
    """Returns (train, test) SampleSets from a prepared samples CSV."""
    rows = {"train": [], "test": []}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(features.FEATURE_NAMES) + META_COLUMNS:
            raise ParseError(f"{path}: line 1: header does not match the feature ordering")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields")
            try:
                rows[rec[-1]].append(rec)
            except KeyError:
                raise ParseError(f"{path}: line {lineno}: unknown split tag {rec[-1]!r}") from None
    n = features.N_FEATURES

    def build(recs):
        if not recs:
            return features.SampleSet.empty()
        return features.SampleSet(
            X=np.array([[float(v) for v in r[:n]] for r in recs]),
            y=np.array([features.Label[r[n]].value for r in recs], dtype=np.int64),
            recording_id=np.array([r[n + 1] for r in recs], dtype=object),
            vehicle_id=np.array([int(r[n + 2]) for r in recs], dtype=np.int64),
            anchor_frame=np.array([int(r[n + 3]) for r in recs], dtype=np.int64),
            horizon_s=np.array([float(r[n + 4]) for r in recs]),
        )

    return build(rows["train"]), build(rows["test"])


def _load_prepared(cfg):
    csv_path, meta_path = samples_paths(cfg)
    if not csv_path.exists() or not meta_path.exists():
        raise ValidationError(f"missing {csv_path.name}; run `prepare` first")
    meta = json.loads(meta_path.read_text())
    if meta.get("featureOrderingVersion") != features.FEATURE_ORDERING_VERSION:
        raise ValidationError("samples file uses a different feature ordering version")
    train, test = read_samples(csv_path)
    return train, test, meta


def _load_model(cfg, workflow=None):
    paths = model_paths(cfg, workflow)
    loaded = {}
    for role, p in paths.items():
        if not p.exists():
            raise ValidationError(f"missing model {p.name}; run `train` with workflow "
                                  f"{workflow or cfg.workflow}")
        params, header = seqnet.load_model(p)
        if header.get("featureOrderingVersion") != features.FEATURE_ORDERING_VERSION:
            raise ValidationError(f"{p.name}: feature ordering version differs from this build")
        loaded[role] = (params, header)
    if "e2e" in loaded:
        return loaded["e2e"][0], paths
    m1, m2 = loaded["lane_change"][0], loaded["direction"][0]
    return pipeline.CascadeModel(m1, m2, m1.normalizer), paths


def _check_versions(sample_meta, model_paths_):
    for p in model_paths_.values():
        _, header = seqnet.load_model(p)
        if header["featureOrderingVersion"] != sample_meta["featureOrderingVersion"]:
            raise ValidationError("samples and model use different feature ordering versions")


def cmd_synth(cfg, args):
    out = Path(args.out or cfg.data_dir)
    written = []
    for k in range(cfg.recordings):
        sc = replace(cfg.scenario, seed=cfg.scenario.seed + k,
                     recording_id=f"{cfg.scenario.recording_id}{k:02d}")
        rec = generate_scenario(sc)
        written += [str(p) for p in write_recording(rec, out)]
    for p in written:
        print(p)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    _stamp(cfg, "synth", written)
    return 0


def cmd_prepare(cfg, args):
    pairs = find_recordings(cfg.data_dir)
    if not pairs:
        raise ValidationError(f"no *_tracks.csv / *_meta.json pairs in {cfg.data_dir}")
    sets, occupancy = [], {}
    for tp, mp in pairs:
        rec = parse_recording(tp, mp)
        s = features.extract_samples(rec, cfg.horizon_s)
        occupancy[rec.recording_id] = features.slot_occupancy(s)
        sets.append(s)
    allsamples = features.SampleSet.concat(sets)
    seed = cfg.seeds.data
    if cfg.balance_before_split:
        balanced = features.balance_classes(allsamples, seed)
        sp = features.split(balanced, seed + 1, cfg.split_mode)
    else:
        raw = features.split(allsamples, seed + 1, cfg.split_mode)
        sp = features.DatasetSplit(features.balance_classes(raw.train, seed),
                                   features.balance_classes(raw.test, seed + 2),
                                   raw.seed, raw.mode, raw.ratio)
    if len(sp.train) == 0:
        raise ValidationError("no training samples after balancing (is a class missing?)")
    norm = features.Normalizer.fit(sp.train.X)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, meta_path = samples_paths(cfg)
    write_samples(csv_path, sp)
    _write_json(meta_path, {
        "featureOrderingVersion": features.FEATURE_ORDERING_VERSION,
        "horizonS": cfg.horizon_s,
        "recordings": [p[0].name for p in pairs],
        "countsBeforeBalancing": allsamples.counts(),
        "countsAfterBalancing": {k: sp.train.counts()[k] + sp.test.counts()[k] for k in sp.train.counts()},
        "trainCounts": sp.train.counts(),
        "testCounts": sp.test.counts(),
        "splitMode": cfg.split_mode,
        "balanceBeforeSplit": cfg.balance_before_split,
        "slotOccupancy": occupancy,
        "normalization": norm.to_dict(),
        **cfg.provenance(),
    })
    _stamp(cfg, "prepare", [csv_path, meta_path])
    print(f"{csv_path}: {len(sp.train)} train / {len(sp.test)} test")
    return 0


def _train_one(cfg, workflow, train, meta):
    norm = features.Normalizer.from_dict(meta["normalization"])
    dataset = features.DatasetSplit(train, features.SampleSet.empty(), cfg.seeds.data, cfg.split_mode)
    netcfg = cfg.network_config()
    paths = model_paths(cfg, workflow)
    metadata = {**cfg.provenance(), "horizonS": cfg.horizon_s, "workflow": workflow}
    out = Path(cfg.output_dir)
    written = list(paths.values())
    if workflow == "e2e":
        params, hist = pipeline.train_e2e(dataset, netcfg, norm)
        seqnet.save_model(params, paths["e2e"], cfg.precision, metadata)
        written.append(out / f"history_e2e_h{_h(cfg)}.csv")
        written[-1].write_text(seqnet.history_csv(hist))
    else:
        cascade = pipeline.train_cascade(dataset, netcfg, norm, seed=cfg.seeds.data)
        seqnet.save_model(cascade.model1, paths["lane_change"], cfg.precision, metadata)
        seqnet.save_model(cascade.model2, paths["direction"], cfg.precision, metadata)
        for role, tag in (("lane_change", "lc"), ("direction", "dir")):
            written.append(out / f"history_multil_{tag}_h{_h(cfg)}.csv")
            written[-1].write_text(seqnet.history_csv(cascade.histories[role]))
    _stamp(cfg, "train", written)
    for p in paths.values():
        print(p)


def cmd_train(cfg, args):
    train, _, meta = _load_prepared(cfg)
    _train_one(cfg, cfg.workflow, train, meta)
    return 0


def cmd_eval(cfg, args):
    _, test, meta = _load_prepared(cfg)
    model, paths = _load_model(cfg)
    _check_versions(meta, paths)
    report = pipeline.evaluate(model, test, timing_repetitions=args.repetitions)
    tag = "e2e" if cfg.workflow == "e2e" else "multil"
    out = Path(cfg.output_dir)
    data = report.to_dict()
    data.update({"workflow": cfg.workflow, "horizonS": cfg.horizon_s, **cfg.provenance()})
    _write_json(out / f"metrics_{tag}_h{_h(cfg)}.json", data)
    lines = ["true\\pred," + ",".join(report.classes)]
    for name, row in zip(report.classes, report.confusion.tolist()):
        lines.append(",".join([name] + [str(v) for v in row]))
    (out / f"confusion_{tag}_h{_h(cfg)}.csv").write_text("\n".join(lines) + "\n")
    _stamp(cfg, "eval", [f"metrics_{tag}_h{_h(cfg)}.json", f"confusion_{tag}_h{_h(cfg)}.csv"])
    print(f"accuracy={report.accuracy:.4f} precision={report.precision:.4f} "
          f"recall={report.recall:.4f} f1={report.f1:.4f} n={report.samples}")
    return 0


def cmd_predict(cfg, args):
    model, _ = _load_model(cfg)
    classes = pipeline.CLASS_NAMES["e2e"]
    if args.timeline:
        if args.recording is None or args.vehicle is None:
            raise ValidationError("--timeline needs --recording and --vehicle")
        pairs = {tp.name[:-len("_tracks.csv")]: (tp, mp) for tp, mp in find_recordings(cfg.data_dir)}
        if args.recording not in pairs:
            raise ValidationError(f"recording {args.recording!r} not found in {cfg.data_dir}")
        rec = parse_recording(*pairs[args.recording])
        if args.vehicle not in rec.tracks:
            raise ValidationError(f"vehicle {args.vehicle} not in recording {args.recording}")
        rows = pipeline.prediction_timeline(model, rec, args.vehicle, cfg.horizon_s)
        tag = "e2e" if cfg.workflow == "e2e" else "multil"
        path = Path(cfg.output_dir) / f"timeline_{tag}_{args.recording}_v{args.vehicle}_h{_h(cfg)}.csv"
        path.write_text(pipeline.timeline_csv(rows, classes))
        _stamp(cfg, "predict", [path])
        print(path)
        return 0
    _, test, _ = _load_prepared(cfg)
    if not 0 <= args.sample < len(test):
        raise ValidationError(f"--sample must be in [0, {len(test)})")
    dec, prob = pipeline.predict_batch(model, test.X[args.sample])
    print(json.dumps({"sample": args.sample, "predicted": classes[int(dec[0])],
                      "truth": classes[int(test.y[args.sample])],
                      "probabilities": dict(zip(classes, prob[0].tolist()))}))
    return 0


def cmd_compare(cfg, args):
    _, test, meta = _load_prepared(cfg)
    rows = []
    for wf in WORKFLOWS:
        model, paths = _load_model(cfg, wf)
        _check_versions(meta, paths)
        report = pipeline.evaluate(model, test)
        windows = test.X[:args.timing_samples]
        mean, std = pipeline.measure_inference(model, windows, args.repetitions)
        rows.append({
            "workflow": wf,
            "accuracy": report.accuracy,
            "f1": report.f1,
            "parameters": pipeline.model_param_count(model),
            "sizeBytes": sum(p.stat().st_size for p in paths.values()),
            "timing": {"meanInferenceSeconds": mean, "stdInferenceSeconds": std},
        })
    out = Path(cfg.output_dir)
    _write_json(out / f"compare_h{_h(cfg)}.json", {"rows": rows, **cfg.provenance()})
    _stamp(cfg, "compare", [out / f"compare_h{_h(cfg)}.json"])
    print(f"{'workflow':<10}{'accuracy':>10}{'params':>10}{'size(B)':>12}{'infer(ms)':>11}")
    for r in rows:
        print(f"{r['workflow']:<10}{r['accuracy']:>10.4f}{r['parameters']:>10,}{r['sizeBytes']:>12,}"
              f"{1e3 * r['timing']['meanInferenceSeconds']:>11.3f}")
    return 0


def cmd_importance(cfg, args):
    _, test, meta = _load_prepared(cfg)
    model, paths = _load_model(cfg)
    _check_versions(meta, paths)
    report = pipeline.permutation_importance(model, test, cfg.seeds.importance, k=args.top)
    tag = "e2e" if cfg.workflow == "e2e" else "multil"
    path = Path(cfg.output_dir) / f"importance_{tag}_h{_h(cfg)}.csv"
    path.write_text(report.to_csv())
    _stamp(cfg, "importance", [path])
    print(path)
    return 0


COMMANDS = {
    "synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval,
    "predict": cmd_predict, "compare": cmd_compare, "importance": cmd_importance,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="run configuration JSON")
    common.add_argument("--data", help="override data_dir (recordings)")
    common.add_argument("--output", help="override output_dir (artifacts)")
    common.add_argument("--horizon", type=float, help="override horizon_s")
    common.add_argument("--workflow", choices=WORKFLOWS, help="override workflow")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, bit-deterministic)")

    parser = argparse.ArgumentParser(prog="lcforecast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="generate synthetic recordings")
    p.add_argument("--out", help="directory for tracks CSV + meta JSON (default: data_dir)")
    sub.add_parser("prepare", parents=[common], help="extract, balance and split samples")
    sub.add_parser("train", parents=[common], help="train the configured workflow")
    p = sub.add_parser("eval", parents=[common], help="evaluate on the test split")
    p.add_argument("--repetitions", type=int, default=3, help="timing repetitions")
    p = sub.add_parser("predict", parents=[common], help="single decision or per-frame timeline")
    p.add_argument("--sample", type=int, default=0, help="test-split row to classify")
    p.add_argument("--timeline", action="store_true", help="write a per-frame prediction series")
    p.add_argument("--recording", help="recording id for --timeline")
    p.add_argument("--vehicle", type=int, help="vehicle id for --timeline")
    p = sub.add_parser("compare", parents=[common], help="E2E vs Multi-L side by side")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--timing-samples", type=int, default=200)
    p = sub.add_parser("importance", parents=[common], help="per-class permutation importance")
    p.add_argument("--top", type=int, default=15)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        overrides = {k: v for k, v in (("data_dir", args.data), ("output_dir", args.output),
                                       ("horizon_s", args.horizon), ("workflow", args.workflow))
                     if v is not None}
        if overrides:
            cfg = replace(cfg, **overrides)
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](cfg, args)
    except (ValidationError, ParseError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
