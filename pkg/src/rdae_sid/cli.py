"""Command-line entry point: ``rdae-sid <subcommand> ...``.

Exit codes: 0 success, 2 argument error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import dsp, synth
from .augmentation import (
    SnrCondition,
    CLEAN,
    decimate_per_speaker,
    iter_multicondition,
    load_noise_bank,
    read_manifest,
    write_manifest,
)
from .cache import CacheWriter, read_cache
from .errors import ArgumentError, DataError, FormatError, RdaeError
from .harness.config import load_config
from .harness.experiment import SYSTEMS, load_fitted, run_system, write_checkpoints
from .harness.folds import make_fold_plan
from .harness.metrics import compute_metrics
from .harness.report import emit_report, load_results, metrics_csv
from .neural.training import TrainConfig
from .pipeline import EXTRACTORS, read_store, store_path, write_store

log = logging.getLogger("rdae_sid")


# ---------------------------------------------------------------- preprocess


def _discover(in_dir: Path) -> list[dict]:
    listing = in_dir / "corpus.jsonl"
    if listing.exists():
        with open(listing, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    rows = []
    for path in sorted(in_dir.rglob("*.wav")):
        rel = path.relative_to(in_dir)
        speaker = rel.parent.name or path.stem
        rows.append({"path": rel.as_posix(), "speaker_id": speaker, "utterance_id": rel.with_suffix("").as_posix().replace("/", "_")})
    return rows


def cmd_preprocess(args) -> int:
    in_dir = Path(args.in_dir)
    rows = _discover(in_dir)
    if not rows:
        raise DataError(f"no WAV files under {in_dir}")
    vad = dsp.VadConfig(relative_threshold=args.vad_threshold)
    manifest, waves = [], []
    for row in rows:
        clip = dsp.load_wav(in_dir / row["path"], utterance_id=row["utterance_id"], speaker_id=row["speaker_id"])
        for seg in dsp.segment_and_vad(dsp.canonicalize(clip), vad):
            offset = -1
            if seg.is_speech:
                offset = len(waves)
                waves.append(seg.samples)
            manifest.append(
                {
                    "group_key": seg.group_key,
                    "speaker_id": seg.speaker_id,
                    "utterance_id": seg.utterance_id,
                    "segment_index": seg.segment_index,
                    "is_speech": seg.is_speech,
                    "source": row["path"],
                    "cache_offset": offset,
                }
            )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for rec in manifest:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    write_store(store_path(out), waves)
    log.info("%d utterances -> %d segments (%d speech)", len(rows), len(manifest), len(waves))
    return 0


# ---------------------------------------------------------------- augment


def _read_segments(manifest_path: Path) -> list[dsp.Segment]:
    store = read_store(store_path(manifest_path))
    segs = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "is_speech" not in rec:
                raise FormatError(f"{manifest_path}:{lineno}: not a preprocess manifest")
            if not rec["is_speech"]:
                continue
            segs.append(
                dsp.Segment(
                    samples=store[rec["cache_offset"]].astype(np.float64),
                    utterance_id=rec["utterance_id"],
                    segment_index=rec["segment_index"],
                    is_speech=True,
                    speaker_id=rec["speaker_id"],
                )
            )
    return segs


def parse_snrs(text: str) -> list[SnrCondition]:
    levels = [SnrCondition.parse(t.strip()) for t in text.split(",") if t.strip()]
    if not levels:
        raise ArgumentError("empty SNR list")
    return [CLEAN] + sorted({s for s in levels if not s.is_clean}, key=lambda s: s.db)


def cmd_augment(args) -> int:
    manifest_path = Path(args.manifest)
    segs = _read_segments(manifest_path)
    if args.max_seconds is not None:
        views = [SimpleNamespace(seg=s, noise_name=None, speaker_id=s.speaker_id, utterance_id=s.utterance_id,
                                 segment_index=s.segment_index, group_key=s.group_key) for s in segs]
        segs = [v.seg for v in decimate_per_speaker(views, args.max_seconds)]
    snrs = parse_snrs(args.snrs)
    noises = load_noise_bank(args.noises) if any(not s.is_clean for s in snrs) else []
    out = Path(args.out) if args.out else manifest_path.with_name(manifest_path.stem + ".multi.jsonl")
    records, waves = [], []
    for cs in iter_multicondition(segs, noises, snrs, args.seed):
        records.append(cs.record(cache_offset=len(records)))
        waves.append(cs.samples)
    write_manifest(out, records)
    write_store(store_path(out), waves)
    log.info("%d clean segments -> %d conditioned versions in %s", len(segs), len(records), out)
    return 0


# ---------------------------------------------------------------- featurize


def cmd_featurize(args) -> int:
    manifest_path = Path(args.manifest)
    records = read_manifest(manifest_path)
    store = read_store(store_path(manifest_path))
    kind = "handcrafted" if args.handcrafted else "mel"
    extract = EXTRACTORS[kind]
    with CacheWriter(args.cache, kind) as writer:
        for rec in records:
            if not 0 <= rec.cache_offset < store.shape[0]:
                raise FormatError(f"{rec.group_key}: cache_offset {rec.cache_offset} outside the waveform store")
            meta = {
                "group_key": rec.group_key,
                "speaker_id": rec.speaker_id,
                "utterance_id": rec.utterance_id,
                "segment_index": rec.segment_index,
                "noise_name": rec.noise_name,
                "snr_db": rec.snr_db,
                "rescale_factor": rec.rescale_factor,
                "cache_offset": rec.cache_offset,
            }
            writer.write(meta, extract(store[rec.cache_offset].astype(np.float64)))
    log.info("wrote %d %s records to %s", len(records), kind, args.cache)
    return 0


# ---------------------------------------------------------------- train / evaluate / compare


def _config_overrides(args) -> dict:
    return {f.name: getattr(args, f.name) for f in fields(TrainConfig) if f.name != "seed"}


def cmd_train(args) -> int:
    base, grid = load_config(args.grid, _config_overrides(args))
    features = read_cache(args.cache)
    result = run_system(args.system, features, grid, seed=args.seed, base_config=base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = write_checkpoints(result.fitted, out)
    (out / "metrics.csv").write_text(metrics_csv([result]), encoding="utf-8")
    (out / "result.json").write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("%s seed %d: accuracy %.4f; wrote %s", args.system, args.seed, result.accuracy, ", ".join(p.name for p in paths))
    print(json.dumps({"system": args.system, "seed": args.seed, "accuracy": result.accuracy, "per_snr": result.per_snr}, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    fitted = load_fitted(args.checkpoint)
    features = read_cache(args.cache)
    expected = "handcrafted" if fitted.system == "handcrafted" else "mel"
    if features.kind != expected:
        raise ArgumentError(f"checkpoint needs a {expected} cache, got {features.kind}")
    if list(features.speaker_list) != list(fitted.speakers):
        raise DataError("cache speakers differ from the checkpoint's speaker roster")
    if args.all:
        idx = np.arange(len(features))
    else:
        seed = fitted.config.seed if args.seed is None else args.seed
        idx = features.indices_for_groups(make_fold_plan(features.records, seed).outer_test)
    predictions = fitted.predict(features.take(idx))
    m = compute_metrics(predictions, features.labels[idx], features.conditions(idx), features.n_classes)
    print(json.dumps({"system": fitted.system, "n": m.n, "accuracy": m.accuracy, "macro_f1": m.macro_f1,
                      "per_snr": m.per_snr, "per_noise": m.per_noise}, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    csv_path, md_path = emit_report(load_results(args.results), args.out)
    log.info("wrote %s and %s", csv_path, md_path)
    return 0


def cmd_synth_corpus(args) -> int:
    manifest = synth.write_corpus(
        args.out, args.speakers, args.utterances, args.seed, duration_s=args.duration, noise_duration_s=args.noise_seconds
    )
    log.info("wrote %s", manifest)
    return 0


# ---------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        kind = {"int": int, "float": float, "str": str}.get(f.type)
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            p.add_argument(flag, dest=f.name, type=kind, default=None, help=f"override {f.name}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdae-sid", description="RDAE speaker identification pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="canonicalize WAVs and run the VAD")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True, help="segment manifest (JSON lines); waveforms go to <out>.f32")
    p.add_argument("--vad-threshold", type=float, default=dsp.VadConfig.relative_threshold)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="build the multi-condition manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--noises", required=True)
    p.add_argument("--snrs", default="-5,0,5,10,15,20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--max-seconds", type=int, default=600, help="clean seconds kept per speaker")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("featurize", help="write a mel or handcrafted feature cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--handcrafted", action="store_true")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="nested CV for one system")
    p.add_argument("--system", required=True, choices=SYSTEMS)
    p.add_argument("--cache", required=True)
    p.add_argument("--grid", default=None, help="key = value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a cache")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--seed", type=int, default=None, help="fold-plan seed (default: the checkpoint's)")
    p.add_argument("--all", action="store_true", help="score every record, not just the held-out groups")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="merge result.json files into a report")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth-corpus", help="generate a synthetic speaker corpus")
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--utterances", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=6.0, help="seconds per utterance")
    p.add_argument("--noise-seconds", type=float, default=60.0)
    p.set_defaults(func=cmd_synth_corpus)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RdaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
