"""CSV and markdown reports over a set of RunResults."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from ..errors import ArgumentError
from .experiment import DISPLAY_NAMES, SYSTEMS, RunResult
from .metrics import condition_sort_key

CSV_COLUMNS = ("system", "seed", "condition", "accuracy", "macro_f1", "n")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _ordered(results: Sequence[RunResult]) -> list[RunResult]:
    return sorted(results, key=lambda r: (SYSTEMS.index(r.system), r.seed))


def metrics_csv(results: Sequence[RunResult]) -> str:
    """One row per (result, SNR condition); accuracies printed with 6 decimals."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in _ordered(results):
        for cond in sorted(r.per_snr, key=condition_sort_key):
            writer.writerow(
                [DISPLAY_NAMES[r.system], r.seed, cond, _fmt(r.per_snr[cond]), _fmt(r.per_snr_f1[cond]), r.per_snr_n[cond]]
            )
    return buf.getvalue()


def parse_metrics_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        row["seed"] = int(row["seed"])
        row["accuracy"] = float(row["accuracy"])
        row["macro_f1"] = float(row["macro_f1"])
        row["n"] = int(row["n"])
    return rows


def _mean(xs):
    return sum(xs) / len(xs)


def markdown_summary(results: Sequence[RunResult]) -> str:
    results = _ordered(results)
    conditions = sorted({c for r in results for c in r.per_snr}, key=condition_sort_key)
    systems = [s for s in SYSTEMS if any(r.system == s for r in results)]
    lines = ["# Speaker identification: system comparison", ""]
    lines.append("Accuracy on the held-out outer test groups, averaged over seeds.")
    lines.append("")
    head = ["system", "seeds", "overall", "macro-F1"] + [c if c == "clean" else f"{c} dB" for c in conditions]
    lines.append("| " + " | ".join(head) + " |")
    lines.append("|" + "---|" * len(head))
    for s in systems:
        rs = [r for r in results if r.system == s]
        row = [DISPLAY_NAMES[s], ",".join(str(r.seed) for r in rs), _fmt(_mean([r.accuracy for r in rs])),
               _fmt(_mean([r.macro_f1 for r in rs]))]
        for c in conditions:
            vals = [r.per_snr[c] for r in rs if c in r.per_snr]
            row.append(_fmt(_mean(vals)) if vals else "")
        lines.append("| " + " | ".join(row) + " |")
    lines += ["", "## Per-noise accuracy", ""]
    noises = sorted({n for r in results for n in r.per_noise})
    lines.append("| system | " + " | ".join(noises) + " |")
    lines.append("|" + "---|" * (len(noises) + 1))
    for s in systems:
        rs = [r for r in results if r.system == s]
        cells = []
        for n in noises:
            vals = [r.per_noise[n] for r in rs if n in r.per_noise]
            cells.append(_fmt(_mean(vals)) if vals else "")
        lines.append(f"| {DISPLAY_NAMES[s]} | " + " | ".join(cells) + " |")
    lines += ["", "## Chosen hyperparameters", ""]
    for r in results:
        hp = json.dumps(r.chosen_hyperparameters, sort_keys=True) if r.chosen_hyperparameters else "(single point)"
        lines.append(f"- {DISPLAY_NAMES[r.system]}, seed {r.seed}: {hp}; embedding dim {r.embedding_dim}")
    den = [r for r in results if r.denoising]
    if den:
        lines += ["", "## Denoising (final validation fold, normalized log-mel MSE)", ""]
        lines.append("| system | seed | SNR | model | identity |")
        lines.append("|---|---|---|---|---|")
        for r in den:
            for snr in sorted(r.denoising, key=condition_sort_key):
                d = r.denoising[snr]
                lines.append(f"| {DISPLAY_NAMES[r.system]} | {r.seed} | {snr} | {_fmt(d['model_mse'])} | {_fmt(d['identity_mse'])} |")
    lines += [
        "",
        "## Protocol",
        "",
        "- One speaker-stratified split per seed: 33% of utterance groups held out, the rest dealt into 3 inner folds.",
        "- Grid points are scored by mean best validation loss over the 3 inner rotations.",
        "- The chosen point is retrained on inner folds 1-2 with fold 3 used for early stopping, then scored once on the held-out groups.",
        "- Normalization statistics are refit on every training subset.",
        "",
    ]
    return "\n".join(lines)


def emit_report(results: Sequence[RunResult], out_dir: str | Path) -> tuple[Path, Path]:
    if not results:
        raise ArgumentError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, md_path = out / "report.csv", out / "report.md"
    csv_path.write_text(metrics_csv(results), encoding="utf-8")
    md_path.write_text(markdown_summary(results), encoding="utf-8")
    return csv_path, md_path


def load_results(directory: str | Path) -> list[RunResult]:
    paths = sorted(Path(directory).rglob("result.json"))
    if not paths:
        raise ArgumentError(f"no result.json files under {directory}")
    return [RunResult.from_json(json.loads(p.read_text(encoding="utf-8"))) for p in paths]
