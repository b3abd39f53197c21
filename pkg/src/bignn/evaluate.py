"""Metrics: per-level accuracy, macro precision/recall/F1, confusion counts,
and exact-match rate for generated descriptions."""

from __future__ import annotations

from collections import Counter

import numpy as np


def _prf(confusion: dict[tuple[str, str], int], classes: list[str]) -> dict:
    per_class = {}
    for cls in classes:
        tp = confusion.get((cls, cls), 0)
        fp = sum(v for (t, p), v in confusion.items() if p == cls and t != cls)
        fn = sum(v for (t, p), v in confusion.items() if t == cls and p != cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[cls] = {"precision": precision, "recall": recall, "f1": f1}
    macro = {key: float(np.mean([per_class[c][key] for c in classes])) if classes else 0.0
             for key in ("precision", "recall", "f1")}
    return {"per_class": per_class, "macro": macro}


def evaluate(predictions: list[dict], truths: list[list[dict]]) -> dict:
    """Score aligned prediction results against per-frame truth labels.

    ``predictions`` holds one result dict per sequence (the
    ``predict_sequence`` output); ``truths`` one list of per-frame label
    dicts per sequence with keys level1/level2/level3.
    """
    if len(predictions) != len(truths):
        raise ValueError("length mismatch: predictions vs ground truth")
    report: dict = {"levels": {}}
    for level in (1, 2, 3):
        key = f"level{level}"
        confusion: Counter = Counter()
        hits = total = 0
        for result, truth_frames in zip(predictions, truths):
            frames = result["frames"]
            if len(frames) != len(truth_frames):
                raise ValueError("length mismatch: frames in sequence")
            for rec, truth in zip(frames, truth_frames):
                want = truth.get(key)
                if want is None:
                    continue
                got = rec[key]["label"] if rec[key] is not None else None
                total += 1
                hits += int(got == want)
                confusion[(want, got if got is not None else "<none>")] += 1
        if total == 0:
            continue
        classes = sorted({t for (t, _) in confusion} | {p for (_, p) in confusion})
        report["levels"][key] = {
            "accuracy": hits / total,
            "frames": total,
            "confusion": {f"{t}->{p}": v for (t, p), v in sorted(confusion.items())},
            **_prf(confusion, classes),
        }
    return report


def description_exact_match(predictions: list[dict],
                            references: list[list[dict]]) -> dict:
    """Fraction of segments whose three sentences match the reference exactly.

    Deterministic templates make byte comparison meaningful.  References are
    aligned per sequence as lists of segment dicts with a "descriptions"
    mapping.
    """
    matched = total = 0
    for result, refs in zip(predictions, references):
        segs = result["segments"]
        for seg, ref in zip(segs, refs):
            total += 1
            matched += int(seg["descriptions"] == ref["descriptions"])
        total += abs(len(segs) - len(refs))
    return {"segments": total, "exact_match": matched / total if total else 0.0}
