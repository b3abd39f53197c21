"""Annotation ingestion: per-frame object records plus ground truth.

The on-disk format is one JSON document per sequence (schema in
docs/formats.md).  Parsing validates the schema eagerly and names the
offending frame and field; floats survive a save/load round trip exactly
because they are serialized with full repr precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .scene import Aabb3, FrameObservation, HAND_SIDES, ObjectInstance


@dataclass
class FrameTruth:
    level1: str | None = None
    level2: str | None = None
    level3: str | None = None
    taxonomy: dict | None = None          # coordination/symmetry/... strings
    hand_groups: dict | None = None       # {"left": [ids], "right": [ids]}

    def labels(self) -> dict:
        return {"level1": self.level1, "level2": self.level2, "level3": self.level3}


@dataclass
class AnnotationSequence:
    """One video's worth of observations and optional ground truth."""

    dataset: str
    fps: float
    support_label: str
    action_vocabulary: list[str]
    hierarchy: str
    frames: list[FrameObservation]
    truths: list[FrameTruth] = field(default_factory=list)

    def __post_init__(self):
        if not self.truths:
            self.truths = [FrameTruth() for _ in self.frames]
        if len(self.truths) != len(self.frames):
            raise ValueError("one truth record per frame required")

    def __len__(self) -> int:
        return len(self.frames)


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ValueError(f"{where}: missing field {key!r}")
    return doc[key]


def _vec3(value, where: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ValueError(f"{where}: expected a 3-vector, got {value!r}")
    return np.asarray([float(v) for v in value])


def _parse_object(doc: dict, where: str) -> ObjectInstance:
    oid = _require(doc, "id", where)
    label = _require(doc, "label", where)
    if not isinstance(label, str) or not label:
        raise ValueError(f"{where}: label must be a nonempty string")
    lo = _vec3(_require(doc, "aabb_min", where), f"{where}.aabb_min")
    hi = _vec3(_require(doc, "aabb_max", where), f"{where}.aabb_max")
    hand = doc.get("hand", "none")
    if hand not in HAND_SIDES:
        raise ValueError(f"{where}: hand must be one of {HAND_SIDES}, got {hand!r}")
    position = _vec3(doc["position"], f"{where}.position") if "position" in doc else None
    velocity = _vec3(doc["velocity"], f"{where}.velocity") if "velocity" in doc else None
    try:
        box = Aabb3(tuple(lo), tuple(hi))
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None
    return ObjectInstance(id=int(oid), label=label, box=box,
                          position=position, velocity=velocity, hand=hand)


def _parse_frame(doc: dict, seq_index: int) -> tuple[FrameObservation, FrameTruth]:
    where = f"frame[{seq_index}]"
    index = int(_require(doc, "index", where))
    objects = []
    sides_seen = set()
    for k, obj_doc in enumerate(_require(doc, "objects", where)):
        obj = _parse_object(obj_doc, f"{where}.objects[{k}]")
        if obj.hand != "none":
            if obj.hand in sides_seen:
                raise ValueError(f"{where}: duplicate {obj.hand} hand")
            sides_seen.add(obj.hand)
        objects.append(obj)
    try:
        frame = FrameObservation(index=index, objects=objects)
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None

    truth_doc = doc.get("truth") or {}
    truth = FrameTruth(
        level1=truth_doc.get("level1"),
        level2=truth_doc.get("level2"),
        level3=truth_doc.get("level3"),
        taxonomy=truth_doc.get("taxonomy"),
        hand_groups=truth_doc.get("hand_groups"),
    )
    return frame, truth


def load_annotations(path, hierarchy=None) -> AnnotationSequence:
    """Parse and validate one annotation file.

    When a hierarchy is supplied, ground-truth labels are checked against it
    (unknown labels are rejected with the frame named).
    """
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return annotations_from_dict(doc, hierarchy=hierarchy)


def annotations_from_dict(doc: dict, hierarchy=None) -> AnnotationSequence:
    frames: list[FrameObservation] = []
    truths: list[FrameTruth] = []
    last_index = None
    for k, frame_doc in enumerate(_require(doc, "frames", "file")):
        frame, truth = _parse_frame(frame_doc, k)
        if last_index is not None and frame.index <= last_index:
            raise ValueError(f"frame[{k}]: non-monotone frame index {frame.index}")
        last_index = frame.index
        frames.append(frame)
        truths.append(truth)

    seq = AnnotationSequence(
        dataset=str(_require(doc, "dataset", "header")),
        fps=float(_require(doc, "fps", "header")),
        support_label=str(_require(doc, "support_label", "header")),
        action_vocabulary=list(_require(doc, "action_vocabulary", "header")),
        hierarchy=str(_require(doc, "hierarchy", "header")),
        frames=frames,
        truths=truths,
    )
    if hierarchy is not None:
        for k, truth in enumerate(seq.truths):
            if truth.level1 is None:
                continue
            try:
                hierarchy.truth_path({"level1": truth.level1, "level2": truth.level2,
                                      "level3": truth.level3})
            except (KeyError, ValueError) as exc:
                raise ValueError(f"frame[{k}]: unknown label: {exc}") from None
    return seq


def annotations_to_dict(seq: AnnotationSequence) -> dict:
    frames = []
    for frame, truth in zip(seq.frames, seq.truths):
        objects = []
        for obj in frame.objects:
            objects.append({
                "id": obj.id,
                "label": obj.label,
                "aabb_min": list(obj.box.lo),
                "aabb_max": list(obj.box.hi),
                "position": [float(v) for v in obj.position],
                "velocity": [float(v) for v in obj.velocity],
                "hand": obj.hand,
            })
        doc = {"index": frame.index, "objects": objects}
        truth_doc = {}
        for key in ("level1", "level2", "level3"):
            value = getattr(truth, key)
            if value is not None:
                truth_doc[key] = value
        if truth.taxonomy is not None:
            truth_doc["taxonomy"] = truth.taxonomy
        if truth.hand_groups is not None:
            truth_doc["hand_groups"] = truth.hand_groups
        if truth_doc:
            doc["truth"] = truth_doc
        frames.append(doc)
    return {
        "dataset": seq.dataset,
        "fps": seq.fps,
        "support_label": seq.support_label,
        "action_vocabulary": seq.action_vocabulary,
        "hierarchy": seq.hierarchy,
        "frames": frames,
    }


def save_annotations(seq: AnnotationSequence, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(annotations_to_dict(seq), fh, indent=1)
        fh.write("\n")
