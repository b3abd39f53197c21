"""Synthetic desk-scale scenarios with exact self-labeled ground truth.

Each scenario builds noiseless hand/object trajectories whose class labels
are known by construction; taxonomy labels and per-frame hand groups are
derived by running the rule modules on the noiseless data, so a noiseless
re-run of the pipeline's scene analysis reproduces them exactly.  Gaussian
position noise is added afterwards.

Geometry convention: objects held in a hand are nested inside the hand box
(containment-family relation, robust to noise); objects resting on the
support surface touch it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import AnnotationSequence, FrameTruth
from .assets import load_affordances
from .bimanual import (TaxonomyThresholds, build_contact_graph,
                       classify_coordination, classify_precision,
                       classify_spatial, hand_groups)
from .numerics import make_rng
from .scene import Aabb3, FrameObservation, ObjectInstance, build_scene_graph

SCENARIOS = ("cut", "stir", "pour", "hammer", "mixed")

HAND_EXTENT = np.array([0.08, 0.08, 0.08])
HELD_EXTENT = np.array([0.05, 0.04, 0.03])
TABLE_EXTENT = np.array([1.0, 0.8, 0.05])


@dataclass
class _Body:
    id: int
    label: str
    extent: np.ndarray
    hand: str
    positions: np.ndarray  # (T, 3), noiseless


def _smootherstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _table(frames: int) -> _Body:
    pos = np.tile(np.array([0.0, 0.0, -TABLE_EXTENT[2] / 2]), (frames, 1))
    return _Body(0, "table", TABLE_EXTENT.copy(), "none", pos)


def _static(body_id: int, label: str, extent, center, frames: int,
            hand: str = "none") -> _Body:
    return _Body(body_id, label, np.asarray(extent, dtype=float), hand,
                 np.tile(np.asarray(center, dtype=float), (frames, 1)))


def _held(body_id: int, label: str, hand_body: _Body) -> _Body:
    return _Body(body_id, label, HELD_EXTENT.copy(), "none",
                 hand_body.positions.copy())


def _cut_bodies(frames: int, fine: bool) -> tuple[list[_Body], tuple[str, str, str]]:
    t = np.arange(frames)
    strokes = 4 if fine else 3
    amp = 0.22 if fine else 0.04
    phase = 2.0 * np.pi * strokes * t / (frames - 1)
    zoff = amp * 0.5 * (1.0 - np.cos(phase))

    right = np.tile(np.array([0.04, 0.0, 0.175]), (frames, 1))
    right[:, 2] += zoff
    left = np.tile(np.array([-0.02, 0.0, 0.02]), (frames, 1))
    left[:, 2] += 0.08 * zoff

    right_hand = _Body(2, "right_hand", HAND_EXTENT.copy(), "right", right)
    left_hand = _Body(1, "left_hand", HAND_EXTENT.copy(), "left", left)
    bodies = [
        _table(frames), left_hand, right_hand,
        _held(3, "knife", right_hand),
        _held(4, "banana", left_hand),
        _static(5, "cutting_board", (0.30, 0.20, 0.02), (0.10, 0.15, 0.01), frames),
    ]
    item = "chop_fine" if fine else "chop_coarse"
    return bodies, ("meal_preparation", "cut", item)


def _stir_bodies(frames: int, rng: np.random.Generator):
    t = np.arange(frames)
    u = t / (frames - 1)
    phi = 2.0 * np.pi * 2.5 * u + 0.9 * np.sin(2.0 * np.pi * u)
    radius = 0.05
    center = np.array([0.06, 0.0, 0.07])
    right = np.stack([center[0] + radius * np.cos(phi),
                      center[1] + radius * np.sin(phi),
                      np.full(frames, center[2])], axis=1)
    wobble_phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    wobble = 0.004 * np.stack(
        [np.sin(2.0 * np.pi * (2 + k) * u + wobble_phase[k]) for k in range(3)],
        axis=1)
    left = np.tile(np.array([-0.06, 0.0, 0.05]), (frames, 1)) + wobble

    right_hand = _Body(2, "right_hand", HAND_EXTENT.copy(), "right", right)
    left_hand = _Body(1, "left_hand", HAND_EXTENT.copy(), "left", left)
    bodies = [
        _table(frames), left_hand, right_hand,
        _held(3, "spoon", right_hand),
        _held(4, "bowl", left_hand),
    ]
    return bodies, ("meal_preparation", "stir", "stir_mix")


def _pour_bodies(frames: int):
    t = np.arange(frames)
    rise = _smootherstep(t / (0.6 * (frames - 1)))
    start = np.array([0.16, 0.0, 0.05])
    end = np.array([0.02, 0.0, 0.20])
    right = start[None, :] + rise[:, None] * (end - start)[None, :]
    settle = t / (frames - 1) > 0.6
    right[settle, 2] += 0.01 * np.sin(2.0 * np.pi * 3.0 * t[settle] / (frames - 1))
    left = np.tile(np.array([-0.02, 0.0, 0.03]), (frames, 1))
    left += 0.07 * (right - right[0])

    right_hand = _Body(2, "right_hand", HAND_EXTENT.copy(), "right", right)
    left_hand = _Body(1, "left_hand", HAND_EXTENT.copy(), "left", left)
    bodies = [
        _table(frames), left_hand, right_hand,
        _held(3, "bottle", right_hand),
        _held(4, "cup", left_hand),
    ]
    return bodies, ("meal_preparation", "pour", "pour_transfer")


def _hammer_bodies(frames: int):
    t = np.arange(frames)
    phase = 2.0 * np.pi * 5.0 * t / (frames - 1)
    zoff = 0.12 * 0.5 * (1.0 - np.cos(phase))
    right = np.tile(np.array([0.05, 0.0, 0.16]), (frames, 1))
    right[:, 2] += zoff
    right[:, 0] += 0.01 * np.sin(phase)
    left = np.tile(np.array([-0.03, 0.0, 0.06]), (frames, 1))
    left[:, 2] += 0.06 * zoff

    right_hand = _Body(2, "right_hand", HAND_EXTENT.copy(), "right", right)
    left_hand = _Body(1, "left_hand", HAND_EXTENT.copy(), "left", left)
    bodies = [
        _table(frames), left_hand, right_hand,
        _held(3, "hammer", right_hand),
        _held(4, "nail", left_hand),
        _static(5, "wood", (0.20, 0.10, 0.05), (0.0, 0.18, 0.025), frames),
    ]
    return bodies, ("assembly", "hammer", "drive_nail")


def _mixed_bodies(frames: int, rng: np.random.Generator):
    half = frames // 2
    cut_bodies, cut_labels = _cut_bodies(half, fine=True)
    pour_bodies, pour_labels = _pour_bodies(frames - half)

    by_label_cut = {b.label: b for b in cut_bodies}
    by_label_pour = {b.label: b for b in pour_bodies}
    labels = ["table", "left_hand", "right_hand", "knife", "banana",
              "cutting_board", "bottle", "cup"]
    rest = {"knife": (0.25, -0.20, HELD_EXTENT[2] / 2),
            "banana": (0.32, -0.12, HELD_EXTENT[2] / 2),
            "bottle": (-0.28, -0.18, HELD_EXTENT[2] / 2),
            "cup": (-0.35, -0.10, HELD_EXTENT[2] / 2),
            "cutting_board": (0.10, 0.15, 0.01)}
    bodies = []
    for bid, label in enumerate(labels):
        parts = []
        for phase, frame_count, table in ((0, half, by_label_cut),
                                          (1, frames - half, by_label_pour)):
            if label in table:
                parts.append(table[label].positions)
            else:
                parts.append(np.tile(np.asarray(rest[label]), (frame_count, 1)))
        src = by_label_cut.get(label) or by_label_pour.get(label)
        bodies.append(_Body(bid, label, src.extent.copy(), src.hand,
                            np.concatenate(parts, axis=0)))
    segments = [(0, half, cut_labels), (half, frames, pour_labels)]
    return bodies, segments


def _body_frames(bodies: list[_Body], fps: float,
                 noise: float, rng: np.random.Generator) -> list[FrameObservation]:
    frames = bodies[0].positions.shape[0]
    noisy = {}
    velocities = {}
    for body in bodies:
        pos = body.positions
        vel = np.zeros_like(pos)
        vel[1:] = (pos[1:] - pos[:-1]) * fps
        vel[0] = vel[1] if frames > 1 else 0.0
        if noise > 0.0 and body.label != "table":
            pos = pos + rng.normal(0.0, noise, pos.shape)
            vel = vel + rng.normal(0.0, noise, vel.shape)
        noisy[body.id] = pos
        velocities[body.id] = vel
    out = []
    for t in range(frames):
        objs = []
        for body in bodies:
            center = noisy[body.id][t]
            half = body.extent / 2.0
            objs.append(ObjectInstance(
                id=body.id, label=body.label,
                box=Aabb3(tuple(center - half), tuple(center + half)),
                position=center.copy(), velocity=velocities[body.id][t].copy(),
                hand=body.hand))
        out.append(FrameObservation(index=t, objects=objs))
    return out


def synth_generate(scenario: str, frames: int = 60, noise: float = 0.0,
                   seed: int = 0, fps: float = 30.0,
                   thresholds: TaxonomyThresholds | None = None,
                   theta_dist: float = 1.0,
                   eps_contact: float = 0.01) -> AnnotationSequence:
    """Generate one annotated sequence for a scenario.

    Ground truth carries action labels at all three levels, per-segment
    taxonomy labels and per-frame hand groups, all derived from the
    noiseless generating program.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    if frames < 30:
        raise ValueError("need at least 30 frames")
    th = thresholds or TaxonomyThresholds()
    rng = make_rng(seed)

    if scenario == "cut":
        bodies, labels = _cut_bodies(frames, fine=(seed % 2 == 0))
        segments = [(0, frames, labels)]
    elif scenario == "stir":
        bodies, labels = _stir_bodies(frames, rng)
        segments = [(0, frames, labels)]
    elif scenario == "pour":
        bodies, labels = _pour_bodies(frames)
        segments = [(0, frames, labels)]
    elif scenario == "hammer":
        bodies, labels = _hammer_bodies(frames)
        segments = [(0, frames, labels)]
    else:
        bodies, segments = _mixed_bodies(frames, rng)

    affordances = load_affordances("kit")
    clean_frames = _body_frames(bodies, fps, 0.0, rng)

    left = next(b for b in bodies if b.hand == "left")
    right = next(b for b in bodies if b.hand == "right")
    seg_taxonomy = {}
    for lo, hi, _ in segments:
        coordination, symmetry, dominant = classify_coordination(
            left.positions[lo:hi], right.positions[lo:hi], th)
        dists = np.linalg.norm(left.positions[lo:hi] - right.positions[lo:hi], axis=1)
        seg_taxonomy[(lo, hi)] = {
            "coordination": coordination, "symmetry": symmetry,
            "dominant": dominant,
            "spatial": classify_spatial(float(np.median(dists)), th),
            "precision": classify_precision(float(np.min(dists)),
                                            float(np.max(dists)), th),
        }

    truths = []
    prev = None
    for t, frame in enumerate(clean_frames):
        graph = build_scene_graph(frame, prev, theta_dist, eps_contact, affordances)
        groups = hand_groups(build_contact_graph(graph, "table"))
        prev = frame
        lo, hi, labels = next(s for s in segments if s[0] <= t < s[1])
        hand_ids = {left.id, right.id}
        truths.append(FrameTruth(
            level1=labels[0], level2=labels[1], level3=labels[2],
            taxonomy=seg_taxonomy[(lo, hi)],
            hand_groups={"left": sorted(groups.left - hand_ids),
                         "right": sorted(groups.right - hand_ids)}))

    noisy_frames = clean_frames if noise <= 0.0 else _body_frames(
        bodies, fps, noise, rng)
    return AnnotationSequence(
        dataset=f"synthetic-{scenario}",
        fps=fps,
        support_label="table",
        action_vocabulary=list(affordances.vocabulary),
        hierarchy="synthetic_v1",
        frames=noisy_frames,
        truths=truths,
    )
