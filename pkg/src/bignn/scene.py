"""Per-frame world state and spatio-temporal scene graph construction.

A frame is a set of labeled objects with 3-D axis-aligned boxes, positions
and velocities (hands are ordinary objects carrying a side flag).  From a
frame we derive:

* spatial edges between object pairs closer than ``theta_dist``, each labeled
  with one of the 13 static spatial relation (SSR) tokens,
* candidate action edges from an affordance table (label pair -> actions),
* temporal deltas of relative positions against the previous frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import eta_normalize

SSR_TOKENS = (
    "contact", "above", "below", "around", "left", "right", "front", "behind",
    "contain", "partial contain", "within", "partial within", "cross",
)

# Directional and containment tokens flip when the argument order flips.
SSR_PARTNER = {
    "contact": "contact", "around": "around", "cross": "cross",
    "above": "below", "below": "above",
    "left": "right", "right": "left",
    "front": "behind", "behind": "front",
    "contain": "within", "within": "contain",
    "partial contain": "partial within", "partial within": "partial contain",
}

CONTACT_FAMILY = frozenset(
    {"contact", "contain", "partial contain", "within", "partial within"})

HAND_SIDES = ("none", "left", "right")


@dataclass(frozen=True)
class Aabb3:
    """Axis-aligned box in meters, ``lo[k] <= hi[k]`` on every axis."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box: lo={self.lo} hi={self.hi}")

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    def volume(self) -> float:
        return float(np.prod(self.extent))


@dataclass
class ObjectInstance:
    """One labeled object in one frame."""

    id: int
    label: str
    box: Aabb3
    position: np.ndarray | None = None  # box center unless provided
    velocity: np.ndarray | None = None
    hand: str = "none"

    def __post_init__(self):
        if not self.label:
            raise ValueError("object label must be nonempty")
        if self.hand not in HAND_SIDES:
            raise ValueError(f"unknown hand side {self.hand!r}")
        if self.position is None:
            self.position = self.box.center
        self.position = np.asarray(self.position, dtype=np.float64)
        if self.velocity is None:
            self.velocity = np.zeros(3)
        self.velocity = np.asarray(self.velocity, dtype=np.float64)


@dataclass
class FrameObservation:
    """All objects visible at one frame index."""

    index: int
    objects: list[ObjectInstance]

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate object id in frame {self.index}")
        self._by_id = {o.id: o for o in self.objects}

    def get(self, object_id: int) -> ObjectInstance:
        try:
            return self._by_id[object_id]
        except KeyError:
            raise KeyError(f"object not tracked: id {object_id} missing in frame "
                           f"{self.index}") from None


@dataclass
class SpatialEdge:
    """SSR edge, stored once per unordered pair with i < j orientation."""

    i: int
    j: int
    relation: str
    pos_i: np.ndarray  # eta-normalized copies
    pos_j: np.ndarray


@dataclass
class ActionEdge:
    """Candidate action between a pair; the importance score is learned."""

    i: int
    j: int
    action: int
    score: float
    pos_i: np.ndarray
    pos_j: np.ndarray


@dataclass
class SceneGraph:
    """Nodes plus spatial (E1) and action (E3) edges for one frame.

    Temporal deltas (E2) are computed lazily from ``prev`` so the graph stays
    a pure function of two consecutive observations.
    """

    frame_index: int
    node_ids: list[int]
    labels: list[str]
    hands: list[str]
    norm_positions: np.ndarray  # (n, 3) eta-normalized
    norm_velocities: np.ndarray  # (n, 3)
    spatial_edges: list[SpatialEdge]
    action_edges: list[ActionEdge]
    prev: FrameObservation | None = None
    observation: FrameObservation | None = None

    def serialize(self) -> str:
        """Canonical JSON; identical frames give byte-identical strings."""
        doc = {
            "frame": self.frame_index,
            "nodes": [
                {"id": i, "label": lab, "hand": hand,
                 "p": [repr(float(v)) for v in self.norm_positions[k]],
                 "s": [repr(float(v)) for v in self.norm_velocities[k]]}
                for k, (i, lab, hand) in enumerate(zip(self.node_ids, self.labels, self.hands))
            ],
            "spatial": [[e.i, e.j, e.relation] for e in self.spatial_edges],
            "action": [[e.i, e.j, e.action] for e in self.action_edges],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Static spatial relations.
#
# The decision procedure is evaluated in a fixed precedence so that exactly
# one token fires for any box pair:
#   1. containment (full, then partial by intersection/smaller-volume >= 0.5;
#      skipped for equal volumes, which cannot be oriented),
#   2. around: a mutual pierce, one box straddling the other on exactly two
#      axes while being straddled on the remaining axis (a ring on a post);
#      an axis-aligned "around" necessarily intersects, so this must come
#      before the cross test,
#   3. cross: positive intersection that majority-contains neither box,
#   4. contact: surface gap within eps on all axes and real overlap on >= 2,
#   5. directional token on the axis with the largest normalized center
#      separation, preferring axes whose other two projections overlap;
#      ties break z > x > y.
# ---------------------------------------------------------------------------

_AXIS_ORDER = (2, 0, 1)  # z, x, y tie-break preference
_AXIS_TOKENS = {0: ("right", "left"), 1: ("behind", "front"), 2: ("above", "below")}


def _axis_gap(a: Aabb3, b: Aabb3, k: int) -> float:
    return max(0.0, a.lo[k] - b.hi[k], b.lo[k] - a.hi[k])


def _axis_overlap(a: Aabb3, b: Aabb3, k: int) -> float:
    return min(a.hi[k], b.hi[k]) - max(a.lo[k], b.lo[k])


def _straddles(outer: Aabb3, inner: Aabb3, k: int) -> bool:
    return outer.lo[k] < inner.lo[k] and outer.hi[k] > inner.hi[k]


def compute_ssr(a: Aabb3, b: Aabb3, eps_contact: float = 0.01) -> str:
    """Static spatial relation of ``a`` relative to ``b``.

    Total on arbitrary box pairs; swapping arguments maps directional tokens
    to their partners and fixes contact/around/cross.
    """
    overlaps = [_axis_overlap(a, b, k) for k in range(3)]
    gaps = [_axis_gap(a, b, k) for k in range(3)]
    inter_vol = float(np.prod([max(0.0, o) for o in overlaps]))
    vol_a, vol_b = a.volume(), b.volume()

    # 1. containment, oriented by strict volume order
    if vol_a != vol_b:
        small, big, small_is_a = (a, b, True) if vol_a < vol_b else (b, a, False)
        fully_inside = all(big.lo[k] <= small.lo[k] and small.hi[k] <= big.hi[k]
                           for k in range(3))
        small_vol = min(vol_a, vol_b)
        ratio = inter_vol / small_vol if small_vol > 0.0 else (
            1.0 if fully_inside else 0.0)
        if fully_inside:
            return "within" if small_is_a else "contain"
        if ratio >= 0.5:
            return "partial within" if small_is_a else "partial contain"
        majority = False
    else:
        small_vol = vol_a
        majority = small_vol > 0.0 and inter_vol / small_vol >= 0.5

    # 2. around (mutual pierce)
    ab = [_straddles(a, b, k) for k in range(3)]
    ba = [_straddles(b, a, k) for k in range(3)]
    for outer, inner in ((ab, ba), (ba, ab)):
        if sum(outer) == 2 and inner[outer.index(False)]:
            return "around"

    # 3. cross
    if inter_vol > 0.0 and not majority:
        return "cross"

    # 4. contact
    if max(gaps) <= eps_contact and sum(1 for o in overlaps if o > 0.0) >= 2:
        return "contact"

    # 5. directional
    ca, cb = a.center, b.center
    half_sum = (a.extent + b.extent) / 2.0

    def separation(k: int) -> float:
        denom = half_sum[k] if half_sum[k] > 0.0 else 1.0
        return abs(ca[k] - cb[k]) / denom

    if all(ca[k] == cb[k] for k in range(3)):
        return "contact"  # concentric degenerate pair, cannot be oriented

    preferred = [k for k in _AXIS_ORDER
                 if all(overlaps[m] > 0.0 for m in range(3) if m != k)]
    candidates = preferred if preferred else list(_AXIS_ORDER)
    axis = max(candidates, key=lambda k: (separation(k), -_AXIS_ORDER.index(k)))
    hi_token, lo_token = _AXIS_TOKENS[axis]
    return hi_token if ca[axis] >= cb[axis] else lo_token


# ---------------------------------------------------------------------------
# Affordances and graph assembly.
# ---------------------------------------------------------------------------


@dataclass
class AffordanceTable:
    """Which actions are plausible between two object labels.

    ``vocabulary`` fixes action indices; ``pairs`` maps unordered label pairs
    to action-name lists.  Hand objects look up under the generic label
    ``hand`` regardless of their own label.
    """

    vocabulary: list[str]
    pairs: dict[frozenset, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("duplicate action names in vocabulary")
        self.index = {name: k for k, name in enumerate(self.vocabulary)}
        for names in self.pairs.values():
            for name in names:
                if name not in self.index:
                    raise ValueError(f"action {name!r} not in vocabulary")

    @classmethod
    def from_file(cls, path) -> "AffordanceTable":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        pairs = {frozenset(entry["labels"]): list(entry["actions"])
                 for entry in doc["pairs"]}
        return cls(vocabulary=list(doc["vocabulary"]), pairs=pairs)

    def actions_for(self, label_i: str, label_j: str) -> set[int]:
        names = self.pairs.get(frozenset((label_i, label_j)), ())
        return {self.index[name] for name in names}


def candidate_actions(label_i: str, label_j: str, affordances: AffordanceTable) -> set[int]:
    """Action indices plausible between two labels; unknown pairs are empty."""
    return affordances.actions_for(label_i, label_j)


def affordance_label(obj: ObjectInstance) -> str:
    return "hand" if obj.hand != "none" else obj.label


def build_scene_graph(frame: FrameObservation, prev: FrameObservation | None,
                      theta_dist: float, eps_contact: float,
                      affordances: AffordanceTable) -> SceneGraph:
    """Assemble nodes, SSR edges and candidate action edges for one frame.

    Spatial edges connect every unordered pair with center distance strictly
    below ``theta_dist``; action edges are emitted for every affordance of
    such a pair.  Positions and velocities are eta-normalized per coordinate
    across the frame's objects.
    """
    objs = frame.objects
    n = len(objs)
    positions = np.stack([o.position for o in objs]) if n else np.zeros((0, 3))
    velocities = np.stack([o.velocity for o in objs]) if n else np.zeros((0, 3))
    norm_p = np.column_stack([eta_normalize(positions[:, k]) for k in range(3)]) \
        if n else positions
    norm_s = np.column_stack([eta_normalize(velocities[:, k]) for k in range(3)]) \
        if n else velocities

    spatial: list[SpatialEdge] = []
    action: list[ActionEdge] = []
    order = sorted(range(n), key=lambda k: objs[k].id)
    for ai in range(n):
        for aj in range(ai + 1, n):
            oi, oj = objs[order[ai]], objs[order[aj]]
            ki, kj = order[ai], order[aj]
            dist = float(np.linalg.norm(oi.position - oj.position))
            if dist >= theta_dist:
                continue
            relation = compute_ssr(oi.box, oj.box, eps_contact)
            spatial.append(SpatialEdge(oi.id, oj.id, relation,
                                       norm_p[ki].copy(), norm_p[kj].copy()))
            for k in sorted(candidate_actions(affordance_label(oi),
                                              affordance_label(oj), affordances)):
                action.append(ActionEdge(oi.id, oj.id, k, 0.0,
                                         norm_p[ki].copy(), norm_p[kj].copy()))

    return SceneGraph(
        frame_index=frame.index,
        node_ids=[o.id for o in objs],
        labels=[o.label for o in objs],
        hands=[o.hand for o in objs],
        norm_positions=norm_p,
        norm_velocities=norm_s,
        spatial_edges=spatial,
        action_edges=action,
        prev=prev,
        observation=frame,
    )


def temporal_delta(prev: FrameObservation, cur: FrameObservation,
                   i: int, j: int) -> np.ndarray:
    """Change of the relative position p_j - p_i between two frames."""
    rel_now = cur.get(j).position - cur.get(i).position
    rel_before = prev.get(j).position - prev.get(i).position
    return rel_now - rel_before
