"""Contact graphs, hand groups and the enriched bimanual taxonomy.

Hand groups are the objects path-connected to a hand in the per-frame
contact graph (support surface excluded).  The taxonomy labels a bimanual
segment by coordination, symmetry, dominance, hand spatial relation
(close/crossed/stacked by hand distance) and precision level (by the spread
of that distance), and encodes the tuple as five concatenated one-hot blocks
of total width 13.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .scene import CONTACT_FAMILY, SceneGraph

COORDINATION = ("coordinated", "uncoordinated")
SYMMETRY = ("symmetric", "asymmetric")
DOMINANT = ("left", "right", "none")
SPATIAL = ("close", "crossed", "stacked")
PRECISION = ("low", "medium", "high")

ONE_HOT_WIDTH = len(COORDINATION) + len(SYMMETRY) + len(DOMINANT) + len(SPATIAL) + len(PRECISION)


@dataclass
class ContactGraph:
    """Binary symmetric adjacency over hands and objects for one frame."""

    node_ids: list[int]
    hands: dict[str, int]          # side -> node id (present hands only)
    adjacency: np.ndarray          # (n, n) uint8, zero diagonal

    def index_of(self, node_id: int) -> int:
        return self.node_ids.index(node_id)


@dataclass
class HandGroups:
    left: set[int]
    right: set[int]
    merged: bool


@dataclass
class TaxonomyThresholds:
    """Distance cutoffs (meters) plus coordination/symmetry parameters."""

    d_close: float = 0.05
    d_stacked: float = 0.15
    d_low_precision: float = 0.08
    d_medium_precision: float = 0.16
    rho_coordination: float = 0.5
    speed_ratio_bound: float = 2.0

    def __post_init__(self):
        if not 0 < self.d_close < self.d_stacked:
            raise ValueError("need 0 < d_close < d_stacked")
        if not 0 < self.d_low_precision < self.d_medium_precision:
            raise ValueError("need 0 < d_low_precision < d_medium_precision")


@dataclass(frozen=True)
class TaxonomyLabel:
    coordination: str
    symmetry: str
    dominant: str
    spatial: str
    precision: str

    def __post_init__(self):
        for value, domain in ((self.coordination, COORDINATION),
                              (self.symmetry, SYMMETRY),
                              (self.dominant, DOMINANT),
                              (self.spatial, SPATIAL),
                              (self.precision, PRECISION)):
            if value not in domain:
                raise ValueError(f"{value!r} not in {domain}")
        if self.symmetry == "symmetric" and self.dominant != "none":
            raise ValueError("dominant hand requires an asymmetric action")


def build_contact_graph(graph: SceneGraph, support_label: str) -> ContactGraph:
    """Adjacency of physical contacts, dropping the support surface.

    An edge counts as contact when its spatial relation is in the contact
    family (contact plus the containment variants, which imply touch).
    """
    keep = [k for k, label in enumerate(graph.labels) if label != support_label]
    ids = [graph.node_ids[k] for k in keep]
    index = {node_id: i for i, node_id in enumerate(ids)}
    adj = np.zeros((len(ids), len(ids)), dtype=np.uint8)
    for edge in graph.spatial_edges:
        if edge.relation not in CONTACT_FAMILY:
            continue
        if edge.i not in index or edge.j not in index:
            continue
        a, b = index[edge.i], index[edge.j]
        adj[a, b] = 1
        adj[b, a] = 1
    hands = {}
    for k in keep:
        if graph.hands[k] != "none":
            hands[graph.hands[k]] = graph.node_ids[k]
    return ContactGraph(node_ids=ids, hands=hands, adjacency=adj)


def hand_groups(cg: ContactGraph) -> HandGroups:
    """Objects reachable from each hand by BFS; merged when hands connect."""
    def reachable(side: str) -> set[int]:
        if side not in cg.hands:
            return set()
        start = cg.index_of(cg.hands[side])
        seen = {start}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for nxt in np.nonzero(cg.adjacency[cur])[0]:
                if int(nxt) not in seen:
                    seen.add(int(nxt))
                    queue.append(int(nxt))
        return {cg.node_ids[k] for k in seen}

    left = reachable("left")
    right = reachable("right")
    merged = bool(left and right and cg.hands.get("right") in left)
    return HandGroups(left=left, right=right, merged=merged)


# ---------------------------------------------------------------------------
# Taxonomy classifiers.
# ---------------------------------------------------------------------------


def classify_spatial(d: float, th: TaxonomyThresholds) -> str:
    """close below d_close, crossed up to d_stacked, stacked at or above."""
    if d < 0:
        raise ValueError("distance must be nonnegative")
    if d < th.d_close:
        return "close"
    if d < th.d_stacked:
        return "crossed"
    return "stacked"


def classify_precision(d_min: float, d_max: float, th: TaxonomyThresholds) -> str:
    """Precision level from the spread of the tool/target distance."""
    if d_max < d_min:
        raise ValueError("d_max must not be below d_min")
    spread = d_max - d_min
    if spread < th.d_low_precision:
        return "low"
    if spread < th.d_medium_precision:
        return "medium"
    return "high"


def _speed_profile(traj: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.diff(traj, axis=0), axis=1)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    sa, sb = np.std(a), np.std(b)
    if sa < 1e-12 or sb < 1e-12:
        # undefined correlation: identical uniform motion still counts as
        # co-varying, anything else falls back to zero
        if sa < 1e-12 and sb < 1e-12 and abs(np.mean(a) - np.mean(b)) < 1e-12 \
                and np.mean(a) > 1e-12:
            return 1.0
        return 0.0
    return float(np.mean((a - np.mean(a)) * (b - np.mean(b))) / (sa * sb))


def classify_coordination(left_traj, right_traj,
                          th: TaxonomyThresholds) -> tuple[str, str, str]:
    """(coordination, symmetry, dominant) from time-aligned hand paths.

    Coordinated when the speed profiles correlate strongly; symmetric when
    mean speeds are within the ratio bound and the midline-mirrored net
    displacements do not oppose; the faster hand dominates asymmetric
    actions.
    """
    left = np.asarray(left_traj, dtype=np.float64)
    right = np.asarray(right_traj, dtype=np.float64)
    if left.shape != right.shape or left.ndim != 2:
        raise ValueError("trajectories must share an (n_frames, 3) shape")
    if left.shape[0] < 2:
        raise ValueError("trajectory too short: need at least 2 frames")

    speed_l = _speed_profile(left)
    speed_r = _speed_profile(right)
    coordination = "coordinated" if abs(_pearson(speed_l, speed_r)) >= th.rho_coordination \
        else "uncoordinated"

    mean_l, mean_r = float(np.mean(speed_l)), float(np.mean(speed_r))
    if mean_l < 1e-12 and mean_r < 1e-12:
        ratio_ok = True
    elif min(mean_l, mean_r) < 1e-12:
        ratio_ok = False
    else:
        ratio = mean_l / mean_r
        ratio_ok = 1.0 / th.speed_ratio_bound <= ratio <= th.speed_ratio_bound

    disp_l = left[-1] - left[0]
    disp_r = right[-1] - right[0]
    mirrored = disp_l * np.array([-1.0, 1.0, 1.0])  # reflect across the midline
    norm = np.linalg.norm(mirrored) * np.linalg.norm(disp_r)
    mirror_ok = norm < 1e-12 or float(np.dot(mirrored, disp_r)) >= 0.0

    if ratio_ok and mirror_ok:
        return coordination, "symmetric", "none"
    if abs(mean_l - mean_r) < 1e-12:
        return coordination, "asymmetric", "none"
    return coordination, "asymmetric", "left" if mean_l > mean_r else "right"


def taxonomy_one_hot(label: TaxonomyLabel) -> np.ndarray:
    """Concatenated one-hot blocks (2+2+3+3+3 = 13), exactly one hot each."""
    blocks = []
    for value, domain in ((label.coordination, COORDINATION),
                          (label.symmetry, SYMMETRY),
                          (label.dominant, DOMINANT),
                          (label.spatial, SPATIAL),
                          (label.precision, PRECISION)):
        block = np.zeros(len(domain))
        block[domain.index(value)] = 1.0
        blocks.append(block)
    return np.concatenate(blocks)


def taxonomy_decode(vector: np.ndarray) -> TaxonomyLabel:
    """Inverse of :func:`taxonomy_one_hot` on valid codewords."""
    vector = np.asarray(vector)
    if vector.shape != (ONE_HOT_WIDTH,):
        raise ValueError(f"expected width {ONE_HOT_WIDTH}")
    values = []
    offset = 0
    for domain in (COORDINATION, SYMMETRY, DOMINANT, SPATIAL, PRECISION):
        block = vector[offset:offset + len(domain)]
        if not np.isclose(np.sum(block), 1.0):
            raise ValueError("block is not one-hot")
        values.append(domain[int(np.argmax(block))])
        offset += len(domain)
    return TaxonomyLabel(*values)


def aggregate_level3(g3, one_hot: np.ndarray):
    """Concatenate the level-3 temporal feature with the taxonomy encoding."""
    from . import autodiff as ad
    if isinstance(g3, ad.Tensor):
        return ad.concat([g3, ad.Tensor(one_hot)])
    return np.concatenate([np.asarray(g3), one_hot])
