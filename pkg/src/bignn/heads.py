"""Hierarchical action classification, probability smoothing and decisions.

The action tree (categories -> sublevels -> items, at most five named tiers
in config files; the first three drive classification) gets one small dense
head per slot: one over categories, one per category over its sublevels, one
per (category, sublevel) over items.  Each head is two LeakyReLU dense
layers (128, 64) and a linear softmax output.  Per-frame level distributions
follow the chain rule over the tree; branches that end early persist as
terminal classes so every level's distribution sums to one.  Decisions are
made on centered moving-average smoothed curves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .numerics import init

MAX_DEPTH = 5
HIDDEN = (128, 64)


@dataclass
class HierarchyNode:
    name: str
    display: str
    children: list["HierarchyNode"] = field(default_factory=list)


def _parse_node(doc, depth: int) -> HierarchyNode:
    if depth > MAX_DEPTH:
        raise ValueError(f"hierarchy deeper than {MAX_DEPTH} levels")
    if isinstance(doc, str):
        return HierarchyNode(name=doc, display=doc)
    name = doc["name"]
    node = HierarchyNode(name=name, display=doc.get("display", name))
    names = set()
    for child in doc.get("children", []):
        parsed = _parse_node(child, depth + 1)
        if parsed.name in names:
            raise ValueError(f"duplicate sibling name {parsed.name!r} under {name!r}")
        names.add(parsed.name)
        node.children.append(parsed)
    return node


@dataclass
class HierarchySpec:
    """The configured action tree; paths are tuples of node names."""

    categories: list[HierarchyNode]

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("duplicate category names")

    @classmethod
    def from_dict(cls, doc) -> "HierarchySpec":
        cats = []
        names = set()
        for entry in doc["categories"]:
            node = _parse_node(entry, depth=1)
            if node.name in names:
                raise ValueError(f"duplicate category name {node.name!r}")
            names.add(node.name)
            cats.append(node)
        return cls(categories=cats)

    @classmethod
    def from_file(cls, path) -> "HierarchySpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def category(self, name: str) -> HierarchyNode:
        for node in self.categories:
            if node.name == name:
                return node
        raise KeyError(f"unknown category {name!r}")

    def node_at(self, path: tuple[str, ...]) -> HierarchyNode:
        node = self.category(path[0])
        for name in path[1:]:
            node = next(c for c in node.children if c.name == name)
        return node

    def level_classes(self, level: int) -> list[tuple[str, ...]]:
        """All depth-``level`` paths; early-ending branches persist as-is."""
        paths = [(c.name,) for c in self.categories]
        for depth in range(2, level + 1):
            grown = []
            for path in paths:
                children = self.node_at(path).children if len(path) == depth - 1 else []
                if children:
                    grown.extend(path + (c.name,) for c in children)
                else:
                    grown.append(path)
            paths = grown
        return paths

    def slots(self) -> list[tuple[str, ...]]:
        """Classification slots: () for categories, then per-parent paths."""
        out: list[tuple[str, ...]] = [()]
        for cat in self.categories:
            if cat.children:
                out.append((cat.name,))
                for sub in cat.children:
                    if sub.children:
                        out.append((cat.name, sub.name))
        return out

    def slot_classes(self, slot: tuple[str, ...]) -> list[str]:
        if slot == ():
            return [c.name for c in self.categories]
        return [c.name for c in self.node_at(slot).children]

    def truth_path(self, labels: dict) -> tuple[str, ...]:
        """Validate a level1/level2/level3 label dict into a tree path."""
        path = (labels["level1"],)
        node = self.category(path[0])
        for key in ("level2", "level3"):
            name = labels.get(key)
            if name is None:
                break
            if not any(c.name == name for c in node.children):
                raise ValueError(f"{name!r} is not a child of {'/'.join(path)}")
            path = path + (name,)
            node = next(c for c in node.children if c.name == name)
        return path


# ---------------------------------------------------------------------------
# Heads.
# ---------------------------------------------------------------------------


@dataclass
class ClassifierHead:
    """Dense D_in -> 128 -> 64 -> n_classes with biases."""

    weights: list[ad.Tensor]
    biases: list[ad.Tensor]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def named(self, prefix: str) -> dict[str, ad.Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.dense{i}.W"] = w
            out[f"{prefix}.dense{i}.b"] = b
        return out


def build_head(n_in: int, n_out: int, rng: np.random.Generator,
               prefix: str) -> ClassifierHead:
    sizes = [n_in, HIDDEN[0], HIDDEN[1], n_out]
    weights, biases = [], []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        weights.append(ad.parameter(init("he_normal", [b, a], rng),
                                    name=f"{prefix}.dense{i}.W"))
        biases.append(ad.parameter(np.zeros(b), name=f"{prefix}.dense{i}.b"))
    return ClassifierHead(weights=weights, biases=biases)


def head_forward(x: ad.Tensor, head: ClassifierHead,
                 slope: float = 0.2) -> ad.Tensor:
    """Two LeakyReLU dense layers, then linear + softmax.

    Accepts a single feature vector or a (frames, features) batch.
    """
    if x.shape[-1] != head.n_in:
        raise ValueError(f"width mismatch: head expects {head.n_in}, "
                         f"got {x.shape[-1]}")
    batched = len(x.shape) == 2
    h = x
    for w, b in zip(head.weights[:-1], head.biases[:-1]):
        z = ad.matmul(h, ad.transpose(w))
        h = ad.leaky_relu(ad.add_rowvec(z, b) if batched else z + b, slope)
    logits = ad.matmul(h, ad.transpose(head.weights[-1]))
    logits = ad.add_rowvec(logits, head.biases[-1]) if batched \
        else logits + head.biases[-1]
    return ad.softmax_rows(logits) if batched else ad.softmax1d(logits)


def cross_entropy(probs: ad.Tensor, one_hot: np.ndarray) -> ad.Tensor:
    """-sum(y log p) for a single one-hot target."""
    one_hot = np.asarray(one_hot, dtype=np.float64)
    if not (np.all((one_hot == 0) | (one_hot == 1)) and np.sum(one_hot) == 1):
        raise ValueError("target is not one-hot")
    clipped = ad.maximum(probs, ad.Tensor(np.full(probs.shape, 1e-300)))
    return -ad.tsum(ad.log(clipped) * ad.Tensor(one_hot))


def hierarchical_loss(slot_probs: dict[tuple[str, ...], ad.Tensor],
                      truth_path: tuple[str, ...],
                      spec: HierarchySpec) -> ad.Tensor:
    """Sum of per-slot cross-entropies along the true path.

    Slots the true path never reaches (absent sublevels/items) contribute
    nothing.
    """
    total = ad.Tensor(0.0)
    for depth in range(len(truth_path)):
        slot = truth_path[:depth]
        if slot not in slot_probs:
            continue
        classes = spec.slot_classes(slot)
        target = np.zeros(len(classes))
        target[classes.index(truth_path[depth])] = 1.0
        total = total + cross_entropy(slot_probs[slot], target)
    return total


# ---------------------------------------------------------------------------
# Level distributions, smoothing, decisions.
# ---------------------------------------------------------------------------


def level_distribution(spec: HierarchySpec, slot_probs: dict, level: int) -> np.ndarray:
    """Chain-rule probability over the level's classes (sums to one)."""
    classes = spec.level_classes(level)
    probs = np.zeros(len(classes))
    for c, path in enumerate(classes):
        p = 1.0
        for depth in range(len(path)):
            slot = path[:depth]
            if slot not in slot_probs:
                continue
            vector = slot_probs[slot]
            values = vector.data if isinstance(vector, ad.Tensor) else np.asarray(vector)
            p *= float(values[spec.slot_classes(slot).index(path[depth])])
        probs[c] = p
    return probs


def smooth(curve: np.ndarray, window: int = 5) -> np.ndarray:
    """Centered moving average per class, truncated and renormalized.

    Edge windows are averaged over the frames actually present; each
    smoothed per-frame distribution is then renormalized to sum to one.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and positive")
    curve = np.asarray(curve, dtype=np.float64)
    n, _ = curve.shape
    half = window // 2
    out = np.empty_like(curve)
    for t in range(n):
        lo, hi = max(0, t - half), min(n, t + half + 1)
        out[t] = np.mean(curve[lo:hi], axis=0)
    sums = np.sum(out, axis=1, keepdims=True)
    return np.divide(out, sums, out=np.zeros_like(out), where=sums > 0)


def decide(curve: np.ndarray) -> np.ndarray:
    """Per-frame argmax with lowest-index tie-break."""
    return np.argmax(np.asarray(curve), axis=1)
