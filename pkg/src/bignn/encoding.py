"""Numeric encoding of scene-graph tuples and its contrastively trained maps.

Symbolic parts (object labels, relation tokens, action names) are looked up
in an embedding table; numeric parts (normalized positions/velocities and the
learned action importance score) are appended raw.  The resulting feature
rows H_hat / E_hat / A_hat are refined by elementwise (Hadamard) learnable
vectors L_H / L_E / L_A, trained with a margin contrastive loss on labeled
instance pairs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .numerics import Adam, init, make_rng
from .scene import SceneGraph

NODE_NUMERIC = 6    # eta(p), eta(s)
EDGE_NUMERIC = 6    # eta(p_i), eta(p_j)
ACTION_NUMERIC = 7  # eta(p_i), eta(p_j), importance score


def _hash_seed(token: str, salt: int) -> np.random.Generator:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([salt, int.from_bytes(digest, "little")])))


@dataclass
class EmbeddingTable:
    """token -> fixed-width vector, total via deterministic hash fallback."""

    d_tok: int
    vectors: dict[str, np.ndarray]
    salt: int = 0

    def lookup(self, token: str) -> np.ndarray:
        # unit-variance entries keep token identity visible through the
        # downstream max-pool aggregation
        vec = self.vectors.get(token)
        if vec is None:
            rng = _hash_seed(token, self.salt)
            vec = rng.standard_normal(self.d_tok)
            self.vectors[token] = vec
        return vec

    @classmethod
    def generated(cls, tokens, d_tok: int, salt: int = 0) -> "EmbeddingTable":
        table = cls(d_tok=d_tok, vectors={}, salt=salt)
        for token in tokens:
            table.lookup(token)
        return table

    @classmethod
    def from_file(cls, path, salt: int = 0) -> "EmbeddingTable":
        """Parse ``token v1 ... vD`` lines (UTF-8, whitespace separated)."""
        vectors: dict[str, np.ndarray] = {}
        width = None
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                token, values = parts[0], parts[1:]
                if width is None:
                    width = len(values)
                    if width == 0:
                        raise ValueError(f"line {lineno}: token without values")
                elif len(values) != width:
                    raise ValueError(f"line {lineno}: expected {width} values, "
                                     f"got {len(values)}")
                vectors[token] = np.array([float(v) for v in values])
        if not vectors:
            raise ValueError("empty token table")
        return cls(d_tok=width, vectors=vectors, salt=salt)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in sorted(self.vectors):
                values = " ".join(repr(float(v)) for v in self.vectors[token])
                fh.write(f"{token} {values}\n")


# ---------------------------------------------------------------------------
# Row encoders.
# ---------------------------------------------------------------------------


def encode_node(label: str, norm_p: np.ndarray, norm_s: np.ndarray,
                table: EmbeddingTable) -> np.ndarray:
    """[embed(label), eta(p), eta(s)] of width d_tok + 6."""
    return np.concatenate([table.lookup(label), norm_p, norm_s])


def encode_spatial_edge(relation: str, pos_i: np.ndarray, pos_j: np.ndarray,
                        table: EmbeddingTable) -> np.ndarray:
    from .scene import SSR_TOKENS
    if relation not in SSR_TOKENS:
        raise ValueError(f"invalid spatial relation token {relation!r}")
    return np.concatenate([table.lookup(relation), pos_i, pos_j])


def encode_action_edge(action_name: str, pos_i: np.ndarray, pos_j: np.ndarray,
                       score: float, table: EmbeddingTable) -> np.ndarray:
    return np.concatenate([table.lookup(action_name), pos_i, pos_j, [score]])


def encode_graph(graph: SceneGraph, table: EmbeddingTable, action_names: list[str],
                 scores: np.ndarray | None = None):
    """Encode a scene graph into (H_hat, E_hat, A_hat) row matrices.

    ``scores[k]`` supplies the importance score for action index ``k``; the
    default is the zero placeholder carried by the scene edges.
    """
    d = table.d_tok
    n = len(graph.node_ids)
    h = np.zeros((n, d + NODE_NUMERIC))
    for r in range(n):
        h[r] = encode_node(graph.labels[r], graph.norm_positions[r],
                           graph.norm_velocities[r], table)
    e = np.zeros((len(graph.spatial_edges), d + EDGE_NUMERIC))
    for r, edge in enumerate(graph.spatial_edges):
        e[r] = encode_spatial_edge(edge.relation, edge.pos_i, edge.pos_j, table)
    a = np.zeros((len(graph.action_edges), d + ACTION_NUMERIC))
    for r, edge in enumerate(graph.action_edges):
        score = edge.score if scores is None else float(scores[edge.action])
        a[r] = encode_action_edge(action_names[edge.action], edge.pos_i,
                                  edge.pos_j, score, table)
    return h, e, a


# ---------------------------------------------------------------------------
# Hadamard refinement maps.
# ---------------------------------------------------------------------------


def apply_hadamard(L, X_hat):
    """Refine rows by the elementwise product ``X[r] = L * X_hat[r]``.

    Accepts plain arrays or autodiff tensors on either side.
    """
    width_l = L.shape[-1] if isinstance(L, ad.Tensor) else np.shape(L)[-1]
    width_x = X_hat.shape[-1] if isinstance(X_hat, ad.Tensor) else np.shape(X_hat)[-1]
    if width_l != width_x:
        raise ValueError(f"width mismatch: map {width_l} vs rows {width_x}")
    if isinstance(L, ad.Tensor) or isinstance(X_hat, ad.Tensor):
        xt = X_hat if isinstance(X_hat, ad.Tensor) else ad.Tensor(X_hat)
        lt = L if isinstance(L, ad.Tensor) else ad.Tensor(L)
        return ad.mul_rowvec(xt, lt)
    return np.asarray(X_hat) * np.asarray(L)


@dataclass
class HadamardMaps:
    """The three learnable refinement vectors, one per feature kind."""

    L_H: ad.Tensor
    L_E: ad.Tensor
    L_A: ad.Tensor

    @classmethod
    def initialized(cls, d_node: int, d_edge: int, d_action: int,
                    rng: np.random.Generator) -> "HadamardMaps":
        return cls(
            L_H=ad.parameter(init("xavier_uniform", [d_node], rng), name="encoding.L_H"),
            L_E=ad.parameter(init("xavier_uniform", [d_edge], rng), name="encoding.L_E"),
            L_A=ad.parameter(init("xavier_uniform", [d_action], rng), name="encoding.L_A"),
        )

    def named(self) -> dict[str, ad.Tensor]:
        return {"encoding.L_H": self.L_H, "encoding.L_E": self.L_E,
                "encoding.L_A": self.L_A}


def cosine_similarity(f1, f2) -> float:
    """Cosine of the angle between two nonzero vectors, in [-1, 1]."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    n1, n2 = np.linalg.norm(f1), np.linalg.norm(f2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("undefined similarity: zero vector")
    return float(np.clip(np.dot(f1, f2) / (n1 * n2), -1.0, 1.0))


def contrastive_loss(d: float, y: int, m: float) -> float:
    """y * d^2 + (1 - y) * max(0, m - d)^2 for a single pair."""
    if d < 0:
        raise ValueError("distance must be nonnegative")
    if m <= 0:
        raise ValueError("margin must be positive")
    if y not in (0, 1):
        raise ValueError("pair label must be 0 or 1")
    return y * d * d + (1 - y) * max(0.0, m - d) ** 2


# ---------------------------------------------------------------------------
# Contrastive training of the maps (shared encode-then-refine as the twin
# halves of the siamese pair).
# ---------------------------------------------------------------------------


@dataclass
class EncodedInstance:
    """Raw feature rows of one training instance, grouped by kind."""

    h_rows: np.ndarray  # (n_nodes, d_node)
    e_rows: np.ndarray  # (n_edges, d_edge)
    a_rows: np.ndarray  # (n_action_edges, d_action)


def embed_instance(maps: HadamardMaps, inst: EncodedInstance) -> ad.Tensor:
    """Mean refined row per kind, concatenated (zeros for empty kinds)."""
    parts = []
    for L, rows in ((maps.L_H, inst.h_rows), (maps.L_E, inst.e_rows),
                    (maps.L_A, inst.a_rows)):
        if rows.shape[0] == 0:
            parts.append(ad.Tensor(np.zeros(L.shape[-1])))
        else:
            parts.append(ad.tmean(apply_hadamard(L, rows), axis=0))
    return ad.concat(parts)


def pair_distance(maps: HadamardMaps, a: EncodedInstance, b: EncodedInstance) -> ad.Tensor:
    diff = embed_instance(maps, a) - embed_instance(maps, b)
    return ad.sqrt(ad.tsum(diff * diff) + 1e-24)


def pair_loss(maps: HadamardMaps, a: EncodedInstance, b: EncodedInstance,
              y: int, margin: float) -> ad.Tensor:
    d = pair_distance(maps, a, b)
    if y == 1:
        return d * d
    gap = ad.relu(ad.Tensor(margin) - d)
    return gap * gap


def train_embedding_maps(pairs, d_node: int, d_edge: int, d_action: int,
                         epochs: int = 100, lr: float = 0.001, batch: int = 32,
                         weight_decay: float = 0.01, margin: float = 1.0,
                         seed: int = 0) -> HadamardMaps:
    """Fit L_H/L_E/L_A on (instance, instance, label) pairs.

    Minimizes mean contrastive loss plus ``weight_decay`` times the squared
    map norms with Adam; deterministic for a fixed seed.
    """
    labels = {y for _, _, y in pairs}
    if labels <= {0} or labels <= {1}:
        raise ValueError("degenerate contrastive task: pairs carry a single label")
    rng = make_rng(seed)
    maps = HadamardMaps.initialized(d_node, d_edge, d_action, rng)
    params = maps.named()
    opt = Adam(params, lr=lr)
    order = np.arange(len(pairs))
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch):
            chunk = order[start:start + batch]
            opt.zero_grad()
            total = ad.Tensor(0.0)
            for idx in chunk:
                a, b, y = pairs[idx]
                total = total + pair_loss(maps, a, b, y, margin)
            loss = total * (1.0 / len(chunk))
            for L in (maps.L_H, maps.L_E, maps.L_A):
                loss = loss + ad.tsum(L * L) * weight_decay
            loss.backward()
            opt.step()
    return maps


def pair_accuracy(maps: HadamardMaps, pairs, threshold: float) -> float:
    """Fraction of pairs whose distance falls on the right side of the cut."""
    hits = 0
    for a, b, y in pairs:
        d = pair_distance(maps, a, b).item()
        hits += int((d < threshold) == (y == 1))
    return hits / len(pairs)
