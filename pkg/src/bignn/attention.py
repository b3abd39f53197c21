"""Hierarchical 3-level graph attention over scene graphs.

Level 1 attends over objects, level 2 over single-hand interactions and
level 3 over bimanual context.  Each level runs three internal attention
layers.  Scores concatenate the transformed endpoint features with
transformed spatial-edge and action-edge features; levels 2 and 3
additionally rescale action features with a second attention (beta) computed
from the previous level's output and append an attention-weighted context
block (F) from the previous level.

Edge transforms W_e / W_a are shared across all three levels; every level
has its own per-layer node transform W and score vector d, and levels 2/3
carry their own beta pair (W_beta, U) and context weighting gamma.

For speed the score d . [z_i, z_j, W_e e, W_a a, F gamma] is evaluated as a
sum of per-chunk scalar products (d is split once per layer), algebraically
identical to the concatenated form, which the tests check against an
independent per-pair evaluation.  Frames of a whole sequence can be merged
into one block-diagonal graph so the attention ops batch across time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .numerics import init
from .scene import SceneGraph

LAYERS_PER_LEVEL = 3


@dataclass
class GraphIndex:
    """Directed neighbor pairs (src -> dst) with self-loops, plus the cached
    action-entity graph.

    Neighbors are the spatial-edge partners of a node plus the node itself,
    so isolated nodes keep a well-defined attention row.  Pairs are sorted by
    (dst, src): segments per destination are contiguous, which both makes
    every reduction deterministic and enables the reduceat fast path.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    dst_splits: np.ndarray    # segment start offsets per node
    edge_row: np.ndarray      # row into E per pair, -1 for self-loops
    pair_action: np.ndarray   # row into the pair-aggregate matrix, -1 if none
    action_pairs: list[tuple[int, int]]          # unordered pairs with actions
    action_entities: list[tuple[int, int, int]]  # (pair_slot, node_i, node_j)
    entity_actions: np.ndarray                   # action index per entity
    entity_slots: np.ndarray                     # pair slot per entity
    ent_src: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    ent_dst: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    ent_splits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))


def build_graph_index(graph: SceneGraph) -> GraphIndex:
    ids = graph.node_ids
    pos = {node_id: k for k, node_id in enumerate(ids)}
    n = len(ids)

    pair_slots: dict[tuple[int, int], int] = {}
    entities: list[tuple[int, int, int]] = []
    entity_actions: list[int] = []
    for edge in graph.action_edges:
        key = (pos[edge.i], pos[edge.j])
        slot = pair_slots.setdefault(key, len(pair_slots))
        entities.append((slot, key[0], key[1]))
        entity_actions.append(edge.action)

    edge_of_pair: dict[tuple[int, int], int] = {}
    neighbors: list[set[int]] = [{k} for k in range(n)]
    for row, edge in enumerate(graph.spatial_edges):
        ki, kj = pos[edge.i], pos[edge.j]
        neighbors[ki].add(kj)
        neighbors[kj].add(ki)
        edge_of_pair[(ki, kj)] = row
        edge_of_pair[(kj, ki)] = row

    action_of_pair = {}
    for (ki, kj), slot in pair_slots.items():
        action_of_pair[(ki, kj)] = slot
        action_of_pair[(kj, ki)] = slot

    src, dst, edge_row, pair_action, splits = [], [], [], [], []
    for center in range(n):
        splits.append(len(src))
        for nb in sorted(neighbors[center]):
            src.append(nb)
            dst.append(center)
            edge_row.append(edge_of_pair.get((nb, center), -1))
            pair_action.append(action_of_pair.get((nb, center), -1))

    # entity graph: same-action entities sharing a node, plus self-loops
    ent_src, ent_dst, ent_splits = [], [], []
    by_action: dict[int, list[int]] = {}
    for e_i, k in enumerate(entity_actions):
        by_action.setdefault(k, []).append(e_i)
    ent_neighbors: list[list[int]] = [[] for _ in entities]
    for members in by_action.values():
        for e_i in members:
            nodes_i = {entities[e_i][1], entities[e_i][2]}
            for e_j in members:
                if e_i == e_j or nodes_i & {entities[e_j][1], entities[e_j][2]}:
                    ent_neighbors[e_i].append(e_j)
    for e_i, nbs in enumerate(ent_neighbors):
        ent_splits.append(len(ent_src))
        for e_j in sorted(nbs):
            ent_src.append(e_j)
            ent_dst.append(e_i)

    src = np.asarray(src, dtype=np.intp)
    dst = np.asarray(dst, dtype=np.intp)
    return GraphIndex(
        n_nodes=n,
        src=src,
        dst=dst,
        dst_splits=np.asarray(splits, dtype=np.intp),
        edge_row=np.asarray(edge_row, dtype=np.intp),
        pair_action=np.asarray(pair_action, dtype=np.intp),
        action_pairs=sorted(pair_slots, key=pair_slots.get),
        action_entities=entities,
        entity_actions=np.asarray(entity_actions, dtype=np.intp),
        entity_slots=np.asarray([slot for slot, _, _ in entities], dtype=np.intp),
        ent_src=np.asarray(ent_src, dtype=np.intp),
        ent_dst=np.asarray(ent_dst, dtype=np.intp),
        ent_splits=np.asarray(ent_splits, dtype=np.intp),
    )


# ---------------------------------------------------------------------------
# Parameters.
# ---------------------------------------------------------------------------


@dataclass
class GatConfig:
    d_node: int            # width of encoded node rows (level-1 input)
    d_edge: int            # width of encoded spatial-edge rows
    d_out: int             # node feature width produced by every level
    d_edge_out: int        # width of the transformed edge block
    d_action_out: int      # width of the transformed action block
    d_action_feat: int = 8  # width of action-edge features inside the action GAT
    d_beta: int = 0         # beta projection width; 0 means d_out
    n_actions: int = 0
    sigma_a0: float = 0.01
    leaky_slope: float = 0.2
    node_activation: str = "sigmoid"   # "identity" is a test hook
    action_aggregation: str = "mean"   # printed formula; "sum" kept as a switch
    levels: int = 3

    def __post_init__(self):
        if self.d_beta == 0:
            self.d_beta = self.d_out

    def score_chunks(self, level: int) -> list[int]:
        """Widths of [z_i, z_j, W_e e, W_a a (, F gamma)] in the score."""
        chunks = [self.d_out, self.d_out, self.d_edge_out, self.d_action_out]
        if level == 2:
            chunks.append(self.d_node)
        elif level == 3:
            chunks.append(self.d_out)
        return chunks


@dataclass
class LevelParams:
    layers: list[tuple[ad.Tensor, ad.Tensor]]   # (W, d) per internal layer
    w_beta: ad.Tensor | None = None
    u_beta: ad.Tensor | None = None
    gamma: ad.Tensor | None = None


@dataclass
class GatParams:
    levels: list[LevelParams]
    w_e: ad.Tensor
    w_a: ad.Tensor
    action_layers: list[tuple[ad.Tensor, ad.Tensor]]
    a0: ad.Tensor   # (n_actions, d_action_feat)

    def named(self) -> dict[str, ad.Tensor]:
        out: dict[str, ad.Tensor] = {}
        for li, level in enumerate(self.levels, start=1):
            for lj, (w, d) in enumerate(level.layers):
                out[f"gat.l{li}.layer{lj}.W"] = w
                out[f"gat.l{li}.layer{lj}.d"] = d
            if level.w_beta is not None:
                out[f"gat.l{li}.w_beta"] = level.w_beta
                out[f"gat.l{li}.u_beta"] = level.u_beta
                out[f"gat.l{li}.gamma"] = level.gamma
        out["gat.shared.W_e"] = self.w_e
        out["gat.shared.W_a"] = self.w_a
        for lj, (w, d) in enumerate(self.action_layers):
            out[f"gat.action.layer{lj}.W"] = w
            out[f"gat.action.layer{lj}.d"] = d
        out["gat.action.a0"] = self.a0
        return out


def build_gat_params(cfg: GatConfig, rng: np.random.Generator) -> GatParams:
    """Initialize all attention parameters from one seeded generator.

    Level 1 node transforms use Xavier, level 2 small Gaussians, level 3
    Xavier again; shared edge transforms use He (LeakyReLU downstream);
    score vectors start as small random values.
    """
    def layer_stack(level: int, d_in: int) -> list[tuple[ad.Tensor, ad.Tensor]]:
        stack = []
        width = sum(cfg.score_chunks(level))
        for lj in range(LAYERS_PER_LEVEL):
            w_shape = [cfg.d_out, d_in if lj == 0 else cfg.d_out]
            if level == 2:
                w = init("gaussian", w_shape, rng, sigma=0.01)
                d = rng.uniform(-0.01, 0.01, size=width)
            else:
                w = init("xavier_uniform", w_shape, rng)
                d = init("gaussian", [width], rng, sigma=0.01)
            stack.append((ad.parameter(w, name=f"gat.l{level}.layer{lj}.W"),
                          ad.parameter(d, name=f"gat.l{level}.layer{lj}.d")))
        return stack

    levels = []
    for level in range(1, cfg.levels + 1):
        d_in = cfg.d_node if level == 1 else cfg.d_out
        params = LevelParams(layers=layer_stack(level, d_in))
        if level >= 2:
            # beta projects the previous level's output; gamma weights the F
            # context whose width is the previous level's input width.
            f_width = cfg.d_node if level == 2 else cfg.d_out
            mode = "gaussian" if level == 2 else "xavier_uniform"
            params.w_beta = ad.parameter(init(mode, [cfg.d_beta, cfg.d_out], rng, sigma=0.01),
                                         name=f"gat.l{level}.w_beta")
            params.u_beta = ad.parameter(init(mode, [cfg.d_beta, cfg.d_out], rng, sigma=0.01),
                                         name=f"gat.l{level}.u_beta")
            params.gamma = ad.parameter(np.ones(f_width), name=f"gat.l{level}.gamma")
        levels.append(params)

    w_e = ad.parameter(init("he_normal", [cfg.d_edge_out, cfg.d_edge], rng),
                       name="gat.shared.W_e")
    w_a = ad.parameter(init("he_normal", [cfg.d_action_out, cfg.d_action_feat], rng),
                       name="gat.shared.W_a")

    action_layers = []
    for lj in range(LAYERS_PER_LEVEL):
        w = init("xavier_uniform", [cfg.d_action_feat, cfg.d_action_feat], rng)
        d = init("gaussian", [2 * cfg.d_action_feat], rng, sigma=0.01)
        action_layers.append((ad.parameter(w, name=f"gat.action.layer{lj}.W"),
                              ad.parameter(d, name=f"gat.action.layer{lj}.d")))

    a0 = ad.parameter(init("gaussian", [max(cfg.n_actions, 1), cfg.d_action_feat],
                           rng, sigma=cfg.sigma_a0), name="gat.action.a0")
    return GatParams(levels=levels, w_e=w_e, w_a=w_a,
                     action_layers=action_layers, a0=a0)


# ---------------------------------------------------------------------------
# Core layer math.
# ---------------------------------------------------------------------------


def _activate(x: ad.Tensor, kind: str) -> ad.Tensor:
    if kind == "sigmoid":
        return ad.sigmoid(x)
    if kind == "identity":
        return x
    raise ValueError(f"unknown node activation {kind!r}")


def _gather1_or_zero(values: ad.Tensor, idx: np.ndarray) -> ad.Tensor:
    """1-D gather where index -1 yields 0 (appends a zero slot)."""
    aug = ad.concat([values, ad.Tensor(np.zeros(1))])
    n_real = values.shape[0]
    return ad.gather(aug, np.where(idx < 0, n_real, idx))


def _split_d(d: ad.Tensor, chunks: list[int]) -> list[ad.Tensor]:
    parts = []
    off = 0
    for width in chunks:
        parts.append(ad.narrow(d, off, width))
        off += width
    return parts


def gat_layer(h: ad.Tensor, src: np.ndarray, dst: np.ndarray,
              splits: np.ndarray, n: int, W: ad.Tensor, d_chunks: list[ad.Tensor],
              pair_extra: ad.Tensor | None, slope: float, activation: str,
              alpha_dropout: np.ndarray | None = None
              ) -> tuple[ad.Tensor, ad.Tensor]:
    """One attention layer; returns (next node features, per-pair alpha).

    ``d_chunks[0]``/``d_chunks[1]`` weight the destination and source node
    features; ``pair_extra`` carries the per-pair scalar score contribution
    of the edge/action/context blocks for this layer.
    """
    z = ad.matmul(h, ad.transpose(W))
    score_dst = ad.matmul(z, d_chunks[0])
    score_src = ad.matmul(z, d_chunks[1])
    f = ad.gather(score_dst, dst) + ad.gather(score_src, src)
    if pair_extra is not None:
        f = f + pair_extra
    f = ad.leaky_relu(f, slope)
    alpha = ad.segment_softmax(f, dst, n, splits=splits)
    weights = alpha if alpha_dropout is None else alpha * ad.Tensor(alpha_dropout)
    agg = ad.segment_sum(ad.scale_rows(ad.gather(z, src), weights), dst, n,
                         splits=splits)
    return _activate(agg, activation), alpha


def score_level1(z_i: np.ndarray, z_j: np.ndarray, e_ij: np.ndarray,
                 a_ij: np.ndarray, d: np.ndarray, w_e: np.ndarray,
                 w_a: np.ndarray, slope: float = 0.2) -> float:
    """Scalar level-1 score for one directed pair (reference form).

    Concatenation order is fixed: [z_i, z_j, W_e e_ij, W_a a_ij].  This is
    the independent evaluation the vectorized layer is checked against.
    """
    stacked = np.concatenate([z_i, z_j, w_e @ e_ij, w_a @ a_ij])
    if stacked.shape[0] != d.shape[0]:
        raise ValueError(f"width mismatch: score vector {d.shape[0]}, "
                         f"inputs {stacked.shape[0]}")
    pre = float(d @ stacked)
    return pre if pre >= 0 else slope * pre


def beta_matrix(g_prev: ad.Tensor, w_beta: ad.Tensor, u_beta: ad.Tensor,
                index: GraphIndex) -> ad.Tensor:
    """Normalized action-edge attention per directed pair.

    beta_{i,j} = softmax over j in N(i) of (W_beta g_j) . (U_beta g_i).
    """
    wg = ad.matmul(g_prev, ad.transpose(w_beta))
    ug = ad.matmul(g_prev, ad.transpose(u_beta))
    logits = ad.tsum(ad.gather(wg, index.src) * ad.gather(ug, index.dst), axis=1)
    return ad.segment_softmax(logits, index.dst, index.n_nodes,
                              splits=index.dst_splits)


def modulate_actions(beta: ad.Tensor, actions: ad.Tensor) -> ad.Tensor:
    """Scale each pair's action feature by its scalar beta weight."""
    return ad.scale_rows(actions, beta)


def compose_F(alpha: ad.Tensor, index: GraphIndex, h_base: ad.Tensor) -> ad.Tensor:
    """Attention-weighted base-feature context, one entry per node.

    Row c aggregates the base features of c's neighbors under the level's
    final attention: F_c = sum_{j in N(c)} alpha_{c,j} h_base[j].  (Stored
    row-per-node; the conceptual layout is one column per node.)
    """
    weighted = ad.scale_rows(ad.gather(h_base, index.src), alpha)
    return ad.segment_sum(weighted, index.dst, index.n_nodes,
                          splits=index.dst_splits)


# ---------------------------------------------------------------------------
# Action-edge GAT.
# ---------------------------------------------------------------------------


@dataclass
class ActionEdgeState:
    """Layer trace of the action-edge GAT plus its aggregates."""

    entity_keys: list[tuple[int, int, int]]   # (node_i, node_j, action k)
    layer_features: list[ad.Tensor]           # a^(0) .. a^(L), (n_entities, d)
    entity_aggregate: ad.Tensor               # mean (or sum) over layers 1..L
    pair_aggregate: ad.Tensor                 # (n_pairs, d), mean over actions k
    pairs: list[tuple[int, int]] = field(default_factory=list)


def action_gat(index: GraphIndex, params: GatParams, cfg: GatConfig,
               n_layers: int = LAYERS_PER_LEVEL) -> ActionEdgeState:
    """Refine per-(pair, action) features over the shared-endpoint graph.

    Entities are action-edge instances; two entities with the same action
    index are neighbors when their pairs share a node.  a^(0) rows come from
    the learnable per-action table.  The aggregate is the mean over layer
    outputs (or the sum when configured), then averaged over a pair's
    candidate actions.
    """
    entities = index.action_entities
    n_ent = len(entities)
    n_pairs = len(index.action_pairs)
    d_feat = cfg.d_action_feat
    if n_ent == 0:
        empty = ad.Tensor(np.zeros((0, d_feat)))
        return ActionEdgeState(entity_keys=[], layer_features=[empty],
                               entity_aggregate=empty,
                               pair_aggregate=ad.Tensor(np.zeros((n_pairs, d_feat))),
                               pairs=list(index.action_pairs))

    a = ad.gather(params.a0, index.entity_actions)
    layers = [a]
    for w, d in params.action_layers[:n_layers]:
        chunks = _split_d(d, [d_feat, d_feat])
        a, _ = gat_layer(a, index.ent_src, index.ent_dst, index.ent_splits,
                         n_ent, w, chunks, None, cfg.leaky_slope,
                         cfg.node_activation)
        layers.append(a)

    total = layers[1]
    for feat in layers[2:]:
        total = total + feat
    if cfg.action_aggregation == "mean":
        entity_agg = total * (1.0 / n_layers)
    elif cfg.action_aggregation == "sum":
        entity_agg = total
    else:
        raise ValueError(f"unknown action aggregation {cfg.action_aggregation!r}")

    counts = np.bincount(index.entity_slots, minlength=n_pairs).astype(np.float64)
    pair_sum = ad.segment_sum(entity_agg, index.entity_slots, n_pairs)
    pair_agg = ad.scale_rows(pair_sum, ad.Tensor(1.0 / np.maximum(counts, 1.0)))

    keys = [(ent[1], ent[2], int(k)) for ent, k in zip(entities, index.entity_actions)]
    return ActionEdgeState(entity_keys=keys, layer_features=layers,
                           entity_aggregate=entity_agg, pair_aggregate=pair_agg,
                           pairs=list(index.action_pairs))


# ---------------------------------------------------------------------------
# Level forward.
# ---------------------------------------------------------------------------


@dataclass
class GatLevelOutput:
    level: int
    g: ad.Tensor                 # final node features h^(level),f, (n, d_out)
    alphas: list[ad.Tensor]      # per internal layer, one weight per pair
    beta: ad.Tensor | None       # per pair (levels 2 and 3)
    f_rows: ad.Tensor            # context rows for the next level, (n, d_in)


def level_forward(level: int, h_in: ad.Tensor, index: GraphIndex,
                  e_rows: ad.Tensor | None, pair_actions: ad.Tensor,
                  f_prev: ad.Tensor | None, params: GatParams, cfg: GatConfig,
                  dropout_masks: list[np.ndarray] | None = None
                  ) -> GatLevelOutput:
    """Run one hierarchical level (three internal attention layers).

    ``h_in`` is the encoded node matrix at level 1, else the previous level's
    output.  ``pair_actions`` is the action GAT's pair-aggregate matrix.
    Levels above 1 require ``f_prev``, the previous level's context rows.
    """
    if level >= 2 and f_prev is None:
        raise ValueError(f"level {level} requires the previous level's context")
    level_params = params.levels[level - 1]
    chunks = cfg.score_chunks(level)

    beta = None
    if level >= 2:
        beta = beta_matrix(h_in, level_params.w_beta, level_params.u_beta, index)

    h = h_in
    alphas: list[ad.Tensor] = []
    for lj, (w, d) in enumerate(level_params.layers):
        d_parts = _split_d(d, chunks)

        # per-pair scalar contributions of the edge/action/context blocks:
        # d_e . (W_e e) folds into e . (W_e^T d_e), and likewise for the rest.
        extra = None
        if e_rows is not None and e_rows.shape[0] > 0:
            v_e = ad.matmul(ad.transpose(params.w_e), d_parts[2])
            e_scores = ad.matmul(e_rows, v_e)
            extra = _gather1_or_zero(e_scores, index.edge_row)
        if pair_actions.shape[0] > 0:
            v_a = ad.matmul(ad.transpose(params.w_a), d_parts[3])
            a_scores = ad.matmul(pair_actions, v_a)
            a_dir = _gather1_or_zero(a_scores, index.pair_action)
            if beta is not None:
                a_dir = a_dir * beta
            extra = a_dir if extra is None else extra + a_dir
        if level >= 2:
            v_f = ad.matmul(f_prev, level_params.gamma * d_parts[4])
            f_scores = ad.gather(v_f, index.src)
            extra = f_scores if extra is None else extra + f_scores

        mask = dropout_masks[lj] if dropout_masks is not None else None
        h, alpha = gat_layer(h, index.src, index.dst, index.dst_splits,
                             index.n_nodes, w, d_parts, extra,
                             cfg.leaky_slope, cfg.node_activation,
                             alpha_dropout=mask)
        alphas.append(alpha)

    f_rows = compose_F(alphas[-1], index, h_in)
    return GatLevelOutput(level=level, g=h, alphas=alphas, beta=beta, f_rows=f_rows)


def hierarchy_forward(h0: ad.Tensor, index: GraphIndex, e_rows: ad.Tensor | None,
                      params: GatParams, cfg: GatConfig,
                      dropout_masks: dict | None = None,
                      n_levels: int | None = None) -> list[GatLevelOutput]:
    """Full per-frame pass: action GAT, then levels 1..n in order."""
    state = action_gat(index, params, cfg)
    outputs: list[GatLevelOutput] = []
    h, f_prev = h0, None
    for level in range(1, (n_levels or cfg.levels) + 1):
        masks = dropout_masks.get(level) if dropout_masks else None
        out = level_forward(level, h, index, e_rows, state.pair_aggregate,
                            f_prev, params, cfg, dropout_masks=masks)
        outputs.append(out)
        h, f_prev = out.g, out.f_rows
    return outputs


def merge_graph_indices(indices: list[GraphIndex],
                        e_counts: list[int]) -> GraphIndex:
    """Combine per-frame graphs into one block-diagonal graph.

    ``e_counts`` gives each frame's spatial-edge row count (the stride for
    edge-row indices).  Attention segments never cross frame boundaries, so
    a forward pass over the merged graph equals the per-frame passes while
    batching every tensor op across the whole sequence.
    """
    src, dst, splits, edge_row, pair_action = [], [], [], [], []
    ent_src, ent_dst, ent_splits, ent_actions, ent_slots = [], [], [], [], []
    action_pairs: list[tuple[int, int]] = []
    entities: list[tuple[int, int, int]] = []
    node_off = pair_off = edge_off = slot_off = ent_off = 0
    for index, e_count in zip(indices, e_counts):
        src.append(index.src + node_off)
        dst.append(index.dst + node_off)
        splits.append(index.dst_splits + pair_off)
        edge_row.append(np.where(index.edge_row < 0, -1,
                                 index.edge_row + edge_off))
        pair_action.append(np.where(index.pair_action < 0, -1,
                                    index.pair_action + slot_off))
        ent_src.append(index.ent_src + ent_off)
        ent_dst.append(index.ent_dst + ent_off)
        ent_splits.append(index.ent_splits + sum(len(e) for e in ent_src[:-1]))
        ent_actions.append(index.entity_actions)
        ent_slots.append(index.entity_slots + slot_off)
        action_pairs.extend((i + node_off, j + node_off)
                            for i, j in index.action_pairs)
        entities.extend((slot + slot_off, i + node_off, j + node_off)
                        for slot, i, j in index.action_entities)
        node_off += index.n_nodes
        pair_off += len(index.src)
        edge_off += e_count
        slot_off += len(index.action_pairs)
        ent_off += len(index.action_entities)

    def cat(parts):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp)

    return GraphIndex(
        n_nodes=node_off,
        src=cat(src), dst=cat(dst), dst_splits=cat(splits),
        edge_row=cat(edge_row), pair_action=cat(pair_action),
        action_pairs=action_pairs, action_entities=entities,
        entity_actions=cat(ent_actions), entity_slots=cat(ent_slots),
        ent_src=cat(ent_src), ent_dst=cat(ent_dst), ent_splits=cat(ent_splits),
    )
