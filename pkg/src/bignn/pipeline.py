"""End-to-end model: scene graphs -> encoding -> GAT levels -> TCN -> heads.

`PipelineModel` owns every learnable tensor, precomputes the pure
data-derived caches per sequence (graphs, encoded rows, motion enrichment,
taxonomy one-hots) and exposes forwards at frame and sequence granularity.
Sequence forwards run on one block-diagonal merged graph so every tensor op
batches across the sequence's frames.  Training code drives the same
forwards with a :class:`TrainContext` that injects dropout masks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .annotations import AnnotationSequence, FrameTruth
from .attention import (GatConfig, GatLevelOutput, build_gat_params,
                        build_graph_index, hierarchy_forward,
                        merge_graph_indices)
from .archive import load_archive, save_archive
from .bimanual import (TaxonomyLabel, build_contact_graph, classify_coordination,
                       classify_precision, classify_spatial, hand_groups,
                       taxonomy_one_hot, ONE_HOT_WIDTH)
from .config import RunConfig
from .describe import DescriptionContext, TemplateSet, generate
from .encoding import EmbeddingTable, HadamardMaps, apply_hadamard, encode_graph
from .heads import (HierarchySpec, build_head, head_forward, hierarchical_loss,
                    level_distribution, smooth, decide)
from .numerics import derive_rng
from .scene import AffordanceTable, FrameObservation, SSR_TOKENS, build_scene_graph
from .temporal import (aggregate_frame, build_tcn_params, enrich_frame,
                       make_windows, motion_enrichment, tcn_forward)


class OneHotTable:
    """Embedding-free token encoding for the no-embedding ablation.

    Tokens outside the fixed vocabulary map to the all-zero vector, which
    keeps lookups total and deterministic.
    """

    def __init__(self, tokens: list[str]):
        self.tokens = sorted(set(tokens))
        self.d_tok = len(self.tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def lookup(self, token: str) -> np.ndarray:
        vec = np.zeros(self.d_tok)
        slot = self._index.get(token)
        if slot is not None:
            vec[slot] = 1.0
        return vec


@dataclass
class TrainContext:
    rng: np.random.Generator
    dropout_attention: float = 0.0
    dropout_tcn: float = 0.0

    def attention_masks(self, index, levels: int) -> dict | None:
        if self.dropout_attention <= 0.0:
            return None
        keep = 1.0 - self.dropout_attention
        n = index.src.shape[0]
        return {level: [(self.rng.random(n) < keep) / keep for _ in range(3)]
                for level in range(1, levels + 1)}

    def tcn_masks(self, n_windows: int, size: int, width: int,
                  n_layers: int) -> dict | None:
        if self.dropout_tcn <= 0.0:
            return None
        keep = 1.0 - self.dropout_tcn
        return {w: [(self.rng.random((size, width)) < keep) / keep
                    for _ in range(n_layers)]
                for w in range(n_windows)}


@dataclass
class FrameCache:
    observation: FrameObservation
    truth: FrameTruth
    graph: object
    index: object
    h_hat: np.ndarray
    e_hat: np.ndarray
    a_hat: np.ndarray
    enrichment: np.ndarray
    left_pos: np.ndarray | None
    right_pos: np.ndarray | None


@dataclass
class SequenceBatch:
    """All frames of a sequence merged into one block-diagonal graph."""

    index: object
    h_hat: np.ndarray            # stacked node rows
    e_hat: np.ndarray            # stacked spatial-edge rows
    a_hat: np.ndarray            # stacked action-edge rows
    agg_perm: np.ndarray         # groups [nodes; E; A] rows by frame
    agg_splits: np.ndarray       # frame start offsets after permutation
    enrichment: np.ndarray       # (T, d_out) zero-padded motion terms


@dataclass
class SequenceCache:
    source: AnnotationSequence
    frames: list[FrameCache]
    hands_ok: bool
    batch: SequenceBatch | None = None
    taxonomy_onehots: np.ndarray | None = None   # (T, 13) when hands_ok
    frame_taxonomies: list[TaxonomyLabel] | None = None

    def __len__(self):
        return len(self.frames)


class PipelineModel:
    """All learnable state plus the forward passes that use it."""

    def __init__(self, config: RunConfig, hierarchy: HierarchySpec,
                 affordances: AffordanceTable,
                 token_table: EmbeddingTable | None = None):
        self.config = config
        self.hierarchy = hierarchy
        self.affordances = affordances
        self.templates = TemplateSet.default()

        base_tokens = sorted(
            {label for key in affordances.pairs for label in key}
            | set(SSR_TOKENS) | set(affordances.vocabulary) | {"hand"})
        if not config.use_embedding:
            self.table = OneHotTable(base_tokens)
        elif token_table is not None:
            self.table = token_table
        else:
            self.table = EmbeddingTable.generated(base_tokens, config.d_tok,
                                                  salt=config.seed)

        d_tok = self.table.d_tok
        self.d_node = d_tok + 6
        self.d_edge = d_tok + 6
        self.d_action = d_tok + 7
        d_out = config.d_out if config.use_embedding else self.d_node
        self.d_out = d_out

        self.gat_cfg = GatConfig(
            d_node=self.d_node, d_edge=self.d_edge, d_out=d_out,
            d_edge_out=config.d_edge_out, d_action_out=config.d_action_out,
            d_action_feat=config.d_action_feat,
            n_actions=len(affordances.vocabulary), sigma_a0=config.sigma_a0,
            leaky_slope=config.leaky_slope, node_activation=config.node_activation,
            action_aggregation=config.action_aggregation, levels=3)

        init_rng = derive_rng(config.seed, "init")
        self.maps = HadamardMaps.initialized(self.d_node, self.d_edge,
                                             self.d_action, init_rng)
        self.gat = build_gat_params(self.gat_cfg, init_rng)
        self.tcn = [build_tcn_params(d_out, config.tcn_kernel, init_rng,
                                     prefix=f"tcn.l{level}")
                    for level in (1, 2, 3)]
        # fixed importance-score slot values, one per action index
        self.action_scores = init_rng.normal(0.0, config.sigma_a0,
                                             len(affordances.vocabulary))

        self.heads: dict[tuple, object] = {}
        n_cat = len(hierarchy.categories)
        self.heads[()] = build_head(d_out, n_cat, init_rng, "head.root")
        for cat in hierarchy.categories:
            if not cat.children:
                continue
            n_in = d_out + (n_cat if config.parent_concat else 0)
            self.heads[(cat.name,)] = build_head(n_in, len(cat.children), init_rng,
                                                 f"head.{cat.name}")
            for sub in cat.children:
                if not sub.children:
                    continue
                n_in3 = d_out + ONE_HOT_WIDTH + (len(cat.children)
                                                 if config.parent_concat else 0)
                self.heads[(cat.name, sub.name)] = build_head(
                    n_in3, len(sub.children), init_rng, f"head.{cat.name}.{sub.name}")

    # -- parameter registry ---------------------------------------------------

    def params(self) -> dict[str, ad.Tensor]:
        out = dict(self.maps.named())
        out.update(self.gat.named())
        for level, tcn in zip((1, 2, 3), self.tcn):
            out.update(tcn.named(f"tcn.l{level}"))
        for slot, head in sorted(self.heads.items()):
            prefix = "head." + (".".join(slot) if slot else "root")
            out.update(head.named(prefix))
        return out

    def params_group(self, group: str) -> dict[str, ad.Tensor]:
        prefix = {"embedding": "encoding.", "gat": "gat.", "tcn": "tcn.",
                  "heads": "head."}[group]
        return {k: v for k, v in self.params().items() if k.startswith(prefix)}

    def save(self, path) -> None:
        tensors = {name: t.data for name, t in self.params().items()}
        tensors["encoding.action_scores"] = self.action_scores
        save_archive(tensors, path)

    def load_weights(self, path) -> None:
        stored = load_archive(path)
        params = self.params()
        for name, tensor in params.items():
            if name not in stored:
                raise ValueError(f"archive missing tensor {name!r}")
            if stored[name].shape != tensor.data.shape:
                raise ValueError(
                    f"dimension mismatch for {name!r}: archive "
                    f"{stored[name].shape} vs model {tensor.data.shape}")
            tensor.data = stored[name]
        if "encoding.action_scores" in stored:
            self.action_scores = stored["encoding.action_scores"]

    # -- caches ---------------------------------------------------------------

    def prepare(self, seq: AnnotationSequence) -> SequenceCache:
        """Build all data-derived per-frame state once per sequence."""
        action_names = self.affordances.vocabulary
        frames: list[FrameCache] = []
        prev = None
        hands_ok = len(seq.frames) > 0
        for obs, truth in zip(seq.frames, seq.truths):
            graph = build_scene_graph(obs, prev, self.config.theta_dist,
                                      self.config.eps_contact, self.affordances)
            if not self.config.use_spatial_edges:
                graph.spatial_edges = []
            if not self.config.use_action_edges:
                graph.action_edges = []
            index = build_graph_index(graph)
            h_hat, e_hat, a_hat = encode_graph(graph, self.table, action_names,
                                               scores=self.action_scores)
            left = next((o for o in obs.objects if o.hand == "left"), None)
            right = next((o for o in obs.objects if o.hand == "right"), None)
            if left is None or right is None:
                hands_ok = False
            frames.append(FrameCache(
                observation=obs, truth=truth, graph=graph, index=index,
                h_hat=h_hat, e_hat=e_hat, a_hat=a_hat,
                enrichment=motion_enrichment(prev, obs),
                left_pos=None if left is None else left.position,
                right_pos=None if right is None else right.position))
            prev = obs
        cache = SequenceCache(source=seq, frames=frames, hands_ok=hands_ok)
        cache.batch = self._build_batch(frames)
        if hands_ok:
            self._attach_taxonomies(cache)
        return cache

    def _build_batch(self, frames: list[FrameCache]) -> SequenceBatch:
        index = merge_graph_indices([fc.index for fc in frames],
                                    [fc.e_hat.shape[0] for fc in frames])
        h_hat = np.concatenate([fc.h_hat for fc in frames], axis=0)
        e_hat = np.concatenate([fc.e_hat for fc in frames], axis=0) \
            if any(fc.e_hat.shape[0] for fc in frames) else np.zeros((0, self.d_edge))
        a_hat = np.concatenate([fc.a_hat for fc in frames], axis=0) \
            if any(fc.a_hat.shape[0] for fc in frames) else np.zeros((0, self.d_action))

        # frame id of every stacked row in [node block; E block; A block]
        frame_of = []
        for block in ("h_hat", "e_hat", "a_hat"):
            for t, fc in enumerate(frames):
                frame_of.extend([t] * getattr(fc, block).shape[0])
        frame_of = np.asarray(frame_of, dtype=np.intp)
        perm = np.argsort(frame_of, kind="stable")
        sorted_frames = frame_of[perm]
        splits = np.searchsorted(sorted_frames, np.arange(len(frames)))

        enrichment = np.zeros((len(frames), self.d_out))
        for t, fc in enumerate(frames):
            k = min(3, self.d_out)
            enrichment[t, :k] = fc.enrichment[:k]
        return SequenceBatch(index=index, h_hat=h_hat, e_hat=e_hat, a_hat=a_hat,
                             agg_perm=perm, agg_splits=splits,
                             enrichment=enrichment)

    def _span_taxonomy(self, cache: SequenceCache, lo: int, hi: int) -> TaxonomyLabel:
        """Rule-based taxonomy over frames [lo, hi)."""
        left = np.stack([cache.frames[t].left_pos for t in range(lo, hi)])
        right = np.stack([cache.frames[t].right_pos for t in range(lo, hi)])
        dists = np.linalg.norm(left - right, axis=1)
        th = self.config.taxonomy
        coordination, symmetry, dominant = classify_coordination(left, right, th)
        return TaxonomyLabel(
            coordination=coordination, symmetry=symmetry, dominant=dominant,
            spatial=classify_spatial(float(np.median(dists)), th),
            precision=classify_precision(float(np.min(dists)), float(np.max(dists)), th))

    def _attach_taxonomies(self, cache: SequenceCache) -> None:
        n = len(cache)
        half = self.config.taxonomy_window // 2
        onehots = np.zeros((n, ONE_HOT_WIDTH))
        labels = []
        for t in range(n):
            lo, hi = max(0, t - half), min(n, t + half + 1)
            if hi - lo < 2:
                lo, hi = 0, n
            label = self._span_taxonomy(cache, lo, hi)
            labels.append(label)
            onehots[t] = taxonomy_one_hot(label)
        cache.taxonomy_onehots = onehots
        cache.frame_taxonomies = labels

    # -- per-frame forwards (reference path, used by tests) --------------------

    def refined_rows(self, fc: FrameCache):
        h = apply_hadamard(self.maps.L_H, fc.h_hat)
        e = apply_hadamard(self.maps.L_E, fc.e_hat) if fc.e_hat.shape[0] else None
        a = apply_hadamard(self.maps.L_A, fc.a_hat) if fc.a_hat.shape[0] else None
        return h, e, a

    def frame_forward(self, fc: FrameCache, ctx: TrainContext | None = None):
        """GAT levels plus the refined edge rows they share."""
        h, e, a = self.refined_rows(fc)
        masks = ctx.attention_masks(fc.index, self.config.gat_levels) if ctx else None
        levels = hierarchy_forward(h, fc.index, e, self.gat, self.gat_cfg,
                                   dropout_masks=masks,
                                   n_levels=self.config.gat_levels)
        return levels, e, a

    def frame_levels(self, fc: FrameCache,
                     ctx: TrainContext | None = None) -> list[GatLevelOutput]:
        return self.frame_forward(fc, ctx)[0]

    def frame_x(self, fc: FrameCache, levels: list[GatLevelOutput],
                e: ad.Tensor | None = None,
                a: ad.Tensor | None = None) -> list[ad.Tensor]:
        """Pooled + motion-enriched frame vector per available level."""
        if e is None and a is None:
            _, e, a = self.refined_rows(fc)
        out = []
        for lvl in levels:
            pooled = aggregate_frame(lvl.g, e, a)
            out.append(enrich_frame(pooled, fc.enrichment))
        return out

    # -- batched sequence forwards ---------------------------------------------

    def sequence_levels(self, cache: SequenceCache,
                        ctx: TrainContext | None = None):
        """Merged-graph GAT pass over all frames of the sequence."""
        b = cache.batch
        h = apply_hadamard(self.maps.L_H, b.h_hat)
        e = apply_hadamard(self.maps.L_E, b.e_hat) if b.e_hat.shape[0] else None
        a = apply_hadamard(self.maps.L_A, b.a_hat) if b.a_hat.shape[0] else None
        masks = ctx.attention_masks(b.index, self.config.gat_levels) if ctx else None
        levels = hierarchy_forward(h, b.index, e, self.gat, self.gat_cfg,
                                   dropout_masks=masks,
                                   n_levels=self.config.gat_levels)
        return levels, e, a

    def sequence_x(self, cache: SequenceCache,
                   ctx: TrainContext | None = None) -> list[ad.Tensor]:
        """Per-level (T, D) frame-feature curves: pooled and enriched."""
        from .temporal import _fit_rows
        b = cache.batch
        levels, e, a = self.sequence_levels(cache, ctx)
        enrich = ad.Tensor(b.enrichment)
        out = []
        for lvl in levels:
            blocks = [lvl.g]
            for rows in (e, a):
                if rows is not None:
                    blocks.append(_fit_rows(rows, self.d_out))
            stacked = blocks[0] if len(blocks) == 1 else ad.concat(blocks, axis=0)
            grouped = ad.gather(stacked, b.agg_perm)
            pooled = ad.segment_max(grouped, b.agg_splits)
            out.append(pooled + enrich)
        return out

    def sequence_g(self, cache: SequenceCache, ctx: TrainContext | None = None,
                   x_curves: list[ad.Tensor] | None = None) -> list[ad.Tensor]:
        """TCN outputs per level (identity when the TCN is ablated)."""
        xs = x_curves if x_curves is not None else self.sequence_x(cache, ctx)
        if not self.config.use_tcn:
            return xs
        out = []
        for level, x in enumerate(xs):
            masks = None
            if ctx is not None and ctx.dropout_tcn > 0.0:
                batch = make_windows(x.shape[0], self.config.window_size,
                                     self.config.window_overlap)
                masks = ctx.tcn_masks(len(batch.starts), self.config.window_size,
                                      x.shape[1], len(self.tcn[level].kernels))
            out.append(tcn_forward(x, self.tcn[level],
                                   size=self.config.window_size,
                                   overlap=self.config.window_overlap,
                                   slope=self.config.leaky_slope,
                                   dropout_masks=masks))
        return out

    def slot_probs_batch(self, g_curves: list[ad.Tensor],
                         onehots: np.ndarray | None) -> dict[tuple, ad.Tensor]:
        """Head outputs for every slot, batched over frames: (T, C) each.

        Level-3 slots are skipped when no taxonomy encoding is available or
        the level is ablated.
        """
        cfg = self.config
        probs: dict[tuple, ad.Tensor] = {}
        p_cat = head_forward(g_curves[0], self.heads[()], cfg.leaky_slope)
        probs[()] = p_cat
        if cfg.gat_levels < 2:
            return probs
        for cat in self.hierarchy.categories:
            slot = (cat.name,)
            if slot not in self.heads:
                continue
            x2 = g_curves[1]
            if cfg.parent_concat:
                x2 = ad.concat([x2, p_cat], axis=1)
            probs[slot] = head_forward(x2, self.heads[slot], cfg.leaky_slope)
            if cfg.gat_levels < 3 or onehots is None:
                continue
            for sub in cat.children:
                slot3 = (cat.name, sub.name)
                if slot3 not in self.heads:
                    continue
                x3 = ad.concat([g_curves[2], ad.Tensor(onehots)], axis=1)
                if cfg.parent_concat:
                    x3 = ad.concat([x3, probs[slot]], axis=1)
                probs[slot3] = head_forward(x3, self.heads[slot3], cfg.leaky_slope)
        return probs

    def slot_probs(self, g_levels: list[ad.Tensor], one_hot: np.ndarray | None,
                   restrict_path: tuple[str, ...] | None = None
                   ) -> dict[tuple, ad.Tensor]:
        """Single-frame head outputs (reference path for tests/criteria)."""
        rows = [ad.reshape(g, (1, g.shape[0])) for g in g_levels]
        onehots = None if one_hot is None else one_hot.reshape(1, -1)
        batched = self.slot_probs_batch(rows, onehots)
        out = {}
        for slot, p in batched.items():
            if restrict_path is not None and slot != restrict_path[:len(slot)]:
                continue
            out[slot] = ad.reshape(p, (p.shape[1],))
        return out

    def sequence_ce(self, cache: SequenceCache,
                    probs: dict[tuple, ad.Tensor],
                    frame_subset: np.ndarray | None = None
                    ) -> tuple[ad.Tensor | None, int]:
        """Cross entropy along each frame's true path, batched per slot."""
        frames = range(len(cache)) if frame_subset is None else frame_subset
        picks: dict[tuple, list[int]] = {}
        count = 0
        for t in frames:
            truth = cache.frames[t].truth
            if truth.level1 is None:
                continue
            path = self.hierarchy.truth_path(truth.labels())
            path = path[:self.config.gat_levels]
            count += 1
            for depth in range(len(path)):
                slot = path[:depth]
                if slot not in probs:
                    continue
                classes = self.hierarchy.slot_classes(slot)
                idx = classes.index(path[depth])
                picks.setdefault(slot, []).append(
                    int(t) * len(classes) + idx)
        if count == 0:
            return None, 0
        total = None
        for slot in sorted(picks):
            p = probs[slot]
            flat = ad.reshape(p, (p.shape[0] * p.shape[1],))
            chosen = ad.gather(flat, np.asarray(picks[slot], dtype=np.intp))
            safe = ad.maximum(chosen, ad.Tensor(np.full(len(picks[slot]), 1e-300)))
            term = -ad.tsum(ad.log(safe))
            total = term if total is None else total + term
        return total, count

    def frame_loss(self, g_levels: list[ad.Tensor], one_hot: np.ndarray | None,
                   truth: FrameTruth) -> ad.Tensor | None:
        """Single-frame hierarchical loss (reference path)."""
        if truth.level1 is None:
            return None
        path = self.hierarchy.truth_path(truth.labels())
        path = path[:self.config.gat_levels]
        probs = self.slot_probs(g_levels, one_hot, restrict_path=path)
        return hierarchical_loss(probs, path, self.hierarchy)

    # -- prediction -------------------------------------------------------------

    def level_curves(self, cache: SequenceCache) -> list[np.ndarray | None]:
        """Raw per-level class-probability curves (numpy, forward only)."""
        n = len(cache)
        levels_live = self.config.gat_levels if cache.hands_ok else 1
        g_curves = self.sequence_g(cache)
        probs = self.slot_probs_batch(g_curves, cache.taxonomy_onehots)
        slot_data = {slot: p.data for slot, p in probs.items()}
        curves: list[np.ndarray | None] = [None, None, None]
        for level in range(1, levels_live + 1):
            classes = self.hierarchy.level_classes(level)
            curve = np.ones((n, len(classes)))
            for c, path in enumerate(classes):
                for depth in range(len(path)):
                    slot = path[:depth]
                    if slot not in slot_data:
                        continue
                    idx = self.hierarchy.slot_classes(slot).index(path[depth])
                    curve[:, c] *= slot_data[slot][:, idx]
            curves[level - 1] = curve
        return curves

    def predict_sequence(self, cache: SequenceCache) -> dict:
        """Smoothed decisions per frame plus per-segment descriptions."""
        n = len(cache)
        curves = self.level_curves(cache)
        smoothed = [None if c is None else smooth(c, self.config.smoothing_window)
                    for c in curves]
        decisions = {}
        for level, curve in enumerate(smoothed, start=1):
            if curve is None:
                continue
            classes = self.hierarchy.level_classes(level)
            idx = decide(curve)
            decisions[level] = [(classes[i], float(curve[t, i]))
                                for t, i in enumerate(idx)]

        records = []
        for t in range(n):
            rec = {"frame": cache.frames[t].observation.index}
            for level in (1, 2, 3):
                key = f"level{level}"
                if level in decisions:
                    path, p = decisions[level][t]
                    rec[key] = {"label": path[-1], "path": list(path), "p": p}
                else:
                    rec[key] = None
            records.append(rec)

        deepest = max(decisions) if decisions else 0
        segments = []
        if deepest:
            labels = [decisions[deepest][t][0] for t in range(n)]
            start = 0
            for t in range(1, n + 1):
                if t == n or labels[t] != labels[start]:
                    segments.append(self._segment_record(cache, start, t, decisions))
                    start = t
        return {"frames": records, "segments": segments,
                "hands_ok": cache.hands_ok,
                "levels": sorted(decisions)}

    def _segment_record(self, cache: SequenceCache, lo: int, hi: int,
                        decisions: dict) -> dict:
        ctx = self.describe_context(cache, lo, hi, decisions)
        sentences = {str(level): generate(level, ctx, self.templates)
                     for level in (1, 2, 3)} if 2 in decisions else \
            {"1": generate(1, ctx, self.templates)}
        seg = {
            "span": [cache.frames[lo].observation.index,
                     cache.frames[hi - 1].observation.index],
            "descriptions": sentences,
        }
        for level in (1, 2, 3):
            seg[f"level{level}"] = decisions[level][lo][0][-1] if level in decisions \
                else None
        return seg

    def describe_context(self, cache: SequenceCache, lo: int, hi: int,
                         decisions: dict) -> DescriptionContext:
        counts: dict[str, int] = {}
        relations: dict[tuple[str, str, str], int] = {}
        left_counts: dict[str, int] = {}
        right_counts: dict[str, int] = {}
        for t in range(lo, hi):
            fc = cache.frames[t]
            label_of = dict(zip(fc.graph.node_ids, fc.graph.labels))
            for label in fc.graph.labels:
                counts[label] = counts.get(label, 0) + 1
            for edge in fc.graph.spatial_edges:
                key = (label_of[edge.i], edge.relation, label_of[edge.j])
                relations[key] = relations.get(key, 0) + 1
            groups = hand_groups(build_contact_graph(
                fc.graph, cache.source.support_label))
            hands = {oid for oid, side in zip(fc.graph.node_ids, fc.graph.hands)
                     if side != "none"}
            for oid in groups.left - hands:
                left_counts[label_of[oid]] = left_counts.get(label_of[oid], 0) + 1
            for oid in groups.right - hands:
                right_counts[label_of[oid]] = right_counts.get(label_of[oid], 0) + 1

        def display(label: str) -> str:
            return label.replace("_", " ")

        def article(label: str) -> str:
            word = display(label)
            from .describe import indefinite_article
            return f"{indefinite_article(word)} {word}"

        objects = [article(label) for label in sorted(counts)
                   if counts[label] >= (hi - lo) / 2]
        top_relations = sorted(relations, key=lambda k: (-relations[k], k))[:3]
        rel_facts = [(display(a), rel, display(b)) for a, rel, b in top_relations]

        left_obj = max(left_counts, key=lambda k: (left_counts[k], k)) \
            if left_counts else None
        right_obj = max(right_counts, key=lambda k: (right_counts[k], k)) \
            if right_counts else None

        action_display = None
        for level in (3, 2):
            if level in decisions:
                path = decisions[level][lo][0]
                action_display = self.hierarchy.node_at(path).display
                break

        taxonomy = self._span_taxonomy(cache, lo, hi) \
            if cache.hands_ok and hi - lo >= 2 else None
        return DescriptionContext(
            objects=objects,
            relations=rel_facts,
            left_action="holding" if left_obj else None,
            left_object=article(left_obj) if left_obj else None,
            right_action=action_display,
            right_object=article(right_obj) if right_obj else None,
            action=action_display,
            taxonomy=taxonomy,
        )


def prediction_lines(result: dict) -> list[str]:
    """Canonical JSONL serialization of one sequence's predictions."""
    lines = []
    for rec in result["frames"]:
        lines.append(json.dumps({"type": "frame", **rec}, sort_keys=True))
    for seg in result["segments"]:
        lines.append(json.dumps({"type": "segment", **seg}, sort_keys=True))
    return lines


def prediction_hash(results: list[dict]) -> str:
    digest = hashlib.sha256()
    for result in results:
        for line in prediction_lines(result):
            digest.update(line.encode("utf-8"))
            digest.update(b"\n")
    return digest.hexdigest()
