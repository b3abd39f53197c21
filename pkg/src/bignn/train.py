"""Staged training: embedding -> GAT -> TCN -> joint phases -> end to end.

Each stage freezes everything outside its parameter group(s), runs Adam at
the configured rate with early stopping on validation loss, halves the rate
on stagnation and restores the best snapshot before handing over.  Joint
stages combine the per-component losses with the configured weights
(0.6/0.4, then 0.25/0.45/0.3, then 0.05/0.35/0.25/0.35).

The attention stage classifies pooled per-frame features directly (the
temporal stack is untrained at that point); the temporal stage learns
one-step-ahead prediction of its own input sequence under MSE, which is the
regression loss the schedule prescribes; the final stage adds a
cross-entropy term on the smoothed curves that the describer consumes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .annotations import AnnotationSequence
from .assets import load_affordances, load_hierarchy
from .config import RunConfig
from .encoding import EncodedInstance, pair_loss
from .numerics import Adam, derive_rng
from .pipeline import PipelineModel, SequenceCache, TrainContext
from .temporal import make_windows, tcn_forward


@dataclass
class StageResult:
    name: str
    epochs: int = 0
    best_val: float = float("inf")
    final_train: float = float("nan")
    stopped_early: bool = False
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"stage": self.name, "epochs": self.epochs,
                "best_val": self.best_val, "final_train": self.final_train,
                "stopped_early": self.stopped_early,
                "seconds": round(self.seconds, 2)}


class _EarlyStopper:
    def __init__(self, params: dict, patience: int):
        self.params = params
        self.patience = patience
        self.best = float("inf")
        self.stale = 0
        self.snapshot = {k: v.data.copy() for k, v in params.items()}

    def update(self, val_loss: float) -> bool:
        if val_loss < self.best - 1e-12:
            self.best = val_loss
            self.stale = 0
            self.snapshot = {k: v.data.copy() for k, v in self.params.items()}
            return False
        self.stale += 1
        return self.stale >= self.patience

    def restore(self) -> None:
        for name, tensor in self.params.items():
            tensor.data = self.snapshot[name]


def _check_finite(value: float, stage: str) -> float:
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite loss in stage {stage!r}")
    return value


def split_sequences(n: int, val_fraction: float, seed: int,
                    labels: list | None = None) -> tuple[list[int], list[int]]:
    """Deterministic single split; stratified by label when provided."""
    rng = derive_rng(seed, "split")
    order = np.arange(n)
    if labels is not None:
        train_idx, val_idx = [], []
        for label in sorted(set(labels), key=str):
            members = [i for i in order if labels[i] == label]
            rng.shuffle(members)
            k = max(1, int(round(len(members) * val_fraction)))
            val_idx.extend(members[:k])
            train_idx.extend(members[k:])
        return sorted(train_idx), sorted(val_idx)
    rng.shuffle(order)
    k = max(1, int(round(n * val_fraction)))
    return sorted(order[k:].tolist()), sorted(order[:k].tolist())


# ---------------------------------------------------------------------------
# Per-stage losses (all batched at sequence granularity).
# ---------------------------------------------------------------------------


def _classification_loss(model: PipelineModel, cache: SequenceCache,
                         ctx: TrainContext | None, with_tcn: bool,
                         frame_subset: np.ndarray | None = None,
                         x_override: list[ad.Tensor] | None = None):
    """Mean CE over (a subset of) the sequence's frames.

    Returns (loss, frame count, x curves, g curves) so joint losses can
    reuse the forward.
    """
    xs = x_override if x_override is not None else model.sequence_x(cache, ctx)
    gs = model.sequence_g(cache, ctx, x_curves=xs) if with_tcn else xs
    probs = model.slot_probs_batch(gs, cache.taxonomy_onehots)
    total, count = model.sequence_ce(cache, probs, frame_subset=frame_subset)
    if total is None:
        return None, 0, xs, gs
    return total * (1.0 / count), count, xs, gs


def _tcn_mse(model: PipelineModel, x_curves: list[ad.Tensor],
             ctx: TrainContext | None) -> ad.Tensor:
    """One-step-ahead prediction error of each level's temporal stack."""
    total = None
    for level, x in enumerate(x_curves):
        masks = None
        if ctx is not None and ctx.dropout_tcn > 0.0:
            batch = make_windows(x.shape[0], model.config.window_size,
                                 model.config.window_overlap)
            masks = ctx.tcn_masks(len(batch.starts), model.config.window_size,
                                  x.shape[1], len(model.tcn[level].kernels))
        g = tcn_forward(x, model.tcn[level], size=model.config.window_size,
                        overlap=model.config.window_overlap,
                        slope=model.config.leaky_slope, dropout_masks=masks)
        n = x.shape[0]
        diff = ad.narrow(g, 0, n - 1) - ad.Tensor(x.data[1:])
        mse = ad.tmean(diff * diff)
        total = mse if total is None else total + mse
    return total * (1.0 / len(x_curves))


def _instance_of(cache: SequenceCache, t: int) -> EncodedInstance:
    fc = cache.frames[t]
    return EncodedInstance(h_rows=fc.h_hat, e_rows=fc.e_hat, a_rows=fc.a_hat)


def _sample_pairs(caches: list[SequenceCache], n_pairs: int,
                  rng: np.random.Generator) -> list[tuple]:
    """Balanced similar/dissimilar frame pairs labeled by level-2 class."""
    by_class: dict[str, list[tuple[int, int]]] = {}
    for ci, cache in enumerate(caches):
        for t, fc in enumerate(cache.frames):
            label = fc.truth.level2 or fc.truth.level1
            if label is not None:
                by_class.setdefault(label, []).append((ci, t))
    classes = sorted(by_class)
    if len(classes) < 2:
        raise ValueError("degenerate contrastive task: pairs carry a single label")

    def draw(cls: str) -> tuple[int, int]:
        members = by_class[cls]
        return members[rng.integers(len(members))]

    pairs = []
    for k in range(n_pairs):
        if k % 2 == 0:
            cls = classes[rng.integers(len(classes))]
            a, b = draw(cls), draw(cls)
            y = 1
        else:
            ca, cb = rng.choice(len(classes), size=2, replace=False)
            a, b = draw(classes[ca]), draw(classes[cb])
            y = 0
        pairs.append((_instance_of(caches[a[0]], a[1]),
                      _instance_of(caches[b[0]], b[1]), y))
    return pairs


def _embedding_loss(model: PipelineModel, pairs: list[tuple]) -> ad.Tensor:
    total = ad.Tensor(0.0)
    for a, b, y in pairs:
        total = total + pair_loss(model.maps, a, b, y, model.config.contrastive_margin)
    loss = total * (1.0 / len(pairs))
    reg = model.config.contrastive_reg
    for L in (model.maps.L_H, model.maps.L_E, model.maps.L_A):
        loss = loss + ad.tsum(L * L) * reg
    return loss


def _smoothed_ce(model: PipelineModel, cache: SequenceCache,
                 gs: list[ad.Tensor]) -> ad.Tensor | None:
    """Cross entropy of the smoothed deepest-level curve at the true class.

    Smoothing is expressed as a constant row-stochastic matrix so the loss
    stays differentiable.
    """
    level = model.config.gat_levels
    classes = model.hierarchy.level_classes(level)
    lookup = {path: i for i, path in enumerate(classes)}
    n = len(cache)
    probs = model.slot_probs_batch(gs, cache.taxonomy_onehots)

    targets = []
    for t in range(n):
        truth = cache.frames[t].truth
        if truth.level1 is None:
            return None
        targets.append(lookup[model.hierarchy.truth_path(truth.labels())[:level]])

    columns = []
    for path in classes:
        col = None
        for depth in range(len(path)):
            slot = path[:depth]
            if slot not in probs:
                continue
            idx = model.hierarchy.slot_classes(slot).index(path[depth])
            flat = ad.reshape(probs[slot],
                              (n * len(model.hierarchy.slot_classes(slot)),))
            term = ad.gather(flat, np.arange(n) * len(
                model.hierarchy.slot_classes(slot)) + idx)
            col = term if col is None else col * term
        columns.append(ad.reshape(col if col is not None
                                  else ad.Tensor(np.ones(n)), (n, 1)))
    curve = ad.concat(columns, axis=1)

    w = model.config.smoothing_window
    half = w // 2
    smooth_mat = np.zeros((n, n))
    for t in range(n):
        lo, hi = max(0, t - half), min(n, t + half + 1)
        smooth_mat[t, lo:hi] = 1.0 / (hi - lo)
    smoothed = ad.matmul(ad.Tensor(smooth_mat), curve)
    row_sums = ad.tsum(smoothed, axis=1)
    normed = ad.scale_rows(smoothed, ad.pow_(row_sums, -1.0))
    picked = ad.gather(ad.reshape(normed, (n * len(classes),)),
                       np.arange(n) * len(classes) + np.asarray(targets))
    safe = ad.maximum(picked, ad.Tensor(np.full(n, 1e-300)))
    return -ad.tmean(ad.log(safe))


def _joint_loss(model: PipelineModel, batch: list[SequenceCache], weights: dict,
                ctx: TrainContext | None, rng,
                pair_pool: list[SequenceCache] | None = None) -> ad.Tensor:
    total = ad.Tensor(0.0)
    for cache in batch:
        ce, count, xs, gs = _classification_loss(model, cache, ctx, with_tcn=True)
        if ce is not None and weights.get("ce"):
            total = total + ce * weights["ce"]
        if weights.get("mse"):
            total = total + _tcn_mse(model, xs, ctx) * weights["mse"]
        if weights.get("desc"):
            desc = _smoothed_ce(model, cache, gs)
            if desc is not None:
                total = total + desc * weights["desc"]
    loss = total * (1.0 / len(batch))
    if weights.get("emb") and rng is not None:
        pairs = _sample_pairs(pair_pool or batch, 8, rng)
        loss = loss + _embedding_loss(model, pairs) * weights["emb"]
    return loss


# ---------------------------------------------------------------------------
# Stage drivers.
# ---------------------------------------------------------------------------


def _make_optimizer(model: PipelineModel, groups: list[str]) -> Adam:
    params: dict[str, ad.Tensor] = {}
    for group in groups:
        params.update(model.params_group(group))
    return Adam(params, lr=model.config.lr, l2=model.config.l2)


def _zero_all(model: PipelineModel) -> None:
    for tensor in model.params().values():
        tensor.grad = None


def _run_stage(name: str, model: PipelineModel, groups: list[str], epochs: int,
               patience: int, step_fn, val_fn, report: list[StageResult]) -> None:
    result = StageResult(name=name)
    started = time.time()
    if epochs <= 0:
        report.append(result)
        return
    opt = _make_optimizer(model, groups)
    stopper = _EarlyStopper(opt.params, patience)
    stale_for_lr = 0
    for epoch in range(epochs):
        train_loss = step_fn(opt, epoch)
        result.final_train = _check_finite(train_loss, name)
        val_loss = _check_finite(val_fn(), name)
        result.epochs = epoch + 1
        if stopper.update(val_loss):
            result.stopped_early = True
            break
        if stopper.stale == 0:
            stale_for_lr = 0
        else:
            stale_for_lr += 1
            if stale_for_lr >= model.config.lr_halve_after:
                opt.lr *= 0.5
                stale_for_lr = 0
    stopper.restore()
    result.best_val = stopper.best
    result.seconds = time.time() - started
    report.append(result)


def train_staged(config: RunConfig, sequences: list[AnnotationSequence],
                 model: PipelineModel | None = None) -> tuple[PipelineModel, dict]:
    """Run the full schedule and return the trained model plus a report."""
    if not sequences:
        raise ValueError("empty split: no sequences to train on")
    if model is None:
        hierarchy = load_hierarchy(sequences[0].hierarchy)
        model = PipelineModel(config, hierarchy, load_affordances("kit"))

    labels = [seq.truths[0].level2 or seq.truths[0].level1 for seq in sequences]
    train_idx, val_idx = split_sequences(len(sequences), config.val_fraction,
                                         config.seed, labels)
    if not train_idx or not val_idx:
        raise ValueError("empty split: need both train and validation sequences")

    caches = [model.prepare(seq) for seq in sequences]
    train_caches = [caches[i] for i in train_idx]
    val_caches = [caches[i] for i in val_idx]

    report: list[StageResult] = []
    stages = config.stages
    rng = derive_rng(config.seed, "train")

    def train_ctx(attention: float, tcn: float) -> TrainContext:
        return TrainContext(rng=rng, dropout_attention=attention, dropout_tcn=tcn)

    # -- stage 1: embedding (contrastive) --------------------------------------
    val_pairs = _sample_pairs(val_caches, 64, derive_rng(config.seed, "val-pairs")) \
        if stages.embedding_epochs > 0 else []

    def embedding_step(opt: Adam, epoch: int) -> float:
        losses = []
        for _ in range(max(1, stages.steps_per_epoch // 8)):
            pairs = _sample_pairs(train_caches, config.contrastive_batch, rng)
            opt.zero_grad()
            loss = _embedding_loss(model, pairs)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        return float(np.mean(losses))

    def embedding_val() -> float:
        return _embedding_loss(model, val_pairs).item()

    _run_stage("embedding", model, ["embedding"], stages.embedding_epochs,
               config.patience_tcn, embedding_step, embedding_val, report)

    # -- stage 2: attention + heads on pooled frame features -------------------
    def gat_step(opt: Adam, epoch: int) -> float:
        ctx = train_ctx(config.dropout_attention, 0.0)
        losses = []
        for _ in range(stages.steps_per_epoch):
            cache = train_caches[rng.integers(len(train_caches))]
            subset = rng.choice(len(cache), size=min(config.batch_frames,
                                                     len(cache)), replace=False)
            opt.zero_grad()
            loss, count, _, _ = _classification_loss(model, cache, ctx,
                                                     with_tcn=False,
                                                     frame_subset=np.sort(subset))
            if loss is None:
                continue
            loss.backward()
            opt.step()
            losses.append(loss.item())
        return float(np.mean(losses)) if losses else float("nan")

    def gat_val() -> float:
        values = []
        for cache in val_caches:
            loss, count, _, _ = _classification_loss(model, cache, None,
                                                     with_tcn=False)
            if loss is not None:
                values.append(loss.item())
        return float(np.mean(values)) if values else float("nan")

    _run_stage("gat", model, ["gat", "heads"], stages.gat_epochs,
               config.patience_gat, gat_step, gat_val, report)

    # -- stage 3: temporal stacks on frozen frame features ----------------------
    if stages.tcn_epochs > 0:
        train_x = [_const_x(model, c) for c in train_caches]
        val_x = [_const_x(model, c) for c in val_caches]
        windows_per_seq = max(1, len(make_windows(
            len(train_caches[0]), config.window_size, config.window_overlap).starts))
        seqs_per_step = max(1, config.batch_windows // windows_per_seq)

        def tcn_step(opt: Adam, epoch: int) -> float:
            ctx = train_ctx(0.0, config.dropout_tcn)
            losses = []
            for _ in range(max(1, stages.steps_per_epoch // 2)):
                picks = rng.choice(len(train_x),
                                   size=min(seqs_per_step, len(train_x)),
                                   replace=False)
                opt.zero_grad()
                total = None
                for pick in picks:
                    mse = _tcn_mse(model, train_x[pick], ctx)
                    total = mse if total is None else total + mse
                loss = total * (1.0 / len(picks))
                loss.backward()
                opt.step()
                losses.append(loss.item())
            return float(np.mean(losses))

        def tcn_val() -> float:
            return float(np.mean([_tcn_mse(model, x, None).item() for x in val_x]))

        _run_stage("tcn", model, ["tcn"], stages.tcn_epochs, config.patience_tcn,
                   tcn_step, tcn_val, report)

    # -- stages 4..6: joint phases ----------------------------------------------
    def joint_stage(name: str, groups: list[str], epochs: int, weights: dict):
        def joint_step(opt: Adam, epoch: int) -> float:
            ctx = train_ctx(weights.get("attn_dropout", config.dropout_attention),
                            config.dropout_tcn)
            losses = []
            for _ in range(max(1, stages.steps_per_epoch // 4)):
                picks = rng.choice(len(train_caches),
                                   size=min(4, len(train_caches)), replace=False)
                opt.zero_grad()
                loss = _joint_loss(model, [train_caches[p] for p in picks],
                                   weights, ctx, rng, pair_pool=train_caches)
                loss.backward()
                opt.step()
                losses.append(loss.item())
            return float(np.mean(losses))

        def joint_val() -> float:
            values = [_joint_loss(model, [c], weights, None,
                                  derive_rng(config.seed, f"val-{name}"),
                                  pair_pool=val_caches).item()
                      for c in val_caches[:6]]
            return float(np.mean(values))

        _run_stage(name, model, groups, epochs, config.patience_joint,
                   joint_step, joint_val, report)

    w_gat, w_tcn = config.weights_gat_tcn
    joint_stage("joint-gat-tcn", ["gat", "tcn", "heads"],
                stages.joint_gat_tcn_epochs,
                {"ce": w_gat, "mse": w_tcn})

    w_emb, w_gat, w_tcn = config.weights_emb_gat_tcn
    joint_stage("joint-embedding", ["embedding", "gat", "tcn", "heads"],
                stages.joint_embedding_epochs,
                {"emb": w_emb, "ce": w_gat, "mse": w_tcn})

    w_emb, w_gat, w_tcn, w_desc = config.weights_end_to_end
    joint_stage("end-to-end", ["embedding", "gat", "tcn", "heads"],
                stages.end_to_end_epochs,
                {"emb": w_emb, "ce": w_gat, "mse": w_tcn, "desc": w_desc,
                 "attn_dropout": config.dropout_tcn})

    _zero_all(model)
    return model, {"stages": [r.to_dict() for r in report],
                   "train_sequences": len(train_idx),
                   "val_sequences": len(val_idx)}


def _const_x(model: PipelineModel, cache: SequenceCache) -> list[ad.Tensor]:
    """Frame-feature curves with gradients detached (frozen upstream)."""
    return [ad.Tensor(x.data.copy()) for x in model.sequence_x(cache, None)]
