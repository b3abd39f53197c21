"""Scikit-learn style facade over the full pipeline.

`BimanualActionRecognizer` exposes fit/predict/predict_proba/score with
`get_params`/`set_params` inherited from ``BaseEstimator`` so the model
drops into sklearn tooling (clone, grid search over the desk-scale knobs,
pipelines).  X is a list of :class:`AnnotationSequence` (or paths / parsed
dicts); labels ride inside the annotations, so ``y`` is optional and only
used as an override.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .annotations import AnnotationSequence, annotations_from_dict, load_annotations
from .assets import load_affordances, load_hierarchy
from .config import RunConfig, StageSchedule
from .evaluate import evaluate
from .pipeline import PipelineModel
from .train import train_staged


def _as_sequences(X) -> list[AnnotationSequence]:
    if isinstance(X, (AnnotationSequence, dict, str)):
        X = [X]
    out = []
    for item in X:
        if isinstance(item, AnnotationSequence):
            out.append(item)
        elif isinstance(item, dict):
            out.append(annotations_from_dict(item))
        elif isinstance(item, str):
            out.append(load_annotations(item))
        else:
            raise TypeError(f"cannot interpret {type(item).__name__} as an "
                            "annotation sequence")
    if not out:
        raise ValueError("X is empty")
    return out


class BimanualActionRecognizer(BaseEstimator):
    """Frame-level bimanual action classifier with staged training.

    Parameters mirror the run configuration; anything not exposed here can
    be driven through ``config_overrides``.
    """

    def __init__(self, seed=0, d_tok=16, tcn_profile="sim", theta_dist=1.0,
                 eps_contact=0.01, use_embedding=True, use_spatial_edges=True,
                 use_action_edges=True, use_tcn=True, gat_levels=3,
                 embedding_epochs=30, gat_epochs=30, tcn_epochs=25,
                 joint_epochs=8, end_to_end_epochs=5, steps_per_epoch=40,
                 config_overrides=None):
        self.seed = seed
        self.d_tok = d_tok
        self.tcn_profile = tcn_profile
        self.theta_dist = theta_dist
        self.eps_contact = eps_contact
        self.use_embedding = use_embedding
        self.use_spatial_edges = use_spatial_edges
        self.use_action_edges = use_action_edges
        self.use_tcn = use_tcn
        self.gat_levels = gat_levels
        self.embedding_epochs = embedding_epochs
        self.gat_epochs = gat_epochs
        self.tcn_epochs = tcn_epochs
        self.joint_epochs = joint_epochs
        self.end_to_end_epochs = end_to_end_epochs
        self.steps_per_epoch = steps_per_epoch
        self.config_overrides = config_overrides

    def _build_config(self) -> RunConfig:
        doc = {
            "seed": self.seed, "d_tok": self.d_tok,
            "tcn_profile": self.tcn_profile, "theta_dist": self.theta_dist,
            "eps_contact": self.eps_contact,
            "use_embedding": self.use_embedding,
            "use_spatial_edges": self.use_spatial_edges,
            "use_action_edges": self.use_action_edges,
            "use_tcn": self.use_tcn, "gat_levels": self.gat_levels,
        }
        doc.update(self.config_overrides or {})
        config = RunConfig.from_dict(doc)
        config.stages = StageSchedule(
            embedding_epochs=self.embedding_epochs,
            gat_epochs=self.gat_epochs,
            tcn_epochs=self.tcn_epochs,
            joint_gat_tcn_epochs=self.joint_epochs,
            joint_embedding_epochs=max(0, self.joint_epochs - 3),
            end_to_end_epochs=self.end_to_end_epochs,
            steps_per_epoch=self.steps_per_epoch)
        return config

    def fit(self, X, y=None):
        sequences = _as_sequences(X)
        if y is not None:
            sequences = [_override_labels(seq, labels)
                         for seq, labels in zip(sequences, y)]
        config = self._build_config()
        self.model_, self.report_ = train_staged(config, sequences)
        self.config_ = config
        self.hierarchy_ = self.model_.hierarchy
        return self

    def _check_fitted(self) -> PipelineModel:
        if not hasattr(self, "model_"):
            raise NotFittedError("fit the recognizer before predicting")
        return self.model_

    def predict(self, X):
        """Per-sequence lists of per-frame level1/2/3 label dicts."""
        model = self._check_fitted()
        out = []
        for seq in _as_sequences(X):
            result = model.predict_sequence(model.prepare(seq))
            out.append([{f"level{k}": (rec[f"level{k}"]["label"]
                                       if rec[f"level{k}"] else None)
                         for k in (1, 2, 3)}
                        for rec in result["frames"]])
        return out

    def predict_proba(self, X):
        """Smoothed deepest-level class curves, one (T, C) array per sequence."""
        from .heads import smooth
        model = self._check_fitted()
        out = []
        for seq in _as_sequences(X):
            cache = model.prepare(seq)
            curves = model.level_curves(cache)
            deepest = max(k for k, c in enumerate(curves) if c is not None)
            out.append(smooth(curves[deepest], model.config.smoothing_window))
        return out

    def score(self, X, y=None) -> float:
        """Mean frame accuracy over the deepest annotated level."""
        model = self._check_fitted()
        sequences = _as_sequences(X)
        predictions = [model.predict_sequence(model.prepare(seq))
                       for seq in sequences]
        truths = [[{"level1": t.level1, "level2": t.level2, "level3": t.level3}
                   for t in seq.truths] for seq in sequences]
        report = evaluate(predictions, truths)
        levels = report["levels"]
        if not levels:
            raise ValueError("no ground truth labels to score against")
        deepest = sorted(levels)[-1]
        return float(levels[deepest]["accuracy"])


def _override_labels(seq: AnnotationSequence, labels) -> AnnotationSequence:
    for truth, label in zip(seq.truths, labels):
        if isinstance(label, dict):
            truth.level1 = label.get("level1", truth.level1)
            truth.level2 = label.get("level2", truth.level2)
            truth.level3 = label.get("level3", truth.level3)
    return seq
