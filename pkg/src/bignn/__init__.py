"""Bimanual action recognition and multi-level description generation.

Per-frame object annotations become spatio-temporal scene graphs, flow
through a 3-level hierarchical graph attention network and per-level causal
temporal convolutions, pick up a rule-based bimanual taxonomy, and end in
hierarchical classifiers whose smoothed decisions drive deterministic
3-level text descriptions.
"""

from .annotations import AnnotationSequence, load_annotations, save_annotations
from .bimanual import TaxonomyLabel, TaxonomyThresholds
from .config import RunConfig, StageSchedule
from .estimator import BimanualActionRecognizer
from .heads import HierarchySpec
from .pipeline import PipelineModel
from .scene import Aabb3, FrameObservation, ObjectInstance, compute_ssr
from .synth import synth_generate
from .train import train_staged

__all__ = [
    "Aabb3",
    "AnnotationSequence",
    "BimanualActionRecognizer",
    "FrameObservation",
    "HierarchySpec",
    "ObjectInstance",
    "PipelineModel",
    "RunConfig",
    "StageSchedule",
    "TaxonomyLabel",
    "TaxonomyThresholds",
    "compute_ssr",
    "load_annotations",
    "save_annotations",
    "synth_generate",
    "train_staged",
]

__version__ = "0.1.0"
