"""Run configuration: dimensions, thresholds, schedules, ablation switches.

Values mirror the published training recipe where one exists (Adam at 1e-3,
batch 32 for attention training, batch 64 and dropout 0.2 for the temporal
stage, dropout 0.5 on attention scores, L2 1e-4, the staged loss weights);
epoch budgets and steps-per-epoch are desk-scale knobs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .bimanual import TaxonomyThresholds
from .temporal import TCN_PROFILES


@dataclass
class StageSchedule:
    """Epoch budgets per training stage; zero skips a stage."""

    embedding_epochs: int = 8
    gat_epochs: int = 40
    tcn_epochs: int = 12
    joint_gat_tcn_epochs: int = 6
    joint_embedding_epochs: int = 4
    end_to_end_epochs: int = 6
    steps_per_epoch: int = 30


@dataclass
class RunConfig:
    seed: int = 0

    # dimensions
    d_tok: int = 16
    d_out: int = 0            # 0 resolves to d_tok + 6
    d_edge_out: int = 12
    d_action_out: int = 8
    d_action_feat: int = 8

    # scene thresholds
    theta_dist: float = 1.0
    eps_contact: float = 0.01
    support_label: str = "table"
    taxonomy: TaxonomyThresholds = field(default_factory=TaxonomyThresholds)
    taxonomy_window: int = 30

    # temporal
    tcn_profile: str = "sim"
    window_size: int = 30
    window_overlap: int = 10
    smoothing_window: int = 5

    # attention
    leaky_slope: float = 0.2
    sigma_a0: float = 0.01
    node_activation: str = "sigmoid"
    action_aggregation: str = "mean"

    # ablation switches
    use_embedding: bool = True
    use_spatial_edges: bool = True
    use_action_edges: bool = True
    use_tcn: bool = True
    gat_levels: int = 3
    parent_concat: bool = True

    # training
    lr: float = 0.001
    batch_frames: int = 32
    batch_windows: int = 64
    l2: float = 0.0001
    dropout_attention: float = 0.5
    dropout_tcn: float = 0.2
    patience_gat: int = 20
    patience_tcn: int = 10
    patience_joint: int = 10
    lr_halve_after: int = 10
    contrastive_margin: float = 1.0
    contrastive_reg: float = 0.01
    contrastive_batch: int = 32
    val_fraction: float = 0.2
    weights_gat_tcn: tuple[float, float] = (0.6, 0.4)
    weights_emb_gat_tcn: tuple[float, float, float] = (0.25, 0.45, 0.3)
    weights_end_to_end: tuple[float, float, float, float] = (0.05, 0.35, 0.25, 0.35)
    stages: StageSchedule = field(default_factory=StageSchedule)

    def __post_init__(self):
        if self.d_out == 0:
            self.d_out = self.d_tok + 6
        if self.tcn_profile not in TCN_PROFILES:
            raise ValueError(f"unknown TCN profile {self.tcn_profile!r}; "
                             f"choose from {sorted(TCN_PROFILES)}")
        if self.gat_levels not in (1, 2, 3):
            raise ValueError("gat_levels must be 1, 2 or 3")
        for name, weights in (("weights_gat_tcn", self.weights_gat_tcn),
                              ("weights_emb_gat_tcn", self.weights_emb_gat_tcn),
                              ("weights_end_to_end", self.weights_end_to_end)):
            if abs(sum(weights) - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1, got {weights}")
        if self.smoothing_window % 2 == 0:
            raise ValueError("smoothing window must be odd")

    @property
    def tcn_kernel(self) -> int:
        return TCN_PROFILES[self.tcn_profile]

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["taxonomy"] = asdict(self.taxonomy)
        doc["stages"] = asdict(self.stages)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        if "taxonomy" in doc and isinstance(doc["taxonomy"], dict):
            doc["taxonomy"] = TaxonomyThresholds(**doc["taxonomy"])
        if "stages" in doc and isinstance(doc["stages"], dict):
            doc["stages"] = StageSchedule(**doc["stages"])
        for key in ("weights_gat_tcn", "weights_emb_gat_tcn", "weights_end_to_end"):
            if key in doc and isinstance(doc[key], list):
                doc[key] = tuple(doc[key])
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
