"""Bundled configuration assets: hierarchies, affordances, templates."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .heads import HierarchySpec
from .scene import AffordanceTable

HIERARCHIES = {
    "synthetic_v1": "hierarchy_synthetic.json",
    "meal_preparation": "hierarchy_meal_preparation.json",
    "assembly": "hierarchy_assembly.json",
    "painting": "hierarchy_painting.json",
    "juicing": "hierarchy_juicing.json",
}


def _read_data(name: str) -> dict:
    text = resources.files("bignn.data").joinpath(name).read_text("utf-8")
    return json.loads(text)


def load_hierarchy(name_or_path: str) -> HierarchySpec:
    """Resolve a bundled hierarchy name or load a JSON file path."""
    if name_or_path in HIERARCHIES:
        return HierarchySpec.from_dict(_read_data(HIERARCHIES[name_or_path]))
    path = Path(name_or_path)
    if path.exists():
        return HierarchySpec.from_file(path)
    raise ValueError(f"unknown hierarchy {name_or_path!r}; bundled names: "
                     f"{sorted(HIERARCHIES)}")


def load_affordances(name_or_path: str = "kit") -> AffordanceTable:
    if name_or_path == "kit":
        doc = _read_data("affordances_kit.json")
        pairs = {frozenset(entry["labels"]): list(entry["actions"])
                 for entry in doc["pairs"]}
        return AffordanceTable(vocabulary=list(doc["vocabulary"]), pairs=pairs)
    return AffordanceTable.from_file(name_or_path)
