"""Deterministic 3-level action descriptions from chained templates.

Level 1 reports the objects and their spatial relations, level 2 the
per-hand actions, level 3 the bimanual action enriched with the taxonomy
(coordination/symmetry, hand spatial relation, precision).  Templates are
plain named-slot strings loaded from a JSON file; slot values are derived
from a :class:`DescriptionContext`, so identical contexts render
byte-identical sentences.  Each level's renderer can see the previous
level's sentence, which chains the three passes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from .bimanual import TaxonomyLabel

RELATION_PHRASES = {
    "contact": "in contact with",
    "above": "above",
    "below": "below",
    "around": "around",
    "left": "to the left of",
    "right": "to the right of",
    "front": "in front of",
    "behind": "behind",
    "contain": "containing",
    "within": "within",
    "partial contain": "partially containing",
    "partial within": "partially within",
    "cross": "crossing",
}

_VOWELS = "aeiou"


def indefinite_article(word: str) -> str:
    return "an" if word[:1].lower() in _VOWELS else "a"


def window_count(length: int, window: int, stride: int) -> int:
    """Number of stride-spaced chunks covering a token sequence.

    N = floor((L - W) / S) + 1; sequences shorter than one window yield a
    single right-padded chunk.
    """
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if length < window:
        return 1
    return (length - window) // stride + 1


def chunk_starts(length: int, window: int, stride: int) -> list[int]:
    return [r * stride for r in range(window_count(length, window, stride))]


@dataclass
class DescriptionContext:
    """Everything the three levels need for one segment."""

    actor: str = "A person"
    objects: list[str] = field(default_factory=list)          # display names
    relations: list[tuple[str, str, str]] = field(default_factory=list)
    left_action: str | None = None     # gerund, e.g. "holding"
    left_object: str | None = None
    right_action: str | None = None
    right_object: str | None = None
    action: str | None = None          # bimanual gerund, e.g. "chopping"
    taxonomy: TaxonomyLabel | None = None
    purpose: str | None = None         # e.g. "cutting the vegetables into small pieces"


@dataclass
class TemplateSet:
    """Named templates with str.format slots, one (or two) per level."""

    templates: dict[str, str]

    @classmethod
    def from_file(cls, path) -> "TemplateSet":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(templates=dict(json.load(fh)))

    @classmethod
    def default(cls) -> "TemplateSet":
        text = resources.files("bignn.data").joinpath("templates_default.json").read_text("utf-8")
        return cls(templates=dict(json.loads(text)))

    def pick(self, name: str) -> str:
        if name not in self.templates:
            raise ValueError(f"template set has no entry {name!r}")
        return self.templates[name]


def _join_list(items: list[str]) -> str:
    if not items:
        return ""
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


def _strip_article(phrase: str) -> str:
    for art in ("a ", "an ", "the "):
        if phrase.startswith(art):
            return phrase[len(art):]
    return phrase


def _build_slots(level: int, ctx: DescriptionContext,
                 previous: str | None) -> dict[str, str]:
    slots: dict[str, str] = {"actor": ctx.actor, "previous_sentence": previous or ""}
    if level == 1:
        slots["object_list"] = _join_list(ctx.objects)
        clauses = [f"the {_strip_article(a)} is {RELATION_PHRASES[rel]} the {_strip_article(b)}"
                   for a, rel, b in ctx.relations]
        slots["relation_clause"] = "; " + "; ".join(clauses) if clauses else ""
        return slots
    if level == 2:
        hand_clauses = []
        for action, obj, side in ((ctx.left_action, ctx.left_object, "left"),
                                  (ctx.right_action, ctx.right_object, "right")):
            if not action:
                continue
            if action == "holding" and obj:
                hand_clauses.append(f"holding {obj} with the {side} hand")
            elif obj:
                hand_clauses.append(f"{action} with {obj} in the {side} hand")
            else:
                hand_clauses.append(f"{action} with the {side} hand")
        slots["hand_clauses"] = _join_list(hand_clauses)
        return slots
    slots["action"] = ctx.action or ""
    slots["left_object"] = ctx.left_object or ""
    slots["right_object"] = ctx.right_object or ""
    slots["purpose_clause"] = f" in {ctx.purpose}" if ctx.purpose else ""
    if ctx.taxonomy is not None:
        slots["symmetry"] = ctx.taxonomy.symmetry
        slots["symmetry_article"] = indefinite_article(ctx.taxonomy.symmetry)
        slots["coordination"] = ctx.taxonomy.coordination
        slots["spatial"] = ctx.taxonomy.spatial
        slots["precision"] = ctx.taxonomy.precision
    return slots


def generate(level: int, ctx: DescriptionContext, templates: TemplateSet) -> str:
    """Render the sentence for one level; pure in the context."""
    if level not in (1, 2, 3):
        raise ValueError(f"level must be 1, 2 or 3, got {level}")
    previous = generate(level - 1, ctx, templates) if level > 1 else None
    if level == 3:
        name = "level3" if ctx.taxonomy is not None else "level3_plain"
    elif level == 2:
        name = "level2" if (ctx.left_action or ctx.right_action) else "level2_plain"
    else:
        name = "level1"
    template = templates.pick(name)
    slots = _build_slots(level, ctx, previous)
    try:
        return template.format_map(slots)
    except KeyError as exc:
        raise ValueError(f"unresolvable slot {exc.args[0]!r} in template {name!r}") from None


def describe_all(ctx: DescriptionContext, templates: TemplateSet) -> dict[int, str]:
    return {level: generate(level, ctx, templates) for level in (1, 2, 3)}
