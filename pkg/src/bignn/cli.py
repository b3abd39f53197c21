"""Command line interface: ingest, synth, train, infer, describe, eval, ablate."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .annotations import load_annotations, save_annotations
from .assets import load_affordances, load_hierarchy
from .config import RunConfig
from .describe import TemplateSet, generate
from .evaluate import description_exact_match, evaluate
from .pipeline import PipelineModel, prediction_hash, prediction_lines
from .synth import SCENARIOS, synth_generate
from .train import train_staged


def _load_config(config_path: str | None, seed: int | None, **flags) -> RunConfig:
    doc = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if seed is not None:
        doc["seed"] = seed
    for key, value in flags.items():
        if value is not None:
            doc[key] = value
    return RunConfig.from_dict(doc)


def _load_dataset(paths: tuple[str, ...], hierarchy=None) -> list:
    sequences = []
    for pattern in paths:
        path = Path(pattern)
        matches = sorted(path.parent.glob(path.name)) if any(
            ch in pattern for ch in "*?[") else [path]
        for match in matches:
            sequences.append(load_annotations(match, hierarchy=hierarchy))
    if not sequences:
        raise click.ClickException("no annotation files matched")
    return sequences


def _build_model(config: RunConfig, hierarchy_name: str) -> PipelineModel:
    return PipelineModel(config, load_hierarchy(hierarchy_name),
                         load_affordances("kit"))


_ablation_flags = [
    click.option("--no-embedding", "use_embedding", flag_value=False,
                 default=None, help="one-hot tokens instead of embeddings"),
    click.option("--no-spatial-edges", "use_spatial_edges", flag_value=False,
                 default=None),
    click.option("--no-action-edges", "use_action_edges", flag_value=False,
                 default=None),
    click.option("--no-tcn", "use_tcn", flag_value=False, default=None),
    click.option("--gat-levels", type=click.IntRange(1, 3), default=None),
    click.option("--tcn-profile", type=click.Choice(["kitchen", "daily", "sim"]),
                 default=None),
]


def _with_flags(fn):
    for flag in reversed(_ablation_flags):
        fn = flag(fn)
    return fn


@click.group()
def main():
    """Bimanual action recognition and description pipeline."""


@main.command()
@click.option("--data", "paths", multiple=True, required=True)
def ingest(paths):
    """Validate annotation files and print a summary."""
    for seq in _load_dataset(paths):
        hierarchy = load_hierarchy(seq.hierarchy)
        labeled = sum(1 for t in seq.truths if t.level1 is not None)
        click.echo(f"{seq.dataset}: {len(seq)} frames, "
                   f"{len(seq.action_vocabulary)} actions, "
                   f"{labeled} labeled frames, hierarchy ok "
                   f"({len(hierarchy.categories)} categories)")


@main.command()
@click.option("--scenario", type=click.Choice(SCENARIOS), required=True)
@click.option("--frames", type=int, default=60, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(), required=True)
def synth(scenario, frames, noise, seed, out):
    """Generate a self-labeled synthetic sequence."""
    seq = synth_generate(scenario, frames=frames, noise=noise, seed=seed)
    save_annotations(seq, out)
    click.echo(f"wrote {out}: {scenario}, {frames} frames, noise {noise}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, required=True)
@click.option("--data", "paths", multiple=True, required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--report", "report_path", type=click.Path(), default=None)
@_with_flags
def train(config_path, seed, paths, out, report_path, **flags):
    """Staged training; writes the weight archive and a JSON report."""
    config = _load_config(config_path, seed, **flags)
    sequences = _load_dataset(paths)
    model, report = train_staged(config, sequences)
    model.save(out)
    report["archive"] = str(out)
    text = json.dumps(report, indent=2, sort_keys=True)
    if report_path:
        Path(report_path).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--archive", "archive_path", type=click.Path(exists=True), required=True)
@click.option("--data", "paths", multiple=True, required=True)
@click.option("--out", type=click.Path(), default=None)
@_with_flags
def infer(config_path, seed, archive_path, paths, out, **flags):
    """Full-pipeline inference; emits one JSONL record per frame/segment."""
    config = _load_config(config_path, seed, **flags)
    sequences = _load_dataset(paths)
    model = _build_model(config, sequences[0].hierarchy)
    model.load_weights(archive_path)
    results = [model.predict_sequence(model.prepare(seq)) for seq in sequences]
    lines = [line for result in results for line in prediction_lines(result)]
    if out:
        Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        for line in lines:
            click.echo(line)
    click.echo(f"# prediction-hash {prediction_hash(results)}", err=True)


@main.command()
@click.option("--data", "paths", multiple=True, required=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--templates", "template_path", type=click.Path(exists=True),
              default=None)
def describe(paths, out, template_path):
    """Render reference descriptions from ground-truth labels."""
    templates = TemplateSet.from_file(template_path) if template_path \
        else TemplateSet.default()
    lines = []
    for seq in _load_dataset(paths):
        config = RunConfig()
        model = _build_model(config, seq.hierarchy)
        model.templates = templates
        cache = model.prepare(seq)
        for lo, hi, labels in _truth_segments(seq):
            decisions = _decisions_from_truth(model, labels, lo, hi, len(seq))
            ctx = model.describe_context(cache, lo, hi, decisions)
            record = {"type": "reference", "span": [lo, hi - 1],
                      "descriptions": {str(level): generate(level, ctx, templates)
                                       for level in (1, 2, 3)}}
            lines.append(json.dumps(record, sort_keys=True))
    if out:
        Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        for line in lines:
            click.echo(line)


def _truth_segments(seq):
    labels = [(t.level1, t.level2, t.level3) for t in seq.truths]
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            if labels[start][0] is not None:
                yield start, t, labels[start]
            start = t


def _decisions_from_truth(model, labels, lo, hi, n):
    decisions = {}
    path = model.hierarchy.truth_path(
        {"level1": labels[0], "level2": labels[1], "level3": labels[2]})
    for level in range(1, len(path) + 1):
        decisions[level] = [(path[:level], 1.0)] * n
    return decisions


@main.command("eval")
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True)
@click.option("--data", "paths", multiple=True, required=True)
@click.option("--out", type=click.Path(), default=None)
def eval_cmd(pred_path, paths, out):
    """Score a prediction stream against annotation ground truth."""
    sequences = _load_dataset(paths)
    results = _read_prediction_stream(pred_path, sequences)
    truths = [[{"level1": t.level1, "level2": t.level2, "level3": t.level3}
               for t in seq.truths] for seq in sequences]
    report = evaluate(results, truths)
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


def _read_prediction_stream(path, sequences):
    frames = []
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc.get("type") == "frame":
                frames.append(doc)
            elif doc.get("type") == "segment":
                segments.append(doc)
    results = []
    cursor = 0
    for seq in sequences:
        chunk = frames[cursor:cursor + len(seq)]
        if len(chunk) != len(seq):
            raise click.ClickException("length mismatch: prediction stream vs data")
        cursor += len(seq)
        results.append({"frames": chunk, "segments": []})
    return results


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, required=True)
@click.option("--data", "paths", multiple=True, required=True)
@click.option("--out", type=click.Path(), required=True)
def ablate(config_path, seed, paths, out):
    """Train + evaluate the standard ablation grid; write a combined report."""
    sequences = _load_dataset(paths)
    grid = [
        ("full", {}),
        ("no-embedding", {"use_embedding": False}),
        ("no-spatial-edges", {"use_spatial_edges": False}),
        ("no-action-edges", {"use_action_edges": False}),
        ("no-tcn", {"use_tcn": False}),
        ("gat-levels-2", {"gat_levels": 2}),
        ("gat-levels-1", {"gat_levels": 1}),
    ]
    combined = {}
    for name, overrides in grid:
        config = _load_config(config_path, seed, **overrides)
        model, report = train_staged(config, sequences)
        predictions = [model.predict_sequence(model.prepare(seq))
                       for seq in sequences]
        truths = [[{"level1": t.level1, "level2": t.level2, "level3": t.level3}
                   for t in seq.truths] for seq in sequences]
        combined[name] = {"training": report, "metrics": evaluate(predictions, truths)}
        click.echo(f"{name}: done", err=True)
    Path(out).write_text(json.dumps(combined, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    sys.exit(main())
