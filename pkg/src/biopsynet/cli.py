"""Command line interface: synth, patch, cluster, balance, train, eval,
pipeline."""

import os
import sys

import click

from . import CLASS_INDEX
from .classifier import TrainConfig, build_model, predict, train
from .checkpoint import load_model, save_model
from .imageio import read_image, write_image
from .manifest import read_manifest, write_manifest
from .metrics import evaluate
from .patch_filter import filter_patches
from .patching import assign_split, extract_patches
from .pipeline import (PipelineConfig, PipelineStageError, balance_directory,
                       read_config_file, run_pipeline)
from .reporting import (plot_history, plot_roc, report_to_dict,
                        write_cluster_summary, write_confusion_csv,
                        write_history_csv, write_metrics_json,
                        write_per_class_csv, write_roc_csv)
from .synthetic import SyntheticSpec, generate_synthetic, read_slide_index


@click.group()
def main():
    """Duodenal biopsy patch classification pipeline."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--slides-per-class", default=8, show_default=True)
@click.option("--slide-grid", default=4, show_default=True)
@click.option("--patch-size", default=64, show_default=True)
@click.option("--tissue-fraction", default=0.55, show_default=True)
def synth(out_dir, seed, slides_per_class, slide_grid, patch_size,
          tissue_fraction):
    """Generate the synthetic slide corpus."""
    spec = SyntheticSpec(seed=seed, slides_per_class=slides_per_class,
                         slide_grid=slide_grid, patch_size=patch_size,
                         tissue_fraction=tissue_fraction)
    rows = generate_synthetic(spec, out_dir)
    click.echo(f"wrote {len(rows)} slides to {out_dir}")


@main.command()
@click.option("--size", "patch_size", required=True, type=int)
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--test-fraction", default=0.25, show_default=True)
@click.option("--seed", default=0, show_default=True)
def patch(patch_size, in_dir, out_dir, manifest_path, test_fraction, seed):
    """Split slides into labeled patches and write the manifest."""
    index = read_slide_index(in_dir)
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for slide_id, label, path in index:
        slide = read_image(path)
        for rec, crop in extract_patches(slide, patch_size, slide_id, label):
            write_image(os.path.join(out_dir, f"{rec.patch_id}.ppm"), crop)
            records.append(rec)
    records = assign_split(records, test_fraction, seed)
    write_manifest(manifest_path, records)
    click.echo(f"wrote {len(records)} patches and {manifest_path}")


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--summary", "summary_path", default=None, type=click.Path())
@click.option("--epochs", default=6, show_default=True)
@click.option("--learning-rate", default=0.002, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cluster(in_dir, manifest_path, summary_path, epochs, learning_rate, seed):
    """Assign each patch to the useful or not_useful cluster."""
    records = read_manifest(manifest_path)
    patches = [read_image(os.path.join(in_dir, f"{r.patch_id}.ppm"))
               for r in records]
    labels, _, _, _ = filter_patches(patches, ae_epochs=epochs, seed=seed,
                                     learning_rate=learning_rate)
    records = [rec.with_cluster(lab) for rec, lab in zip(records, labels)]
    write_manifest(manifest_path, records)
    if summary_path is None:
        summary_path = os.path.join(os.path.dirname(manifest_path) or ".",
                                    "cluster_summary.csv")
    write_cluster_summary(summary_path, records)
    useful = sum(1 for r in records if r.cluster == "useful")
    click.echo(f"{useful}/{len(records)} patches useful; summary at {summary_path}")


@main.command()
@click.option("--percentages", required=True,
              help="Comma-separated balancing percentages, e.g. 0.5,1.0,1.5,2.0")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def balance(percentages, in_dir, out_dir):
    """Write one color-balanced copy of each patch per percentage."""
    values = [float(v) for v in percentages.split(",") if v]
    pairs = balance_directory(in_dir, out_dir, values)
    for pct, subdir in pairs:
        click.echo(f"p{pct:g} -> {subdir}")


def _load_train_config(path):
    """Returns (TrainConfig, pool_chain or None) from a key=value file."""
    raw = read_config_file(path)
    known = {
        "learning_rate": float, "beta1": float, "beta2": float,
        "epsilon": float, "batch_size": int, "epochs": int, "seed": int,
        "patch_size": int,
    }
    kwargs = {}
    pool_chain = None
    for key, value in raw.items():
        if key == "pool_chain":
            pool_chain = tuple(int(v) for v in value.split(","))
        elif key in known:
            kwargs[key] = known[key](value)
        else:
            raise ValueError(f"unknown train config key {key!r}")
    return TrainConfig(**kwargs), pool_chain


def _dataset_from_dirs(records, patch_dirs, split: str):
    wanted = [r for r in records if r.split == split and r.cluster == "useful"]
    patches, labels = [], []
    for d in patch_dirs:
        for rec in wanted:
            patches.append(read_image(os.path.join(d, f"{rec.patch_id}.ppm")))
            labels.append(CLASS_INDEX[rec.class_label])
    return patches, labels


@main.command(name="train")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--patches", "patch_dirs", required=True, multiple=True,
              type=click.Path(exists=True),
              help="Patch directory; repeat for balance-expanded sets.")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "model_path", required=True, type=click.Path())
def train_cmd(manifest_path, patch_dirs, config_path, model_path):
    """Train the classifier on useful train-split patches."""
    config, pool_chain = _load_train_config(config_path)
    records = read_manifest(manifest_path)
    patches, labels = _dataset_from_dirs(records, patch_dirs, "train")
    if not patches:
        raise click.ClickException("no useful train-split patches found")
    model = build_model(config.patch_size, seed=config.seed,
                        pool_chain=pool_chain)
    history = train(model, patches, labels, config)
    save_model(model_path, model)
    base = os.path.dirname(model_path) or "."
    write_history_csv(os.path.join(base, "history.csv"),
                      history.loss, history.accuracy)
    plot_history(os.path.join(base, "history.png"),
                 history.loss, history.accuracy)
    click.echo(f"final epoch loss {history.loss[-1]:.4f}, "
               f"accuracy {history.accuracy[-1]:.3f}; model at {model_path}")


@main.command(name="eval")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True))
@click.option("--patches", "patch_dirs", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "test"]))
def eval_cmd(manifest_path, patch_dirs, model_path, out_dir, split):
    """Evaluate a checkpoint; writes tables, ROC CSV and rendered figures."""
    model, _ = load_model(model_path)
    records = read_manifest(manifest_path)
    patches, labels = _dataset_from_dirs(records, patch_dirs, split)
    if not patches:
        raise click.ClickException(f"no useful {split}-split patches found")
    scores = predict(model, patches)
    report = evaluate(labels, scores)
    os.makedirs(out_dir, exist_ok=True)
    write_confusion_csv(os.path.join(out_dir, "confusion.csv"), report.matrix)
    write_per_class_csv(os.path.join(out_dir, "per_class_metrics.csv"), report)
    write_roc_csv(os.path.join(out_dir, "roc_points.csv"), report)
    plot_roc(os.path.join(out_dir, "roc_curves.png"), report)
    write_metrics_json(os.path.join(out_dir, "metrics.json"),
                       report_to_dict(report))
    click.echo(f"accuracy {report.summary.accuracy:.3f}, "
               f"macro F1 {report.summary.macro_f1:.3f}; report in {out_dir}")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--seed", default=None, type=int,
              help="Override the config seed for every stochastic stage.")
def pipeline(config_path, seed):
    """Run patch -> cluster -> balance -> train -> eval end to end."""
    raw = read_config_file(config_path)
    if seed is not None:
        raw["seed"] = str(seed)
    cfg = PipelineConfig.from_mapping(raw)
    try:
        code = run_pipeline(cfg, log=click.echo)
    except PipelineStageError as exc:
        raise click.ClickException(str(exc))
    sys.exit(code)
