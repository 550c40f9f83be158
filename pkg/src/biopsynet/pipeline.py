"""Stage sequencing: synth -> patch -> cluster -> balance -> train -> eval.

Each stage is idempotent: it is skipped when its outputs already exist and
no upstream stage ran in the current invocation. All file writes go through
a temp-then-rename step, so partial outputs never masquerade as complete.
The final metrics summary always lands at <report_dir>/metrics.json.
"""

import os
from dataclasses import dataclass

from . import CLASS_INDEX
from .classifier import TrainConfig, build_model, predict, train
from .checkpoint import load_model, save_model
from .color_balance import TEST_SWEEP, TRAIN_SWEEP, apply_balance, derive_params
from .imageio import read_image, write_image
from .manifest import read_manifest, write_manifest
from .metrics import evaluate
from .patch_filter import filter_patches
from .patching import assign_split, extract_patches
from .reporting import (plot_history, plot_roc, report_to_dict,
                        write_cluster_summary, write_confusion_csv,
                        write_history_csv, write_metrics_json,
                        write_per_class_csv, write_roc_csv)
from .synthetic import SyntheticSpec, generate_synthetic, read_slide_index


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def read_config_file(path) -> dict:
    """Flat key = value lines; blank lines and # comments ignored."""
    config = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, _, value = line.partition("=")
            config[key.strip()] = value.strip()
    return config


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in str(text).split(",") if v != "")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in str(text).split(",") if v != "")


@dataclass
class PipelineConfig:
    workdir: str = "work"
    synthetic: bool = True
    seed: int = 0
    slides_per_class: int = 8
    slide_grid: int = 4
    tissue_fraction: float = 0.55
    patch_size: int = 64
    pool_chain: tuple = (4, 2, 2)
    test_fraction: float = 0.25
    ae_epochs: int = 6
    ae_learning_rate: float = 0.002
    epochs: int = 12
    batch_size: int = 16
    learning_rate: float = 0.001
    train_percentages: tuple = TRAIN_SWEEP
    test_percentages: tuple = TEST_SWEEP
    # stage paths; empty string means "derive from workdir"
    slides_dir: str = ""
    patches_dir: str = ""
    manifest: str = ""
    cluster_summary: str = ""
    balanced_dir: str = ""
    model: str = ""
    report_dir: str = ""

    def __post_init__(self):
        join = os.path.join
        self.slides_dir = self.slides_dir or join(self.workdir, "slides")
        self.patches_dir = self.patches_dir or join(self.workdir, "patches")
        self.manifest = self.manifest or join(self.workdir, "manifest.csv")
        self.cluster_summary = self.cluster_summary or join(
            self.workdir, "cluster_summary.csv")
        self.balanced_dir = self.balanced_dir or join(self.workdir, "balanced")
        self.model = self.model or join(self.workdir, "model.ckpt")
        self.report_dir = self.report_dir or join(self.workdir, "report")

    @classmethod
    def from_mapping(cls, raw: dict) -> "PipelineConfig":
        kwargs = {}
        converters = {
            "workdir": str, "slides_dir": str, "patches_dir": str,
            "manifest": str, "cluster_summary": str, "balanced_dir": str,
            "model": str, "report_dir": str,
            "synthetic": lambda v: str(v).lower() in ("1", "true", "yes"),
            "seed": int, "slides_per_class": int, "slide_grid": int,
            "patch_size": int, "ae_epochs": int, "epochs": int,
            "batch_size": int,
            "tissue_fraction": float, "test_fraction": float,
            "ae_learning_rate": float, "learning_rate": float,
            "pool_chain": _ints,
            "train_percentages": _floats, "test_percentages": _floats,
        }
        for key, value in raw.items():
            if key not in converters:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = converters[key](value)
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# stages


def _patch_path(patches_dir: str, patch_id: str) -> str:
    return os.path.join(patches_dir, f"{patch_id}.ppm")


def stage_synth(cfg: PipelineConfig) -> None:
    spec = SyntheticSpec(
        seed=cfg.seed, slides_per_class=cfg.slides_per_class,
        slide_grid=cfg.slide_grid, patch_size=cfg.patch_size,
        tissue_fraction=cfg.tissue_fraction)
    generate_synthetic(spec, cfg.slides_dir)


def stage_patch(cfg: PipelineConfig) -> None:
    index = read_slide_index(cfg.slides_dir)
    os.makedirs(cfg.patches_dir, exist_ok=True)
    records = []
    for slide_id, label, path in index:
        slide = read_image(path)
        for rec, crop in extract_patches(slide, cfg.patch_size, slide_id, label):
            write_image(_patch_path(cfg.patches_dir, rec.patch_id), crop)
            records.append(rec)
    records = assign_split(records, cfg.test_fraction, cfg.seed)
    write_manifest(cfg.manifest, records)


def stage_cluster(cfg: PipelineConfig) -> None:
    records = read_manifest(cfg.manifest)
    patches = [read_image(_patch_path(cfg.patches_dir, r.patch_id))
               for r in records]
    labels, _, _, _ = filter_patches(
        patches, ae_epochs=cfg.ae_epochs, seed=cfg.seed,
        learning_rate=cfg.ae_learning_rate)
    records = [rec.with_cluster(lab) for rec, lab in zip(records, labels)]
    write_manifest(cfg.manifest, records)
    write_cluster_summary(cfg.cluster_summary, records)


def balance_directory(in_dir: str, out_dir: str, percentages,
                      patch_ids=None) -> list:
    """Write one balanced copy of each input patch per percentage.

    Output layout: <out_dir>/p<percentage>/<patch_id>.ppm. Returns
    (percentage, subdir) pairs.
    """
    if patch_ids is None:
        patch_ids = sorted(
            name[: -len(".ppm")] for name in os.listdir(in_dir)
            if name.endswith(".ppm"))
    out = []
    for pct in percentages:
        subdir = os.path.join(out_dir, f"p{pct:g}")
        os.makedirs(subdir, exist_ok=True)
        for pid in patch_ids:
            image = read_image(_patch_path(in_dir, pid))
            balanced = apply_balance(image, derive_params(image, pct))
            write_image(_patch_path(subdir, pid), balanced)
        out.append((pct, subdir))
    return out


def _useful_ids(records, split: str) -> list:
    return [r.patch_id for r in records
            if r.split == split and r.cluster == "useful"]


def stage_balance(cfg: PipelineConfig) -> None:
    records = read_manifest(cfg.manifest)
    train_ids = _useful_ids(records, "train")
    test_ids = _useful_ids(records, "test")
    if not train_ids or not test_ids:
        raise ValueError("no useful patches in train or test split")
    conditions = [
        ("train", cfg.train_percentages, train_ids),
        ("test_same", cfg.train_percentages, test_ids),
        ("test_shift", cfg.test_percentages, test_ids),
    ]
    rows = []
    for name, percentages, ids in conditions:
        pairs = balance_directory(cfg.patches_dir,
                                  os.path.join(cfg.balanced_dir, name),
                                  percentages, patch_ids=ids)
        for pct, subdir in pairs:
            rows.append(f"{name},{pct:g},{os.path.relpath(subdir, cfg.balanced_dir)},{len(ids)}")
    # index written last: its presence marks the stage complete
    index_path = os.path.join(cfg.balanced_dir, "balance_index.csv")
    tmp = index_path + ".tmp"
    with open(tmp, "w") as f:
        f.write("condition,percentage,subdir,count\n")
        f.write("\n".join(rows) + "\n")
    os.replace(tmp, index_path)


def _sweep_dataset(cfg: PipelineConfig, condition: str, percentages, ids):
    """Load (patches, labels) for every (percentage, patch) pair."""
    records = {r.patch_id: r for r in read_manifest(cfg.manifest)}
    patches, labels = [], []
    for pct in percentages:
        subdir = os.path.join(cfg.balanced_dir, condition, f"p{pct:g}")
        for pid in ids:
            patches.append(read_image(_patch_path(subdir, pid)))
            labels.append(CLASS_INDEX[records[pid].class_label])
    return patches, labels


def stage_train(cfg: PipelineConfig) -> None:
    records = read_manifest(cfg.manifest)
    train_ids = _useful_ids(records, "train")
    patches, labels = _sweep_dataset(cfg, "train", cfg.train_percentages,
                                     train_ids)
    model = build_model(cfg.patch_size, seed=cfg.seed,
                        pool_chain=cfg.pool_chain)
    config = TrainConfig(
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        epochs=cfg.epochs, seed=cfg.seed, patch_size=cfg.patch_size)
    history = train(model, patches, labels, config)
    save_model(cfg.model, model)
    base = os.path.dirname(cfg.model) or "."
    write_history_csv(os.path.join(base, "history.csv"),
                      history.loss, history.accuracy)
    plot_history(os.path.join(base, "history.png"),
                 history.loss, history.accuracy)


def _evaluate_condition(cfg: PipelineConfig, model, condition: str,
                        percentages, ids, out_dir: str) -> dict:
    patches, labels = _sweep_dataset(cfg, condition, percentages, ids)
    scores = predict(model, patches)
    report = evaluate(labels, scores)
    os.makedirs(out_dir, exist_ok=True)
    write_confusion_csv(os.path.join(out_dir, "confusion.csv"), report.matrix)
    write_per_class_csv(os.path.join(out_dir, "per_class_metrics.csv"), report)
    write_roc_csv(os.path.join(out_dir, "roc_points.csv"), report)
    plot_roc(os.path.join(out_dir, "roc_curves.png"), report,
             title=f"ROC ({condition})")
    return report_to_dict(report)


def stage_eval(cfg: PipelineConfig) -> None:
    model, _ = load_model(cfg.model)
    records = read_manifest(cfg.manifest)
    test_ids = _useful_ids(records, "test")
    same = _evaluate_condition(cfg, model, "test_same", cfg.train_percentages,
                               test_ids, os.path.join(cfg.report_dir, "same"))
    shift = _evaluate_condition(cfg, model, "test_shift", cfg.test_percentages,
                                test_ids, os.path.join(cfg.report_dir, "shift"))
    payload = {
        "same_balance": same,
        "shifted_balance": shift,
        "macro_f1_drop": same["macro"]["f1"] - shift["macro"]["f1"],
    }
    # metrics.json written last: the stable stage-completion marker
    write_metrics_json(os.path.join(cfg.report_dir, "metrics.json"), payload)


@dataclass
class Stage:
    name: str
    outputs: list
    run: object
    enabled: bool = True


def pipeline_stages(cfg: PipelineConfig) -> list:
    base = os.path.dirname(cfg.model) or "."
    return [
        Stage("synth", [os.path.join(cfg.slides_dir, "slides.csv")],
              stage_synth, enabled=cfg.synthetic),
        Stage("patch", [cfg.manifest], stage_patch),
        Stage("cluster", [cfg.cluster_summary], stage_cluster),
        Stage("balance", [os.path.join(cfg.balanced_dir, "balance_index.csv")],
              stage_balance),
        Stage("train", [cfg.model, os.path.join(base, "history.csv")],
              stage_train),
        Stage("eval", [os.path.join(cfg.report_dir, "metrics.json")],
              stage_eval),
    ]


def run_pipeline(cfg: PipelineConfig, log=print) -> int:
    """Run all stages, skipping those whose outputs are already complete.

    A stage reruns when any of its outputs is missing or any upstream stage
    ran in this invocation. Returns 0 on success; raises
    PipelineStageError naming the failed stage otherwise.
    """
    upstream_ran = False
    for stage in pipeline_stages(cfg):
        if not stage.enabled:
            continue
        complete = all(os.path.exists(p) for p in stage.outputs)
        if complete and not upstream_ran:
            log(f"[pipeline] {stage.name}: up to date, skipping")
            continue
        log(f"[pipeline] {stage.name}: running")
        try:
            stage.run(cfg)
        except Exception as exc:
            raise PipelineStageError(stage.name, str(exc)) from exc
        upstream_ran = True
    log(f"[pipeline] done; summary at "
        f"{os.path.join(cfg.report_dir, 'metrics.json')}")
    return 0
