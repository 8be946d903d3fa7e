"""``brasyn`` command line: phantom data, both training stages, evaluation and reports.

Every command reads the same configuration (profile defaults, then an optional
JSON file, then flags) and works inside one output directory::

    <out>/data/{train,test}/<case>/      phantom studies + manifest.csv
    <out>/priors.csv                     per-modality intensity priors
    <out>/stage1/                        stage-1 checkpoints and loss log
    <out>/proxy/segproxy.pt              frozen proxy segmenter
    $BRASYN_CACHE or <out>/cache/        stage-1 volumes, <target>/<strategy>/<split>/
    <out>/refiner/                       refiner checkpoints and loss log
    <out>/refined/<target>/<strategy>/   refined volumes
    <out>/eval/<target>_<strategy>.csv   per-case metrics
    <out>/report/                        summary tables
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint
from .config import PROFILES, PipelineConfig, load_config, save_config
from .intensity import REFERENCE_PRIORS, SamplingStrategy, fit_prior, load_priors, save_priors
from .io import list_cases, load_study, load_volume, save_study, save_volume
from .metrics import HD95_EMPTY_SENTINEL, SSIM_VARIANT, evaluate_case, summarize
from .phantom import PhantomSpec, generate_corpus, write_manifest
from .refiner3d import load_refiner, make_stage2_case, refine, stage1_to_stage2, train_refiner
from .segproxy import load_proxy, segment, study_channels, train_proxy
from .synth2d import build_slice_dataset, load_stage1, synthesize_volume, train_stage1
from .volumes import MODALITIES, REGIONS, Modality, Volume

log = logging.getLogger("brasyn")

SPLITS = ("train", "test")
TEST_SEED_OFFSET = 10_000


class MissingArtifactError(RuntimeError):
    """An upstream pipeline artifact is absent."""


def _require(path: Path, what: str, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {what} at {path} (run `brasyn {producer}` first)")
    return path


# --- layout -----------------------------------------------------------------

class Layout:
    def __init__(self, cfg: PipelineConfig):
        self.root = Path(cfg.out)
        cache = os.environ.get("BRASYN_CACHE")
        self.cache = Path(cache) if cache else self.root / "cache"

    def data(self, split: str) -> Path:
        return self.root / "data" / split

    @property
    def priors(self) -> Path:
        return self.root / "priors.csv"

    @property
    def stage1(self) -> Path:
        return self.root / "stage1"

    @property
    def proxy(self) -> Path:
        return self.root / "proxy" / "segproxy.pt"

    @property
    def refiner(self) -> Path:
        return self.root / "refiner"

    def synthesized(self, target: Modality, strategy: str, split: str) -> Path:
        return self.cache / target.value / strategy / split

    def refined(self, target: Modality, strategy: str) -> Path:
        return self.root / "refined" / target.value / strategy

    def eval_csv(self, target: Modality, strategy: str) -> Path:
        return self.root / "eval" / f"{target.value}_{strategy}.csv"

    @property
    def report(self) -> Path:
        return self.root / "report"


def latest_checkpoint(directory: Path, prefix: str, producer: str) -> Path:
    found = sorted(directory.glob(f"{prefix}_epoch*.pt")) if directory.is_dir() else []
    if not found:
        raise MissingArtifactError(f"missing {prefix} checkpoint in {directory} (run `brasyn {producer}` first)")
    return found[-1]


def _load_split(layout: Layout, split: str):
    root = _require(layout.data(split), f"{split} data", "generate-data")
    dirs = list_cases(root)
    if not dirs:
        raise MissingArtifactError(f"missing {split} cases in {root} (run `brasyn generate-data` first)")
    return [load_study(d) for d in dirs]


def _seed_all(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


# --- commands -----------------------------------------------------------------

def cmd_generate_data(cfg: PipelineConfig) -> None:
    layout = Layout(cfg)
    spec = PhantomSpec(shape=tuple(cfg.data.shape))
    rows = []
    for split, n, base in (("train", cfg.data.n_train, cfg.seed),
                           ("test", cfg.data.n_test, cfg.seed + TEST_SEED_OFFSET)):
        studies, manifest = generate_corpus(n, base, spec, prefix=f"{split}")
        for study in studies:
            save_study(layout.data(split), study)
        rows += [{"split": split, **r} for r in manifest]
    write_manifest(layout.root / "data" / "manifest.csv", rows)
    print(f"wrote {cfg.data.n_train} train and {cfg.data.n_test} test cases to {layout.root / 'data'}")


def cmd_fit_prior(cfg: PipelineConfig, reference: bool = False) -> None:
    layout = Layout(cfg)
    if reference:
        priors = list(REFERENCE_PRIORS.values())
    else:
        studies = _load_split(layout, "train")
        priors = [fit_prior([s.volumes[m] for s in studies], m) for m in MODALITIES]
    save_priors(layout.priors, priors)
    for p in priors:
        print(f"{p.modality.value}: mean={p.mean:.4f} std={p.std:.4f} (n={p.n_samples})")


def cmd_train_stage1(cfg: PipelineConfig) -> None:
    layout = Layout(cfg)
    studies = _load_split(layout, "train")
    _seed_all(cfg.seed)
    dataset = build_slice_dataset(studies, cfg.stage1.min_brain_pixels)
    gen_cfg = replace(cfg.generator, slice_size=tuple(dataset.slices.shape[2:]))
    _, history = train_stage1(dataset, gen_cfg, cfg.loss_weights, replace(cfg.stage1, seed=cfg.seed),
                              layout.stage1)
    print(f"stage 1: {len(history)} steps on {len(dataset)} slices, final g_total={history[-1]['g_total']:.4f}")


def _priors_or_fail(layout: Layout, priors_path: Optional[str]):
    path = Path(priors_path) if priors_path else layout.priors
    return load_priors(_require(path, "intensity priors", "fit-prior"))


def cmd_synthesize(cfg: PipelineConfig, splits=SPLITS, priors_path: Optional[str] = None) -> None:
    layout = Layout(cfg)
    target = Modality.parse(cfg.target)
    priors = _priors_or_fail(layout, priors_path)
    if target not in priors:
        raise MissingArtifactError(f"missing {target.value} prior in {layout.priors}")
    model = load_stage1(load_checkpoint(latest_checkpoint(layout.stage1, "stage1", "train-stage1"), "stage1"))
    _seed_all(cfg.seed)
    for split in splits:
        out = layout.synthesized(target, cfg.strategy, split)
        studies = _load_split(layout, split)
        for i, study in enumerate(studies):
            vol = synthesize_volume(model, study, target, priors[target], cfg.strategy,
                                    rng_seed=[cfg.seed, i, SPLITS.index(split)])
            save_volume(out / f"{study.case_id}.nii.gz", vol)
        print(f"synthesized {target.value} for {len(studies)} {split} cases -> {out}")


def cmd_train_proxy(cfg: PipelineConfig) -> None:
    layout = Layout(cfg)
    studies = _load_split(layout, "train")
    _seed_all(cfg.seed)
    p = cfg.proxy
    _, history = train_proxy(studies, p.epochs, cfg.seed, p.patch_size, p.batch_size, p.patches_per_case,
                             p.lr, p.widths, out_path=layout.proxy)
    print(f"proxy segmenter: {p.epochs} epochs, final loss={history[-1]['loss']:.4f}")


def _refiner_targets(cfg: PipelineConfig) -> List[Modality]:
    return [Modality.parse(t) for t in (cfg.refiner_targets or [cfg.target])]


def _stage1_volume(layout: Layout, target: Modality, strategy: str, split: str, case_id: str) -> Volume:
    path = layout.synthesized(target, strategy, split) / f"{case_id}.nii.gz"
    return load_volume(_require(path, f"synthesized {target.value} volume for {case_id}", "synthesize"), target)


def cmd_train_refiner(cfg: PipelineConfig) -> None:
    layout = Layout(cfg)
    studies = _load_split(layout, "train")
    segmenter = load_proxy(load_checkpoint(_require(layout.proxy, "proxy segmenter", "train-proxy"), "segproxy"))
    targets = _refiner_targets(cfg)
    cases = []
    for i, study in enumerate(studies):
        target = targets[i % len(targets)]
        syn = _stage1_volume(layout, target, cfg.strategy, "train", study.case_id)
        cases.append(make_stage2_case(study, syn.data, target))
    _seed_all(cfg.seed)
    refiner_cfg = replace(cfg.refiner, patch_size=cfg.refiner_train.patch_size)
    _, history = train_refiner(cases, segmenter, refiner_cfg, replace(cfg.refiner_train, seed=cfg.seed),
                               out_dir=layout.refiner)
    print(f"refiner: {len(history)} steps on {len(cases)} cases, final loss={history[-1]['total']:.4f}")


def cmd_refine(cfg: PipelineConfig) -> None:
    layout = Layout(cfg)
    target = Modality.parse(cfg.target)
    model = load_refiner(load_checkpoint(latest_checkpoint(layout.refiner, "refiner", "train-refiner"), "refiner"))
    studies = _load_split(layout, "test")
    out = layout.refined(target, cfg.strategy)
    for study in studies:
        case = make_stage2_case(study, _stage1_volume(layout, target, cfg.strategy, "test", study.case_id).data,
                                target)
        avail = {m: case.channels[m.index] for m in MODALITIES if m != target}
        refined = refine(model, case.synthesized, target, avail)
        save_volume(out / f"{study.case_id}.nii.gz", Volume(refined, study.spacing, target))
    print(f"refined {len(studies)} test cases -> {out}")


def _case_metrics(study, target: Modality, stage1: np.ndarray, refined: np.ndarray, segmenter) -> dict:
    case = make_stage2_case(study, stage1, target)
    brain = study.without(target).brain_mask()
    reference = case.channels[target.index]
    row = {"case_id": study.case_id}
    for stage, syn in (("stage1", case.synthesized), ("refined", refined)):
        channels = case.channels.copy()
        channels[target.index] = syn
        pred, _ = segment(segmenter, channels)
        report = evaluate_case(study.case_id, syn, reference, case.labels, pred, study.spacing, brain)
        for k, v in report.as_row().items():
            if k != "case_id":
                row[f"{stage}_{k}"] = v
    return row


def cmd_evaluate(cfg: PipelineConfig) -> Path:
    layout = Layout(cfg)
    target = Modality.parse(cfg.target)
    segmenter = load_proxy(load_checkpoint(_require(layout.proxy, "proxy segmenter", "train-proxy"), "segproxy"))
    studies = _load_split(layout, "test")
    jobs = []
    for study in studies:
        stage1 = _stage1_volume(layout, target, cfg.strategy, "test", study.case_id).data
        refined_path = layout.refined(target, cfg.strategy) / f"{study.case_id}.nii.gz"
        refined = load_volume(_require(refined_path, f"refined volume for {study.case_id}", "refine")).data
        jobs.append((study, stage1, refined))
    with ThreadPoolExecutor(max_workers=max(1, cfg.eval_workers)) as pool:
        rows = list(pool.map(lambda j: _case_metrics(j[0], target, j[1], j[2], segmenter), jobs))
    rows.sort(key=lambda r: r["case_id"])
    path = layout.eval_csv(target, cfg.strategy)
    write_rows(path, rows)
    means = {k: float(np.mean([r[k] for r in rows])) for k in ("stage1_ssim_whole", "refined_ssim_whole")}
    dice_before = np.mean([[r[f"stage1_dice_{g}"] for g in REGIONS] for r in rows])
    dice_after = np.mean([[r[f"refined_dice_{g}"] for g in REGIONS] for r in rows])
    print(f"{target.value}: SSIM {means['stage1_ssim_whole']:.4f} -> {means['refined_ssim_whole']:.4f}, "
          f"mean Dice {dice_before:.4f} -> {dice_after:.4f} ({len(rows)} cases) -> {path}")
    return path


# --- report -------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_rows(path: Path, rows: List[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(rows[0].keys()))
        for r in rows:
            writer.writerow([_fmt(v) for v in r.values()])


def read_rows(path: Path) -> List[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (v if k == "case_id" else float(v)) for k, v in r.items()} for r in rows]


def _mean(rows, key) -> float:
    return summarize([r[key] for r in rows])["mean"]


def build_report(eval_files: Dict[str, Path]) -> Dict[str, List[dict]]:
    """Summary tables from per-case evaluation CSVs keyed by ``"<target>_<strategy>"``."""
    tables = {"table1_ssim": [], "table2_masked_ssim": [], "table3_dice": [], "table4_stats": []}
    for name, path in sorted(eval_files.items()):
        target, strategy = name.split("_", 1)
        rows = read_rows(path)
        key = {"target": target, "strategy": strategy, "n_cases": len(rows)}
        tables["table1_ssim"].append({**key, "ssim_stage1": _mean(rows, "stage1_ssim_whole"),
                                      "ssim_refined": _mean(rows, "refined_ssim_whole")})
        tables["table2_masked_ssim"].append({
            **key,
            "tumor_stage1": _mean(rows, "stage1_ssim_tumor"), "healthy_stage1": _mean(rows, "stage1_ssim_healthy"),
            "tumor_refined": _mean(rows, "refined_ssim_tumor"),
            "healthy_refined": _mean(rows, "refined_ssim_healthy")})
        dice_row = dict(key)
        for stage in ("stage1", "refined"):
            for r in ("WT", "ET", "TC"):
                dice_row[f"{r}_{stage}"] = _mean(rows, f"{stage}_dice_{r}")
            dice_row[f"mean_{stage}"] = float(np.mean([dice_row[f"{r}_{stage}"] for r in ("WT", "ET", "TC")]))
        tables["table3_dice"].append(dice_row)
        metrics = [m for m in rows[0] if m.startswith("refined_")]
        for m in metrics:
            values = [r[m] for r in rows]
            if m.startswith("refined_hd95"):
                values = [v for v in values if v != HD95_EMPTY_SENTINEL] or values
            tables["table4_stats"].append({**key, "metric": m[len("refined_"):], **summarize(values)})
    return tables


def cmd_report(cfg: PipelineConfig) -> Path:
    layout = Layout(cfg)
    eval_dir = layout.root / "eval"
    files = {p.stem: p for p in sorted(eval_dir.glob("*.csv"))} if eval_dir.is_dir() else {}
    if not files:
        raise MissingArtifactError(f"missing evaluation CSVs in {eval_dir} (run `brasyn evaluate` first)")
    tables = build_report(files)
    lines = ["# brasyn report", "", f"SSIM: {SSIM_VARIANT}; computed on z-normalized volumes.",
             f"HD95: {HD95_EMPTY_SENTINEL} mm when exactly one mask is empty.", ""]
    for name, rows in tables.items():
        write_rows(layout.report / f"{name}.csv", rows)
        lines += [f"## {name}", "", "| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
        for r in rows:
            lines.append("| " + " | ".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in r.values())
                         + " |")
        lines.append("")
    (layout.report / "report.md").write_text("\n".join(lines))
    print(f"report tables -> {layout.report}")
    return layout.report


def cmd_pipeline(cfg: PipelineConfig) -> Path:
    """generate-data → fit-prior → train-stage1 → synthesize → train-proxy → train-refiner → refine → evaluate → report."""
    cmd_generate_data(cfg)
    cmd_fit_prior(cfg)
    cmd_train_stage1(cfg)
    for target in sorted(set(_refiner_targets(cfg)) | {Modality.parse(cfg.target)}, key=lambda m: m.index):
        cmd_synthesize(replace(cfg, target=target.value))
    cmd_train_proxy(cfg)
    cmd_train_refiner(cfg)
    cmd_refine(cfg)
    path = cmd_evaluate(cfg)
    cmd_report(cfg)
    return path


# --- argument parsing ---------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (nested keys override the profile)")
    p.add_argument("--profile", choices=PROFILES, help="scale profile (default: toy)")
    p.add_argument("--seed", type=int, help="master seed for data, training and sampling")
    p.add_argument("--target", choices=[m.value for m in MODALITIES], help="missing modality to synthesize")
    p.add_argument("--strategy", choices=[s.value for s in SamplingStrategy], help="target-intensity sampling")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brasyn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "generate-data": "write a phantom train/test corpus",
        "fit-prior": "fit per-modality median-intensity priors on the training split",
        "train-stage1": "train the 2D slice generator",
        "synthesize": "synthesize the target modality with the stage-1 model",
        "train-proxy": "train the frozen proxy segmenter",
        "train-refiner": "train the 3D refiner on stage-1 volumes",
        "refine": "refine stage-1 test volumes",
        "evaluate": "per-case SSIM / Dice / HD95 before and after refinement",
        "report": "aggregate evaluation CSVs into summary tables",
        "pipeline": "run every step in order",
    }
    for name, help_ in specs.items():
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("generate-data", "pipeline"):
            p.add_argument("--n", type=int, help="number of training cases")
            p.add_argument("--n-test", type=int, help="number of held-out cases")
        if name == "fit-prior":
            p.add_argument("--reference", action="store_true",
                           help="write the published BraTS reference priors instead of fitting")
        if name == "synthesize":
            p.add_argument("--split", choices=SPLITS + ("all",), default="all")
            p.add_argument("--priors", help="prior CSV (default: <out>/priors.csv)")
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    data = {}
    if getattr(args, "n", None) is not None:
        data["n_train"] = args.n
    if getattr(args, "n_test", None) is not None:
        data["n_test"] = args.n_test
    return load_config(args.config, args.profile, seed=args.seed, target=args.target,
                       strategy=args.strategy, out=args.out, data=data or None)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        save_config(Path(cfg.out) / "run_config.json", cfg)
        cmd = args.command
        if cmd == "generate-data":
            cmd_generate_data(cfg)
        elif cmd == "fit-prior":
            cmd_fit_prior(cfg, reference=args.reference)
        elif cmd == "train-stage1":
            cmd_train_stage1(cfg)
        elif cmd == "synthesize":
            splits = SPLITS if args.split == "all" else (args.split,)
            cmd_synthesize(cfg, splits, args.priors)
        elif cmd == "train-proxy":
            cmd_train_proxy(cfg)
        elif cmd == "train-refiner":
            cmd_train_refiner(cfg)
        elif cmd == "refine":
            cmd_refine(cfg)
        elif cmd == "evaluate":
            cmd_evaluate(cfg)
        elif cmd == "report":
            cmd_report(cfg)
        elif cmd == "pipeline":
            cmd_pipeline(cfg)
    except (MissingArtifactError, ValueError, OSError) as exc:
        print(f"brasyn {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, MissingArtifactError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
