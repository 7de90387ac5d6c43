"""One-command end-to-end experiment on a synthetic phantom cohort.

Generates an age-spanning cohort, builds every training plan (adult-only,
pediatric-only, mixed, sequential fine-tuning, and rehearsal at several
sampling probabilities), trains the voxel segmenter on each, and evaluates
all of them on the held-out test split, with an additional 1.5x-upscaling
row for the adult-only model on pediatric cases.  Outputs are a
markdown/CSV table of per-age-bin DSC/NSD, a per-case CSV for age plots,
and a machine-readable summary JSON.  Everything derives from one seed and
is byte-reproducible.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cohort, phantom, report
from .metrics import NsdConfig, evaluate_case, write_metrics_csv
from .resample import da_upscale_pipeline
from .trainer import (
    ModelParams,
    TrainConfig,
    fixed_window_predictor,
    predict,
    save_model,
    train,
)
from .volume import read_volume

__all__ = ["ExperimentConfig", "QUICK", "FULL", "run_experiment"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    dims: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    noise_sigma: float = 20.0
    n_adult: int = 22
    n_pediatric: int = 38
    fractions: tuple[float, float, float] = (0.6, 0.1, 0.3)
    baseline_epochs: int = 20
    stage1_epochs: int = 10
    stage2_epochs: int = 10
    rehearsal_ps: tuple[float, ...] = (0.25, 0.6, 1.0)
    da_factor: float = 1.5
    tau: float = 3.0
    learning_rate: float = 1.0
    batch_size: int = 256
    voxels_per_case: int = 4096
    threads: int = 1
    micro: bool = False


QUICK = ExperimentConfig()
FULL = ExperimentConfig(
    n_adult=48,
    n_pediatric=80,
    baseline_epochs=40,
    stage1_epochs=20,
    stage2_epochs=20,
    voxels_per_case=8192,
)


def _slug(name: str) -> str:
    out = []
    for ch in name.lower():
        out.append(ch if ch.isalnum() or ch == "." else "_")
    text = "".join(out)
    while "__" in text:
        text = text.replace("__", "_")
    return text.strip("_")


def _derived_seed(seed: int, salt: int) -> int:
    return int(np.random.SeedSequence((seed, salt)).generate_state(1)[0])


@dataclass
class ExperimentResult:
    out_dir: Path
    rows: list[report.AggregateRow]
    summary: dict
    config: ExperimentConfig = field(repr=False, default=None)


def _evaluate_method(method, segment, test_records, data_dir, cfg, class_names):
    """Run ``segment`` over the test cases and collect per-class metrics."""

    def one(record):
        image = read_volume(data_dir / record.image, kind="scalar")
        gt = read_volume(data_dir / record.label, kind="label")
        pred = segment(image)
        return evaluate_case(
            pred.with_num_classes(19),
            gt.with_num_classes(19),
            NsdConfig(tau=cfg.tau),
            case_id=record.case_id,
        )

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            nested = list(pool.map(one, test_records))
    else:
        nested = [one(r) for r in test_records]
    results = [r for sub in nested for r in sub]
    log.info("evaluated %-12s on %d cases", method, len(test_records))
    return results


def run_experiment(out_dir, cfg: ExperimentConfig = QUICK) -> ExperimentResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sub in ("plans", "models", "metrics"):
        (out_dir / sub).mkdir(exist_ok=True)

    # 1. cohort on disk, then an age-balanced split
    data_dir = out_dir / "cohort"
    log.info("generating cohort: %d adult + %d pediatric cases", cfg.n_adult, cfg.n_pediatric)
    records = phantom.generate_cohort(
        data_dir,
        n_adult=cfg.n_adult,
        n_pediatric=cfg.n_pediatric,
        seed=_derived_seed(cfg.seed, 1),
        dims=cfg.dims,
        spacing=cfg.spacing,
        noise_sigma=cfg.noise_sigma,
        threads=cfg.threads,
    )
    records = cohort.split_balanced(records, cfg.fractions, seed=_derived_seed(cfg.seed, 2))
    cohort.save_manifest(records, out_dir / "manifest.json")
    num_classes = len(phantom.DEFAULT_ORGANS)
    class_names = [f"organ_{i:02d}" for i in range(1, 20)]

    # 2. plans
    plans = [
        cohort.plan_baseline("AdultSeg", records, cfg.baseline_epochs, _derived_seed(cfg.seed, 10)),
        cohort.plan_baseline("PediatricSeg", records, cfg.baseline_epochs, _derived_seed(cfg.seed, 11)),
        cohort.plan_baseline("MixSeg", records, cfg.baseline_epochs, _derived_seed(cfg.seed, 12)),
        cohort.plan_rehearsal(
            records, 0.0, cfg.stage1_epochs, cfg.stage2_epochs, _derived_seed(cfg.seed, 13)
        ),
    ]
    for k, p in enumerate(cfg.rehearsal_ps):
        plans.append(
            cohort.plan_rehearsal(
                records, p, cfg.stage1_epochs, cfg.stage2_epochs, _derived_seed(cfg.seed, 14 + k)
            )
        )
    for plan in plans:
        cohort.save_plan(plan, out_dir / "plans" / f"{_slug(plan.name)}.json")

    # 3. training
    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        voxels_per_case=cfg.voxels_per_case,
        seed=_derived_seed(cfg.seed, 3),
    )
    models: dict[str, ModelParams] = {}
    for plan in plans:
        log.info("training %s", plan.name)
        outcome = train(plan, records, data_dir, train_cfg, num_classes=num_classes)
        models[plan.name] = outcome.final_params
        save_model(outcome.final_params, out_dir / "models" / f"{_slug(plan.name)}.json")
        for stage_index, params in enumerate(outcome.stage_params[:-1]):
            save_model(
                params, out_dir / "models" / f"{_slug(plan.name)}_stage{stage_index + 1}.json"
            )

    # 4. evaluation on the held-out test cases
    test_records = cohort.select(records, split="test")
    pediatric_test = cohort.select(test_records, domain="pediatric")
    method_results: dict[str, list] = {}
    method_records: dict[str, list] = {}
    for plan in plans:
        params = models[plan.name]
        segment = lambda image, p=params: predict(p, image)
        method_results[plan.name] = _evaluate_method(
            plan.name, segment, test_records, data_dir, cfg, class_names
        )
        method_records[plan.name] = test_records

    # the upscaling row: adult-only model behind a fixed field of view,
    # pediatric cases only (the adult column stays empty, as in the source
    # comparison this mirrors)
    adult_params = models["AdultSeg"]
    apply_fixed = fixed_window_predictor(adult_params)
    da_method = "DA"

    def da_segment(image):
        return da_upscale_pipeline(image, apply_fixed, cfg.da_factor)

    method_results[da_method] = _evaluate_method(
        da_method, da_segment, pediatric_test, data_dir, cfg, class_names
    )
    method_records[da_method] = pediatric_test

    method_order = ["AdultSeg", da_method, "PediatricSeg", "MixSeg", "Sequential"] + [
        f"CL(p={p:g})" for p in cfg.rehearsal_ps
    ]
    for method in method_order:
        write_metrics_csv(
            method_results[method], class_names, out_dir / "metrics" / f"{_slug(method)}.csv"
        )

    # 5. tables and summary
    rows = [
        report.aggregate(method_results[m], records, m, micro=cfg.micro)
        for m in method_order
    ]
    (out_dir / "table.md").write_text(report.render(rows, "markdown"))
    (out_dir / "table.csv").write_text(report.render(rows, "csv"))
    per_age_parts = []
    for index, method in enumerate(method_order):
        text = report.export_per_age(method_results[method], records, method)
        per_age_parts.append(text if index == 0 else text.split("\n", 1)[1])
    (out_dir / "per_age.csv").write_text("".join(per_age_parts))

    summary = {"seed": cfg.seed, "methods": {}}
    for method, row in zip(method_order, rows):
        summaries = report.case_summaries(method_results[method], records)
        ped = [s.mean_dsc for s in summaries if s.age_bin != "17+" and s.mean_dsc is not None]
        adult = [s.mean_dsc for s in summaries if s.age_bin == "17+" and s.mean_dsc is not None]
        summary["methods"][method] = {
            "bins": {
                name: {
                    "mean_dsc": stats.mean_dsc,
                    "mean_nsd": stats.mean_nsd,
                    "n_cases": stats.n_cases,
                    "n_undefined": stats.n_undefined,
                }
                for name, stats in row.bins
            },
            "pediatric_mean_dsc": sum(ped) / len(ped) if ped else None,
            "adult_mean_dsc": sum(adult) / len(adult) if adult else None,
        }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return ExperimentResult(out_dir=out_dir, rows=rows, summary=summary, config=cfg)
