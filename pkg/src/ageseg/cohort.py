"""Case manifests, age binning, balanced splits, and training plans.

Ages are stratified into six bins (0-3, 4-6, 7-9, 10-12, 13-16 and 17+,
inclusive integer-year ranges; fractional ages bin by floor).  A case is
``adult`` exactly when its age is >= 17.

Training plans are fully materialized: every epoch's case order is spelled
out, so a serialized plan replays bit-for-bit.  Rehearsal plans draw each
adult training case independently with probability ``p`` per second-stage
epoch (``p = 0`` degenerates to plain sequential fine-tuning); a
``fixed_subset`` variant instead freezes one seeded subset of size
``round(p * n)`` and reuses it every epoch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ManifestError, ParameterError

__all__ = [
    "AGE_BINS",
    "PEDIATRIC_BINS",
    "ADULT_BIN",
    "CaseRecord",
    "assign_age_bin",
    "load_manifest",
    "save_manifest",
    "split_balanced",
    "PlanStage",
    "TrainingPlan",
    "plan_baseline",
    "plan_rehearsal",
    "save_plan",
    "load_plan",
]

# (name, low, high) with inclusive integer-year bounds; None = unbounded.
_BIN_TABLE = (
    ("0-3", 0, 3),
    ("4-6", 4, 6),
    ("7-9", 7, 9),
    ("10-12", 10, 12),
    ("13-16", 13, 16),
    ("17+", 17, None),
)
AGE_BINS = tuple(name for name, _, _ in _BIN_TABLE)
PEDIATRIC_BINS = AGE_BINS[:-1]
ADULT_BIN = AGE_BINS[-1]

SPLITS = ("train", "val", "test")


def assign_age_bin(age_years: float) -> str:
    """Map an age in years onto its bin name; fractional ages floor."""
    if not np.isfinite(age_years) or age_years < 0:
        raise ParameterError(f"age must be a finite non-negative number, got {age_years}")
    whole = int(np.floor(age_years))
    for name, low, high in _BIN_TABLE:
        if whole >= low and (high is None or whole <= high):
            return name
    raise AssertionError("unreachable: bins partition [0, inf)")


@dataclass(frozen=True)
class CaseRecord:
    """One patient case: identity, age, domain, volume paths, split.

    ``image`` and ``label`` are stored as written in the manifest (usually
    relative to the manifest's directory); resolve them against a data root
    when opening files.
    """

    case_id: str
    age_years: float
    domain: str
    image: str
    label: str
    split: str | None = None

    def __post_init__(self) -> None:
        if not self.case_id:
            raise ManifestError("case_id must be nonempty")
        if self.domain not in ("adult", "pediatric"):
            raise ManifestError(f"{self.case_id}: domain must be adult|pediatric")
        if not np.isfinite(self.age_years) or self.age_years < 0:
            raise ManifestError(f"{self.case_id}: bad age {self.age_years}")
        if (self.domain == "adult") != (self.age_years >= 17):
            raise ManifestError(
                f"{self.case_id}: domain {self.domain!r} inconsistent with age "
                f"{self.age_years} (adult iff age >= 17)"
            )
        if not self.image or not self.label:
            raise ManifestError(f"{self.case_id}: image/label paths must be nonempty")
        if self.split is not None and self.split not in SPLITS:
            raise ManifestError(f"{self.case_id}: bad split {self.split!r}")

    @property
    def age_bin(self) -> str:
        return assign_age_bin(self.age_years)


def save_manifest(records, path) -> None:
    payload = {
        "cases": [
            {
                "case_id": r.case_id,
                "age_years": r.age_years,
                "domain": r.domain,
                "image": r.image,
                "label": r.label,
                "split": r.split,
            }
            for r in records
        ]
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> list[CaseRecord]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "cases" not in payload:
        raise ManifestError(f"{path}: expected an object with a 'cases' list")
    records = []
    seen = set()
    for entry in payload["cases"]:
        record = CaseRecord(
            case_id=entry["case_id"],
            age_years=float(entry["age_years"]),
            domain=entry["domain"],
            image=entry["image"],
            label=entry["label"],
            split=entry.get("split"),
        )
        if record.case_id in seen:
            raise ManifestError(f"{path}: duplicate case_id {record.case_id!r}")
        seen.add(record.case_id)
        records.append(record)
    return records


def records_by_id(records) -> dict[str, CaseRecord]:
    return {r.case_id: r for r in records}


def select(records, domain=None, split=None) -> list[CaseRecord]:
    out = list(records)
    if domain is not None:
        out = [r for r in out if r.domain == domain]
    if split is not None:
        out = [r for r in out if r.split == split]
    return out


def _largest_remainder_counts(n: int, fractions) -> list[int]:
    ideal = [n * f for f in fractions]
    counts = [int(np.floor(v)) for v in ideal]
    leftover = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(ideal[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_balanced(records, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> list[CaseRecord]:
    """Assign train/val/test per age bin so every bin mirrors the fractions.

    Within each bin the cases are shuffled by a seeded RNG and cut by
    largest-remainder counts, so per-bin proportions deviate from the
    targets by at most one case.  Input order is preserved in the output.
    """
    records = list(records)
    if not records:
        raise ManifestError("cannot split an empty manifest")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ParameterError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions must sum to 1, got {sum(fractions)}")

    rng = np.random.default_rng(seed)
    assignment: dict[str, str] = {}
    for bin_name in AGE_BINS:
        members = [r.case_id for r in records if r.age_bin == bin_name]
        if not members:
            continue
        shuffled = [members[i] for i in rng.permutation(len(members))]
        counts = _largest_remainder_counts(len(members), fractions)
        cursor = 0
        for split_name, count in zip(SPLITS, counts):
            for case_id in shuffled[cursor : cursor + count]:
                assignment[case_id] = split_name
            cursor += count
    return [replace(r, split=assignment[r.case_id]) for r in records]


# ---------------------------------------------------------------------------
# Training plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStage:
    epochs: int
    epoch_cases: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ParameterError(f"stage epochs must be >= 0, got {self.epochs}")
        if len(self.epoch_cases) != self.epochs:
            raise ParameterError(
                f"stage has {len(self.epoch_cases)} epoch lists for {self.epochs} epochs"
            )


@dataclass(frozen=True)
class TrainingPlan:
    """Zero stages (or zero epochs) is legal and trains nothing."""

    name: str
    seed: int
    stages: tuple[PlanStage, ...]
    p: float | None = None

    def __post_init__(self) -> None:
        if self.p is not None and not 0.0 <= self.p <= 1.0:
            raise ParameterError(f"p must be in [0, 1], got {self.p}")

    def all_case_ids(self) -> set[str]:
        return {
            cid for st in self.stages for epoch in st.epoch_cases for cid in epoch
        }

    def validate_against(self, records) -> None:
        known = {r.case_id for r in records}
        missing = sorted(self.all_case_ids() - known)
        if missing:
            raise ManifestError(f"plan references unknown cases: {missing[:5]}")


def _shuffled(rng, case_ids) -> tuple[str, ...]:
    return tuple(case_ids[i] for i in rng.permutation(len(case_ids)))


_BASELINE_DOMAINS = {
    "AdultSeg": ("adult",),
    "PediatricSeg": ("pediatric",),
    "MixSeg": ("adult", "pediatric"),
}


def plan_baseline(kind: str, records, epochs: int, seed: int = 0) -> TrainingPlan:
    """Single-stage plan over adult, pediatric, or mixed training cases."""
    if kind not in _BASELINE_DOMAINS:
        raise ParameterError(f"unknown baseline kind {kind!r}")
    if epochs < 1:
        raise ParameterError(f"epochs must be >= 1, got {epochs}")
    eligible = [
        r.case_id
        for r in records
        if r.split == "train" and r.domain in _BASELINE_DOMAINS[kind]
    ]
    if not eligible:
        raise ParameterError(f"{kind}: no eligible training cases in manifest")
    rng = np.random.default_rng(seed)
    stage = PlanStage(epochs, tuple(_shuffled(rng, eligible) for _ in range(epochs)))
    return TrainingPlan(name=kind, seed=seed, stages=(stage,))


def plan_rehearsal(
    records,
    p: float,
    stage1_epochs: int,
    stage2_epochs: int,
    seed: int = 0,
    fixed_subset: bool = False,
    name: str | None = None,
) -> TrainingPlan:
    """Two-stage plan: adult-only, then all pediatric plus rehearsed adults.

    Every second-stage epoch contains the full pediatric training set plus
    adult cases sampled with probability ``p`` (independently per epoch, or
    one frozen subset when ``fixed_subset``).  ``p = 0`` is sequential
    fine-tuning with no rehearsal.
    """
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must be in [0, 1], got {p}")
    if stage1_epochs < 1 or stage2_epochs < 1:
        raise ParameterError("stage epochs must be >= 1")
    adult = [r.case_id for r in records if r.split == "train" and r.domain == "adult"]
    pediatric = [
        r.case_id for r in records if r.split == "train" and r.domain == "pediatric"
    ]
    if not adult:
        raise ParameterError("rehearsal plan needs adult training cases")
    if not pediatric:
        raise ParameterError("rehearsal plan needs pediatric training cases")

    rng = np.random.default_rng(seed)
    stage1 = PlanStage(
        stage1_epochs, tuple(_shuffled(rng, adult) for _ in range(stage1_epochs))
    )
    frozen: list[str] | None = None
    if fixed_subset:
        size = int(np.floor(p * len(adult) + 0.5))
        frozen = [adult[i] for i in rng.permutation(len(adult))[:size]]
    epochs2 = []
    for _ in range(stage2_epochs):
        if frozen is not None:
            sampled = frozen
        else:
            keep = rng.random(len(adult)) < p
            sampled = [cid for cid, k in zip(adult, keep) if k]
        epochs2.append(_shuffled(rng, pediatric + sampled))
    stage2 = PlanStage(stage2_epochs, tuple(epochs2))
    if name is None:
        name = "Sequential" if p == 0 else f"CL(p={p:g})"
    return TrainingPlan(name=name, seed=seed, stages=(stage1, stage2), p=p)


def save_plan(plan: TrainingPlan, path) -> None:
    payload = {
        "name": plan.name,
        "p": plan.p,
        "seed": plan.seed,
        "stages": [
            {"epochs": st.epochs, "epoch_cases": [list(e) for e in st.epoch_cases]}
            for st in plan.stages
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_plan(path) -> TrainingPlan:
    payload = json.loads(Path(path).read_text())
    stages = tuple(
        PlanStage(int(st["epochs"]), tuple(tuple(e) for e in st["epoch_cases"]))
        for st in payload["stages"]
    )
    p = payload.get("p")
    return TrainingPlan(
        name=payload["name"],
        seed=int(payload["seed"]),
        stages=stages,
        p=None if p is None else float(p),
    )
