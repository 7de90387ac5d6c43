"""Age bins, balanced splits, training plans."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ageseg.cohort import (
    AGE_BINS,
    CaseRecord,
    TrainingPlan,
    PlanStage,
    assign_age_bin,
    load_manifest,
    load_plan,
    plan_baseline,
    plan_rehearsal,
    save_manifest,
    save_plan,
    split_balanced,
)
from ageseg.errors import ManifestError, ParameterError


def make_case(i, age, split="train"):
    domain = "adult" if age >= 17 else "pediatric"
    return CaseRecord(
        case_id=f"case_{i:04d}",
        age_years=age,
        domain=domain,
        image=f"vol/{i}_img.nii.gz",
        label=f"vol/{i}_lab.nii.gz",
        split=split,
    )


# ---------------------------------------------------------------------------
# Age bins
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "age,expected",
    [
        (0, "0-3"),
        (3, "0-3"),
        (3.999, "0-3"),
        (4, "4-6"),
        (6.5, "4-6"),
        (7, "7-9"),
        (10, "10-12"),
        (13, "13-16"),
        (16.9, "13-16"),
        (17, "17+"),
        (80, "17+"),
    ],
)
def test_bin_boundaries(age, expected):
    assert assign_age_bin(age) == expected


def test_negative_age_rejected():
    with pytest.raises(ParameterError):
        assign_age_bin(-0.1)


@settings(max_examples=200, deadline=None)
@given(age=st.floats(0, 120, allow_nan=False))
def test_bins_partition_all_ages(age):
    name = assign_age_bin(age)
    assert name in AGE_BINS
    assert sum(assign_age_bin(age) == b for b in AGE_BINS) == 1


# ---------------------------------------------------------------------------
# Records and manifests
# ---------------------------------------------------------------------------


def test_domain_age_consistency_enforced():
    with pytest.raises(ManifestError):
        CaseRecord("x", 10.0, "adult", "a", "b")
    with pytest.raises(ManifestError):
        CaseRecord("x", 30.0, "pediatric", "a", "b")
    with pytest.raises(ManifestError):
        CaseRecord("x", 16.99, "adult", "a", "b")
    CaseRecord("x", 17.0, "adult", "a", "b")  # boundary is adult


def test_manifest_roundtrip(tmp_path):
    records = [make_case(i, age) for i, age in enumerate([1, 5, 8, 11, 14, 40])]
    path = tmp_path / "manifest.json"
    save_manifest(records, path)
    assert load_manifest(path) == records
    # identical content writes identical bytes
    path2 = tmp_path / "manifest2.json"
    save_manifest(records, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_manifest_duplicate_ids_rejected(tmp_path):
    records = [make_case(1, 5), make_case(1, 6)]
    path = tmp_path / "dup.json"
    save_manifest(records, path)
    with pytest.raises(ManifestError):
        load_manifest(path)


# ---------------------------------------------------------------------------
# split_balanced
# ---------------------------------------------------------------------------


def ages_covering_bins(per_bin):
    ages = []
    for low in (0, 4, 7, 10, 13, 17):
        ages.extend([low + 0.5] * per_bin)
    return ages


def test_split_exact_division():
    records = [make_case(i, a, split=None) for i, a in enumerate(ages_covering_bins(10))]
    out = split_balanced(records, (0.8, 0.1, 0.1), seed=1)
    for bin_name in AGE_BINS:
        members = [r for r in out if r.age_bin == bin_name]
        counts = {s: sum(r.split == s for r in members) for s in ("train", "val", "test")}
        assert counts == {"train": 8, "val": 1, "test": 1}


def test_split_deterministic():
    records = [make_case(i, a, split=None) for i, a in enumerate(ages_covering_bins(7))]
    a = split_balanced(records, (0.6, 0.2, 0.2), seed=99)
    b = split_balanced(records, (0.6, 0.2, 0.2), seed=99)
    assert a == b
    c = split_balanced(records, (0.6, 0.2, 0.2), seed=100)
    assert a != c


def test_split_large_random_within_one_case_of_target():
    rng = np.random.default_rng(0)
    records = [
        make_case(i, float(rng.uniform(0, 60)), split=None) for i in range(1000)
    ]
    out = split_balanced(records, (0.8, 0.1, 0.1), seed=5)
    for bin_name in AGE_BINS:
        members = [r for r in out if r.age_bin == bin_name]
        n = len(members)
        n_train = sum(r.split == "train" for r in members)
        assert abs(n_train - 0.8 * n) <= 1.0


def test_split_validation():
    with pytest.raises(ManifestError):
        split_balanced([], (0.8, 0.1, 0.1))
    records = [make_case(0, 5.0)]
    with pytest.raises(ParameterError):
        split_balanced(records, (0.5, 0.2, 0.2))
    with pytest.raises(ParameterError):
        split_balanced(records, (1.0, 0.0, 0.0))


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


def cohort_records():
    ages = [30, 40, 50, 60, 2, 5, 8, 11, 14, 1]
    return [make_case(i, a) for i, a in enumerate(ages)]


def test_plan_baseline_domains_and_sizes():
    records = cohort_records()
    adult = plan_baseline("AdultSeg", records, epochs=3, seed=0)
    ped = plan_baseline("PediatricSeg", records, epochs=3, seed=0)
    mix = plan_baseline("MixSeg", records, epochs=3, seed=0)
    adult_ids = {r.case_id for r in records if r.domain == "adult"}
    ped_ids = {r.case_id for r in records if r.domain == "pediatric"}
    for epoch in adult.stages[0].epoch_cases:
        assert set(epoch) == adult_ids and len(epoch) == len(adult_ids)
    for epoch in ped.stages[0].epoch_cases:
        assert set(epoch) == ped_ids
    for epoch in mix.stages[0].epoch_cases:
        assert set(epoch) == adult_ids | ped_ids
        assert len(epoch) == len(adult_ids) + len(ped_ids)


def test_plan_baseline_empty_manifest_errors():
    ped_only = [make_case(i, 5.0) for i in range(3)]
    with pytest.raises(ParameterError):
        plan_baseline("AdultSeg", ped_only, epochs=2)


def test_plan_baseline_seeds_change_order_not_content():
    records = cohort_records()
    a = plan_baseline("MixSeg", records, epochs=4, seed=1)
    b = plan_baseline("MixSeg", records, epochs=4, seed=2)
    assert a.stages[0].epoch_cases != b.stages[0].epoch_cases
    for ea, eb in zip(a.stages[0].epoch_cases, b.stages[0].epoch_cases):
        assert sorted(ea) == sorted(eb)


def test_plan_rehearsal_p0_is_sequential():
    records = cohort_records()
    plan = plan_rehearsal(records, p=0.0, stage1_epochs=2, stage2_epochs=4, seed=3)
    assert plan.name == "Sequential"
    adult_ids = {r.case_id for r in records if r.domain == "adult"}
    ped_ids = {r.case_id for r in records if r.domain == "pediatric"}
    for epoch in plan.stages[1].epoch_cases:
        assert set(epoch) == ped_ids
        assert not set(epoch) & adult_ids


def test_plan_rehearsal_p1_contains_everything():
    records = cohort_records()
    plan = plan_rehearsal(records, p=1.0, stage1_epochs=1, stage2_epochs=3, seed=3)
    adult_ids = {r.case_id for r in records if r.domain == "adult"}
    ped_ids = {r.case_id for r in records if r.domain == "pediatric"}
    for epoch in plan.stages[1].epoch_cases:
        assert set(epoch) == adult_ids | ped_ids


def test_plan_rehearsal_stage2_always_has_all_pediatric():
    records = cohort_records()
    plan = plan_rehearsal(records, p=0.5, stage1_epochs=1, stage2_epochs=10, seed=8)
    ped_ids = {r.case_id for r in records if r.domain == "pediatric"}
    for epoch in plan.stages[1].epoch_cases:
        assert ped_ids <= set(epoch)


def test_plan_rehearsal_sampling_statistics():
    # 1000 adults, 200 epochs at p=0.25: mean per-epoch adult count should
    # sit within 3 standard errors of 250 (binomial n=1000, p=0.25).
    adults = [make_case(i, 30.0) for i in range(1000)]
    peds = [make_case(2000 + i, 5.0) for i in range(5)]
    plan = plan_rehearsal(adults + peds, p=0.25, stage1_epochs=1, stage2_epochs=200, seed=11)
    counts = [len(e) - 5 for e in plan.stages[1].epoch_cases]
    mean = float(np.mean(counts))
    stderr = float(np.sqrt(1000 * 0.25 * 0.75 / 200))
    assert abs(mean - 250.0) <= 3 * stderr


def test_plan_rehearsal_fixed_subset_mode():
    records = cohort_records()
    plan = plan_rehearsal(
        records, p=0.5, stage1_epochs=1, stage2_epochs=6, seed=4, fixed_subset=True
    )
    adult_ids = {r.case_id for r in records if r.domain == "adult"}
    subsets = [frozenset(set(e) & adult_ids) for e in plan.stages[1].epoch_cases]
    assert len(set(subsets)) == 1
    assert len(subsets[0]) == round(0.5 * len(adult_ids))


def test_plan_rehearsal_validation():
    records = cohort_records()
    with pytest.raises(ParameterError):
        plan_rehearsal(records, p=1.5, stage1_epochs=1, stage2_epochs=1)
    with pytest.raises(ParameterError):
        plan_rehearsal(records, p=-0.1, stage1_epochs=1, stage2_epochs=1)
    adults_only = [make_case(i, 30.0) for i in range(3)]
    with pytest.raises(ParameterError):
        plan_rehearsal(adults_only, p=0.5, stage1_epochs=1, stage2_epochs=1)


def test_plan_serialization_roundtrip_and_bytes(tmp_path):
    records = cohort_records()
    plan = plan_rehearsal(records, p=0.25, stage1_epochs=2, stage2_epochs=3, seed=7)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_plan(plan, p1)
    save_plan(plan, p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_plan(p1)
    assert back == plan
    plan.validate_against(records)
    with pytest.raises(ManifestError):
        plan.validate_against(records[:2])


def test_plan_stage_invariants():
    with pytest.raises(ParameterError):
        PlanStage(epochs=2, epoch_cases=(("a",),))
    # degenerate plans are legal: they simply train nothing
    TrainingPlan(name="x", seed=0, stages=())
    TrainingPlan(name="y", seed=0, stages=(PlanStage(0, ()),))
