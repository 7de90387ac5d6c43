"""Label remapping: parsing, validation, merging, conservation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ageseg.errors import LabelDomainError, MappingError
from ageseg.labelmap import (
    NUM_TARGET_CLASSES,
    ClassMapping,
    default_mapping,
    load_mapping,
    remap,
)
from ageseg.volume import LabelVolume


def make_volume(labels, num_classes=None):
    arr = np.asarray(labels, dtype=np.int32)
    return LabelVolume(arr, spacing=(1, 1, 1), num_classes=num_classes)


def identity_mapping(top=NUM_TARGET_CLASSES):
    return ClassMapping(tuple((i, i) for i in range(top + 1)))


def test_load_merging_rows(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("# merge two kidneys\n2,1\n3,1,merged_kidney\n")
    m = load_mapping(path)
    assert m.as_dict() == {2: 1, 3: 1}
    assert m.class_name(1) == "merged_kidney"


def test_duplicate_source_rejected(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("2,1\n2,5\n")
    with pytest.raises(MappingError, match="duplicate"):
        load_mapping(path)


def test_target_out_of_range_rejected(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("2,20\n")
    with pytest.raises(MappingError):
        load_mapping(path)
    path.write_text("2,-1\n")
    with pytest.raises(MappingError):
        load_mapping(path)


def test_identity_file(tmp_path):
    path = tmp_path / "ident.csv"
    path.write_text("\n".join(f"{i},{i}" for i in range(20)) + "\n")
    m = load_mapping(path)
    assert m.as_dict() == {i: i for i in range(20)}
    assert m.is_complete()


def test_default_mapping_is_complete():
    m = default_mapping()
    assert m.is_complete()
    assert m.class_name(1) == "spleen"
    assert m.class_name(19) == "heart"


def test_remap_identity_is_noop():
    vol = make_volume(np.arange(8).reshape(2, 2, 2) % 3)
    out = remap(vol, identity_mapping())
    assert np.array_equal(out.labels, vol.labels)
    assert out.num_classes == NUM_TARGET_CLASSES


def test_remap_merges_counts():
    labels = np.zeros((2, 2, 2), dtype=np.int32)
    labels.ravel()[:5] = 2
    labels.ravel()[5:8] = 3
    vol = make_volume(labels)
    m = ClassMapping(((0, 0), (2, 1), (3, 1)))
    out = remap(vol, m)
    assert int((out.labels == 1).sum()) == 8


def test_remap_unmapped_to_background(caplog):
    vol = make_volume(np.full((2, 2, 2), 104, dtype=np.int32))
    m = ClassMapping(((0, 0), (1, 1)), unmapped_policy="to-background")
    with caplog.at_level("WARNING"):
        out = remap(vol, m)
    assert np.array_equal(out.labels, np.zeros((2, 2, 2), dtype=np.int32))
    assert "8 voxels" in caplog.text


def test_remap_unmapped_error_lists_labels():
    labels = np.zeros((2, 2, 2), dtype=np.int32)
    labels[0, 0, 0] = 104
    labels[1, 1, 1] = 77
    vol = make_volume(labels)
    m = ClassMapping(((0, 0), (1, 1)), unmapped_policy="error")
    with pytest.raises(LabelDomainError) as err:
        remap(vol, m)
    assert "104" in str(err.value) and "77" in str(err.value)


def test_remap_idempotent_through_identity():
    rng = np.random.default_rng(3)
    vol = make_volume(rng.integers(0, 6, size=(4, 4, 4)))
    m = ClassMapping(((0, 0), (1, 1), (2, 1), (3, 2), (4, 2), (5, 7)))
    once = remap(vol, m)
    via_identity = remap(remap(vol, identity_mapping(5)), m)
    assert np.array_equal(once.labels, via_identity.labels)


@settings(max_examples=50, deadline=None)
@given(
    labels=st.lists(st.integers(0, 9), min_size=8, max_size=8),
    targets=st.lists(st.integers(0, NUM_TARGET_CLASSES), min_size=10, max_size=10),
)
def test_remap_conserves_voxels(labels, targets):
    vol = make_volume(np.array(labels, dtype=np.int32).reshape(2, 2, 2))
    m = ClassMapping(tuple((i, t) for i, t in enumerate(targets)))
    out = remap(vol, m)
    counts = np.bincount(out.labels.ravel(), minlength=NUM_TARGET_CLASSES + 1)
    assert counts.sum() == 8
    for t in range(NUM_TARGET_CLASSES + 1):
        sources = [s for s, tt in enumerate(targets) if tt == t]
        expected = sum(labels.count(s) for s in sources)
        assert counts[t] == expected
