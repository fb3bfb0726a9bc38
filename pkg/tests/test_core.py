import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rainbowpo.core import (
    InputError,
    PreferenceDataset,
    PreferencePair,
    Provenance,
    RngStream,
    load_dataset,
    meta_path,
    save_dataset,
    substream,
    validate_seq,
)


def test_substream_same_label_is_identical():
    s = RngStream(7)
    a, b = substream(s, 3), substream(s, 3)
    assert a == b
    assert np.array_equal(a.generator().random(50), b.generator().random(50))


def test_substreams_with_different_labels_differ():
    s = RngStream(7)
    u1 = substream(s, 1).generator().random(1000)
    u2 = substream(s, 2).generator().random(1000)
    assert int(np.sum(u1 != u2)) >= 990


def test_generator_restarts_at_stream_start():
    s = substream(RngStream(3), 9)
    assert np.array_equal(s.generator().random(5), s.generator().random(5))


def test_nested_substreams_depend_on_parent():
    a = substream(substream(RngStream(1), 0), 5)
    b = substream(substream(RngStream(1), 1), 5)
    assert a != b


def test_validate_seq_rejects_bad_input():
    with pytest.raises(InputError):
        validate_seq((), 4, 5)
    with pytest.raises(InputError):
        validate_seq((4,), 4, 5)
    with pytest.raises(InputError):
        validate_seq((0,) * 6, 4, 5)


def test_pair_requires_ordered_scores():
    with pytest.raises(InputError):
        PreferencePair(0, (1,), (2,), score_w=0.0, score_l=1.0)
    assert PreferencePair(0, (1,), (2,), 1.0, 1.0).degenerate


def test_split_takes_last_fraction():
    pairs = [PreferencePair(0, (i % 3,), (0,)) for i in range(20)]
    ds = PreferenceDataset(pairs)
    tr, ho = ds.split(0.1)
    assert len(tr) == 18 and len(ho) == 2
    assert ho.pairs == tuple(pairs[18:])


seqs = st.lists(st.integers(0, 5), min_size=1, max_size=6).map(tuple)
maybe_float = st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False))


@st.composite
def pairs_st(draw):
    yw, yl = draw(seqs), draw(seqs)
    ctx = draw(st.integers(0, 3))
    if draw(st.booleans()):
        a, b = sorted([draw(st.floats(-1e6, 1e6, allow_nan=False)), draw(st.floats(-1e6, 1e6, allow_nan=False))])
        return PreferencePair(ctx, yw, yl, b, a, draw(maybe_float))
    return PreferencePair(ctx, yw, yl, offset=draw(maybe_float))


@settings(max_examples=60, deadline=None)
@given(st.lists(pairs_st(), min_size=1, max_size=12), st.sampled_from(list(Provenance)))
def test_dataset_round_trip(tmp_path_factory, pairs, prov):
    path = tmp_path_factory.mktemp("ds") / "d.jsonl"
    ds = PreferenceDataset(pairs, prov, 6, 4, {"seed": 3})
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back == ds
    assert back.pairs == ds.pairs
    assert back.meta == ds.meta
    assert back.provenance is prov


def test_dataset_sidecar_records_provenance(tmp_path):
    ds = PreferenceDataset([PreferencePair(0, (1,), (2,))], Provenance.REJECTION_SAMPLED, 3, 1)
    save_dataset(ds, tmp_path / "x.jsonl")
    meta = json.loads(meta_path(tmp_path / "x.jsonl").read_text())
    assert meta["provenance"] == "RejectionSampled"


def test_load_rejects_malformed_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"ctx": 0, "yw": [], "yl": [1]}\n')
    with pytest.raises(InputError):
        load_dataset(p)
