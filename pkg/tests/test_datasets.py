import json
import warnings
from collections import Counter, defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l3ae import datasets
from l3ae.errors import DataError, ParameterError


def _write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_threshold_keeps_ratings_above_three(tmp_path):
    f = _write(tmp_path / "r.tsv", ["u\ta\t5\t1", "u\tb\t3\t2", "u\tc\t4\t3"])
    assert sorted(datasets.load_interactions(f)) == [("u", "a"), ("u", "c")]


def test_three_field_rows_and_duplicates(tmp_path):
    f = _write(tmp_path / "r.tsv", ["u\ta\t5", "u\ta\t4", "v\ta\t2"])
    assert datasets.load_interactions(f) == [("u", "a")]


def test_empty_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        datasets.load_interactions(_write(tmp_path / "r.tsv", []))


def test_malformed_line_reports_line_number(tmp_path):
    f = _write(tmp_path / "r.tsv", ["u\ta\t5\t1", "u\tb\tfive\t2"])
    with pytest.raises(DataError, match=":2"):
        datasets.load_interactions(f)
    with pytest.raises(DataError, match=":1"):
        datasets.load_interactions(_write(tmp_path / "s.tsv", ["only-one-field"]))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        datasets.load_interactions(tmp_path / "nope.tsv")


def test_kcore_star_graph_empties():
    pairs = [("u", f"i{j}") for j in range(12)]
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        assert datasets.k_core_filter(pairs, 10) == []


def test_kcore_complete_bipartite_unchanged():
    pairs = [(f"u{a}", f"i{b}") for a in range(10) for b in range(10)]
    assert sorted(datasets.k_core_filter(pairs, 10)) == sorted(pairs)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 12)), min_size=1, max_size=150),
       st.integers(1, 5))
def test_kcore_postconditions(raw, k):
    pairs = sorted({(f"u{u}", f"i{i}") for u, i in raw})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        kept = datasets.k_core_filter(pairs, k)
    assert set(kept) <= set(pairs)
    if k == 1:
        assert sorted(kept) == pairs
    ud, idg = Counter(u for u, _ in kept), Counter(i for _, i in kept)
    assert all(v >= k for v in ud.values()) and all(v >= k for v in idg.values())
    if kept:
        # Idempotent: a second pass changes nothing.
        assert sorted(datasets.k_core_filter(kept, k)) == sorted(kept)


def _user_counts(bundle, user):
    j = bundle.user_ids.index(user)
    return tuple(int(m.matrix[j].nnz) for m in bundle.parts().values())


def test_split_examples():
    pairs = [("a", f"i{j}") for j in range(10)] + [("b", f"i{j}") for j in range(5)]
    bundle = datasets.split(pairs, seed=7)
    assert _user_counts(bundle, "a") == (8, 1, 1)
    assert _user_counts(bundle, "b") == (4, 1, 0)
    again = datasets.split(pairs, seed=7)
    for x, y in zip(bundle.parts().values(), again.parts().values()):
        assert (x.matrix != y.matrix).nnz == 0


def test_largest_remainder_rounding():
    from fractions import Fraction
    r = [Fraction(4, 5), Fraction(1, 10), Fraction(1, 10)]
    assert datasets._largest_remainder(5, r) == [4, 1, 0]
    assert datasets._largest_remainder(10, r) == [8, 1, 1]
    assert datasets._largest_remainder(1, r) == [1, 0, 0]


def test_split_rejects_bad_ratios():
    with pytest.raises(ParameterError):
        datasets.split([("a", "b")], 0, (0.5, 0.3, 0.3))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 30)), min_size=1, max_size=200),
       st.integers(0, 2**31))
def test_split_partitions_each_user(raw, seed):
    pairs = sorted({(f"u{u}", f"i{i}") for u, i in raw})
    bundle = datasets.split(pairs, seed)
    parts = [set(m.pairs()) for m in bundle.parts().values()]
    assert set().union(*parts) == set(pairs)
    assert sum(len(p) for p in parts) == len(pairs)
    per_user = defaultdict(int)
    for u, _ in pairs:
        per_user[u] += 1
    for u, n in per_user.items():
        counts = _user_counts(bundle, u)
        assert sum(counts) == n
        assert all(abs(c - r * n) < 1 for c, r in zip(counts, (0.8, 0.1, 0.1)))


def test_save_and_load_split_round_trip(tmp_path, small_split):
    bundle, stats = small_split
    datasets.save_split(bundle, tmp_path / "s", stats)
    back = datasets.load_split(tmp_path / "s")
    assert back.item_ids == bundle.item_ids and back.user_ids == bundle.user_ids
    for x, y in zip(bundle.parts().values(), back.parts().values()):
        assert (x.matrix != y.matrix).nnz == 0
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["stats"]["ratings"] == stats.ratings


def test_load_split_detects_count_mismatch(tmp_path, small_split):
    datasets.save_split(small_split[0], tmp_path / "s")
    with open(tmp_path / "s" / "test.tsv", "a") as fh:
        fh.write(f"{small_split[0].user_ids[0]}\t{small_split[0].item_ids[0]}\n")
    with pytest.raises(DataError):
        datasets.load_split(tmp_path / "s")


def _emb_file(tmp_path, values, ids, dtype="f32"):
    m = tmp_path / "e.bin"
    datasets.write_embeddings(values, ids, m, dtype=dtype)
    return m


def test_embeddings_size_arithmetic(tmp_path):
    vals = np.arange(12, dtype=float).reshape(4, 3)
    m = _emb_file(tmp_path, vals, ["a", "b", "c"])
    assert m.stat().st_size == 48
    f = datasets.load_embeddings(m)
    assert f.values.shape == (4, 3)
    np.testing.assert_array_equal(f.values, vals)


def test_embeddings_length_mismatch(tmp_path):
    m = _emb_file(tmp_path, np.ones((4, 3)), ["a", "b", "c"])
    m.write_bytes(m.read_bytes()[:47])
    with pytest.raises(DataError, match="47"):
        datasets.load_embeddings(m)


def test_embeddings_permuted_to_interaction_order(tmp_path):
    vals = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    m = _emb_file(tmp_path, vals, ["c", "a", "b"], dtype="f64")
    f = datasets.load_embeddings(m, item_ids=["a", "b", "c"])
    np.testing.assert_array_equal(f.values, [[2.0, 3.0, 1.0], [5.0, 6.0, 4.0]])
    assert f.item_ids == ("a", "b", "c")


def test_embeddings_missing_and_extra_items(tmp_path):
    m = _emb_file(tmp_path, np.ones((2, 3)), ["a", "b", "c"])
    with pytest.raises(DataError, match="z"):
        datasets.load_embeddings(m, item_ids=["a", "z"])
    with pytest.warns(UserWarning):
        f = datasets.load_embeddings(m, item_ids=["a", "b"])
    assert f.values.shape == (2, 2)


def test_embeddings_normalize(tmp_path):
    m = _emb_file(tmp_path, np.array([[3.0, 0.0], [4.0, 2.0]]), ["a", "b"], dtype="f64")
    f = datasets.load_embeddings(m, normalize=True)
    np.testing.assert_allclose(np.linalg.norm(f.values, axis=0), 1.0)


def test_embeddings_bad_header(tmp_path):
    m = _emb_file(tmp_path, np.ones((2, 2)), ["a", "b"])
    h = datasets.default_header_path(m)
    header = json.loads(h.read_text())
    h.write_text(json.dumps(dict(header, dtype="f16")))
    with pytest.raises(DataError):
        datasets.load_embeddings(m)
    h.write_text(json.dumps(dict(header, item_ids=["a", "a"])))
    with pytest.raises(DataError):
        datasets.load_embeddings(m)


def test_tag_matrix_examples():
    t = datasets.build_tag_matrix({"i1": ["a", "b"], "i2": ["b"]})
    np.testing.assert_array_equal(t.values, [[1, 0], [1, 1]])
    assert t.row_labels == ("a", "b")
    assert t.kind == "tag"
    dup = datasets.build_tag_matrix({"i1": ["a", "a"]})
    np.testing.assert_array_equal(dup.values, [[1]])
    with pytest.warns(UserWarning):
        empty = datasets.build_tag_matrix({}, item_ids=["i1", "i2"])
    assert not empty.values.any() and empty.values.shape[1] == 2


def test_tags_file_round_trip(tmp_path):
    tags = {"i1": ["a", "b"], "i2": ["b"]}
    datasets.write_tags(tmp_path / "t.tsv", tags)
    assert {k: sorted(v) for k, v in datasets.load_tags(tmp_path / "t.tsv").items()} == tags


def test_prepare_stats(small_synth, small_split):
    data, _ = small_synth
    bundle, stats = small_split
    assert stats.users == len(bundle.user_ids) and stats.items == len(bundle.item_ids)
    assert stats.ratings == sum(bundle.counts().values())
    assert stats.density == pytest.approx(stats.ratings / (stats.users * stats.items))
    assert stats.ratings <= data.stats()["records_above_3"]
