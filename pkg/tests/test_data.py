import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cprank.comparisons import RatingMatrix, extract_comparisons, load_comparisons, store_comparisons
from cprank.data import (
    DataError,
    load_dataset,
    parse_movielens,
    read_ratings,
    select_subset,
    synthetic_ratings,
    write_id_map,
    write_ratings,
)

HANDCRAFTED = """\
196\t242\t3\t881250949
186\t302\t3\t891717742
22\t377\t1\t878887116
244\t51\t2\t880606923
166\t346\t1\t886397596
298\t474\t4\t884182806
115\t265\t2\t881171488
253\t465\t5\t891628467
305\t451\t3\t886324817
6\t86\t3\t883603013
"""


def naive_reader(text):
    """Line-by-line parse with ids remapped through sorted() lookups."""
    rows = [line.split("\t") for line in text.splitlines() if line]
    users = sorted({int(r[0]) for r in rows})
    items = sorted({int(r[1]) for r in rows})
    return {(users.index(int(r[0])), items.index(int(r[1]))): float(r[2]) for r in rows}


def write(tmp_path, text, name="u.data"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_single_line(tmp_path):
    r = parse_movielens(write(tmp_path, "1\t5\t4\t881250949\n"))
    assert r.shape == (1, 1)
    assert r.entries == [(0, 0, 4.0)]
    assert r.user_ids.tolist() == [1] and r.item_ids.tolist() == [5]


def test_latest_timestamp_wins(tmp_path):
    text = "1\t5\t4\t200\n1\t5\t2\t100\n2\t5\t1\t50\n2\t5\t3\t60\n"
    r = parse_movielens(write(tmp_path, text))
    assert r.entries == [(0, 0, 4.0), (1, 0, 3.0)]


def test_handcrafted_file_matches_naive_reader(tmp_path):
    r = parse_movielens(write(tmp_path, HANDCRAFTED))
    assert len(r) == 10
    assert {(u, i): v for u, i, v in r.entries} == naive_reader(HANDCRAFTED)


@pytest.mark.parametrize("text,lineno", [
    ("1\t2\t3\t4\n1\t2\n", 2),
    ("1\t2\t3\t4\n\nx\t2\t3\t4\n", 3),
    ("1\t2\t9\t4\n", 1),
])
def test_malformed_line_reports_number(tmp_path, text, lineno):
    with pytest.raises(DataError, match=f"u.data:{lineno}:"):
        parse_movielens(write(tmp_path, text))


def test_empty_file(tmp_path):
    with pytest.raises(DataError, match="no ratings"):
        parse_movielens(write(tmp_path, ""))


def test_subset_full_size_is_identity(tmp_path):
    r = parse_movielens(write(tmp_path, HANDCRAFTED))
    s = select_subset(r, r.num_users, r.num_items)
    assert s == r


def test_subset_picks_most_active_with_id_tiebreak(tmp_path):
    text = "".join(f"{u}\t{i}\t3\t1\n" for u, i in
                   [(10, 1), (10, 2), (10, 3), (20, 1), (30, 1), (30, 2), (5, 3)])
    r = parse_movielens(write(tmp_path, text))
    one = select_subset(r, 1, 3)
    assert one.user_ids.tolist() == [10]
    assert one.entries == [(0, 0, 3.0), (0, 1, 3.0), (0, 2, 3.0)]
    # users 5 and 20 tie on one rating; the smaller original id wins
    two = select_subset(r, 3, 1)
    assert two.user_ids.tolist() == [5, 10, 30]
    assert two.item_ids.tolist() == [1]
    assert two.entries == [(1, 0, 3.0), (2, 0, 3.0)]


def test_subset_errors(tmp_path):
    r = parse_movielens(write(tmp_path, HANDCRAFTED))
    with pytest.raises(DataError):
        select_subset(r, 11, 1)
    with pytest.raises(ValueError):
        select_subset(r, 0, 1)
    with pytest.raises(ValueError):
        select_subset(r, 1, 1, rule="random")


def test_synthetic_ratings():
    r, X = synthetic_ratings(6, 8, 3, seed=4)
    assert r.shape == (6, 8) and len(r) == 48
    assert np.linalg.matrix_rank(X) == 3
    np.testing.assert_array_equal(r.to_dense(), X)
    again, _ = synthetic_ratings(6, 8, 3, seed=4)
    assert again == r
    noisy, X2 = synthetic_ratings(6, 8, 3, noise=0.5, seed=4)
    np.testing.assert_array_equal(X2, X)
    assert not np.array_equal(noisy.to_dense(), X)
    sparse, _ = synthetic_ratings(40, 60, 5, density=0.3, seed=0)
    assert 0.25 < len(sparse) / 2400 < 0.35
    with pytest.raises(ValueError):
        synthetic_ratings(3, 3, 1, density=0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1.0))
def test_ratings_file_round_trip(tmp_path_factory, seed, density):
    r, _ = synthetic_ratings(5, 7, 2, noise=0.3, density=density, seed=seed)
    path = tmp_path_factory.mktemp("r") / "ratings.tsv"
    write_ratings(r, path)
    assert read_ratings(path) == r
    assert load_dataset(path, "tsv") == r


def test_read_ratings_errors(tmp_path):
    with pytest.raises(DataError, match=":1:"):
        read_ratings(write(tmp_path, "3\n", "r.tsv"))
    with pytest.raises(DataError, match=":3:"):
        read_ratings(write(tmp_path, "2\t2\n0\t0\t1.0\n0\t1\n", "r.tsv"))
    with pytest.raises(DataError):
        read_ratings(write(tmp_path, "2\t2\n0\t5\t1.0\n", "r.tsv"))
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "r.tsv", "csv")


def test_id_map(tmp_path):
    r = parse_movielens(write(tmp_path, HANDCRAFTED))
    path = tmp_path / "ids.tsv"
    write_id_map(r, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "kind\tdense\toriginal"
    assert "user\t0\t6" in lines and "item\t9\t474" in lines
    assert len(lines) == 1 + 10 + 10


def test_pipeline_is_deterministic_and_idempotent(tmp_path):
    text = "".join(f"{u}\t{i}\t{(u * 7 + i * 3) % 5 + 1}\t{u + i}\n"
                   for u in range(1, 9) for i in range(1, 12) if (u + i) % 3)
    path = write(tmp_path, text)
    outputs = []
    for n in range(2):
        r = select_subset(parse_movielens(path), 5, 6)
        cset = extract_comparisons(r)
        out = tmp_path / f"c{n}.txt"
        store_comparisons(cset, out)
        outputs.append(out.read_bytes())
        assert load_comparisons(out) == cset
        assert select_subset(r, 5, 6) == r
    assert outputs[0] == outputs[1]


def test_from_dense_nan_is_unobserved():
    assert RatingMatrix.from_dense([[1.0, np.nan]]).entries == [(0, 0, 1.0)]
    with pytest.raises(ValueError):
        RatingMatrix.from_dense([[1.0, np.inf]])


MOVIELENS = os.environ.get("CPR_MOVIELENS_PATH", "/root/data/ml-100k/u.data")


@pytest.mark.skipif(not os.path.exists(MOVIELENS), reason="MovieLens 100K u.data not available")
def test_movielens_subset():
    full = parse_movielens(MOVIELENS)
    assert full.shape == (943, 1682) and len(full) == 100_000
    sub = select_subset(full, 40, 60)
    assert sub.shape == (40, 60)
    assert 0 < len(sub) <= 2400
