import numpy as np
import pytest

from sparsegrm.data import (QMatrix, ResponseData, derive_seeds,
                            load_responses, read_intercepts, read_matrix,
                            save_responses, split_row_indices, split_rows,
                            take_rows, write_intercepts, write_matrix)


def small_data():
    responses = np.array([[0, 1, 3], [1, 0, 2], [0, 1, 0]])
    mask = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=bool)
    return ResponseData(responses=responses, mask=mask, categories=[2, 2, 4])


def test_response_data_validates_range():
    with pytest.raises(ValueError):
        ResponseData(responses=np.array([[2]]), mask=np.array([[True]]),
                     categories=[2])


def test_response_data_masked_cells_ignored_in_range_check():
    data = ResponseData(responses=np.array([[9]]), mask=np.array([[False]]),
                        categories=[2])
    assert data.responses[0, 0] == 0


def test_response_data_requires_two_categories():
    with pytest.raises(ValueError):
        ResponseData(responses=np.array([[0]]), mask=np.array([[True]]),
                     categories=[1])


def test_response_data_shape_mismatch():
    with pytest.raises(ValueError):
        ResponseData(responses=np.zeros((2, 3), dtype=int),
                     mask=np.zeros((3, 2), dtype=bool), categories=[2, 2, 2])


def test_qmatrix_rejects_non_binary():
    with pytest.raises(ValueError):
        QMatrix(entries=np.array([[0, 2]]))


def test_save_load_round_trip(tmp_path):
    data = small_data()
    path = tmp_path / "resp.csv"
    save_responses(path, data, comments=["round trip"])
    back = load_responses(path, categories=data.categories)
    assert np.array_equal(back.responses, data.responses)
    assert np.array_equal(back.mask, data.mask)
    assert np.array_equal(back.categories, data.categories)


def test_load_responses_missing_tokens(tmp_path):
    path = tmp_path / "resp.csv"
    path.write_text("0,NA,1\n1,0,\n")
    data = load_responses(path)
    assert data.mask.tolist() == [[True, False, True], [True, True, False]]


def test_load_responses_header_detected(tmp_path):
    path = tmp_path / "resp.csv"
    path.write_text("item1,item2\n0,1\n1,0\n")
    data = load_responses(path)
    assert data.n_respondents == 2


def test_load_responses_infers_categories(tmp_path):
    path = tmp_path / "resp.csv"
    path.write_text("0,3\n1,0\n")
    data = load_responses(path)
    assert data.categories.tolist() == [2, 4]


def test_load_responses_rejects_non_integer(tmp_path):
    path = tmp_path / "resp.csv"
    path.write_text("0,1\n0.5,0\n")
    with pytest.raises(ValueError):
        load_responses(path)


def test_load_responses_rejects_ragged(tmp_path):
    path = tmp_path / "resp.csv"
    path.write_text("0,1\n1\n")
    with pytest.raises(ValueError):
        load_responses(path)


def test_load_responses_rejects_empty_column(tmp_path):
    path = tmp_path / "resp.csv"
    path.write_text("0,NA\n1,NA\n")
    with pytest.raises(ValueError):
        load_responses(path)


def test_split_rows_partition():
    rng = np.random.default_rng(0)
    data = ResponseData(responses=rng.integers(0, 2, (20, 4)),
                        mask=np.ones((20, 4), dtype=bool),
                        categories=[2, 2, 2, 2])
    train, test = split_rows(data, 0.5, seed=3)
    assert train.n_respondents + test.n_respondents == 20
    tr, te = split_row_indices(20, 0.5, seed=3)
    assert np.array_equal(np.sort(np.concatenate([tr, te])), np.arange(20))
    assert np.array_equal(train.responses, data.responses[tr])


def test_split_rows_deterministic():
    a = split_row_indices(30, 0.5, seed=11)
    b = split_row_indices(30, 0.5, seed=11)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_split_rows_bad_fraction():
    with pytest.raises(ValueError):
        split_row_indices(10, 1.0, seed=0)


def test_take_rows_copies():
    data = small_data()
    sub = take_rows(data, [0, 2])
    sub.responses[0, 0] = 1
    assert data.responses[0, 0] == 0


def test_matrix_round_trip_full_precision(tmp_path):
    rng = np.random.default_rng(5)
    mat = rng.normal(size=(4, 3)) * 1e-7
    path = tmp_path / "m.csv"
    write_matrix(path, mat, comments=["config echo"])
    back = read_matrix(path)
    assert np.array_equal(back, mat)


def test_read_matrix_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_matrix(tmp_path / "absent.csv")


def test_write_matrix_rejects_inf(tmp_path):
    with pytest.raises(ValueError):
        write_matrix(tmp_path / "m.csv", np.array([[np.inf]]))


def test_intercepts_round_trip_ragged(tmp_path):
    intercepts = [np.array([1.0, 0.25, -1.0]), np.array([0.5])]
    path = tmp_path / "d.csv"
    write_intercepts(path, intercepts)
    back = read_intercepts(path)
    assert len(back) == 2
    assert np.array_equal(back[0], intercepts[0])
    assert np.array_equal(back[1], intercepts[1])


def test_derive_seeds_distinct_and_reproducible():
    a = derive_seeds(42, 5)
    b = derive_seeds(42, 5)
    assert a == b
    assert len(set(a)) == 5
    assert derive_seeds(43, 5) != a
