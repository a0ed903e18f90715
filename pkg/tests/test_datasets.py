import numpy as np
import pytest

from coinai.datasets import (
    BUNDLED,
    GENERATORS,
    Dataset,
    bundled_dataset,
    dataset_digest,
    from_csv,
    load_dataset,
    to_csv,
    write_dataset,
)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_files_match_generators(name):
    shipped, fresh = bundled_dataset(name), GENERATORS[name]()
    assert np.array_equal(shipped.train_X, fresh.train_X)
    assert np.array_equal(shipped.valid_y, fresh.valid_y)
    assert dataset_digest(shipped) == dataset_digest(fresh)


def test_shapes():
    assert bundled_dataset("two_spirals").input_width == 2
    ds = bundled_dataset("stripes")
    assert (ds.input_width, ds.train_X.shape[0], ds.valid_X.shape[0]) == (16, 1000, 500)
    assert abs(ds.valid_y.mean() - 0.5) < 0.1


def test_csv_round_trip(tmp_path):
    ds = GENERATORS["two_spirals"](seed=3, n_train=20, n_valid=10)
    train, valid = write_dataset(ds, tmp_path)
    again = load_dataset(train, valid)
    assert again.name == "two_spirals"
    assert np.array_equal(again.train_X, ds.train_X)  # repr floats are exact
    X, y = from_csv(to_csv(ds.valid_X, ds.valid_y))
    assert np.array_equal(y, ds.valid_y)


def test_invalid_datasets():
    X = np.zeros((3, 2))
    with pytest.raises(ValueError):
        Dataset("bad", X, np.array([0, 1, 2]), X, np.array([0, 1, 1]), 2)
    with pytest.raises(ValueError):
        Dataset("bad", X, np.array([0, 1, 1]), X[:0], np.array([], dtype=int), 2)
    with pytest.raises(ValueError):
        from_csv("a,b\n1,2\n")
