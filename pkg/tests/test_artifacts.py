import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hsgibbs.artifacts import (
    load_chain,
    read_matrix_csv,
    read_pgm,
    save_chain,
    write_json,
    write_matrix_csv,
    write_pgm,
)
from hsgibbs.exceptions import ConfigError
from hsgibbs.operators import ConvolutionModel1D, build_difference
from hsgibbs.prior import HorseshoeParams
from hsgibbs.sampler import GibbsConfig, run_gibbs


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_csv_round_trip_is_exact(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("csv") / "a.csv"
    write_matrix_csv(path, a)
    b = read_matrix_csv(path, squeeze=False)
    np.testing.assert_array_equal(a, b)


def test_csv_vector_and_header(tmp_path):
    write_matrix_csv(tmp_path / "v.csv", [1.5, 2.0])
    assert (tmp_path / "v.csv").read_text().splitlines()[0] == "# rows=2 cols=1"
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "v.csv"), [1.5, 2.0])


def test_csv_rejects_bad_files(tmp_path):
    (tmp_path / "bad.csv").write_text("1,2\n")
    with pytest.raises(ConfigError):
        read_matrix_csv(tmp_path / "bad.csv")
    (tmp_path / "short.csv").write_text("# rows=3 cols=2\n1,2\n")
    with pytest.raises(ConfigError):
        read_matrix_csv(tmp_path / "short.csv")
    with pytest.raises(ValueError):
        write_matrix_csv(tmp_path / "x.csv", np.zeros((2, 2, 2)))


def test_pgm_round_trip(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 2.0], [2.0, 1.0]])
    vmin, vmax = write_pgm(tmp_path / "a.pgm", img)
    assert (vmin, vmax) == (0.0, 2.0)
    pix = read_pgm(tmp_path / "a.pgm")
    assert pix.shape == (3, 2)
    np.testing.assert_array_equal(pix, np.rint(img / 2 * 255).astype(np.uint8))
    write_pgm(tmp_path / "c.pgm", np.ones((2, 2)))
    assert not read_pgm(tmp_path / "c.pgm").any()


def test_json_is_deterministic_and_nan_safe(tmp_path):
    obj = {"b": np.float64(np.nan), "a": np.arange(3), "c": {"z": 1, "y": (1.0, 2.0)}}
    write_json(tmp_path / "a.json", obj)
    text = (tmp_path / "a.json").read_text()
    assert json.loads(text) == {"a": [0, 1, 2], "b": None, "c": {"y": [1.0, 2.0], "z": 1}}
    assert text.index('"a"') < text.index('"b"')


@pytest.mark.parametrize("storage", ["full", "moments"])
def test_chain_checkpoint_round_trip(tmp_path, storage):
    d = 10
    A = ConvolutionModel1D(d, 0.1)
    y = A.apply(np.linspace(0, 1, d))
    store = run_gibbs(A, y, build_difference(1, d), HorseshoeParams(),
                      GibbsConfig(n_s=12, n_b=3, n_t=1, strategy="pcgls", storage=storage))
    back = load_chain(save_chain(store, tmp_path / "chain"))
    for f in ("sigma2", "tau2", "gamma", "cgls_iters", "cgls_trace", "iterations"):
        np.testing.assert_array_equal(getattr(back, f), getattr(store, f))
    np.testing.assert_array_equal(back.x_mean(), store.x_mean())
    np.testing.assert_array_equal(back.x_std(), store.x_std())
    assert back.metadata["config"]["strategy"] == "pcgls"
    if storage == "full":
        np.testing.assert_array_equal(back.w2, store.w2)


def test_load_chain_missing_directory(tmp_path):
    with pytest.raises(ConfigError):
        load_chain(tmp_path / "nope")
