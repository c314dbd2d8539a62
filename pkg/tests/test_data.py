"""Pruebas de generadores, lectura de tablas, estandarización y particiones."""

import numpy as np
import pytest
from pydantic import ValidationError

from src.data.datasets import (
    DataConfig,
    Dataset,
    build_dataset,
    circle_points,
    gen_circles,
    gen_moons,
    gen_tabular_smoke,
    inverse_standardize,
    load_dataset,
    load_table,
    moon_points,
    save_dataset,
    split_dataset,
    standardize,
    tag_test_rows,
    unstandardize_values,
)
from src.errors import DataError


def test_moon_formula():
    np.testing.assert_allclose(moon_points(0.0, inner=False), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(moon_points(np.pi / 2, inner=True), [1.0, -0.5], atol=1e-15)


def test_circle_formula():
    np.testing.assert_allclose(circle_points(0.0, 1.0), [1.0, 0.0])
    np.testing.assert_allclose(circle_points(np.pi, 0.5), [-0.5, 0.0], atol=1e-15)


def test_moons_balanced_labels():
    ds = gen_moons(16384, seed=0)
    assert ds.n == 16384
    assert int(ds.x.sum()) == 8192
    assert set(np.unique(ds.x)) == {0.0, 1.0}
    assert ds.feature_names == ["inner"]


def test_noiseless_moons_lie_on_curves():
    ds = gen_moons(200, noise_std=0.0, seed=1)
    outer = ds.y[ds.x[:, 0] == 0]
    inner = ds.y[ds.x[:, 0] == 1]
    np.testing.assert_allclose(np.hypot(outer[:, 0], outer[:, 1]), 1.0)
    assert np.all(outer[:, 1] >= 0)
    np.testing.assert_allclose(np.hypot(1.0 - inner[:, 0], 0.5 - inner[:, 1]), 1.0)


def test_noiseless_outer_circle_has_unit_radius():
    ds = gen_circles(100, noise_std=0.0, seed=2)
    outer = ds.y[ds.x[:, 0] == 0]
    inner = ds.y[ds.x[:, 0] == 1]
    np.testing.assert_allclose(np.hypot(outer[:, 0], outer[:, 1]), 1.0)
    np.testing.assert_allclose(np.hypot(inner[:, 0], inner[:, 1]), 0.5)


def test_circles_reject_bad_inner_factor():
    with pytest.raises(DataError):
        gen_circles(10, inner_factor=1.0)


@pytest.mark.parametrize("generator", [gen_moons, gen_circles])
def test_generators_are_deterministic(generator):
    a = generator(64, seed=5)
    b = generator(64, seed=5)
    c = generator(64, seed=6)
    assert np.array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)


def test_tabular_smoke_shape():
    ds = gen_tabular_smoke(300, dim=4, seed=0)
    assert ds.y.shape == (300, 4)
    assert ds.n_features == 0
    # columnas pares: exp(z/2) > 0
    assert np.all(ds.y[:, 0] > 0)


def _write(tmp_path, text, name="table.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_table_round_trips_values(tmp_path):
    path = _write(tmp_path, "a,b,age\n1.5,-2,10\n0.25,3e2,11\n-7,0,12\n")
    ds = load_table(path, ["a", "b"], ["age"])
    np.testing.assert_array_equal(ds.y, [[1.5, -2.0], [0.25, 300.0], [-7.0, 0.0]])
    np.testing.assert_array_equal(ds.x[:, 0], [10.0, 11.0, 12.0])
    assert ds.response_names == ["a", "b"]


def test_load_table_reports_bad_cell(tmp_path):
    path = _write(tmp_path, "a,b\n1,2\n3,oops\n")
    with pytest.raises(DataError) as info:
        load_table(path, ["a", "b"])
    assert info.value.row == 1
    assert info.value.column == "b"
    assert "oops" in str(info.value)


def test_load_table_reports_missing_column(tmp_path):
    path = _write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(DataError) as info:
        load_table(path, ["a", "c"])
    assert info.value.column == "c"


def test_load_table_reports_empty_cell(tmp_path):
    path = _write(tmp_path, "a,b\n1,\n")
    with pytest.raises(DataError) as info:
        load_table(path, ["a", "b"])
    assert (info.value.row, info.value.column) == (0, "b")


def test_dataset_rejects_nan():
    with pytest.raises(DataError):
        Dataset(y=np.array([[0.0], [np.nan]]))


def test_standardize_and_back(rng):
    ds = Dataset(y=rng.normal(5.0, 3.0, size=(500, 2)))
    std = standardize(ds)
    np.testing.assert_allclose(std.y.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(std.y.std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(inverse_standardize(std).y, ds.y, atol=1e-12)
    np.testing.assert_allclose(unstandardize_values(std.y, std.standardization), ds.y, atol=1e-12)
    assert std.standardization.log_scale == pytest.approx(np.sum(np.log(ds.y.std(axis=0))))


def test_standardize_constant_column():
    ds = Dataset(y=np.column_stack([np.ones(4), np.arange(4.0)]))
    std = standardize(ds)
    assert std.standardization.std[0] == 1.0
    np.testing.assert_array_equal(std.y[:, 0], 0.0)


def test_standardize_on_train_rows_only():
    ds = split_dataset(tag_test_rows(Dataset(y=np.arange(40.0).reshape(20, 2)), 0.25, seed=1), 0.25, seed=1)
    std = standardize(ds, fit_on="train")
    train = std.y[std.mask("train")]
    np.testing.assert_allclose(train.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(train.std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(inverse_standardize(std).y, ds.y, atol=1e-12)


def test_standardize_without_fit_rows_is_error():
    with pytest.raises(DataError):
        standardize(Dataset(y=np.zeros((4, 2)), split=["validation"] * 4), fit_on="train")


def test_split_keeps_test_rows():
    ds = tag_test_rows(gen_moons(400, seed=0), 0.25, seed=0)
    split = split_dataset(ds, 0.25, seed=3)
    assert np.array_equal(split.mask("test"), ds.mask("test"))
    assert int(split.mask("validation").sum()) == 75
    assert int(split.mask("train").sum()) == 225
    again = split_dataset(ds, 0.25, seed=3)
    assert np.array_equal(split.split, again.split)


def test_split_rejects_bad_fraction(moons):
    with pytest.raises(DataError):
        split_dataset(moons, 1.5)


def test_save_and_load_dataset(tmp_path, moons):
    ds = standardize(moons)
    path = save_dataset(ds, tmp_path / "cache" / "moons-s0.test")
    assert path.name == "moons-s0.test.csv"
    loaded = load_dataset(path)
    np.testing.assert_array_equal(loaded.y, ds.y)
    np.testing.assert_array_equal(loaded.x, ds.x)
    assert loaded.split.tolist() == ds.split.tolist()
    assert loaded.standardization == ds.standardization


def test_dataset_cache_is_bit_exact(tmp_path, rng):
    y = rng.standard_normal((512, 2)) * np.array([1e-3, 7.0e4])
    ds = Dataset(y=y, x=rng.uniform(size=(512, 1)))
    loaded = load_dataset(save_dataset(ds, tmp_path / "awkward"))
    np.testing.assert_array_equal(loaded.y, ds.y)
    np.testing.assert_array_equal(loaded.x, ds.x)


def test_build_dataset_standardizes_from_train_rows():
    cfg = DataConfig(generator="moons", n=1000, test_size=200, standardize=True)
    ds = build_dataset(cfg, seed=0)
    train = ds.y[ds.mask("train")]
    np.testing.assert_allclose(train.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(train.std(axis=0), 1.0, atol=1e-12)
    assert np.abs(ds.y[ds.mask("test")].mean(axis=0)).max() > 1e-6


def test_test_rows_do_not_move_standardization():
    small = build_dataset(DataConfig(generator="moons", n=1000, test_size=100, standardize=True), seed=0)
    large = build_dataset(DataConfig(generator="moons", n=1000, test_size=3000, standardize=True), seed=0)
    assert small.standardization == large.standardization
    np.testing.assert_array_equal(small.y[small.mask("train")], large.y[large.mask("train")])


def test_build_dataset_adds_test_rows():
    cfg = DataConfig(generator="moons", n=1000, test_size=200)
    ds = build_dataset(cfg, seed=0)
    assert ds.n == 1200
    assert int(ds.mask("test").sum()) == 200
    assert int(ds.mask("validation").sum()) == 250
    # los datos de entrenamiento no dependen de cuántas filas de test se pidan
    other = build_dataset(cfg.model_copy(update={"test_size": 50}), seed=0)
    np.testing.assert_array_equal(other.y[:1000], ds.y[:1000])


def test_build_dataset_unconditional_drops_features():
    ds = build_dataset(DataConfig(generator="circles", n=100, test_size=0, conditional=False), seed=1)
    assert ds.n_features == 0
    assert not ds.has("test")


def test_build_dataset_from_file(tmp_path):
    rows = "\n".join(f"{i},{2 * i},{i % 2}" for i in range(50))
    path = _write(tmp_path, "y1,y2,g\n" + rows + "\n")
    cfg = DataConfig(generator="file", path=str(path), response_cols=["y1", "y2"], feature_cols=["g"],
                     test_fraction=0.2, standardize=True)
    ds = build_dataset(cfg, seed=0)
    assert int(ds.mask("test").sum()) == 10
    assert ds.standardization is not None
    assert ds.feature_names == ["g"]


def test_file_config_requires_path():
    with pytest.raises(ValidationError):
        DataConfig(generator="file", response_cols=["a"])
