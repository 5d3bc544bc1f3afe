import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from osadoa.array_model import ArrayConfig, build_beamformer
from osadoa.dataset import (
    Dataset,
    DatasetSpec,
    features_nchw,
    features_nhwc,
    generate_dataset,
    grid_index,
    load_dataset,
    make_label,
    manifest_path,
    save_dataset,
    to_feature_tensor,
)
from osadoa.errors import ChecksumError, DomainError, FormatError
from osadoa.signal_sim import exact_covariance, snr_to_power


def random_hermitian(rng, K):
    X = rng.standard_normal((K, 2 * K)) + 1j * rng.standard_normal((K, 2 * K))
    return X @ X.conj().T / (2 * K)


@pytest.fixture(scope="module")
def small_ds(cfg, W):
    spec = DatasetSpec(snr_db=(-5.0, 5.0), reps=1, angles=(-30.0, 0.0, 12.0), n_pairs=3, seed=4)
    return generate_dataset(spec, cfg, W)


def test_feature_identity():
    ft = to_feature_tensor(np.eye(5))
    assert ft.norm_factor == 1
    assert_array_equal(ft.R[..., 0], np.eye(5))
    assert_array_equal(ft.R[..., 1], 0)


def test_feature_structure_and_roundtrip(rng):
    C = random_hermitian(rng, 6)
    ft = to_feature_tensor(C)
    assert ft.norm_factor == pytest.approx(np.trace(C).real / 6)
    assert_allclose(ft.R[..., 0], ft.R[..., 0].T, atol=1e-10)
    assert_allclose(ft.R[..., 1], -ft.R[..., 1].T, atol=1e-10)
    assert_allclose(np.diag(ft.R[..., 1]), 0, atol=1e-15)
    assert_allclose(ft.to_covariance(), C, atol=1e-12)


@settings(max_examples=25)
@given(c=st.floats(1e-6, 1e6), seed=st.integers(0, 2**32))
def test_feature_scale_invariance(c, seed):
    C = random_hermitian(np.random.default_rng(seed), 4)
    assert_allclose(to_feature_tensor(c * C).R, to_feature_tensor(C).R, rtol=1e-9, atol=1e-12)


def test_feature_errors():
    with pytest.raises(DomainError):
        to_feature_tensor(np.full((3, 3), np.nan))
    with pytest.raises(DomainError):
        to_feature_tensor(np.zeros((3, 4)))
    with pytest.raises(DomainError):
        to_feature_tensor(np.zeros((3, 3)))


def test_label_examples():
    assert make_label(0.0).L == 181
    z = make_label(-90.0).z
    assert z[0] == 1 and z.sum() == 1
    assert np.flatnonzero(make_label(10.0).z).tolist() == [100]
    two = make_label([-3.0, 40.0], theta0=60)
    assert np.flatnonzero(two.z).tolist() == [57, 100]


def test_label_modes():
    with pytest.raises(DomainError):
        make_label(10.1)
    snap = make_label(10.1, mode="eval")
    assert snap.snapped and np.flatnonzero(snap.z).tolist() == [100]
    assert not make_label(10.0, mode="eval").snapped
    with pytest.raises(DomainError):
        make_label([10.1, 10.2], mode="eval")  # collide on one grid point
    with pytest.raises(DomainError):
        make_label(70.0, theta0=60)


@given(theta0=st.sampled_from([10.0, 45.0, 60.0, 90.0]), dtheta=st.sampled_from([0.5, 1.0, 2.5]))
def test_grid_bijection(theta0, dtheta):
    L = int(round(2 * theta0 / dtheta)) + 1
    grid = -theta0 + dtheta * np.arange(L)
    assert_array_equal(grid_index(grid, theta0, dtheta), np.arange(L))


def test_generation_counts(cfg, W):
    spec = DatasetSpec(snr_db=(-10.0, 0.0, 10.0), reps=2)
    big = ArrayConfig.from_elements(32, 8, 4)  # +/-90 grid, L = 181
    ds = generate_dataset(spec, big, build_beamformer(big))
    assert len(ds) == 1086
    assert ds.manifest["count"] == 1086


def test_labels_match_meta(small_ds):
    assert len(small_ds) == 9
    for i in range(len(small_ds)):
        s = small_ds[i]
        assert_array_equal(s.label.z, make_label(small_ds.thetas[i], 60.0).z)
        assert s.label.z.sum() == len(small_ds.thetas[i])
    assert sorted(set(small_ds.Q)) == [1, 2]


def test_pairs_respect_separation(cfg, W):
    ds = generate_dataset(DatasetSpec(snr_db=(0.0,), angles=(), n_pairs=50, min_sep=5), cfg, W)
    gaps = [b - a for a, b in ds.thetas]
    assert min(gaps) >= 5


def test_clean_channel_recomputed(small_ds, cfg, W):
    for i in range(len(small_ds)):
        C = exact_covariance(cfg, W, small_ds.thetas[i], snr_to_power(small_ds.snr_db[i])).C
        expected = to_feature_tensor(C, small_ds.norm[i]).R
        assert_allclose(small_ds.clean[i], expected, rtol=1e-5, atol=1e-6)


def test_generation_deterministic(cfg, W, small_ds):
    spec = DatasetSpec(snr_db=(-5.0, 5.0), reps=1, angles=(-30.0, 0.0, 12.0), n_pairs=3, seed=4)
    assert generate_dataset(spec, cfg, W) == small_ds
    other = generate_dataset(DatasetSpec(**{**spec.__dict__, "seed": 5}), cfg, W)
    assert not np.array_equal(other.noisy, small_ds.noisy)


def test_uniform_snr_range(cfg, W):
    ds = generate_dataset(DatasetSpec(snr_db=(), snr_range=(-20, 10), reps=3), cfg, W)
    assert len(ds) == 3 * cfg.L
    assert ds.snr_db.min() >= -20 and ds.snr_db.max() <= 10
    assert len(np.unique(ds.snr_db)) == len(ds)


def test_spec_errors(cfg, W):
    with pytest.raises(DomainError):
        generate_dataset(DatasetSpec(angles=(10.5,)), cfg, W)
    tiny = ArrayConfig(M=4, Ms=4, dMs=0, K=1, theta0=1.0)
    with pytest.raises(DomainError):
        generate_dataset(DatasetSpec(angles=(), n_pairs=1, min_sep=5), tiny)


def test_roundtrip(tmp_path, small_ds):
    path = tmp_path / "set.osad"
    save_dataset(small_ds, path)
    loaded = load_dataset(path)
    assert loaded == small_ds
    assert loaded.noisy.dtype == np.float32
    assert json.loads(manifest_path(path).read_text())["count"] == len(small_ds)
    save_dataset(loaded, tmp_path / "again.osad")
    assert (tmp_path / "again.osad").read_bytes() == path.read_bytes()


def test_roundtrip_f64(tmp_path, cfg, W):
    ds = generate_dataset(DatasetSpec(snr_db=(0.0,), angles=(5.0,), precision="f64"), cfg, W)
    save_dataset(ds, tmp_path / "d.osad")
    back = load_dataset(tmp_path / "d.osad")
    assert back == ds and back.noisy.dtype == np.float64


def test_empty_dataset(tmp_path, cfg, W):
    ds = generate_dataset(DatasetSpec(angles=()), cfg, W)
    assert len(ds) == 0
    save_dataset(ds, tmp_path / "e.osad")
    assert load_dataset(tmp_path / "e.osad") == ds


def test_corruption(tmp_path, small_ds):
    path = tmp_path / "set.osad"
    save_dataset(small_ds, path)
    raw = bytearray(path.read_bytes())

    flipped = bytearray(raw)
    flipped[100] ^= 0x01
    path.write_bytes(bytes(flipped))
    with pytest.raises(ChecksumError):
        load_dataset(path)

    path.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(FormatError, match="magic"):
        load_dataset(path)

    bad_version = bytearray(raw)
    bad_version[4] = 99
    path.write_bytes(bytes(bad_version))
    with pytest.raises(FormatError, match="version"):
        load_dataset(path)

    path.write_bytes(bytes(raw[:10]))
    with pytest.raises(FormatError):
        load_dataset(path)


def test_layouts(small_ds):
    X = features_nchw(small_ds.noisy)
    assert X.shape == (len(small_ds), 2, 7, 7)
    assert_array_equal(features_nhwc(X), small_ds.noisy)


def test_subset_and_samples(small_ds):
    sub = small_ds.subset(small_ds.Q == 2)
    assert isinstance(sub, Dataset) and len(sub) == 3
    assert len(small_ds.samples) == len(small_ds)
