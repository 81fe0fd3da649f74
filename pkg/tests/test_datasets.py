import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dlca import datasets
from dlca.datasets import (
    FormatError,
    PhotocurrentDataset,
    Standardizer,
    export_csv,
    fit_standardizer,
    generate_dataset,
    load,
    preprocess,
    save,
    split,
)
from dlca.dynamics import ChannelParams, MeasurementWindow

SHORT = ChannelParams(t_final=0.3)
SIGMA_Z_THETA = math.pi / 2


@pytest.fixture(scope="module")
def small():
    return generate_dataset(40, SHORT, 1.86 * math.pi, master_seed=3)


def toy(x, labels=None):
    x = np.asarray(x, dtype=float)
    labels = np.zeros(len(x), dtype=int) if labels is None else labels
    return PhotocurrentDataset(datasets.DatasetMetadata(SHORT, 0.0, MeasurementWindow.full(SHORT)), labels, x)


def test_default_length_is_three_hundred_bins():
    ds = generate_dataset(3, ChannelParams(), 0.0)
    assert ds.currents.shape == (3, 300)


def test_windowed_length():
    ds = generate_dataset(3, ChannelParams(), 0.0, MeasurementWindow(0.1, 0.4))
    assert ds.seq_len == 40


def test_generation_is_deterministic_across_chunks_and_workers(small):
    again = generate_dataset(40, SHORT, 1.86 * math.pi, master_seed=3, chunk=7, workers=2)
    assert small.equals(again)


def test_prefix_property_and_seed_sensitivity(small):
    head = generate_dataset(10, SHORT, 1.86 * math.pi, master_seed=3)
    assert head.equals(small.subset(np.arange(10)))
    other = generate_dataset(40, SHORT, 1.86 * math.pi, master_seed=4)
    assert not np.array_equal(other.currents, small.currents)


def test_labels_are_uniform():
    ds = generate_dataset(4000, ChannelParams(t_final=0.01), 0.0, master_seed=1)
    counts = np.bincount(ds.labels, minlength=4)
    assert np.all(np.abs(counts - 1000) < 4 * math.sqrt(4000 * 0.25 * 0.75))


def test_rejects_bad_requests():
    with pytest.raises(ValueError):
        generate_dataset(0, SHORT, 0.0)
    with pytest.raises(ValueError):
        generate_dataset(2, SHORT, 0.0, MeasurementWindow(0.1, 0.4))


def test_sigma_z_record_starts_at_plus_minus_two_sqrt_gamma_e():
    n = 4000
    p = ChannelParams(t_final=0.05)
    ds = generate_dataset(n, p, SIGMA_Z_THETA, master_seed=2)
    early = ds.currents[:, :3].mean(axis=1)
    se = 1 / math.sqrt(p.eta * 0.03)
    for label, sign in ((0, 1), (1, -1)):
        sel = early[ds.labels == label]
        assert abs(sel.mean() - sign * 2 * math.sqrt(p.gamma_E)) < 4 * se / math.sqrt(len(sel)) + 0.1
    # X-basis inputs give no mean signal under a sigma_z probe
    sel = early[ds.labels >= 2]
    assert abs(sel.mean()) < 4 * se / math.sqrt(len(sel)) + 0.1


def test_zero_measurement_rate_leaves_only_noise():
    p = ChannelParams(gamma_E=0.0, t_final=0.2)
    ds = generate_dataset(2000, p, SIGMA_Z_THETA, master_seed=5)
    for k in range(4):
        sel = ds.currents[ds.labels == k]
        assert abs(sel.mean()) < 4 * sel.std() / math.sqrt(sel.size)


def test_standardizer_examples():
    s = fit_standardizer(toy([[0.0, 2.0], [0.0, 2.0]]))
    assert (s.mean, s.std) == (1.0, 1.0)
    with pytest.raises(ValueError):
        fit_standardizer(toy([[3.0, 3.0]]))
    with pytest.raises(ValueError):
        fit_standardizer(toy(np.empty((0, 2))))
    with pytest.raises(ValueError):
        Standardizer(0.0, 0.0)


@given(arrays(float, (5, 6), elements=st.floats(-1e3, 1e3)))
def test_preprocess_flip_is_an_involution(x):
    s = Standardizer(0.0, 1.0)
    ds = toy(x)
    twice = preprocess(preprocess(ds, s), s)
    assert np.array_equal(twice.currents, ds.currents)
    assert twice.metadata.transforms[-1] == "flip_time"


def test_preprocess_standardises_train_split(small):
    s = fit_standardizer(small)
    out = preprocess(small, s)
    assert abs(out.currents.mean()) < 1e-12 and abs(out.currents.std() - 1) < 1e-12
    assert np.allclose(out.currents[:, 0], s.apply(small.currents[:, -1]))
    with pytest.raises(ValueError):
        preprocess(toy(np.ones((2, 5))), s)


def test_split_sizes_and_disjointness():
    ds = toy(np.arange(200.0).reshape(100, 2))
    tr, te = split(ds, 0.9, seed=1)
    assert (len(tr), len(te)) == (90, 10)
    rows = {tuple(r) for r in tr.currents} | {tuple(r) for r in te.currents}
    assert len(rows) == 100
    tr2, _ = split(ds, 0.9, seed=1)
    assert tr.equals(tr2)
    with pytest.raises(ValueError):
        split(toy(np.ones((1, 2))), 0.9)


def test_round_trip(tmp_path, small):
    path = tmp_path / "d.dlca"
    save(small, path, run={"command": "test"})
    back = load(path)
    assert back.equals(small)
    assert back.metadata == small.metadata


def test_corrupt_files_are_rejected(tmp_path, small):
    path = tmp_path / "d.dlca"
    save(small, path)
    raw = bytearray(path.read_bytes())

    bad = tmp_path / "magic.dlca"
    bad.write_bytes(b"NOTADSET" + raw[8:])
    with pytest.raises(FormatError, match="magic"):
        load(bad)

    bad.write_bytes(raw[:8] + struct.pack("<H", 99) + raw[10:])
    with pytest.raises(FormatError, match="version"):
        load(bad)

    bad.write_bytes(raw[:-100])
    with pytest.raises(FormatError):
        load(bad)

    flipped = bytearray(raw)
    flipped[-20] ^= 0xFF
    bad.write_bytes(bytes(flipped))
    with pytest.raises(FormatError, match="checksum"):
        load(bad)


def test_generator_version_mismatch_warns(tmp_path, small):
    from dataclasses import replace
    old = PhotocurrentDataset(replace(small.metadata, generator_version="old/0"), small.labels, small.currents)
    path = tmp_path / "old.dlca"
    save(old, path)
    with pytest.warns(UserWarning, match="old/0"):
        load(path)


def test_export_csv(tmp_path, small):
    path = tmp_path / "d.csv"
    export_csv(small, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    assert lines[1].split(",")[:2] == ["label", "t0"]
    first = lines[2].split(",")
    assert int(first[0]) == small.labels[0] and float(first[1]) == small.currents[0, 0]
    assert len(lines) == 2 + len(small)


def test_dataset_validation():
    with pytest.raises(ValueError):
        toy(np.ones((2, 3)), labels=np.array([0, 4]))
    with pytest.raises(ValueError):
        toy(np.ones(3))
