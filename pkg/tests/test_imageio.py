import numpy as np
import pytest

from irsde.degradations import make_dataset
from irsde.imageio import (load_dataset, read_pgm, read_signal_csv, read_state, save_dataset, write_pgm,
                           write_signal_csv)


@pytest.mark.parametrize("maxval", [255, 65535])
def test_pgm_roundtrip_quantized(tmp_path, maxval):
    img = np.random.default_rng(0).uniform(size=(7, 5))
    p = tmp_path / "a.pgm"
    write_pgm(p, img, maxval)
    back = read_pgm(p)
    assert back.shape == (7, 5)
    assert np.max(np.abs(back - img)) <= 0.5 / maxval + 1e-12
    raw = p.read_bytes()
    assert raw.startswith(b"P5")


def test_pgm_exact_levels_roundtrip(tmp_path):
    levels = np.arange(256).reshape(16, 16) / 255.0
    write_pgm(tmp_path / "l.pgm", levels, 255)
    np.testing.assert_array_equal(read_pgm(tmp_path / "l.pgm"), levels)


def test_pgm_clips_and_reads_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([0, 255]))
    np.testing.assert_array_equal(read_pgm(p), [[0.0, 1.0]])
    write_pgm(tmp_path / "d.pgm", np.array([[-1.0, 2.0]]))
    np.testing.assert_array_equal(read_pgm(tmp_path / "d.pgm"), [[0.0, 1.0]])


def test_pgm_rejects_bad_input(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2\n2 1\n255\n0 255\n")
    with pytest.raises(ValueError):
        read_pgm(p)
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "e.pgm", np.zeros((2, 2)), maxval=1000)


def test_signal_csv_lossless(tmp_path):
    x = np.random.default_rng(0).standard_normal(50)
    write_signal_csv(tmp_path / "s.csv", x)
    np.testing.assert_array_equal(read_signal_csv(tmp_path / "s.csv"), x)
    np.testing.assert_array_equal(read_state(tmp_path / "s.csv"), x)


@pytest.mark.parametrize("shape", [(24,), (16, 16)])
def test_dataset_roundtrip(tmp_path, shape):
    samples = make_dataset("spikes", 3, shape, master_seed=1)
    save_dataset(tmp_path, samples)
    names = sorted(p.name for p in tmp_path.iterdir())
    ext = "csv" if len(shape) == 1 else "pgm"
    assert f"spikes_0000_hq.{ext}" in names and "manifest.json" in names
    back = load_dataset(tmp_path)
    for a, b in zip(samples, back):
        np.testing.assert_array_equal(a.x0, b.x0)
        np.testing.assert_array_equal(a.mu, b.mu)
        assert (a.id, a.degradation_tag, a.seed) == (b.id, b.degradation_tag, b.seed)
    files = load_dataset(tmp_path, replay=False)
    tol = 0.0 if len(shape) == 1 else 0.5 / 65535
    for a, b in zip(samples, files):
        assert np.max(np.abs(a.x0 - b.x0)) <= tol + 1e-12


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)
