"""Checkpoint serialization: bit-exact round trips and corruption detection."""

import numpy as np
import pytest

from strats.checkpoint import (Checkpoint, config_hash, load_checkpoint,
                               save_checkpoint)
from strats.data import Dataset, TimeSeriesSample, VariableVocabulary, \
    fit_normalizer
from strats.errors import CheckpointError
from strats.model import ModelConfig, init_parameters


def small_config(**kw):
    defaults = dict(n_variables=4, n_demographics=2, embed_dim=8, n_blocks=1,
                    n_heads=2, max_observations=8)
    defaults.update(kw)
    return ModelConfig(**defaults)


def some_stats():
    vocab = VariableVocabulary(tuple(f"v{i}" for i in range(4)))
    rng = np.random.default_rng(0)
    samples = [TimeSeriesSample.create(f"s{i}", f"s{i}", rng.uniform(0, 1, 5),
                                       rng.integers(0, 4, 5),
                                       rng.standard_normal(5),
                                       rng.standard_normal(2))
               for i in range(10)]
    return fit_normalizer(Dataset(samples, vocab))


class TestRoundTrip:
    def test_bit_identical_parameters(self, tmp_path):
        config = small_config()
        store = init_parameters(config, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, store, config, some_stats())
        ckpt = load_checkpoint(path)
        assert sorted(ckpt.values) == sorted(store.names())
        for name in store.names():
            assert ckpt.values[name].dtype == np.float32
            np.testing.assert_array_equal(
                ckpt.values[name], store[name].data.astype(np.float32))

    def test_statistics_and_config_round_trip(self, tmp_path):
        config = small_config(interpretable=True, time_scale=48.0)
        store = init_parameters(config, seed=1)
        stats = some_stats()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, store, config, stats)
        ckpt = load_checkpoint(path)
        assert ckpt.model_config == config
        assert ckpt.normalization.vocabulary.names == stats.vocabulary.names
        np.testing.assert_allclose(ckpt.normalization.vocabulary.means,
                                   stats.vocabulary.means)
        np.testing.assert_allclose(ckpt.normalization.demographic_std,
                                   stats.demographic_std)

    def test_to_store_rebuilds_parameters(self, tmp_path):
        config = small_config()
        store = init_parameters(config, seed=2)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, store, config, None)
        rebuilt = load_checkpoint(path).to_store()
        for name in store.names():
            np.testing.assert_array_equal(rebuilt[name].data, store[name].data)

    def test_double_round_trip_is_stable(self, tmp_path):
        config = small_config()
        store = init_parameters(config, seed=3)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, store, config, None)
        save_checkpoint(p2, load_checkpoint(p1).to_store(), config, None)
        assert p1.read_bytes() == p2.read_bytes()


class TestCorruption:
    def write(self, tmp_path):
        config = small_config()
        store = init_parameters(config, seed=4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, store, config, None)
        return path, config

    def test_flipped_payload_byte_detected(self, tmp_path):
        path, _ = self.write(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[-10] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_truncated_file_detected(self, tmp_path):
        path, _ = self.write(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 7])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic_detected(self, tmp_path):
        path, _ = self.write(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[0] = ord("X")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_unsupported_version_detected(self, tmp_path):
        path, _ = self.write(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[8:10] = (999).to_bytes(2, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_config_mismatch_detected(self, tmp_path):
        path, config = self.write(tmp_path)
        other = small_config(embed_dim=16)
        assert config_hash(other) != config_hash(config)
        with pytest.raises(CheckpointError, match="different model"):
            load_checkpoint(path, expected_config=other)

    def test_matching_expected_config_accepted(self, tmp_path):
        path, config = self.write(tmp_path)
        ckpt = load_checkpoint(path, expected_config=config)
        assert isinstance(ckpt, Checkpoint)
