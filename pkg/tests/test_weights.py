from __future__ import annotations

import numpy as np
import pytest

from dynstereo.weights import (
    BadMagicError,
    ChecksumError,
    ModelConfig,
    WeightShapeError,
    dumps_weights,
    init_weights,
    load_weights,
    loads_weights,
    save_weights,
    weight_shapes,
)


@pytest.fixture(scope="module")
def weights():
    return init_weights(ModelConfig.compact(), 7)


def test_round_trip_bit_exact(tmp_path, weights):
    save_weights(weights, tmp_path / "w.dsw")
    back = load_weights(tmp_path / "w.dsw", ModelConfig.compact())
    assert back.names() == weights.names() and back.metadata == weights.metadata
    for name in weights:
        assert back[name].tobytes() == weights[name].tobytes()
    assert dumps_weights(back) == dumps_weights(weights)


def test_truncation_and_corruption_detected(weights):
    blob = dumps_weights(weights)
    with pytest.raises(ChecksumError):
        loads_weights(blob[: len(blob) // 2])
    flipped = bytearray(blob)
    flipped[100] ^= 1
    with pytest.raises(ChecksumError):
        loads_weights(bytes(flipped))
    with pytest.raises(BadMagicError):
        loads_weights(b"XXXX" + blob[4:])


def test_shape_mismatch_names_entry(weights):
    bad = weights.replace(g8__head2__w=np.zeros((1, 1, 3, 3)))
    with pytest.raises(WeightShapeError, match="g8.head2.w"):
        bad.validate(ModelConfig.compact())
    with pytest.raises(WeightShapeError):
        loads_weights(dumps_weights(weights), ModelConfig())


def test_init_is_seeded(weights):
    again = init_weights(ModelConfig.compact(), 7)
    other = init_weights(ModelConfig.compact(), 8)
    assert all(np.array_equal(again[n], weights[n]) for n in weights)
    assert not np.array_equal(other["enc.stem.w"], weights["enc.stem.w"])


def test_arrays_are_read_only(weights):
    with pytest.raises(ValueError):
        weights["enc.stem.w"][0] = 1.0


def test_config_metadata_round_trip():
    cfg = ModelConfig.compact(iters=8, radius=3)
    assert ModelConfig.from_metadata(cfg.to_metadata()) == cfg
    assert cfg.lookup_channels == 28
    with pytest.raises(ValueError):
        ModelConfig(iters=10)


def test_default_config_entries_cover_all_modules():
    names = list(weight_shapes(ModelConfig()))
    for prefix in ("enc.", "sst.0.space", "sst.3.time", "g16.fuse.time", "g4.gru2", "up16.mask1", "up4.mask2"):
        assert any(n.startswith(prefix) for n in names), prefix
    assert weight_shapes(ModelConfig())["up4.mask2.w"][0] == 9 * 16
