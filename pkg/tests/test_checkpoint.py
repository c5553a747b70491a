import numpy as np
import pytest

from conftest import random_flow
from flowconvgru.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from flowconvgru.ingest import build_dataset, fit_scaler
from flowconvgru.model import ModelSpec, forward, init_params

SPEC = ModelSpec(m=2, k=2, layers=2, hidden=3, diffusion_steps=2, history=2, variant="full", kernel_size=3)


def _checkpoint(rng):
    volumes = rng.uniform(0, 4, size=(6, 2, 2, 2))
    flows = [random_flow(rng, 4) for _ in range(6)]
    scaler = fit_scaler(volumes, flows)
    return Checkpoint(
        spec=SPEC,
        params=init_params(SPEC, 42),
        scaler=scaler,
        seed=42,
        epoch=17,
        extra={"splits": {"train_frac": 0.7, "val_frac": 0.1}},
    )


class TestRoundTrip:
    def test_everything_survives(self, rng, tmp_path):
        ck = _checkpoint(rng)
        path = tmp_path / "m.fcg"
        save_checkpoint(path, ck)
        back = load_checkpoint(path)
        assert back.spec == ck.spec
        assert back.seed == 42 and back.epoch == 17
        assert back.extra == ck.extra
        assert set(back.params) == set(ck.params)
        for name in ck.params:
            assert np.array_equal(back.params[name], ck.params[name])
        assert back.scaler.to_dict() == ck.scaler.to_dict()

    def test_predictions_bit_identical_after_reload(self, rng, tmp_path):
        ck = _checkpoint(rng)
        path = tmp_path / "m.fcg"
        save_checkpoint(path, ck)
        back = load_checkpoint(path)
        volumes = rng.uniform(0, 1, size=(2, 2, 2, 2))
        flows = [random_flow(rng, 4) for _ in range(2)]
        a = forward((volumes, flows), SPEC, ck.params)
        b = forward((volumes, flows), SPEC, back.params)
        assert np.array_equal(a, b)

    def test_save_is_canonical(self, rng, tmp_path):
        ck = _checkpoint(rng)
        p1, p2 = tmp_path / "a.fcg", tmp_path / "b.fcg"
        save_checkpoint(p1, ck)
        save_checkpoint(p2, load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_scaler_optional(self, rng, tmp_path):
        ck = Checkpoint(spec=SPEC, params=init_params(SPEC, 0))
        path = tmp_path / "m.fcg"
        save_checkpoint(path, ck)
        assert load_checkpoint(path).scaler is None


class TestCorruption:
    def test_bad_magic(self, rng, tmp_path):
        path = tmp_path / "m.fcg"
        save_checkpoint(path, _checkpoint(rng))
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_bad_version(self, rng, tmp_path):
        path = tmp_path / "m.fcg"
        save_checkpoint(path, _checkpoint(rng))
        raw = bytearray(path.read_bytes())
        raw[6] = 0xEE  # version field sits right after the 6-byte magic
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_truncation_and_trailing(self, rng, tmp_path):
        path = tmp_path / "m.fcg"
        save_checkpoint(path, _checkpoint(rng))
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(ValueError):
            load_checkpoint(path)
        path.write_bytes(raw + b"\x00")
        with pytest.raises(ValueError):
            load_checkpoint(path)
