import json
import math

import numpy as np
import pytest

from conftest import toy_config
from pyrcpd import checkpoint
from pyrcpd.dwn import cnn_stream
from pyrcpd.errors import ConfigError, DataError, DimensionError
from pyrcpd.models import (
    HeadParams,
    ModelConfig,
    bce_loss,
    build_model,
    detect_head,
    load_model,
    multitask_loss,
    save_model,
)
from pyrcpd.prl import prl_forward
from pyrcpd.tensor import Tensor, channelwise_conv1d


def head(w, b):
    return HeadParams(Tensor(np.atleast_2d(np.asarray(w, float))), Tensor(np.atleast_1d(np.asarray(b, float))))


class TestHead:
    def test_zero_head_is_half(self, rng):
        y = detect_head(Tensor(rng.normal(size=(5, 3))), head(np.zeros((3, 1)), [0.0]))
        np.testing.assert_array_equal(y.data, 0.5)

    def test_saturation(self, rng):
        y = detect_head(Tensor(rng.normal(size=(5, 3))), head(np.zeros((3, 1)), [10.0]))
        assert np.all(y.data > 0.9999)

    def test_sigmoid_one(self):
        y = detect_head(Tensor([[2.0]]), head([[1.0]], [-1.0]))
        assert y.data[0] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            detect_head(Tensor(np.ones((3, 2))), head(np.ones((3, 1)), [0.0]))


class TestLosses:
    def test_bce_half(self):
        assert float(bce_loss(np.full(4, 0.5), np.array([1, 0, 1, 0.])).data) == pytest.approx(math.log(2))

    def test_multitask_lambda_zero(self, rng):
        y = Tensor(rng.uniform(0.1, 0.9, 6))
        t = (rng.random(6) > 0.5).astype(float)
        logits = Tensor(rng.normal(size=(6, 3)))
        a = multitask_loss(logits, y, np.zeros(6, int), t, lam=0.0)
        assert float(a.data) == float(bce_loss(y, t).data)

    def test_uniform_logits_ln3(self):
        y = Tensor(np.full(4, 0.5))
        loss = multitask_loss(Tensor(np.zeros((4, 3))), y, np.array([0, 1, 2, 1]), np.zeros(4), lam=1.0)
        assert float(loss.data) == pytest.approx(math.log(2) + math.log(3), abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            multitask_loss(Tensor(np.zeros((2, 3))), Tensor(np.full(2, 0.5)), np.array([0, 3]), np.zeros(2))


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(kind="LSTM"), dict(head="binary", n_outputs=2), dict(head="multitask", n_outputs=1),
        dict(cell="gru"), dict(cnn_arch="[9:4]"), dict(wavelet_kernel=1), dict(channels=0),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ModelConfig(**kw).validate()

    def test_multitask_n19(self):
        m = build_model(toy_config("PRN", head="multitask", n_outputs=19))
        assert m.params["head.W_o"].shape == (4, 19)

    def test_roundtrip_dict(self):
        cfg = toy_config("DWN")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"kind": "PRN", "depth": 3})


class TestBuild:
    def test_cnn_granularity(self, rng):
        m = build_model(ModelConfig(kind="CNN", channels=2))
        assert m.scores(rng.normal(size=(8192, 2))).shape == (512,)

    @pytest.mark.parametrize("kind,expected", [("PRN", 469), ("DWN", 261), ("RCN", 393), ("CNN", 249)])
    def test_parameter_counts(self, kind, expected):
        # nwl 2*3*2; cnn 9*2*4+4 + 5*4*4+4 + 5*4*4+4; lstm W1,W2,(W3) 4*16 each + b 16; head 4+1
        assert build_model(toy_config(kind)).n_params() == expected

    @pytest.mark.parametrize("kind", ["PRN", "DWN", "RCN", "CNN"])
    def test_scores_in_unit_interval_and_finite_loss(self, rng, kind):
        m = build_model(toy_config(kind))
        X = rng.normal(size=(3, 64, 2)) * 50
        s = m.scores(X)
        assert s.shape == (3, 4) and np.all((s > 0) & (s < 1))
        assert np.isfinite(float(m.loss(X, np.zeros((3, 4))).data))

    @pytest.mark.parametrize("kind", ["PRN", "DWN", "RCN", "CNN"])
    def test_seed_determinism(self, rng, kind):
        a, b = build_model(toy_config(kind, seed=3)), build_model(toy_config(kind, seed=3))
        X, y = rng.normal(size=(64, 2)), np.array([0, 1, 0, 0.])
        assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
        assert float(a.loss(X, y).data) == float(b.loss(X, y).data)

    def test_single_level_prn_is_filter_bank_plus_rcn(self, rng):
        m = build_model(toy_config("PRN", wavelet_depth=1))
        X = rng.normal(size=(64, 2))
        parts = m._parts
        H = channelwise_conv1d(Tensor(X - X.mean(axis=0)), parts["nwl"].K_h)
        h = prl_forward([cnn_stream(H, parts["cnn"])], parts["rnn"])
        W, b = parts["head"].W_o.data, parts["head"].b_o.data
        ref = 1 / (1 + np.exp(-(h.data @ W + b)[:, -1]))
        np.testing.assert_allclose(m.scores(X), ref, atol=1e-12)

    def test_centering_removes_level(self, rng):
        m = build_model(toy_config("PRN"))
        X = rng.normal(size=(64, 2))
        np.testing.assert_allclose(m.scores(X), m.scores(X + 7.0), atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            build_model(toy_config("CNN")).scores(rng.normal(size=(64, 3)))

    def test_multitask_forward(self, rng):
        m = build_model(toy_config("RCN", head="multitask", n_outputs=4))
        y, logits = m.forward(rng.normal(size=(64, 2)))
        assert y.shape == (4,) and logits.shape == (4, 3)


class TestCheckpoint:
    def test_model_roundtrip(self, tmp_path, rng):
        m = build_model(toy_config("PRN", seed=4))
        for p in m.params.values():
            p.data += rng.normal(size=p.shape)
        path = tmp_path / "m.prn"
        save_model(m, path)
        back = load_model(path)
        assert back.config == m.config
        X = rng.normal(size=(64, 2))
        assert np.array_equal(back.scores(X), m.scores(X))
        header = json.loads((tmp_path / "m.prn.json").read_text())
        assert header["format"] == "PRN1"

    def test_layout(self):
        buf = checkpoint.dumps({"w": Tensor(np.array([[1.0, 2.0]]))})
        assert buf[:4] == b"PRN1"
        assert buf[4:8] == (1).to_bytes(4, "little") and buf[8:9] == b"w"
        assert len(buf) == 4 + 4 + 1 + 4 + 2 * 8 + 2 * 8

    def test_bad_magic_and_truncation(self):
        buf = checkpoint.dumps({"w": Tensor(np.ones(3))})
        with pytest.raises(DataError):
            checkpoint.loads(b"XXXX" + buf[4:])
        with pytest.raises(DataError):
            checkpoint.loads(buf[:-3])

    def test_missing_header(self, tmp_path):
        m = build_model(toy_config("CNN"))
        checkpoint.save(tmp_path / "m.prn", m.params)
        with pytest.raises(ConfigError):
            load_model(tmp_path / "m.prn")

    def test_shape_mismatch(self, tmp_path):
        m = build_model(toy_config("CNN"))
        state = m.state_dict()
        state["head.b_o"] = np.zeros(3)
        with pytest.raises(ConfigError):
            m.load_state_dict(state)
