import json

import numpy as np
import pytest

import ssd_engine as se


def instance(rng, B=2, T=37, H=2, P=4, N=3):
    x = rng.standard_normal((B, T, H, P))
    dt = rng.uniform(1e-3, 1e-1, (B, T, H))
    a = -rng.uniform(1.0, 16.0, H)
    b = rng.standard_normal((B, T, 1, N))
    c = rng.standard_normal((B, T, 1, N))
    return x, dt, a, b, c


def test_ssd_forward_matches_sequential():
    rng = np.random.default_rng(0)
    x, dt, a, b, c = instance(rng)
    d = np.zeros(a.shape)
    ref_y, ref_h = se.sequential_ssm(x, dt, a, b, c, d)
    for L in (1, 8, 64):
        y, h = se.ssd_forward(x, dt, a, b, c, L)
        assert y.dtype == np.float64
        np.testing.assert_allclose(y, ref_y, rtol=0, atol=1e-10)
        np.testing.assert_allclose(h, ref_h, rtol=0, atol=1e-10)


def test_ssd_forward_f32():
    rng = np.random.default_rng(1)
    x, dt, a, b, c = (t.astype(np.float32) for t in instance(rng))
    y, _ = se.ssd_forward(x, dt, a, b, c, 16, mask="rowwise")
    assert y.dtype == np.float32
    ref, _ = se.sequential_ssm(*(t.astype(np.float64) for t in (x, dt, a, b, c)), np.zeros(a.shape))
    np.testing.assert_allclose(y, ref, rtol=1e-5, atol=2e-4)


def test_segsum():
    s = se.segsum(np.array([1.0, 2.0, 3.0]))
    assert s[2, 0] == 5.0
    assert s[1, 1] == 0.0
    assert np.isneginf(s[0, 2])


def test_shape_errors_become_value_errors():
    rng = np.random.default_rng(2)
    x, dt, a, b, c = instance(rng)
    with pytest.raises(ValueError):
        se.ssd_forward(x, dt[:, :5], a, b, c, 8)


def test_model_prefill_generate_and_bundle(tmp_path):
    m = se.Model.random("tiny", seed=3)
    cfg = json.loads(m.config_json)
    tokens = np.arange(10, dtype=np.int64) % cfg["vocab_size"]
    logits = m.prefill(tokens)
    assert logits.shape == (1, 10, cfg["vocab_size"])
    np.testing.assert_allclose(logits, m.prefill(tokens, f64=True), atol=2e-4)

    cached = m.generate(tokens[:4], 12)
    full = m.generate(tokens[:4], 12, mode="non-cached")
    assert cached.shape == (1, 12)
    np.testing.assert_array_equal(cached, full)

    m.save(str(tmp_path / "b"))
    back = se.Model.load(str(tmp_path / "b"))
    np.testing.assert_array_equal(back.prefill(tokens), logits)
    with pytest.raises(OSError):
        se.Model.load(str(tmp_path / "missing"))


def test_cost_functions():
    m = se.Model.random("130m", layers=2)
    g = [m.flops_decode("cached", 16, k) for k in (1, 2, 3)]
    assert g[2] - 2 * g[1] + g[0] == 0
    assert m.flops_decode("cached", 16, 2) - m.flops_decode("cached", 16, 1) == m.flops_step()
    assert se.mfu(918e12, 2.0, "v6e") == 0.5
    assert se.hbu(3.2e12, 4.0, "v6e") == 0.5
