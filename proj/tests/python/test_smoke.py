import json

import numpy as np
import pytest

import normlab


def test_normalize_batch_moments():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(64, 8)) * 3.0 + 1.5
    out = normlab.normalize(x, "batch")
    assert out.shape == x.shape
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-3)


def test_normalize_layer_moments():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(16, 32))
    out = normlab.normalize(x, "layer")
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=1), 1.0, atol=1e-3)


def test_model_logits_deterministic():
    x = np.random.default_rng(2).normal(size=(8, 16))
    a = normlab.Model(depth=4, width=32, norm="layer", input=[16], seed=7)
    b = normlab.Model(depth=4, width=32, norm="layer", input=[16], seed=7)
    la = a.logits(x)
    lb = b.logits(x)
    assert la.shape == (8, 10)
    assert np.array_equal(la, lb)


def test_sgd_step_reduces_loss():
    data = normlab.synthetic(200, [16], 4, seed=3)
    x, y = data["train_x"][:64], data["train_y"][:64]
    model = normlab.Model(depth=3, width=32, norm="batch", classes=4, input=[16], seed=1)
    first, diverged = model.sgd_step(x, y, lr=0.1)
    assert not diverged
    for _ in range(20):
        last, diverged = model.sgd_step(x, y, lr=0.1)
        assert not diverged
    assert last < first


def test_rms_penalty_zero_iff_centered():
    balanced = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert normlab.rms_penalty(balanced) == pytest.approx(0.0, abs=1e-12)
    lopsided = np.ones((4, 2))
    assert normlab.rms_penalty(lopsided) == pytest.approx(4.0, rel=1e-9)


def test_lanczos_recovers_diagonal_spectrum():
    eigs = np.array([1.0, 2.0, 3.0, 5.0, 8.0, 13.0])
    spectrum = normlab.lanczos(np.diag(eigs), probes=1, seed=4)
    np.testing.assert_allclose(sorted(spectrum["ritz_values"]), eigs, atol=1e-8)
    assert sum(spectrum["weights"]) == pytest.approx(1.0, abs=1e-10)


BASE_CONFIG = {
    "experiment": "infoprop",
    "seed": 11,
    "normalizers": ["none", "layer"],
    "model": {"depth": 4, "width": 24, "input": [16], "classes": 4},
    "dataset": {"id": "synthetic", "n": 400},
    "diagnostics": {"probe_batch": 64},
}


def test_run_config_writes_expected_rows(tmp_path):
    rows, log = normlab.run_config(json.dumps(BASE_CONFIG), out_dir=str(tmp_path / "out"))
    per_layer = [r for r in rows if r["metric"] == "info_prop_correlation"]
    assert len(per_layer) == 2 * 4  # normalizers x layers
    assert (tmp_path / "out" / "info_prop_correlation.csv").exists()
    assert (tmp_path / "out" / "manifest.json").exists()
    assert "layer:" in log or "layer" in log


def test_run_config_byte_identical(tmp_path):
    cfg = json.dumps(BASE_CONFIG)
    normlab.run_config(cfg, out_dir=str(tmp_path / "a"))
    normlab.run_config(cfg, out_dir=str(tmp_path / "b"))
    csv_a = (tmp_path / "a" / "info_prop_correlation.csv").read_bytes()
    csv_b = (tmp_path / "b" / "info_prop_correlation.csv").read_bytes()
    assert csv_a == csv_b


def test_canonical_config_round_trips():
    canon = normlab.canonical_config(json.dumps(BASE_CONFIG))
    assert normlab.canonical_config(canon) == canon
    assert normlab.config_fingerprint(canon) == normlab.config_fingerprint(
        json.dumps(BASE_CONFIG)
    )


def test_unknown_config_key_rejected():
    bad = dict(BASE_CONFIG, typo_key=1)
    with pytest.raises(ValueError, match="typo_key"):
        normlab.run_config(json.dumps(bad))
