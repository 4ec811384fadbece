import math

import numpy as np
import pytest

import frshield


def test_psnr_closed_form():
    a = np.zeros((1, 4, 4), dtype=np.float32)
    b = a + np.float32(1.0 / 255.0)
    m = frshield.perturbation_metrics(a, b)
    assert m["psnr"] == pytest.approx(20 * math.log10(255.0), abs=1e-3)
    assert math.isinf(frshield.perturbation_metrics(a, a)["psnr"])


def test_scores_and_verdict():
    grid = [[0.2, 0.4], [0.6, 1.0]]
    assert frshield.mismatch_score(grid) == pytest.approx(0.55, abs=1e-12)
    assert frshield.match_score([0.5, 0.7]) == pytest.approx(0.6, abs=1e-12)
    assert frshield.security_verdict(0.6) == "insecure"
    assert frshield.security_verdict(0.61) == "secure"
    subsets = frshield.draw_subsets(100, 10, count=5, seed=3)
    assert len(subsets) == 5
    assert all(len(s) == 10 and s == sorted(set(s)) for s in subsets)
    assert subsets == frshield.draw_subsets(100, 10, count=5, seed=3)


def test_svm_separates_blobs():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(-2, 0.5, (20, 2)), rng.normal(2, 0.5, (20, 2))]).astype(np.float32)
    y = np.array([0] * 20 + [1] * 20)
    pred = frshield.svm_fit_predict(x, y, C=1.0, gamma=0.5, test_features=x)
    assert (pred == y).all()
    assert frshield.rbf_kernel(x[0], x[0], 0.5) == pytest.approx(1.0)


def test_model_and_attack():
    x, y = frshield.synth_generate(60, 4.0, seed=1)
    assert x.shape == (60, 1, 64, 64)
    assert set(np.unique(y)) == {0, 1}
    model = frshield.Model.train("N1", x[:40], y[:40], x[40:], y[40:], epochs=2, batch=16, seed=2)
    assert model.flatten_width == 1728
    assert len(model.history) == 2
    feats = model.flatten_features(x[:3])
    assert feats.shape == (3, 1728)
    assert model.logits(x[:3]).shape == (3, 2)
    assert "FGSM010" in frshield.attack_names()
    r = frshield.attack(model, x[:4], y[:4], "FGSM010", seed=5)
    assert r["adversarial"].shape == (4, 1, 64, 64)
    assert r["adversarial"].min() >= 0.0 and r["adversarial"].max() <= 1.0
    assert 0.0 <= r["asr"] <= 1.0


def test_config_and_errors(tmp_path):
    c = frshield.Config.parse("seed = 5\n[data]\ncount = 80\n[network]\nepochs = 1\nlearning_rate = 1e-3\n")
    c.out = str(tmp_path / "out")
    assert frshield.Config.parse(c.to_text()).seed == 5
    summary = frshield.run_experiment(c)
    assert summary["networks"] == ["N1"]
    assert summary["clean"][0]["epochs"] == 1
    assert summary["attacks"] == []
    assert frshield.report(c)["clean"] == summary["clean"]
    with pytest.raises(frshield.FrshieldError) as info:
        frshield.Config.parse("seed = 1\nbogus = 2\n")
    assert info.value.kind == "config"
    assert info.value.exit_code == 9
