import math

import numpy as np
import pytest

import agcm


def test_similarities():
    assert agcm.cosine_sim([1.0, 0.0], [0.0, 2.0]) == 0.0
    assert agcm.pearson_sim([1.0, 2.0, 4.0], [2.0, 3.0, 7.0]) == pytest.approx(0.9897433186107871)
    assert agcm.neg_euclidean_sim([0.0, 3.0], [4.0, 0.0]) == pytest.approx(-5.0)
    p = agcm.softmax([1.0, 0.0])
    assert p[0] == pytest.approx(math.e / (math.e + 1))


def test_attention_and_fusion():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 4))
    for metric in ("cosine", "euclidean", "pearson"):
        w = agcm.attention_weights(x, metric)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diag(w) == 0.0)
        fused = agcm.fuse(x, 0.8, metric)
        np.testing.assert_allclose(fused, 0.8 * x + 0.2 * w @ x, atol=1e-12)
    assert np.array_equal(agcm.fuse(x, 1.0), x)


def test_fuse_vjp_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3))
    g = rng.normal(size=(4, 3))
    analytic = agcm.fuse_vjp(x, g, 0.7, "pearson")
    eps = 1e-6
    numeric = np.zeros_like(x)
    for i in range(4):
        for j in range(3):
            up, down = x.copy(), x.copy()
            up[i, j] += eps
            down[i, j] -= eps
            numeric[i, j] = ((agcm.fuse(up, 0.7, "pearson") - agcm.fuse(down, 0.7, "pearson")) * g).sum() / (2 * eps)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_margin_loss():
    z = np.array([[1.0, 0.0]])
    w = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert agcm.loss_forward(z, w, [0], margin=0.0) == pytest.approx(math.log1p(math.exp(-40)), rel=1e-12)
    logits = agcm.margin_logits(agcm.class_cosines(z, w), [0], margin=0.2)
    np.testing.assert_allclose(logits, [[16.0, -20.0]])
    gz, gw = agcm.loss_vjp(np.array([[0.3, 0.4]]), w, [1])
    assert gz.shape == (1, 2) and gw.shape == (2, 2)
    with pytest.raises(agcm.AgcmError):
        agcm.loss_forward(z, w, [5])


def test_metrics_and_gradcheck():
    assert agcm.forgetting(63.4, 51.5) == pytest.approx(18.77, abs=0.01)
    assert agcm.confusion_percentage(np.array([[3, 1], [1, 3]])) == 25.0
    suites = agcm.gradcheck(seed=2, count=5)
    assert all(s["failures"] == 0 for s in suites)


def test_generate_and_run(tmp_path):
    cfg = "\n".join([
        "dataset.d = 8", "dataset.n_base = 3", "dataset.n_novel = 2",
        "dataset.samples_per_base = 20", "dataset.k = 3", "dataset.confusable_pairs = none",
        "base.epochs = 3", "adapt.epochs = 3", "adapt.batch_size = 8", "seeds = 1", "jobs = 1",
    ])
    g = agcm.generate(cfg, seed=4)
    assert g["base"]["embeddings"].shape == (66, 8)
    assert g["kshot"]["num_classes"] == 5
    summary = agcm.run(cfg, str(tmp_path))
    assert len(summary["seeds"]) == 1
    assert (tmp_path / "summary.csv").exists()
    assert 0.0 <= summary["mean"]["novel_acc"] <= 1.0
