import math

import numpy as np
import pytest

structssl = pytest.importorskip("structssl")


def test_exact_quantities():
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = p[1, 1, 1] = 0.5
    assert structssl.pairwise_mi(p, "XZ") == pytest.approx(math.log(2))
    assert structssl.total_correlation(p) == pytest.approx(2 * math.log(2))
    critic = structssl.nwj_optimal_critic(p, "XZ")
    assert structssl.nwj_exact(p, "XZ", critic) == pytest.approx(math.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        structssl.pairwise_mi(p, "XY")


def test_gaussian_bench():
    assert structssl.gaussian_mi(0.8) == pytest.approx(-0.5 * math.log(1 - 0.64))
    est = structssl.gaussian_nwj_estimate(0.8, 10000, seed=0)
    assert 0.40 <= est <= 0.56


def test_shapes_encode_and_probe():
    images, labels, boxes = structssl.synth_shapes(60, seed=3)
    assert images.shape == (60, 32, 32, 3)
    assert len(labels) == 60 and len(boxes) == 60 and len(boxes[0]) == 2
    assert images.min() >= 0.0 and images.max() <= 1.0
    model = structssl.Model.init(conv_widths=[4, 4, 4, 4], seed=1)
    z = model.encode(images)
    assert z.shape == (60, 8, 8)
    np.testing.assert_array_equal(z, model.encode(images))
    feats = z.reshape(60, -1)
    acc = structssl.linear_probe(feats[:40], labels[:40], feats[40:], labels[40:], 6, epochs=5)
    assert 0.0 <= acc <= 1.0


def test_train_and_checkpoint(tmp_path):
    images, labels, _ = structssl.synth_shapes(16, seed=4)
    cfg = "iterations=2\nbatch_size=8\nconv_widths=4,4,4,4\nprobe_interval=none\n"
    model, bounds = structssl.train(cfg, images, labels, 6)
    assert len(bounds) == 2 and all(math.isfinite(b) for b in bounds)
    path = str(tmp_path / "m.sslw")
    model.save(path)
    again = structssl.Model.load(path)
    np.testing.assert_array_equal(model.encode(images), again.encode(images))
    assert "theta.head.weight" in again.parameter_names()
    with pytest.raises(Exception):
        structssl.train("bogus=1\n", images, labels, 6)
