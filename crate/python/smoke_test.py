"""Smoke test for the gfd extension module.

Build it first, e.g. `maturin develop -m crates/py/Cargo.toml`, then run
`python python/smoke_test.py`. Training a tiny model takes a minute or two on CPU.
"""

import math
import sys
import tempfile
from pathlib import Path

import numpy as np

import gfd


def check_glcm():
    rng = np.random.default_rng(0)
    img = rng.uniform(-1, 1, size=(32, 32))
    p = gfd.glcm(img, 2, 0.0)
    assert p.shape == (64, 64)
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.allclose(p, p.T)
    r = gfd.glcm_correlation(p)
    assert -1.0 <= r <= 1.0

    stripes = np.tile(np.array([-1.0, 1.0]), (32, 16))
    r_same = gfd.glcm_correlation(gfd.glcm(stripes, 2, 0.0))
    r_flip = gfd.glcm_correlation(gfd.glcm(stripes, 1, 0.0))
    assert r_same > 0.99 and r_flip < -0.99, (r_same, r_flip)

    fp = rng.normal(0, 0.05, size=(3, 32, 32)).astype(np.float32)
    vec = gfd.correlation_vector(fp, distances=[2, 4], angles=[0.0, math.pi / 2])
    assert len(vec) == 4
    stats = gfd.population_stats([fp, fp * 0.5 + 0.01])
    assert stats["count"] == 2 and len(stats["mean"]) == 16


def check_composite():
    carrier = np.full((3, 8, 8), 0.9, dtype=np.float32)
    fp = np.full((3, 8, 8), 0.2, dtype=np.float32)
    out = gfd.composite(fp, carrier)
    assert np.allclose(out, 1.0)
    try:
        gfd.composite(fp[:, :4], carrier)
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch accepted")


def check_train_and_infer(tmp: Path):
    manifest = gfd.write_toy_data(tmp / "toy", pool_size=60)
    overrides = [
        "train.max_iters=4",
        "train.pretrain_c_iters=2",
        "train.batch_size=3",
        "train.val_every=4",
        "train.checkpoint_every=4",
        "patch.crop=32",
        "model.generator.base_channels=8",
        "model.generator.depth=3",
        "model.discriminator.base_channels=8",
        'model.classifier={"backbone":"resnet","base_channels":8,"depth":5,"blocks":[1,1,1,1]}',
        'model.perceptual.weights={"seeded":0}',
        "model.perceptual.width_divisor=16",
    ]
    summary = gfd.train(manifest, tmp / "run", overrides=overrides)
    model = gfd.Model(summary["final_checkpoint"])
    assert model.labels[0] == "real"

    img = gfd.load_image(next((tmp / "toy" / "ganA" / "test").glob("*.png")))
    pred = model.attribute(img)
    assert 0 <= pred["label"] < len(model.labels)
    assert abs(sum(math.exp(v) for v in _log_softmax(pred["logits"])) - 1.0) < 1e-5
    det = model.detect(img)
    assert 0.0 <= det["score"] <= 1.0
    fp = model.extract_fingerprint(img)
    assert fp.shape == (3, 32, 32)
    report = model.evaluate(manifest, "closed")
    assert report["num_samples"] > 0


def _log_softmax(xs):
    m = max(xs)
    lse = m + math.log(sum(math.exp(x - m) for x in xs))
    return [x - lse for x in xs]


def main():
    check_glcm()
    check_composite()
    with tempfile.TemporaryDirectory() as tmp:
        check_train_and_infer(Path(tmp))
    print("smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
