import math

import numpy as np
import pytest

import corrnet


def test_ctc_examples():
    lp = np.log([[0.4, 0.6]])
    assert corrnet.ctc_loss(lp, [1]) == pytest.approx(-math.log(0.6), abs=1e-12)
    uniform = np.log(np.full((2, 2), 0.5))
    assert corrnet.ctc_loss(uniform, [1]) == pytest.approx(-math.log(0.75), abs=1e-12)
    assert corrnet.brute_force_ctc(uniform, [1]) == pytest.approx(-math.log(0.75), abs=1e-12)
    with pytest.raises(ValueError):
        corrnet.ctc_loss(uniform, [1, 1])


def test_decoders():
    lp = np.log(np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.9, 0.05], [0.9, 0.05, 0.05], [0.05, 0.05, 0.9]]))
    assert corrnet.greedy_decode(lp) == [1, 2]
    assert corrnet.beam_decode(lp, 4) == [1, 2]
    with pytest.raises(ValueError):
        corrnet.beam_decode(lp, 0)


def test_wer():
    assert corrnet.edit_ops([1, 2, 3, 4], [1, 9, 3, 4]) == (1, 0, 0)
    assert corrnet.wer([1, 2, 3, 4], [1, 9, 3, 4]) == 0.25
    assert corrnet.wer([1, 2], [5, 6, 7, 8, 9]) == 2.5
    report = corrnet.corpus_wer([([1, 2, 3, 4], [1, 2, 3, 4]), ([1, 2], [1])])
    assert report["wer"] == pytest.approx(1 / 6)
    assert report["del_rate"] == pytest.approx(1 / 6)


def test_correlation_and_attention_ranges():
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(3, 2, 4, 4))
    out = corrnet.correlation(x)
    assert out["trajectory"].shape == x.shape
    assert out["gated_next"].shape == (3, 4, 4, 4, 4)
    assert np.all(np.abs(out["gated_next"]) < 0.5)
    assert np.all(out["gated_next"][-1] == 0.0)
    m = corrnet.identification_attention(rng.uniform(-1, 1, size=(4, 32, 4, 4)))
    assert m.shape == (4, 32, 4, 4)
    assert np.all(np.abs(m) < 0.5)


def test_synth_and_model():
    video, label = corrnet.generate_sample(0, "dev")
    assert video.shape == (8 * len(label), 3, 16, 16)
    assert video.min() >= 0.0 and video.max() <= 1.0
    again, label2 = corrnet.generate_sample(0, "dev")
    assert np.array_equal(video, again) and label == label2

    with_blocks = corrnet.Model(seed=3)
    without = corrnet.Model(overrides=["model.insertion=none"], seed=3)
    f1, a1 = with_blocks.forward(video)
    f2, a2 = without.forward(video)
    assert np.array_equal(f1, f2) and np.array_equal(a1, a2)
    assert f1.shape == (len(video) // 4, 7)
    assert math.isfinite(with_blocks.loss(video, label))
    assert with_blocks.parameter_count > without.parameter_count


def test_train_and_reload(tmp_path):
    overrides = [
        "model.widths=4,8",
        "model.downsample=4,1",
        "model.insertion=2",
        "model.temporal_channels=8",
        "model.hidden=8",
        "identification.reduction=4",
        "train.epochs=1",
        "data.train_count=4",
        "data.dev_count=2",
    ]
    seen = []
    result = corrnet.train(overrides=overrides, out_dir=str(tmp_path), on_epoch=seen.append)
    assert len(result["history"]) == 1 and len(seen) == 1
    assert (tmp_path / "best.cnk").exists() and (tmp_path / "metrics.jsonl").exists()
    model = corrnet.Model(overrides=overrides)
    model.load(str(tmp_path / "best.cnk"))
    assert model.evaluate("dev", 2)["wer"] == result["best_dev_wer"]


def test_config_and_gradcheck():
    text = corrnet.default_config()
    assert "[train]" in text and "train.lr" in corrnet.config_keys()
    with pytest.raises(ValueError, match="train.bogus"):
        corrnet.Model(overrides=["train.bogus=1"])
    passed, rows, uncovered = corrnet.gradcheck(seeds=2)
    assert passed and not uncovered
    assert all(r["worst"] < r["tolerance"] for r in rows)
