import math

import numpy as np
import pytest

import skipnet


def log_softmax(x):
    x = x - x.max(axis=0, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=0, keepdims=True))


def test_ctc_matches_brute_force_and_gradient():
    rng = np.random.default_rng(0)
    lp = log_softmax(rng.normal(size=(3, 5)))
    loss, grad = skipnet.ctc_loss(lp, [1, 2])
    assert loss == pytest.approx(skipnet.ctc_brute_force(lp, [1, 2]), abs=1e-12)
    assert grad.shape == lp.shape
    eps = 1e-6
    bumped = lp.copy()
    bumped[2, 3] += eps
    assert (skipnet.ctc_loss(bumped, [1, 2])[0] - loss) / eps == pytest.approx(grad[2, 3], abs=1e-5)


def test_uniform_two_frames_loss():
    lp = np.log(np.full((2, 2), 0.5))
    assert skipnet.ctc_loss(lp, [1])[0] == pytest.approx(math.log(4 / 3), abs=1e-15)
    with pytest.raises(skipnet.InfeasibleError):
        skipnet.ctc_loss(lp, [1, 1])


def test_beam_search_and_greedy():
    alphabet = skipnet.Alphabet("ab")
    assert alphabet.decode(alphabet.encode("ba")) == "ba"
    lp = np.log(np.full((2, 2), 0.5))
    cfg = skipnet.DecoderConfig()
    cfg.lm_weight = 0.0
    cfg.insertion_bonus = 0.0
    text, score = skipnet.prefix_beam_search(lp, skipnet.Alphabet("a"), cfg)
    assert text == "a"
    assert score == pytest.approx(math.log(0.75), abs=1e-12)
    assert skipnet.exhaustive_decode(lp, skipnet.Alphabet("a"), cfg)[0] == "a"
    peaked = np.log(np.array([[0.01, 0.98, 0.01], [0.98, 0.01, 0.01], [0.01, 0.01, 0.98]]) + 0.0)
    assert skipnet.greedy_decode(peaked) == [1, 2]


def test_language_model_round_trip(tmp_path):
    lm = skipnet.LanguageModel.train(["ab ab", "ba", "abba b"], order=3)
    vocab = lm.vocabulary()
    total = sum(10 ** lm.score(["<s>", "a"], w) for w in vocab)
    assert total == pytest.approx(1.0, abs=1e-8)
    path = tmp_path / "lm.arpa"
    lm.write(path)
    again = skipnet.LanguageModel.read(path)
    assert again.order == 3
    assert again.score(["a"], "b") == pytest.approx(lm.score(["a"], "b"), abs=1e-12)
    with pytest.raises(skipnet.FormatError):
        path.write_text("\\data\\\nngram 1=2\n")
        skipnet.LanguageModel.read(path)


def test_features_and_model_shapes():
    t = np.arange(16000) / 16000.0
    feats = skipnet.compute_features(0.5 * np.sin(2 * np.pi * 440 * t))
    assert feats.shape == (257, 99)
    shapes, counts = set(), {}
    for kind in ("plain", "residual", "highway", "dense"):
        m = skipnet.model({"connectivity": kind, "width": 8})
        out = m.forward(feats)
        shapes.add(out.shape)
        counts[kind] = m.parameter_count
        assert np.allclose(np.exp(out).sum(axis=0), 1.0)
    assert len(shapes) == 1
    assert counts["plain"] == counts["residual"]


def test_metrics_and_schedule():
    assert skipnet.edit_distance("a b c", "a c", "word")[2] == pytest.approx(1 / 3)
    assert skipnet.error_rates(["ab"], ["ab"]) == (0.0, 0.0)
    assert skipnet.lr_at(82, lr0=0.1) == pytest.approx(0.01, abs=0)
    with pytest.raises(skipnet.ConfigError):
        skipnet.lr_at(1, lr=0.1)


def test_pipeline_end_to_end(tmp_path):
    cfg = skipnet.load_config(overrides=["model.width=8", "train.epochs=2", "synth.utterances=3",
                                         "synth.valid_utterances=1"])
    skipnet.synth_data(cfg, tmp_path / "data")
    cfg["paths"]["train"] = str(tmp_path / "data" / "train.tsv")
    result = skipnet.train(cfg, tmp_path / "run")
    assert result["epochs"] == 2
    cfg["paths"]["checkpoint"] = str(tmp_path / "run" / "final.ckpt")
    hyps = skipnet.decode(cfg, tmp_path / "data" / "valid.tsv", tmp_path / "dec", greedy=True)
    assert [h[0] for h in hyps] == ["valid000"]
    assert (tmp_path / "dec" / "hypotheses.tsv").exists()
    with pytest.raises(skipnet.ConfigError):
        skipnet.load_config(overrides=["model.bogus=1"])
