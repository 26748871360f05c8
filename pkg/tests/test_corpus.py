"""Corpus IO, splitting, synthesis, and encoding tests.

The planted-signal checks use an independent frequency-based token-presence
classifier as the oracle for whether attribute information is textually
recoverable.
"""

import json
import math

import numpy as np
import pytest

from npd.corpus import (
    EMOTIONS,
    GENDERS,
    Post,
    SynthConfig,
    encode,
    load,
    load_with_meta,
    save,
    split,
    synthesize,
)
from npd.errors import ConfigError, DataError
from npd.text import build_vocab, tokenize


def freq_classifier_accuracy(posts, label_fn, n_classes):
    """Naive-Bayes-style token-presence classifier, fit on the first 70%.

    Independent oracle for 'is this label recoverable from the text'.
    """
    cut = int(0.7 * len(posts))
    train, test = posts[:cut], posts[cut:]
    counts = [dict() for _ in range(n_classes)]
    totals = [0] * n_classes
    for p in train:
        y = label_fn(p)
        for tok in p.text.split():
            counts[y][tok] = counts[y].get(tok, 0) + 1
            totals[y] += 1
    correct = 0
    for p in test:
        scores = []
        for c in range(n_classes):
            s = 0.0
            denom = totals[c] + 1.0
            for tok in p.text.split():
                s += math.log((counts[c].get(tok, 0) + 1.0) / denom)
            scores.append(s)
        if scores.index(max(scores)) == label_fn(p):
            correct += 1
    return correct / len(test)


class TestLoadSave:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("")
        assert load(path) == []

    def test_single_record(self, tmp_path):
        path = tmp_path / "c.jsonl"
        rec = {"text": "w1 w2", "emotions": ["happiness"], "gender": "female", "location": 2}
        path.write_text(json.dumps(rec) + "\n")
        posts, m = load_with_meta(path)
        assert len(posts) == 1
        assert posts[0].emotions == {"happiness"}
        assert m == 3

    def test_unknown_emotion_named_with_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        good = {"text": "a", "emotions": [], "gender": "male", "location": 0}
        bad = {"text": "b", "emotions": ["joy"], "gender": "male", "location": 0}
        path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
        with pytest.raises(DataError, match=r"2.*'joy'"):
            load(path)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"text": "a", "emotions": [], "gender": "male", "location": 0}\n{oops\n')
        with pytest.raises(DataError, match=r":2:"):
            load(path)

    def test_header_declares_m(self, tmp_path):
        path = tmp_path / "c.jsonl"
        rec = {"text": "a", "emotions": [], "gender": "male", "location": 1}
        path.write_text(json.dumps({"m": 7}) + "\n" + json.dumps(rec) + "\n")
        _, m = load_with_meta(path)
        assert m == 7

    def test_roundtrip_exact(self, tmp_path):
        cfg = SynthConfig(n_posts=50, seed=4)
        posts = synthesize(cfg)
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        save(p1, posts, m=cfg.m_locations)
        reloaded, m = load_with_meta(p1)
        assert m == cfg.m_locations
        save(p2, reloaded, m=m)
        assert p1.read_bytes() == p2.read_bytes()
        assert [(p.text, sorted(p.emotions), p.gender, p.location) for p in posts] == \
               [(p.text, sorted(p.emotions), p.gender, p.location) for p in reloaded]


class TestSplit:
    def make_posts(self, n):
        return [Post(text=f"t{i}", emotions=set(), gender="female", location=0) for i in range(n)]

    def test_fractions_100(self):
        train, dev, test = split(self.make_posts(100), seed=1)
        assert (len(train), len(dev), len(test)) == (63, 7, 30)

    def test_deterministic(self):
        posts = self.make_posts(40)
        a = split(posts, seed=9)
        b = split(posts, seed=9)
        assert [[p.text for p in part] for part in a] == [[p.text for p in part] for part in b]

    def test_partition_is_exact(self):
        posts = self.make_posts(53)
        train, dev, test = split(posts, seed=2)
        combined = sorted(p.text for p in train + dev + test)
        assert combined == sorted(p.text for p in posts)

    def test_too_few_posts(self):
        with pytest.raises(ConfigError):
            split(self.make_posts(9), seed=0)


class TestSynthesize:
    def test_deterministic(self):
        a = synthesize(SynthConfig(n_posts=100, seed=13))
        b = synthesize(SynthConfig(n_posts=100, seed=13))
        assert [p.text for p in a] == [p.text for p in b]
        assert [sorted(p.emotions) for p in a] == [sorted(p.emotions) for p in b]

    def test_prevalence_marginals(self):
        cfg = SynthConfig(n_posts=6000, seed=21)
        posts = synthesize(cfg)
        for j, emo in enumerate(EMOTIONS):
            measured = sum(emo in p.emotions for p in posts) / len(posts)
            assert abs(measured - cfg.prevalence[j]) <= 0.02, (emo, measured)

    def test_happiness_target_matches_reference_share(self):
        cfg = SynthConfig()
        assert abs(cfg.prevalence[0] - 0.261) < 0.001

    def test_null_corpus_attributes_unrecoverable(self):
        posts = synthesize(SynthConfig.null_signal(n_posts=5000, seed=8))
        acc_g = freq_classifier_accuracy(posts, lambda p: GENDERS.index(p.gender), 2)
        acc_l = freq_classifier_accuracy(posts, lambda p: p.location, 5)
        assert abs(acc_g - 0.5) <= 0.05
        assert abs(acc_l - 0.2) <= 0.05

    def test_saturated_markers_fully_recoverable(self):
        cfg = SynthConfig(n_posts=1500, gender_marker_prob=1.0, location_marker_prob=0.0,
                          emotion_marker_prob=0.0, seed=9)
        posts = synthesize(cfg)
        acc = freq_classifier_accuracy(posts, lambda p: GENDERS.index(p.gender), 2)
        assert acc == 1.0

    def test_signal_monotone_in_marker_prob(self):
        accs = []
        for prob in (0.0, 0.5, 1.0):
            cfg = SynthConfig(n_posts=2500, gender_marker_prob=prob,
                              location_marker_prob=0.0, emotion_marker_prob=0.0,
                              gender_tilt=0.0, location_tilt=0.0,
                              attribute_conditioned_markers=False, seed=10)
            posts = synthesize(cfg)
            accs.append(freq_classifier_accuracy(posts, lambda p: GENDERS.index(p.gender), 2))
        assert accs[0] <= accs[1] + 0.02 and accs[1] <= accs[2] + 0.02
        assert accs[2] > accs[0]

    def test_unsatisfiable_targets_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(prevalence=(0.9, 0.2, 0.1, 0.1, 0.1)).validate()
        with pytest.raises(ConfigError):
            SynthConfig(gender_tilt=3.0).validate()

    def test_config_json_roundtrip(self, tmp_path):
        cfg = SynthConfig(n_posts=123, gender_tilt=0.25, seed=99)
        path = tmp_path / "synth.json"
        cfg.to_json(path)
        assert SynthConfig.from_json(path) == cfg


class TestEncode:
    def make_vocab(self):
        return build_vocab([["w1", "w2", "w3"]], max_size=10)

    def test_emotion_bits_order(self):
        post = Post(text="w1 w2", emotions={"happiness", "fear"}, gender="female", location=0)
        [tp] = encode([post], self.make_vocab())
        np.testing.assert_array_equal(tp.emotion_bits, [1, 0, 0, 0, 1])

    def test_none_post_all_zero(self):
        post = Post(text="w1", emotions=set(), gender="male", location=1)
        [tp] = encode([post], self.make_vocab())
        np.testing.assert_array_equal(tp.emotion_bits, [0, 0, 0, 0, 0])
        assert tp.gender_bit == 1
        assert tp.location == 1

    def test_all_oov_retained(self):
        vocab = self.make_vocab()
        post = Post(text="zz yy", emotions=set(), gender="female", location=0)
        [tp] = encode([post], vocab)
        assert tp.ids == [vocab.oov_id, vocab.oov_id]

    def test_empty_after_tokenize_rejected(self):
        post = Post(text="   ", emotions=set(), gender="female", location=0)
        with pytest.raises(DataError, match="0"):
            encode([post], self.make_vocab())

    def test_tokenize_char_mode_on_cjk(self):
        assert tokenize("你好 吗", "char") == ["你", "好", "吗"]
