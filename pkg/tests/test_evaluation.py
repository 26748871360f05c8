"""F1 scoring, evaluation, and ablation-harness tests.

Every F1 the evaluator reports is re-derived by a brute-force recount over
raw prediction/gold pairs.
"""

import numpy as np
import pytest

from npd import autodiff as ad
from npd.corpus import EMOTIONS
from npd.errors import ContractError
from npd.evaluation import (
    ConfusionCounts,
    EvalReport,
    ablate,
    evaluate,
    f1_score,
    format_report_table,
    seed_mean_average_f1,
)
from npd.model import ForwardResult, ModelVariant
from npd.training import ModelDims, TrainingConfig

from test_model import make_post, small_model
from test_training import tiny_dataset, tiny_embedding


def brute_force_f1(predicted, gold):
    """Recount oracle: per-emotion F1 from scratch, looping over posts."""
    out = []
    for j in range(5):
        tp = fp = fn = 0
        for p, g in zip(predicted, gold):
            if p[j] == 1 and g[j] == 1:
                tp += 1
            elif p[j] == 1 and g[j] == 0:
                fp += 1
            elif p[j] == 0 and g[j] == 1:
                fn += 1
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        out.append(2 * precision * recall / (precision + recall)
                   if precision + recall else 0.0)
    return out


class StubModel:
    """Duck-typed model returning canned per-post present-probabilities."""

    def __init__(self, probs_by_post):
        self.probs = np.asarray(probs_by_post, dtype=np.float64)  # [n x 5]
        self.variant = ModelVariant.LSTM
        self.manifest = {"seed": 0}
        self._cursor = 0

    def forward(self, batch, train_mode=False):
        take = self.probs[self._cursor : self._cursor + len(batch)]
        self._cursor += len(batch)
        nodes = [ad.constant(np.stack([1.0 - take[:, j], take[:, j]], axis=1))
                 for j in range(5)]
        return ForwardResult(emotion_probs=nodes, gender_prob=None,
                             location_probs=None)


class TestF1:
    def test_perfect(self):
        counts = ConfusionCounts.zeros()
        counts.tp[0] = 10
        assert f1_score(counts, 0) == 1.0

    def test_zero_tp_is_zero(self):
        counts = ConfusionCounts.zeros()
        counts.fp[1] = 4
        counts.fn[1] = 7
        assert f1_score(counts, 1) == 0.0

    def test_hand_case(self):
        counts = ConfusionCounts.zeros()
        counts.tp[2], counts.fp[2], counts.fn[2] = 3, 1, 2
        np.testing.assert_allclose(f1_score(counts, 2), 2 * 0.45 / 1.35, atol=1e-15)
        # cross-check against the brute-force recount on an equivalent set
        predicted = [[0, 0, 1, 0, 0]] * 4 + [[0, 0, 0, 0, 0]] * 2
        gold = [[0, 0, 1, 0, 0]] * 3 + [[0, 0, 0, 0, 0]] + [[0, 0, 1, 0, 0]] * 2
        np.testing.assert_allclose(brute_force_f1(predicted, gold)[2],
                                   f1_score(counts, 2), atol=1e-15)


class TestEvaluate:
    def test_always_absent_model_scores_zero(self):
        rng = np.random.default_rng(1)
        n = 20
        stub = StubModel(np.full((n, 5), 0.1))
        posts = tiny_dataset(rng, n)
        for j in range(5):  # ensure at least one positive per emotion
            posts[j].emotion_bits[...] = 0
            posts[j].emotion_bits[j] = 1
        report = evaluate(stub, posts)
        assert report.f1 == [0.0] * 5
        assert report.average_f1 == 0.0

    def test_gold_predicting_model_scores_one(self):
        rng = np.random.default_rng(2)
        posts = tiny_dataset(rng, 15)
        for j in range(5):
            posts[j].emotion_bits[...] = 0
            posts[j].emotion_bits[j] = 1
        probs = np.stack([p.emotion_bits for p in posts]).astype(float)
        probs = probs * 0.8 + 0.1  # 0.9 where present, 0.1 where absent
        report = evaluate(StubModel(probs), posts)
        assert report.f1 == [1.0] * 5
        assert report.average_f1 == 1.0

    def test_counts_match_brute_force_recount(self):
        rng = np.random.default_rng(3)
        n = 60
        posts = tiny_dataset(rng, n)
        probs = rng.random((n, 5))
        report = evaluate(StubModel(probs), posts, batch_size=17)
        predicted = (probs > 0.5).astype(int)
        gold = np.stack([p.emotion_bits for p in posts])
        expected = brute_force_f1(predicted.tolist(), gold.tolist())
        np.testing.assert_allclose(report.f1, expected, atol=1e-12)
        for j in range(5):
            assert (report.counts.tp[j] + report.counts.fp[j] +
                    report.counts.fn[j] + report.counts.tn[j]) == n

    def test_side_effect_free_and_repeatable(self):
        rng = np.random.default_rng(4)
        model = small_model("NPD", seed=6)
        posts = tiny_dataset(rng, 25)
        state_before = model.state()
        r1 = evaluate(model, posts)
        r2 = evaluate(model, posts)
        assert r1.f1 == r2.f1
        assert r1.average_f1 == r2.average_f1
        for name, arr in model.state().items():
            np.testing.assert_array_equal(arr, state_before[name])
            np.testing.assert_array_equal(model.params[name].grad, 0.0)

    def test_empty_set_rejected(self):
        with pytest.raises(ContractError):
            evaluate(small_model("LSTM"), [])

    def test_reference_average_reconstruction(self):
        published = (0.657, 0.510, 0.459, 0.135, 0.127)
        assert abs(float(np.mean(published)) - 0.378) <= 0.001


class TestAblate:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.splits = (tiny_dataset(rng, 24), tiny_dataset(rng, 6), tiny_dataset(rng, 10))
        self.embedding = tiny_embedding(rng)
        self.cfg = TrainingConfig(max_epochs=2, batch_size=8, mu=0.05)
        self.dims = ModelDims(hidden_dim=4)

    def test_single_pair_equals_direct_run(self):
        from npd.training import train

        reports = ablate(self.splits, ["LSTM"], [7], self.cfg, self.embedding, 5,
                         dims=self.dims)
        assert len(reports) == 1
        cfg = TrainingConfig(**{**{k: getattr(self.cfg, k)
                                   for k in self.cfg.__dataclass_fields__}, "seed": 7})
        direct = evaluate(train(self.splits[0], self.splits[1], "LSTM", cfg,
                                self.embedding, 5, dims=self.dims).model,
                          self.splits[2])
        assert reports[0].f1 == direct.f1
        assert reports[0].average_f1 == direct.average_f1

    def test_identical_seeds_identical_rows(self):
        reports = ablate(self.splits, ["LSTM"], [3, 3], self.cfg,
                         self.embedding, 5, dims=self.dims)
        assert reports[0].f1 == reports[1].f1

    def test_failed_run_recorded_and_grid_continues(self):
        reports = ablate(self.splits, ["NOT_A_VARIANT", "LSTM"], [1], self.cfg,
                         self.embedding, 5, dims=self.dims)
        assert reports[0].error is not None
        assert np.isnan(reports[0].average_f1)
        assert reports[1].error is None

    def test_seed_mean_skips_failures(self):
        reports = [
            EvalReport("LSTM", 1, [0.2] * 5, 0.2),
            EvalReport("LSTM", 2, [0.4] * 5, 0.4),
            EvalReport.failed("LSTM", 3, "boom"),
        ]
        means = seed_mean_average_f1(reports)
        np.testing.assert_allclose(means["LSTM"], 0.3)

    def test_table_format(self):
        reports = [EvalReport("NPD", 1, [0.1, 0.2, 0.3, 0.4, 0.5], 0.3)]
        table = format_report_table(reports)
        lines = table.strip().split("\n")
        assert lines[0].split("\t") == ["Variant", "Seed", "Happiness", "Sadness",
                                        "Anger", "Surprise", "Fear", "Average"]
        cells = lines[1].split("\t")
        assert cells[0] == "NPD" and cells[1] == "1"
        assert cells[2] == "0.100000" and cells[-1] == "0.300000"

    def test_requires_variants_and_seeds(self):
        with pytest.raises(ContractError):
            ablate(self.splits, [], [1], self.cfg, self.embedding, 5)
