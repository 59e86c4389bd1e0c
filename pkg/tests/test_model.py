import math
import random

import pytest
import torch

from nestterm.corpus import AnnotatedSentence
from nestterm.encoder import ConfigError
from nestterm.model import (Prediction, RankLossCounters, SpanTermModel, TermExtractor, TrainingError, classify,
                            loss_classifier, loss_ranker, parameter_digest, rank_topk, rerank, topk_size, train)
from nestterm.spans import SpanCandidate

from conftest import tiny_config


def _small_sets(fixture_splits, n_train=40, n_dev=10):
    tr, dv, _ = fixture_splits
    return tr[:n_train], dv[:n_dev]


# -- heads and losses ---------------------------------------------------------------


def test_zero_classifier_gives_half_and_negative(example_sentence):
    ext = TermExtractor.from_corpus(tiny_config(), [example_sentence])
    for p in ext.model.classifier.parameters():
        torch.nn.init.zeros_(p)
    reps, _, _ = ext.representations([example_sentence])
    probs = ext.model.classifier_probs(reps)
    assert torch.all(probs == 0.5)
    pos, neg = classify(probs, 0.5)
    assert len(pos) == 0 and len(neg) == len(probs)


def test_classify_threshold_is_strict():
    pos, neg = classify(torch.tensor([0.2, 0.5, 0.5001, 0.9]))
    assert pos.tolist() == [2, 3] and neg.tolist() == [0, 1]


def test_loss_classifier_values():
    assert loss_classifier(torch.tensor([0.5, 0.5]), torch.tensor([1, 0])).item() == pytest.approx(math.log(2))
    assert loss_classifier(torch.tensor([0.9]), torch.tensor([1])).item() == pytest.approx(0.1054, abs=1e-4)
    # clamped, never infinite
    assert math.isfinite(loss_classifier(torch.tensor([0.0, 1.0]), torch.tensor([1, 0])).item())


def test_loss_ranker_values():
    assert loss_ranker(torch.zeros(4), torch.tensor([1, 1, 0, 0])).item() == pytest.approx(1.0)
    expected = (1 - 1 / (1 + math.exp(-2))) + 1 / (1 + math.exp(2))
    got = loss_ranker(torch.tensor([2.0, -2.0]), torch.tensor([1, 0])).item()
    assert got == pytest.approx(expected) and got == pytest.approx(0.2384, abs=1e-4)


def test_loss_ranker_empty_group_counts():
    c = RankLossCounters()
    only_gold = loss_ranker(torch.tensor([0.0]), torch.tensor([1]), c)
    only_non = loss_ranker(torch.tensor([0.0]), torch.tensor([0]), c)
    assert only_gold.item() == pytest.approx(0.5) and only_non.item() == pytest.approx(0.5)
    assert (c.batches, c.empty_gold, c.empty_nongold) == (2, 1, 1)


# -- top-K --------------------------------------------------------------------------


@pytest.mark.parametrize("words,alpha,K", [(100, 0.23, 23), (490766, 0.23, 112876), (10, 0.29, 2),
                                           (100, 0.29, 29), (3, 0.3, 0)])
def test_topk_size(words, alpha, K):
    assert topk_size(words, alpha) == K


def test_topk_size_rejects_nonpositive():
    for a in (0, -0.1):
        with pytest.raises(ConfigError):
            topk_size(100, a)


def test_rank_topk_ties_by_position():
    scored = [((1, 0, 0), 0.9), ((0, 2, 3), 0.9), ((0, 0, 1), 0.9), ((0, 0, 0), 0.3)]
    assert rank_topk(scored, 10, 0.3) == [2, 1, 0]


def test_rerank_selects_top_k_positives_only():
    preds = [Prediction(SpanCandidate(0, i, i), 0.9, s) for i, s in enumerate([0.1, 0.8, None, 0.5])]
    out = rerank(preds, total_words=10, alpha=0.2)
    assert [p.selected for p in out] == [False, True, False, True]


# -- model behaviour ------------------------------------------------------------------


def test_duplicate_sentences_score_identically(fixture_corpus):
    ext = TermExtractor.from_corpus(tiny_config(), fixture_corpus[:5])
    s = fixture_corpus[0]
    preds = ext.predict([s, fixture_corpus[1], s], alpha=0.5)
    first = [p.classifier_prob for p in preds if p.candidate.sentence_id == 0]
    third = [p.classifier_prob for p in preds if p.candidate.sentence_id == 2]
    assert first == pytest.approx(third, abs=1e-6)


def test_predict_skips_overlong_and_empty_sentences(fixture_corpus):
    ext = TermExtractor.from_corpus(tiny_config(max_sentence_length=30), fixture_corpus[:5])
    long_s = AnnotatedSentence(["gene"] * 31)
    with pytest.warns(UserWarning, match="exceeds cap"):
        preds = ext.predict([fixture_corpus[0], long_s], alpha=0.3)
    assert {p.candidate.sentence_id for p in preds} == {0}
    with pytest.warns(UserWarning, match="empty"):
        ext.predict([AnnotatedSentence([]), fixture_corpus[0]], alpha=0.3)


def test_selected_count_equals_k(trained_small, fixture_splits):
    ext = trained_small.extractor
    test = fixture_splits[2]
    words = sum(len(s) for s in test)
    preds = ext.predict(test, alpha=0.1)
    positives = sum(p.rank_score is not None for p in preds)
    assert sum(p.selected for p in preds) == min(topk_size(words, 0.1), positives)
    assert all(p.rank_score is not None for p in preds if p.selected)


def test_checkpoint_round_trip(trained_small, fixture_splits, tmp_path):
    ext = trained_small.extractor
    ext.save(tmp_path / "m.pt")
    back = TermExtractor.load(tmp_path / "m.pt")
    assert back.cfg == ext.cfg
    assert parameter_digest([back.model]) == parameter_digest([ext.model])
    a = ext.predict(fixture_splits[2], 0.2)
    b = back.predict(fixture_splits[2], 0.2)
    assert [p.to_json() for p in a] == [p.to_json() for p in b]


def test_load_rejects_foreign_file(tmp_path):
    torch.save({"format": "other"}, tmp_path / "x.pt")
    with pytest.raises(ValueError, match="not a nestterm checkpoint"):
        TermExtractor.load(tmp_path / "x.pt")


# -- training -------------------------------------------------------------------------


def test_training_is_deterministic(fixture_splits):
    tr, dv = _small_sets(fixture_splits)
    cfg = tiny_config(max_epochs=15, stage2_max_epochs=2, batch_size=5, word_lstm_hidden=8)
    a = train(tr, dv, cfg).history
    b = train(tr, dv, cfg).history
    assert a["stage1"] == b["stage1"] and a["stage2"] == b["stage2"]
    assert a["stage1_digest"] == b["stage1_digest"]


def test_stage2_leaves_stage1_untouched(trained_small):
    h = trained_small.history
    assert h["stage1_digest"] == h["stage1_digest_after"]
    assert len(h["stage2"]) >= 1


def test_stage2_moves_scorer(fixture_splits):
    tr, dv = _small_sets(fixture_splits)
    cfg = tiny_config(max_epochs=15, stage2_max_epochs=3, batch_size=5, word_lstm_hidden=8)
    ext = TermExtractor.from_corpus(cfg, tr)
    before = parameter_digest([ext.model.scorer])
    res = train(tr, dv, cfg, extractor=ext)
    assert parameter_digest([res.extractor.model.scorer]) != before
    assert res.history["stage1_digest"] == res.history["stage1_digest_after"]


def test_stage1_loss_decreases_then_empty_dev_positives_abort(fixture_splits):
    tr, dv = _small_sets(fixture_splits)
    losses = []
    with pytest.raises(TrainingError, match="longer"):
        # too short for any dev positive: stage 2 cannot start
        train(tr, dv, tiny_config(max_epochs=5, stage2_max_epochs=1, batch_size=5, word_lstm_hidden=8),
              on_epoch=lambda stage, rec: losses.append(rec["train_loss"]))
    assert len(losses) == 5 and losses[-1] < losses[0]


def test_callback_can_end_stage(fixture_splits):
    tr, dv = _small_sets(fixture_splits)
    seen = []
    cfg = tiny_config(max_epochs=15, stage2_max_epochs=1, batch_size=5, word_lstm_hidden=8)

    def cb(stage, rec):
        seen.append(stage)
        return stage == "stage1" and rec["epoch"] == 2

    try:
        train(tr, dv, cfg, on_epoch=cb)
    except TrainingError:
        pass  # two epochs may leave no dev positives for stage 2
    assert seen[:2] == ["stage1", "stage1"] and seen.count("stage1") == 2


def test_training_rejects_empty_sets(fixture_corpus):
    with pytest.raises(TrainingError):
        train(fixture_corpus[:5], [], tiny_config())


def test_model_dims_follow_config():
    cfg = tiny_config(features=["base", "pos"], pos_mode="source", pos_lstm_hidden=3)
    m = SpanTermModel(cfg, 10, 10, 5)
    d = cfg.hidden_dim
    assert m.representer.out_dim == 5 * d + cfg.span_length_dim + 5 * 6
    assert m.classifier[0].in_features == m.representer.out_dim


def test_shuffled_order_same_vocab(fixture_corpus):
    rnd = random.Random(1)
    shuffled = list(fixture_corpus[:30])
    rnd.shuffle(shuffled)
    a = TermExtractor.from_corpus(tiny_config(), fixture_corpus[:30])
    b = TermExtractor.from_corpus(tiny_config(), shuffled)
    assert a.words.itos == b.words.itos and a.chars.itos == b.chars.itos
