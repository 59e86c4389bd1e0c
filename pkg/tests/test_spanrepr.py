import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from nestterm.encoder import SentenceHiddens, terminology_attention
from nestterm.spanrepr import (CandidateIndex, SpanBlock, SpanRepresenter, build_representation, make_node_mlp,
                               sentence_targeted_attention, span_head, span_node, start_end)
from nestterm.spans import enumerate_spans

from gradutil import check_point
from oracles import softmax


def test_head_attention_hand_computed():
    H_m = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    V_h, P_h = span_head(H_m, torch.tensor([10.0, 0.0]))
    e = math.exp(-10)
    assert P_h.tolist() == pytest.approx([1 / (1 + e), e / (1 + e)], abs=1e-7)
    assert P_h[0].item() == pytest.approx(0.99995, abs=1e-5)
    assert V_h.tolist() == pytest.approx(P_h.tolist())


def test_sentence_attention_hand_computed():
    H_s = torch.tensor([[2.0, 0.0], [0.0, 2.0]])
    V_s, P_s = sentence_targeted_attention(torch.tensor([[1.0, 0.0]]), H_s)
    w = 1 / (1 + math.exp(-2))  # softmax([2, 0])[0]
    assert P_s.tolist() == pytest.approx([w, 1 - w], abs=1e-7)
    assert V_s.tolist() == pytest.approx([1.762, 0.238], abs=1e-3)


def test_length_one_span():
    H_m = torch.tensor([[0.3, -1.2, 2.0]])
    V_h, P_h = span_head(H_m, torch.randn(3))
    assert P_h.tolist() == [1.0]
    assert torch.equal(V_h, H_m[0])
    assert torch.equal(start_end(H_m), torch.cat([H_m[0], H_m[0]]))


def test_start_end_ignores_interior():
    H_m = torch.tensor([[1.0, 2.0], [5.0, 6.0], [7.0, 8.0], [1.0, 2.0]])
    assert start_end(H_m).tolist() == [1, 2, 1, 2]
    flipped = torch.cat([H_m[:1], H_m[1:3].flip(0), H_m[3:]])
    assert torch.equal(start_end(flipped), start_end(H_m))


def test_zero_node_mlp_gives_zero():
    mlp = make_node_mlp(4, 3)
    for p in mlp.parameters():
        torch.nn.init.zeros_(p)
    assert torch.equal(span_node(torch.randn(2, 4), 3, mlp), torch.zeros(4))
    with pytest.raises(ValueError):
        span_node(torch.randn(4, 4), 3, mlp)


def test_node_mlp_input_is_zero_padded():
    # with an identity-like first layer the padding shows up as zero inputs
    d, k = 2, 3
    mlp = torch.nn.Sequential(torch.nn.Linear(k * d, k * d, bias=False))
    torch.nn.init.eye_(mlp[0].weight)
    out = span_node(torch.tensor([[1.0, 2.0], [3.0, 4.0]]), k, mlp)
    assert out.tolist() == [1, 2, 3, 4, 0, 0]


def test_representation_width():
    assert SpanRepresenter(300, 5, 30).out_dim == 1530
    assert SpanRepresenter(300, 5, 30, [30]).out_dim == 1530 + 150
    assert SpanRepresenter(300, 5, 30, [30, 8]).out_dim == 1530 + 150 + 40


def _hiddens(lengths, d, seed=0):
    g = torch.Generator().manual_seed(seed)
    B, n = len(lengths), max(lengths)
    mask = torch.arange(n)[None, :] < torch.tensor(lengths)[:, None]
    H = torch.randn(B, n, d, generator=g, dtype=torch.float64) * mask[..., None]
    target = torch.randn(d, generator=g, dtype=torch.float64)
    p, H_s = terminology_attention(H, target, mask)
    return SentenceHiddens(H, H_s, p, mask)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 7), min_size=1, max_size=4), st.integers(1, 4), st.integers(1, 5),
       st.integers(0, 10_000))
def test_batched_block_matches_reference(lengths, k, d, seed):
    torch.manual_seed(seed)
    rep = SpanRepresenter(d, k, 3).double()
    hid = _hiddens(lengths, d, seed)
    cands = [c for b, n in enumerate(lengths) for c in enumerate_spans(n, k, b)]
    out = rep([hid], CandidateIndex.from_candidates(cands))
    assert out.shape == (len(cands), 5 * d + 3)
    for row, c in zip(out, cands):
        H_s = hid.H_s[c.sentence_id, :lengths[c.sentence_id]]
        ref = build_representation(c, H_s, rep.base, rep.length_emb)
        # layout: base block then length embedding
        assert torch.allclose(row, torch.cat([ref.V_n, ref.V_h, ref.V_be, ref.V_s, ref.V_l]), atol=1e-10)


def test_attention_weights_are_distributions_and_hull():
    torch.manual_seed(3)
    block = SpanBlock(4, 3).double()
    hid = _hiddens([6, 3], 4, seed=3)
    cands = [c for b, n in enumerate([6, 3]) for c in enumerate_spans(n, 3, b)]
    idx = CandidateIndex.from_candidates(cands)
    out = block(hid, idx)
    for c, row, (p_h, p_s) in zip(cands, out, block.attention_weights(hid, idx)):
        H_s = hid.H_s[c.sentence_id]
        n = int(hid.mask[c.sentence_id].sum())
        H_m = H_s[c.start:c.end + 1]
        assert p_h.sum().item() == pytest.approx(1, abs=1e-12) and (p_h >= 0).all()
        assert p_s.sum().item() == pytest.approx(1, abs=1e-12) and (p_s >= 0).all()
        assert torch.allclose(p_h, torch.tensor(softmax((H_m @ block.target).tolist()), dtype=p_h.dtype))
        V_h, V_s = row[4:8], row[16:20]
        # convex combinations stay within the coordinate-wise hull of their rows
        assert (V_h >= H_m.min(0).values - 1e-12).all() and (V_h <= H_m.max(0).values + 1e-12).all()
        live = H_s[:n]
        assert (V_s >= live.min(0).values - 1e-12).all() and (V_s <= live.max(0).values + 1e-12).all()


def test_length_embedding_depends_on_length_only():
    torch.manual_seed(0)
    rep = SpanRepresenter(2, 4, 5)
    hid = _hiddens([6], 2)
    cands = enumerate_spans(6, 4)
    out = rep([hid.__class__(hid.H.float(), hid.H_s.float(), hid.attention_weights.float(), hid.mask)],
              CandidateIndex.from_candidates(cands))
    by_len = {}
    for c, row in zip(cands, out):
        by_len.setdefault(c.length, []).append(row[10:15])
    for rows in by_len.values():
        assert all(torch.equal(r, rows[0]) for r in rows)


def test_too_long_candidate_rejected():
    rep = SpanRepresenter(2, 2, 3)
    hid = _hiddens([5], 2)
    idx = CandidateIndex.from_candidates(enumerate_spans(5, 3))
    with pytest.raises(ValueError):
        rep.base(hid, idx)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_pipeline_gradient_every_coordinate(seed):
    rel, n = check_point(seed)
    assert n > 400
    assert rel <= 1e-4


def _hull_weights(points, v):
    """Affine weights w with points.T @ w == v and sum(w) == 1 (unique for affinely independent rows)."""
    A = torch.cat([points.T, torch.ones(1, len(points), dtype=points.dtype)])
    b = torch.cat([v, torch.ones(1, dtype=v.dtype)])
    w = torch.linalg.lstsq(A, b[:, None]).solution[:, 0]
    return w, (A @ w - b).norm().item()


def test_convex_hull_membership_by_least_squares():
    # d = 4 and at most 5 rows, so the affine weights are unique and must be non-negative
    torch.manual_seed(5)
    block = SpanBlock(4, 3).double()
    for seed in range(20):
        hid = _hiddens([5], 4, seed=seed)
        cands = enumerate_spans(5, 3)
        out = block(hid, CandidateIndex.from_candidates(cands))
        H_s = hid.H_s[0]
        for c, row in zip(cands, out):
            for points, v in ((H_s[c.start:c.end + 1], row[4:8]), (H_s, row[16:20])):
                w, resid = _hull_weights(points, v)
                assert resid < 1e-9 and (w >= -1e-9).all()
