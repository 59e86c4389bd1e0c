"""Span representations built from attended sentence hiddens.

Each feature source yields a four-part block ``[node, head, start:end, sentence]``
of width 5d; a learned length embedding is appended once after the base block.

The single-span functions below take one span's hidden rows ``H_m`` (m x d)
and are the readable reference; :class:`SpanBlock` computes the same values
for every candidate of a batch at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn

from .encoder import SentenceHiddens, _uniform_target, masked_softmax
from .spans import SpanCandidate


def make_node_mlp(d: int, k: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(k * d, d), nn.Tanh(), nn.Linear(d, d))


def span_node(H_m: torch.Tensor, k: int, mlp: nn.Module) -> torch.Tensor:
    m, d = H_m.shape
    if not 1 <= m <= k:
        raise ValueError(f"span of length {m} exceeds max span length {k}")
    flat = torch.cat([H_m.reshape(-1), H_m.new_zeros((k - m) * d)])
    return mlp(flat)


def span_head(H_m: torch.Tensor, v_t: torch.Tensor):
    """Returns (V_h, P_h)."""
    p = torch.softmax(H_m @ v_t, dim=0)
    return p @ H_m, p


def start_end(H_m: torch.Tensor) -> torch.Tensor:
    return torch.cat([H_m[0], H_m[-1]])


def sentence_targeted_attention(H_m: torch.Tensor, H_s: torch.Tensor):
    """Returns (V_s, P_s): attention of the span's mean vector over the sentence."""
    query = H_m.mean(dim=0)
    p = torch.softmax(H_s @ query, dim=0)
    return p @ H_s, p


@dataclass
class SpanRepresentation:
    V_n: torch.Tensor
    V_h: torch.Tensor
    V_be: torch.Tensor
    V_s: torch.Tensor
    V_l: torch.Tensor

    @property
    def S_M(self) -> torch.Tensor:
        return torch.cat([self.V_n, self.V_h, self.V_be, self.V_s, self.V_l], dim=-1)


def build_representation(candidate: SpanCandidate, H_s: torch.Tensor, block: "SpanBlock",
                         length_emb: nn.Embedding) -> SpanRepresentation:
    """Reference construction for one candidate of one sentence (H_s: n x d)."""
    k = block.k
    if candidate.length > k:
        raise ValueError(f"candidate length {candidate.length} exceeds max span length {k}")
    H_m = H_s[candidate.start:candidate.end + 1]
    V_h, _ = span_head(H_m, block.target)
    V_s, _ = sentence_targeted_attention(H_m, H_s)
    V_l = length_emb(torch.tensor(candidate.length - 1))
    return SpanRepresentation(span_node(H_m, k, block.node_mlp), V_h, start_end(H_m), V_s, V_l)


@dataclass
class CandidateIndex:
    """Flat candidate list of a batch plus its per-sentence padded layout."""

    sent: torch.Tensor  # C
    start: torch.Tensor  # C
    end: torch.Tensor  # C
    slot: torch.Tensor  # C, position within its sentence's candidate list
    num_slots: int

    @property
    def length(self) -> torch.Tensor:
        return self.end - self.start + 1

    @classmethod
    def from_candidates(cls, candidates: Sequence[SpanCandidate]) -> "CandidateIndex":
        """``candidates[i].sentence_id`` must index the batch row."""
        sent = torch.tensor([c.sentence_id for c in candidates], dtype=torch.long)
        start = torch.tensor([c.start for c in candidates], dtype=torch.long)
        end = torch.tensor([c.end for c in candidates], dtype=torch.long)
        slot = torch.zeros(len(candidates), dtype=torch.long)
        counts: dict[int, int] = {}
        for i, c in enumerate(candidates):
            slot[i] = counts.get(c.sentence_id, 0)
            counts[c.sentence_id] = slot[i].item() + 1
        return cls(sent, start, end, slot, max(counts.values(), default=0))


class SpanBlock(nn.Module):
    """Node / head / boundary / sentence-attention features for one source."""

    def __init__(self, d: int, k: int):
        super().__init__()
        self.d = d
        self.k = k
        self.node_mlp = make_node_mlp(d, k)
        self.target = _uniform_target(d)

    @property
    def out_dim(self) -> int:
        return 5 * self.d

    def forward(self, hid: SentenceHiddens, idx: CandidateIndex) -> torch.Tensor:
        H_s = hid.H_s
        B, n, d = H_s.shape
        k = self.k
        if idx.length.numel() and int(idx.length.max()) > k:
            raise ValueError(f"candidate longer than max span length {k}")
        offs = torch.arange(k)
        tok = idx.start[:, None] + offs[None, :]  # C x k
        valid = offs[None, :] < idx.length[:, None]
        tok = torch.minimum(tok, (idx.end[:, None]).expand_as(tok))
        H_m = H_s[idx.sent[:, None], tok] * valid[..., None]  # C x k x d, zero padded

        V_n = self.node_mlp(H_m.reshape(len(tok), k * d))

        P_h = masked_softmax(H_m @ self.target, valid)
        V_h = (P_h[..., None] * H_m).sum(dim=1)

        V_be = torch.cat([H_s[idx.sent, idx.start], H_s[idx.sent, idx.end]], dim=-1)

        query = H_m.sum(dim=1) / idx.length[:, None].to(H_m.dtype)
        Q = H_s.new_zeros(B, max(idx.num_slots, 1), d).index_put((idx.sent, idx.slot), query)
        P_s = masked_softmax(torch.bmm(Q, H_s.transpose(1, 2)), hid.mask[:, None, :])  # B x S x n
        V_s = torch.bmm(P_s, H_s)[idx.sent, idx.slot]

        return torch.cat([V_n, V_h, V_be, V_s], dim=-1)

    def attention_weights(self, hid: SentenceHiddens, idx: CandidateIndex):
        """Per-candidate (P_h, P_s) lists, for inspection and tests."""
        out = []
        for c in range(len(idx.sent)):
            b, s, e = int(idx.sent[c]), int(idx.start[c]), int(idx.end[c])
            n = int(hid.mask[b].sum())
            H_s = hid.H_s[b, :n]
            _, p_h = span_head(H_s[s:e + 1], self.target)
            _, p_s = sentence_targeted_attention(H_s[s:e + 1], H_s)
            out.append((p_h, p_s))
        return out


class SpanRepresenter(nn.Module):
    """Concatenates the base block, the length embedding, then one block per extra source."""

    def __init__(self, base_dim: int, k: int, length_dim: int, extra_dims: Sequence[int] = ()):
        super().__init__()
        self.k = k
        self.base = SpanBlock(base_dim, k)
        self.length_emb = nn.Embedding(k, length_dim)
        self.extras = nn.ModuleList(SpanBlock(d, k) for d in extra_dims)
        self.out_dim = self.base.out_dim + length_dim + sum(b.out_dim for b in self.extras)

    def forward(self, hiddens: Sequence[SentenceHiddens], idx: CandidateIndex) -> torch.Tensor:
        parts = [self.base(hiddens[0], idx), self.length_emb(idx.length - 1)]
        for block, hid in zip(self.extras, hiddens[1:]):
            parts.append(block(hid, idx))
        return torch.cat(parts, dim=-1)
