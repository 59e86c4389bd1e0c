"""Central finite-difference checks on a tiny float64 pipeline."""

import torch

from nestterm.corpus import AnnotatedSentence
from nestterm.model import TermExtractor, loss_classifier, loss_ranker

from conftest import tiny_config


def tiny_pipeline(seed, n=5, k=3):
    """d = 4 (2 per direction), one sentence of ``n`` tokens, spans up to ``k``."""
    g = torch.Generator().manual_seed(seed)
    words = ["IL-2", "gene", "of", "T", "cells", "alpha", "b"]
    toks = [words[int(i)] for i in torch.randint(len(words), (n,), generator=g)]
    sent = AnnotatedSentence(toks, {(0, 1), (2, 2), (1, 3)} if n >= 4 else {(0, 0)})
    cfg = tiny_config(word_embedding_dim=3, char_embedding_dim=2, char_cnn_filters=2, word_lstm_hidden=2,
                      word_lstm_layers=1, span_length_dim=2, max_span_length=k, seed=seed)
    torch.manual_seed(seed)
    ext = TermExtractor.from_corpus(cfg, [sent])
    ext.model.double().eval()
    for p in ext.model.parameters():
        # move away from the default init so every point is different
        with torch.no_grad():
            p.add_(0.3 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return ext, sent


def pipeline_loss(ext, sent, prepared=None):
    batch, idx, labels, _ = prepared or ext.prepare([sent])
    m = ext.model
    reps = m.represent(batch, idx)
    return loss_classifier(m.classifier_probs(reps), labels) + loss_ranker(m.scorer_raw(reps), labels)


def flat_params(model):
    return [p for p in model.parameters()]


def relative_error(a, b):
    return (a - b).norm().item() / max(a.norm().item(), b.norm().item(), 1e-12)


def check_point(seed, eps=1e-6, n_coords=None, n_dirs=0):
    """Relative error between the analytic gradient and central differences.

    ``n_coords=None`` differentiates every coordinate; otherwise a random subset
    of that size is used. ``n_dirs`` adds directional derivatives along random
    unit vectors in the full parameter space.
    """
    ext, sent = tiny_pipeline(seed)
    params = flat_params(ext.model)
    prepared = ext.prepare([sent])
    loss = pipeline_loss(ext, sent, prepared)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1)
                          for g, p in zip(grads, params)])
    theta = torch.nn.utils.parameters_to_vector(params).detach()
    gen = torch.Generator().manual_seed(10_000 + seed)

    def f(vec):
        torch.nn.utils.vector_to_parameters(vec, params)
        return pipeline_loss(ext, sent, prepared).item()

    with torch.no_grad():
        coords = range(theta.numel()) if n_coords is None else \
            torch.randperm(theta.numel(), generator=gen)[:n_coords].tolist()
        a_parts, n_parts = [], []
        for j in coords:
            e = torch.zeros_like(theta)
            e[j] = eps
            n_parts.append((f(theta + e) - f(theta - e)) / (2 * eps))
            a_parts.append(analytic[j].item())
        for _ in range(n_dirs):
            u = torch.randn(theta.shape, generator=gen, dtype=theta.dtype)
            u /= u.norm()
            n_parts.append((f(theta + eps * u) - f(theta - eps * u)) / (2 * eps))
            a_parts.append(torch.dot(analytic, u).item())
        torch.nn.utils.vector_to_parameters(theta, params)
    a, n = torch.tensor(a_parts), torch.tensor(n_parts)
    return relative_error(a, n), len(a_parts)
