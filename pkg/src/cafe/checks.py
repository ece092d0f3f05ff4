"""Self-contained verification routines: the finite-difference gradient
suite over every layer and the linear-time vs brute-force factorization
equivalence. Both back the CLI's `gradcheck` and `fmcheck` commands."""

from __future__ import annotations

import numpy as np

from . import alignment as A
from . import tensor as T
from .config import ModelConfig
from .data import Vocab, batch_examples, generate_synthetic
from .layers import CharCnn, Dense, EncodedSequence, Highway, Lstm
from .model import PredictionHead, build_model, cross_entropy_loss, pool
from .tensor import ParamRegistry, Tensor, check_gradients


def _points(reg: ParamRegistry, extra=()):
    return [p.tensor for p in reg.trainable()] + list(extra)


def _weighted_sum(out: Tensor, rng) -> Tensor:
    r = T.constant(rng.standard_normal(out.shape))
    return T.reduce_sum(T.mul(out, r))


def layer_gradient_checks(seed: int = 0) -> dict:
    """Max relative finite-difference error per layer, in double precision."""
    rng = np.random.default_rng(seed)
    results = {}

    def reg64():
        return ParamRegistry(rng, dtype=np.float64)

    # highway (rectangular, so the carry projection is exercised too)
    reg = reg64()
    layer = Highway(reg, "hw", 5, 4)
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    results["highway"] = check_gradients(
        lambda *_: _weighted_sum(layer(x), np.random.default_rng(seed + 1)),
        _points(reg, [x]))

    # char cnn
    reg = reg64()
    cnn = CharCnn(reg, "cnn", vocab_size=9, emb_dim=4, window=2, filters=3)
    ids = rng.integers(2, 9, size=(5, 4))
    lengths = np.array([4, 3, 2, 4, 1])
    for row, n in enumerate(lengths):
        ids[row, n:] = 0
    results["char_cnn"] = check_gradients(
        lambda *_: _weighted_sum(cnn(ids, lengths), np.random.default_rng(seed + 2)),
        _points(reg))

    # lstm over a short padded sequence
    reg = reg64()
    lstm = Lstm(reg, "lstm", 4, 3)
    seq = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=float)
    results["lstm"] = check_gradients(
        lambda *_: _weighted_sum(lstm(seq, mask), np.random.default_rng(seed + 3)),
        _points(reg, [seq]))

    # attention (inter and intra, with padding in play)
    reg = reg64()
    proj_f = Dense(reg, "f", 4, 4, "relu")
    proj_g = Dense(reg, "g", 4, 4, "relu")
    pv = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    hv = Tensor(rng.standard_normal((2, 2, 4)), requires_grad=True)
    p_mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=float)
    h_mask = np.array([[1, 1], [1, 1]], dtype=float)

    def attention_loss(*_):
        prem = EncodedSequence(pv, p_mask, p_mask.sum(1).astype(int))
        hyp = EncodedSequence(hv, h_mask, h_mask.sum(1).astype(int))
        beta, alpha, _ = A.inter_align(prem, hyp, proj_f)
        intra = A.intra_align(prem, proj_g)
        sub_rng = np.random.default_rng(seed + 4)
        return T.add(T.add(_weighted_sum(beta, sub_rng), _weighted_sum(alpha, sub_rng)),
                     _weighted_sum(intra, sub_rng))

    results["attention"] = check_gradients(attention_loss, _points(reg, [pv, hv]))

    # all six factorization instances at their true arities
    d = 4
    for group in ("inter", "intra"):
        reg = reg64()
        scorers = {op: A.FactorizedScorer(reg, f"{group}.{op}",
                                          2 * d if op == "cat" else d, 3)
                   for op in A.COMPARISONS}
        a = Tensor(rng.standard_normal((2, 3, d)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 3, d)), requires_grad=True)

        def fm_loss(*_, scorers=scorers, a=a, b=b):
            feats = A.factorize_pairs(a, b, scorers)
            sub_rng = np.random.default_rng(seed + 5)
            out = None
            for op in A.COMPARISONS:
                term = _weighted_sum(feats[op], sub_rng)
                out = term if out is None else T.add(out, term)
            return out

        results[f"fm_{group}"] = check_gradients(fm_loss, _points(reg, [a, b]))

    # pooling
    hidden = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
    mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=float)
    for kind in ("avgmax", "sum", "avg", "max"):
        results[f"pool_{kind}"] = check_gradients(
            lambda h, kind=kind: _weighted_sum(pool(h, mask, kind),
                                               np.random.default_rng(seed + 6)),
            hidden)

    # prediction head
    reg = reg64()
    cfg = ModelConfig(d_model=4, lstm_hidden=3, head_width=4, num_classes=3,
                      fm_factors=3, use_char=False, use_pos=False, word_dim=4,
                      dropout_keep=1.0)
    head = PredictionHead(reg, cfg, in_dim=4 * cfg.pooled_dim())
    xp = Tensor(rng.standard_normal((2, cfg.pooled_dim())), requires_grad=True)
    xh = Tensor(rng.standard_normal((2, cfg.pooled_dim())), requires_grad=True)
    results["prediction_head"] = check_gradients(
        lambda *_: _weighted_sum(head(xp, xh, 1.0, None, False),
                                 np.random.default_rng(seed + 7)),
        _points(reg, [xp, xh]))

    return results


def micro_config(**overrides) -> ModelConfig:
    base = dict(d_model=8, lstm_hidden=8, fm_factors=3, head_width=8,
                word_dim=8, use_char=False, use_pos=False, dropout_keep=1.0,
                batch_size=8, seed=7)
    base.update(overrides)
    return ModelConfig(**base)


def end_to_end_gradient_check(seed: int = 0, max_len: int = 4) -> float:
    """Finite differences through the whole micro model against every
    trainable parameter, double precision."""
    examples = generate_synthetic(2, seed=seed + 11)
    # clip sentences so the unrolled graph stays small; premise from the
    # front, hypothesis from the back, so the pair stays asymmetric
    for ex in examples:
        ex.premise = ex.premise[:max_len]
        ex.hypothesis = ex.hypothesis[-max_len:]
    cfg = micro_config(seed=seed + 1)
    vocab = Vocab.build(examples, cfg.label_names())
    model = build_model(cfg, vocab, dtype=np.float64)
    batch = batch_examples(examples, vocab, min_chars=cfg.char_window)

    def loss_fn(*_):
        logits = model.forward_pair(batch, train=False)
        return cross_entropy_loss(logits, batch.labels, model.parameters(),
                                  l2_lambda=1e-4)

    # wider step than the per-layer default: the full network's roundoff
    # noise floor sits near 1e-9, which 1e-5 steps would amplify past 1e-4
    return check_gradients(loss_fn, [p.tensor for p in model.parameters()],
                           epsilon=1e-4)


def gradient_suite(seed: int = 0) -> dict:
    results = layer_gradient_checks(seed)
    results["end_to_end"] = end_to_end_gradient_check(seed)
    return results


# ---------------------------------------------------------------------------
# factorization equivalence
# ---------------------------------------------------------------------------

def fm_brute_force(w0: float, w: np.ndarray, v: np.ndarray, x: np.ndarray) -> float:
    """Direct quadratic-time evaluation of the factorization score."""
    n = x.shape[0]
    total = float(w0)
    for i in range(n):
        total += float(w[i]) * float(x[i])
    for i in range(n):
        for j in range(i + 1, n):
            total += float(np.dot(v[i], v[j])) * float(x[i]) * float(x[j])
    return total


def fm_equivalence(trials: int = 1000, seed: int = 0, max_n: int = 64,
                   max_f: int = 16) -> float:
    """Max |linear-time - brute-force| over random draws, double precision."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        f = int(rng.integers(1, max_f + 1))
        w0 = float(rng.standard_normal())
        w = rng.standard_normal(n)
        v = rng.standard_normal((n, f))
        x = rng.standard_normal(n)
        reg = ParamRegistry(rng, dtype=np.float64)
        scorer = A.FactorizedScorer(reg, "fm", n, f)
        scorer.bias.data[...] = w0
        scorer.linear.data[...] = w[:, None]
        scorer.factors.data[...] = v
        fast = A.fm_score(scorer, x)
        slow = fm_brute_force(w0, w, v, x)
        worst = max(worst, abs(fast - slow))
    return worst
