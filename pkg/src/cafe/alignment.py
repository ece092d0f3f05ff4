"""Soft attention alignment, factorized compression, and augmentation.

Each aligned pair (a, b) is compared three ways (concatenate, subtract,
multiply) and each comparison is compressed to one scalar by a factorization
operation with its own parameters. The scalars are concatenated onto the
word vectors and handed to the sequence encoder.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Dense, EncodedSequence
from .tensor import ParamRegistry, Tensor

COMPARISONS = ("cat", "sub", "mul")


class FactorizedScorer:
    """Scalar scorer with bias, linear term, and factorized pairwise
    interactions, evaluated with the linear-time identity
    0.5 * sum_f [(x . v_f)^2 - (x^2) . (v_f^2)]."""

    def __init__(self, reg: ParamRegistry, name: str, in_dim: int, factors: int):
        self.in_dim = in_dim
        self.bias = reg.zeros(f"{name}.bias", (1,), decay=False)
        self.linear = reg.xavier(f"{name}.linear", (in_dim, 1))
        # small factor init keeps early pairwise terms from swamping the linear part
        self.factors = reg.xavier(f"{name}.factors", (in_dim, factors), scale=0.1)

    def __call__(self, x: Tensor) -> Tensor:
        """x: (..., in_dim) -> (...) scalar per row."""
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"factorized scorer expects last dim {self.in_dim}, "
                             f"got {x.shape}")
        lead = x.shape[:-1]
        linear = T.reshape(T.matmul(x, self.linear.tensor), lead)
        xv = T.matmul(x, self.factors.tensor)                 # (..., f)
        sq_of_sum = T.mul(xv, xv)
        sum_of_sq = T.matmul(T.mul(x, x), T.mul(self.factors.tensor, self.factors.tensor))
        pairwise = T.mul(T.reduce_sum(T.sub(sq_of_sum, sum_of_sq), axis=-1), 0.5)
        return T.add(T.add(linear, pairwise), self.bias.tensor)


class LinearScorer:
    """Ablation stand-in: single affine map to a scalar."""

    def __init__(self, reg: ParamRegistry, name: str, in_dim: int):
        self.in_dim = in_dim
        self.w = reg.xavier(f"{name}.w", (in_dim, 1))
        self.b = reg.zeros(f"{name}.b", (1,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.reshape(T.matmul(x, self.w.tensor), x.shape[:-1]), self.b.tensor)


class FcScorer:
    """Ablation stand-in: one or two ReLU layers then a linear map to a scalar."""

    def __init__(self, reg: ParamRegistry, name: str, in_dim: int,
                 hidden: int, depth: int):
        self.layers = []
        d = in_dim
        for i in range(depth):
            self.layers.append(Dense(reg, f"{name}.fc{i}", d, hidden, "relu"))
            d = hidden
        self.out = LinearScorer(reg, f"{name}.out", d)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.out(x)


def make_scorer(reg: ParamRegistry, name: str, in_dim: int, comparison: str,
                factors: int, fc_hidden: int):
    if comparison == "fm":
        return FactorizedScorer(reg, name, in_dim, factors)
    if comparison == "fc-linear-1":
        return LinearScorer(reg, name, in_dim)
    if comparison == "fc-relu-1":
        return FcScorer(reg, name, in_dim, fc_hidden, depth=1)
    if comparison == "fc-relu-2":
        return FcScorer(reg, name, in_dim, fc_hidden, depth=2)
    raise ValueError(f"unknown comparison kind {comparison!r}")


def fm_score(scorer: FactorizedScorer, x) -> float:
    """Convenience scalar evaluation of one input vector."""
    out = scorer(T.reshape(T.as_tensor(x), (1, -1)))
    return float(out.data[0])


def inter_align(premise: EncodedSequence, hypothesis: EncodedSequence,
                proj: Dense):
    """Cross-sentence soft alignment with one shared projection F.

    Scores e_ij = F(p_i) . F(h_j). For hypothesis token j, beta_j is the
    premise mixture under softmax over i; for premise token i, alpha_i is
    the hypothesis mixture under softmax over j. Masked positions get
    exactly zero weight.

    Returns (beta (B, Lh, D), alpha (B, Lp, D), scores (B, Lp, Lh)).
    """
    if premise.max_len == 0 or hypothesis.max_len == 0:
        raise ValueError("inter_align: empty sequence")
    fp = proj(premise.vectors)
    fh = proj(hypothesis.vectors)
    scores = T.matmul(fp, T.transpose(fh))                    # (B, Lp, Lh)
    dtype = scores.dtype
    p_mask = np.asarray(premise.mask, dtype=dtype)[:, :, None]
    h_mask = np.asarray(hypothesis.mask, dtype=dtype)[:, None, :]
    over_premise = T.masked_softmax(scores, p_mask, axis=1)
    over_hypothesis = T.masked_softmax(scores, h_mask, axis=2)
    beta = T.matmul(T.transpose(over_premise), premise.vectors)
    alpha = T.matmul(over_hypothesis, hypothesis.vectors)
    return beta, alpha, scores


def intra_align(seq: EncodedSequence, proj: Dense) -> Tensor:
    """Self-alignment: s'_i is the softmax mixture of the same sentence
    under scores G(s_i) . G(s_j)."""
    if seq.max_len == 0:
        raise ValueError("intra_align: empty sequence")
    g = proj(seq.vectors)
    scores = T.matmul(g, T.transpose(g))                      # (B, L, L)
    key_mask = np.asarray(seq.mask, dtype=scores.dtype)[:, None, :]
    weights = T.masked_softmax(scores, key_mask, axis=2)
    return T.matmul(weights, seq.vectors)


def factorize_pairs(a: Tensor, b: Tensor, scorers: dict, ops=COMPARISONS) -> dict:
    """Score each enabled comparison of an aligned pair, per token.

    a, b: (B, L, D). Returns {op: (B, L) scalars}.
    """
    if a.shape != b.shape:
        raise ValueError(f"factorize_pairs: mismatched shapes {a.shape} vs {b.shape}")
    features = {}
    for op in ops:
        if op == "cat":
            x = T.concat([a, b], axis=2)
        elif op == "sub":
            x = T.sub(a, b)
        elif op == "mul":
            x = T.mul(a, b)
        else:
            raise ValueError(f"unknown comparison op {op!r}")
        features[op] = scorers[op](x)
    return features


def augment(seq: EncodedSequence, intra_feats: dict | None, inter_feats: dict | None,
            intra_vectors: Tensor | None, ops=COMPARISONS) -> EncodedSequence:
    """Concatenate the propagated scalars (and optionally the intra-aligned
    vector) onto each token: u_i = [s_i ; intra scalars ; inter scalars]."""
    batch, length, _ = seq.vectors.shape
    parts = [seq.vectors]
    for feats in (intra_feats, inter_feats):
        if feats is None:
            continue
        for op in ops:
            if feats[op].shape != (batch, length):
                raise ValueError(f"feature channel {op} has shape {feats[op].shape}, "
                                 f"expected {(batch, length)}")
            parts.append(T.reshape(feats[op], (batch, length, 1)))
    if intra_vectors is not None:
        parts.append(intra_vectors)
    return EncodedSequence(T.concat(parts, axis=2), seq.mask, seq.lengths)
