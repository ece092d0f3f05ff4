"""Full network assembly: encoders, alignment factorization, sequence
encoder, pooling, prediction head, and the training loss."""

from __future__ import annotations

import numpy as np

from . import alignment as A
from . import tensor as T
from .config import ModelConfig
from .data import Batch, BatchSide, Vocab
from .layers import Dense, EncodedSequence, Highway, InputEncoder, Lstm, expand_mask
from .tensor import ParamRegistry, Tensor

CHANNELS = ("inter_cat", "inter_sub", "inter_mul",
            "intra_cat", "intra_sub", "intra_mul")


def pool(hidden: Tensor, mask: np.ndarray, kind: str) -> Tensor:
    """Reduce (B, L, D) hidden states over valid steps only."""
    if np.any(np.asarray(mask).sum(axis=1) == 0):
        raise ValueError("pool: a sequence has zero valid steps")
    batch, length, dim = hidden.shape
    dtype = hidden.dtype
    mask_exp = expand_mask(mask, dim, dtype)

    def masked_max():
        offset = T.constant((mask_exp - 1.0) * (-T.MASK_OFFSET))
        return T.reduce_max(T.add(hidden, offset), axis=1)

    def masked_sum():
        return T.reduce_sum(T.mul(hidden, T.constant(mask_exp)), axis=1)

    def masked_avg():
        counts = np.asarray(mask, dtype=dtype).sum(axis=1)
        inv = np.repeat((1.0 / counts)[:, None], dim, axis=1)
        return T.mul(masked_sum(), T.constant(inv))

    if kind == "avgmax":
        return T.concat([masked_max(), masked_avg()], axis=1)
    if kind == "max":
        return masked_max()
    if kind == "avg":
        return masked_avg()
    if kind == "sum":
        return masked_sum()
    raise ValueError(f"unknown pooling kind {kind!r}")


class PredictionHead:
    """Head over [x_p ; x_h ; x_p * x_h ; x_p - x_h], highway or dense."""

    def __init__(self, reg: ParamRegistry, config: ModelConfig, in_dim: int):
        width = config.head_width
        self.layers = []
        d = in_dim
        for i in range(config.head_depth):
            if config.prediction_head == "highway":
                self.layers.append(Highway(reg, f"head.layer{i}", d, width))
            else:
                self.layers.append(Dense(reg, f"head.layer{i}", d, width, "relu"))
            d = width
        self.final_w = reg.xavier("head.final.w", (d, config.num_classes))
        self.final_b = reg.zeros("head.final.b", (config.num_classes,))

    def __call__(self, x_p: Tensor, x_h: Tensor, dropout_keep: float,
                 rng, train: bool) -> Tensor:
        if x_p.shape != x_h.shape:
            raise ValueError(f"prediction head: mismatched inputs "
                             f"{x_p.shape} vs {x_h.shape}")
        x = T.concat([x_p, x_h, T.mul(x_p, x_h), T.sub(x_p, x_h)], axis=1)
        for layer in self.layers:
            x = layer(x)
            x = T.dropout(x, dropout_keep, rng, train)
        return T.add(T.matmul(x, self.final_w.tensor), self.final_b.tensor)


class Model:
    """The assembled network; parameters live in a flat named registry."""

    def __init__(self, config: ModelConfig, vocab: Vocab,
                 embeddings: np.ndarray, dtype=np.float32):
        config.validate()
        if embeddings.shape[0] != len(vocab.words):
            raise ValueError(f"word embeddings: {embeddings.shape[0]} rows but "
                             f"vocab has {len(vocab.words)} words")
        if embeddings.shape[1] != config.word_dim:
            raise ValueError(f"word embeddings: dim {embeddings.shape[1]} but "
                             f"config.word_dim is {config.word_dim}")
        self.config = config
        self.vocab = vocab
        self.dtype = dtype
        self.registry = ParamRegistry(np.random.default_rng(config.seed), dtype)
        self.dropout_rng = np.random.default_rng(config.seed + 1)
        reg = self.registry
        d = config.d_model
        ops = config.enabled_ops()

        self.encoder = InputEncoder(
            reg, embeddings, d, config.use_char, config.use_pos,
            len(vocab.chars), len(vocab.pos), config.char_dim,
            config.char_window, config.char_filters, config.pos_dim,
            style=config.encoder_style)

        self.inter_proj = None
        self.inter_scorers = None
        if config.use_inter_attention:
            self.inter_proj = Dense(reg, "align.inter_proj", d, config.proj_dim, "relu")
            self.inter_scorers = {
                op: A.make_scorer(reg, f"compress.inter.{op}",
                                  2 * d if op == "cat" else d,
                                  config.comparison, config.fm_factors,
                                  config.fc_hidden)
                for op in ops}

        self.intra_proj_p = Dense(reg, "align.intra_proj", d, config.proj_dim, "relu")
        self.intra_proj_h = (self.intra_proj_p if config.share_intra_projection
                             else Dense(reg, "align.intra_proj_h", d,
                                        config.proj_dim, "relu"))
        self.intra_scorers = {
            op: A.make_scorer(reg, f"compress.intra.{op}",
                              2 * d if op == "cat" else d,
                              config.comparison, config.fm_factors,
                              config.fc_hidden)
            for op in ops}

        lstm_in = config.augmented_dim()
        self.lstm = Lstm(reg, "lstm.forward", lstm_in, config.lstm_hidden)
        self.lstm_rev = (Lstm(reg, "lstm.reverse", lstm_in, config.lstm_hidden)
                         if config.bidirectional else None)

        self.head = PredictionHead(reg, config, 4 * config.pooled_dim())

    # -- parameters -------------------------------------------------------
    @property
    def params(self) -> dict:
        return self.registry.params

    def parameters(self) -> list:
        return self.registry.trainable()

    def zero_grads(self):
        for p in self.parameters():
            p.tensor.zero_grad()

    # -- forward ----------------------------------------------------------
    def encode_side(self, side: BatchSide, train: bool) -> EncodedSequence:
        return self.encoder(side.word_ids, side.char_ids, side.pos_ids,
                            side.mask, side.lengths, side.word_lengths,
                            self.config.dropout_keep, self.dropout_rng, train)

    def align_and_augment(self, p_enc: EncodedSequence, h_enc: EncodedSequence,
                          capture: dict | None = None):
        cfg = self.config
        ops = cfg.enabled_ops()
        p_aligned = A.intra_align(p_enc, self.intra_proj_p)
        h_aligned = A.intra_align(h_enc, self.intra_proj_h)
        p_intra = A.factorize_pairs(p_enc.vectors, p_aligned, self.intra_scorers, ops)
        h_intra = A.factorize_pairs(h_enc.vectors, h_aligned, self.intra_scorers, ops)
        p_inter = h_inter = None
        if cfg.use_inter_attention:
            beta, alpha, _ = A.inter_align(p_enc, h_enc, self.inter_proj)
            p_inter = A.factorize_pairs(alpha, p_enc.vectors, self.inter_scorers, ops)
            h_inter = A.factorize_pairs(beta, h_enc.vectors, self.inter_scorers, ops)
        u_p = A.augment(p_enc, p_intra, p_inter,
                        p_aligned if cfg.include_intra_vector else None, ops)
        u_h = A.augment(h_enc, h_intra, h_inter,
                        h_aligned if cfg.include_intra_vector else None, ops)
        if capture is not None:
            capture["premise"] = self._channel_values(p_intra, p_inter, p_enc)
            capture["hypothesis"] = self._channel_values(h_intra, h_inter, h_enc)
        return u_p, u_h

    def _channel_values(self, intra: dict, inter: dict | None,
                        enc: EncodedSequence) -> dict:
        shape = (enc.vectors.shape[0], enc.vectors.shape[1])
        values = {}
        for name in CHANNELS:
            group, op = name.split("_")
            feats = intra if group == "intra" else inter
            if feats is not None and op in feats:
                values[name] = feats[op].data.copy()
            else:
                values[name] = np.zeros(shape, dtype=self.dtype)
        return values

    def encode_sequence(self, seq: EncodedSequence, train: bool) -> Tensor:
        hidden = self.lstm(seq.vectors, seq.mask)
        if self.lstm_rev is not None:
            hidden = T.concat([hidden, self.lstm_rev(seq.vectors, seq.mask, reverse=True)],
                              axis=2)
        return T.dropout(hidden, self.config.dropout_keep, self.dropout_rng, train)

    def forward_pair(self, batch: Batch, train: bool = False,
                     capture: dict | None = None) -> Tensor:
        """Logits (B, num_classes); pass `capture={}` to collect the six
        propagated feature channels consumed by this same forward pass."""
        p_enc = self.encode_side(batch.premise, train)
        h_enc = self.encode_side(batch.hypothesis, train)
        u_p, u_h = self.align_and_augment(p_enc, h_enc, capture)
        h_p = self.encode_sequence(u_p, train)
        h_h = self.encode_sequence(u_h, train)
        x_p = pool(h_p, u_p.mask, self.config.pooling)
        x_h = pool(h_h, u_h.mask, self.config.pooling)
        return self.head(x_p, x_h, self.config.dropout_keep, self.dropout_rng, train)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        logits = self.forward_pair(batch, train=False)
        return T.exp(T.log_softmax(logits, axis=1)).data


def softmax_probabilities(logits: Tensor) -> Tensor:
    return T.exp(T.log_softmax(logits, axis=1))


def cross_entropy_loss(logits: Tensor, labels: np.ndarray,
                       parameters: list | None = None,
                       l2_lambda: float = 0.0) -> Tensor:
    """Mean cross entropy from logits (log-sum-exp form) plus
    l2_lambda * sum of squares over decay-flagged parameters."""
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must be in [0, {n_classes}), got "
                         f"[{labels.min()}, {labels.max()}]")
    onehot = np.zeros((batch, n_classes), dtype=logits.dtype)
    onehot[np.arange(batch), labels] = 1.0
    picked = T.reduce_sum(T.mul(T.log_softmax(logits, axis=1), T.constant(onehot)))
    loss = T.mul(picked, -1.0 / batch)
    if parameters and l2_lambda:
        penalty = None
        for p in parameters:
            if not p.decay:
                continue
            sq = T.reduce_sum(T.mul(p.tensor, p.tensor))
            penalty = sq if penalty is None else T.add(penalty, sq)
        if penalty is not None:
            loss = T.add(loss, T.mul(penalty, float(l2_lambda)))
    return loss


def count_params(model: Model):
    """Total trainable scalars (frozen word embeddings excluded) and a
    per-component breakdown keyed by the first name segment."""
    breakdown: dict[str, int] = {}
    total = 0
    for p in model.parameters():
        n = p.tensor.size
        total += n
        component = p.name.split(".", 1)[0]
        breakdown[component] = breakdown.get(component, 0) + n
    return total, breakdown


def build_model(config: ModelConfig, vocab: Vocab,
                embeddings: np.ndarray | None = None,
                dtype=np.float32) -> Model:
    if embeddings is None:
        from .data import random_embeddings
        embeddings = random_embeddings(vocab, config.word_dim, config.seed)
    return Model(config, vocab, embeddings, dtype=dtype)
