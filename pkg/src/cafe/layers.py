"""Reusable layers: highway blocks, char convolution, LSTM, input encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParamRegistry, Tensor


@dataclass
class EncodedSequence:
    """A batch of per-token vectors plus validity mask and true lengths."""
    vectors: Tensor          # (batch, length, dim)
    mask: np.ndarray         # (batch, length) float 0/1, leading ones
    lengths: np.ndarray      # (batch,)

    @property
    def dim(self) -> int:
        return self.vectors.shape[-1]

    @property
    def max_len(self) -> int:
        return self.vectors.shape[1]


def expand_mask(mask: np.ndarray, dim: int, dtype) -> np.ndarray:
    """(B, L) mask -> (B, L, dim) constant, pre-expanded so elementwise ops
    stay within the kernel's strict broadcast rules."""
    m = np.asarray(mask, dtype=dtype)
    return np.repeat(m[:, :, None], dim, axis=2)


class Dense:
    def __init__(self, reg: ParamRegistry, name: str, in_dim: int, out_dim: int,
                 activation: str | None = None):
        self.w = reg.xavier(f"{name}.w", (in_dim, out_dim))
        self.b = reg.zeros(f"{name}.b", (out_dim,))
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = T.add(T.matmul(x, self.w.tensor), self.b.tensor)
        if self.activation == "relu":
            y = T.relu(y)
        elif self.activation == "sigmoid":
            y = T.sigmoid(y)
        return y


class Highway:
    """Gated layer: y = H(x) * g + x * (1 - g), carry path projected with a
    ReLU transform when the output width differs from the input."""

    def __init__(self, reg: ParamRegistry, name: str, in_dim: int, out_dim: int):
        self.transform = Dense(reg, f"{name}.transform", in_dim, out_dim, "relu")
        self.gate = Dense(reg, f"{name}.gate", in_dim, out_dim, "sigmoid")
        self.carry_proj = None
        if in_dim != out_dim:
            self.carry_proj = Dense(reg, f"{name}.carry", in_dim, out_dim, "relu")

    def __call__(self, x: Tensor) -> Tensor:
        h = self.transform(x)
        g = self.gate(x)
        carry = self.carry_proj(x) if self.carry_proj is not None else x
        return T.add(T.mul(h, g), T.mul(carry, T.sub(1.0, g)))


class CharCnn:
    """Per-word character encoder: embed, convolve with one window size,
    max-pool over window positions. Output width is the filter count for
    any word length >= 1."""

    def __init__(self, reg: ParamRegistry, name: str, vocab_size: int,
                 emb_dim: int = 16, window: int = 3, filters: int = 50):
        self.window = window
        self.filters = filters
        self.emb_dim = emb_dim
        self.embedding = reg.uniform(f"{name}.embedding", (vocab_size, emb_dim),
                                     -0.05, 0.05, decay=False)
        self.conv_w = reg.xavier(f"{name}.conv_w", (window * emb_dim, filters))
        self.conv_b = reg.zeros(f"{name}.conv_b", (filters,))

    def __call__(self, char_ids: np.ndarray, word_lengths: np.ndarray) -> Tensor:
        """char_ids: (n_words, width) padded with 0, width >= window.
        word_lengths: (n_words,) true character counts, all >= 1."""
        n_words, width = char_ids.shape
        if width < self.window:
            raise ValueError(f"char window {self.window} exceeds padded width {width}")
        emb = T.embedding(self.embedding.tensor, char_ids)  # (n, width, E)
        positions = width - self.window + 1
        windows = [T.reshape(emb[:, t:t + self.window, :],
                             (n_words, 1, self.window * self.emb_dim))
                   for t in range(positions)]
        stacked = T.concat(windows, axis=1) if positions > 1 else windows[0]
        feats = T.add(T.matmul(stacked, self.conv_w.tensor), self.conv_b.tensor)
        # windows sliding past the word's own characters never win the max
        valid = np.maximum(word_lengths - self.window + 1, 1)
        pos_idx = np.arange(positions)[None, :]
        win_mask = (pos_idx < valid[:, None]).astype(feats.dtype)
        offset = T.constant(np.repeat(((win_mask - 1.0) * -T.MASK_OFFSET)[:, :, None],
                                      self.filters, axis=2))
        return T.reduce_max(T.add(feats, offset), axis=1)


class Lstm:
    """Unidirectional LSTM; one instance is shared by premise and hypothesis.
    Padded steps carry the previous state through and emit zeroed outputs."""

    def __init__(self, reg: ParamRegistry, name: str, in_dim: int, hidden: int):
        self.hidden = hidden
        self.w_x = reg.xavier(f"{name}.w_x", (in_dim, 4 * hidden))
        self.w_h = reg.xavier(f"{name}.w_h", (hidden, 4 * hidden))
        # gate order i, f, g, o; forget bias starts at 1.0
        self.b = reg.zeros(f"{name}.b", (4 * hidden,))
        self.b.data[hidden:2 * hidden] = 1.0

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
        pre = T.add(T.add(T.matmul(x_t, self.w_x.tensor),
                          T.matmul(h_prev, self.w_h.tensor)), self.b.tensor)
        hdim = self.hidden
        i = T.sigmoid(pre[:, :hdim])
        f = T.sigmoid(pre[:, hdim:2 * hdim])
        g = T.tanh(pre[:, 2 * hdim:3 * hdim])
        o = T.sigmoid(pre[:, 3 * hdim:])
        c = T.add(T.mul(f, c_prev), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        return h, c

    def __call__(self, seq: Tensor, mask: np.ndarray, reverse: bool = False) -> Tensor:
        """seq: (B, L, D) -> hidden states (B, L, hidden), masked at padding."""
        batch, length, _ = seq.shape
        dtype = seq.dtype
        h = T.constant(np.zeros((batch, self.hidden), dtype=dtype))
        c = h
        order = range(length - 1, -1, -1) if reverse else range(length)
        outputs: list[Tensor | None] = [None] * length
        for t in order:
            x_t = seq[:, t, :]
            h_new, c_new = self.step(x_t, h, c)
            m = np.repeat(np.asarray(mask[:, t], dtype=dtype)[:, None], self.hidden, axis=1)
            keep = T.constant(m)
            drop = T.constant(1.0 - m)
            h = T.add(T.mul(h_new, keep), T.mul(h, drop))
            c = T.add(T.mul(c_new, keep), T.mul(c, drop))
            outputs[t] = T.reshape(T.mul(h, keep), (batch, 1, self.hidden))
        return T.concat(outputs, axis=1)


class InputEncoder:
    """Token representation: word/char/POS channels concatenated, then a
    two-layer highway stack (the Dense variant is the ablation switch)."""

    def __init__(self, reg: ParamRegistry, word_embeddings: np.ndarray,
                 d_model: int, use_char: bool, use_pos: bool,
                 char_vocab: int, pos_vocab: int, char_dim: int,
                 char_window: int, char_filters: int, pos_dim: int,
                 style: str = "highway"):
        self.word_table = T.constant(word_embeddings.astype(reg.dtype))
        in_dim = word_embeddings.shape[1]
        self.char_cnn = None
        self.pos_embedding = None
        if use_char:
            self.char_cnn = CharCnn(reg, "encoder.char", char_vocab,
                                    char_dim, char_window, char_filters)
            in_dim += char_filters
        if use_pos:
            self.pos_embedding = reg.uniform("encoder.pos_embedding",
                                             (pos_vocab, pos_dim),
                                             -0.05, 0.05, decay=False)
            in_dim += pos_dim
        if style == "highway":
            self.stack = [Highway(reg, "encoder.highway0", in_dim, d_model),
                          Highway(reg, "encoder.highway1", d_model, d_model)]
        elif style == "dense":
            self.stack = [Dense(reg, "encoder.dense0", in_dim, d_model, "relu"),
                          Dense(reg, "encoder.dense1", d_model, d_model, "relu")]
        else:
            raise ValueError(f"unknown encoder style {style!r}")
        self.d_model = d_model

    def __call__(self, word_ids: np.ndarray, char_ids: np.ndarray,
                 pos_ids: np.ndarray, mask: np.ndarray, lengths: np.ndarray,
                 word_lengths: np.ndarray, dropout_keep: float,
                 rng: np.random.Generator, train: bool) -> EncodedSequence:
        batch, length = word_ids.shape
        if length == 0 or np.any(lengths == 0):
            raise ValueError("cannot encode a zero-length sentence")
        if char_ids.shape[:2] != (batch, length) or pos_ids.shape != (batch, length):
            raise ValueError(f"id channels disagree on shape: words {word_ids.shape}, "
                             f"chars {char_ids.shape}, pos {pos_ids.shape}")
        parts = [T.embedding(self.word_table, word_ids)]
        if self.char_cnn is not None:
            flat = self.char_cnn(char_ids.reshape(batch * length, -1),
                                 word_lengths.reshape(-1))
            parts.append(T.reshape(flat, (batch, length, self.char_cnn.filters)))
        if self.pos_embedding is not None:
            parts.append(T.embedding(self.pos_embedding.tensor, pos_ids))
        x = T.concat(parts, axis=2) if len(parts) > 1 else parts[0]
        for layer in self.stack:
            x = layer(x)
            x = T.dropout(x, dropout_keep, rng, train)
        return EncodedSequence(x, np.asarray(mask, dtype=float), lengths)
