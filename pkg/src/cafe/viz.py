"""Propagated-feature export (CSV) and the six-channel heatmap rendering."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .data import batch_examples
from .model import CHANNELS, Model

CSV_COLUMNS = ["pair_id", "side", "token_index", "token",
               "inter_cat", "inter_sub", "inter_mul",
               "intra_cat", "intra_sub", "intra_mul"]


@dataclass
class FeatureRecord:
    pair_id: str
    side: str                 # premise | hypothesis
    token_index: int
    token: str
    inter_cat: float
    inter_sub: float
    inter_mul: float
    intra_cat: float
    intra_sub: float
    intra_mul: float

    def values(self) -> list:
        return [self.inter_cat, self.inter_sub, self.inter_mul,
                self.intra_cat, self.intra_sub, self.intra_mul]


def collect_features(model: Model, examples: list, batch_size: int = 32) -> list:
    """Run eval-mode forward passes and pull out the per-token scalars that
    were concatenated into the augmented representations (captured from the
    pass itself, not recomputed)."""
    records = []
    for start in range(0, len(examples), batch_size):
        group = examples[start:start + batch_size]
        batch = batch_examples(group, model.vocab,
                               min_chars=model.config.char_window)
        capture: dict = {}
        model.forward_pair(batch, train=False, capture=capture)
        for row, ex in enumerate(group):
            for side, tokens in (("premise", ex.premise),
                                 ("hypothesis", ex.hypothesis)):
                channels = capture[side]
                for idx, token in enumerate(tokens):
                    records.append(FeatureRecord(
                        ex.pair_id, side, idx, token,
                        *(float(channels[name][row, idx]) for name in CHANNELS)))
    return records


def export_features(model: Model, examples: list, path: str,
                    batch_size: int = 32) -> int:
    """Write one row per token per side, ordered by (pair, side, index);
    six significant digits. Returns the data row count."""
    records = collect_features(model, examples, batch_size)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([rec.pair_id, rec.side, rec.token_index, rec.token]
                            + [f"{v:.6g}" for v in rec.values()])
    return len(records)


def read_feature_csv(path: str) -> list:
    """Parse an export back into FeatureRecords; malformed rows are rejected
    with their row number."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise ValueError(f"feature CSV row 1: bad header {header}")
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ValueError(f"feature CSV row {rownum}: expected "
                                 f"{len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                records.append(FeatureRecord(row[0], row[1], int(row[2]), row[3],
                                             *(float(v) for v in row[4:])))
            except ValueError as exc:
                raise ValueError(f"feature CSV row {rownum}: {exc}") from None
    return records


def normalize_channel(values: np.ndarray) -> np.ndarray:
    """Min/max scale one channel to [0, 1]; constant channels map to 0.5."""
    lo, hi = float(values.min()), float(values.max())
    if hi - lo == 0.0:
        return np.full_like(values, 0.5, dtype=float)
    return (values - lo) / (hi - lo)


def group_sentences(records: list) -> list:
    """Group records into (pair_id, side, tokens, 6xL matrix), file order."""
    order: list = []
    grouped: dict = {}
    for rec in records:
        key = (rec.pair_id, rec.side)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(rec)
    sentences = []
    for key in order:
        rows = sorted(grouped[key], key=lambda r: r.token_index)
        tokens = [r.token for r in rows]
        matrix = np.array([r.values() for r in rows]).T   # (6, L)
        sentences.append((key[0], key[1], tokens, matrix))
    return sentences


def render_heatmap(csv_path: str, out_path: str, max_sentences: int = 24):
    """Render one 6-row grid per sentence (channels x tokens), each channel
    min/max normalized, to a vector-graphic file. Only the first
    `max_sentences` sentences are drawn; exports meant for plotting should
    be limited at export time."""
    sentences = group_sentences(read_feature_csv(csv_path))
    if not sentences:
        raise ValueError(f"no feature rows in {csv_path}")
    sentences = sentences[:max_sentences]
    n = len(sentences)
    width = max(4.0, 0.55 * max(len(toks) for _, _, toks, _ in sentences) + 2.5)
    fig, axes = plt.subplots(n, 1, figsize=(width, 2.2 * n), squeeze=False)
    for ax, (pair_id, side, tokens, matrix) in zip(axes[:, 0], sentences):
        normalized = np.vstack([normalize_channel(matrix[i])
                                for i in range(matrix.shape[0])])
        ax.imshow(normalized, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
        ax.set_yticks(range(len(CSV_COLUMNS) - 4))
        ax.set_yticklabels(CSV_COLUMNS[4:], fontsize=7)
        ax.set_xticks(range(len(tokens)))
        ax.set_xticklabels(tokens, rotation=45, ha="right", fontsize=7)
        ax.set_title(f"{pair_id} / {side}", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
