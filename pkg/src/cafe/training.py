"""Adam training loop, evaluation metrics, checkpoint files, and the
per-category accuracy breakdown."""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .data import Vocab, batch_examples, make_batches
from .model import Model, build_model, cross_entropy_loss
from .tensor import backward

CHECKPOINT_MAGIC = b"CAFE1"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; the best checkpoint on disk is
    left untouched."""

    def __init__(self, message: str, checkpoint_path: str | None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: list, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = {p.name: p for p in params}
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.step_count = 0
        self.incidents: list = []

    def step(self, grads: dict) -> bool:
        """Apply one bias-corrected update; a non-finite gradient rejects the
        whole step and records the incident. Returns whether it applied."""
        missing = [n for n in self.params if n not in grads]
        if missing:
            raise ValueError(f"adam: gradients missing for {missing[:3]}")
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                self.incidents.append((self.step_count + 1, name))
                return False
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data[...] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return True


def clip_by_global_norm(grads: dict, max_norm: float):
    """Scale all gradients so the global norm is at most max_norm.
    Returns (grads, norm, clipped)."""
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
        return grads, norm, True
    return grads, norm, False


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class Metrics:
    accuracy: float
    loss: float
    confusion: np.ndarray           # rows = gold, cols = predicted
    precision: np.ndarray
    recall: np.ndarray
    count: int


def compute_metrics(golds: np.ndarray, preds: np.ndarray, n_classes: int,
                    loss: float) -> Metrics:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for g, p in zip(golds, preds):
        confusion[g, p] += 1
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    diag = np.diag(confusion)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        recall = np.where(support > 0, diag / support, 0.0)
    accuracy = float(diag.sum() / max(1, confusion.sum()))
    return Metrics(accuracy, loss, confusion, precision, recall, int(confusion.sum()))


def evaluate(model: Model, examples: list, batch_size: int = 0):
    """Deterministic evaluation (dropout off).

    Returns (Metrics, predictions) where predictions is one record per
    example in input order: {pair_id, gold, pred, correct, probs}.
    """
    if not examples:
        raise ValueError("evaluate: empty dataset")
    cfg = model.config
    size = batch_size or cfg.batch_size
    golds, preds, predictions = [], [], []
    total_loss, total_n = 0.0, 0
    names = model.vocab.label_names
    for start in range(0, len(examples), size):
        group = examples[start:start + size]
        batch = batch_examples(group, model.vocab, min_chars=cfg.char_window)
        logits = model.forward_pair(batch, train=False)
        loss = cross_entropy_loss(logits, batch.labels)
        probs = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        batch_preds = logits.data.argmax(axis=1)
        total_loss += float(loss.data) * len(group)
        total_n += len(group)
        for ex, pred, prob in zip(group, batch_preds, probs):
            golds.append(ex.label)
            preds.append(int(pred))
            predictions.append({
                "pair_id": ex.pair_id,
                "gold": names[ex.label],
                "pred": names[int(pred)],
                "correct": bool(int(pred) == ex.label),
                "probs": [float(f"{p:.8g}") for p in prob],
            })
    metrics = compute_metrics(np.array(golds), np.array(preds),
                              cfg.num_classes, total_loss / total_n)
    return metrics, predictions


def majority_baseline(reference: list, evaluation: list) -> float:
    """Accuracy of always predicting the majority label of `reference`."""
    counts: dict[int, int] = {}
    for ex in reference:
        counts[ex.label] = counts.get(ex.label, 0) + 1
    majority = max(sorted(counts), key=lambda k: counts[k])
    hits = sum(1 for ex in evaluation if ex.label == majority)
    return hits / len(evaluation)


def category_breakdown(predictions: list, annotation_path: str):
    """Per-category accuracy over the annotated subset.

    The annotation file is JSONL of {pair_id, categories: [str]}. Annotated
    ids with no matching prediction are reported and excluded; categories
    that end up empty are listed separately rather than tabulated.
    """
    by_id = {p["pair_id"]: p for p in predictions}
    table: dict[str, dict] = {}
    unmatched: list = []
    declared: set = set()
    with open(annotation_path, "r", encoding="utf-8") as fh:
        for raw in fh:
            if not raw.strip():
                continue
            obj = json.loads(raw)
            declared.update(obj.get("categories", []))
            pred = by_id.get(str(obj["pair_id"]))
            if pred is None:
                unmatched.append(str(obj["pair_id"]))
                continue
            for cat in obj.get("categories", []):
                slot = table.setdefault(cat, {"correct": 0, "count": 0})
                slot["count"] += 1
                slot["correct"] += int(pred["correct"])
    result = {cat: {"accuracy": slot["correct"] / slot["count"],
                    "count": slot["count"]}
              for cat, slot in table.items()}
    empty = sorted(declared - set(result))
    return result, unmatched, empty


# ---------------------------------------------------------------------------
# checkpoint file
# ---------------------------------------------------------------------------

def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"checkpoint truncated: wanted {n} bytes, got {len(data)}")
    return data


def _write_record(fh, name: str, values: np.ndarray):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", values.ndim))
    fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
    fh.write(values.astype("<f4").tobytes())


def _read_record(fh):
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(dims)) if dims else 1
    values = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(dims)
    return name, values


def save_checkpoint(model: Model, path: str, trainer_state: dict | None = None):
    """Write config, vocab, the frozen embedding table, every parameter,
    and (optionally) optimizer/trainer state for exact resume."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        header = json.dumps({"config": model.config.to_dict(),
                             "vocab": model.vocab.to_dict()}).encode("utf-8")
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        params = model.parameters()
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            _write_record(fh, p.name, p.data)
        fh.write(struct.pack("<B", 1))
        _write_record(fh, "word_embeddings", model.encoder.word_table.data)
        if trainer_state is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            meta = json.dumps(trainer_state["meta"]).encode("utf-8")
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
            moments = trainer_state["moments"]
            fh.write(struct.pack("<I", len(moments)))
            for name, values in moments:
                _write_record(fh, name, values)


def load_checkpoint(path: str, config: ModelConfig | None = None,
                    dtype=np.float32):
    """Rebuild a model from a checkpoint. Passing `config` loads the stored
    parameters into a model built from that config instead; any name or
    shape mismatch is rejected naming the offending parameter.

    Returns (model, trainer_state | None).
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version} unsupported "
                             f"(expected {CHECKPOINT_VERSION})")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4))
        header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
        stored_config = ModelConfig.from_dict(header["config"])
        vocab = Vocab.from_dict(header["vocab"])
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4))
        records = [_read_record(fh) for _ in range(n_params)]
        (has_emb,) = struct.unpack("<B", _read_exact(fh, 1))
        embeddings = _read_record(fh)[1] if has_emb else None
        (has_state,) = struct.unpack("<B", _read_exact(fh, 1))
        trainer_state = None
        if has_state:
            (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
            meta = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
            (n_moments,) = struct.unpack("<I", _read_exact(fh, 4))
            moments = [_read_record(fh) for _ in range(n_moments)]
            trainer_state = {"meta": meta, "moments": moments}

    model = build_model(config or stored_config, vocab, embeddings, dtype=dtype)
    params = model.params
    loaded = set()
    for name, values in records:
        if name not in params:
            raise ValueError(f"checkpoint mismatch: parameter {name!r} does not "
                             "exist in the target model")
        p = params[name]
        if p.data.shape != values.shape:
            raise ValueError(f"checkpoint mismatch: parameter {name!r} has shape "
                             f"{values.shape} but model expects {p.data.shape}")
        p.data[...] = values.astype(dtype)
        loaded.add(name)
    missing = [n for n in params if n not in loaded]
    if missing:
        raise ValueError(f"checkpoint mismatch: no record for parameter {missing[0]!r}")
    return model, trainer_state


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    log: list
    best_dev: float
    best_epoch: int
    checkpoint_path: str | None
    model: Model
    stopped_early: bool = False
    incidents: list = field(default_factory=list)
    clip_events: int = 0


def _trainer_state(model: Model, optimizer: Adam, data_rng, epoch: int,
                   best_dev: float, best_epoch: int, patience_used: int) -> dict:
    meta = {
        "epoch": epoch,
        "best_dev": best_dev,
        "best_epoch": best_epoch,
        "patience_used": patience_used,
        "adam_step": optimizer.step_count,
        "data_rng": data_rng.bit_generator.state,
        "dropout_rng": model.dropout_rng.bit_generator.state,
    }
    moments = ([(f"m:{name}", values) for name, values in optimizer.m.items()]
               + [(f"v:{name}", values) for name, values in optimizer.v.items()])
    return {"meta": meta, "moments": moments}


def _restore_trainer(model: Model, optimizer: Adam, data_rng, state: dict):
    meta = state["meta"]
    optimizer.step_count = meta["adam_step"]
    for name, values in state["moments"]:
        kind, pname = name.split(":", 1)
        target = optimizer.m if kind == "m" else optimizer.v
        target[pname][...] = values
    data_rng.bit_generator.state = meta["data_rng"]
    model.dropout_rng.bit_generator.state = meta["dropout_rng"]
    return meta


def train(config: ModelConfig, train_examples: list, dev_examples: list,
          vocab: Vocab | None = None, embeddings: np.ndarray | None = None,
          checkpoint_path: str | None = None, log_path: str | None = None,
          state_path: str | None = None, resume_from: str | None = None,
          model: Model | None = None, epochs: int | None = None,
          verbose: bool = False) -> TrainResult:
    """Run the optimization loop; keeps the best-dev checkpoint, logs one
    JSON object per epoch, aborts on a non-finite loss."""
    start_epoch, best_dev, best_epoch, patience_used = 0, -1.0, -1, 0
    # the caller decides how long to run, even when resuming a checkpoint
    # whose stored config carried a different budget
    total_epochs = epochs if epochs is not None else config.epochs
    if resume_from:
        model, trainer_state = load_checkpoint(resume_from)
        if trainer_state is None:
            raise ValueError(f"{resume_from} carries no trainer state to resume from")
        optimizer = Adam(model.parameters(), lr=model.config.learning_rate)
        data_rng = np.random.default_rng(0)
        meta = _restore_trainer(model, optimizer, data_rng, trainer_state)
        start_epoch = meta["epoch"]
        best_dev, best_epoch = meta["best_dev"], meta["best_epoch"]
        patience_used = meta["patience_used"]
        config = model.config
        vocab = model.vocab
    else:
        if vocab is None:
            vocab = Vocab.build(train_examples + dev_examples, config.label_names())
        if model is None:
            model = build_model(config, vocab, embeddings)
        optimizer = Adam(model.parameters(), lr=config.learning_rate)
        data_rng = np.random.default_rng(config.seed + 2)

    log: list = []
    log_fh = open(log_path, "a" if resume_from else "w", encoding="utf-8") \
        if log_path else None
    clip_events = 0
    try:
        for epoch in range(start_epoch, total_epochs):
            tick = time.perf_counter()
            epoch_seed = int(data_rng.integers(0, 2**31 - 1))
            losses, hits, seen = [], 0, 0
            for batch in make_batches(train_examples, vocab, config.batch_size,
                                      bucketing=True, seed=epoch_seed,
                                      min_chars=config.char_window):
                model.zero_grads()
                logits = model.forward_pair(batch, train=True)
                loss = cross_entropy_loss(logits, batch.labels,
                                          model.parameters(), config.l2_lambda)
                loss_value = float(loss.data)
                if not np.isfinite(loss_value):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch + 1}; best checkpoint "
                        f"kept at {checkpoint_path}", checkpoint_path)
                backward(loss)
                grads = {p.name: (p.tensor.grad if p.tensor.grad is not None
                                  else np.zeros_like(p.data))
                         for p in model.parameters()}
                grads, _, clipped = clip_by_global_norm(grads, config.clip_norm)
                clip_events += int(clipped)
                optimizer.step(grads)
                losses.append(loss_value)
                hits += int((logits.data.argmax(axis=1) == batch.labels).sum())
                seen += len(batch.labels)
            dev_metrics, _ = evaluate(model, dev_examples)
            record = {
                "epoch": epoch + 1,
                "train_loss": float(np.mean(losses)),
                "train_acc": hits / seen,
                "dev_acc": dev_metrics.accuracy,
                "seconds": round(time.perf_counter() - tick, 3),
            }
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if verbose:
                print(f"epoch {record['epoch']:3d}  loss {record['train_loss']:.4f}  "
                      f"train {record['train_acc']:.3f}  dev {record['dev_acc']:.3f}")
            improved = dev_metrics.accuracy > best_dev
            if improved:
                best_dev, best_epoch, patience_used = dev_metrics.accuracy, epoch + 1, 0
                if checkpoint_path:
                    save_checkpoint(model, checkpoint_path)
            else:
                patience_used += 1
            if state_path:
                save_checkpoint(model, state_path,
                                _trainer_state(model, optimizer, data_rng, epoch + 1,
                                               best_dev, best_epoch, patience_used))
            if config.patience and patience_used >= config.patience:
                return TrainResult(log, best_dev, best_epoch, checkpoint_path,
                                   model, stopped_early=True,
                                   incidents=optimizer.incidents,
                                   clip_events=clip_events)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(log, best_dev, best_epoch, checkpoint_path, model,
                       incidents=optimizer.incidents, clip_events=clip_events)
