"""Dataset ingestion, vocabularies, pretrained vectors, batching, and the
synthetic entailment corpus used for desk-scale checks."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np

PAD, OOV = 0, 1
PAD_TOKEN, OOV_TOKEN = "<pad>", "<oov>"
BUCKET_BOUNDS = (10, 20, 30, 40)


@dataclass
class Example:
    pair_id: str
    premise: list                       # tokens
    hypothesis: list
    premise_pos: list = field(default_factory=list)
    hypothesis_pos: list = field(default_factory=list)
    label: int = -1
    label_name: str = ""
    categories: list = field(default_factory=list)


@dataclass
class IngestReport:
    examples: list
    skipped: int = 0                    # gold_label "-"
    errors: list = field(default_factory=list)   # (line_number, message)


def tokenize(sentence: str) -> list:
    return sentence.lower().split()


def extract_pos_from_parse(parse: str):
    """Pull (tokens, tags) from a constituency parse; leaves are
    "(TAG token)" pairs. Unbalanced parentheses are rejected."""
    pieces = parse.replace("(", " ( ").replace(")", " ) ").split()
    tokens, tags = [], []
    depth = 0
    i = 0
    while i < len(pieces):
        piece = pieces[i]
        if piece == "(":
            depth += 1
            # leaf shape: ( TAG token )
            if (i + 3 < len(pieces) and pieces[i + 1] not in "()"
                    and pieces[i + 2] not in "()" and pieces[i + 3] == ")"):
                tags.append(pieces[i + 1])
                tokens.append(pieces[i + 2].lower())
                depth -= 1
                i += 4
                continue
        elif piece == ")":
            depth -= 1
            if depth < 0:
                raise ValueError("unbalanced parentheses in parse string")
        i += 1
    if depth != 0:
        raise ValueError("unbalanced parentheses in parse string")
    return tokens, tags


def parse_nli_jsonl(path: str, label_map: dict) -> IngestReport:
    """Stream a JSONL file of sentence pairs into Examples.

    Lines with gold_label "-" are skipped and counted; malformed lines are
    recorded with their line number and ingestion continues.
    """
    report = IngestReport(examples=[])
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
                gold = obj["gold_label"]
                if gold == "-":
                    report.skipped += 1
                    continue
                if gold not in label_map:
                    raise ValueError(f"unknown gold_label {gold!r}")
                pair_id = str(obj.get("pairID") or obj.get("pair_id") or f"line-{lineno}")
                if obj.get("sentence1_parse"):
                    prem, prem_pos = extract_pos_from_parse(obj["sentence1_parse"])
                else:
                    prem, prem_pos = tokenize(obj["sentence1"]), []
                if obj.get("sentence2_parse"):
                    hyp, hyp_pos = extract_pos_from_parse(obj["sentence2_parse"])
                else:
                    hyp, hyp_pos = tokenize(obj["sentence2"]), []
                if not prem or not hyp:
                    raise ValueError("empty sentence")
                report.examples.append(Example(
                    pair_id=pair_id, premise=prem, hypothesis=hyp,
                    premise_pos=prem_pos, hypothesis_pos=hyp_pos,
                    label=label_map[gold], label_name=gold,
                    categories=list(obj.get("categories", []))))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                report.errors.append((lineno, str(exc)))
    return report


class Vocab:
    """Token, character, POS and label id spaces. PAD is always 0, OOV 1;
    ids are dense and deterministic for a given corpus."""

    def __init__(self, words: dict, chars: dict, pos: dict, label_map: dict):
        self.words = words
        self.chars = chars
        self.pos = pos
        self.label_map = dict(label_map)
        self.label_names = [name for name, _ in
                            sorted(self.label_map.items(), key=lambda kv: kv[1])]

    @classmethod
    def build(cls, examples: list, label_names: list) -> "Vocab":
        words, chars, pos = set(), set(), set()
        for ex in examples:
            for tok in ex.premise + ex.hypothesis:
                words.add(tok)
                chars.update(tok)
            pos.update(ex.premise_pos)
            pos.update(ex.hypothesis_pos)

        def index(items):
            table = {PAD_TOKEN: PAD, OOV_TOKEN: OOV}
            for i, item in enumerate(sorted(items), start=2):
                table[item] = i
            return table

        label_map = {name: i for i, name in enumerate(label_names)}
        return cls(index(words), index(chars), index(pos), label_map)

    def word_id(self, token: str) -> int:
        return self.words.get(token, OOV)

    def char_ids(self, token: str) -> list:
        return [self.chars.get(c, OOV) for c in token]

    def pos_id(self, tag: str) -> int:
        return self.pos.get(tag, OOV)

    def to_dict(self) -> dict:
        return {"words": self.words, "chars": self.chars, "pos": self.pos,
                "labels": self.label_map}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(d["words"], d["chars"], d["pos"], d["labels"])


def load_pretrained_embeddings(path: str, vocab: Vocab, seed: int = 42):
    """Read whitespace-separated `token v1 ... vd` lines.

    Returns (matrix, coverage) where rows for tokens absent from the file
    are seeded uniform in [-0.05, 0.05] and the PAD row is zero. The matrix
    is a plain array: it never trains.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    wanted = set(vocab.words)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ValueError(f"embedding line {lineno}: expected {dim} values, "
                                 f"got {len(values)}")
            if token in wanted:
                vectors[token] = np.array(values, dtype=np.float32)
    if dim is None:
        raise ValueError(f"no vectors found in {path}")
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.05, 0.05, size=(len(vocab.words), dim)).astype(np.float32)
    matrix[PAD] = 0.0
    found = 0
    for token, idx in vocab.words.items():
        if token in vectors:
            matrix[idx] = vectors[token]
            found += 1
    coverage = found / len(vocab.words)
    return matrix, coverage


def random_embeddings(vocab: Vocab, dim: int, seed: int = 42) -> np.ndarray:
    """Seeded stand-in for pretrained vectors; rows are unit length (like
    well-separated pretrained directions), PAD row zero, still frozen."""
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((len(vocab.words), dim))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    matrix[PAD] = 0.0
    return matrix.astype(np.float32)


@dataclass
class BatchSide:
    word_ids: np.ndarray      # (B, L)
    char_ids: np.ndarray      # (B, L, W)
    pos_ids: np.ndarray       # (B, L)
    mask: np.ndarray          # (B, L) float32
    lengths: np.ndarray       # (B,)
    word_lengths: np.ndarray  # (B, L)
    tokens: list              # list of token lists


@dataclass
class Batch:
    premise: BatchSide
    hypothesis: BatchSide
    labels: np.ndarray
    pair_ids: list


def _encode_side(token_lists, pos_lists, vocab: Vocab, min_chars: int,
                 pad_tokens: int = 0) -> BatchSide:
    batch = len(token_lists)
    max_len = max(len(t) for t in token_lists) + pad_tokens
    max_word = max(min_chars, max((len(tok) for toks in token_lists for tok in toks),
                                  default=min_chars))
    word_ids = np.zeros((batch, max_len), dtype=np.int64)
    char_ids = np.zeros((batch, max_len, max_word), dtype=np.int64)
    pos_ids = np.zeros((batch, max_len), dtype=np.int64)
    mask = np.zeros((batch, max_len), dtype=np.float32)
    lengths = np.zeros(batch, dtype=np.int64)
    word_lengths = np.zeros((batch, max_len), dtype=np.int64)
    for i, tokens in enumerate(token_lists):
        lengths[i] = len(tokens)
        mask[i, :len(tokens)] = 1.0
        tags = pos_lists[i] if i < len(pos_lists) else []
        for j, tok in enumerate(tokens):
            word_ids[i, j] = vocab.word_id(tok)
            cids = vocab.char_ids(tok)[:max_word]
            char_ids[i, j, :len(cids)] = cids
            word_lengths[i, j] = len(cids)
            if j < len(tags):
                pos_ids[i, j] = vocab.pos_id(tags[j])
    return BatchSide(word_ids, char_ids, pos_ids, mask, lengths, word_lengths,
                     [list(t) for t in token_lists])


def batch_examples(examples: list, vocab: Vocab, min_chars: int = 3,
                   pad_tokens: int = 0) -> Batch:
    """Pad a group of examples to its own maximum lengths."""
    premise = _encode_side([e.premise for e in examples],
                           [e.premise_pos for e in examples], vocab, min_chars,
                           pad_tokens)
    hypothesis = _encode_side([e.hypothesis for e in examples],
                              [e.hypothesis_pos for e in examples], vocab,
                              min_chars, pad_tokens)
    labels = np.array([e.label for e in examples], dtype=np.int64)
    return Batch(premise, hypothesis, labels, [e.pair_id for e in examples])


def _bucket_of(example: Example) -> int:
    n = max(len(example.premise), len(example.hypothesis))
    for i, bound in enumerate(BUCKET_BOUNDS):
        if n <= bound:
            return i
    return len(BUCKET_BOUNDS)


def make_batches(examples: list, vocab: Vocab, batch_size: int,
                 bucketing: bool = True, seed: int = 0, min_chars: int = 3):
    """Yield padded batches; examples are shuffled within length buckets by
    the seed and every example appears exactly once."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = random.Random(seed)
    if bucketing:
        buckets: dict[int, list] = {}
        for ex in examples:
            buckets.setdefault(_bucket_of(ex), []).append(ex)
        groups = [buckets[k] for k in sorted(buckets)]
        for group in groups:
            rng.shuffle(group)
        ordered = [ex for group in groups for ex in group]
        batches = [ordered[i:i + batch_size]
                   for i in range(0, len(ordered), batch_size)]
        rng.shuffle(batches)
    else:
        batches = [examples[i:i + batch_size]
                   for i in range(0, len(examples), batch_size)]
    for group in batches:
        yield batch_examples(group, vocab, min_chars)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_SUBJECTS = ["man", "woman", "dog", "cat", "boy", "girl", "bird", "horse",
             "farmer", "singer", "child", "teacher", "rabbit", "painter",
             "sailor", "runner", "doctor", "baker", "dancer", "pilot"]
_MODIFIERS = ["small", "big", "old", "young", "happy", "tall", "quiet", "red",
              "green", "slow", "fast", "bright", "heavy", "light", "round",
              "soft", "loud", "calm", "brave", "shy", "clever", "plain",
              "fancy", "rough", "smooth", "warm", "cold", "tiny", "grand",
              "lazy"]
_OBJECTS = ["door", "book", "ball", "box", "car", "kite", "song", "tree",
            "lamp", "chair", "table", "wheel", "clock", "fence", "boat",
            "glass", "stone", "flag", "drum", "rope"]
_VERB_ANTONYMS = [("likes", "hates"), ("opens", "closes"), ("buys", "sells"),
                  ("raises", "lowers"), ("remembers", "forgets"),
                  ("finds", "loses"), ("builds", "destroys"), ("starts", "stops"),
                  ("fills", "empties"), ("gathers", "scatters"),
                  ("accepts", "rejects"), ("attaches", "removes")]
_OBJECT_ANTONYMS = [("door", "window"), ("book", "letter"), ("ball", "cube"),
                    ("box", "bag"), ("car", "bike"), ("kite", "balloon"),
                    ("song", "poem"), ("tree", "bush"), ("lamp", "candle"),
                    ("chair", "bench"), ("table", "desk"), ("wheel", "gear"),
                    ("clock", "watch"), ("fence", "wall"), ("boat", "raft"),
                    ("glass", "cup"), ("stone", "brick"), ("flag", "banner"),
                    ("drum", "bell"), ("rope", "chain")]
_PREPOSITIONS = ["near", "behind", "beside", "under"]
_PLACES = ["lake", "barn", "bridge", "market", "garden", "hill", "station",
           "harbor"]

LABEL_ENTAILMENT, LABEL_NEUTRAL, LABEL_CONTRADICTION = \
    "entailment", "neutral", "contradiction"


class _Clause:
    """One `the [adj] subj verb the [adj] obj [prep the place]` clause."""

    def __init__(self, rng: random.Random, subject: str, verb_pair: tuple,
                 object_pair: tuple):
        self.subject = subject
        self.verb = rng.choice(verb_pair)
        self.obj = rng.choice(object_pair)
        adjs = rng.sample(_MODIFIERS, 2)
        self.subj_adj = adjs[0] if rng.random() < 0.6 else None
        self.obj_adj = adjs[1] if rng.random() < 0.6 else None
        if self.subj_adj is None and self.obj_adj is None:
            self.subj_adj = adjs[0]
        self.tail = ([rng.choice(_PREPOSITIONS), "the", rng.choice(_PLACES)]
                     if rng.random() < 0.5 else [])

    def copy(self) -> "_Clause":
        dup = object.__new__(_Clause)
        dup.__dict__.update(self.__dict__)
        dup.tail = list(self.tail)
        return dup

    def modifiers(self) -> list:
        return [m for m in (self.subj_adj, self.obj_adj) if m]

    def words(self) -> list:
        out = ["the"]
        if self.subj_adj:
            out.append(self.subj_adj)
        out += [self.subject, self.verb, "the"]
        if self.obj_adj:
            out.append(self.obj_adj)
        out.append(self.obj)
        return out + self.tail


def generate_synthetic(n: int, seed: int = 42) -> list:
    """Templated three-class corpus with exactly balanced labels.

    The premise conjoins two or three clauses about distinct subjects; the
    hypothesis restates one of them with a single edit that fixes the label:
    entailment drops a modifier, contradiction swaps the verb or object for
    its designated antonym, neutral adds a modifier unseen anywhere in the
    premise. Premise length varies with the untouched clauses, so sentence
    length and unigram counts do not give the class away; the edit is only
    visible against the aligned clause.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    order = [LABEL_ENTAILMENT, LABEL_NEUTRAL, LABEL_CONTRADICTION]
    examples = []
    for i in range(n):
        label = order[i % 3]
        n_clauses = 2 if rng.random() < 0.7 else 3
        subjects = rng.sample(_SUBJECTS, n_clauses)
        # distinct antonym pairs per clause, so a swapped word never
        # collides with vocabulary used elsewhere in the premise
        verb_pairs = rng.sample(_VERB_ANTONYMS, n_clauses)
        object_pairs = rng.sample(_OBJECT_ANTONYMS, n_clauses)
        clauses = [_Clause(rng, s, vp, op)
                   for s, vp, op in zip(subjects, verb_pairs, object_pairs)]
        premise: list = []
        for k, clause in enumerate(clauses):
            premise += (["and"] if k else []) + clause.words()

        hyp = rng.choice(clauses).copy()
        if label == LABEL_ENTAILMENT:
            if hyp.subj_adj and (not hyp.obj_adj or rng.random() < 0.5):
                hyp.subj_adj = None
            else:
                hyp.obj_adj = None
        elif label == LABEL_CONTRADICTION:
            if rng.random() < 0.5:
                pair = next(p for p in _VERB_ANTONYMS if hyp.verb in p)
                hyp.verb = pair[1] if pair[0] == hyp.verb else pair[0]
            else:
                pair = next(p for p in _OBJECT_ANTONYMS if hyp.obj in p)
                hyp.obj = pair[1] if pair[0] == hyp.obj else pair[0]
        else:
            seen = {m for c in clauses for m in c.modifiers()}
            new_adj = rng.choice([m for m in _MODIFIERS if m not in seen])
            empty = [s for s in ("subj_adj", "obj_adj") if getattr(hyp, s) is None]
            slot = rng.choice(empty) if empty else rng.choice(["subj_adj",
                                                               "obj_adj"])
            setattr(hyp, slot, new_adj)
        examples.append(Example(
            pair_id=f"synth-{i:05d}", premise=premise, hypothesis=hyp.words(),
            label=order.index(label), label_name=label))
    return examples


def write_jsonl(examples: list, path: str):
    """Emit examples in the ingestion schema (parse fields omitted)."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "pairID": ex.pair_id,
                "gold_label": ex.label_name,
                "sentence1": " ".join(ex.premise),
                "sentence2": " ".join(ex.hypothesis),
            }) + "\n")
