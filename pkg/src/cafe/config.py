"""Model and training configuration, plus the flat key=value config file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass
class ModelConfig:
    """Every architectural and training knob, ablation switches included."""

    # architecture
    d_model: int = 300
    lstm_hidden: int = 300
    fm_factors: int = 10
    num_classes: int = 3
    pooling: str = "avgmax"            # avgmax | sum | avg | max
    prediction_head: str = "highway"   # highway | dense
    head_width: int = 300
    head_depth: int = 2
    comparison: str = "fm"             # fm | fc-linear-1 | fc-relu-1 | fc-relu-2
    comparison_hidden: int = 0         # hidden width for fc-relu scorers; 0 -> d_model
    attn_proj_dim: int = 0             # width of the F/G projections; 0 -> d_model
    bidirectional: bool = False
    encoder_style: str = "highway"     # highway | dense
    share_intra_projection: bool = True

    # input channels
    word_dim: int = 300
    use_char: bool = True
    char_dim: int = 16
    char_window: int = 3
    char_filters: int = 50
    use_pos: bool = True
    pos_dim: int = 20

    # feature channels
    use_inter_attention: bool = True
    include_intra_vector: bool = True
    feature_ops: str = "cat,sub,mul"   # subset, comma separated

    # training
    dropout_keep: float = 0.8
    l2_lambda: float = 1e-6
    learning_rate: float = 0.0003
    batch_size: int = 256
    epochs: int = 30
    patience: int = 5
    clip_norm: float = 5.0
    seed: int = 42
    labels: str = "entailment,neutral,contradiction"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.num_classes != len(self.label_names()):
            raise ValueError(f"num_classes={self.num_classes} does not match "
                             f"labels {self.labels!r}")
        for name in ("d_model", "lstm_hidden", "fm_factors", "head_width",
                     "head_depth", "word_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pooling not in ("avgmax", "sum", "avg", "max"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.comparison not in ("fm", "fc-linear-1", "fc-relu-1", "fc-relu-2"):
            raise ValueError(f"unknown comparison {self.comparison!r}")
        if self.prediction_head not in ("highway", "dense"):
            raise ValueError(f"unknown prediction head {self.prediction_head!r}")
        if self.encoder_style not in ("highway", "dense"):
            raise ValueError(f"unknown encoder style {self.encoder_style!r}")
        ops = self.enabled_ops()
        if not ops or any(op not in ("cat", "sub", "mul") for op in ops):
            raise ValueError(f"feature_ops must be a nonempty subset of cat,sub,mul, "
                             f"got {self.feature_ops!r}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValueError("dropout_keep must be in (0, 1]")

    def enabled_ops(self) -> tuple:
        return tuple(s.strip() for s in self.feature_ops.split(",") if s.strip())

    def label_names(self) -> list:
        return [s.strip() for s in self.labels.split(",") if s.strip()]

    @property
    def proj_dim(self) -> int:
        return self.attn_proj_dim or self.d_model

    @property
    def fc_hidden(self) -> int:
        return self.comparison_hidden or self.d_model

    def augmented_dim(self) -> int:
        n_ops = len(self.enabled_ops())
        dim = self.d_model + n_ops                      # intra scalars
        if self.use_inter_attention:
            dim += n_ops                                # inter scalars
        if self.include_intra_vector:
            dim += self.d_model
        return dim

    def encoder_out_dim(self) -> int:
        return self.lstm_hidden * (2 if self.bidirectional else 1)

    def pooled_dim(self) -> int:
        width = self.encoder_out_dim()
        return 2 * width if self.pooling == "avgmax" else width

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


def _coerce(name: str, text: str, target_type):
    if target_type is bool:
        lowered = text.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {name!r}: cannot parse boolean from {text!r}")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text.strip()


def _field_types() -> dict:
    return {f.name: f.type for f in dataclasses.fields(ModelConfig)}


_PY_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def parse_config_text(text: str, base: ModelConfig | None = None) -> ModelConfig:
    """Parse flat `key = value` lines; '#' starts a comment."""
    values = (base or ModelConfig()).to_dict()
    types = _field_types()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        py_type = _PY_TYPES.get(types[key], str) if isinstance(types[key], str) else types[key]
        values[key] = _coerce(key, value, py_type)
    return ModelConfig.from_dict(values)


def load_config(path: str, base: ModelConfig | None = None) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def apply_overrides(config: ModelConfig, overrides: list) -> ModelConfig:
    """Apply `--set key=value` strings on top of a config."""
    values = config.to_dict()
    types = _field_types()
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r}: expected key=value")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in types:
            raise ValueError(f"override: unknown config key {key!r}")
        py_type = _PY_TYPES.get(types[key], str) if isinstance(types[key], str) else types[key]
        values[key] = _coerce(key, value, py_type)
    return ModelConfig.from_dict(values)
