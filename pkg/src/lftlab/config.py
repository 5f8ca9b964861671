"""Experiment configuration: a flat key = value file with a typed registry.

Unknown keys are rejected and missing required keys are reported together.
``--set key=value`` overrides are applied after the file is read.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class KeySpec:
    kind: str  # int | float | str | choice
    default: object = None
    choices: tuple[str, ...] = ()
    required: bool = False


REGISTRY: dict[str, KeySpec] = {
    "model": KeySpec("choice", choices=("mono", "twin", "colbert"), required=True),
    "binding": KeySpec("choice", "siamese",
                       choices=("cross", "siamese", "semi_siamese", "hetero_full")),
    "lft.method": KeySpec("choice", required=True,
                          choices=("full", "prompt", "prefix", "lora", "lora_plus",
                                   "hybrid")),
    "lft.prompt_len": KeySpec("int", 10),
    "lft.prefix_len": KeySpec("int", 10),
    "lft.source_dim": KeySpec("int", 768),
    "lft.mlp_hidden": KeySpec("int", 256),
    "lft.rank": KeySpec("int", 16),
    "lft.alpha": KeySpec("float", 32.0),
    "lft.dropout": KeySpec("float", 0.1),
    "lft.hybrid.first": KeySpec("choice", "prefix", choices=("prompt", "prefix", "lora",
                                                             "lora_plus")),
    "lft.hybrid.second": KeySpec("choice", "lora", choices=("prompt", "prefix", "lora",
                                                            "lora_plus")),
    "lft.hybrid.mode": KeySpec("choice", "sequential",
                               choices=("sequential", "concurrent")),
    "lft.hybrid.m": KeySpec("int", 30),
    "lft.hybrid.n": KeySpec("int", 10),
    "ss.prefix": KeySpec("choice", "average",
                         choices=("shared", "average", "concat", "none", "off")),
    "ss.lora": KeySpec("choice", "shared_q",
                       choices=("shared", "shared_q", "shared_v", "hetero_both", "off")),
    "ss.common_len": KeySpec("int", 5),
    "encoder.layers": KeySpec("int", 2),
    "encoder.dim": KeySpec("int", 64),
    "encoder.heads": KeySpec("int", 4),
    "encoder.ffn_dim": KeySpec("int", 256),
    "encoder.vocab_size": KeySpec("int", 0),  # 0: use the corpus vocabulary size
    "encoder.max_seq_len": KeySpec("int", 96),
    "encoder.dropout": KeySpec("float", 0.1),
    "ranker.colbert_dim": KeySpec("int", 32),
    "train.batch_size": KeySpec("int", 16),
    "train.max_epochs": KeySpec("int", 10),
    "train.lr.ranker": KeySpec("float", 1e-4),
    "train.lr.encoder": KeySpec("float", 2e-5),
    "train.lr.prefix": KeySpec("float", 1e-4),
    "train.lr.lora": KeySpec("float", 1e-4),
    "train.val_k": KeySpec("int", 10),
    "eval.folds": KeySpec("int", 5),
    "eval.rotation": KeySpec("int", 0),
    "corpus.topics": KeySpec("int", 5),
    "corpus.docs": KeySpec("int", 200),
    "corpus.queries": KeySpec("int", 40),
    "corpus.candidates": KeySpec("int", 20),
    "corpus.regime": KeySpec("choice", "short", choices=("short", "long")),
    "corpus.vocab": KeySpec("int", 200),
    "corpus.doc_mean": KeySpec("float", 40.0),
    "corpus.doc_spread": KeySpec("float", 12.0),
    "pretrain.steps": KeySpec("int", 500),
    "pretrain.batch_size": KeySpec("int", 16),
    "pretrain.mask_prob": KeySpec("float", 0.15),
    "pretrain.lr": KeySpec("float", 1e-3),
    "pretrain.max_len": KeySpec("int", 48),
    "seed": KeySpec("int", 7),
    "precision": KeySpec("choice", "f32", choices=("f32", "f64")),
    "tag": KeySpec("str", "lftlab"),
    "paths.corpus": KeySpec("str", "corpus"),
    "paths.encoder": KeySpec("str", "encoder.ckpt"),
    "paths.model": KeySpec("str", "model.ckpt"),
    "paths.run": KeySpec("str", "test.run"),
    "paths.log": KeySpec("str", "train.log"),
}


class ExperimentConfig:
    def __init__(self, values: dict[str, object]):
        self._values = values

    def __getitem__(self, key: str):
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def with_overrides(self, **by_key) -> "ExperimentConfig":
        merged = dict(self._values)
        merged.update(by_key)
        return ExperimentConfig(merged)

    def items(self):
        return self._values.items()


def _convert(key: str, raw: str, spec: KeySpec):
    raw = raw.strip()
    try:
        if spec.kind == "int":
            return int(raw)
        if spec.kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected {spec.kind}, got {raw!r}") from None
    if spec.kind == "choice" and raw not in spec.choices:
        raise ConfigError(
            f"config key {key!r}: {raw!r} not one of {'/'.join(spec.choices)}")
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        pairs[key] = value.strip()
    return pairs


def load_config(path: str | None, sets: list[str] | None = None) -> ExperimentConfig:
    pairs: dict[str, str] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            pairs = parse_config_text(fh.read(), source=path)
    for assignment in sets or []:
        if "=" not in assignment:
            raise ConfigError(f"--set needs key=value, got {assignment!r}")
        key, value = assignment.split("=", 1)
        pairs[key.strip()] = value.strip()

    unknown = sorted(set(pairs) - set(REGISTRY))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(k for k, spec in REGISTRY.items()
                     if spec.required and k not in pairs)
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")

    values: dict[str, object] = {}
    for key, spec in REGISTRY.items():
        if key in pairs:
            values[key] = _convert(key, pairs[key], spec)
        else:
            values[key] = spec.default
    return ExperimentConfig(values)
