"""INI-style run configuration.

Any section names may be used (``[model]``, ``[train]`` ...) or none at all;
keys are flat and must be unique. Command-line flags override file values.

Recognized keys::

    seed
    ratio, common_threshold, singleton_max_frac, scheme          curation
    embed_dim, window, stride, channels, output_dim, max_len      model
    margin, learning_rate, adam_beta1, adam_beta2, adam_eps,
    clip_lo, clip_hi, labels_per_batch, functions_per_epoch,
    epochs                                                        training
    index_kind, k, hnsw_m, hnsw_ef_construction, hnsw_ef_search   retrieval
    schemes, pool_sizes, pool_queries                             evaluation
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .curation import SCHEMES
from .model import ModelConfig
from .retrieval import IndexConfig
from .training import TrainConfig

CURATION_KEYS = {"ratio": float, "common_threshold": float, "singleton_max_frac": float, "scheme": str}
MODEL_KEYS = {f.name: int for f in fields(ModelConfig) if f.name != "vocab_size"}
TRAIN_KEYS = {f.name: (int if f.type in ("int", int) else float) for f in fields(TrainConfig) if f.name != "seed"}
INDEX_KEYS = {"index_kind": str, "k": int, "hnsw_m": int, "hnsw_ef_construction": int, "hnsw_ef_search": int}
EVAL_KEYS = {"schemes": str, "pool_sizes": str, "pool_queries": int}
ALL_KEYS = {"seed": int, **CURATION_KEYS, **MODEL_KEYS, **TRAIN_KEYS, **INDEX_KEYS, **EVAL_KEYS}


class ConfigError(ValueError):
    pass


def read_config_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=(";",))
    try:
        parser.read_string(text if text.lstrip().startswith("[") else "[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    flat: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in flat:
                raise ConfigError(f"{path}: key {key!r} given twice")
            flat[key] = value
    return flat


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    explicit: set = field(default_factory=set)

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        raw = read_config_file(path) if path else {}
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        values = {}
        for key, value in raw.items():
            if key not in ALL_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                values[key] = ALL_KEYS[key](value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
        if "scheme" in values and values["scheme"] not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        return cls(values, set(values))

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int | None:
        return self.values.get("seed")

    def model_config(self, base: ModelConfig | None = None) -> ModelConfig:
        d = (base or ModelConfig()).to_dict()
        d.update({k: self.values[k] for k in MODEL_KEYS if k in self.values})
        try:
            return ModelConfig.from_dict(d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def requested_model_keys(self) -> dict:
        return {k: self.values[k] for k in MODEL_KEYS if k in self.values}

    def train_config(self) -> TrainConfig:
        d = {k: self.values[k] for k in TRAIN_KEYS if k in self.values}
        d["seed"] = self.seed if self.seed is not None else 0
        try:
            return TrainConfig.from_dict(d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def index_config(self) -> IndexConfig:
        kind = self.values.get("index_kind", "auto")
        try:
            return IndexConfig(
                kind=None if kind in ("auto", "Auto", "") else kind,
                k=self.values.get("k", 30),
                hnsw_m=self.values.get("hnsw_m", 32),
                hnsw_ef_construction=self.values.get("hnsw_ef_construction", 200),
                hnsw_ef_search=self.values.get("hnsw_ef_search", 128),
                seed=self.seed or 0,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def curation_kwargs(self) -> dict:
        return {
            "ratio": self.values.get("ratio", 0.8),
            "common_threshold": self.values.get("common_threshold", 0.5),
            "singleton_max_frac": self.values.get("singleton_max_frac", 0.05),
            "scheme": self.values.get("scheme", "None"),
        }

    def list_of(self, key, cast=str) -> list:
        raw = self.values.get(key)
        if raw is None:
            return []
        try:
            return [cast(x.strip()) for x in str(raw).split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad list for {key!r}: {raw!r}") from exc
