"""The REFuSe byte-level embedding network.

bytes -> byte embedding -> two parallel strided 1-D convolutions, one passed
through a sigmoid and multiplied into the other -> temporal max-pool ->
one linear layer. The output is left unnormalized.

Parameters are stored as float32; all arithmetic runs in float64.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import CorruptCheckpointError, EmptyFunctionError, VersionError

PAD = 256
FORMAT_VERSION = 1
EPS = 1e-12
TENSOR_NAMES = ("E", "W_a", "b_a", "W_g", "b_g", "W_fc", "b_fc")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 257
    embed_dim: int = 8
    window: int = 8
    stride: int = 8
    channels: int = 128
    output_dim: int = 128
    max_len: int = 16384

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be >= 1")
        if self.window != self.stride:
            raise ValueError("window and stride must be equal (non-overlapping windows)")
        if self.max_len < self.window:
            raise ValueError("max_len must be at least one window")
        if self.vocab_size != PAD + 1:
            raise ValueError(f"vocab_size must be {PAD + 1} (256 byte values plus PAD)")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        C, w, D, O = self.channels, self.window, self.embed_dim, self.output_dim
        return {
            "E": (self.vocab_size, D),
            "W_a": (C, w, D),
            "b_a": (C,),
            "W_g": (C, w, D),
            "b_g": (C,),
            "W_fc": (O, C),
            "b_fc": (O,),
        }

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in d.items() if k in known})


@dataclass
class ModelParameters:
    E: np.ndarray
    W_a: np.ndarray
    b_a: np.ndarray
    W_g: np.ndarray
    b_g: np.ndarray
    W_fc: np.ndarray
    b_fc: np.ndarray

    def tensors(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in TENSOR_NAMES]

    def items(self):
        return [(n, getattr(self, n)) for n in TENSOR_NAMES]

    def astype(self, dtype) -> "ModelParameters":
        return ModelParameters(*(np.ascontiguousarray(t, dtype=dtype) for t in self.tensors()))

    def copy(self) -> "ModelParameters":
        return ModelParameters(*(t.copy() for t in self.tensors()))

    def zeros_like(self, dtype=np.float64) -> "ModelParameters":
        return ModelParameters(*(np.zeros(t.shape, dtype=dtype) for t in self.tensors()))

    def equals(self, other: "ModelParameters") -> bool:
        return all(
            a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(self.tensors(), other.tensors())
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, config: ModelConfig, dtype=np.float64) -> "ModelParameters":
        out, off = [], 0
        for name in TENSOR_NAMES:
            shape = config.shapes()[name]
            n = int(np.prod(shape))
            out.append(np.asarray(vec[off:off + n], dtype=dtype).reshape(shape).copy())
            off += n
        return cls(*out)


ParamGrads = ModelParameters


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParameters:
    """Uniform init: E in (-0.05, 0.05), weights Glorot-uniform, biases zero.

    Convolution fan-in is window*embed_dim and fan-out is channels.
    """
    rng = np.random.default_rng(seed)
    s = config.shapes()
    C, O = config.channels, config.output_dim
    conv_fan_in = config.window * config.embed_dim

    def glorot(shape, fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=shape)

    E = rng.uniform(-0.05, 0.05, size=s["E"])
    W_a = glorot(s["W_a"], conv_fan_in, C)
    W_g = glorot(s["W_g"], conv_fan_in, C)
    W_fc = glorot(s["W_fc"], C, O)
    p = ModelParameters(E, W_a, np.zeros(C), W_g, np.zeros(C), W_fc, np.zeros(O))
    return p.astype(dtype)


def pad_and_truncate(data: bytes | Sequence[int], config: ModelConfig) -> np.ndarray:
    """Token ids: truncate to max_len, then PAD up to a whole number of windows."""
    if len(data) == 0:
        raise EmptyFunctionError("cannot embed an empty function")
    raw = np.frombuffer(bytes(data[: config.max_len]), dtype=np.uint8)
    n = len(raw)
    padded = -(-n // config.window) * config.window
    tokens = np.full(padded, PAD, dtype=np.int64)
    tokens[:n] = raw
    return tokens


@dataclass
class _ItemCache:
    tokens: np.ndarray
    pooled: np.ndarray
    win: np.ndarray
    a_win: np.ndarray
    g_win: np.ndarray


def _flat_conv(p: ModelParameters):
    C = p.W_a.shape[0]
    return p.W_a.reshape(C, -1), p.W_g.reshape(C, -1)


def _tables(p64: ModelParameters, config: ModelConfig):
    """Per-call lookup tables; the convolution over byte tokens becomes table sums."""
    Wa, Wg = _flat_conv(p64)
    return _kernels.token_tables(p64.E, Wa, Wg, config.window)


def _forward_item(p64: ModelParameters, config: ModelConfig, data, tables) -> tuple[np.ndarray, _ItemCache]:
    tokens = pad_and_truncate(data, config)
    pooled, win, a_win, g_win = _kernels.gated_pool_forward(
        tokens, tables[0], tables[1], p64.b_a, p64.b_g, config.window
    )
    out = p64.W_fc @ pooled + p64.b_fc
    return out, _ItemCache(tokens, pooled, win, a_win, g_win)


def _config_of(params: ModelParameters, config: ModelConfig | None) -> ModelConfig:
    if config is not None:
        return config
    C, w, D = params.W_a.shape
    # stride == window by construction; max_len is not recoverable from shapes
    return ModelConfig(embed_dim=D, window=w, stride=w, channels=C, output_dim=params.W_fc.shape[0])


def forward(params: ModelParameters, data, config: ModelConfig | None = None) -> np.ndarray:
    config = _config_of(params, config)
    p64 = params.astype(np.float64)
    out, _ = _forward_item(p64, config, data, _tables(p64, config))
    return out


def forward_batch(params: ModelParameters, batch: Sequence, config: ModelConfig | None = None) -> np.ndarray:
    """Embed each item independently; row i is exactly ``forward(params, batch[i])``."""
    config = _config_of(params, config)
    p64 = params.astype(np.float64)
    out = np.empty((len(batch), config.output_dim), dtype=np.float64)
    tables = _tables(p64, config)
    for i, data in enumerate(batch):
        try:
            out[i], _ = _forward_item(p64, config, data, tables)
        except EmptyFunctionError as exc:
            raise EmptyFunctionError(f"batch item {i}: {exc}") from exc
    return out


def forward_with_cache(p64: ModelParameters, config: ModelConfig, batch: Sequence):
    embs = np.empty((len(batch), config.output_dim), dtype=np.float64)
    caches = []
    tables = _tables(p64, config)
    for i, data in enumerate(batch):
        embs[i], c = _forward_item(p64, config, data, tables)
        caches.append(c)
    return embs, caches


def backward_from_embedding_grads(
    p64: ModelParameters, config: ModelConfig, caches: list[_ItemCache], d_emb: np.ndarray
) -> ParamGrads:
    """Back-propagate dLoss/d(embedding) for every batch item, in item order."""
    g = p64.zeros_like()
    Wa, Wg = _flat_conv(p64)
    dWa, dWg = g.W_a.reshape(Wa.shape), g.W_g.reshape(Wg.shape)
    for i, c in enumerate(caches):
        de = d_emb[i]
        if not np.any(de):
            continue
        g.W_fc += np.outer(de, c.pooled)
        g.b_fc += de
        dpooled = p64.W_fc.T @ de
        _kernels.gated_pool_backward(
            c.tokens, c.win, c.a_win, c.g_win, dpooled, p64.E, Wa, Wg, config.window,
            g.E, dWa, g.b_a, dWg, g.b_g,
        )
    return g


def pairwise_cosine_distances(embs: np.ndarray, eps: float = EPS) -> np.ndarray:
    norms = np.sqrt((embs * embs).sum(axis=1)) + eps
    dots = embs @ embs.T
    dist = 1.0 - dots / np.outer(norms, norms)
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


def _cosine_grad(u, v, eps=EPS):
    """d/du of 1 - u.v / ((|u|+eps)(|v|+eps))."""
    nu = np.sqrt(u @ u)
    nv = np.sqrt(v @ v)
    Nu, Nv = nu + eps, nv + eps
    s = u @ v
    g = -v / (Nu * Nv)
    if nu > 0:
        g = g + (s / (Nu * Nu * Nv * nu)) * u
    return g


@dataclass
class TripletBatch:
    """Batch inputs plus mined (anchor, positive, negative) index triples."""

    inputs: list
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    categories: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.anchors)


def triplet_loss_from_embeddings(embs: np.ndarray, batch: TripletBatch, margin: float,
                                 dist: np.ndarray | None = None):
    """Mean hinge loss over the given triplets and its gradient w.r.t. the embeddings."""
    d_emb = np.zeros_like(embs)
    n_t = len(batch.anchors)
    if n_t == 0:
        return 0.0, d_emb
    if dist is None:
        dist = pairwise_cosine_distances(embs)
    total = 0.0
    scale = 1.0 / n_t
    for a, p, n in zip(batch.anchors, batch.positives, batch.negatives):
        h = dist[a, p] - dist[a, n] + margin
        if h <= 0.0:
            continue
        total += h
        u, v, w = embs[a], embs[p], embs[n]
        d_emb[a] += scale * (_cosine_grad(u, v) - _cosine_grad(u, w))
        d_emb[p] += scale * _cosine_grad(v, u)
        d_emb[n] -= scale * _cosine_grad(w, u)
    return total * scale, d_emb


def loss_and_grad(params: ModelParameters, batch: TripletBatch, margin: float,
                  config: ModelConfig | None = None) -> tuple[float, ParamGrads]:
    """Triplet loss over ``batch`` and its exact gradient w.r.t. every parameter.

    Max-pool routes the gradient to the first (lowest-index) maximizing
    window only.
    """
    if margin <= 0:
        raise ValueError("margin must be positive")
    config = _config_of(params, config)
    p64 = params.astype(np.float64)
    if len(batch.anchors) == 0:
        return 0.0, p64.zeros_like()
    embs, caches = forward_with_cache(p64, config, batch.inputs)
    loss, d_emb = triplet_loss_from_embeddings(embs, batch, margin)
    return loss, backward_from_embedding_grads(p64, config, caches, d_emb)


# -- checkpoints -------------------------------------------------------------

HEADER = "header.json"
PARAMS = "params.bin"
OPTIM = "optimizer.bin"


def _tensor_table(params: ModelParameters, itemsize: int):
    table, off = [], 0
    for name, t in params.items():
        nbytes = int(t.size) * itemsize
        table.append({"name": name, "shape": list(t.shape), "offset": off, "nbytes": nbytes})
        off += nbytes
    return table, off


def save_checkpoint(
    params: ModelParameters,
    config: ModelConfig,
    path: str | os.PathLike,
    seed: int | None = None,
    provenance: dict | None = None,
    optimizer: tuple[list[np.ndarray], list[np.ndarray], int] | None = None,
    extra: dict | None = None,
) -> Path:
    """Write ``header.json`` + ``params.bin`` (little-endian float32) into ``path``.

    ``optimizer`` is an optional (first moments, second moments, step)
    triple stored as little-endian float64 in ``optimizer.bin`` so an
    interrupted run can resume exactly.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    p32 = params.astype(np.float32)
    table, total = _tensor_table(p32, 4)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "dtype": "<f4",
        "tensors": table,
        "total_bytes": total,
        "seed": seed,
        "provenance": provenance or {},
    }
    if optimizer is not None:
        m, v, step = optimizer
        header["optimizer"] = {"file": OPTIM, "dtype": "<f8", "step": int(step)}
        with open(path / OPTIM, "wb") as fh:
            for arr in list(m) + list(v):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    elif (path / OPTIM).exists():
        (path / OPTIM).unlink()
    if extra:
        header.update(extra)
    with open(path / PARAMS, "wb") as fh:
        for t in p32.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    with open(path / HEADER, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_header(path: str | os.PathLike) -> dict:
    path = Path(path)
    try:
        with open(path / HEADER, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except FileNotFoundError as exc:
        raise CorruptCheckpointError(f"{path}: missing {HEADER}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable {HEADER}") from exc
    if not isinstance(header, dict) or "format_version" not in header:
        raise CorruptCheckpointError(f"{path}: header lacks format_version")
    if header["format_version"] != FORMAT_VERSION:
        raise VersionError(
            f"{path}: checkpoint format {header['format_version']!r}, expected {FORMAT_VERSION}"
        )
    return header


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelParameters, ModelConfig]:
    path = Path(path)
    header = read_header(path)
    try:
        config = ModelConfig.from_dict(header["config"])
        table = header["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: invalid config in header ({exc})") from exc
    expected = config.shapes()
    if [t.get("name") for t in table] != list(TENSOR_NAMES):
        raise CorruptCheckpointError(f"{path}: tensor list does not match the model layout")
    off = 0
    for t in table:
        shape = tuple(t["shape"])
        if shape != expected[t["name"]]:
            raise CorruptCheckpointError(
                f"{path}: tensor {t['name']} has shape {shape}, config implies {expected[t['name']]}"
            )
        if t["offset"] != off or t["nbytes"] != 4 * int(np.prod(shape)):
            raise CorruptCheckpointError(f"{path}: bad offset/size for tensor {t['name']}")
        off += t["nbytes"]
    try:
        blob = (path / PARAMS).read_bytes()
    except FileNotFoundError as exc:
        raise CorruptCheckpointError(f"{path}: missing {PARAMS}") from exc
    if len(blob) != off:
        raise CorruptCheckpointError(f"{path}: {PARAMS} holds {len(blob)} bytes, header expects {off}")
    arrays = []
    for t in table:
        arr = np.frombuffer(blob, dtype="<f4", count=t["nbytes"] // 4, offset=t["offset"])
        arrays.append(arr.astype(np.float32).reshape(t["shape"]))
    params = ModelParameters(*arrays)
    if not all(np.isfinite(a).all() for a in arrays):
        raise CorruptCheckpointError(f"{path}: non-finite parameter values")
    return params, config


def load_optimizer_state(path: str | os.PathLike, params: ModelParameters):
    """Return (first moments, second moments, step) or None if none was saved."""
    path = Path(path)
    header = read_header(path)
    info = header.get("optimizer")
    if not info:
        return None
    blob = (path / info["file"]).read_bytes()
    sizes = [t.size for t in params.tensors()]
    if len(blob) != 2 * 8 * sum(sizes):
        raise CorruptCheckpointError(f"{path}: optimizer state has wrong size")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    arrays, off = [], 0
    for _ in range(2):
        for t in params.tensors():
            arrays.append(flat[off:off + t.size].reshape(t.shape).copy())
            off += t.size
    k = len(sizes)
    return arrays[:k], arrays[k:], int(info["step"])


def checkpoint_digest(path: str | os.PathLike) -> str:
    """SHA-256 over the header and parameter blob."""
    path = Path(path)
    read_header(path)
    h = hashlib.sha256()
    for name in (HEADER, PARAMS):
        try:
            h.update((path / name).read_bytes())
        except FileNotFoundError as exc:
            raise CorruptCheckpointError(f"{path}: missing {name}") from exc
    return h.hexdigest()
