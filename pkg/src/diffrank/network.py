"""The conditional denoiser: document encoder plus noisy-label head.

encode() turns a query's document-feature matrix into per-document
context vectors. With attention enabled each block is a pre-norm
transformer layer (multi-head self-attention over the documents of the
query, then a feed-forward sublayer); there is deliberately no positional
signal, so the encoder is equivariant to document order. With attention
disabled the blocks keep only their feed-forward half and documents never
see each other.

denoise() consumes the context vectors together with the noisy label
column and the embedded timestep: every hidden layer is
Linear -> softplus -> dropout, gated elementwise by the timestep
embedding; the output layer produces one activation per relevance grade,
and a softmax turns them into weights over the grades 0..G-1 whose
weighted sum is the predicted clean label, guaranteed to stay inside
[0, G-1].

Checkpoints are a self-describing binary: magic, version, a JSON header
(model config, schedule spec, dtype, parameter manifest), then raw
parameter blobs in manifest order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    CacheCorruptionError,
    ConfigError,
    IncompatibilityError,
    ShapeError,
)
from .schedule import ScheduleSpec

_CKPT_MAGIC = b"DRCKPTF\x00"
_CKPT_VERSION = 1

ATTENTION_MASK_BIAS = -1e9


@dataclass(frozen=True)
class ModelConfig:
    k: int
    d_model: int = 128
    heads: int = 4
    blocks: int = 3
    denoise_layers: int = 2
    dropout_p: float = 0.1
    use_attention: bool = True
    num_grades: int = 5

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.d_model < 1:
            raise ConfigError(f"d_model must be positive, got {self.d_model}")
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by heads ({self.heads})"
            )
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if self.denoise_layers < 2:
            raise ConfigError(
                f"denoise_layers must be >= 2 (input and output), got {self.denoise_layers}"
            )
        if not 0.0 <= self.dropout_p <= 0.8:
            raise ConfigError(f"dropout_p must lie in [0, 0.8], got {self.dropout_p}")
        if self.num_grades < 2:
            raise ConfigError(f"num_grades must be >= 2, got {self.num_grades}")


def sinusoidal_embedding(t: int, d: int) -> np.ndarray:
    """Fixed sin/cos features of an integer timestep, shape (1, d)."""
    half = d // 2
    idx = np.arange(half, dtype=np.float64)
    freqs = np.exp(-math.log(10000.0) * idx / max(half, 1))
    angles = t * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)])
    if emb.size < d:
        emb = np.concatenate([emb, np.zeros(d - emb.size)])
    return emb.reshape(1, d)


class DenoiseModel:
    def __init__(
        self,
        config: ModelConfig,
        schedule: ScheduleSpec,
        dtype: str = "float64",
        seed: int = 0,
        params: dict[str, Tensor] | None = None,
    ):
        self.config = config
        self.schedule = schedule
        self.dtype = np.dtype(dtype)
        self.params = params if params is not None else self._init_params(seed)

    # -- parameters ---------------------------------------------------------

    def _init_params(self, seed) -> dict[str, Tensor]:
        rng = np.random.default_rng(seed)
        cfg = self.config
        params: dict[str, Tensor] = {}

        def linear_pair(name: str, fan_in: int, fan_out: int):
            std = math.sqrt(2.0 / (fan_in + fan_out))
            params[f"{name}.w"] = Tensor(
                rng.normal(0.0, std, size=(fan_in, fan_out)).astype(self.dtype),
                requires_grad=True,
            )
            params[f"{name}.b"] = Tensor(
                np.zeros((1, fan_out), dtype=self.dtype), requires_grad=True
            )

        def norm_pair(name: str, width: int):
            params[f"{name}.g"] = Tensor(
                np.ones((1, width), dtype=self.dtype), requires_grad=True
            )
            params[f"{name}.b"] = Tensor(
                np.zeros((1, width), dtype=self.dtype), requires_grad=True
            )

        d = cfg.d_model
        linear_pair("proj", cfg.k, d)
        for i in range(cfg.blocks):
            if cfg.use_attention:
                norm_pair(f"enc{i}.ln1", d)
                for part in ("wq", "wk", "wv", "wo"):
                    linear_pair(f"enc{i}.attn.{part}", d, d)
            norm_pair(f"enc{i}.ln2", d)
            linear_pair(f"enc{i}.ffn.l1", d, 4 * d)
            linear_pair(f"enc{i}.ffn.l2", 4 * d, d)
        norm_pair("enc_out.ln", d)
        linear_pair("temb", d, d)
        for j in range(cfg.denoise_layers):
            fan_in = d + 1 if j == 0 else d
            fan_out = cfg.num_grades if j == cfg.denoise_layers - 1 else d
            linear_pair(f"den{j}", fan_in, fan_out)
        return params

    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    # -- forward ------------------------------------------------------------

    def _cast(self, arr) -> np.ndarray:
        return np.asarray(arr, dtype=self.dtype)

    def encode(
        self,
        features: np.ndarray,
        mask: np.ndarray | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        cfg = self.config
        feats = self._cast(features)
        if feats.ndim != 2 or feats.shape[1] != cfg.k:
            raise ShapeError(
                f"encode expects (n, {cfg.k}) features, got shape {feats.shape}"
            )
        n = feats.shape[0]
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(-1)
            if mask.shape != (n,):
                raise ShapeError(f"mask shape {mask.shape} does not match {n} rows")
        p = cfg.dropout_p
        x = ad.linear(Tensor(feats), self._p("proj.w"), self._p("proj.b"))
        attn_bias = None
        if mask is not None and cfg.use_attention:
            bias_row = np.where(mask, 0.0, ATTENTION_MASK_BIAS).astype(self.dtype)
            attn_bias = Tensor(np.broadcast_to(bias_row, (n, n)).copy())
        for i in range(cfg.blocks):
            if cfg.use_attention:
                h = ad.layer_norm(x, self._p(f"enc{i}.ln1.g"), self._p(f"enc{i}.ln1.b"))
                att = self._attention(i, h, attn_bias)
                att = ad.dropout(att, p, training, rng)
                x = ad.add(x, att)
            h = ad.layer_norm(x, self._p(f"enc{i}.ln2.g"), self._p(f"enc{i}.ln2.b"))
            f = ad.linear(h, self._p(f"enc{i}.ffn.l1.w"), self._p(f"enc{i}.ffn.l1.b"))
            f = ad.softplus(f)
            f = ad.linear(f, self._p(f"enc{i}.ffn.l2.w"), self._p(f"enc{i}.ffn.l2.b"))
            f = ad.dropout(f, p, training, rng)
            x = ad.add(x, f)
        return ad.layer_norm(x, self._p("enc_out.ln.g"), self._p("enc_out.ln.b"))

    def _attention(self, i: int, h: Tensor, attn_bias: Tensor | None) -> Tensor:
        cfg = self.config
        d, heads = cfg.d_model, cfg.heads
        dh = d // heads
        q = ad.linear(h, self._p(f"enc{i}.attn.wq.w"), self._p(f"enc{i}.attn.wq.b"))
        k = ad.linear(h, self._p(f"enc{i}.attn.wk.w"), self._p(f"enc{i}.attn.wk.b"))
        v = ad.linear(h, self._p(f"enc{i}.attn.wv.w"), self._p(f"enc{i}.attn.wv.b"))
        outs = []
        for hd in range(heads):
            lo, hi = hd * dh, (hd + 1) * dh
            qh = ad.slice_cols(q, lo, hi)
            kh = ad.slice_cols(k, lo, hi)
            vh = ad.slice_cols(v, lo, hi)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(dh))
            if attn_bias is not None:
                scores = ad.add(scores, attn_bias)
            outs.append(ad.matmul(ad.softmax(scores), vh))
        merged = ad.concat(outs)
        return ad.linear(merged, self._p(f"enc{i}.attn.wo.w"), self._p(f"enc{i}.attn.wo.b"))

    def timestep_embedding(self, t: int) -> Tensor:
        base = Tensor(sinusoidal_embedding(t, self.config.d_model).astype(self.dtype))
        return ad.linear(base, self._p("temb.w"), self._p("temb.b"))

    def denoise(
        self,
        context: Tensor,
        y_t: np.ndarray,
        t: int,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        cfg = self.config
        n = context.data.shape[0]
        y_col = self._cast(y_t).reshape(-1, 1)
        if y_col.shape[0] != n:
            raise ShapeError(
                f"noisy labels cover {y_col.shape[0]} rows, context has {n}"
            )
        p = cfg.dropout_p
        temb = ad.broadcast_rows(self.timestep_embedding(t), n)
        x = ad.concat([context, Tensor(y_col)])
        last = cfg.denoise_layers - 1
        for j in range(cfg.denoise_layers):
            z = ad.linear(x, self._p(f"den{j}.w"), self._p(f"den{j}.b"))
            h = ad.dropout(ad.softplus(z), p, training, rng)
            if j < last:
                x = ad.mul(h, temb)
            else:
                weights = ad.softmax(h)
                grades = Tensor(
                    np.arange(cfg.num_grades, dtype=self.dtype).reshape(-1, 1)
                )
                return ad.matmul(weights, grades)
        raise AssertionError("unreachable")

    def predict_y0(
        self,
        features: np.ndarray,
        y_t: np.ndarray,
        t: int,
        mask: np.ndarray | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        context = self.encode(features, mask=mask, training=training, rng=rng)
        return self.denoise(context, y_t, t, training=training, rng=rng)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: DenoiseModel, path: str) -> None:
    names = sorted(model.params)
    header = {
        "version": _CKPT_VERSION,
        "model": asdict(model.config),
        "schedule": {"kind": model.schedule.kind, "timesteps": model.schedule.timesteps},
        "dtype": model.dtype.name,
        "params": [{"name": n, "shape": list(model.params[n].data.shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n].data).tobytes())


def load_checkpoint(path: str, expected_config: ModelConfig | None = None) -> DenoiseModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise IncompatibilityError(f"{path} is not a model checkpoint")
    off = len(_CKPT_MAGIC)
    try:
        version, header_len = struct.unpack_from("<IQ", buf, off)
    except struct.error as e:
        raise CacheCorruptionError(f"checkpoint {path} is truncated") from e
    if version != _CKPT_VERSION:
        raise IncompatibilityError(
            f"checkpoint {path} has version {version}, reader supports {_CKPT_VERSION}"
        )
    off += struct.calcsize("<IQ")
    if off + header_len > len(buf):
        raise CacheCorruptionError(f"checkpoint {path} is truncated")
    try:
        header = json.loads(buf[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CacheCorruptionError(f"checkpoint {path} header is unreadable") from e
    off += header_len
    config = ModelConfig(**header["model"])
    if expected_config is not None and config != expected_config:
        diffs = [
            f"{field}: checkpoint={getattr(config, field)!r} expected={getattr(expected_config, field)!r}"
            for field in config.__dataclass_fields__
            if getattr(config, field) != getattr(expected_config, field)
        ]
        raise IncompatibilityError(
            f"checkpoint {path} does not match the requested model: " + "; ".join(diffs)
        )
    schedule = ScheduleSpec(**header["schedule"])
    dtype = np.dtype(header["dtype"])
    params: dict[str, Tensor] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if off + nbytes > len(buf):
            raise CacheCorruptionError(f"checkpoint {path} is truncated")
        arr = np.frombuffer(buf[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        params[entry["name"]] = Tensor(arr, requires_grad=True)
        off += nbytes
    if off != len(buf):
        raise CacheCorruptionError(f"checkpoint {path} has {len(buf) - off} trailing bytes")
    return DenoiseModel(
        config=config, schedule=schedule, dtype=dtype.name, params=params
    )


def feature_only_variant(model: DenoiseModel) -> DenoiseModel:
    """Copy of the model whose prediction ignores the noisy-label input.

    The noisy labels enter the network only through the last input column
    of the first denoise layer; zeroing that weight row makes the score a
    function of document features and timestep alone. Combined with
    single-step variance-free sampling this yields a reference scorer
    whose repeated runs produce identical rankings.
    """
    params: dict[str, Tensor] = {}
    for name in sorted(model.params):
        arr = np.array(model.params[name].data)
        if name == "den0.w":
            arr[model.config.d_model, :] = 0.0
        params[name] = Tensor(arr, requires_grad=True)
    return DenoiseModel(
        config=model.config,
        schedule=model.schedule,
        dtype=model.dtype.name,
        params=params,
    )
