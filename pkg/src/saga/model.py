"""Spatial + temporal attention transformer over frame-token embeddings.

A video ``[L, l_t, d_t]`` goes through one shared encoder block per frame
(spatial attention over its ``l_t`` tokens), is mean-pooled over tokens,
gets sinusoidal position codes, runs through ``depth + 1`` temporal encoder
blocks, and is mean-pooled over frames into the video embedding ``phi``. A
linear head maps ``phi`` to class logits.

All encoder blocks are pre-norm: ``x + MHSA(LN(x))`` then ``x + MLP(LN(x))``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .tensor import Prng, Tensor
from .tensor import ops as F
from .tensor.prng import mix_seed

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    d_t: int = 64
    l_t: int = 16
    L_max: int = 64
    n_heads: int = 4
    depth: int = 5
    mlp_hidden: int = 128
    dropout_rate: float = 0.1
    n_classes: int = 2

    @property
    def n_blocks(self) -> int:
        """Number of temporal encoder blocks, ``depth + 1``."""
        return self.depth + 1

    @property
    def tsig_block(self) -> int:
        """0-based index of the penultimate temporal block."""
        return self.n_blocks - 2

    def validate(self) -> None:
        if self.d_t < 1 or self.l_t < 1 or self.L_max < 2:
            raise ConfigError(f"invalid dims d_t={self.d_t} l_t={self.l_t} L_max={self.L_max}")
        if self.n_heads < 1 or self.d_t % self.n_heads:
            raise ConfigError(f"d_t={self.d_t} is not divisible by n_heads={self.n_heads}")
        if self.depth < 2:
            raise ConfigError(f"depth={self.depth} must be >= 2")
        if self.mlp_hidden < self.d_t:
            raise ConfigError(f"mlp_hidden={self.mlp_hidden} must be >= d_t={self.d_t}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")

    def to_dict(self) -> dict:
        return asdict(self)


def block_param_count(d: int, hidden: int) -> int:
    # q, k, v, out projections with biases; two layer norms; two-layer MLP
    return 4 * (d * d + d) + 2 * (2 * d) + (d * hidden + hidden) + (hidden * d + d)


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter count: one spatial block, ``depth + 1`` temporal blocks, head."""
    d = config.d_t
    return (1 + config.n_blocks) * block_param_count(d, config.mlp_hidden) + d * config.n_classes + config.n_classes


def _block_shapes(d: int, hidden: int) -> list[tuple[str, tuple[int, ...], str]]:
    return [
        ("ln1.gamma", (d,), "one"), ("ln1.beta", (d,), "zero"),
        ("attn.wq", (d, d), "affine"), ("attn.bq", (d,), "zero"),
        ("attn.wk", (d, d), "affine"), ("attn.bk", (d,), "zero"),
        ("attn.wv", (d, d), "affine"), ("attn.bv", (d,), "zero"),
        ("attn.wo", (d, d), "affine"), ("attn.bo", (d,), "zero"),
        ("ln2.gamma", (d,), "one"), ("ln2.beta", (d,), "zero"),
        ("mlp.w1", (d, hidden), "affine"), ("mlp.b1", (hidden,), "zero"),
        ("mlp.w2", (hidden, d), "affine"), ("mlp.b2", (d,), "zero"),
    ]


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def _init_param(name: str, shape, kind: str, prng: Prng) -> Tensor:
    if kind == "one":
        data = np.ones(shape)
    elif kind == "zero":
        data = np.zeros(shape)
    else:
        bound = 1.0 / math.sqrt(shape[0])
        data = prng.spawn(_name_key(name)).uniform(-bound, bound, shape)
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class ForwardOutput:
    logits: Tensor
    phi: Tensor
    attention: list[np.ndarray] | None = None


class Model:
    """Parameter store plus TRAIN/EVAL mode for the video transformer."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.training = False
        self.dropout_prng = Prng(0)

    # -- mode

    def train(self, seed: int | None = None) -> "Model":
        self.training = True
        if seed is not None:
            self.dropout_prng = Prng(mix_seed(seed, _name_key("dropout")))
        return self

    def eval(self) -> "Model":
        self.training = False
        return self

    @property
    def mode(self) -> str:
        return "TRAIN" if self.training else "EVAL"

    # -- parameters

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def checksum(self, include_head: bool = True) -> str:
        h = hashlib.sha256()
        for name, t in self.params.items():
            if not include_head and name.startswith("head."):
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def block(self, prefix: str) -> dict[str, Tensor]:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix + ".")}


def build_model(config: ModelConfig, prng: Prng) -> Model:
    """Fresh model; affine weights ~ U(±1/sqrt(fan_in)), biases 0, LN gain 1."""
    config.validate()
    params: dict[str, Tensor] = {}
    prefixes = ["spatial"] + [f"temporal.{i}" for i in range(config.n_blocks)]
    for p in prefixes:
        for name, shape, kind in _block_shapes(config.d_t, config.mlp_hidden):
            full = f"{p}.{name}"
            params[full] = _init_param(full, shape, kind, prng)
    params.update(_init_head(config.d_t, config.n_classes, prng))
    return Model(config, params)


def _init_head(d: int, n_classes: int, prng: Prng) -> dict[str, Tensor]:
    return {
        "head.w": _init_param("head.w", (d, n_classes), "affine", prng),
        "head.b": _init_param("head.b", (n_classes,), "zero", prng),
    }


def replace_head(model: Model, new_n_classes: int, prng: Prng) -> Model:
    """Copy of ``model`` with a freshly initialized ``new_n_classes``-way head.

    The head is always re-drawn, even when the width does not change.
    """
    config = ModelConfig(**{**model.config.to_dict(), "n_classes": new_n_classes})
    config.validate()
    params = {k: Tensor(v.data.copy(), requires_grad=True, name=k)
              for k, v in model.params.items() if not k.startswith("head.")}
    params.update(_init_head(config.d_t, new_n_classes, prng))
    return Model(config, params)


# ---------------------------------------------------------------- forward pieces

def encoder_block(p: dict[str, Tensor], x: Tensor, n_heads: int, dropout_rate: float,
                  training: bool, prng: Prng | None) -> tuple[Tensor, np.ndarray]:
    """Pre-norm transformer block on ``x`` of shape ``[N, T, d]``.

    Returns the block output and the softmaxed attention ``[N, heads, T, T]``.
    """
    N, T, d = x.shape
    dh = d // n_heads
    h = F.layer_norm(x, p["ln1.gamma"], p["ln1.beta"], LN_EPS)
    q = F.matmul(h, p["attn.wq"]) + p["attn.bq"]
    k = F.matmul(h, p["attn.wk"]) + p["attn.bk"]
    v = F.matmul(h, p["attn.wv"]) + p["attn.bv"]
    q = F.transpose(F.reshape(q, (N, T, n_heads, dh)), (0, 2, 1, 3))
    kt = F.transpose(F.reshape(k, (N, T, n_heads, dh)), (0, 2, 3, 1))
    v = F.transpose(F.reshape(v, (N, T, n_heads, dh)), (0, 2, 1, 3))
    att = F.softmax(F.matmul(q * (1.0 / math.sqrt(dh)), kt), axis=-1)
    ctx = F.reshape(F.transpose(F.matmul(att, v), (0, 2, 1, 3)), (N, T, d))
    out = F.matmul(ctx, p["attn.wo"]) + p["attn.bo"]
    x = x + F.dropout(out, dropout_rate, prng, training)
    h = F.layer_norm(x, p["ln2.gamma"], p["ln2.beta"], LN_EPS)
    h = F.gelu(F.matmul(h, p["mlp.w1"]) + p["mlp.b1"])
    h = F.matmul(h, p["mlp.w2"]) + p["mlp.b2"]
    x = x + F.dropout(h, dropout_rate, prng, training)
    return x, att.data


def _frames_tensor(model: Model, frames) -> Tensor:
    t = frames if isinstance(frames, Tensor) else Tensor(frames)
    c = model.config
    if t.ndim == 3:
        t = F.reshape(t, (1,) + t.shape)
    if t.ndim != 4 or t.shape[2] != c.l_t or t.shape[3] != c.d_t:
        raise ShapeError(f"frames of shape {t.shape} do not match model (L, l_t={c.l_t}, d_t={c.d_t})")
    if t.shape[1] > c.L_max:
        raise ShapeError(f"L={t.shape[1]} exceeds L_max={c.L_max}")
    return t


def spatial_encode(model: Model, frames) -> Tensor:
    """``[B, L, l_t, d]`` (or one video ``[L, l_t, d]``) to frame vectors ``[B, L, d]``."""
    x = _frames_tensor(model, frames)
    B, L, lt, d = x.shape
    y, _ = encoder_block(model.block("spatial"), F.reshape(x, (B * L, lt, d)), model.config.n_heads,
                         model.config.dropout_rate, model.training, model.dropout_prng)
    return F.reshape(F.mean(y, axis=1), (B, L, d))


def positional_table(L: int, d: int) -> np.ndarray:
    """``PE[m, 2i] = sin(m / 10000^(2i/d))``, ``PE[m, 2i+1] = cos(...)``."""
    pos = np.arange(L, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d)
    pe = np.zeros((L, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def positional_encode(frames: Tensor, L_max: int | None = None) -> Tensor:
    L, d = frames.shape[-2:]
    if L_max is not None and L > L_max:
        raise ShapeError(f"L={L} exceeds L_max={L_max}")
    return frames + positional_table(L, d).astype(frames.dtype)


def temporal_encode(model: Model, frames: Tensor, capture: bool = False):
    """Run the temporal stack on ``[B, L, d]``; returns ``(phi [B, d], attention)``.

    ``attention`` is a list with one ``[B, heads, L, L]`` array per block when
    ``capture`` is set, else ``None``.
    """
    x = frames if frames.ndim == 3 else F.reshape(frames, (1,) + frames.shape)
    if x.shape[-1] != model.config.d_t:
        raise ShapeError(f"frame vectors of width {x.shape[-1]} do not match d_t={model.config.d_t}")
    maps = []
    for i in range(model.config.n_blocks):
        x, att = encoder_block(model.block(f"temporal.{i}"), x, model.config.n_heads,
                               model.config.dropout_rate, model.training, model.dropout_prng)
        if capture:
            maps.append(att)
    return F.mean(x, axis=1), (maps if capture else None)


def classify(model: Model, phi: Tensor) -> Tensor:
    return F.matmul(phi, model.params["head.w"]) + model.params["head.b"]


def forward_batch(model: Model, frames, capture: bool = False, use_pe: bool = True) -> ForwardOutput:
    """Forward ``[B, L, l_t, d]``; logits ``[B, n_c]``, phi ``[B, d]``."""
    x = spatial_encode(model, frames)
    if use_pe:
        x = positional_encode(x, model.config.L_max)
    phi, maps = temporal_encode(model, x, capture)
    return ForwardOutput(classify(model, phi), phi, maps)


def forward(model: Model, video, capture: bool = False, use_pe: bool = True) -> ForwardOutput:
    """Forward a single video (``VideoEmbedding`` or ``[L, l_t, d]`` frames)."""
    frames = getattr(video, "frames", video)
    out = forward_batch(model, frames, capture, use_pe)
    maps = [m[0] for m in out.attention] if out.attention is not None else None
    return ForwardOutput(F.reshape(out.logits, (model.config.n_classes,)),
                         F.reshape(out.phi, (model.config.d_t,)), maps)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"SAGA"
CKPT_VERSION = 1
OPT_TAG = b"OPT1"
_CFG_FIELDS = [(f.name, "f" if f.type in (float, "float") else "I") for f in fields(ModelConfig)]
_CFG = struct.Struct("<" + "".join(code for _, code in _CFG_FIELDS))


def _write_tensors(fh, named: list[tuple[str, np.ndarray]]) -> None:
    fh.write(struct.pack("<I", len(named)))
    for name, arr in named:
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)) + raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.off, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated {what} at byte offset {self.off}: "
                              f"expected {n} bytes, got {len(self.buf) - self.off}")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def tensors(self, what: str) -> list[tuple[str, np.ndarray]]:
        (count,) = self.unpack("<I", f"{what} tensor count")
        out = []
        for _ in range(count):
            (k,) = self.unpack("<H", "tensor name length")
            name = self.take(k, "tensor name").decode("utf-8")
            (rank,) = self.unpack("<B", f"rank of {name}")
            shape = self.unpack(f"<{rank}I", f"extents of {name}")
            n = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(self.take(4 * n, f"payload of {name}"), dtype="<f4").reshape(shape)
            out.append((name, arr.astype(np.float32)))
        return out


def save_checkpoint(model: Model, path, optimizer_state: dict | None = None) -> None:
    """Write model (and optionally Adam state) in the SAGA checkpoint format.

    ``optimizer_state`` is ``{"step": int, "tensors": [(name, array), ...]}``.
    """
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<H", CKPT_VERSION))
        fh.write(_CFG.pack(*[getattr(cfg, name) for name, _ in _CFG_FIELDS]))
        _write_tensors(fh, [(k, v.data) for k, v in model.params.items()])
        if optimizer_state is not None:
            fh.write(OPT_TAG + struct.pack("<I", int(optimizer_state["step"])))
            _write_tensors(fh, list(optimizer_state["tensors"]))


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[Model, dict | None]:
    """Inverse of :func:`save_checkpoint`; returns ``(model, optimizer_state)``."""
    r = _Reader(Path(path).read_bytes(), path)
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte offset 0, expected {CKPT_MAGIC!r}")
    (version,) = r.unpack("<H", "version")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    values = r.unpack(_CFG.format, "config block")
    raw = {name: (float(v) if code == "f" else int(v)) for (name, code), v in zip(_CFG_FIELDS, values)}
    # stored as f32; snap back to the shortest decimal that round-trips through f32
    raw["dropout_rate"] = float(np.format_float_positional(np.float32(raw["dropout_rate"])))
    config = ModelConfig(**raw)
    try:
        config.validate()
    except ConfigError as exc:
        raise FormatError(f"{path}: invalid config block ({exc})") from None
    if expected is not None:
        dims = ("d_t", "l_t", "n_heads", "depth", "mlp_hidden", "n_classes")
        diff = [k for k in dims if getattr(config, k) != getattr(expected, k)]
        if diff:
            have = {k: getattr(config, k) for k in diff}
            want = {k: getattr(expected, k) for k in diff}
            raise ConfigError(f"{path}: checkpoint config {have} does not match expected {want}")
    named = r.tensors("model")
    reference = build_model(config, Prng(0))
    if len(named) != len(reference.params):
        raise FormatError(f"{path}: {len(named)} tensors stored, config implies {len(reference.params)}")
    params = {}
    for name, arr in named:
        ref = reference.params.get(name)
        if ref is None or ref.shape != arr.shape:
            raise FormatError(f"{path}: unexpected tensor {name!r} with shape {arr.shape}")
        params[name] = Tensor(arr, requires_grad=True, name=name)
    opt = None
    if r.off < len(r.buf):
        tag = r.take(4, "section tag")
        if tag != OPT_TAG:
            raise FormatError(f"{path}: unknown section tag {tag!r} at byte offset {r.off - 4}")
        (step,) = r.unpack("<I", "optimizer step")
        opt = {"step": step, "tensors": r.tensors("optimizer")}
        if r.off != len(r.buf):
            raise FormatError(f"{path}: trailing bytes at byte offset {r.off}")
    return Model(config, params), opt
