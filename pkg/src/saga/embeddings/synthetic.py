"""Synthetic stand-in for frozen-encoder frame embeddings.

Each class ("generator") stamps its videos with temporal artifacts: a
sinusoidal motion component of a characteristic frequency, a linear drift,
blending of each frame with the previous one, and white noise. Every frame
vector is then expanded to ``l_t`` tokens by a fixed per-class linear map.

Frame ``m`` of a video of class ``c``::

    v_m = A * motion_c * sin(2 pi f_c m / L + phase) + drift_c * m * drift_dir_c
          + blend_c * v_{m-1} + noise_c * eps_m
    tokens[m, t] = v_m @ E_{c,t}

Motion and drift directions are shared inside an overlap group, so two
classes of one group differ only in noise scale and token expansion. The
phase of a video is a dataset-wide base phase plus a uniform offset of
width ``phase_spread`` cycles (1.0 means fully random). The per-video phase
offset and noise come from lane ``item_index`` of the dataset seed,
so any item can be regenerated in isolation.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..errors import ConfigError, ParameterError
from ..labels import REAL_ID, GeneratorManifest
from ..tensor import Prng
from ..tensor.prng import LaneGenerator, mix_seed
from .dataset import EmbeddingStore, check_dims

_CHUNK = 1024


@dataclass(frozen=True)
class ClassArtifacts:
    name: str
    base_motion_freq: float
    drift_rate: float = 0.0
    blend_factor: float = 0.0
    noise_scale: float = 1.0
    overlap_group: str | None = None
    task: str = "T2V"
    sd: str = "UNKNOWN"
    team: str = "UNKNOWN"

    def temporal_params(self) -> tuple[float, float, float]:
        return (self.base_motion_freq, self.drift_rate, self.blend_factor)


@dataclass(frozen=True)
class SyntheticSpec:
    classes: tuple[ClassArtifacts, ...]
    videos_per_class: int = 2000
    L: int = 8
    l_t: int = 16
    d_t: int = 64
    seed: int = 0
    motion_amplitude: float = 1.0
    token_spread: float = 0.3
    token_jitter: float = 0.4
    phase_spread: float = 0.1
    held_out: tuple[ClassArtifacts, ...] = ()
    held_out_videos: int = 200

    def validate(self) -> None:
        check_dims(self.L, self.l_t, self.d_t)
        if not self.classes:
            raise ConfigError("synthetic spec has no classes")
        if not 0.0 <= self.phase_spread <= 1.0:
            raise ParameterError(f"phase_spread must lie in [0, 1], got {self.phase_spread}")
        if self.videos_per_class < 1 or (self.held_out and self.held_out_videos < 1):
            raise ConfigError("videos per class must be >= 1")
        names = [c.name for c in self.classes + self.held_out]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate class names in synthetic spec: {names}")
        for c in self.classes + self.held_out:
            if not 0.0 <= c.blend_factor < 1.0:
                raise ParameterError(f"class {c.name}: blend_factor must lie in [0, 1), got {c.blend_factor}")
            if c.noise_scale < 0:
                raise ParameterError(f"class {c.name}: noise_scale must be >= 0")
        groups: dict[str, list[ClassArtifacts]] = {}
        for c in self.classes + self.held_out:
            if c.overlap_group is not None:
                groups.setdefault(c.overlap_group, []).append(c)
        for g, members in groups.items():
            ref = members[0]
            for c in members[1:]:
                if c.temporal_params() != ref.temporal_params():
                    raise ConfigError(f"overlap group {g!r}: {c.name} and {ref.name} differ beyond noise scale")
                lo, hi = sorted((c.noise_scale, ref.noise_scale))
                if hi > 0 and (hi - lo) / hi > 0.10 + 1e-12:
                    raise ConfigError(f"overlap group {g!r}: noise scales {lo} and {hi} differ by more than 10%")

    def manifest(self) -> GeneratorManifest:
        gens = []
        for c in self.classes:
            real = c.name == REAL_ID
            gens.append({"id": c.name, "task": "REAL" if real else c.task,
                         "sd": "NONE" if real else c.sd, "team": c.team})
        return GeneratorManifest.from_dict({"generators": gens})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        d["classes"] = tuple(ClassArtifacts(**c) for c in d["classes"])
        d["held_out"] = tuple(ClassArtifacts(**c) for c in d.get("held_out", ()))
        return cls(**d)


def default_spec(videos_per_class: int = 2000, seed: int = 0, n_classes: int = 6,
                 overlap_pair: tuple[int, int] | None = (4, 5), **overrides) -> SyntheticSpec:
    """The shipped 6-class default: Real plus five generators, two of them overlapping."""
    pool = [
        ClassArtifacts(REAL_ID, 1.0, 0.0, 0.0, 0.7, task="REAL", sd="NONE", team="Real"),
        ClassArtifacts("GenA", 1.0, 0.0, 0.0, 0.77, task="T2V", sd="SD14", team="TeamA"),
        ClassArtifacts("GenB", 1.0, 0.08, 0.0, 0.7, task="T2V", sd="SD15", team="TeamB"),
        ClassArtifacts("GenC", 1.0, 0.0, 0.5, 0.7, task="I2V", sd="SD21", team="TeamC"),
        ClassArtifacts("GenD", 2.0, 0.0, 0.0, 0.7, task="I2V", sd="SDXL", team="TeamD"),
        ClassArtifacts("GenE", 2.0, 0.0, 0.0, 0.77, task="I2V", sd="SDXL", team="TeamD"),
        ClassArtifacts("GenF", 3.0, 0.04, 0.3, 0.7, task="T2V", sd="SD21", team="TeamE"),
        ClassArtifacts("GenG", 4.0, 0.0, 0.0, 0.7, task="I2V", sd="SD15", team="TeamF"),
    ]
    if not 2 <= n_classes <= len(pool):
        raise ConfigError(f"default spec supports 2..{len(pool)} classes, got {n_classes}")
    classes = list(pool[:n_classes])
    if overlap_pair is not None:
        a, b = overlap_pair
        if not (0 < a < n_classes and 0 < b < n_classes and a != b):
            raise ConfigError(f"overlap pair {overlap_pair} must name two distinct synthetic classes below {n_classes}")
        ref = classes[a]
        classes[a] = replace(ref, overlap_group="pair")
        classes[b] = replace(classes[b], base_motion_freq=ref.base_motion_freq, drift_rate=ref.drift_rate,
                             blend_factor=ref.blend_factor, noise_scale=round(ref.noise_scale * 1.1, 12),
                             overlap_group="pair")
    held = (ClassArtifacts("Unseen", 3.0, 0.0, 0.6, 0.7, task="T2V", sd="UNKNOWN", team="UNKNOWN"),)
    kw = dict(classes=tuple(classes), videos_per_class=videos_per_class, seed=seed, held_out=held)
    kw.update(overrides)
    return SyntheticSpec(**kw)


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def _class_vectors(spec: SyntheticSpec, c: ClassArtifacts):
    d, lt = spec.d_t, spec.l_t
    group = c.overlap_group if c.overlap_group is not None else c.name
    gp = Prng(mix_seed(spec.seed, _name_key("group:" + group)))
    motion = 1.0 + 0.5 * gp.normal(d)
    drift_dir = 1.0 + 0.5 * gp.normal(d)
    shared = Prng(mix_seed(spec.seed, _name_key("tokens")))
    base_phase = float(Prng(mix_seed(spec.seed, _name_key("phase"))).random(1)[0])
    scale = 1.0 + spec.token_spread * shared.normal((lt, d))
    cp = Prng(mix_seed(spec.seed, _name_key("class:" + c.name)))
    jitter = cp.normal((lt, d, d)) * (spec.token_jitter / math.sqrt(d))
    expand = jitter + np.einsum("td,de->tde", scale, np.eye(d))
    return motion, drift_dir, base_phase, expand


def _render(spec: SyntheticSpec, c: ClassArtifacts, item_indices: np.ndarray) -> np.ndarray:
    L, d, lt = spec.L, spec.d_t, spec.l_t
    motion, drift_dir, base_phase, expand = _class_vectors(spec, c)
    lanes = LaneGenerator(spec.seed, item_indices)
    n = item_indices.size
    phase = 2.0 * math.pi * (base_phase + spec.phase_spread * (lanes.random() - 0.5))
    noise = np.empty((L, d, n))
    for m in range(L):
        for j in range(d):
            noise[m, j] = lanes.normal()
    v = np.empty((n, L, d))
    prev = np.zeros((n, d))
    for m in range(L):
        s = np.sin(2.0 * math.pi * c.base_motion_freq * m / L + phase)
        cur = (spec.motion_amplitude * s[:, None] * motion + (c.drift_rate * m) * drift_dir
               + c.blend_factor * prev + c.noise_scale * noise[m].T)
        v[:, m] = cur
        prev = cur
    flat = v.reshape(n * L, d) @ expand.transpose(1, 0, 2).reshape(d, lt * d)
    return flat.reshape(n, L, lt, d)


def synth_generate(spec: SyntheticSpec) -> tuple[EmbeddingStore, GeneratorManifest]:
    """Render every class (then every held-out class) into one store.

    Held-out classes are left out of the returned manifest.
    """
    spec.validate()
    manifest = spec.manifest()
    blocks, vids, gids = [], [], []
    offset = 0
    jobs = [(c, spec.videos_per_class) for c in spec.classes] + [(c, spec.held_out_videos) for c in spec.held_out]
    for c, count in jobs:
        for start in range(0, count, _CHUNK):
            stop = min(count, start + _CHUNK)
            idx = np.arange(offset + start, offset + stop, dtype=np.uint64)
            blocks.append(_render(spec, c, idx).astype(np.float32))
        vids.extend(f"{c.name}-{k:05d}" for k in range(count))
        gids.extend([c.name] * count)
        offset += count
    frames = np.concatenate(blocks, axis=0)
    return EmbeddingStore(tuple(vids), tuple(gids), frames), manifest
