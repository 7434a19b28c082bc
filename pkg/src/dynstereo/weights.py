"""Model configuration, the named parameter container, seeded init and the DSW1 file format."""

from __future__ import annotations

import hashlib
import os
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .tensor_kernels import DTYPE, SEPARABLE_EXTENTS

MAGIC = b"DSW1"
FORMAT_VERSION = 1
SCALES = (16, 8, 4)


class WeightsError(Exception):
    """Base class for weight container problems."""


class BadMagicError(WeightsError):
    pass


class ChecksumError(WeightsError):
    pass


class WeightShapeError(WeightsError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 96
    dh: int = 96
    heads: int = 4
    sst_depth: int = 4
    ffn_mult: int = 2
    corr_dim: int = 64
    disp_dim: int = 32
    iters: int = 20
    radius: int = 4
    t_train: int = 5

    def __post_init__(self):
        if self.d % 2:
            raise ValueError(f"feature dim d={self.d} must be even")
        if self.d % self.heads or self.fused_dim % self.heads:
            raise ValueError(f"d={self.d} and fused dim {self.fused_dim} must be divisible by heads={self.heads}")
        if self.iters % 4 or self.iters <= 0:
            raise ValueError(f"iteration count M={self.iters} must be a positive multiple of 4")
        if self.radius < 0:
            raise ValueError("lookup radius must be >= 0")

    @property
    def fused_dim(self) -> int:
        return self.d + self.corr_dim + self.disp_dim

    @property
    def lookup_channels(self) -> int:
        return 4 * (2 * self.radius + 1)

    @classmethod
    def compact(cls, **overrides) -> "ModelConfig":
        """Reduced widths for fast desk-scale runs."""
        base = dict(d=32, dh=32, corr_dim=32, disp_dim=16)
        base.update(overrides)
        return cls(**base)

    def to_metadata(self) -> dict[str, str]:
        return {k: str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_metadata(cls, meta: dict[str, str]) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in meta.items() if k in names})


def _attention_shapes(prefix: str, dim: int, ffn_mult: int) -> dict[str, tuple[int, ...]]:
    shapes = {f"{prefix}.{p}": (dim, dim) for p in ("q", "k", "v", "o")}
    shapes[f"{prefix}.ffn1.w"] = (dim, ffn_mult * dim)
    shapes[f"{prefix}.ffn1.b"] = (ffn_mult * dim,)
    shapes[f"{prefix}.ffn2.w"] = (ffn_mult * dim, dim)
    shapes[f"{prefix}.ffn2.b"] = (dim,)
    return shapes


def weight_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Every parameter name and extent implied by ``cfg``, in canonical order."""
    d, dh = cfg.d, cfg.dh
    c1 = max(d // 2, 8)
    s: OrderedDict[str, tuple[int, ...]] = OrderedDict()

    def conv(name, o, i, kh, kw):
        s[f"{name}.w"] = (o, i, kh, kw)
        s[f"{name}.b"] = (o,)

    conv("enc.stem", c1, 3, 7, 7)
    for blk in ("res1a", "res1b"):
        conv(f"enc.{blk}.conv1", c1, c1, 3, 3)
        conv(f"enc.{blk}.conv2", c1, c1, 3, 3)
    conv("enc.down.conv1", d, c1, 3, 3)
    conv("enc.down.conv2", d, d, 3, 3)
    conv("enc.down.skip", d, c1, 1, 1)
    for blk in ("res2a", "res2b"):
        conv(f"enc.{blk}.conv1", d, d, 3, 3)
        conv(f"enc.{blk}.conv2", d, d, 3, 3)
    conv("enc.out", d, d, 1, 1)

    s["sst.time_embed"] = (cfg.t_train, d)
    for r in range(cfg.sst_depth):
        for stage in ("space", "cross", "time"):
            s.update(_attention_shapes(f"sst.{r}.{stage}", d, cfg.ffn_mult))

    df = cfg.fused_dim
    for k in SCALES:
        conv(f"g{k}.hidden", dh, d, 1, 1)
        conv(f"g{k}.corr1", cfg.corr_dim, cfg.lookup_channels, 1, 1)
        conv(f"g{k}.corr2", cfg.corr_dim, cfg.corr_dim, 3, 3)
        conv(f"g{k}.disp1", cfg.disp_dim, 1, 7, 7)
        conv(f"g{k}.disp2", cfg.disp_dim, cfg.disp_dim, 3, 3)
        if k == 16:
            s["g16.fuse.time_embed"] = (cfg.t_train, df)
            s.update(_attention_shapes("g16.fuse.time", df, cfg.ffn_mult))
            s.update(_attention_shapes("g16.fuse.space", df, cfg.ffn_mult))
        for i, ext in enumerate(SEPARABLE_EXTENTS):
            for gate in ("z", "r", "q"):
                s[f"g{k}.gru{i}.{gate}.w"] = (dh, dh + df, *ext)
                s[f"g{k}.gru{i}.{gate}.b"] = (dh,)
        conv(f"g{k}.head1", dh, dh, 3, 3)
        conv(f"g{k}.head2", 1, dh, 3, 3)
    for k, factor in ((16, 2), (8, 2), (4, 4)):
        conv(f"up{k}.mask1", dh, dh, 3, 3)
        conv(f"up{k}.mask2", 9 * factor * factor, dh, 1, 1)
    return s


def _is_attention_projection(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in ("q", "k", "v", "o")


class ModelWeights:
    """Ordered mapping of parameter name to float32 array, plus string metadata."""

    def __init__(self, entries=None, metadata=None):
        self._entries: OrderedDict[str, np.ndarray] = OrderedDict()
        self.metadata: dict[str, str] = dict(metadata or {})
        for name, value in (entries or {}).items():
            self[name] = value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, value) -> None:
        arr = np.ascontiguousarray(value, dtype=DTYPE)
        arr.flags.writeable = False
        self._entries[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def replace(self, **updates) -> "ModelWeights":
        """Copy with some entries swapped out; keyword names use ``__`` for dots."""
        out = ModelWeights(self._entries, self.metadata)
        for key, value in updates.items():
            out[key.replace("__", ".")] = value
        return out

    def updated(self, mapping: dict[str, np.ndarray]) -> "ModelWeights":
        out = ModelWeights(self._entries, self.metadata)
        for key, value in mapping.items():
            out[key] = value
        return out

    @property
    def config(self) -> ModelConfig:
        return ModelConfig.from_metadata(self.metadata)

    def validate(self, cfg: ModelConfig) -> None:
        """Raise WeightShapeError naming the first entry that disagrees with ``cfg``."""
        expected = weight_shapes(cfg)
        for name, shape in expected.items():
            if name not in self._entries:
                raise WeightShapeError(f"missing entry {name!r} (expected shape {shape})")
            if self._entries[name].shape != shape:
                raise WeightShapeError(
                    f"entry {name!r}: stored shape {self._entries[name].shape} != expected {shape}"
                )
        extra = set(self._entries) - set(expected)
        if extra:
            raise WeightShapeError(f"unexpected entries: {sorted(extra)}")
        for key, value in cfg.to_metadata().items():
            if key in self.metadata and self.metadata[key] != value:
                raise WeightShapeError(
                    f"metadata {key}={self.metadata[key]} disagrees with config {key}={value}"
                )


def init_weights(cfg: ModelConfig, seed: int = 0) -> ModelWeights:
    """Seeded initialization.

    Convolution and feed-forward weights are uniform in +-1/sqrt(fan_in),
    attention projections and time tables are N(0, 0.02), GRU gate biases
    start at zero.
    """
    rng = np.random.default_rng(seed)
    w = ModelWeights(metadata={**cfg.to_metadata(), "seed": str(seed)})
    shapes = weight_shapes(cfg)
    fan_in = {}
    for name, shape in shapes.items():
        if name.endswith(".w"):
            fan_in[name[:-2]] = int(np.prod(shape[1:])) if len(shape) > 2 else shape[0]
    for name, shape in shapes.items():
        if _is_attention_projection(name) or name.endswith("time_embed"):
            value = np.clip(rng.normal(0.0, 0.02, size=shape), -0.04, 0.04)
        elif ".gru" in name and name.endswith(".b"):
            value = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in[name[:-2]])
            value = rng.uniform(-bound, bound, size=shape)
        w[name] = value
    return w


def _encode_metadata(meta: dict[str, str]) -> bytes:
    return "".join(f"{k}={meta[k]}\n" for k in sorted(meta)).encode("utf-8")


def _checksum(body: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")


def dumps_weights(weights: ModelWeights) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    meta = _encode_metadata(weights.metadata)
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    parts.append(struct.pack("<I", len(weights)))
    for name, arr in weights.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", _checksum(body))


def loads_weights(blob: bytes, cfg: ModelConfig | None = None) -> ModelWeights:
    if blob[:4] != MAGIC:
        raise BadMagicError(f"not a weights file: magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 24:
        raise ChecksumError("file too short to hold a checksum")
    body, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
    if _checksum(body) != stored:
        raise ChecksumError("checksum mismatch (file truncated or corrupted)")
    pos = 4
    (version,) = struct.unpack_from("<I", body, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise WeightsError(f"unsupported format version {version}")
    (mlen,) = struct.unpack_from("<I", body, pos)
    pos += 4
    meta = {}
    for line in body[pos : pos + mlen].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        meta[key] = value
    pos += mlen
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    weights = ModelWeights(metadata=meta)
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        nbytes = 4 * int(np.prod(shape))
        weights[name] = np.frombuffer(body, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape)
        pos += nbytes
    if pos != len(body):
        raise WeightsError(f"{len(body) - pos} trailing bytes after last entry")
    if cfg is not None:
        weights.validate(cfg)
    return weights


def save_weights(weights: ModelWeights, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_weights(weights))
    os.replace(tmp, path)


def load_weights(path, cfg: ModelConfig | None = None) -> ModelWeights:
    """Read a DSW1 container; with ``cfg`` given, shapes and metadata are validated."""
    return loads_weights(Path(path).read_bytes(), cfg)
