"""LegoNet V1/V2/V3 assembly, parameter/FLOP analysis and the checkpoint container."""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .blocks import BlockSpec, DecoderStage, EncoderStage, Stem
from .layers import Conv3d, Module
from .tensor import Tensor, pad

VERSION_BLOCKS = {
    "V1": ("SE", "UX", "SE", "UX"),
    "V2": ("SE", "Swin", "SE", "Swin"),
    "V3": ("Swin", "UX", "Swin", "UX"),
}

# Published reference complexity: params in millions, FLOPs in G.
REFERENCE_COMPLEXITY = {
    "V1": (50.58, 175.77),
    "V2": (50.71, 188.02),
    "V3": (11.14, 173.41),
}

DEPTH_KEYS = {"SE": "se_units", "Swin": "swin_pairs", "UX": "ux_pairs"}


@dataclass(frozen=True)
class ModelConfig:
    version: str = "V2"
    features: tuple = (24, 48, 96, 192)
    hidden: int = 768
    window: int = 6
    head_channels: int = 32
    input_shape: tuple = (96, 96, 96)
    in_channels: int = 1
    out_channels: int = 1
    se_units: int = 2
    swin_pairs: int = 1
    ux_pairs: int = 2
    mlp_ratio: int = 4
    ux_kernel: int = 7
    ux_expansion: int = 4
    se_reduction: int = 2

    def __post_init__(self):
        object.__setattr__(self, "version", normalize_version(self.version))
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        object.__setattr__(self, "input_shape", tuple(int(n) for n in self.input_shape))
        f = self.features
        if len(f) != 4 or any(f[i + 1] != 2 * f[i] for i in range(3)):
            raise ValueError(f"features must double at each stage, got {f}")
        if self.hidden <= f[3]:
            raise ValueError(f"hidden size {self.hidden} must exceed F4={f[3]}")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    @property
    def stage_kinds(self) -> tuple:
        return VERSION_BLOCKS[self.version]

    def heads(self, c: int) -> int:
        return max(1, c // self.head_channels)

    def stage_specs(self) -> list[BlockSpec]:
        ins = self.features
        outs = self.features[1:] + (self.hidden,)
        specs = []
        for kind, cin, cout in zip(self.stage_kinds, ins, outs):
            specs.append(BlockSpec(kind, cin, cout, getattr(self, DEPTH_KEYS[kind]), self.window, self.heads(cout)))
        return specs

    def to_text(self) -> str:
        """Canonical ``key=value`` lines, sorted by key."""
        lines = []
        for k, v in sorted(asdict(self).items()):
            if isinstance(v, (tuple, list)):
                v = ",".join(str(i) for i in v)
            lines.append(f"{k}={v}")
        return "\n".join(lines)

    @classmethod
    def from_mapping(cls, data: dict) -> "ModelConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for k, v in data.items():
            if k not in types:
                continue
            if k in ("features", "input_shape"):
                if isinstance(v, str):
                    v = tuple(int(i) for i in v.replace("(", "").replace(")", "").split(",") if i.strip())
                kwargs[k] = tuple(v)
            elif k == "version":
                kwargs[k] = str(v)
            else:
                kwargs[k] = int(v)
        return cls(**kwargs)


def normalize_version(v: str) -> str:
    v = str(v).upper()
    if not v.startswith("V"):
        v = "V" + v
    if v not in VERSION_BLOCKS:
        raise ValueError(f"unknown LegoNet version {v!r}; expected one of {sorted(VERSION_BLOCKS)}")
    return v


def desk_config(version: str = "V2", edge: int = 32, **overrides) -> ModelConfig:
    """The small configuration used for CPU-scale experiments."""
    base = dict(version=version, features=(8, 16, 32, 64), hidden=128, window=4, input_shape=(edge,) * 3)
    base.update(overrides)
    return ModelConfig(**base)


class LegoNet(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        f = config.features
        kw = dict(se_reduction=config.se_reduction, mlp_ratio=config.mlp_ratio,
                  ux_kernel=config.ux_kernel, ux_expansion=config.ux_expansion)
        self.stem = Stem(config.in_channels, f[0], rng, config.se_reduction)
        self.stages = [EncoderStage(spec, rng, **kw) for spec in config.stage_specs()]
        widths = list(f) + [config.hidden]
        # deepest first: (S -> F4), (F4 -> F3), (F3 -> F2), (F2 -> F1)
        self.decoders = [DecoderStage(widths[i + 1], widths[i], rng, config.se_reduction) for i in (3, 2, 1, 0)]
        self.head = Conv3d(f[0], config.out_channels, 1, rng)

    @property
    def stage_kinds(self) -> list[str]:
        return [s.spec.kind for s in self.stages]

    def encode(self, x: Tensor) -> list[Tensor]:
        """Feature maps at full, 1/2, 1/4, 1/8 and 1/16 resolution."""
        feats = [self.stem(x)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats

    def __call__(self, x: Tensor) -> Tensor:
        spatial = x.shape[2:]
        extra = [(-n) % 16 for n in spatial]
        if any(extra):
            x = pad(x, [(0, e) for e in extra])
        feats = self.encode(x)
        d = feats[-1]
        for dec, skip in zip(self.decoders, reversed(feats[:-1])):
            d = dec(d, skip)
        out = self.head(d)
        if any(extra):
            out = out[:, :, : spatial[0], : spatial[1], : spatial[2]]
        return out


def build(config: ModelConfig, seed: int = 0) -> LegoNet:
    return LegoNet(config, np.random.default_rng(seed))


def forward(model: LegoNet, x) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return model(x)


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

@dataclass
class ComplexityRow:
    group: str
    params: int
    flops: int = 0


@dataclass
class ComplexityReport:
    version: str
    input_shape: tuple
    rows: list = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)


def _groups(model: LegoNet) -> list[tuple[str, Module]]:
    out = [("stem", model.stem)]
    for i, st in enumerate(model.stages, 1):
        out.append((f"stage{i}.down ({st.spec.kind})", st.down))
        out.append((f"stage{i}.block ({st.spec.kind}, C={st.spec.out_channels})", st.block))
    for i, dec in zip((4, 3, 2, 1), model.decoders):
        out.append((f"decoder{i} ({dec.c_deep}->{dec.c_skip})", dec))
    out.append(("head", model.head))
    return out


def param_count(model: LegoNet) -> dict[str, int]:
    """Exact learnable-scalar counts per group plus ``total``."""
    table = {name: mod.num_parameters() for name, mod in _groups(model)}
    table["total"] = sum(table.values())
    return table


def flop_count(model: LegoNet, input_shape: tuple | None = None) -> dict[str, int]:
    """Analytic multiply-accumulate counts per group plus ``total`` (batch of one)."""
    spatial = tuple(input_shape or model.config.input_shape)
    spatial = tuple(n + (-n) % 16 for n in spatial)
    table = {}
    shape = (model.config.in_channels,) + spatial
    m, shape = model.stem.flops(shape)
    table["stem"] = m
    skips = [shape]
    for i, st in enumerate(model.stages, 1):
        a, s_mid = st.down.flops(shape)
        b, shape = st.block.flops(s_mid)
        table[f"stage{i}.down ({st.spec.kind})"] = a
        table[f"stage{i}.block ({st.spec.kind}, C={st.spec.out_channels})"] = b
        skips.append(shape)
    deep = shape
    for i, dec, skip in zip((4, 3, 2, 1), model.decoders, reversed(skips[:-1])):
        m, deep = dec.flops(deep)
        table[f"decoder{i} ({dec.c_deep}->{dec.c_skip})"] = m
    table["head"] = model.head.flops(deep)[0]
    table["total"] = sum(table.values())
    return table


def analyze(config: ModelConfig, input_shape: tuple | None = None, seed: int = 0) -> ComplexityReport:
    model = build(config, seed)
    params = param_count(model)
    flops = flop_count(model, input_shape)
    report = ComplexityReport(config.version, tuple(input_shape or config.input_shape))
    for name in params:
        if name != "total":
            report.rows.append(ComplexityRow(name, params[name], flops[name]))
    return report


def format_report(report: ComplexityReport) -> str:
    ref_p, ref_f = REFERENCE_COMPLEXITY[report.version]
    lines = [f"LegoNet{report.version} @ input {'x'.join(map(str, report.input_shape))}",
             f"{'group':<40}{'params':>14}{'GMAC':>12}"]
    for r in report.rows:
        lines.append(f"{r.group:<40}{r.params:>14,}{r.flops / 1e9:>12.3f}")
    p, f = report.total_params, report.total_flops
    lines.append(f"{'total':<40}{p:>14,}{f / 1e9:>12.3f}")
    lines.append("")
    lines.append(f"{'':<22}{'measured':>12}{'reference':>12}{'ratio':>8}")
    lines.append(f"{'params (M)':<22}{p / 1e6:>12.2f}{ref_p:>12.2f}{p / 1e6 / ref_p:>8.2f}")
    lines.append(f"{'FLOPs (G, 1 MAC=1)':<22}{f / 1e9:>12.2f}{ref_f:>12.2f}{f / 1e9 / ref_f:>8.2f}")
    lines.append(f"{'FLOPs (G, 1 MAC=2)':<22}{2 * f / 1e9:>12.2f}{ref_f:>12.2f}{2 * f / 1e9 / ref_f:>8.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"LGNC"
CKPT_VERSION = 1
_DTYPES = {1: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def encode_checkpoint(state: dict[str, np.ndarray], header: dict[str, str]) -> bytes:
    """Serialize ``state`` with a canonical ``key=value`` text header."""
    buf = io.BytesIO()
    text = "\n".join(f"{k}={header[k]}" for k in sorted(header)).encode()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(state)))
    for name, arr in state.items():
        raw = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", 1, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def decode_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    view = memoryview(blob)
    if bytes(view[:4]) != CKPT_MAGIC:
        raise CheckpointError("not a LegoNet checkpoint (bad magic)")
    pos = 4
    try:
        version, hlen = struct.unpack_from("<II", view, pos)
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        pos += 8
        text = bytes(view[pos:pos + hlen]).decode()
        pos += hlen
        header = dict(line.split("=", 1) for line in text.splitlines() if line)
        (count,) = struct.unpack_from("<I", view, pos)
        pos += 4
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", view, pos)
            pos += 2
            name = bytes(view[pos:pos + nlen]).decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", view, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", view, pos)
            pos += 4 * ndim
            dtype = _DTYPES.get(code)
            if dtype is None:
                raise CheckpointError(f"unknown dtype code {code} for {name}")
            nbytes = math.prod(shape) * dtype.itemsize
            if pos + nbytes > len(view):
                raise CheckpointError(f"truncated payload for {name}")
            state[name] = np.frombuffer(view[pos:pos + nbytes], dtype=dtype).reshape(shape).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    return state, header


def checkpoint_header(model: LegoNet, phase: str = "segment", extra: dict | None = None) -> dict[str, str]:
    header = {"format": "legonet-checkpoint", "phase": phase}
    for line in model.config.to_text().splitlines():
        k, v = line.split("=", 1)
        header[f"config.{k}"] = v
    header.update({k: str(v) for k, v in (extra or {}).items()})
    return header


def checkpoint_bytes(model: LegoNet, phase: str = "segment", extra: dict | None = None) -> bytes:
    return encode_checkpoint(model.state_dict(), checkpoint_header(model, phase, extra))


def save_checkpoint(path, model: LegoNet, phase: str = "segment", extra: dict | None = None) -> str:
    """Write ``model`` to ``path``; returns the sha256 of the bytes written."""
    blob = checkpoint_bytes(model, phase, extra)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def config_from_header(header: dict[str, str]) -> ModelConfig:
    return ModelConfig.from_mapping({k[7:]: v for k, v in header.items() if k.startswith("config.")})


def load_checkpoint(path, strict: bool = True) -> tuple[LegoNet, dict[str, str]]:
    state, header = decode_checkpoint(Path(path).read_bytes())
    model = build(config_from_header(header), seed=0)
    model.load_state_dict(state, strict=strict)
    return model, header


def state_hash(model: Module) -> str:
    h = hashlib.sha256()
    for name, p in model.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


__all__ = [
    "ModelConfig", "LegoNet", "VERSION_BLOCKS", "REFERENCE_COMPLEXITY", "build", "forward",
    "desk_config", "param_count", "flop_count", "analyze", "format_report", "save_checkpoint",
    "load_checkpoint", "checkpoint_bytes", "checkpoint_header", "encode_checkpoint", "decode_checkpoint", "state_hash",
]
