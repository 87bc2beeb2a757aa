"""Volume container, LGV1 file format, CT preprocessing and a synthetic tube dataset.

Arrays are ``(D, H, W)``; depth is the vessel's long axis in the synthetic
generator.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

HU = "HU"
NORMALIZED = "normalized"
_DOMAIN_CODES = {HU: 0, NORMALIZED: 1}
_DOMAIN_NAMES = {v: k for k, v in _DOMAIN_CODES.items()}

HU_CLIP = 1024.0


class VolumeFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin_extent: tuple | None = None
    domain: str = NORMALIZED

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "spacing", spacing)
        origin = data.shape if self.origin_extent is None else tuple(int(n) for n in self.origin_extent)
        object.__setattr__(self, "origin_extent", origin)
        if self.domain not in _DOMAIN_CODES:
            raise ValueError(f"unknown intensity domain {self.domain!r}")
        if self.domain == NORMALIZED and data.size and (data.min() < -1.0 or data.max() > 1.0):
            raise ValueError("normalized volume has values outside [-1, 1]")

    @property
    def shape(self) -> tuple:
        return self.data.shape


# ---------------------------------------------------------------------------
# LGV1 format
# ---------------------------------------------------------------------------

LGV1_MAGIC = b"LGV1"
_HEADER = struct.Struct("<4s3I3dB3I")


def encode_volume(v: Volume) -> bytes:
    header = _HEADER.pack(LGV1_MAGIC, *v.shape, *v.spacing, _DOMAIN_CODES[v.domain], *v.origin_extent)
    return header + np.ascontiguousarray(v.data, dtype="<f4").tobytes()


def decode_volume(blob: bytes) -> Volume:
    if len(blob) < _HEADER.size:
        raise VolumeFormatError(f"file too short for header ({len(blob)} bytes)")
    magic, d, h, w, sd, sh, sw, dom, od, oh, ow = _HEADER.unpack_from(blob)
    if magic != LGV1_MAGIC:
        raise VolumeFormatError(f"bad magic {magic!r}")
    if dom not in _DOMAIN_NAMES:
        raise VolumeFormatError(f"bad domain code {dom}")
    expected = d * h * w * 4
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise VolumeFormatError(f"payload size mismatch: expected {expected} bytes for {(d, h, w)}, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(d, h, w).astype(np.float32)
    return Volume(data, (sd, sh, sw), (od, oh, ow), _DOMAIN_NAMES[dom])


def save_volume(path, v: Volume) -> None:
    Path(path).write_bytes(encode_volume(v))


def load_volume(path) -> Volume:
    return decode_volume(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def clip_normalize(v: Volume) -> Volume:
    """Clip HU to [-1024, 1024] and scale to [-1, 1]."""
    if v.domain != HU:
        raise ValueError("volume is already normalized")
    data = np.clip(v.data, -HU_CLIP, HU_CLIP) / np.float32(HU_CLIP)
    return replace(v, data=data, domain=NORMALIZED)


def _linear_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_out == n_in:
        return a
    pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
    i0 = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = pos - i0
    shape = [1] * a.ndim
    shape[axis] = n_out
    a0 = np.take(a, i0, axis=axis)
    a1 = np.take(a, i1, axis=axis)
    return a0 + t.reshape(shape) * (a1 - a0)


def _nearest_axis(a: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = a.shape[axis]
    if n_out == n_in:
        return a
    pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
    return np.take(a, np.rint(pos).astype(int), axis=axis)


def resample_array(data: np.ndarray, target: tuple, mode: str = "trilinear") -> np.ndarray:
    """Separable corner-aligned resampling; output stays within the input range."""
    if any(int(n) <= 0 for n in target):
        raise ValueError(f"target extents must be positive, got {target}")
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown resize mode {mode!r}")
    src = np.asarray(data)
    out = src.astype(np.float64)
    step = _linear_axis if mode == "trilinear" else _nearest_axis
    for axis, n in enumerate(target):
        out = step(out, int(n), axis)
    if mode == "trilinear" and src.size:
        out = np.clip(out, src.min(), src.max())
    return out.astype(src.dtype)


def resize(v: Volume, target: tuple, mode: str = "trilinear") -> Volume:
    """Resample to ``target`` extents; the original extent is kept for the inverse resize."""
    target = tuple(int(n) for n in target)
    if target == v.shape:
        return v
    scale = tuple(s * n / t for s, n, t in zip(v.spacing, v.shape, target))
    return Volume(resample_array(v.data, target, mode), scale, v.origin_extent, v.domain)


def restore_extent(v: Volume, mode: str = "trilinear") -> Volume:
    return resize(v, v.origin_extent, mode)


def resample_isotropic(v: Volume, mode: str = "trilinear") -> Volume:
    target = tuple(max(1, int(round(n * s))) for n, s in zip(v.shape, v.spacing))
    if target == v.shape and v.spacing == (1.0, 1.0, 1.0):
        return v
    out = resample_array(v.data, target, mode)
    return Volume(out, (1.0, 1.0, 1.0), v.origin_extent, v.domain)


# ---------------------------------------------------------------------------
# synthetic vessels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TubeParams:
    radius: float
    center: tuple
    amplitude: tuple
    frequency: tuple
    phase: tuple


def _smooth_background(shape, rng, n_waves: int = 4, amplitude: float = 0.12) -> np.ndarray:
    grids = np.meshgrid(*[np.linspace(0, 1, n) for n in shape], indexing="ij")
    bg = np.zeros(shape)
    for _ in range(n_waves):
        k = rng.uniform(0.5, 2.0, size=3) * rng.choice([-1, 1], size=3)
        phi = rng.uniform(0, 2 * np.pi)
        bg += np.cos(2 * np.pi * sum(ki * g for ki, g in zip(k, grids)) + phi)
    return amplitude * bg / n_waves


def synth_tube_case(edge: int, rng: np.random.Generator, radius_range=(1.0, 2.0),
                    noise: float = 0.05) -> tuple[Volume, Volume, TubeParams]:
    """One vertical tube with a perivascular mask of three times its radius."""
    if edge < 16:
        raise ValueError("volume edge must be at least 16")
    r = rng.uniform(*radius_range)
    params = TubeParams(
        radius=r,
        center=tuple(rng.uniform(0.4 * edge, 0.6 * edge, size=2)),
        amplitude=tuple(rng.uniform(0.0, 0.08 * edge, size=2)),
        frequency=tuple(rng.uniform(0.3, 1.0, size=2)),
        phase=tuple(rng.uniform(0, 2 * np.pi, size=2)),
    )
    z = np.arange(edge)
    cy = params.center[0] + params.amplitude[0] * np.sin(2 * np.pi * params.frequency[0] * z / edge + params.phase[0])
    cx = params.center[1] + params.amplitude[1] * np.sin(2 * np.pi * params.frequency[1] * z / edge + params.phase[1])
    yy, xx = np.meshgrid(np.arange(edge), np.arange(edge), indexing="ij")
    dist = np.sqrt((yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2)

    mask = (dist <= 3.0 * r).astype(np.float32)
    tube = 1.0 / (1.0 + np.exp((dist - r) / 0.35))
    image = -0.4 + 1.1 * tube + _smooth_background((edge,) * 3, rng) + rng.normal(0.0, noise, size=(edge,) * 3)
    image = np.clip(image, -1.0, 1.0)
    return Volume(image), Volume(mask), params


def synth_tube_dataset(n_cases: int, edge: int, rng: np.random.Generator | int) -> list[tuple[Volume, Volume]]:
    rng = np.random.default_rng(rng)
    return [synth_tube_case(edge, rng)[:2] for _ in range(n_cases)]


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    image_path: str
    mask_path: str
    cohort: str = ""


MANIFEST_FIELDS = ("case_id", "image_path", "mask_path", "cohort")


def write_manifest(path, records: list[CaseRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            w.writerow([r.case_id, r.image_path, r.mask_path, r.cohort])


def read_manifest(path) -> list[CaseRecord]:
    base = Path(path).parent
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS[:3]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"manifest missing columns {sorted(missing)}")
        for row in reader:
            img, msk = Path(row["image_path"]), Path(row["mask_path"])
            out.append(CaseRecord(
                row["case_id"],
                str(img if img.is_absolute() else base / img),
                str(msk if msk.is_absolute() else base / msk),
                row.get("cohort") or "",
            ))
    return out


def load_case(record: CaseRecord) -> tuple[Volume, Volume]:
    image, mask = load_volume(record.image_path), load_volume(record.mask_path)
    if image.shape != mask.shape:
        raise ValueError(f"case {record.case_id}: image {image.shape} and mask {mask.shape} differ")
    return image, mask


def write_dataset(directory, cases: list[tuple[Volume, Volume]], cohort: str = "synthetic",
                  prefix: str = "case") -> list[CaseRecord]:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i, (image, mask) in enumerate(cases):
        cid = f"{prefix}{i:03d}"
        save_volume(directory / "images" / f"{cid}.lgv", image)
        save_volume(directory / "masks" / f"{cid}.lgv", mask)
        records.append(CaseRecord(cid, f"images/{cid}.lgv", f"masks/{cid}.lgv", cohort))
    write_manifest(directory / "manifest.csv", records)
    return records
