"""Toy mixture samplers, latent prior, seeded substreams and the IDX codec."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor

__all__ = [
    "SyntheticSpec",
    "RngStream",
    "sample_real",
    "sample_latent",
    "IdxTensor",
    "IdxFormatError",
    "parse_idx",
    "serialize_idx",
    "read_idx",
    "write_idx",
    "normalize_images",
    "denormalize_images",
    "load_mnist",
]

SUBSTREAMS = {"data": 0, "latent": 1, "init": 2, "eval": 3, "reference": 4}


class RngStream:
    """Philox (counter-based) generator keyed by ``(seed, substream)``.

    Streams with the same seed but different substream names never share
    draws, so a seed study can vary one stream and hold the others fixed.
    """

    algorithm = "philox"

    def __init__(self, seed: int, substream: str | int = "data"):
        self.seed = int(seed)
        self.substream = substream
        sid = SUBSTREAMS[substream] if isinstance(substream, str) else int(substream)
        self.generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=(sid,))))
        self.draws = 0

    def normal(self, size) -> np.ndarray:
        self.draws += int(np.prod(size))
        return self.generator.standard_normal(size)

    def integers(self, high: int, size) -> np.ndarray:
        self.draws += int(np.prod(size))
        return self.generator.integers(0, high, size=size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, substream={self.substream!r}, draws={self.draws})"


@dataclass
class SyntheticSpec:
    """2D Gaussian mixture with equally weighted modes.

    ``radius`` is the ring radius for ring8, the half-width of the lattice
    for grid25 and the outer radius for spiral.
    """

    kind: str = "ring8"
    radius: float = 2.0
    std: float = 0.05
    seed: int = 0
    n_spiral_modes: int = 12

    def __post_init__(self):
        if self.kind not in ("ring8", "grid25", "spiral"):
            raise ValueError(f"unknown synthetic dataset {self.kind!r}; expected ring8, grid25 or spiral")
        if self.std <= 0:
            raise ValueError("mode std must be positive")

    def centers(self) -> np.ndarray:
        if self.kind == "ring8":
            angles = 2 * np.pi * np.arange(8) / 8
            return self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        if self.kind == "grid25":
            ticks = np.linspace(-self.radius, self.radius, 5)
            xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
            return np.stack([xx.ravel(), yy.ravel()], axis=1)
        t = np.linspace(0.25, 1.0, self.n_spiral_modes)
        angle = 3 * np.pi * t
        return self.radius * t[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)


def _gen(rng):
    return rng if isinstance(rng, RngStream) else RngStream(rng if rng is not None else 0, "data")


def sample_real(spec: SyntheticSpec, n: int, rng: RngStream | int | None = None) -> Tensor:
    if n < 1:
        raise ValueError("need at least one sample")
    rng = _gen(rng)
    centers = spec.centers()
    idx = rng.integers(len(centers), n)
    return Tensor(centers[idx] + spec.std * rng.normal((n, 2)))


def sample_latent(n: int, dim: int, rng: RngStream | int | None = None) -> Tensor:
    if n < 1 or dim < 1:
        raise ValueError("latent batch needs n >= 1 and dim >= 1")
    rng = rng if isinstance(rng, RngStream) else RngStream(rng if rng is not None else 0, "latent")
    return Tensor(rng.normal((n, dim)))


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class IdxTensor:
    type_code: int
    shape: tuple[int, ...]
    data: np.ndarray = field(repr=False)

    @property
    def dtype(self) -> np.dtype:
        return IDX_TYPES[self.type_code]


def parse_idx(raw: bytes) -> IdxTensor:
    """Decode an IDX buffer: 2 zero bytes, type byte, rank byte, big-endian u32 extents, payload."""
    raw = bytes(raw)
    if len(raw) < 4:
        raise IdxFormatError(f"need 4 magic bytes, got {len(raw)}", len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError(f"bad magic {raw[:4].hex()}: first two bytes must be zero", 0)
    type_code, rank = raw[2], raw[3]
    if type_code not in IDX_TYPES:
        raise IdxFormatError(f"unknown element type 0x{type_code:02x}", 2)
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise IdxFormatError(f"header truncated: {rank} extents need {header_end} bytes, have {len(raw)}", len(raw))
    shape = struct.unpack(f">{rank}I", raw[4:header_end])
    dtype = IDX_TYPES[type_code]
    end = header_end + int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) < end:
        raise IdxFormatError(f"payload truncated: expected {end - header_end} bytes, have {len(raw) - header_end}", end)
    if len(raw) > end:
        raise IdxFormatError(f"{len(raw) - end} trailing bytes after payload", end)
    data = np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(shape)
    return IdxTensor(type_code, tuple(shape), data.astype(dtype.newbyteorder("=")))


def serialize_idx(array) -> bytes:
    a = np.asarray(array.data if isinstance(array, IdxTensor) else array)
    for code, dt in IDX_TYPES.items():
        if dt.kind == a.dtype.kind and dt.itemsize == a.dtype.itemsize:
            break
    else:
        raise TypeError(f"dtype {a.dtype} has no IDX element type")
    if a.ndim > 255:
        raise ValueError("IDX supports at most 255 dimensions")
    header = bytes([0, 0, code, a.ndim]) + struct.pack(f">{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype=IDX_TYPES[code]).tobytes()


def read_idx(path) -> IdxTensor:
    return parse_idx(Path(path).read_bytes())


def write_idx(path, array) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_idx(array))
    return path


def normalize_images(pixels) -> np.ndarray:
    """Map bytes 0..255 to [-1, 1]: mean 0.5, std 0.5 after scaling to [0, 1]."""
    x = np.asarray(pixels)
    if x.dtype != np.uint8:
        raise TypeError(f"expected uint8 pixels, got {x.dtype}")
    return (x.astype(np.float64) / 255.0 - 0.5) / 0.5


def denormalize_images(x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return np.clip(np.rint((x * 0.5 + 0.5) * 255.0), 0, 255).astype(np.uint8)


def load_mnist(images_path, labels_path=None, limit: int | None = None):
    """Flattened, normalised images (n, rows*cols) and optional labels."""
    images = read_idx(images_path)
    if images.type_code != 0x08 or len(images.shape) != 3:
        raise ValueError(f"{images_path}: expected a rank-3 unsigned-byte image file")
    pix = images.data[:limit]
    x = normalize_images(pix).reshape(pix.shape[0], -1)
    if labels_path is None:
        return x, None
    labels = read_idx(labels_path)
    if len(labels.shape) != 1 or labels.shape[0] != images.shape[0]:
        raise ValueError("label file does not match image count")
    return x, labels.data[:limit].astype(np.int64)
