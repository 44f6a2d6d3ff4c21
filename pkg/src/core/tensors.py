"""Dense C×H×W tensors, the centered unitary 2-D DFT, seeded sampling and the
on-disk tensor format.

Spectra are always kept in centered layout: the zero-frequency bin of every
channel sits at (H // 2, W // 2).
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, TensorFormatError

MAGIC = b"METR"
FORMAT_VERSION = 1
DTYPE_REAL = 0
DTYPE_COMPLEX = 1
# magic, version u16, dtype u8, ndim u8, C/H/W u32
_HEADER = struct.Struct("<4sHBB3I")
_MAX_ELEMENTS = 1 << 40


def _freeze(data: np.ndarray, dtype) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.ndim != 3:
        raise InvalidArgumentError(f"expected a C×H×W array, got {arr.ndim} dimensions")
    if min(arr.shape) <= 0:
        raise InvalidArgumentError(f"all dimensions must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("tensor contains NaN or Inf values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class LatentTensor:
    """Real-valued C×H×W tensor (latent noise or a decoded image)."""

    data: np.ndarray
    # Largest |imag| dropped when this tensor came out of ifft2.
    imag_residual: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "data", _freeze(self.data, np.float64))

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> LatentTensor:
        return cls(np.zeros((channels, height, width)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def like(self, data: np.ndarray) -> LatentTensor:
        """Same-shaped tensor holding ``data``; used by transforms that keep geometry."""
        if data.shape != self.shape:
            raise InvalidArgumentError(f"shape mismatch: {data.shape} vs {self.shape}")
        return LatentTensor(data)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Complex C×H×W spectrum in centered layout."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _freeze(self.data, np.complex128))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def center(self) -> tuple[int, int]:
        return self.height // 2, self.width // 2

    def copy_with_channel(self, channel: int, plane: np.ndarray) -> Spectrum:
        """New spectrum with one channel plane replaced."""
        if not 0 <= channel < self.channels:
            raise InvalidArgumentError(f"channel {channel} out of range for {self.channels} channels")
        data = np.array(self.data)
        data[channel] = plane
        return Spectrum(data)


def fft2(t: LatentTensor) -> Spectrum:
    """Per-channel unitary DFT, shifted so DC lands on (H // 2, W // 2)."""
    spec = np.fft.fft2(t.data, axes=(-2, -1), norm="ortho")
    return Spectrum(np.fft.fftshift(spec, axes=(-2, -1)))


def ifft2(s: Spectrum) -> LatentTensor:
    """Inverse of fft2. Keeps the real part and records the dropped imaginary peak."""
    out = np.fft.ifft2(np.fft.ifftshift(s.data, axes=(-2, -1)), axes=(-2, -1), norm="ortho")
    residual = float(np.max(np.abs(out.imag)))
    return LatentTensor(out.real, imag_residual=residual)


class Rng:
    """Seeded sample stream.

    Uniform doubles come from numpy's PCG64 bit generator (seeded through
    SeedSequence so child streams are independent of call order). Gaussian
    samples use the Box–Muller transform on pairs of those uniforms:
    z0 = sqrt(-2 ln u1) cos(2π u2), z1 = sqrt(-2 ln u1) sin(2π u2).
    """

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(k) for k in stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def child(self, *key: int) -> Rng:
        """Independent stream addressed by (seed, stream + key)."""
        return Rng(self.seed, self.stream + tuple(key))

    def uniform(self, size: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.random(size)

    def standard_normal(self, size: int | tuple[int, ...]) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1]
        u2 = self._gen.random(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n].reshape(shape)

    def integers(self, high: int, size: int | None = None):
        return self._gen.integers(0, high, size=size)


def sample_gaussian(rng: Rng, shape: tuple[int, int, int]) -> LatentTensor:
    """Standard normal C×H×W tensor drawn from ``rng``."""
    if len(shape) != 3 or min(shape) <= 0:
        raise InvalidArgumentError(f"shape must be three positive dims, got {shape}")
    return LatentTensor(rng.standard_normal(tuple(shape)))


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(t: LatentTensor | Spectrum) -> bytes:
    """Serialize a tensor: fixed header (magic, version, kind, shape) then raw little-endian data."""
    if isinstance(t, Spectrum):
        dtype, payload = DTYPE_COMPLEX, np.ascontiguousarray(t.data, dtype="<c16").tobytes()
    else:
        dtype, payload = DTYPE_REAL, np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    c, h, w = t.shape
    return _HEADER.pack(MAGIC, FORMAT_VERSION, dtype, 3, c, h, w) + payload


def decode_tensor(buf: bytes, path: str | None = None) -> LatentTensor | Spectrum:
    """Parse ``encode_tensor`` output; any malformed header or short payload raises TensorFormatError."""
    if len(buf) < _HEADER.size:
        if len(buf) < 4 or buf[:4] != MAGIC:
            raise TensorFormatError("bad magic bytes", 0, path)
        raise TensorFormatError("truncated header", len(buf), path)
    magic, version, dtype, ndim, c, h, w = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TensorFormatError("bad magic bytes", 0, path)
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"unsupported format version {version}", 4, path)
    if dtype not in (DTYPE_REAL, DTYPE_COMPLEX):
        raise TensorFormatError(f"unknown dtype code {dtype}", 6, path)
    if ndim != 3:
        raise TensorFormatError(f"expected ndim 3, got {ndim}", 7, path)
    count = c * h * w
    if count == 0 or count > _MAX_ELEMENTS:
        raise TensorFormatError(f"dimension overflow {c}x{h}x{w}", 8, path)
    itemsize = 16 if dtype == DTYPE_COMPLEX else 8
    expected = _HEADER.size + count * itemsize
    if len(buf) < expected:
        raise TensorFormatError(f"truncated payload, expected {expected} bytes", len(buf), path)
    if len(buf) > expected:
        raise TensorFormatError("trailing bytes after payload", expected, path)
    raw = np.frombuffer(buf, dtype="<c16" if dtype == DTYPE_COMPLEX else "<f8", offset=_HEADER.size)
    raw = raw.reshape(c, h, w)
    try:
        return Spectrum(raw) if dtype == DTYPE_COMPLEX else LatentTensor(raw)
    except InvalidArgumentError as e:
        raise TensorFormatError(str(e), _HEADER.size, path) from e


def write_tensor(path: str | os.PathLike, t: LatentTensor | Spectrum) -> None:
    atomic_write_bytes(Path(path), encode_tensor(t))


def read_tensor(path: str | os.PathLike) -> LatentTensor | Spectrum:
    return decode_tensor(Path(path).read_bytes(), str(path))
