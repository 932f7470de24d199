"""Virtual optical PUFs.

A PUF is a complex transfer matrix ``t[s, k]`` from DMD segment ``k`` to
speckle cell ``s`` on the single-pixel detector.  Amplitudes are Rayleigh
distributed with unit scale and phases uniform on [-pi, pi]; absolute intensity
is set by the detector configuration, not here.

Binary file layout (``SPUF1``), all little-endian::

    offset  size        field
    0       5           magic b"SPUF1"
    5       8           u64 seed
    13      4           u32 segment count m
    17      4           u32 cell count S
    21      16*S*m      (amplitude f64, phase f64) pairs, row-major over (s, k)
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config
from ._rng import make_rng

MAGIC = b"SPUF1"
_HEADER = struct.Struct("<5sQII")


@dataclass(frozen=True)
class PufInstance:
    seed: int
    amplitude: np.ndarray
    phase: np.ndarray
    puf_id: str = field(default="", compare=False)

    def __post_init__(self):
        amp = np.ascontiguousarray(self.amplitude, dtype="<f8")
        phs = np.ascontiguousarray(self.phase, dtype="<f8")
        if amp.ndim != 2 or amp.shape != phs.shape:
            raise ValueError("amplitude and phase must be matching S x m matrices")
        if np.any(amp < 0):
            raise ValueError("amplitudes must be non-negative")
        if np.any(np.abs(phs) > math.pi):
            raise ValueError("phases must lie in [-pi, pi]")
        amp.setflags(write=False)
        phs.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", phs)
        if not self.puf_id:
            digest = hashlib.sha256(self.to_bytes()).hexdigest()[:16]
            object.__setattr__(self, "puf_id", f"puf-{digest}")

    @property
    def cell_count(self) -> int:
        return self.amplitude.shape[0]

    @property
    def segment_count(self) -> int:
        return self.amplitude.shape[1]

    @property
    def transfer(self) -> np.ndarray:
        t = self.amplitude * np.exp(1j * self.phase)
        t.setflags(write=False)
        return t

    def scaled(self, factor: float) -> "PufInstance":
        """Same PUF with every transfer amplitude multiplied by ``factor``."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return PufInstance(self.seed, self.amplitude * factor, self.phase)

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, self.seed, self.segment_count, self.cell_count)
        pairs = np.stack([self.amplitude, self.phase], axis=-1).astype("<f8")
        return head + pairs.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PufInstance":
        if len(blob) < _HEADER.size:
            raise ValueError("truncated PUF file")
        magic, seed, m, s = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise ValueError(f"bad PUF magic {magic!r}")
        expected = _HEADER.size + 16 * s * m
        if len(blob) != expected:
            raise ValueError(f"PUF payload is {len(blob)} bytes, expected {expected}")
        pairs = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(s, m, 2)
        return cls(seed, pairs[..., 0].copy(), pairs[..., 1].copy())

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "PufInstance":
        return cls.from_bytes(Path(path).read_bytes())


def synthesize_puf(seed: int, m: int, S: int) -> PufInstance:
    """Draw a fresh PUF with ``S`` speckle cells and ``m`` challenge segments."""
    if m < 2 or m % 2:
        raise ValueError(f"segment count must be even and >= 2 (balanced challenges), got {m}")
    if S < 1:
        raise ValueError(f"cell count must be >= 1, got {S}")
    return PufInstance(seed, *_draw_tensor(make_rng(seed, "puf"), S, m))


def _draw_tensor(rng: np.random.Generator, S: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    amp = rng.rayleigh(1.0, size=(S, m))
    phase = rng.uniform(-math.pi, math.pi, size=(S, m))
    return amp, phase


@dataclass(frozen=True)
class MisalignmentParams:
    dx: float = 0.0  # micrometers
    dtheta: float = 0.0  # degrees
    ell_x: float = config.ELL_X_UM
    ell_theta: float = config.ELL_THETA_DEG

    def __post_init__(self):
        if self.ell_x <= 0 or self.ell_theta <= 0:
            raise ValueError("decorrelation scales must be positive")
        if self.dx < 0 or self.dtheta < 0:
            raise ValueError("dx and dtheta must be non-negative")

    @property
    def correlation(self) -> float:
        return math.exp(-((self.dx / self.ell_x) ** 2) - (self.dtheta / self.ell_theta) ** 2)


def apply_misalignment(puf: PufInstance, params: MisalignmentParams, seed: int) -> PufInstance:
    """Partially decorrelate ``puf`` as if the beam moved by (dx, dtheta).

    Each entry becomes ``c*t + sqrt(1-c^2)*t_fresh`` with ``t_fresh`` an
    independent tensor drawn from ``seed``, which keeps the per-entry variance.
    """
    c = params.correlation
    if c == 1.0:
        return puf
    amp, phase = _draw_tensor(make_rng(seed, "misalignment"), puf.cell_count, puf.segment_count)
    mixed = c * puf.transfer + math.sqrt(1.0 - c * c) * (amp * np.exp(1j * phase))
    return PufInstance(puf.seed, np.abs(mixed), np.angle(mixed))


@dataclass(frozen=True)
class SpeckleGeometry:
    z: float  # detector distance, mm
    d: float  # illumination width, mm
    wavelength: float = 632.8  # nm
    detector_diameter: float = 180.0  # um

    def __post_init__(self):
        if min(self.z, self.d, self.wavelength, self.detector_diameter) <= 0:
            raise ValueError("geometry parameters must be strictly positive")


def mean_speckle_size(geom: SpeckleGeometry) -> float:
    """Mean speckle diameter in micrometers, D = wavelength * z / d."""
    return geom.wavelength * 1e-3 * geom.z / geom.d


def cells_on_detector(geom: SpeckleGeometry, speckle_size: float | None = None) -> int:
    D = mean_speckle_size(geom) if speckle_size is None else speckle_size
    return max(1, round((geom.detector_diameter / D) ** 2))
