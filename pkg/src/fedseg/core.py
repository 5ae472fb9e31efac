"""Foundational value types: images, masks, parameter vectors and RNG streams."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Image2D:
    """Row-major intensity grid, float32, non-negative and finite."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"Image2D needs a 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Image2D values must be finite")
        if arr.size and arr.min() < 0:
            raise ValueError("Image2D values must be >= 0")
        object.__setattr__(self, "data", _frozen(arr.copy()))

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[float]) -> "Image2D":
        values = np.asarray(values, dtype=np.float32)
        if values.size != width * height:
            raise ValueError(f"expected {width * height} values, got {values.size}")
        return cls(values.reshape(height, width))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        return isinstance(other, Image2D) and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major {0,1} mask stored as uint8."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"BinaryMask needs a 2D array, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        elif not np.all((arr == 0) | (arr == 1)):
            raise ValueError("BinaryMask values must be 0 or 1")
        object.__setattr__(self, "data", _frozen(arr.astype(np.uint8)))

    @classmethod
    def blank(cls, shape: tuple[int, int]) -> "BinaryMask":
        return cls(np.zeros(shape, dtype=np.uint8))

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[int]) -> "BinaryMask":
        values = np.asarray(values)
        if values.size != width * height:
            raise ValueError(f"expected {width * height} values, got {values.size}")
        return cls(values.reshape(height, width))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def area(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other):
        return isinstance(other, BinaryMask) and np.array_equal(self.data, other.data)

    __hash__ = None


def check_same_shape(a, b) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def image_max_pixel(img: Image2D) -> float:
    if img.data.size == 0:
        raise ValueError("empty image has no maximum")
    return float(img.data.max())


def concat_state(img: Image2D, mask: BinaryMask) -> np.ndarray:
    """Stack the max-scaled image and the mask into a (2, H, W) float32 state.

    An all-zero image is scaled by 1.0 instead of its maximum.
    """
    check_same_shape(img, mask)
    max_p = image_max_pixel(img)
    scale = max_p if max_p > 0 else 1.0
    state = np.empty((2,) + img.shape, dtype=np.float32)
    state[0] = img.data / np.float32(scale)
    state[1] = mask.data
    return state


# --------------------------------------------------------------------------
# Parameter vectors

@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Flat float32 array partitioned into named contiguous segments."""

    values: np.ndarray
    layout: tuple[Segment, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32).ravel()
        layout = tuple(Segment(*s) if not isinstance(s, Segment) else s for s in self.layout)
        validate_layout(layout, values.size)
        object.__setattr__(self, "values", _frozen(values.copy()))
        object.__setattr__(self, "layout", layout)

    def __len__(self) -> int:
        return self.values.size

    def names(self) -> list[str]:
        return [s.name for s in self.layout]

    def same_layout(self, other: "ParameterVector") -> bool:
        return self.layout == other.layout

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.layout)

    def __eq__(self, other):
        return (
            isinstance(other, ParameterVector)
            and self.layout == other.layout
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None


def validate_layout(layout: Sequence[Segment], total: int) -> None:
    if total <= 0:
        raise ValueError("parameter vector must be non-empty")
    names = set()
    pos = 0
    for seg in layout:
        if seg.name in names:
            raise ValueError(f"duplicate segment name {seg.name!r}")
        names.add(seg.name)
        if seg.length <= 0:
            raise ValueError(f"segment {seg.name!r} has non-positive length")
        if seg.offset != pos:
            raise ValueError(
                f"segment {seg.name!r} at offset {seg.offset}, expected {pos} "
                "(segments must be contiguous and non-overlapping)"
            )
        pos += seg.length
    if pos != total:
        raise ValueError(f"layout covers {pos} values but vector has {total}")


def param_slice(pv: ParameterVector, name: str) -> np.ndarray:
    for seg in pv.layout:
        if seg.name == name:
            return pv.values[seg.offset:seg.offset + seg.length]
    raise KeyError(f"unknown segment {name!r}")


def param_assemble(segments: Iterable[tuple[str, np.ndarray]]) -> ParameterVector:
    layout = []
    chunks = []
    offset = 0
    for name, arr in segments:
        arr = np.asarray(arr, dtype=np.float32).ravel()
        layout.append(Segment(name, offset, arr.size))
        chunks.append(arr)
        offset += arr.size
    if not chunks:
        raise ValueError("cannot assemble an empty parameter vector")
    return ParameterVector(np.concatenate(chunks), tuple(layout))


# --------------------------------------------------------------------------
# Random streams

@dataclass(frozen=True)
class RngStream:
    """Seeded, platform-stable random stream.

    Backed by the Philox4x64-10 counter-based generator keyed by
    ``(seed, stream_id)``, so equal keys give equal sequences everywhere.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for v in (self.seed, self.stream_id):
            if not 0 <= v < 2**64:
                raise ValueError("seed and stream_id must fit in 64 bits")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *path: int) -> "RngStream":
        """Derive an independent stream from this one and an integer path."""
        ss = np.random.SeedSequence([self.seed, self.stream_id, *path])
        a, b = ss.generate_state(2, dtype=np.uint64)
        return RngStream(int(a), int(b))
