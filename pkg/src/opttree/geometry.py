"""Dyadic hyperrectangles in the unit cube and the binary midpoint partition.

A region is identified by one binary digit string per dimension. The digits
``b1..bk`` of dimension ``j`` select the interval ``[s/2^k, (s+1)/2^k)`` where
``s`` is their binary value, so the root ``[0,1]^p`` has an empty string in
every dimension. Internally a region stores ``(levels, index)``: the string
length and its integer value per dimension. That pair is exactly the code, so
all hashing and equality go through it and never through float bounds.

Dimensions are 0-based throughout the Python API.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import CodeParseError, ConfigError, DepthCapError

DEFAULT_DEPTH_CAP = 40
MAX_DEPTH_CAP = 60

EMPTY = "ε"
EMPTY_ASCII = "e"
SEP = "|"


@dataclass(frozen=True, order=True)
class Region:
    """Dyadic box ``prod_j [index_j / 2^levels_j, (index_j + 1) / 2^levels_j]``."""

    levels: tuple[int, ...]
    index: tuple[int, ...]

    def __post_init__(self):
        if len(self.levels) != len(self.index) or not self.levels:
            raise ValueError("levels and index must be non-empty and of equal length")
        for k, s in zip(self.levels, self.index):
            if k < 0 or not 0 <= s < (1 << k):
                raise ValueError(f"index {s} out of range for level {k}")

    @classmethod
    def root(cls, p: int) -> "Region":
        if p < 1:
            raise ConfigError("dimension must be >= 1")
        return cls((0,) * p, (0,) * p)

    @property
    def p(self) -> int:
        return len(self.levels)

    @property
    def level(self) -> int:
        """Tree level, i.e. total code length across dimensions."""
        return sum(self.levels)

    @property
    def key(self) -> tuple[int, ...]:
        """Flat integer tuple used as the hot-path cache key."""
        return self.levels + self.index

    @classmethod
    def from_key(cls, key: Sequence[int]) -> "Region":
        p = len(key) // 2
        return cls(tuple(key[:p]), tuple(key[p:]))

    def volume(self) -> float:
        return math.ldexp(1.0, -self.level)

    def log_volume(self) -> float:
        return -self.level * math.log(2.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([math.ldexp(s, -k) for k, s in zip(self.levels, self.index)])
        hi = np.array([math.ldexp(s + 1, -k) for k, s in zip(self.levels, self.index)])
        return lo, hi

    def midpoint(self, dim: int) -> float:
        k, s = self.levels[dim], self.index[dim]
        return math.ldexp(2 * s + 1, -(k + 1))

    def code(self, ascii: bool = False) -> str:
        return region_code(self, ascii=ascii)

    def contains(self, other: "Region") -> bool:
        """True when ``other`` is this region or one of its descendants."""
        for k, s, k2, s2 in zip(self.levels, self.index, other.levels, other.index):
            if k2 < k or (s2 >> (k2 - k)) != s:
                return False
        return True

    def children(self, dim: int) -> tuple["Region", "Region"]:
        levels = self.levels[:dim] + (self.levels[dim] + 1,) + self.levels[dim + 1:]
        left = self.index[:dim] + (2 * self.index[dim],) + self.index[dim + 1:]
        right = self.index[:dim] + (2 * self.index[dim] + 1,) + self.index[dim + 1:]
        return Region(levels, left), Region(levels, right)

    def __str__(self) -> str:
        return self.code()


@dataclass(frozen=True)
class PartitionScheme:
    """Binary midpoint splits along each of ``p`` dimensions."""

    p: int
    depth_cap: int = DEFAULT_DEPTH_CAP

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError("dimension must be >= 1")
        check_depth_cap(self.depth_cap)

    def available_dims(self, region: Region) -> list[int]:
        return [j for j, k in enumerate(region.levels) if k < self.depth_cap]

    def split(self, region: Region, dim: int) -> tuple[Region, Region]:
        return split(region, dim, self.depth_cap)


def check_depth_cap(cap: int) -> int:
    if not isinstance(cap, (int, np.integer)) or not 0 <= cap <= MAX_DEPTH_CAP:
        raise ConfigError(f"depth cap must be an integer in [0, {MAX_DEPTH_CAP}], got {cap!r}")
    return int(cap)


def split(region: Region, dim: int, depth_cap: int = DEFAULT_DEPTH_CAP) -> tuple[Region, Region]:
    """Halve ``region`` at the midpoint of dimension ``dim``.

    The left child is ``{t in A : t_dim < midpoint}``; the right child is the
    rest of ``A`` and therefore owns the midpoint itself.
    """
    if not 0 <= dim < region.p:
        raise ConfigError(f"split dimension {dim} outside [0, {region.p})")
    if region.levels[dim] >= depth_cap:
        raise DepthCapError(
            f"dimension {dim} of region {region.code()} is already at the depth cap {depth_cap}"
        )
    return region.children(dim)


def region_code(region: Region, ascii: bool = False) -> str:
    """Canonical text code, e.g. ``"ε|01|1"``."""
    empty = EMPTY_ASCII if ascii else EMPTY
    parts = []
    for k, s in zip(region.levels, region.index):
        parts.append(format(s, f"0{k}b") if k else empty)
    return SEP.join(parts)


def decode(code: str, p: int | None = None) -> Region:
    """Parse a region code; accepts both ``ε`` and ASCII ``e`` for empty segments."""
    if not isinstance(code, str):
        raise CodeParseError(f"region code must be a string, got {type(code).__name__}")
    segments = code.split(SEP)
    if p is not None and len(segments) != p:
        raise CodeParseError(f"expected {p} segments, got {len(segments)} in {code!r}")
    levels, index = [], []
    for pos, seg in enumerate(segments):
        if seg in (EMPTY, EMPTY_ASCII):
            levels.append(0)
            index.append(0)
        elif seg and all(ch in "01" for ch in seg):
            levels.append(len(seg))
            index.append(int(seg, 2))
        else:
            shown = seg if seg else "<empty>"
            raise CodeParseError(f"malformed segment {pos} ({shown!r}) in region code {code!r}")
    return Region(tuple(levels), tuple(index))


def count_regions(level: int, p: int) -> int:
    """Number of distinct regions at tree level ``level``: C(k+p-1, k) 2^k."""
    if level < 0 or p < 1:
        raise ConfigError("need level >= 0 and p >= 1")
    return math.comb(level + p - 1, level) << level


def count_regions_upto(level: int, p: int) -> int:
    return sum(count_regions(i, p) for i in range(level + 1))


def iter_level_regions(level: int, p: int) -> Iterator[Region]:
    """Yield every region at ``level`` by direct construction of its code."""
    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for first in range(total + 1):
            for rest in compositions(total - first, parts - 1):
                yield (first,) + rest

    for levels in compositions(level, p):
        for index in itertools.product(*(range(1 << k) for k in levels)):
            yield Region(levels, index)
