"""Sample ingestion, rescaling into the unit cube, and per-region counting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, IntegrityError
from .geometry import Region

DEGENERATE_WIDTH = 1e-9


@dataclass(frozen=True)
class Transform:
    """Per-dimension affine map ``unit = raw * scale + offset``."""

    scale: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.scale, dtype=float)
        if np.any(scale == 0) or not np.all(np.isfinite(scale)):
            raise DataError("transform scale must be finite and nonzero")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))

    @classmethod
    def identity(cls, p: int) -> "Transform":
        return cls(np.ones(p), np.zeros(p))

    @property
    def p(self) -> int:
        return self.scale.size

    @property
    def jacobian(self) -> float:
        """Density factor from unit-cube units to raw data units."""
        return float(np.prod(np.abs(self.scale)))

    def forward(self, raw: np.ndarray) -> np.ndarray:
        return np.asarray(raw, dtype=float) * self.scale + self.offset

    def inverse(self, unit: np.ndarray) -> np.ndarray:
        return (np.asarray(unit, dtype=float) - self.offset) / self.scale

    def to_dict(self) -> dict:
        return {"scale": self.scale.tolist(), "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Transform":
        try:
            return cls(np.array(d["scale"], dtype=float), np.array(d["offset"], dtype=float))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad transform record: {exc}") from exc


@dataclass(frozen=True)
class SampleSet:
    """Immutable ``n x p`` sample matrix living in ``[0,1]^p``."""

    unit: np.ndarray
    transform: Transform
    row_ids: np.ndarray | None = None
    _grids: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.unit.shape[0]

    @property
    def p(self) -> int:
        return self.unit.shape[1]

    def grid(self, depth: int) -> np.ndarray:
        """Integer coordinates ``floor(x * 2^depth)`` clipped to ``2^depth - 1``.

        Bit ``depth - k - 1`` of a coordinate tells which half of a level-``k``
        interval the point falls in, with midpoints going to the upper half.
        """
        g = self._grids.get(depth)
        if g is None:
            top = (1 << depth) - 1
            g = np.floor(np.ldexp(self.unit, depth)).astype(np.int64)
            np.clip(g, 0, top, out=g)
            g.setflags(write=False)
            self._grids[depth] = g
        return g


@dataclass(frozen=True)
class RegionCounts:
    """Child counts ``(n_left, n_right)`` for every candidate split of a region."""

    region: Region
    counts: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return sum(self.counts[0]) if self.counts else 0


def _validate(raw) -> np.ndarray:
    x = np.asarray(raw, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise DataError(f"expected a non-empty n x p matrix, got shape {x.shape}")
    bad = ~np.isfinite(x)
    if bad.any():
        r, c = map(int, np.argwhere(bad)[0])
        raise DataError(f"non-finite value {x[r, c]!r} at row {r}, column {c}")
    return x


def ingest(raw, bbox: Sequence[Sequence[float]] | None = None, row_ids=None) -> SampleSet:
    """Rescale raw samples into ``[0,1]^p``.

    Parameters
    ----------
    raw : array_like, shape (n, p)
        Finite sample coordinates.
    bbox : sequence of (low, high) pairs, optional
        Fixed bounding box per dimension. Without it each dimension is min-max
        rescaled; a constant dimension is padded to a width of ``1e-9`` times
        the largest data range so the transform stays invertible.
    """
    x = _validate(raw)
    n, p = x.shape
    if bbox is not None:
        box = np.asarray(bbox, dtype=float)
        if box.shape != (p, 2) or np.any(box[:, 1] <= box[:, 0]):
            raise DataError(f"bounding box must be {p} increasing (low, high) pairs")
        lo, hi = box[:, 0], box[:, 1]
        outside = (x < lo) | (x > hi)
        if outside.any():
            r, c = map(int, np.argwhere(outside)[0])
            raise DataError(f"value {x[r, c]} at row {r}, column {c} lies outside the bounding box")
    else:
        lo, hi = x.min(axis=0), x.max(axis=0)
        width = hi - lo
        overall = float(width.max())
        if overall == 0.0:
            overall = max(float(np.abs(x).max()), 1.0)
        pad = DEGENERATE_WIDTH * overall
        flat = width == 0
        lo = np.where(flat, lo - pad / 2, lo)
        hi = np.where(flat, hi + pad / 2, hi)
    scale = 1.0 / (hi - lo)
    offset = -lo * scale
    transform = Transform(scale, offset)
    unit = np.clip(transform.forward(x), 0.0, 1.0)
    unit.setflags(write=False)
    ids = None if row_ids is None else np.asarray(row_ids)
    return SampleSet(unit, transform, ids)


def from_unit(unit, row_ids=None) -> SampleSet:
    """Wrap data already in ``[0,1]^p`` with the identity transform."""
    x = _validate(unit)
    return ingest(x, bbox=[(0.0, 1.0)] * x.shape[1], row_ids=row_ids)


def read_csv(path, delimiter: str = ",", header: bool | None = None) -> np.ndarray:
    """Read numeric samples, one row per sample.

    ``header=None`` auto-detects a header by trying to parse the first row.
    """
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    if header is None:
        try:
            [float(c) for c in rows[0]]
            header = False
        except ValueError:
            header = True
    if header:
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i} has {len(r)} columns, expected {width}")
        for j, c in enumerate(r):
            try:
                out[i, j] = float(c)
            except ValueError:
                raise DataError(f"{path}: cannot parse {c!r} at row {i}, column {j}") from None
    return out


def write_csv(path, x: np.ndarray, delimiter: str = ",") -> None:
    """Write rows with round-trip float formatting; ``path`` may be an open text stream."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if hasattr(path, "write"):
        _write_rows(path, x, delimiter)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, x, delimiter)


def _write_rows(fh, x, delimiter):
    w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    for row in x:
        w.writerow([repr(float(v)) for v in row])


def region_members(region: Region, samples: SampleSet, depth: int = 60) -> np.ndarray:
    """Indices of samples inside ``region`` (full scan, for checks and tests)."""
    g = samples.grid(depth)
    mask = np.ones(samples.n, dtype=bool)
    for j, (k, s) in enumerate(zip(region.levels, region.index)):
        mask &= (g[:, j] >> (depth - k)) == s
    return np.flatnonzero(mask)


def count_children(
    region: Region, members: np.ndarray, samples: SampleSet, depth: int = 60, check: bool = True
) -> tuple[RegionCounts, list[tuple[np.ndarray, np.ndarray]]]:
    """Split the member rows of ``region`` along every dimension.

    Only the member rows are touched, so the cost is proportional to
    ``p * len(members)``. A point on a midpoint is counted in the right child.
    """
    members = np.asarray(members, dtype=np.int64)
    g = samples.grid(depth)
    sub = g[members]
    if check and members.size:
        for j, (k, s) in enumerate(zip(region.levels, region.index)):
            if np.any((sub[:, j] >> (depth - k)) != s):
                raise IntegrityError(f"member rows outside region {region.code()}")
    counts, children = [], []
    for j, k in enumerate(region.levels):
        if k >= depth:
            counts.append((members.size, 0))
            children.append((members, members[:0]))
            continue
        right = ((sub[:, j] >> (depth - k - 1)) & 1).astype(bool)
        r = members[right]
        l = members[~right]
        counts.append((l.size, r.size))
        children.append((l, r))
    return RegionCounts(region, tuple(counts)), children
