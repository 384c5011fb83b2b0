"""Distribution-valued regression data: loading, histograms, splits.

Two CSV layouts are supported (header row required):

* samples: ``input_id,x1,...,xd,y1,...,yp`` -- one row per pointwise
  observation, rows sharing an ``input_id`` form that input's sample block;
* gridded: ``input_id,x1,...,xd,y,density`` -- one row per grid node.

Column order within the x/y groups follows the numeric suffix.
"""

from __future__ import annotations

import csv
import math
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

DEFAULT_BINS = 64


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Trapezoidal quadrature widths with half-width endpoints.

    Interior nodes get ``(y[l+1] - y[l-1]) / 2``; the two endpoints get half
    of their single neighbouring gap.
    """
    y = np.asarray(grid, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise DataError("grid must be a 1-d array with at least 2 nodes")
    if np.any(np.diff(y) <= 0):
        raise DataError("grid must be strictly increasing")
    w = np.empty_like(y)
    w[1:-1] = 0.5 * (y[2:] - y[:-2])
    w[0] = 0.5 * (y[1] - y[0])
    w[-1] = 0.5 * (y[-1] - y[-2])
    return w


@dataclass(frozen=True)
class InputPoint:
    id: str
    x: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or x.size < 1:
            raise DataError(f"input {self.id!r}: x must be a non-empty vector")
        if not np.all(np.isfinite(x)):
            raise DataError(f"input {self.id!r}: non-finite coordinate")
        object.__setattr__(self, "x", _frozen(x))


@dataclass(frozen=True)
class SampleBlock:
    """``T_n`` output vectors observed at one input, stored as ``(T, p)``."""

    input_id: str
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise DataError(f"input {self.input_id!r}: empty sample block")
        if not np.all(np.isfinite(s)):
            raise DataError(f"input {self.input_id!r}: non-finite samples")
        object.__setattr__(self, "samples", _frozen(s))

    @property
    def T(self) -> int:
        return self.samples.shape[0]

    @property
    def p(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class GriddedDensity:
    """A univariate density tabulated on a grid with explicit quadrature weights."""

    input_id: str
    grid: np.ndarray
    density: np.ndarray
    quad_weights: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        d = np.asarray(self.density, dtype=float)
        w = np.asarray(self.quad_weights, dtype=float)
        if not (g.ndim == d.ndim == w.ndim == 1 and g.size == d.size == w.size):
            raise DataError(f"input {self.input_id!r}: grid/density/weights shape mismatch")
        if g.size >= 2 and np.any(np.diff(g) <= 0):
            raise DataError(f"input {self.input_id!r}: grid must be strictly increasing")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise DataError(f"input {self.input_id!r}: density must be finite and >= 0")
        if np.any(w <= 0):
            raise DataError(f"input {self.input_id!r}: quadrature weights must be positive")
        mass = float(np.dot(d, w))
        if abs(mass - 1.0) > 1e-8:
            raise DataError(
                f"input {self.input_id!r}: density integrates to {mass:.10g}, expected 1"
            )
        object.__setattr__(self, "grid", _frozen(g))
        object.__setattr__(self, "density", _frozen(d))
        object.__setattr__(self, "quad_weights", _frozen(w))

    @classmethod
    def from_values(cls, input_id: str, grid, density, normalize: bool = True):
        """Build with trapezoidal weights, optionally renormalizing the density."""
        w = trapezoid_weights(grid)
        d = np.asarray(density, dtype=float)
        if normalize:
            mass = float(np.dot(d, w))
            if not mass > 0:
                raise DataError(f"input {input_id!r}: density has zero mass on grid")
            d = d / mass
        return cls(input_id, grid, d, w)


@dataclass(frozen=True)
class DistributionValuedDataset:
    """Inputs ``x_n`` each paired with a sample block and/or a gridded density."""

    inputs: tuple[InputPoint, ...]
    samples: Mapping[str, SampleBlock] = field(default_factory=dict)
    grids: Mapping[str, GriddedDensity] = field(default_factory=dict)

    def __post_init__(self):
        inputs = tuple(self.inputs)
        if not inputs:
            raise DataError("dataset has no inputs")
        ids = [pt.id for pt in inputs]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate input ids")
        d = inputs[0].x.size
        for pt in inputs:
            if pt.x.size != d:
                raise DataError(
                    f"dimension mismatch: input {pt.id!r} has d={pt.x.size}, expected {d}"
                )
        samples = dict(self.samples)
        grids = dict(self.grids)
        known = set(ids)
        for key in list(samples) + list(grids):
            if key not in known:
                raise DataError(f"block for unknown input {key!r}")
        for pt in inputs:
            if pt.id not in samples and pt.id not in grids:
                raise DataError(f"input {pt.id!r} has no samples or density")
        ps = {blk.p for blk in samples.values()}
        if len(ps) > 1:
            raise DataError(f"dimension mismatch: output dimensions {sorted(ps)}")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "grids", grids)

    @property
    def ids(self) -> list[str]:
        return [pt.id for pt in self.inputs]

    @property
    def N(self) -> int:
        return len(self.inputs)

    @property
    def d(self) -> int:
        return self.inputs[0].x.size

    @property
    def p(self) -> int:
        if self.samples:
            return next(iter(self.samples.values())).p
        return 1

    @property
    def X(self) -> np.ndarray:
        return np.stack([pt.x for pt in self.inputs])

    def sample_list(self) -> list[np.ndarray]:
        """Sample arrays in input order; raises if any input lacks samples."""
        missing = [i for i in self.ids if i not in self.samples]
        if missing:
            raise DataError(f"inputs without samples: {missing[:5]}")
        return [self.samples[i].samples for i in self.ids]

    def grid_list(self) -> list[GriddedDensity]:
        missing = [i for i in self.ids if i not in self.grids]
        if missing:
            raise DataError(f"inputs without gridded densities: {missing[:5]}")
        return [self.grids[i] for i in self.ids]

    def subset(self, ids: Iterable[str]) -> "DistributionValuedDataset":
        wanted = list(ids)
        lookup = {pt.id: pt for pt in self.inputs}
        return DistributionValuedDataset(
            inputs=tuple(lookup[i] for i in wanted),
            samples={i: self.samples[i] for i in wanted if i in self.samples},
            grids={i: self.grids[i] for i in wanted if i in self.grids},
        )

    def with_grids(self, grids: Mapping[str, GriddedDensity]) -> "DistributionValuedDataset":
        merged = dict(self.grids)
        merged.update({k: v for k, v in grids.items() if k in set(self.ids)})
        return DistributionValuedDataset(self.inputs, self.samples, merged)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

_XCOL = re.compile(r"^x(\d+)$")
_YCOL = re.compile(r"^y(\d+)$")


@dataclass(frozen=True)
class SampleSchema:
    """Column names for the samples CSV; ``None`` means infer from header."""

    id_column: str = "input_id"
    x_columns: Sequence[str] | None = None
    y_columns: Sequence[str] | None = None


def _numbered(header: Sequence[str], pattern: re.Pattern) -> list[str]:
    cols = [(int(m.group(1)), h) for h in header if (m := pattern.match(h))]
    return [h for _, h in sorted(cols)]


def _parse_float(text: str, lineno: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"line {lineno}: cannot parse {column}={text!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"line {lineno}: non-finite value in column {column}")
    return value


def load_samples(path: str | Path, schema: SampleSchema | None = None) -> DistributionValuedDataset:
    """Read a samples CSV, grouping rows by input id in first-seen order."""
    schema = schema or SampleSchema()
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no records")
        header = [h.strip() for h in header]
        if schema.id_column not in header:
            raise DataError(f"{path}: missing column {schema.id_column!r}")
        xcols = list(schema.x_columns or _numbered(header, _XCOL))
        ycols = list(schema.y_columns or _numbered(header, _YCOL))
        if not xcols or not ycols:
            raise DataError(f"{path}: header must name x1.. and y1.. columns")
        for c in xcols + ycols:
            if c not in header:
                raise DataError(f"{path}: missing column {c!r}")
        id_idx = header.index(schema.id_column)
        x_idx = [header.index(c) for c in xcols]
        y_idx = [header.index(c) for c in ycols]

        xs: "OrderedDict[str, list[float]]" = OrderedDict()
        ys: dict[str, list[list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"line {lineno}: expected {len(header)} fields, got {len(row)} "
                    "(dimension mismatch)"
                )
            key = row[id_idx].strip()
            x = [_parse_float(row[i], lineno, header[i]) for i in x_idx]
            y = [_parse_float(row[i], lineno, header[i]) for i in y_idx]
            if key in xs:
                if not np.allclose(xs[key], x, rtol=0, atol=1e-12):
                    raise DataError(f"line {lineno}: input {key!r} has inconsistent x")
                ys[key].append(y)
            else:
                xs[key] = x
                ys[key] = [y]
    if not xs:
        raise DataError(f"{path}: no records")
    return DistributionValuedDataset(
        inputs=tuple(InputPoint(k, v) for k, v in xs.items()),
        samples={k: SampleBlock(k, np.array(v)) for k, v in ys.items()},
    )


def load_gridded(path: str | Path, normalize: bool = True) -> DistributionValuedDataset:
    """Read a gridded-density CSV (``input_id,x1..xd,y,density``)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no records")
        header = [h.strip() for h in header]
        for c in ("input_id", "y", "density"):
            if c not in header:
                raise DataError(f"{path}: missing column {c!r}")
        xcols = _numbered(header, _XCOL)
        if not xcols:
            raise DataError(f"{path}: header must name x1.. columns")
        id_idx = header.index("input_id")
        x_idx = [header.index(c) for c in xcols]
        y_idx = header.index("y")
        d_idx = header.index("density")
        xs: "OrderedDict[str, list[float]]" = OrderedDict()
        nodes: dict[str, list[tuple[float, float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            key = row[id_idx].strip()
            x = [_parse_float(row[i], lineno, header[i]) for i in x_idx]
            y = _parse_float(row[y_idx], lineno, "y")
            dens = _parse_float(row[d_idx], lineno, "density")
            xs.setdefault(key, x)
            nodes.setdefault(key, []).append((y, dens))
    if not xs:
        raise DataError(f"{path}: no records")
    grids = {}
    for key, pairs in nodes.items():
        arr = np.array(pairs)
        grids[key] = GriddedDensity.from_values(key, arr[:, 0], arr[:, 1], normalize=normalize)
    return DistributionValuedDataset(
        inputs=tuple(InputPoint(k, v) for k, v in xs.items()), grids=grids
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def write_samples(ds: DistributionValuedDataset, path: str | Path) -> int:
    """Write the samples CSV; returns the number of data rows."""
    rows = 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["input_id"] + [f"x{i + 1}" for i in range(ds.d)] + [f"y{j + 1}" for j in range(ds.p)]
        )
        for pt in ds.inputs:
            xs = [_fmt(v) for v in pt.x]
            for y in ds.samples[pt.id].samples:
                w.writerow([pt.id] + xs + [_fmt(v) for v in y])
                rows += 1
    return rows


def write_gridded(ds: DistributionValuedDataset, path: str | Path) -> int:
    rows = 0
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["input_id"] + [f"x{i + 1}" for i in range(ds.d)] + ["y", "density"])
        for pt in ds.inputs:
            g = ds.grids[pt.id]
            xs = [_fmt(v) for v in pt.x]
            for y, dens in zip(g.grid, g.density):
                w.writerow([pt.id] + xs + [_fmt(y), _fmt(dens)])
                rows += 1
    return rows


# ---------------------------------------------------------------------------
# Derived representations
# ---------------------------------------------------------------------------


def to_histogram(block: SampleBlock, bins: int = DEFAULT_BINS) -> GriddedDensity:
    """Fixed-bin histogram over the block's own range ``[min, max]``.

    Returns bin centers as the grid and the bin width as every quadrature
    weight, so ``sum(density * width) == 1``.
    """
    if block.p != 1:
        raise DataError("histograms are defined for univariate outputs only")
    if bins < 2:
        raise DataError(f"need at least 2 bins, got {bins}")
    y = block.samples[:, 0]
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise DataError(f"input {block.input_id!r}: degenerate support (all samples equal)")
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(y, bins=edges)
    width = (hi - lo) / bins
    density = counts / (y.size * width)
    # renormalize away round-off in width * bins != hi - lo
    density = density / np.sum(density * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return GriddedDensity(block.input_id, centers, density, np.full(bins, width))


def histograms(ds: DistributionValuedDataset, bins: int = DEFAULT_BINS) -> dict[str, GriddedDensity]:
    return {i: to_histogram(ds.samples[i], bins) for i in ds.ids}


def split_train_test(
    ds: DistributionValuedDataset, test_fraction: float = 0.2, seed: int = 0
) -> tuple[DistributionValuedDataset, DistributionValuedDataset]:
    """Random split over inputs; whole blocks move together.

    The training set gets ``ceil(N * (1 - f))`` inputs, except that at least
    one input is always held out. Both parts keep the original input order.
    """
    if not 0 < test_fraction < 1:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = ds.N
    if n < 2:
        raise DataError("need at least 2 inputs to split")
    n_train = min(math.ceil(round(n * (1.0 - test_fraction), 9)), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    ids = ds.ids
    return ds.subset(ids[i] for i in train_idx), ds.subset(ids[i] for i in test_idx)
