"""Seeded, translation-stationary random coefficient fields.

Cell values come from a counter-based hash of (seed, cell index), so a
translated environment is literally a re-indexing of the same field: the
stationarity identity holds exactly and field access is O(1) during sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_PHI = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(z):
    with np.errstate(over="ignore"):  # uint64 wraparound is the point
        z = (z + _PHI) & _M64
        z = ((z ^ (z >> np.uint64(30))) * _MIX1) & _M64
        z = ((z ^ (z >> np.uint64(27))) * _MIX2) & _M64
        return z ^ (z >> np.uint64(31))


def cell_hash(seed, cells):
    """64-bit hash of integer cell coordinates, vectorized.

    cells: tuple of integer arrays (one per axis), or a single array for 1-d.
    Returns a uint64 array of the broadcast shape.
    """
    if not isinstance(cells, (tuple, list)):
        cells = (cells,)
    state = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    out = np.broadcast_to(state, np.broadcast_shapes(*(np.shape(c) for c in cells)))
    out = out.copy() if out.shape else np.uint64(state)
    for c in cells:
        u = np.asarray(c, dtype=np.int64).astype(np.uint64)
        out = _splitmix64((out ^ _splitmix64(u)) & _M64)
    return out


def hash_uniform(seed, cells):
    """Uniform [0, 1) double from the cell hash."""
    return (cell_hash(seed, cells) >> np.uint64(11)).astype(np.float64) / float(1 << 53)


@dataclass(frozen=True)
class LinearEntry:
    """Coefficients of -tr(A M) - b.p + c on one cell."""
    A: np.ndarray
    b: np.ndarray
    c: float

    @classmethod
    def build(cls, A, b=None, c=0.0, dim=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        d = A.shape[0]
        if dim is not None and d != dim:
            raise ValueError(f"entry dimension {d} != {dim}")
        if A.shape != (d, d) or not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("A must be square symmetric")
        b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
        if b.shape != (d,):
            raise ValueError("b has wrong shape")
        return cls(A=0.5 * (A + A.T), b=b, c=float(c))


@dataclass(frozen=True)
class PucciEntry:
    """Cellwise ellipticity pair for the extremal-operator family."""
    lam: float
    Lam: float

    def __post_init__(self):
        if not 0 < self.lam <= self.Lam:
            raise ValueError("need 0 < lam <= Lam per cell")


@dataclass(frozen=True)
class CellValueTable:
    """Finite list of per-cell coefficient entries with sampling weights."""
    entries: tuple
    weights: np.ndarray

    @classmethod
    def build(cls, entries, weights=None):
        entries = tuple(entries)
        if not entries:
            raise ValueError("value table must be nonempty")
        kinds = {type(e) for e in entries}
        if len(kinds) != 1:
            raise ValueError("value table entries must be homogeneous")
        if weights is None:
            weights = np.full(len(entries), 1.0 / len(entries))
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(entries),) or (weights < 0).any():
            raise ValueError("weights must be nonnegative, one per entry")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {weights.sum()}")
        return cls(entries=entries, weights=weights)

    @property
    def kind(self):
        return "linear" if isinstance(self.entries[0], LinearEntry) else "pucci"

    def cumulative(self):
        return np.cumsum(self.weights)


@dataclass(frozen=True)
class EnvModel:
    """Specification of a random coefficient field.

    model: 'constant' (one entry everywhere), 'checkerboard' (iid cells),
    'periodic' (tile of entry indices repeated, with a seeded random phase).
    """
    dim: int
    model: str
    table: CellValueTable
    cell_size: float = 1.0
    spacing: float = 0.25
    tile: np.ndarray | None = None

    def __post_init__(self):
        if self.model not in ("constant", "checkerboard", "periodic"):
            raise ValueError(f"unknown environment model {self.model!r}")
        if self.cell_size <= 0 or self.spacing <= 0:
            raise ValueError("cell_size and spacing must be positive")
        m = self.cell_size / self.spacing
        if abs(m - round(m)) > 1e-9:
            raise ValueError(
                f"spacing {self.spacing} must divide cell size {self.cell_size}")
        if self.model == "constant" and len(self.table.entries) != 1:
            raise ValueError("constant model needs exactly one table entry")
        if self.model == "periodic":
            if self.tile is None:
                raise ValueError("periodic model needs a tile of entry indices")
            t = np.asarray(self.tile)
            if t.ndim != self.dim:
                raise ValueError("tile dimensionality mismatch")
            if t.min() < 0 or t.max() >= len(self.table.entries):
                raise ValueError("tile references entries outside the table")

    @property
    def cells_per_unit(self):
        return int(round(self.cell_size / self.spacing))

    def with_spacing(self, h):
        return replace(self, spacing=float(h), tile=self.tile)


@dataclass(frozen=True)
class Environment:
    """One realization omega: a model, its seed, and a translation state.

    offset is an integer vector in units of the grid spacing; translating by
    a lattice-commensurate z only changes offset, never the sampled values.
    """
    model: EnvModel
    seed: int
    offset: tuple

    @property
    def dim(self):
        return self.model.dim

    @property
    def spacing(self):
        return self.model.spacing

    def _cells(self, idx):
        """Cell index arrays from node index arrays (exact integer math)."""
        m = self.model.cells_per_unit
        return tuple(
            (np.asarray(ix, dtype=np.int64) + off) // m
            for ix, off in zip(idx, self.offset)
        )

    def entry_index_for_nodes(self, idx):
        """Table entry index for each node; idx is a tuple of index arrays."""
        mdl = self.model
        cells = self._cells(idx)
        if mdl.model == "constant":
            return np.zeros(np.broadcast_shapes(*(c.shape for c in cells)), dtype=np.intp)
        if mdl.model == "checkerboard":
            u = hash_uniform(self.seed, cells)
            cum = mdl.table.cumulative()
            return np.minimum(np.searchsorted(cum, u, side="right"),
                              len(mdl.table.entries) - 1)
        # periodic: seeded phase, then wrap into the tile
        tile = np.asarray(mdl.tile)
        phase = _tile_phase(self.seed, tile.shape)
        wrapped = tuple(
            np.mod(c + np.int64(ph), n) for c, ph, n in zip(cells, phase, tile.shape)
        )
        return tile[wrapped]

    def value_at(self, y):
        """Coefficient entry at the physical point y (must lie on the lattice)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.shape != (self.dim,):
            raise ValueError(f"point must have {self.dim} components")
        idx = y / self.spacing
        if np.abs(idx - np.round(idx)).max() > 1e-9:
            raise ValueError(f"point {y} is not on the lattice of spacing {self.spacing}")
        cells = tuple(np.array([int(round(v))]) for v in idx)
        k = int(self.entry_index_for_nodes(cells)[0])
        return self.model.table.entries[k]


def _tile_phase(seed, shape):
    ph = []
    for ax, n in enumerate(shape):
        u = float(hash_uniform(np.uint64(seed) ^ np.uint64(0xA5A5A5A5 + ax), np.array([ax])))
        ph.append(int(u * n) % n)
    return tuple(ph)


def sample_env(model, seed):
    """Deterministic realization of the model for a 64-bit seed."""
    return Environment(model=model, seed=int(seed), offset=(0,) * model.dim)


def translate(env, z):
    """Shift the environment by a lattice-commensurate physical vector z."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (env.dim,):
        raise ValueError(f"shift must have {env.dim} components")
    zu = z / env.spacing
    if np.abs(zu - np.round(zu)).max() > 1e-9:
        raise ValueError(f"shift {z} is not commensurate with spacing {env.spacing}")
    new_off = tuple(int(o) + int(round(u)) for o, u in zip(env.offset, zu))
    return Environment(model=env.model, seed=env.seed, offset=new_off)


def ensemble_mean(model, statistic):
    """Expectation of statistic(entry) under the model's cell distribution."""
    table = model.table
    if model.model == "periodic":
        tile = np.asarray(model.tile)
        vals = [statistic(table.entries[int(k)]) for k in tile.ravel()]
        return float(np.mean(vals))
    vals = np.array([statistic(e) for e in table.entries])
    return float(np.dot(table.weights, vals))


def ensemble_std(model, statistic):
    mu = ensemble_mean(model, statistic)
    table = model.table
    if model.model == "periodic":
        tile = np.asarray(model.tile)
        vals = np.array([statistic(table.entries[int(k)]) for k in tile.ravel()])
        return float(np.sqrt(np.mean((vals - mu) ** 2)))
    vals = np.array([statistic(e) for e in table.entries])
    return float(np.sqrt(np.dot(table.weights, (vals - mu) ** 2)))


@dataclass(frozen=True)
class ErgodicityReport:
    sides: tuple
    averages: tuple
    mean: float
    bounds: tuple
    passed: bool


def ergodicity_smoke(model, statistic, sides, seed=0):
    """Spatial averages of a cell statistic over growing boxes vs ensemble mean.

    For each box side L the deviation must stay within 3 sigma L^{-d/2}
    (the CLT band for iid cells); periodic and constant models are exact
    once L is a multiple of the period.
    """
    env = sample_env(model, seed)
    mu = ensemble_mean(model, statistic)
    sigma = ensemble_std(model, statistic)
    d = model.dim
    m = model.cells_per_unit
    avgs, bounds, flags = [], [], []
    for L in sides:
        n = int(L)
        ax = [np.arange(0, n * m, m)] * d  # one node per cell
        grids = np.meshgrid(*ax, indexing="ij")
        ks = env.entry_index_for_nodes(tuple(grids))
        vals = np.array([statistic(model.table.entries[int(k)]) for k in
                         range(len(model.table.entries))])
        avg = float(vals[ks].mean())
        if model.model == "checkerboard":
            bound = 3.0 * sigma * n ** (-d / 2.0)
        else:
            bound = 1e-12 + 3.0 * sigma / max(n, 1)  # periodic wrap remainder
        avgs.append(avg)
        bounds.append(bound)
        flags.append(abs(avg - mu) <= bound)
    return ErgodicityReport(sides=tuple(sides), averages=tuple(avgs), mean=mu,
                            bounds=tuple(bounds), passed=all(flags))
