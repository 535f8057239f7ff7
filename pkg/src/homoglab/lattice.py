"""Lattice domains, grid fields, and centered finite-difference stencils.

All geometry is integer-indexed: a node is a multi-index ``i`` and its
physical position is ``h * i``.  Keeping positions implicit makes lattice
translations exact, which the random-environment stationarity checks rely on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

SHAPES = ("ball", "cube")


def _norm_ok(shape, idx_sq_sum, idx_max, r_over_h_sq, r_over_h):
    """Strict membership test |h*i| < r in exact index arithmetic."""
    if shape == "ball":
        return idx_sq_sum < r_over_h_sq
    return idx_max < r_over_h


def classify_nodes(dim, shape, r, h):
    """Classify the index box into interior nodes and boundary nodes.

    Interior nodes are the indices whose physical point lies strictly inside
    the open domain; boundary nodes are the exterior members of the one-ring
    (Moore) neighborhood of the interior.  Returns ``(interior, boundary, K)``
    where both masks live on the box ``[-K, K]^dim``.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if shape not in SHAPES:
        raise ValueError(f"shape must be one of {SHAPES}, got {shape!r}")
    if r <= 0 or h <= 0:
        raise ValueError("r and h must be positive")

    rh = r / h
    i_max = int(np.floor(rh - 1e-12))  # largest index with h*i < r
    K = i_max + 1
    axes = [np.arange(-K, K + 1)] * dim
    grids = np.meshgrid(*axes, indexing="ij")
    sq = sum(g.astype(np.int64) ** 2 for g in grids)
    amax = np.maximum.reduce([np.abs(g) for g in grids])
    interior = _norm_ok(shape, sq, amax, rh * rh, rh)

    dilated = interior.copy()
    for off in itertools.product((-1, 0, 1), repeat=dim):
        if all(o == 0 for o in off):
            continue
        dilated |= shift_mask(interior, off)
    boundary = dilated & ~interior
    return interior, boundary, K


def _shift_slices(off):
    src = [Ellipsis]
    dst = [Ellipsis]
    for o in off:
        if o >= 0:
            src.append(slice(o, None))
            dst.append(slice(0, -o if o else None))
        else:
            src.append(slice(0, o))
            dst.append(slice(-o, None))
    return tuple(src), tuple(dst)


def shift_mask(mask, off):
    """Boolean mask shifted so out[i] = mask[i + off] (False past the edge)."""
    out = np.zeros_like(mask)
    src, dst = _shift_slices(off)
    out[dst] = mask[src]
    return out


def shift_values(arr, off, fill=0.0):
    """Array shifted on its trailing axes so out[..., i] = arr[..., i + off].

    Leading axes (e.g. a Monte Carlo batch axis) pass through untouched.
    """
    out = np.full_like(arr, fill)
    src, dst = _shift_slices(off)
    out[dst] = arr[src]
    return out


@dataclass(frozen=True)
class LatticeDomain:
    """Discretized open ball or cube of radius/half-width r with spacing h.

    Masks are stored on the index box [-K, K]^dim; array position ``a`` maps
    to multi-index ``a - K`` and physical point ``h * (a - K)``.
    """

    dim: int
    shape: str
    r: float
    h: float
    K: int
    interior: np.ndarray
    boundary: np.ndarray

    @property
    def valid(self):
        return self.interior | self.boundary

    @property
    def n_interior(self):
        return int(self.interior.sum())

    @property
    def box_shape(self):
        return (2 * self.K + 1,) * self.dim

    def index_grids(self):
        """Integer multi-index meshgrid over the box."""
        ax = np.arange(-self.K, self.K + 1)
        return np.meshgrid(*([ax] * self.dim), indexing="ij")

    def coord_grids(self):
        """Physical coordinate meshgrid over the box."""
        return [self.h * g for g in self.index_grids()]

    def to_array_index(self, node):
        node = tuple(int(n) for n in np.atleast_1d(node))
        if len(node) != self.dim:
            raise ValueError(f"node must have {self.dim} components")
        return tuple(n + self.K for n in node)

    def is_interior(self, node):
        return bool(self.interior[self.to_array_index(node)])

    def is_valid(self, node):
        return bool(self.valid[self.to_array_index(node)])

    def interior_nodes(self):
        """Array of interior multi-indices, shape (n_interior, dim)."""
        return np.argwhere(self.interior) - self.K

    def point(self, node):
        return self.h * np.asarray(node, dtype=float)


def make_domain(dim, shape, r, h):
    """Build a LatticeDomain; rejects grids too coarse for the domain."""
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if shape not in SHAPES:
        raise ValueError(f"shape must be one of {SHAPES}, got {shape!r}")
    if r <= 0 or h <= 0:
        raise ValueError("r and h must be positive")
    if h >= r / 4:
        raise ValueError(f"spacing too coarse: h={h} must be < r/4={r / 4}")
    interior, boundary, K = classify_nodes(dim, shape, r, h)
    return LatticeDomain(dim=dim, shape=shape, r=float(r), h=float(h),
                         K=K, interior=interior, boundary=boundary)


def interior_window(domain, t):
    """Node mask of the concentric scaled copy t*V of the domain.

    Used to measure contact densities away from the boundary layer.
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"window parameter t must be in (0, 1), got {t}")
    grids = domain.index_grids()
    rh = t * domain.r / domain.h
    sq = sum(g.astype(np.int64) ** 2 for g in grids)
    amax = np.maximum.reduce([np.abs(g) for g in grids])
    mask = _norm_ok(domain.shape, sq, amax, rh * rh, rh)
    return mask & domain.interior


def distance_shrink_window(domain, s):
    """Nodes at distance greater than s from the boundary of the domain.

    For balls and sup-norm cubes this coincides with the scaled copy
    interior_window(domain, 1 - s/r).
    """
    if s <= 0:
        raise ValueError("shrink distance must be positive")
    if s >= domain.r:
        raise ValueError("shrink distance exceeds domain radius")
    return interior_window(domain, 1.0 - s / domain.r)


class GridField:
    """Scalar values attached to the nodes and boundary of a lattice domain."""

    def __init__(self, domain, values):
        values = np.asarray(values, dtype=float)
        if values.shape != domain.box_shape:
            raise ValueError(
                f"values shape {values.shape} does not match box {domain.box_shape}")
        self.domain = domain
        self.values = values

    @classmethod
    def zeros(cls, domain):
        return cls(domain, np.zeros(domain.box_shape))

    @classmethod
    def from_function(cls, domain, func):
        """Sample func(point) at every interior and boundary node."""
        vals = np.zeros(domain.box_shape)
        coords = domain.coord_grids()
        stacked = np.stack(coords, axis=-1)
        mask = domain.valid
        pts = stacked[mask]
        vals[mask] = np.array([func(p) for p in pts], dtype=float)
        return cls(domain, vals)

    def copy(self):
        return GridField(self.domain, self.values.copy())

    def value(self, node):
        return float(self.values[self.domain.to_array_index(node)])

    def sup_norm(self, mask=None):
        if mask is None:
            mask = self.domain.valid
        if not mask.any():
            return 0.0
        return float(np.abs(self.values[mask]).max())

    def assert_finite(self):
        if not np.all(np.isfinite(self.values[self.domain.valid])):
            raise FloatingPointError("non-finite values on the lattice")


class SymMatrix:
    """Symmetric dim x dim matrix; only the upper triangle is stored."""

    def __init__(self, dim, packed):
        packed = np.asarray(packed, dtype=float)
        if packed.shape != (dim * (dim + 1) // 2,):
            raise ValueError("packed data has wrong length")
        self.dim = dim
        self.packed = packed

    @classmethod
    def from_full(cls, arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        d = arr.shape[0]
        if arr.shape != (d, d):
            raise ValueError("matrix must be square")
        sym = 0.5 * (arr + arr.T)
        iu = np.triu_indices(d)
        return cls(d, sym[iu])

    @classmethod
    def zero(cls, dim):
        return cls(dim, np.zeros(dim * (dim + 1) // 2))

    @classmethod
    def identity(cls, dim, scale=1.0):
        return cls.from_full(scale * np.eye(dim))

    def full(self):
        out = np.zeros((self.dim, self.dim))
        iu = np.triu_indices(self.dim)
        out[iu] = self.packed
        out.T[iu] = self.packed
        return out

    def trace(self):
        iu = np.triu_indices(self.dim)
        return float(self.packed[iu[0] == iu[1]].sum())

    def eigvals(self):
        return np.linalg.eigvalsh(self.full())

    def norm(self):
        """Frobenius norm."""
        return float(np.linalg.norm(self.full()))

    def __add__(self, other):
        other = as_sym_matrix(other, self.dim)
        return SymMatrix(self.dim, self.packed + other.packed)

    def __sub__(self, other):
        other = as_sym_matrix(other, self.dim)
        return SymMatrix(self.dim, self.packed - other.packed)

    def __mul__(self, t):
        return SymMatrix(self.dim, float(t) * self.packed)

    __rmul__ = __mul__

    def __neg__(self):
        return SymMatrix(self.dim, -self.packed)

    def __repr__(self):
        return f"SymMatrix({self.full()!r})"


def as_sym_matrix(M, dim=None):
    """Coerce scalars, arrays or SymMatrix instances to SymMatrix."""
    if isinstance(M, SymMatrix):
        if dim is not None and M.dim != dim:
            raise ValueError(f"expected dim {dim}, got {M.dim}")
        return M
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 0:
        if dim is None:
            dim = 1
        return SymMatrix.from_full(arr * np.eye(dim) if dim > 1 else arr.reshape(1, 1))
    out = SymMatrix.from_full(arr)
    if dim is not None and out.dim != dim:
        raise ValueError(f"expected dim {dim}, got {out.dim}")
    return out


def _check_direction(domain, e):
    e = tuple(int(c) for c in np.atleast_1d(e))
    if len(e) != domain.dim:
        raise ValueError(f"direction must have {domain.dim} components")
    if all(c == 0 for c in e) or any(abs(c) > 1 for c in e):
        raise ValueError("direction components must be in {-1,0,1}, not all zero")
    return e


def second_difference(f, e, node):
    """Centered second difference of f along lattice direction e at a node."""
    dom = f.domain
    e = _check_direction(dom, e)
    if not dom.is_interior(node):
        raise ValueError(f"node {node} is not interior")
    node = np.asarray(node, dtype=int)
    for nb in (node + e, node - e):
        if not dom.is_valid(nb):
            raise ValueError(f"neighbor {tuple(nb)} outside the lattice")
    len2 = dom.h ** 2 * sum(c * c for c in e)
    return (f.value(node + e) - 2.0 * f.value(node) + f.value(node - e)) / len2


def discrete_gradient(f, node):
    """Centered first differences, one per axis."""
    dom = f.domain
    if not dom.is_interior(node):
        raise ValueError(f"node {node} is not interior")
    node = np.asarray(node, dtype=int)
    out = np.zeros(dom.dim)
    for i in range(dom.dim):
        e = np.zeros(dom.dim, dtype=int)
        e[i] = 1
        for nb in (node + e, node - e):
            if not dom.is_valid(nb):
                raise ValueError(f"neighbor {tuple(nb)} outside the lattice")
        out[i] = (f.value(node + e) - f.value(node - e)) / (2.0 * dom.h)
    return out


def discrete_hessian(f, node):
    """Centered discrete Hessian: axis second differences on the diagonal,
    4-point centered mixed differences off the diagonal."""
    dom = f.domain
    if not dom.is_interior(node):
        raise ValueError(f"node {node} is not interior")
    node = np.asarray(node, dtype=int)
    for off in itertools.product((-1, 0, 1), repeat=dom.dim):
        if not dom.is_valid(node + np.array(off)):
            raise ValueError(f"incomplete neighborhood at {tuple(node)}")
    d = dom.dim
    H = np.zeros((d, d))
    for i in range(d):
        e = np.zeros(d, dtype=int)
        e[i] = 1
        H[i, i] = second_difference(f, e, node)
    for i in range(d):
        for j in range(i + 1, d):
            ei = np.zeros(d, dtype=int)
            ej = np.zeros(d, dtype=int)
            ei[i] = 1
            ej[j] = 1
            val = (f.value(node + ei + ej) - f.value(node + ei - ej)
                   - f.value(node - ei + ej) + f.value(node - ei - ej))
            H[i, j] = H[j, i] = val / (4.0 * dom.h ** 2)
    return SymMatrix.from_full(H)


def hessian_fields(f):
    """All distinct D2_ij entries of f as box arrays over the interior.

    Returns a dict {(i, j): array}; entries are garbage outside the interior.
    """
    dom = f.domain
    d = dom.dim
    h2 = dom.h ** 2
    u = f.values
    out = {}
    for i in range(d):
        e = [0] * d
        e[i] = 1
        out[(i, i)] = (shift_values(u, e) - 2.0 * u + shift_values(u, [-c for c in e])) / h2
    for i in range(d):
        for j in range(i + 1, d):
            ep = [0] * d
            ep[i] = 1
            ep[j] = 1
            em = [0] * d
            em[i] = 1
            em[j] = -1
            out[(i, j)] = (shift_values(u, ep) - shift_values(u, em)
                           - shift_values(u, [-c for c in em])
                           + shift_values(u, [-c for c in ep])) / (4.0 * h2)
    return out


def gradient_fields(f):
    """Centered first differences per axis as box arrays (valid on interior)."""
    dom = f.domain
    u = f.values
    out = []
    for i in range(dom.dim):
        e = [0] * dom.dim
        e[i] = 1
        out.append((shift_values(u, e) - shift_values(u, [-c for c in e])) / (2.0 * dom.h))
    return out
