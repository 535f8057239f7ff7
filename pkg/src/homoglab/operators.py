"""Uniformly elliptic operator families F(M, p, y, omega) and their algebra.

Every operator is kept in a closed normal form

    G(N, q, y, w) = sgn * F_core(sgn*(N + M0), sgn*(q + p0), y, w) - alpha

so that argument shifts, constant subtraction and odd reflection compose
exactly and the solvers can recover structured coefficient fields.
Sign convention: F is nonincreasing in the matrix argument, i.e. model
operators read -tr(A M) plus lower-order terms.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .environments import (CellValueTable, EnvModel, LinearEntry, PucciEntry,
                           sample_env)
from .lattice import SymMatrix, as_sym_matrix

_EIG_CLAMP = 1e-14


@dataclass(frozen=True)
class EllipticityConstants:
    """Global ellipticity bounds 0 < lam <= Lam and gradient Lipschitz gamma."""
    lam: float
    Lam: float
    gamma: float = 0.0

    def __post_init__(self):
        if not 0 < self.lam <= self.Lam:
            raise ValueError(f"need 0 < lam <= Lam, got {self.lam}, {self.Lam}")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


def _clamped_eigs(M):
    e = np.linalg.eigvalsh(as_sym_matrix(M).full())
    e[np.abs(e) < _EIG_CLAMP] = 0.0
    return e


def pucci_plus(M, c):
    """Maximal Pucci operator: Lam*tr(M-) - lam*tr(M+)."""
    e = _clamped_eigs(M)
    return float(c.Lam * np.maximum(-e, 0.0).sum() - c.lam * np.maximum(e, 0.0).sum())


def pucci_minus(M, c):
    """Minimal Pucci operator: lam*tr(M-) - Lam*tr(M+)."""
    e = _clamped_eigs(M)
    return float(c.lam * np.maximum(-e, 0.0).sum() - c.Lam * np.maximum(e, 0.0).sum())


def _flip(kind):
    return "-" if kind == "+" else "+"


@dataclass(frozen=True, eq=False)
class EllipticOperator:
    """An operator in the (F2) class, bundled with its environment model.

    family is one of 'linear' (-tr(A(y)M) - b(y).p + c(y)), 'pucci'
    (cellwise extremal operator plus optional gradient norm term), or
    'callable' (fixed y-independent function of (M, p)).
    """

    family: str
    constants: EllipticityConstants
    env_model: EnvModel
    shift_M: np.ndarray
    shift_p: np.ndarray
    alpha: float = 0.0
    sgn: int = 1
    pucci_kind: str = "+"
    grad_coeff: float = 0.0
    func: object = None
    func_homogeneous: bool = False

    @property
    def dim(self):
        return self.env_model.dim

    def _core(self, M, p, entry):
        if self.family == "linear":
            return float(-np.tensordot(entry.A, M, axes=2) - entry.b @ p + entry.c)
        if self.family == "pucci":
            cc = EllipticityConstants(entry.lam, entry.Lam)
            base = pucci_plus(M, cc) if self.pucci_kind == "+" else pucci_minus(M, cc)
            return base + self.grad_coeff * float(np.linalg.norm(p))
        return float(self.func(M, p))

    def evaluate(self, M, p, y, env):
        """F(M, p, y, omega) at a lattice point y of the realization env."""
        M = as_sym_matrix(M, self.dim).full()
        p = np.zeros(self.dim) if p is None else np.atleast_1d(np.asarray(p, float))
        entry = env.value_at(y) if self.family != "callable" else None
        Mi = self.sgn * (M + self.shift_M)
        pi = self.sgn * (p + self.shift_p)
        return self.sgn * self._core(Mi, pi, entry) - self.alpha

    def entry_value(self, M, p, entry):
        """Operator value on the cell described by a table entry."""
        M = as_sym_matrix(M, self.dim).full()
        p = np.zeros(self.dim) if p is None else np.atleast_1d(np.asarray(p, float))
        Mi = self.sgn * (M + self.shift_M)
        pi = self.sgn * (p + self.shift_p)
        return self.sgn * self._core(Mi, pi, entry) - self.alpha

    def origin_value_range(self, M, p):
        """(essinf, esssup) of F(M, p, 0, .) over the environment's cells."""
        if self.family == "callable":
            v = self.entry_value(M, p, None)
            return v, v
        table = self.env_model.table
        if self.env_model.model == "periodic":
            ks = sorted(set(int(k) for k in np.asarray(self.env_model.tile).ravel()))
        else:
            ks = range(len(table.entries))
        vals = [self.entry_value(M, p, table.entries[k]) for k in ks]
        return min(vals), max(vals)

    def micro_bound(self, domain, env):
        """sup over the domain's nodes of F(0, 0, y, omega)."""
        vals = self.zero_order_values(domain, env)
        return float(vals[domain.interior].max())

    def zero_order_values(self, domain, env):
        """Box array of F(0, 0, y, omega); constant within each cell."""
        d = self.dim
        zero_M = np.zeros((d, d))
        zero_p = np.zeros(d)
        if self.family == "callable":
            v = self.entry_value(zero_M, zero_p, None)
            return np.full(domain.box_shape, v)
        table = self.env_model.table
        per_entry = np.array(
            [self.entry_value(zero_M, zero_p, e) for e in table.entries])
        ks = env.entry_index_for_nodes(tuple(domain.index_grids()))
        return per_entry[ks]

    @property
    def positively_homogeneous(self):
        if self.alpha != 0.0 or np.any(self.shift_M) or np.any(self.shift_p):
            return False
        if self.family == "pucci":
            return True
        if self.family == "linear":
            return all(e.c == 0.0 for e in self.env_model.table.entries)
        return bool(self.func_homogeneous)


def shift_operator(F, M, p):
    """F_{M,p}: the operator (N, q, y, w) -> F(M + N, p + q, y, w)."""
    M = as_sym_matrix(M, F.dim).full()
    p = np.zeros(F.dim) if p is None else np.atleast_1d(np.asarray(p, float))
    return replace(F, shift_M=F.shift_M + M, shift_p=F.shift_p + p)


def subtract_constant(F, alpha):
    """The operator F - alpha."""
    return replace(F, alpha=F.alpha + float(alpha))


def odd_reflection(F):
    """The operator (M, p, y, w) -> -F(-M, -p, y, w); an involution."""
    return replace(F, sgn=-F.sgn, shift_M=-F.shift_M, shift_p=-F.shift_p,
                   alpha=-F.alpha)


def _base(family, constants, env_model, **kw):
    d = env_model.dim
    return EllipticOperator(family=family, constants=constants,
                            env_model=env_model,
                            shift_M=np.zeros((d, d)), shift_p=np.zeros(d), **kw)


def linear_operator(env_model, constants):
    """Nondivergence linear family -tr(A(y)M) - b(y).p + c(y).

    Every table entry must have A-spectrum in [lam, Lam] and |b| <= gamma.
    """
    table = env_model.table
    if table.kind != "linear":
        raise ValueError("linear operator needs a table of linear entries")
    for e in table.entries:
        eigs = np.linalg.eigvalsh(e.A)
        if eigs.min() < constants.lam - 1e-12 or eigs.max() > constants.Lam + 1e-12:
            raise ValueError(
                f"entry spectrum {eigs} outside [{constants.lam}, {constants.Lam}]")
        if np.linalg.norm(e.b) > constants.gamma + 1e-12:
            raise ValueError(f"entry drift |b|={np.linalg.norm(e.b)} exceeds gamma")
    return _base("linear", constants, env_model)


def pucci_operator(env_model, constants, kind="+", grad_coeff=0.0):
    """Extremal operator with cellwise random (lam, Lam) pairs."""
    table = env_model.table
    if table.kind != "pucci":
        raise ValueError("pucci operator needs a table of (lam, Lam) entries")
    if kind not in ("+", "-"):
        raise ValueError("kind must be '+' or '-'")
    for e in table.entries:
        if e.lam < constants.lam - 1e-12 or e.Lam > constants.Lam + 1e-12:
            raise ValueError(
                f"cell pair ({e.lam}, {e.Lam}) outside [{constants.lam}, {constants.Lam}]")
    if abs(grad_coeff) > constants.gamma + 1e-12:
        raise ValueError("gradient coefficient exceeds gamma")
    return _base("pucci", constants, env_model, pucci_kind=kind,
                 grad_coeff=float(grad_coeff))


def callable_operator(func, constants, dim, positively_homogeneous=False):
    """Fixed y-independent operator given as a function of (M, p)."""
    table = CellValueTable.build([LinearEntry.build(np.eye(dim) * constants.lam)])
    model = EnvModel(dim=dim, model="constant", table=table,
                     cell_size=1.0, spacing=0.25)
    return _base("callable", constants, model, func=func,
                 func_homogeneous=positively_homogeneous)


def constant_linear_operator(A, b, c, constants, spacing=0.25):
    """Constant-coefficient member of the linear family."""
    A = np.atleast_2d(np.asarray(A, float))
    d = A.shape[0]
    table = CellValueTable.build([LinearEntry.build(A, b, c, dim=d)])
    model = EnvModel(dim=d, model="constant", table=table,
                     cell_size=1.0, spacing=spacing)
    return linear_operator(model, constants)


@dataclass(frozen=True)
class EllipticityReport:
    passed: bool
    n_samples: int
    worst_violation: float
    worst_tuple: tuple | None
    tolerance: float


def _random_sym(rng, d, scale=2.0):
    B = rng.normal(size=(d, d)) * scale
    return 0.5 * (B + B.T)


def check_ellipticity(F, n_samples, seed):
    """Sample (M,p),(N,q),y,omega tuples and test the extremal sandwich

        P-(M-N) - gamma|p-q| <= F(M,p,y,w) - F(N,q,y,w) <= P+(M-N) + gamma|p-q|

    within 1e-12 relative tolerance; reports the worst violation found.
    """
    if n_samples < 1:
        raise ValueError("need n_samples >= 1")
    rng = np.random.default_rng(seed)
    c = F.constants
    d = F.dim
    h = F.env_model.spacing
    m = F.env_model.cells_per_unit
    tol = 1e-12
    worst = 0.0
    worst_tuple = None
    for k in range(n_samples):
        M = _random_sym(rng, d)
        N = _random_sym(rng, d)
        p = rng.normal(size=d)
        q = rng.normal(size=d)
        y = h * rng.integers(-20 * m, 20 * m + 1, size=d)
        env = sample_env(F.env_model, seed * 1000003 + k)
        diff = F.evaluate(M, p, y, env) - F.evaluate(N, q, y, env)
        gap = c.gamma * np.linalg.norm(p - q)
        lo = pucci_minus(np.asarray(M) - np.asarray(N), c) - gap
        hi = pucci_plus(np.asarray(M) - np.asarray(N), c) + gap
        scale = max(1.0, abs(diff), abs(lo), abs(hi))
        viol = max(lo - diff, diff - hi, 0.0) / scale
        if viol > worst:
            worst = viol
            worst_tuple = (M, p, N, q, tuple(y), env.seed)
    return EllipticityReport(passed=worst <= tol, n_samples=n_samples,
                             worst_violation=worst, worst_tuple=worst_tuple,
                             tolerance=tol)
