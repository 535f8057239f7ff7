"""End-to-end homogenization checks: oscillatory vs effective Dirichlet solves.

The oscillatory problem F(D2 u, Du, x/eps, omega) = 0 and the effective
problem are discretized identically, so the reported sup errors isolate the
homogenization gap plus a common discretization floor.  Validation presets
fold a constant source into the operator (F - c) to make solutions
nontrivial while staying inside the operator class.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .environments import sample_env
from .lattice import GridField, make_domain
from .obstacle import NonconvergenceError
from .operators import constant_linear_operator
from .schemes import build_field_operator, linear_direct_solve

_CHECK_EVERY = 64


def operator_uses_gradient(F):
    if F.family == "pucci":
        return F.grad_coeff != 0.0 or np.any(F.shift_p)
    if F.family == "linear":
        return any(np.any(e.b) for e in F.env_model.table.entries)
    return True  # callable: assume full dependence


def _interior_ids(domain):
    ids = -np.ones(domain.box_shape, dtype=np.int64)
    nodes = np.argwhere(domain.interior)
    ids[tuple(nodes.T)] = np.arange(len(nodes))
    return ids, nodes


def _polynomial(g):
    """Coerce boundary data: callable, or dict {const, linear, quad}."""
    if callable(g):
        return g
    c0 = float(g.get("const", 0.0))
    lin = np.asarray(g.get("linear", []), dtype=float)
    quad = g.get("quad")
    quad = None if quad is None else np.asarray(quad, dtype=float)

    def poly(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        val = c0
        if lin.size:
            val += float(lin @ x)
        if quad is not None:
            val += float(x @ quad @ x)
        return val

    return poly


def solve_dirichlet(F, env, eps, domain, g, *, tol_res=None,
                    max_iter=4_000_000, micro_offset=None, warm_start=True):
    """Solve F(D2 u, Du, x/eps, omega) = 0 in U with u = g on the boundary.

    Damped pseudo-time iteration u <- u - tau F(...) down to the residual
    tolerance; for the linear family a direct sparse solve provides the
    starting point, which the iteration then certifies.
    """
    h = domain.h
    cs = F.env_model.cell_size
    if h > eps * cs / 4 + 1e-12:
        raise ValueError(
            f"unresolved microstructure: need h <= eps*cell/4 = {eps * cs / 4}, got {h}")
    micro_h = h / eps
    if abs(env.spacing - micro_h) > 1e-12:
        raise ValueError(
            f"environment spacing {env.spacing} must equal h/eps = {micro_h}")
    if micro_offset is not None:
        from .environments import translate
        env = translate(env, np.asarray(micro_offset, float) * micro_h)

    use_grad = operator_uses_gradient(F)
    fieldop = build_field_operator(F, domain, [env], use_gradient=use_grad,
                                   expected_spacing=micro_h)
    gfun = _polynomial(g)
    uvals = np.zeros(domain.box_shape)
    coords = np.stack(domain.coord_grids(), axis=-1)
    mask = domain.valid
    uvals[mask] = [gfun(x) for x in coords[mask]]

    if warm_start and F.family == "linear":
        uvals = linear_direct_solve(fieldop, boundary_values=uvals)

    interior = domain.interior
    u = uvals[None]
    c0 = fieldop.apply(np.zeros_like(u))
    scale = max(1.0, float(np.abs(c0[0][interior]).max()))
    tol = tol_res if tol_res is not None else 1e-8 * scale
    tau = fieldop.tau

    it = 0
    residual = np.inf
    while it < max_iter:
        Gval = fieldop.apply(u)
        if it % _CHECK_EVERY == 0:
            residual = float(np.abs(Gval[0][interior]).max())
            if not np.isfinite(residual):
                raise NonconvergenceError("dirichlet solver diverged",
                                          seeds=[env.seed])
            if residual <= tol:
                break
        u = np.where(interior, u - tau * Gval, u)
        it += 1
    else:
        Gval = fieldop.apply(u)
        residual = float(np.abs(Gval[0][interior]).max())
        if residual > tol:
            raise NonconvergenceError(
                f"dirichlet solver hit max_iter={max_iter}, residual {residual}",
                residuals=[residual], seeds=[env.seed])
    return GridField(domain, u[0].copy())


def solve_effective_dirichlet(source, domain, g, *, tol_res=None,
                              max_iter=4_000_000):
    """Solve the y-independent effective problem with the same scheme.

    source is either an EllipticOperator with a constant environment or a
    TabulatedEffective (linear fit over effective-value probes).
    """
    op = source.as_operator(domain.h) if hasattr(source, "as_operator") else source
    if op.env_model.model != "constant":
        raise ValueError("effective operator must be y-independent")
    model = op.env_model.with_spacing(domain.h)
    from dataclasses import replace
    op = replace(op, env_model=model)
    env = sample_env(model, 0)
    return solve_dirichlet(op, env, 1.0, domain, g, tol_res=tol_res,
                           max_iter=max_iter)


@dataclass(frozen=True)
class TabulatedEffective:
    """Linear interpolant -tr(A M) - b.p + k fitted to effective-value probes."""
    Abar: np.ndarray
    bbar: np.ndarray
    kbar: float
    probes: tuple           # (M, p, value, uncertainty)
    fit_residual: float
    max_M_norm: float
    max_p_norm: float
    constants: object

    def evaluate(self, M, p):
        from .lattice import as_sym_matrix
        d = self.Abar.shape[0]
        M = as_sym_matrix(M, d)
        p = np.zeros(d) if p is None else np.atleast_1d(np.asarray(p, float))
        if M.norm() > 1.001 * self.max_M_norm or \
                np.linalg.norm(p) > 1.001 * (self.max_p_norm + 1e-12):
            raise ValueError("query outside the tabulated range")
        return float(-np.tensordot(self.Abar, M.full(), axes=2)
                     - self.bbar @ p + self.kbar)

    def as_operator(self, spacing):
        return constant_linear_operator(self.Abar, self.bbar, self.kbar,
                                        self.constants, spacing=spacing)


def tabulate_effective(F, probes, params):
    """Run the effective-value estimator on (M, p) probes and fit the
    linear model; adequate whenever the underlying family is linear."""
    from .effective import effective_F
    from .lattice import as_sym_matrix

    d = F.dim
    rows = []
    vals = []
    records = []
    for M, p in probes:
        s = effective_F(F, M, p, params)
        Mf = as_sym_matrix(M, d).full()
        pv = np.zeros(d) if p is None else np.atleast_1d(np.asarray(p, float))
        feat = []
        for i in range(d):
            feat.append(-Mf[i, i])
        for i in range(d):
            for j in range(i + 1, d):
                feat.append(-2.0 * Mf[i, j])
        feat.extend(-pv)
        feat.append(1.0)
        rows.append(feat)
        vals.append(s.estimate)
        records.append((Mf, pv, s.estimate, s.uncertainty))
    A = np.asarray(rows)
    y = np.asarray(vals)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.abs(A @ coef - y).max())
    Abar = np.zeros((d, d))
    k = 0
    for i in range(d):
        Abar[i, i] = coef[k]
        k += 1
    for i in range(d):
        for j in range(i + 1, d):
            Abar[i, j] = Abar[j, i] = coef[k]
            k += 1
    bbar = coef[k:k + d]
    kbar = float(coef[k + d])
    return TabulatedEffective(
        Abar=Abar, bbar=bbar, kbar=kbar, probes=tuple(records),
        fit_residual=resid,
        max_M_norm=max(np.linalg.norm(r[0]) for r in records),
        max_p_norm=max(np.linalg.norm(r[1]) for r in records),
        constants=F.constants)


@dataclass(frozen=True)
class PeriodicCorrectorResult:
    value: float            # effective operator value at the probe matrix
    harmonic_mean: float
    phi: np.ndarray
    residual: float


def periodic_corrector(env_model, M, h=None):
    """Cell-problem oracle for the isotropic periodic linear family.

    Solves a(y)(tr M + lap phi) + c(y) = const on one periodic tile at the
    model's spacing; the constant is the effective value at M, and for pure
    a(y)I tables it reduces to the harmonic mean of a.
    """
    from .lattice import as_sym_matrix

    if env_model.model != "periodic":
        raise ValueError("corrector oracle needs a periodic model")
    if h is not None:
        env_model = env_model.with_spacing(h)
    d = env_model.dim
    tile = np.asarray(env_model.tile)
    m = env_model.cells_per_unit
    entries = env_model.table.entries
    avals = []
    for e in entries:
        A = e.A
        a = A[0, 0]
        if not np.allclose(A, a * np.eye(d), atol=1e-12) or np.any(e.b):
            raise ValueError("oracle restricted to isotropic a(y) I entries")
        avals.append(a)
    avals = np.asarray(avals)
    cvals = np.asarray([e.c for e in entries])

    shape = tuple(n * m for n in tile.shape)
    cell_of = tuple(np.arange(n * m) // m for n in tile.shape)
    grids = np.meshgrid(*cell_of, indexing="ij")
    ks = tile[tuple(grids)]
    a = avals[ks]
    cc = cvals[ks]

    trM = as_sym_matrix(M, d).trace()
    inv_mean = float(np.mean(1.0 / a))
    c_over_a = float(np.mean(cc / a))
    kappa = (c_over_a - trM) / inv_mean  # effective value at M
    hm = 1.0 / inv_mean

    # corrector: lap phi = (c - kappa)/a - trM, periodic, mean zero
    rhs = (cc - kappa) / a - trM
    rhs = rhs - rhs.mean()
    hh = env_model.spacing
    freqs = np.meshgrid(*[2.0 * np.pi * np.fft.fftfreq(n) for n in shape],
                        indexing="ij")
    symbol = sum(2.0 * (np.cos(f) - 1.0) for f in freqs) / hh ** 2
    rhat = np.fft.fftn(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        phat = np.where(np.abs(symbol) > 1e-14, rhat / symbol, 0.0)
    phi = np.real(np.fft.ifftn(phat))
    lap = sum((np.roll(phi, -1, ax) - 2 * phi + np.roll(phi, 1, ax))
              for ax in range(d)) / hh ** 2
    residual = float(np.abs(lap - rhs).max())
    return PeriodicCorrectorResult(value=float(kappa), harmonic_mean=hm,
                                   phi=phi, residual=residual)


@dataclass(frozen=True)
class ConvergenceStudy:
    eps_list: tuple
    sup_errors: tuple
    effective_source: str
    runtimes: tuple
    effective_sup: float
    strictly_decreasing: bool
    trend_ok: bool
    final_relative: float


def convergence_study(F, eps_list, domain, g, seed, effective, *,
                      tol_res=None, max_iter=4_000_000):
    """Solve the oscillatory problem for each eps against one effective
    solution on the same grid, reporting sup-norm gaps and their trend."""
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    ubar = solve_effective_dirichlet(effective, domain, g, tol_res=tol_res,
                                     max_iter=max_iter)
    ubar_sup = ubar.sup_norm(domain.interior)
    errs = []
    times = []
    for eps in eps_list:
        t0 = time.time()
        env = sample_env(F.env_model.with_spacing(domain.h / eps), seed)
        ue = solve_dirichlet(F, env, eps, domain, g, tol_res=tol_res,
                             max_iter=max_iter)
        err = float(np.abs(ue.values - ubar.values)[domain.interior].max())
        errs.append(err)
        times.append(time.time() - t0)
    strict = all(b < a for a, b in zip(errs, errs[1:]))
    desc = "tabulated" if isinstance(effective, TabulatedEffective) else "oracle"
    return ConvergenceStudy(
        eps_list=tuple(eps_list), sup_errors=tuple(errs),
        effective_source=desc, runtimes=tuple(times),
        effective_sup=ubar_sup, strictly_decreasing=strict,
        trend_ok=errs[-1] < errs[0],
        final_relative=errs[-1] / ubar_sup if ubar_sup else np.inf)
