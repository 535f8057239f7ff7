"""Zero-obstacle problems, contact sets, and infimal convolutions.

The solver is the damped projected iteration

    w <- max(0, w - tau * G(D2_h w, 0, y, omega)),    tau from the CFL bound,

whose fixed points are exactly the discrete obstacle solutions.  The
gradient slot of G stays frozen at zero; gradient arguments enter only
through operator shifts.  Several realizations are solved together on a
batch axis so Monte Carlo sweeps share every array operation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import (GridField, distance_shrink_window, gradient_fields,
                      hessian_fields)
from .schemes import build_field_operator

_CHECK_EVERY = 64


class NonconvergenceError(RuntimeError):
    def __init__(self, message, residuals=None, seeds=None):
        super().__init__(message)
        self.residuals = residuals
        self.seeds = seeds


@dataclass
class ObstacleSolution:
    """One converged obstacle solve and its contact bookkeeping."""
    w: GridField
    contact: np.ndarray
    residual: float
    iterations: int
    alpha: float
    k: float
    tol_res: float
    tol_contact: float
    converged: bool
    env: object

    def contact_fraction(self, window=None):
        dom = self.w.domain
        if window is None:
            window = dom.interior
        n = int(window.sum())
        return float((self.contact & window).sum()) / n if n else 0.0


def default_tol_contact(domain, constants):
    """Contact decisions live at the scheme's truncation scale, not eps."""
    return domain.h ** 2 * constants.Lam / constants.lam


def _warm_start_rows(fieldop, rows, mode):
    """Per-row warm starts for the linear family.

    'direct' solves the complementarity problem by active sets (the
    projected iteration then certifies it), 'free' clips the unconstrained
    solution at the obstacle, 'poisson' solves with the clipped right side.
    """
    from .schemes import lcp_active_set, linear_direct_solve
    dom = fieldop.domain
    out = np.zeros((fieldop.batch,) + dom.box_shape)
    for b in rows:
        if mode == "direct":
            out[b] = lcp_active_set(fieldop, row=b)
        else:
            u = linear_direct_solve(fieldop, rhs_clip=(mode == "poisson"), row=b)
            out[b] = np.maximum(u, 0.0)
    return out


def solve_obstacle_batch(G, domain, envs, tol_res=None, tol_contact=None,
                         max_iter=500_000, init="auto", early_stop=None):
    """Solve min{G(D2_h w, 0, y, omega), w} = 0 for several realizations.

    early_stop, if given, is (window_mask, theta): a realization whose
    contact fraction inside the window drops to <= theta is decided (the
    fraction only shrinks from a zero start), and is exempt from residual
    convergence.  Such rows come back with converged=False.
    """
    if not isinstance(envs, (list, tuple)):
        envs = [envs]
    fieldop = build_field_operator(G, domain, envs, use_gradient=False)
    S = fieldop.batch
    tau = fieldop.tau
    interior = domain.interior
    n_int = int(interior.sum())

    w = np.zeros((S,) + domain.box_shape)
    c0 = fieldop.apply(w)
    c0 = np.where(interior, c0, 0.0)
    k_vals = c0.reshape(S, -1)[:, interior.ravel()].max(axis=1) if n_int else np.zeros(S)
    if tol_contact is None:
        tol_contact = default_tol_contact(domain, G.constants)
    tol_res_rows = np.array([
        tol_res if tol_res is not None else 1e-8 * max(1.0, abs(k)) for k in k_vals])

    flat_int = interior.ravel()
    if early_stop is not None:
        win_mask, theta = early_stop
        flat_win = win_mask.ravel()
        n_win = int(win_mask.sum())
        if init not in ("zero",) or n_win == 0:
            raise ValueError(
                "early_stop needs init='zero' (fraction bounds require a "
                "monotone-from-below start) and a nonempty window")

    # rows already at the fixed point w = 0 (operator nonnegative at zero)
    trivial = (c0.reshape(S, -1)[:, flat_int] >= 0.0).all(axis=1)

    if init not in ("zero", "auto", "poisson", "free", "direct"):
        raise ValueError(f"unknown init {init!r}")
    mode = init
    if init == "auto":
        mode = "direct" if G.family == "linear" else "zero"
    if mode in ("poisson", "free", "direct") and G.family != "linear":
        raise ValueError("direct warm starts exist only for the linear family")
    if mode in ("poisson", "free", "direct"):
        warm_rows = [b for b in range(S) if not trivial[b]]
        if warm_rows:
            warm = _warm_start_rows(fieldop, warm_rows, mode)
            for b in warm_rows:
                w[b] = warm[b]

    decided = trivial.copy()          # no more iteration needed
    censored = np.zeros(S, dtype=bool)
    residuals = np.full(S, np.inf)
    residuals[trivial] = 0.0
    iters_done = np.zeros(S, dtype=np.int64)

    it = 0
    while it < max_iter and not decided.all():
        Gval = fieldop.apply(w)
        if it % _CHECK_EVERY == 0:
            res_field = np.where(interior, np.minimum(Gval, w), 0.0)
            if not np.isfinite(res_field).all():
                raise NonconvergenceError("solver produced non-finite values",
                                          seeds=[e.seed for e in envs])
            res = np.abs(res_field.reshape(S, -1)[:, flat_int]).max(axis=1)
            newly = ~decided & (res <= tol_res_rows)
            residuals[newly] = res[newly]
            iters_done[newly] = it
            decided |= newly
            if early_stop is not None:
                contact = (w.reshape(S, -1)[:, flat_win] <= tol_contact)
                frac = contact.sum(axis=1) / n_win
                early = ~decided & (frac <= theta)
                residuals[early] = res[early]
                iters_done[early] = it
                censored |= early
                decided |= early
            if decided.all():
                break
        w = np.where(interior, np.maximum(0.0, w - tau * Gval), w)
        it += 1

    if not decided.all():
        Gval = fieldop.apply(w)
        res_field = np.where(interior, np.minimum(Gval, w), 0.0)
        res = np.abs(res_field.reshape(S, -1)[:, flat_int]).max(axis=1)
        late = ~decided & (res <= tol_res_rows)
        residuals[late] = res[late]
        iters_done[late] = it
        decided |= late
        if not decided.all():
            bad = np.where(~decided)[0]
            raise NonconvergenceError(
                f"obstacle solver hit max_iter={max_iter}; "
                f"residuals {res[bad]} vs tolerances {tol_res_rows[bad]}",
                residuals=res[bad].tolist(),
                seeds=[envs[b].seed for b in bad])

    sols = []
    for b in range(S):
        field = GridField(domain, w[b].copy())
        contact = interior & (w[b] <= tol_contact)
        sols.append(ObstacleSolution(
            w=field, contact=contact, residual=float(residuals[b]),
            iterations=int(iters_done[b]), alpha=float(G.alpha),
            k=float(k_vals[b]), tol_res=float(tol_res_rows[b]),
            tol_contact=float(tol_contact), converged=not bool(censored[b]),
            env=envs[b]))
    return sols


def solve_obstacle(G, domain, env, tol_res=None, tol_contact=None,
                   max_iter=500_000, init="auto"):
    """Single-realization obstacle solve; see solve_obstacle_batch."""
    return solve_obstacle_batch(G, domain, [env], tol_res=tol_res,
                                tol_contact=tol_contact, max_iter=max_iter,
                                init=init)[0]


@dataclass(frozen=True)
class ContactMeasure:
    count: int
    measure: float
    fraction: float


def contact_measure(sol, window=None):
    """Contact node count, Lebesgue measure count*h^dim, and window fraction."""
    dom = sol.w.domain
    if window is None:
        window = dom.interior
    count = int((sol.contact & window).sum())
    n = int(window.sum())
    return ContactMeasure(count=count, measure=count * dom.h ** dom.dim,
                          fraction=count / n if n else 0.0)


def _lower_envelope_line(pos, f, a):
    """Exact lower envelope of parabolas f[j] + a*(x - pos[j])^2 on the sites.

    Ties resolve to the smallest site, so composed passes give the
    lexicographically smallest minimizer.
    """
    n = len(pos)
    v = np.zeros(n, dtype=np.intp)
    z = np.empty(n + 1)
    z[0] = -np.inf
    z[1] = np.inf
    k = 0
    for j in range(1, n):
        while True:
            i = v[k]
            s = ((f[j] + a * pos[j] ** 2) - (f[i] + a * pos[i] ** 2)) \
                / (2.0 * a * (pos[j] - pos[i]))
            if s <= z[k]:
                k -= 1
                if k < 0:
                    v[0] = j
                    z[0] = -np.inf
                    z[1] = np.inf
                    k = 0
                    break
                continue
            k += 1
            v[k] = j
            z[k] = s
            z[k + 1] = np.inf
            break
    out = np.empty(n)
    arg = np.empty(n, dtype=np.int64)
    k = 0
    for q in range(n):
        x = pos[q]
        while z[k + 1] < x:
            k += 1
        i = v[k]
        val = f[i] + a * (x - pos[i]) ** 2
        if k > 0:
            # fp noise in crossing points can hide an exact tie with the
            # previous (smaller-site) parabola; prefer it when values match
            i2 = v[k - 1]
            val2 = f[i2] + a * (x - pos[i2]) ** 2
            if val2 - val <= 1e-12 * max(1.0, abs(val)):
                i, val = i2, val2
        out[q] = val
        arg[q] = pos[i]
    return out, arg


@dataclass
class InfConvolution:
    """w^delta(y) = min_z { w(z) + |y-z|^2 / (2 delta) } on the lattice."""
    w_delta: GridField
    delta: float
    argmin_map: np.ndarray  # (dim, *box) multi-indices of the minimizer
    source: GridField

    def gradient_field(self):
        """Exact gradient (y - z*)/delta per axis as box arrays."""
        dom = self.w_delta.domain
        grids = dom.index_grids()
        out = np.zeros((dom.dim,) + dom.box_shape)
        for i in range(dom.dim):
            out[i] = dom.h * (grids[i] - self.argmin_map[i]) / self.delta
        return out


def inf_convolution(w, delta):
    """Exact separable lattice inf-convolution via quadratic lower envelopes."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    dom = w.domain
    d = dom.dim
    a = dom.h ** 2 / (2.0 * delta)  # parabola weight in index units
    valid = dom.valid

    val = np.where(valid, w.values, np.inf)
    # axis 0 runs last so its tie-break dominates (lexicographic minimizer)
    order = list(range(d - 1, -1, -1))
    axis_args = {}
    for ax in order:
        moved = np.moveaxis(val, ax, -1)
        vmask = np.moveaxis(valid, ax, -1)
        arg = np.zeros(moved.shape, dtype=np.int64)
        lead = moved.shape[:-1]
        for lead_idx in np.ndindex(*lead):
            line = moved[lead_idx]
            mline = vmask[lead_idx]
            pos = np.nonzero(mline & np.isfinite(line))[0]
            if len(pos) == 0:
                continue
            env_vals, env_arg = _lower_envelope_line(pos, line[pos], a)
            line[pos] = env_vals
            arg[lead_idx][pos] = env_arg
        val = np.moveaxis(moved, -1, ax)
        axis_args[ax] = np.moveaxis(arg, -1, ax)

    grids = [g + dom.K for g in dom.index_grids()]  # array-index space
    point = [g.copy() for g in grids]
    for ax in reversed(order):  # compose outermost pass first
        comp = axis_args[ax][tuple(point)]
        point[ax] = comp
    argmin = np.stack(point, axis=0) - dom.K

    out = np.where(valid, val, 0.0)
    return InfConvolution(w_delta=GridField(dom, out), delta=float(delta),
                          argmin_map=argmin, source=w)


def infconv_gradient(ic, node):
    """D w^delta at a node: (y - z*)/delta with the recorded minimizer z*."""
    dom = ic.w_delta.domain
    if not dom.is_interior(node):
        raise ValueError(f"node {node} is not interior")
    idx = dom.to_array_index(node)
    z = np.array([ic.argmin_map[(i,) + idx] for i in range(dom.dim)])
    y = np.asarray(node, dtype=float)
    return dom.h * (y - z) / ic.delta


@dataclass(frozen=True)
class DefectReport:
    c_measured: float
    min_value: float
    n_nodes: int
    shrink: float
    delta: float


def evaluate_matrix_route(op, domain, env, field, mask, use_gradient=True):
    """G(D2_h f, D_h f, y, omega) on masked nodes via the exact matrix form."""
    H = hessian_fields(field)
    grads = gradient_fields(field) if use_gradient else None
    d = domain.dim
    nodes = np.argwhere(mask)
    nidx = tuple(nodes.T)
    if op.family == "linear":
        fop = build_field_operator(op, domain, [env], use_gradient=False)
        out = fop.c_eff[0][nidx].copy()
        for i in range(d):
            out -= fop.A[(i, i)][0][nidx] * H[(i, i)][nidx]
            for j in range(i + 1, d):
                if (i, j) in fop.A:
                    out -= 2.0 * fop.A[(i, j)][0][nidx] * H[(i, j)][nidx]
        if use_gradient:
            entries = op.env_model.table.entries
            for i in range(d):
                per = np.array([e.b[i] for e in entries])
                ks = env.entry_index_for_nodes(tuple(domain.index_grids()))
                out -= per[ks][nidx] * grads[i][nidx]
        return out
    if op.family == "pucci":
        mats = np.zeros((len(nodes), d, d))
        for i in range(d):
            mats[:, i, i] = H[(i, i)][nidx]
            for j in range(i + 1, d):
                mats[:, i, j] = mats[:, j, i] = H[(i, j)][nidx]
        mats += op.shift_M[None, :, :]
        eigs = np.linalg.eigvalsh(mats)
        eigs[np.abs(eigs) < 1e-14] = 0.0
        entries = op.env_model.table.entries
        ks = env.entry_index_for_nodes(tuple(domain.index_grids()))
        lam = np.array([e.lam for e in entries])[ks][nidx]
        Lam = np.array([e.Lam for e in entries])[ks][nidx]
        pos = np.maximum(eigs, 0.0).sum(axis=1)
        neg = np.maximum(-eigs, 0.0).sum(axis=1)
        kind = op.pucci_kind if op.sgn == 1 else ("-" if op.pucci_kind == "+" else "+")
        out = Lam * neg - lam * pos if kind == "+" else lam * neg - Lam * pos
        if use_gradient and op.grad_coeff != 0.0:
            gs = np.stack([g[nidx] for g in grads], axis=1) + op.shift_p[None, :]
            out += op.sgn * op.grad_coeff * np.linalg.norm(gs, axis=1)
        return out - op.alpha
    # callable family: per-node loop
    out = np.empty(len(nodes))
    for row, nd in enumerate(nodes):
        t = tuple(nd)
        M = np.zeros((d, d))
        for i in range(d):
            M[i, i] = H[(i, i)][t]
            for j in range(i + 1, d):
                M[i, j] = M[j, i] = H[(i, j)][t]
        p = np.array([g[t] for g in grads]) if use_gradient else np.zeros(d)
        Mi = op.sgn * (M + op.shift_M)
        pi = op.sgn * (p + op.shift_p)
        out[row] = op.sgn * op._core(Mi, pi, None) - op.alpha
    return out


def check_supersolution_defect(G, ic, env, shrink):
    """Worst negative part of G(D2_h w^delta, D_h w^delta, y, omega) away
    from the boundary; the amount by which w^delta fails to supersolve."""
    dom = ic.w_delta.domain
    if shrink < 2 * dom.h:
        raise ValueError("shrink must be at least 2h")
    window = distance_shrink_window(dom, shrink)
    vals = evaluate_matrix_route(G, dom, env, ic.w_delta, window)
    mn = float(vals.min()) if len(vals) else 0.0
    return DefectReport(c_measured=max(0.0, -mn), min_value=mn,
                        n_nodes=int(window.sum()), shrink=float(shrink),
                        delta=ic.delta)
