"""Monte Carlo identification of the effective nonlinearity.

The limiting contact density of the shifted obstacle problem is estimated
inside interior windows over many seeded realizations; the effective value
at (M, p) is the threshold in alpha where that density vanishes, located by
bisection on the predicate density > theta_cut.  The same seed set is used
at every alpha, so the sampled density curve is nonincreasing realization
by realization and the bisection predicate is free of Monte Carlo noise
inversions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environments import sample_env
from .lattice import as_sym_matrix, interior_window, make_domain
from .obstacle import (contact_measure, inf_convolution, solve_obstacle,
                       solve_obstacle_batch)
from .operators import pucci_minus, pucci_plus, shift_operator, subtract_constant


class BracketError(RuntimeError):
    pass


def default_alpha_tol(F, M, p):
    """Resolution target scaled to the operator's Lipschitz bounds."""
    M = as_sym_matrix(M, F.dim)
    p = np.zeros(F.dim) if p is None else np.atleast_1d(np.asarray(p, float))
    c = F.constants
    return 1e-2 * (c.Lam * M.norm() + c.gamma * float(np.linalg.norm(p)) + 1.0)


@dataclass(frozen=True)
class DensityEstimate:
    alpha: float
    r: float
    window_t: float
    n_samples: int
    mean_fraction: float
    std_error: float
    per_seed: tuple
    censored: tuple  # seeds stopped early; their fractions are upper bounds

    @property
    def converged_all(self):
        return len(self.censored) == 0


def _mc_envs(F, h, seeds):
    model = F.env_model.with_spacing(h)
    return [sample_env(model, s) for s in seeds]


def _fractions_to_estimate(alpha, r, window_t, seeds, fracs, censored_seeds):
    n = len(seeds)
    mean = float(np.mean(fracs))
    se = float(np.std(fracs, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return DensityEstimate(alpha=float(alpha), r=float(r), window_t=float(window_t),
                           n_samples=n, mean_fraction=mean, std_error=se,
                           per_seed=tuple(float(f) for f in fracs),
                           censored=tuple(censored_seeds))


def density_estimate(F, M, p, alpha, r, window_t, n_samples, base_seed, *, h,
                     shape="ball", tol_res=None, tol_contact=None,
                     max_iter=2_000_000, early_theta=None,
                     return_solutions=False):
    """Contact fraction of F_{M,p} - alpha inside the interior window.

    One obstacle solve per seed (batched); with early_theta set, a
    realization is released as soon as its fraction drops to the threshold
    (the recorded value is then an upper bound, tagged in ``censored``).
    """
    if not 0.0 < window_t < 1.0:
        raise ValueError("window_t must be in (0, 1)")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    domain = make_domain(F.dim, shape, r, h)
    win = interior_window(domain, window_t)
    seeds = [base_seed + i for i in range(n_samples)]
    envs = _mc_envs(F, h, seeds)
    G = subtract_constant(shift_operator(F, M, p), alpha)
    # linear solves warm-start from the clipped free solution and converge
    # fast in every regime; the censoring early exit is for families without
    # a direct solve, where lift-off would otherwise cost diffusion time
    early = None
    init = "auto"
    if early_theta is not None and F.family != "linear":
        early = (win, early_theta)
        init = "zero"
    sols = solve_obstacle_batch(G, domain, envs, tol_res=tol_res,
                                tol_contact=tol_contact, max_iter=max_iter,
                                init=init, early_stop=early)
    fracs = [contact_measure(s, win).fraction for s in sols]
    censored = [seeds[i] for i, s in enumerate(sols) if not s.converged]
    est = _fractions_to_estimate(alpha, r, window_t, seeds, fracs, censored)
    return (est, sols) if return_solutions else est


@dataclass(frozen=True)
class DensityCurve:
    estimates: tuple
    violations: tuple  # adjacent pairs whose mean increase exceeds the slack
    monotone_ok: bool


def density_curve(F, M, p, alpha_grid, r, window_t, n_samples, base_seed, *, h,
                  shape="ball", tol_res=None, max_iter=2_000_000):
    """Density estimates over an alpha grid with shared seeds per alpha.

    The mean curve must be nonincreasing up to twice the summed standard
    errors per adjacent pair; violations are flagged, not raised, since they
    signal a tolerance or sampling misconfiguration.
    """
    alphas = sorted(float(a) for a in alpha_grid)
    ests = [density_estimate(F, M, p, a, r, window_t, n_samples, base_seed,
                             h=h, shape=shape, tol_res=tol_res, max_iter=max_iter)
            for a in alphas]
    violations = []
    for e1, e2 in zip(ests, ests[1:]):
        slack = 2.0 * (e1.std_error + e2.std_error)
        if e2.mean_fraction > e1.mean_fraction + slack:
            violations.append((e1.alpha, e2.alpha,
                               e2.mean_fraction - e1.mean_fraction))
    return DensityCurve(estimates=tuple(ests), violations=tuple(violations),
                        monotone_ok=not violations)


@dataclass(frozen=True)
class EffectiveParams:
    r: float
    h: float
    shape: str = "ball"
    window_t: float = 0.5
    n_samples: int = 10
    base_seed: int = 0
    theta_cut: float = 0.01
    alpha_tol: float | None = None
    tol_res: float | None = None
    tol_contact: float | None = None
    max_iter: int = 2_000_000
    bias_probe: bool = False

    def __post_init__(self):
        if not 0.0 < self.theta_cut < 0.2:
            raise ValueError("theta_cut must be in (0, 0.2)")
        if self.n_samples < 1 or self.r <= 0 or self.h <= 0:
            raise ValueError("invalid Monte Carlo parameters")


@dataclass(frozen=True)
class EffectiveSample:
    M: object
    p: object
    alpha_lo: float
    alpha_hi: float
    estimate: float
    alpha_tol: float
    uncertainty: float
    diagnostics: dict


def effective_F(F, M, p, params):
    """Estimate the effective value at (M, p): the supremum of alpha for
    which the limiting contact density of F_{M,p} - alpha stays positive.

    The initial bracket is the essential range of F(M, p, 0, .) over the
    environment's cells, widened by alpha_tol; bisection runs on the
    predicate density > theta_cut with the same seeds at every alpha.
    """
    atol = params.alpha_tol if params.alpha_tol is not None else default_alpha_tol(F, M, p)
    theta = params.theta_cut

    def dens(alpha):
        return density_estimate(
            F, M, p, alpha, params.r, params.window_t, params.n_samples,
            params.base_seed, h=params.h, shape=params.shape,
            tol_res=params.tol_res, tol_contact=params.tol_contact,
            max_iter=params.max_iter, early_theta=theta)

    ess_lo, ess_hi = F.origin_value_range(M, p)
    lo, hi = ess_lo - atol, ess_hi + atol
    d_lo = dens(lo)
    if d_lo.mean_fraction <= theta:
        raise BracketError(
            f"density {d_lo.mean_fraction} at alpha={lo} should exceed {theta}")
    curve = [d_lo]
    if hi - lo > atol:
        d_hi = dens(hi)
        if d_hi.mean_fraction > theta:
            raise BracketError(
                f"density {d_hi.mean_fraction} at alpha={hi} should be <= {theta}")
        curve.append(d_hi)
    else:
        d_hi = None

    while hi - lo > atol:
        mid = 0.5 * (lo + hi)
        dm = dens(mid)
        curve.append(dm)
        if dm.mean_fraction > theta:
            lo, d_lo = mid, dm
        else:
            hi, d_hi = mid, dm

    estimate = 0.5 * (lo + hi)
    width = hi - lo
    unc = 0.5 * width
    if d_hi is not None:
        slope = (d_lo.mean_fraction - d_hi.mean_fraction) / max(width, 1e-300)
        se = float(np.hypot(d_lo.std_error, d_hi.std_error))
        if slope > 0:
            unc = max(unc, min(se / slope, 2.0 * width))
    diagnostics = {
        "curve": [(e.alpha, e.mean_fraction, e.std_error, len(e.censored))
                  for e in sorted(curve, key=lambda e: e.alpha)],
        "essential_range": (ess_lo, ess_hi),
        "n_samples": params.n_samples,
        "base_seed": params.base_seed,
        "theta_cut": theta,
        "r": params.r,
        "window_t": params.window_t,
    }
    if params.bias_probe and params.r / 2 / params.h >= 8:
        half = EffectiveParams(r=params.r / 2, h=params.h, shape=params.shape,
                               window_t=params.window_t,
                               n_samples=params.n_samples,
                               base_seed=params.base_seed, theta_cut=theta,
                               alpha_tol=atol, tol_res=params.tol_res,
                               tol_contact=params.tol_contact,
                               max_iter=params.max_iter, bias_probe=False)
        half_est = effective_F(F, M, p, half)
        diagnostics["half_r_estimate"] = half_est.estimate
        diagnostics["bias_estimate"] = estimate - half_est.estimate
    return EffectiveSample(M=M, p=p, alpha_lo=float(lo), alpha_hi=float(hi),
                           estimate=float(estimate), alpha_tol=float(atol),
                           uncertainty=float(unc), diagnostics=diagnostics)


@dataclass(frozen=True)
class FlatnessReport:
    r_list: tuple
    sup_w_scaled: tuple       # r^-2 sup w^delta
    sup_grad_scaled: tuple    # r^-1 sup |D w^delta|
    per_step_ok: bool
    net_decrease_ok: bool
    gradient_bound_ok: bool
    details: dict

    @property
    def passed(self):
        return self.per_step_ok and self.net_decrease_ok and self.gradient_bound_ok


def _contact_distances(sol):
    """Euclidean distance from every node to the contact set (inf if empty)."""
    from scipy import ndimage
    dom = sol.w.domain
    if not sol.contact.any():
        return np.full(dom.box_shape, np.inf)
    d = ndimage.distance_transform_edt(~sol.contact, sampling=dom.h)
    return d


def flatness_check(F, M, p, alpha_below, r_list, delta, *, h, seed,
                   shape="ball", tol_res=None, max_iter=5_000_000,
                   step_slack=1.2):
    """Corrector flatness: r^-2 sup w^delta and r^-1 sup |Dw^delta| must both
    shrink as the domain grows (20 percent slack per step), and the exact
    inf-convolution gradient must obey |Dw^delta| * delta <= dist(contact) + h.
    """
    G = subtract_constant(shift_operator(F, M, p), alpha_below)
    sup_w, sup_g, rows = [], [], []
    grad_ok = True
    for r in r_list:
        domain = make_domain(F.dim, shape, r, h)
        env = sample_env(F.env_model.with_spacing(h), seed)
        sol = solve_obstacle_batch(G, domain, [env], tol_res=tol_res,
                                   max_iter=max_iter, init="zero")[0]
        ic = inf_convolution(sol.w, delta)
        wsup = float(ic.w_delta.values[domain.interior].max()) if domain.n_interior else 0.0
        grads = ic.gradient_field()
        gnorm = np.sqrt(sum(g * g for g in grads))
        gsup = float(gnorm[domain.interior].max()) if domain.n_interior else 0.0
        dist = _contact_distances(sol)
        bound_gap = (gnorm * delta - dist - h)[domain.interior]
        grad_ok &= bool((bound_gap <= 1e-9).all())
        sup_w.append(wsup / r ** 2)
        sup_g.append(gsup / r)
        rows.append({"r": r, "sup_w": wsup, "sup_grad": gsup,
                     "contact_count": int(sol.contact.sum()),
                     "iterations": sol.iterations})
    per_step = all(b <= step_slack * a for a, b in zip(sup_w, sup_w[1:])) and \
        all(b <= step_slack * a for a, b in zip(sup_g, sup_g[1:]))
    net = sup_w[-1] < sup_w[0] + 1e-15 and sup_g[-1] < sup_g[0] + 1e-15
    return FlatnessReport(r_list=tuple(r_list), sup_w_scaled=tuple(sup_w),
                          sup_grad_scaled=tuple(sup_g), per_step_ok=per_step,
                          net_decrease_ok=net, gradient_bound_ok=grad_ok,
                          details={"rows": rows, "delta": delta,
                                   "alpha_below": alpha_below, "seed": seed})


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    margin: float
    detail: dict


@dataclass(frozen=True)
class PropertyReport:
    checks: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]


def check_effective_properties(F, sample_pairs, params, homogeneity_ts=(0.5, 2.0)):
    """Inherited structure of the effective operator on sampled pairs.

    Per pair ((M,p),(N,q)): the extremal sandwich on increments within
    tol_total = 2 alpha_tol + combined bracket uncertainty, and commutation
    with odd reflection.  When F is positively homogeneous, degree-one
    scaling is checked on the first sample.
    """
    from .operators import odd_reflection

    cache = {}

    def fbar(op, opkey, M, p):
        key = (opkey, np.asarray(as_sym_matrix(M, F.dim).full()).tobytes(),
               np.asarray(p, dtype=float).tobytes())
        if key not in cache:
            cache[key] = effective_F(op, M, p, params)
        return cache[key]

    oddF = odd_reflection(F)
    checks = []
    c = F.constants
    for idx, ((M, p), (N, q)) in enumerate(sample_pairs):
        sM = fbar(F, "F", M, p)
        sN = fbar(F, "F", N, q)
        tol_total = 2.0 * max(sM.alpha_tol, sN.alpha_tol) \
            + float(np.hypot(sM.uncertainty, sN.uncertainty))
        dM = as_sym_matrix(M, F.dim).full() - as_sym_matrix(N, F.dim).full()
        gap = c.gamma * float(np.linalg.norm(np.asarray(p, float) - np.asarray(q, float)))
        diff = sM.estimate - sN.estimate
        lo = pucci_minus(dM, c) - gap - tol_total
        hi = pucci_plus(dM, c) + gap + tol_total
        checks.append(PropertyCheck(
            name=f"inherited_ellipticity[{idx}]",
            passed=lo <= diff <= hi,
            margin=float(min(diff - lo, hi - diff)),
            detail={"M": np.asarray(as_sym_matrix(M, F.dim).full()).tolist(),
                    "p": list(np.atleast_1d(p)),
                    "N": np.asarray(as_sym_matrix(N, F.dim).full()).tolist(),
                    "q": list(np.atleast_1d(q)),
                    "diff": diff, "lower": lo, "upper": hi,
                    "tol_total": tol_total}))
        sOdd = fbar(oddF, "oddF", M, p)
        sNeg = fbar(F, "F", -as_sym_matrix(M, F.dim).full(),
                    -np.atleast_1d(np.asarray(p, float)))
        odd_gap = abs(sOdd.estimate - (-sNeg.estimate))
        odd_tol = 2.0 * max(sOdd.alpha_tol, sNeg.alpha_tol) \
            + float(np.hypot(sOdd.uncertainty, sNeg.uncertainty))
        checks.append(PropertyCheck(
            name=f"odd_reflection[{idx}]",
            passed=odd_gap <= odd_tol,
            margin=float(odd_tol - odd_gap),
            detail={"odd_estimate": sOdd.estimate, "neg_estimate": -sNeg.estimate,
                    "tol_total": odd_tol}))
    if F.positively_homogeneous and sample_pairs and homogeneity_ts:
        (M, p), _ = sample_pairs[0]
        s1 = fbar(F, "F", M, p)
        for t in homogeneity_ts:
            Mt = t * as_sym_matrix(M, F.dim).full()
            pt = t * np.atleast_1d(np.asarray(p, float))
            st = fbar(F, "F", Mt, pt)
            gap = abs(st.estimate - t * s1.estimate)
            tol = st.alpha_tol + t * s1.alpha_tol \
                + float(np.hypot(st.uncertainty, t * s1.uncertainty))
            checks.append(PropertyCheck(
                name=f"homogeneity[t={t}]",
                passed=gap <= tol, margin=float(tol - gap),
                detail={"scaled": st.estimate, "t_times_base": t * s1.estimate,
                        "tol_total": tol}))
    return PropertyReport(checks=tuple(checks))
