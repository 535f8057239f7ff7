"""Independent oracles used to freeze expected values in the tests.

Everything here is deliberately naive (enumeration, banded solves, direct
integration) and shares no code path with the solvers it checks.
"""

import numpy as np
import scipy.linalg as sla


def brute_force_nodes(dim, shape, r, h, bound=None):
    """Enumerate integer multi-indices with |h * i| < r directly."""
    if bound is None:
        bound = int(np.ceil(r / h)) + 2
    axes = [range(-bound, bound + 1)] * dim
    out = []
    import itertools
    for idx in itertools.product(*axes):
        y = np.array(idx, dtype=float) * h
        if shape == "ball":
            inside = float(y @ y) < r * r
        else:
            inside = np.abs(y).max() < r
        if inside:
            out.append(idx)
    return sorted(out)


def tridiagonal_dirichlet(a_nodes, h, rhs, g_left, g_right):
    """Solve -a(y) u'' = rhs on a uniform 1-d grid by a banded direct solve.

    a_nodes and rhs are per-interior-node arrays; returns interior values.
    """
    n = len(a_nodes)
    ab = np.zeros((3, n))
    b = np.array(rhs, dtype=float)
    for i in range(n):
        ab[1, i] = 2.0 * a_nodes[i] / h ** 2
        if i > 0:
            ab[2, i - 1] = -a_nodes[i] / h ** 2
        if i < n - 1:
            ab[0, i + 1] = -a_nodes[i] / h ** 2
    b[0] += a_nodes[0] * g_left / h ** 2
    b[-1] += a_nodes[-1] * g_right / h ** 2
    return sla.solve_banded((1, 1), ab, b)


def corrector_harmonic_mean(a_cells):
    """Effective coefficient from the 1-d corrector equation.

    Find abar such that phi'' = abar / a - 1 admits a sublinear phi: the
    mean of phi'' must vanish, so abar is the harmonic mean; the sublinear
    growth of the resulting phi is verified before returning.
    """
    a = np.asarray(a_cells, dtype=float)
    abar = 1.0 / np.mean(1.0 / a)
    phi_second = abar / a - 1.0
    phi_prime = np.cumsum(phi_second)
    phi = np.cumsum(phi_prime)
    n = len(a)
    tail = np.abs(phi[n // 2:]) / np.arange(n // 2, n) ** 1.5
    assert tail.max() < 10.0, "corrector is not sublinear"
    return abar


def quadratic_inf_convolution(A_coef, delta):
    """Closed-form inf-convolution scale for w(y) = A |y|^2, A >= 0."""
    return A_coef / (1.0 + 2.0 * delta * A_coef)


def radial_pucci_plus_bump(Lam, dim, r, rho):
    """Solution of P+(D2 w) = 1, w = 0 on the sphere of radius r.

    The concave radial candidate w = (r^2 - rho^2) c has Hessian -2c I,
    so P+ = 2 c Lam d = 1 fixes c.
    """
    c = 1.0 / (2.0 * Lam * dim)
    return c * (r ** 2 - rho ** 2)
