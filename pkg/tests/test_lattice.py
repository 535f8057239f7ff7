import numpy as np
import pytest

from homoglab.lattice import (GridField, SymMatrix, as_sym_matrix,
                              classify_nodes, discrete_gradient,
                              discrete_hessian, interior_window, make_domain,
                              second_difference)

from oracles import brute_force_nodes


def nodes_of(mask, K, h):
    return sorted(tuple(idx) for idx in (np.argwhere(mask) - K))


def test_1d_cube_enumeration():
    interior, boundary, K = classify_nodes(1, "cube", 1.0, 0.5)
    assert nodes_of(interior, K, 0.5) == [(-1,), (0,), (1,)]
    assert nodes_of(boundary, K, 0.5) == [(-2,), (2,)]


def test_2d_ball_coarse_enumeration():
    interior, _, K = classify_nodes(2, "ball", 1.0, 0.5)
    assert int(interior.sum()) == 9
    assert nodes_of(interior, K, 0.5) == brute_force_nodes(2, "ball", 1.0, 0.5)


@pytest.mark.parametrize("dim,shape,r,h", [
    (1, "cube", 1.0, 0.2), (2, "ball", 1.5, 0.25), (2, "cube", 1.0, 0.125),
    (3, "ball", 1.0, 0.2),
])
def test_classification_matches_enumeration(dim, shape, r, h):
    dom = make_domain(dim, shape, r, h)
    got = nodes_of(dom.interior, dom.K, h)
    assert got == brute_force_nodes(dim, shape, r, h)


def test_coarse_spacing_rejected():
    with pytest.raises(ValueError, match="coarse"):
        make_domain(1, "cube", 1.0, 0.3)
    with pytest.raises(ValueError):
        make_domain(4, "cube", 1.0, 0.1)
    with pytest.raises(ValueError):
        make_domain(2, "simplex", 1.0, 0.1)


def test_every_interior_node_has_neighbors_classified():
    dom = make_domain(2, "ball", 1.5, 0.25)
    nodes = dom.interior_nodes()
    for e in [(1, 0), (0, 1), (1, 1), (1, -1)]:
        for nd in nodes:
            assert dom.is_valid(nd + np.array(e))
            assert dom.is_valid(nd - np.array(e))


def test_node_count_scaling():
    for dim in (1, 2, 3):
        r, h = 1.0, 0.1
        dom = make_domain(dim, "cube", r, h)
        expected = (2 * r / h) ** dim
        assert expected / 2 <= dom.n_interior <= 2 * expected


def test_second_difference_quadratic_exact():
    dom = make_domain(1, "cube", 1.0, 0.2)
    f = GridField.from_function(dom, lambda y: y[0] ** 2)
    for node in [(-2,), (0,), (3,)]:
        assert second_difference(f, (1,), node) == pytest.approx(2.0, abs=1e-12)
    const = GridField.from_function(dom, lambda y: 4.2)
    assert second_difference(const, (1,), (0,)) == pytest.approx(0.0, abs=1e-13)


def test_second_difference_quartic_taylor():
    # f = y^4 at y = 1 with h = 0.1: direct evaluation gives 12 + 2 h^2
    dom = make_domain(1, "cube", 2.0, 0.1)
    f = GridField.from_function(dom, lambda y: y[0] ** 4)
    val = second_difference(f, (1,), (10,))
    direct = (1.1 ** 4 - 2.0 + 0.9 ** 4) / 0.01
    assert val == pytest.approx(direct, rel=1e-12)
    assert val == pytest.approx(12.02, rel=1e-12)


def test_second_difference_errors():
    dom = make_domain(1, "cube", 1.0, 0.2)
    f = GridField.zeros(dom)
    with pytest.raises(ValueError):
        second_difference(f, (1,), (5,))   # boundary node, not interior
    with pytest.raises(ValueError):
        second_difference(f, (0,), (0,))   # zero direction
    dom2 = make_domain(2, "ball", 1.0, 0.2)
    f2 = GridField.zeros(dom2)
    with pytest.raises(ValueError):
        second_difference(f2, (2, 0), (0, 0))  # components beyond one


def test_discrete_hessian_quadratic_and_bilinear():
    dom = make_domain(2, "cube", 1.0, 0.2)
    f = GridField.from_function(dom, lambda y: y[0] ** 2 - 2 * y[1] ** 2 + y[0] * y[1])
    H = discrete_hessian(f, (1, -1)).full()
    assert np.allclose(H, [[2.0, 1.0], [1.0, -4.0]], atol=1e-11)
    g = GridField.from_function(dom, lambda y: y[0] * y[1])
    assert discrete_hessian(g, (0, 0)).full()[0, 1] == pytest.approx(1.0)
    const = GridField.from_function(dom, lambda y: 1.0)
    assert np.allclose(discrete_hessian(const, (0, 0)).full(), 0.0, atol=1e-13)


def test_discrete_gradient_exact_and_taylor():
    dom = make_domain(2, "cube", 1.0, 0.2)
    f = GridField.from_function(dom, lambda y: 3.0 * y[0] - 0.5 * y[1] + 1.0)
    assert np.allclose(discrete_gradient(f, (1, 1)), [3.0, -0.5], atol=1e-12)
    dom1 = make_domain(1, "cube", 2.0, 0.1)
    cubic = GridField.from_function(dom1, lambda y: y[0] ** 3)
    # y^3 at y = 1: centered difference gives 3 + h^2
    assert discrete_gradient(cubic, (10,))[0] == pytest.approx(3.01, rel=1e-12)


def test_hessian_of_random_quadratic_is_exact_everywhere():
    rng = np.random.default_rng(5)
    B = rng.normal(size=(2, 2))
    Q = 0.5 * (B + B.T)
    b = rng.normal(size=2)
    dom = make_domain(2, "ball", 1.2, 0.2)
    f = GridField.from_function(dom, lambda y: y @ Q @ y + b @ y + 0.3)
    inner = [nd for nd in dom.interior_nodes()
             if all(dom.is_interior(nd + e) or dom.is_valid(nd + e)
                    for e in [(1, 1), (-1, 1), (1, -1), (-1, -1)])]
    for nd in inner[::7]:
        assert np.allclose(discrete_hessian(f, nd).full(), 2 * Q, atol=1e-10)


def test_interior_window_nesting_and_limits():
    dom = make_domain(2, "ball", 1.0, 0.1)
    w_half = interior_window(dom, 0.5)
    w_big = interior_window(dom, 0.8)
    assert (w_half & ~w_big).sum() == 0            # nesting
    assert (w_half & ~dom.interior).sum() == 0     # contained in nodes
    near_one = interior_window(dom, 0.999)
    assert (near_one == dom.interior).all()        # t -> 1 recovers all nodes
    with pytest.raises(ValueError):
        interior_window(dom, 0.0)
    with pytest.raises(ValueError):
        interior_window(dom, 1.0)


def test_interior_window_count_2d_ball():
    dom = make_domain(2, "ball", 1.0, 0.2)
    got = int(interior_window(dom, 0.5).sum())
    expect = len(brute_force_nodes(2, "ball", 0.5, 0.2))
    assert got == expect == 21


def test_cube_window_is_sup_norm_ball():
    dom = make_domain(1, "cube", 1.0, 0.1)
    win = interior_window(dom, 0.5)
    ys = dom.coord_grids()[0]
    assert (np.abs(ys[win]) < 0.5).all()
    assert int(win.sum()) == 9  # indices -4..4


def test_sym_matrix_storage_and_algebra():
    M = SymMatrix.from_full([[1.0, 2.0], [2.0, -1.0]])
    assert M.packed.shape == (3,)
    assert np.allclose(M.full(), M.full().T)
    assert M.trace() == pytest.approx(0.0)
    N = as_sym_matrix(np.eye(2))
    assert np.allclose((M + 2 * N).full(), [[3, 2], [2, 1]])
    assert np.allclose((-M).full(), -M.full())
    # scalars promote to multiples of the identity
    assert np.allclose(as_sym_matrix(2.0, 2).full(), 2 * np.eye(2))
    # asymmetric input is symmetrized
    A = SymMatrix.from_full([[0.0, 1.0], [0.0, 0.0]])
    assert np.allclose(A.full(), [[0, 0.5], [0.5, 0]])


def test_grid_field_finite_check():
    dom = make_domain(1, "cube", 1.0, 0.2)
    f = GridField.zeros(dom)
    f.values[dom.to_array_index((0,))] = np.nan
    with pytest.raises(FloatingPointError):
        f.assert_finite()
