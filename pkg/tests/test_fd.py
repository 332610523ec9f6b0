import numpy as np
import pytest

from yamabe_atlas import fd


@pytest.mark.parametrize("order", [2, 4, 6])
def test_first_derivative_periodic_converges_at_stated_order(order):
    errs = []
    for n in (32, 64):
        x = np.linspace(0, 2 * np.pi, n, endpoint=False)
        h = x[1] - x[0]
        d = fd.derivative(np.sin(x), 0, h, order, periodic=True)
        errs.append(np.max(np.abs(d - np.cos(x))))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(order, abs=0.3)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_one_sided_edges_are_exact_on_polynomials(order):
    x = np.linspace(-1.0, 1.0, 21)
    h = x[1] - x[0]
    # boundary closures are second order: exact on quadratics (first) and cubics (second)
    d1 = fd.derivative(x ** 2 - 2 * x, 0, h, order, periodic=False)
    d2 = fd.second_derivative(x ** 3 - 2 * x, 0, h, order, periodic=False)
    assert np.max(np.abs(d1 - (2 * x - 2))) < 1e-10
    assert np.max(np.abs(d2 - 6 * x)) < 1e-9


def test_second_derivative_symbol_matches_weights():
    # -D^2 on a periodic grid has eigenvalues sum_k w_k 2(1 - cos k theta) / h^2
    n, h = 16, 0.3
    for order in (2, 4, 6):
        e = np.zeros(n)
        e[0] = 1.0
        col = -fd.second_derivative(e, 0, h, order, periodic=True)
        eig = np.sort(np.fft.fft(col).real)
        theta = 2 * np.pi * np.arange(n) / n
        w = fd.SECOND[order]
        expected = sum(wk * 2 * (1 - np.cos(k * theta)) for k, wk in enumerate(w, start=1)) / h ** 2
        assert np.allclose(eig, np.sort(expected), atol=1e-10)


def test_gradient_axis_convention():
    x, y = np.meshgrid(np.linspace(0, 1, 9), np.linspace(0, 2, 11), indexing="ij")
    f = np.stack([x, 2 * y])  # one component axis in front
    g = fd.gradient(f, (x[1, 0] - x[0, 0], y[0, 1] - y[0, 0]), 4, False, ndim=2)
    assert g.shape == (2, 2, 9, 11)
    assert np.allclose(g[0, 0], 1.0) and np.allclose(g[1, 1], 2.0)
    assert np.allclose(g[0, 1], 0.0) and np.allclose(g[1, 0], 0.0)


def test_bad_order_rejected():
    with pytest.raises(ValueError):
        fd.check_order(3)
