import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statichedge.errors import InvalidSpecError
from statichedge.market import GridAxis, MarginalDensity
from statichedge.replication import ReplicationPortfolio, decompose, default_kappa, reconstruct
from statichedge.single import HedgeCurve


def curve(x, fn):
    x = np.asarray(x, dtype=float)
    return HedgeCurve(GridAxis(x), fn(x))


def test_square_on_unit_grid():
    f = curve(np.arange(-3.0, 4.0), lambda x: x ** 2)
    port = decompose(f, 0.0)
    assert port.cash == 0.0 and port.forward_units == 0.0
    np.testing.assert_allclose(port.put_strikes, [-3, -2, -1, 0])
    np.testing.assert_allclose(port.put_weights, [1, 2, 2, 1])
    np.testing.assert_allclose(port.call_weights, [1, 2, 2, 1])
    np.testing.assert_allclose(reconstruct(port, f.axis.points), f.values, atol=1e-14)
    assert reconstruct(port, 1.5) == 2.5  # linear interpolant between nodes


def test_kink_split_at_kappa():
    f = curve(np.linspace(-1, 1, 5), np.abs)
    port = decompose(f, 0.0)
    assert port.forward_units == 0.0
    assert port.put_weights[-1] == pytest.approx(1.0) and port.call_weights[0] == pytest.approx(1.0)
    np.testing.assert_allclose(reconstruct(port, np.linspace(-1, 1, 41)), np.abs(np.linspace(-1, 1, 41)), atol=1e-14)


@pytest.mark.parametrize("kappa", [-2.0, -0.3, 0.77, 2.0])
def test_any_kappa_reproduces_interpolant(kappa, rng):
    x = np.sort(rng.uniform(-2, 2, 12))
    x[0], x[-1] = -2.0, 2.0
    f = HedgeCurve(GridAxis(x), rng.normal(size=12))
    port = decompose(f, kappa)
    t = np.linspace(-2, 2, 301)
    np.testing.assert_allclose(reconstruct(port, t), np.interp(t, x, f.values), atol=1e-12)


def test_endpoints_flagged():
    f = curve(np.linspace(0, 1, 6), np.exp)
    port = decompose(f, 0.4)
    assert port.meta["one_sided_endpoints"]
    assert port.meta["endpoint_strikes"] == (0.0, 1.0)


def test_second_order_convergence():
    errs = []
    for n in (21, 41, 81):
        x = np.linspace(-1, 1, n)
        port = decompose(curve(x, np.sin), 0.0)
        fine = np.linspace(-1, 1, 2001)
        errs.append(np.max(np.abs(reconstruct(port, fine) - np.sin(fine))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=15), st.floats(0, 1), st.floats(0.1, 10))
def test_linearity(vals, where, s):
    x = np.arange(len(vals), dtype=float)
    f = HedgeCurve(GridAxis(x), np.array(vals))
    kappa = where * x[-1]
    port = decompose(f, kappa)
    big = decompose(HedgeCurve(GridAxis(x), s * np.array(vals)), kappa)
    t = np.linspace(0, x[-1], 50)
    np.testing.assert_allclose(reconstruct(big, t), reconstruct(port.scaled(s), t), atol=1e-9 * max(1, s * max(map(abs, vals))))


def test_default_kappa():
    ax = GridAxis(np.linspace(0, 4, 5))
    assert default_kappa(ax) == 2.0
    assert default_kappa(ax, MarginalDensity(ax, [0.0, 0.9, 0.1, 0.0, 0.0])) == 1.0


def test_rejections():
    with pytest.raises(InvalidSpecError):
        decompose(curve([0.0, 1.0], lambda x: x), 0.5)
    with pytest.raises(InvalidSpecError, match="kappa"):
        decompose(curve([0.0, 1.0, 2.0], lambda x: x), 3.0)
    with pytest.raises(InvalidSpecError):
        ReplicationPortfolio(0.0, 0.0, 0.0, [1.0, 0.0], [1.0, 1.0], [], [])


def test_rows_layout():
    port = decompose(curve(np.linspace(0, 2, 5), lambda x: x ** 2), 1.0)
    rows = port.rows()
    assert rows[0] == ("cash", 1.0, 1.0) and rows[1][0] == "forward"
    assert {r[0] for r in rows[2:]} == {"put", "call"}
