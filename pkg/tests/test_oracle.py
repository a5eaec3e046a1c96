"""
Domains, sampling, fiber search, Newton inversion and flow integration.
"""
import math

import numpy as np
import pytest
import sympy as sp

from parafact.core.exceptions import DomainError, FlowError, NewtonError
from parafact.domain import Domain, Interval, Periodic, parse_interval, parse_modulus
from parafact.oracle import BatchMap, fiber_pairs, in_domain, integrate_flow, newton_invert, rk4_path, sample

x, y, s = sp.symbols("x y s", real=True)


def test_interval_parsing():
    assert parse_interval("0,inf") == Interval(0, math.inf)
    closed = parse_interval("[-1, 2]")
    assert closed.lo_closed and closed.hi_closed
    assert str(parse_interval("-inf,inf")) == "(-inf,inf)"
    assert parse_modulus("2*pi").modulus == pytest.approx(2 * math.pi)


@pytest.mark.parametrize("text", ["1", "2,1", "a,b"])
def test_bad_intervals(text):
    with pytest.raises(DomainError):
        parse_interval(text)


def test_empty_axes_are_rejected():
    with pytest.raises(DomainError):
        Interval(1, 1)
    with pytest.raises(DomainError):
        Periodic(0)


def test_windows_of_unbounded_intervals():
    assert Interval().window(10) == (-10, 10)
    assert Interval(0, math.inf).window(10) == (0, 10)
    assert Interval(-math.inf, -20).window(10) == (-30, -20)


def test_sampling_is_reproducible_and_inside():
    dom = Domain({"x": Interval(-1, 2), "y": Periodic(1.0)})
    first = sample(dom, 200, seed=3)
    second = sample(dom, 200, seed=3)
    assert np.array_equal(first["x"], second["x"])
    assert np.all((first["x"] > -1) & (first["x"] < 2))
    assert np.all((first["y"] >= 0) & (first["y"] < 1))
    assert in_domain(dom, first).all()


def test_uniform_sampling_changes_with_seed():
    dom = Domain({"x": Interval(0, 1)})
    a = sample(dom, 50, seed=1, method="uniform")
    b = sample(dom, 50, seed=2, method="uniform")
    assert not np.array_equal(a["x"], b["x"])


def test_predicates_are_enforced():
    dom = Domain({"x": Interval(-1, 1), "y": Interval(-1, 1)}, [y - x])
    columns = sample(dom, 300)
    assert np.all(columns["y"] > columns["x"])


def test_sampling_errors():
    dom = Domain({"x": Interval(0, 1)})
    with pytest.raises(DomainError):
        sample(dom, 0)
    impossible = Domain({"x": Interval(0, 1)}, [-x - 1])
    with pytest.raises(DomainError):
        sample(impossible, 10)


def test_fiber_pairs_of_a_projection():
    """Dropping a coordinate leaves one-dimensional fibers."""
    fmap = BatchMap([x], [x, y])
    dom = Domain({"x": Interval(-1, 1), "y": Interval(-1, 1)})
    found = fiber_pairs(fmap, [None], dom, count=20, seed=0)
    assert found.pairs
    for pair in found.pairs:
        assert pair.p1["x"] == pytest.approx(pair.p2["x"], abs=1e-8)
        assert abs(pair.p1["y"] - pair.p2["y"]) > 1e-6


def test_fiber_pairs_of_an_injective_map_are_discrete():
    fmap = BatchMap([x + y, x - y], [x, y])
    dom = Domain({"x": Interval(-1, 1), "y": Interval(-1, 1)})
    found = fiber_pairs(fmap, [None, None], dom, count=20, seed=0)
    assert not found.pairs
    assert found.discrete


def test_periodic_targets_give_shifted_pairs():
    """2x mod 1 identifies x and x + 1/2 on the circle."""
    fmap = BatchMap([2 * x], [x])
    dom = Domain({"x": Periodic(1.0)})
    found = fiber_pairs(fmap, [1.0], dom, count=20, seed=0)
    assert found.pairs
    pair = found.pairs[0]
    gap = (pair.p2["x"] - pair.p1["x"]) % 1.0
    assert gap == pytest.approx(0.5, abs=1e-6)


def test_newton_invert():
    dom = Domain({"x": Interval(-5, 5)})
    point = newton_invert([x**3 + x], [x], [10.0], dom)
    assert point["x"] == pytest.approx(2.0, abs=1e-8)


def test_newton_invert_without_solution():
    dom = Domain({"x": Interval(-5, 5)})
    with pytest.raises(NewtonError):
        newton_invert([x**2 + 1], [x], [0.0], dom, restarts=4)


def test_rk4_exponential():
    end = rk4_path(lambda sv, p: p, 0.0, 1.0, np.array([[1.0], [2.0]]), steps=64)
    assert end[:, 0] == pytest.approx([math.e, 2 * math.e], rel=1e-8)
    with pytest.raises(FlowError):
        rk4_path(lambda sv, p: p, 0.0, 1.0, np.array([[1.0]]), steps=0)


def test_integrate_flow_with_error_estimate():
    result = integrate_flow([x], s, [x], 0.0, 1.0, {"x": 1.0}, steps=64, trajectory=True)
    assert result.point["x"] == pytest.approx(math.e, rel=1e-8)
    assert result.error < 1e-8
    assert result.trajectory and result.trajectory[0]["x"] == pytest.approx(1.0)


def test_integrate_flow_leaving_the_chart():
    dom = Domain({"x": Interval(0, 2)})
    with pytest.raises(FlowError):
        integrate_flow([sp.S.One], s, [x], 0.0, 5.0, {"x": 1.0}, steps=32, dom=dom)
