import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairmech.dist import (
    GroupProfile,
    ShiftedUniform,
    Tabulated,
    TruncatedExponential,
    Uniform,
    check_regular,
    inverse_virtual_value,
    make_distribution,
    max_order_cdf,
    sample,
    virtual_value,
)
from fairmech.errors import DomainError, ParameterError, RangeError, RegularityError

SHIPPED = [
    Uniform(0.0, 1.0),
    Uniform(-0.5, 0.5),
    ShiftedUniform(2.0, 1.0),
    TruncatedExponential(2.0, 0.0, 3.0),
    TruncatedExponential(0.5, -1.0, 1.0),
    Tabulated((0.0, 0.4, 1.0), (0.0, 0.3, 1.0)),
]


def test_virtual_value_examples():
    assert virtual_value(Uniform(0, 1), 0.5) == pytest.approx(0.0)
    assert virtual_value(Uniform(-0.5, 0.5), 0.25) == pytest.approx(0.0)
    assert virtual_value(Uniform(0, 1), 1.0) == pytest.approx(1.0)


def test_virtual_value_outside_support():
    with pytest.raises(DomainError):
        virtual_value(Uniform(0, 1), 1.5)


def test_inverse_virtual_value_examples():
    assert inverse_virtual_value(Uniform(0, 1), 0.0) == pytest.approx(0.5)
    assert inverse_virtual_value(Uniform(0, 1), 1.0) == pytest.approx(1.0)
    assert inverse_virtual_value(Uniform(-0.5, 0.5), -0.5) == pytest.approx(0.0)
    with pytest.raises(RangeError):
        inverse_virtual_value(Uniform(0, 1), 2.0)


def test_max_order_cdf():
    assert max_order_cdf(Uniform(0, 1), 2, 0.5) == pytest.approx(0.25)
    d = TruncatedExponential(2.0, 0.0, 3.0)
    assert max_order_cdf(d, 1, 0.7) == pytest.approx(float(d.cdf(0.7)))
    assert max_order_cdf(Uniform(0, 1), 3, 1.0) == 1.0
    with pytest.raises(ParameterError):
        max_order_cdf(Uniform(0, 1), 0, 0.5)


@pytest.mark.parametrize("d", SHIPPED, ids=repr)
def test_shipped_kinds_are_valid(d):
    assert abs(float(d.cdf(d.support_lo))) < 1e-10
    assert abs(float(d.cdf(d.support_hi)) - 1) < 1e-10
    assert check_regular(d)
    grid = np.linspace(d.support_lo, d.support_hi, 200)
    assert np.all(np.diff(d.virtual_value(grid)) >= -1e-9)
    cdf_n = max_order_cdf(d, 3, d.support_lo), max_order_cdf(d, 3, d.support_hi)
    assert cdf_n == pytest.approx((0.0, 1.0), abs=1e-10)


@pytest.mark.parametrize("d", SHIPPED, ids=repr)
def test_virtual_value_round_trip(d):
    for v in np.linspace(d.support_lo, d.support_hi, 41):
        back = inverse_virtual_value(d, virtual_value(d, v))
        assert back == pytest.approx(v, abs=1e-8)


@pytest.mark.parametrize("d", SHIPPED, ids=repr)
def test_ppf_inverts_cdf(d):
    q = np.linspace(0, 1, 33)
    assert np.allclose(d.cdf(d.ppf(q)), q, atol=1e-12)


def test_irregular_distribution_rejected():
    # density falls sharply at 0.5, so the virtual value drops there
    with pytest.raises(RegularityError):
        Tabulated((0.0, 0.5, 1.0), (0.0, 0.95, 1.0))


def test_bad_parameters_rejected():
    with pytest.raises(ParameterError):
        Uniform(1.0, 0.0)
    with pytest.raises(ParameterError):
        TruncatedExponential(-1.0, 0.0, 1.0)
    with pytest.raises(ParameterError):
        Tabulated((0.0, 1.0), (0.0, 0.9))


def test_sampling_reproducible_and_calibrated():
    d = Uniform(0, 1)
    a = sample(d, np.random.default_rng(5))
    b = sample(d, np.random.default_rng(5))
    assert a == b and 0 <= a <= 1
    xs = sample(d, np.random.default_rng(1), 100_000)
    assert abs(xs.mean() - 0.5) < 0.01
    ys = sample(Uniform(-0.5, 0.5), np.random.default_rng(2), 100_000)
    assert abs(np.mean(ys <= 0) - 0.5) < 0.01


def test_make_distribution():
    assert make_distribution("uniform", lo="0", hi="2") == Uniform(0, 2)
    tab = make_distribution("tabulated", x="0 0.4 1", cdf="0, 0.3, 1")
    assert tab.kinks() == (0.4,)
    assert make_distribution("shifted_uniform", width=1, shift=-0.5).support_lo == -0.5
    with pytest.raises(ParameterError):
        make_distribution("pareto", a=1)
    with pytest.raises(ParameterError):
        make_distribution("uniform", lo=0)


def test_group_profile():
    p = GroupProfile.constant(Uniform(0, 1), Uniform(-0.5, 0.5), 3, 2)
    assert p.horizon == 3 and p.round(2) == (Uniform(0, 1), Uniform(-0.5, 0.5))
    assert p.truncated(1).horizon == 1 and p.with_n(1).n == 1
    with pytest.raises(ParameterError):
        GroupProfile((Uniform(0, 1),), (), 1)


@settings(max_examples=40, deadline=None)
@given(
    rate=st.floats(0.1, 5.0),
    lo=st.floats(-2.0, 2.0),
    width=st.floats(0.1, 4.0),
    u=st.floats(0.0, 1.0),
)
def test_truncated_exponential_round_trip(rate, lo, width, u):
    d = TruncatedExponential(rate, lo, lo + width)
    v = lo + u * width
    assert inverse_virtual_value(d, virtual_value(d, v)) == pytest.approx(v, abs=1e-8)
