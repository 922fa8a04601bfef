import numpy as np
import pytest

from nloch.errors import ConfigInvalid, DomainViolation
from nloch.potentials import (
    PotentialSpec,
    ProliferationSpec,
    eval_F,
    eval_f,
    growth_condition_ok,
    quartic_growth_constants,
    sample_min_f_second,
    stabilization_default,
)

POLY = PotentialSpec(family="polynomial")
LOG = PotentialSpec(family="logarithmic", theta=0.2, theta0=1.0)


def central_diff(fn, r, h):
    return (fn(r + h) - fn(r - h)) / (2 * h)


def test_polynomial_reference_values():
    assert eval_F(POLY, 0.0, 0) == pytest.approx(0.25)
    assert eval_F(POLY, 0.0, 1) == 0.0
    assert eval_F(POLY, 0.0, 2) == pytest.approx(-1.0)
    # double-well root
    assert eval_F(POLY, 1.0, 0) == 0.0
    assert eval_F(POLY, 1.0, 1) == 0.0
    assert eval_F(POLY, 1.0, 2) == pytest.approx(2.0)


def test_logarithmic_reference_values():
    assert eval_F(LOG, 0.0, 1) == 0.0
    assert eval_F(LOG, 0.0, 2) == pytest.approx(0.2 - 1.0)


def test_logarithmic_domain_violation():
    bad = 1.0 - LOG.delta_clip / 2
    with pytest.raises(DomainViolation):
        eval_F(LOG, bad, 0)
    with pytest.raises(DomainViolation):
        eval_F(LOG, np.array([0.0, -bad]), 1)


def test_logarithmic_even_and_concave_peak():
    r = np.linspace(0.05, 0.9, 40)
    assert np.allclose(eval_F(LOG, r, 0), eval_F(LOG, -r, 0), rtol=0, atol=1e-14)
    # F(0) is the max of the concave (negative-curvature) region around 0
    assert eval_F(LOG, 0.0, 0) >= np.max(eval_F(LOG, np.linspace(-0.3, 0.3, 101), 0)) - 1e-14


@pytest.mark.parametrize("spec", [POLY, LOG], ids=["poly", "log"])
@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_derivatives_match_finite_differences(spec, order):
    rng = np.random.default_rng(42)
    rmax = 0.9 if spec.family == "logarithmic" else 1.5
    r = rng.uniform(-rmax, rmax, size=1000)
    h = 1e-5
    fd = central_diff(lambda x: eval_F(spec, x, order - 1), r, h)
    exact = eval_F(spec, r, order)
    scale = np.maximum(np.abs(exact), 1.0)
    assert np.max(np.abs(fd - exact) / scale) <= 1e-6


def test_quartic_growth_pair_on_dense_sample():
    c_f, c_big = quartic_growth_constants(POLY)
    r = np.linspace(-25.0, 25.0, 200001)
    assert np.all(np.abs(eval_F(POLY, r, 2)) <= c_big * (1 + r * r) + 1e-12)
    assert np.all(eval_F(POLY, r, 0) >= c_f * r**4 - c_big - 1e-12)
    assert quartic_growth_constants(LOG) is None


def test_min_second_derivative_and_stabilization():
    assert sample_min_f_second(POLY) == pytest.approx(-1.0, abs=1e-6)
    assert sample_min_f_second(LOG) == pytest.approx(0.2 - 1.0, abs=1e-6)
    assert stabilization_default(POLY) == pytest.approx(1.0, abs=1e-6)


def test_growth_condition_always_holds_for_shipped_families():
    assert growth_condition_ok(POLY, chi_max=10.0, eta_max=10.0)
    assert growth_condition_ok(LOG, chi_max=10.0, eta_max=10.0)


def test_double_obstacle_rejected():
    with pytest.raises(ConfigInvalid):
        PotentialSpec(family="double_obstacle")


def test_logarithmic_parameter_ordering():
    with pytest.raises(ConfigInvalid):
        PotentialSpec(family="logarithmic", theta=1.0, theta0=0.2)


SMOOTH = ProliferationSpec(family="smoothstep", f_max=1.0)
BUMP = ProliferationSpec(family="gaussian_bump", f_max=0.7, width=0.5)


def test_smoothstep_saturation():
    assert eval_f(SMOOTH, -1.0, 0) == 0.0
    assert eval_f(SMOOTH, -3.0, 0) == 0.0
    assert eval_f(SMOOTH, 1.0, 0) == pytest.approx(1.0)
    assert eval_f(SMOOTH, 5.0, 0) == pytest.approx(1.0)
    for r in (-1.0, 1.0, -2.0, 2.0):
        assert eval_f(SMOOTH, r, 1) == 0.0


def test_f_bounds():
    r = np.linspace(-4, 4, 4001)
    for spec in (SMOOTH, BUMP):
        vals = eval_f(spec, r, 0)
        assert np.all(vals >= 0.0)
        assert np.all(vals <= spec.f_max + 1e-15)


@pytest.mark.parametrize("spec", [SMOOTH, BUMP], ids=["smoothstep", "bump"])
@pytest.mark.parametrize("order", [1, 2])
def test_f_derivatives_match_finite_differences(spec, order):
    rng = np.random.default_rng(7)
    r = rng.uniform(-0.95, 0.95, size=1000)
    h = 1e-6
    fd = central_diff(lambda x: eval_f(spec, x, order - 1), r, h)
    exact = eval_f(spec, r, order)
    scale = np.maximum(np.abs(exact), 1.0)
    assert np.max(np.abs(fd - exact) / scale) <= 1e-6


def test_smoothstep_is_c2_at_seams():
    # second derivative approaches 0 at the seams from inside
    eps = 1e-7
    assert abs(eval_f(SMOOTH, -1.0 + eps, 2)) <= 1e-4
    assert abs(eval_f(SMOOTH, 1.0 - eps, 2)) <= 1e-4
