import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from nltomo.constitutive import (
    ConductivityModel,
    default_validation_grid,
    export_constitutive_curves,
    h4_envelope,
    validate_hypotheses,
)


def tabulated_from(fn, e_max=5.0, n=41, **kw):
    e = np.linspace(0.0, e_max, n)
    return ConductivityModel.tabulated(e, fn(e), **kw)


ALL_KINDS = [
    ConductivityModel.linear(2.0),
    ConductivityModel.monomial(1.0, 3.0),
    ConductivityModel.monomial(0.5, 4.0),
    ConductivityModel.polynomial((1.0, 1.0)),
    ConductivityModel.polynomial((0.5, 0.0, 2.0)),
    tabulated_from(lambda e: e + e**3, p=4.0),
]


def test_sigma_values():
    assert ConductivityModel.linear(2.0).sigma(7.0) == 2.0
    assert ConductivityModel.monomial(1.0, 4.0).sigma(3.0) == 9.0
    assert ConductivityModel.polynomial((1.0, 1.0)).sigma(2.0) == 3.0


def test_current_density_values():
    assert ConductivityModel.linear(2.0).current_density(3.0) == 6.0
    assert ConductivityModel.monomial(1.0, 3.0).current_density(2.0) == 4.0
    assert ConductivityModel.polynomial((1.0, 1.0)).current_density(2.0) == 6.0


def test_energy_density_values():
    assert ConductivityModel.linear(1.0).energy_density(1.0) == 0.5
    assert ConductivityModel.monomial(1.0, 4.0).energy_density(1.0) == 0.25
    assert ConductivityModel.polynomial((1.0, 1.0)).energy_density(2.0) == pytest.approx(
        14.0 / 3.0, rel=1e-15
    )


def test_negative_field_rejected():
    model = ConductivityModel.linear(1.0)
    for method in (model.sigma, model.current_density, model.energy_density):
        with pytest.raises(ValueError):
            method(-1.0)


@pytest.mark.parametrize("model", ALL_KINDS)
def test_secant_identity(model):
    e = np.geomspace(1e-4, 4.0, 50)
    np.testing.assert_allclose(
        model.sigma(e), model.current_density(e) / e, rtol=1e-12
    )


@pytest.mark.parametrize("model", ALL_KINDS)
def test_vectorized_matches_scalar(model):
    e = np.array([0.0, 0.5, 1.5])
    vec = model.energy_density(e)
    assert vec.shape == (3,)
    for k, v in enumerate(e):
        assert vec[k] == model.energy_density(float(v))


@settings(max_examples=100, deadline=None)
@given(
    e1=st.floats(min_value=1e-6, max_value=4.0),
    e2=st.floats(min_value=1e-6, max_value=4.0),
    pick=st.integers(min_value=0, max_value=len(ALL_KINDS) - 1),
)
def test_chord_bounds(e1, e2, pick):
    # convexity of Q: J(E1)(E2-E1) <= Q(E2)-Q(E1) <= J(E2)(E2-E1) for E1 <= E2
    model = ALL_KINDS[pick]
    lo, hi = sorted((e1, e2))
    j_lo, j_hi = model.current_density(lo), model.current_density(hi)
    q_gap = model.energy_density(hi) - model.energy_density(lo)
    slack = 1e-12 * (1.0 + abs(q_gap) + j_hi * (hi - lo))
    assert 0.0 <= j_lo * (hi - lo) <= q_gap + slack
    assert q_gap <= j_hi * (hi - lo) + slack


@pytest.mark.parametrize("model", ALL_KINDS)
def test_energy_chord_upper_bound(model):
    # Q(E) <= J(E) * E, with Q(0) = 0
    e = np.linspace(0.0, 4.0, 33)
    q = np.asarray(model.energy_density(e))
    j = np.asarray(model.current_density(e))
    assert q[0] == 0.0
    assert np.all(q <= j * e + 1e-12)


@pytest.mark.parametrize(
    "model",
    [
        ConductivityModel.linear(2.0),
        ConductivityModel.monomial(1.0, 2.0),
        ConductivityModel.monomial(1.0, 3.0),
        ConductivityModel.monomial(0.5, 4.0),
        ConductivityModel.polynomial((1.0, 1.0)),
        ConductivityModel.polynomial((0.3, 0.2, 1.5)),
    ],
)
def test_energy_density_matches_quadrature(model):
    # independent oracle: adaptive integration of the current density
    for e_top in (0.5, 1.0, 3.0):
        expected, err = quad(
            lambda s: model.current_density(s), 0.0, e_top, epsabs=1e-14, epsrel=1e-13
        )
        assert model.energy_density(e_top) == pytest.approx(expected, rel=1e-10)


def test_tabulated_energy_matches_quadrature():
    model = tabulated_from(lambda e: 2.0 * e + 0.5 * e**2, p=3.0)
    knots = np.linspace(0.0, 5.0, 41)
    for e_top in (0.7, 2.3, 4.9, 6.5):  # last one exercises the linear extension
        expected, _ = quad(
            lambda s: model.current_density(s), 0.0, e_top,
            epsabs=1e-14, limit=300, points=knots[knots < e_top],
        )
        assert model.energy_density(e_top) == pytest.approx(expected, rel=1e-10)


def test_tabulated_monotone_between_samples():
    model = tabulated_from(lambda e: e + e**3)
    fine = np.linspace(0.0, 7.0, 1200)
    j = model.current_density(fine)
    assert np.all(np.diff(j) > 0)


def test_tabulated_requires_zero_start():
    with pytest.raises(ValueError):
        ConductivityModel.tabulated([0.5, 1.0, 2.0], [0.5, 1.0, 2.0])


def test_polynomial_h5_witness():
    # strong monotonicity with the constructed constant c = theta_N / 2**(N+1)
    model = ConductivityModel.polynomial((1.0, 1.0))
    c = model.strong_monotonicity_c
    assert c == 0.25
    rng = np.random.default_rng(42)
    v1 = rng.uniform(-10.0, 10.0, size=(10_000, 2))
    v2 = rng.uniform(-10.0, 10.0, size=(10_000, 2))
    e1 = np.linalg.norm(v1, axis=1)
    e2 = np.linalg.norm(v2, axis=1)
    lhs = np.einsum(
        "ij,ij->i",
        np.asarray(model.sigma(e2))[:, None] * v2 - np.asarray(model.sigma(e1))[:, None] * v1,
        v2 - v1,
    )
    gap = np.linalg.norm(v2 - v1, axis=1)
    assert np.all(lhs >= c * gap**model.p - 1e-9)


def test_validate_polynomial_all_pass():
    report = validate_hypotheses(ConductivityModel.polynomial((1.0, 1.0)))
    assert report.statuses == {k: "pass" for k in ("H1", "H2", "H3", "H4", "H5")}
    assert report.c_estimate == 0.25
    assert report.admissible


def test_validate_saturating_tabulated_fails_h2():
    # J = E * exp(-E) rises then falls: not a strictly increasing law
    model = tabulated_from(lambda e: e * np.exp(-e))
    report = validate_hypotheses(model, e_grid=np.array([0.5, 1.0, 2.0, 3.0]))
    assert report.statuses["H2"] == "fail"
    assert not report.admissible
    w = report.witnesses["H2"]
    assert w["J_hi"] < w["J_lo"]


def test_validate_subquadratic_monomial_fails_h4():
    report = validate_hypotheses(ConductivityModel.monomial(1.0, 1.5))
    assert report.statuses["H4"] == "fail"


def test_validate_tabulated_h4_not_checked_without_bounds():
    model = tabulated_from(lambda e: e + e**3)
    report = validate_hypotheses(model)
    assert report.statuses["H4"] == "not-checked"
    assert report.statuses["H5"] == "pass"
    assert report.witnesses["H5"]["source"] == "sampled-estimate"


def test_validate_tabulated_h4_with_bounds():
    # J = E + E^3 means sigma = 1 + E^2, p = 4, bounds 1 and 2 work
    model = tabulated_from(lambda e: e + e**3, e_max=8.0, n=161, p=4.0,
                           sigma_lower=1.0, sigma_upper=2.0)
    grid = np.geomspace(1e-3, 5.0, 64)
    report = validate_hypotheses(model, e_grid=grid)
    assert report.statuses["H4"] == "pass"


def test_h4_envelope_polynomial_defaults():
    model = ConductivityModel.polynomial((1.0, 1.0))
    assert model.p == 3.0
    assert model.sigma_lower == 1.0  # leading coefficient
    assert model.sigma_upper == 2.0  # coefficient sum at E0
    grid = default_validation_grid(model)
    lower, upper = h4_envelope(model, grid)
    s = np.asarray(model.sigma(grid))
    assert np.all(s >= lower * (1 - 1e-12))
    assert np.all(s <= upper * (1 + 1e-12))


def test_constructor_validation():
    with pytest.raises(ValueError):
        ConductivityModel.linear(0.0)
    with pytest.raises(ValueError):
        ConductivityModel.monomial(1.0, 0.5)
    with pytest.raises(ValueError):
        ConductivityModel.polynomial(())
    with pytest.raises(ValueError):
        ConductivityModel.polynomial((1.0, -0.5))
    with pytest.raises(ValueError):
        ConductivityModel.polynomial((1.0, 0.0))
    with pytest.raises(ValueError):
        ConductivityModel.linear(1.0, E0=0.0)


def test_export_curves_linear():
    table = export_constitutive_curves(ConductivityModel.linear(1.0), [0.0, 1.0, 2.0])
    np.testing.assert_allclose(table[:, 3], [0.0, 0.5, 2.0])
    assert tuple(table[0]) == (0.0, 1.0, 0.0, 0.0)


def test_export_curves_polynomial_point():
    table = export_constitutive_curves(ConductivityModel.polynomial((1.0, 1.0)), [1.0])
    e, s, j, q = table[0]
    assert (e, s, j) == (1.0, 2.0, 2.0)
    assert q == pytest.approx(5.0 / 6.0, rel=1e-15)


@pytest.mark.parametrize("model", ALL_KINDS)
def test_export_curves_q_monotone(model):
    table = export_constitutive_curves(model, np.linspace(0.0, 3.0, 40))
    assert np.all(np.diff(table[:, 3]) >= 0.0)


def test_export_curves_rejects_bad_grid():
    with pytest.raises(ValueError):
        export_constitutive_curves(ConductivityModel.linear(1.0), [1.0, 0.5])
