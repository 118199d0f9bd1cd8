import numpy as np
import pytest

from conftest import x_trace, y_trace
from nltomo.boundary_ops import (
    QuadratureOptions,
    avg_dtn,
    bump_dictionary,
    dtn,
    fourier_dictionary,
    gram_record,
    power_product,
    weighted_power_form,
)
from nltomo.constitutive import ConductivityModel
from nltomo.errors import QuadratureNotConvergedError
from nltomo.forward import ForwardProblem, TraceFunction, project_zero_mean, uniform_assignment
from nltomo.mesh import generate_disk

from test_forward import series_strip_oracle, strip_assignment, strip_trace


def test_dtn_linear_pairing(square16, linear1):
    assign = uniform_assignment(square16, "m")
    f = x_trace(square16)
    flux = dtn(square16, assign, {"m": linear1}, f)
    assert flux.pair(f) == pytest.approx(1.0, abs=1e-12)


def test_dtn_zero_trace(square8, poly11):
    assign = uniform_assignment(square8, "m")
    f = project_zero_mean(square8, np.zeros(len(square8.boundary_nodes)))
    flux = dtn(square8, assign, {"m": poly11}, f)
    np.testing.assert_allclose(flux.values, 0.0, atol=1e-15)


def test_dtn_strip_matches_series_oracle(square32, linear1, linear2):
    s_l, s_r, energy = series_strip_oracle(linear1, linear2)
    assign = strip_assignment(square32)
    f = strip_trace(square32, s_l, s_r)
    flux = dtn(square32, assign, {"left": linear1, "right": linear2}, f)
    # linear laws: power product is twice the energy
    assert flux.pair(f) == pytest.approx(2.0 * energy, abs=1e-10)
    assert flux.pair(f) == pytest.approx(4.0 / 3.0, abs=1e-10)


def test_power_product_examples(square16, linear2, mono_p4):
    assign = uniform_assignment(square16, "m")
    f = x_trace(square16)
    assert power_product(dtn(square16, assign, {"m": mono_p4}, f), f) == pytest.approx(
        1.0, abs=1e-12
    )
    assert power_product(dtn(square16, assign, {"m": linear2}, f), f) == pytest.approx(
        2.0, abs=1e-12
    )
    flux = dtn(square16, assign, {"m": ConductivityModel.linear(1.0)}, f)
    assert power_product(flux, y_trace(square16)) == pytest.approx(0.0, abs=1e-12)


def test_power_product_requires_zero_mean(square8, linear1):
    assign = uniform_assignment(square8, "m")
    flux = dtn(square8, assign, {"m": linear1}, x_trace(square8))
    raw = TraceFunction(square8, np.ones(len(square8.boundary_nodes)), zero_mean=False)
    with pytest.raises(ValueError):
        power_product(flux, raw)


def test_power_product_dimension_mismatch(square8, square16, linear1):
    flux = dtn(square8, uniform_assignment(square8, "m"), {"m": linear1}, x_trace(square8))
    with pytest.raises(ValueError):
        power_product(flux, x_trace(square16))


def test_avg_dtn_monomial_homogeneity(square16):
    # alpha-scaling of a p-homogeneous law integrates to power / p
    model = ConductivityModel.monomial(2.0, 3.0)
    assign = uniform_assignment(square16, "m")
    res = avg_dtn(square16, assign, {"m": model}, x_trace(square16))
    assert res.power == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_avg_dtn_polynomial_unit_gradient(square16, poly11):
    assign = uniform_assignment(square16, "m")
    res = avg_dtn(square16, assign, {"m": poly11}, x_trace(square16))
    assert res.power == pytest.approx(5.0 / 6.0, rel=1e-12)


def test_avg_dtn_power_is_functional_pairing(square16, poly11):
    assign = uniform_assignment(square16, "m")
    f = x_trace(square16)
    res = avg_dtn(square16, assign, {"m": poly11}, f)
    assert res.power == res.functional.pair(f)


def test_avg_dtn_open_rule_never_hits_zero(square8, linear1):
    assign = uniform_assignment(square8, "m")
    res = avg_dtn(square8, assign, {"m": linear1}, x_trace(square8))
    assert np.all(res.report.alphas > 0.0)
    assert np.all(res.report.alphas < 1.0)


def test_avg_dtn_transfer_on_disk_phantom(disk6, poly11, rng):
    # independent oracle: the forward energy of the same trace
    assign = uniform_assignment(disk6, "m")
    modes = fourier_dictionary(disk6, 6)
    coeff = rng.standard_normal(6)
    f = TraceFunction(disk6, sum(c * m.values for c, m in zip(coeff, modes)), zero_mean=True)
    problem = ForwardProblem(disk6, assign, {"m": poly11})
    _, report = problem.solve(f)
    res = avg_dtn(
        disk6, assign, {"m": poly11}, f, quadrature=QuadratureOptions(adaptive=True)
    )
    assert abs(res.power - report.energy) / report.energy < 1e-5


def test_weighted_power_form_linear(square16, linear1):
    assign = uniform_assignment(square16, "m")
    assert weighted_power_form(square16, assign, {"m": linear1}, x_trace(square16)) == (
        pytest.approx(0.5, rel=1e-12)
    )


def test_weighted_power_form_zero(square8, linear1):
    assign = uniform_assignment(square8, "m")
    f = project_zero_mean(square8, np.zeros(len(square8.boundary_nodes)))
    assert weighted_power_form(square8, assign, {"m": linear1}, f) == 0.0


def test_weighted_power_form_matches_avg_dtn(square8, poly11, rng):
    assign = uniform_assignment(square8, "m")
    modes = fourier_dictionary(square8, 4)
    for _ in range(10):
        coeff = rng.standard_normal(4)
        f = TraceFunction(
            square8, sum(c * m.values for c, m in zip(coeff, modes)), zero_mean=True
        )
        res = avg_dtn(square8, assign, {"m": poly11}, f)
        wpf = weighted_power_form(square8, assign, {"m": poly11}, f)
        assert wpf == pytest.approx(res.power, rel=1e-10)


def test_warm_start_does_not_change_node_answers(square8, poly11):
    # node powers from the chained sweep vs. cold solves at the same alphas
    assign = uniform_assignment(square8, "m")
    f = x_trace(square8)
    problem = ForwardProblem(square8, assign, {"m": poly11})
    res = avg_dtn(square8, assign, {"m": poly11}, f)
    for alpha, node_power in zip(res.report.alphas, res.report.node_powers):
        fld, _ = problem.solve(f.scaled(alpha))
        cold = problem.boundary_flux(fld).pair(f)
        assert node_power == pytest.approx(cold, abs=1e-9)


def test_adaptive_quadrature_meets_tolerance(square8):
    # starting from 2 nodes forces at least one doubling round
    model = ConductivityModel.polynomial((1.0, 0.5, 1.0))
    assign = uniform_assignment(square8, "m")
    f = x_trace(square8)
    quad = QuadratureOptions(nodes=2, tol=1e-10, adaptive=True)
    res = avg_dtn(square8, assign, {"m": model}, f, quadrature=quad)
    assert res.report.error_rel <= 1e-10
    assert res.report.nodes > 4


def test_adaptive_quadrature_cap_raises(square8, poly11):
    assign = uniform_assignment(square8, "m")
    f = x_trace(square8)
    quad = QuadratureOptions(nodes=2, tol=1e-30, adaptive=True, max_nodes=8)
    with pytest.raises(QuadratureNotConvergedError) as err:
        avg_dtn(square8, assign, {"m": poly11}, f, quadrature=quad)
    assert err.value.nodes == 8


def test_gram_record_single_excitation(square16, linear1):
    assign = uniform_assignment(square16, "m")
    table = gram_record(square16, assign, {"m": linear1}, [x_trace(square16)])
    assert len(table.rows) == 1
    row = table.rows[0]
    assert row.avg_power == pytest.approx(0.5, rel=1e-12)
    assert row.dtn_pairing == pytest.approx(1.0, abs=1e-12)
    assert not table.failures


def test_gram_record_empty(square8, linear1):
    assign = uniform_assignment(square8, "m")
    table = gram_record(square8, assign, {"m": linear1}, [])
    assert table.rows == []


def test_gram_record_diagonal_matches_energy(disk6, poly11):
    assign = uniform_assignment(disk6, "m")
    modes = fourier_dictionary(disk6, 8)
    problem = ForwardProblem(disk6, assign, {"m": poly11})
    table = gram_record(
        disk6, assign, {"m": poly11}, modes,
        quadrature=QuadratureOptions(adaptive=True),
    )
    diag = table.diagonal_powers()
    assert len(diag) == 8
    for f, power in zip(modes, diag):
        _, report = problem.solve(f)
        assert abs(power - report.energy) / report.energy < 1e-5


def test_gram_record_jobs_invariant(square8, poly11):
    assign = uniform_assignment(square8, "m")
    modes = fourier_dictionary(square8, 3)
    one = gram_record(square8, assign, {"m": poly11}, modes, jobs=1)
    two = gram_record(square8, assign, {"m": poly11}, modes, jobs=3)
    for a, b in zip(one.rows, two.rows):
        assert (a.i, a.j, a.dtn_pairing, a.avg_power) == (b.i, b.j, b.dtn_pairing, b.avg_power)


def test_monomial_power_is_p_times_average(square16):
    model = ConductivityModel.monomial(1.0, 3.0)
    assign = uniform_assignment(square16, "m")
    modes = fourier_dictionary(square16, 4)
    for f in modes:
        flux = dtn(square16, assign, {"m": model}, f)
        res = avg_dtn(square16, assign, {"m": model}, f)
        assert flux.pair(f) == pytest.approx(3.0 * res.power, rel=1e-8)


def test_non_proportionality_witness(square16, poly11):
    # two excitations with different field-magnitude profiles: ratio moves
    assign = strip_assignment(square16)
    models = {"left": poly11, "right": ConductivityModel.polynomial((2.0, 1.0))}
    problem = ForwardProblem(square16, assign, models)
    ratios = []
    for f in fourier_dictionary(square16, 2):
        fld, report = problem.solve(f)
        ratios.append(problem.boundary_flux(fld).pair(f) / report.energy)
    assert abs(ratios[1] - ratios[0]) > 1e-3


def test_fourier_dictionary_properties(square16):
    modes = fourier_dictionary(square16, 8)
    assert len(modes) == 8
    for m in modes:
        assert m.zero_mean
        assert abs(m.weighted_mean()) < 1e-12
    again = fourier_dictionary(square16, 8)
    for a, b in zip(modes, again):
        np.testing.assert_array_equal(a.values, b.values)


def test_fourier_dictionary_on_disk():
    mesh = generate_disk(1.0, 4)
    modes = fourier_dictionary(mesh, 5)
    assert len(modes) == 5
    for m in modes:
        assert abs(m.weighted_mean()) < 1e-12


def test_bump_dictionary_properties(square16):
    modes = bump_dictionary(square16, 8)
    assert len(modes) == 8
    for m in modes:
        assert abs(m.weighted_mean()) < 1e-12
    # localized: each bump has a flat (projected-constant) tail elsewhere
    for m in modes:
        vals = m.values - m.values.min()
        assert (vals < 1e-9).sum() > len(vals) * 0.3


def test_functional_kills_constants(square16, poly11, rng):
    assign = uniform_assignment(square16, "m")
    f = x_trace(square16)
    flux = dtn(square16, assign, {"m": poly11}, f)
    const = TraceFunction(
        square16, np.full(len(square16.boundary_nodes), 3.7), zero_mean=False
    )
    assert abs(flux.pair(const)) <= 1e-12
