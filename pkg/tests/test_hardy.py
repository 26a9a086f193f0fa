from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torevac.boundary_data import INNER, OUTER, TWO_PI, ComplexTrace, Conductivity, FunctionArc
from torevac.errors import BepError, SaturationError
from torevac.hardy import (
    MAX_DEGREE,
    AnnulusGeometry,
    BoundaryPartition,
    LaurentModel,
    _BepSystem,
    _misfit,
    arc_quadrature,
    basis_trace,
    cross_validate,
    evaluate_interior,
    gram_operators,
    inner_prediction,
    l2_norm,
    load_laurent,
    omega_transform_residual,
    project_hardy,
    read_bep_report,
    real_part_norm_constant,
    save_laurent,
    solve_bep,
    write_bep_report,
)

GEOM = AnnulusGeometry((2.42, 0.0), 0.6, 0.92)
FULL = ((OUTER, (0.0, TWO_PI)), (INNER, (0.0, TWO_PI)))


def zeta_power(n, geometry=GEOM):
    """Closed-form trace of ``zeta^n`` as a function of ``(tag, theta)``."""

    def f(tag, th):
        rho = geometry.radius(tag) / geometry.rho_outer
        return rho**n * np.exp(1j * n * th)

    return f


def full_trace(f):
    return ComplexTrace(tuple(FunctionArc(tag, (0.0, TWO_PI), lambda th, tag=tag: f(tag, th)) for tag in (OUTER, INNER)))


def arc_trace(f, a, b, tag=OUTER):
    return ComplexTrace((FunctionArc(tag, (a, b), lambda th: f(tag, th)),))


def random_model(rng, degree, geometry=GEOM, b0=0.0):
    a = rng.normal(size=2 * degree + 1) + 1j * rng.normal(size=2 * degree + 1)
    return LaurentModel(geometry, a, b0)


# ----------------------------------------------------------------------------
# basis and geometry
# ----------------------------------------------------------------------------


def test_basis_examples():
    assert basis_trace(0, GEOM, OUTER, 1.3) == 1.0
    assert basis_trace(1, GEOM, OUTER, math.pi / 2) == pytest.approx(1j, abs=1e-16)
    half = AnnulusGeometry((0.0, 0.0), 0.5, 1.0)
    assert basis_trace(-2, half, INNER, 0.0) == pytest.approx(4.0)
    assert basis_trace(0, half, INNER, 1.0, log_element=True) == pytest.approx(math.log(0.5) + 1j)


def test_basis_degree_cap():
    with pytest.raises(ValueError):
        basis_trace(MAX_DEGREE + 1, GEOM, OUTER, 0.0)


def test_geometry_validation():
    with pytest.raises(ValueError):
        AnnulusGeometry((0, 0), 1.0, 1.0)
    with pytest.raises(ValueError):
        GEOM.radius("MIDDLE")


def test_model_validation_and_accessors():
    with pytest.raises(ValueError):
        LaurentModel(GEOM, np.zeros(4))
    with pytest.raises(ValueError):
        LaurentModel(GEOM, np.array([np.nan, 0, 0]))
    m = LaurentModel(GEOM, [1, 2j, 3])
    assert m.degree == 1 and m.coefficient(-1) == 1 and m.coefficient(1) == 3


def test_laurent_round_trip(tmp_path):
    m = random_model(np.random.default_rng(1), 4, b0=0.37)
    save_laurent(m, tmp_path / "m.csv")
    back = load_laurent(tmp_path / "m.csv")
    assert np.array_equal(back.coeffs, m.coeffs) and back.log_coeff == m.log_coeff
    assert back.geometry == m.geometry
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[1] == "n,re,im" and text[-1].startswith("log,")


def test_multivalued_log_term():
    m = LaurentModel(GEOM, [0.0], 0.5)
    th = np.array([0.0, TWO_PI])
    tr = m.trace(OUTER, th)
    assert tr.real[0] == tr.real[1]
    assert tr.imag[1] - tr.imag[0] == pytest.approx(0.5 * TWO_PI)
    assert np.allclose(m.single_valued_trace(OUTER, th).imag, 0.0)


# ----------------------------------------------------------------------------
# partitions and Gram operators
# ----------------------------------------------------------------------------


def test_partition_complement():
    p = BoundaryPartition.from_I(((OUTER, (0.0, 1.5 * math.pi)),))
    assert p.arcs_J == ((OUTER, (1.5 * math.pi, TWO_PI)), (INNER, (0.0, TWO_PI)))
    with pytest.raises(BepError):
        BoundaryPartition.from_I(FULL)
    held = BoundaryPartition.from_I(((OUTER, (0.0, 1.0)),), held=((OUTER, (1.0, 2.0)),))
    assert held.arcs_J[0] == (OUTER, (2.0, TWO_PI))


def test_quadrature_integrates_trig():
    tags, th, w = arc_quadrature(((OUTER, (0.3, 2.1)),))
    assert w.sum() == pytest.approx(1.8 / TWO_PI, rel=1e-14)
    assert np.sum(w * np.cos(5 * th)) == pytest.approx((math.sin(10.5) - math.sin(1.5)) / 5 / TWO_PI, abs=1e-14)


def test_gram_full_circles_orthogonal():
    N = 6
    part = BoundaryPartition.from_I(((OUTER, (0.0, TWO_PI)), (INNER, (0.0, 1.0))))
    tags, th, w = arc_quadrature(FULL)
    n = np.arange(-N, N + 1)
    rho = np.where(tags == OUTER, 1.0, GEOM.ratio)
    B = rho[:, None] ** n * np.exp(1j * np.outer(th, n))
    G = (B.conj().T * w) @ B
    expected = 1.0 + GEOM.ratio ** (2 * n)
    assert np.allclose(np.diag(G).real, expected, rtol=1e-13)
    assert np.max(np.abs(G - np.diag(np.diag(G)))) <= 1e-12
    ops = gram_operators(part, N, GEOM)
    assert np.max(np.abs(ops.G_I - ops.G_I.conj().T)) <= 1e-12
    assert np.max(np.abs(ops.G_J_real - ops.G_J_real.T)) <= 1e-12
    assert np.min(np.linalg.eigvalsh(ops.G_J_real)) >= -1e-12


def test_gram_refinement_oracle():
    arcs = ((OUTER, (0.0, math.pi)),)
    coarse = gram_operators(BoundaryPartition.from_I(arcs), 1, GEOM)
    fine = gram_operators(BoundaryPartition.from_I(arcs, max_panel=math.pi / 64, nodes_per_panel=16), 1, GEOM)
    assert np.max(np.abs(coarse.G_I - fine.G_I)) <= 1e-8
    assert np.max(np.abs(coarse.G_J_real - fine.G_J_real)) <= 1e-8


def test_gram_degenerate_quadrature():
    part = BoundaryPartition.from_I(())
    with pytest.raises(BepError):
        gram_operators(part, 2, GEOM)


# ----------------------------------------------------------------------------
# projection
# ----------------------------------------------------------------------------


def test_project_fixes_hardy_element():
    m = project_hardy(full_trace(zeta_power(3)), 5, GEOM)
    a = m.coeffs.copy()
    assert abs(m.coefficient(3) - 1.0) <= 1e-10
    a[3 + 5] = 0
    assert np.max(np.abs(a)) <= 1e-10


def test_project_zero():
    m = project_hardy(full_trace(lambda tag, th: 0 * th), 4, GEOM)
    assert np.all(m.coeffs == 0)


def test_project_conjugate_matches_normal_equations():
    def conj_zeta(tag, th):
        return np.conj(zeta_power(1)(tag, th))

    N = 8
    m = project_hardy(full_trace(conj_zeta), N, GEOM)
    # dense normal equations on an independent uniform grid (trapezoid is exact for trig integrands)
    th = TWO_PI * np.arange(400) / 400
    n = np.arange(-N, N + 1)
    rows, rhs = [], []
    for tag in (OUTER, INNER):
        rho = GEOM.radius(tag) / GEOM.rho_outer
        rows.append(rho**n * np.exp(1j * np.outer(th, n)))
        rhs.append(conj_zeta(tag, th))
    B, F = np.vstack(rows), np.concatenate(rhs)
    ref = np.linalg.solve(B.conj().T @ B, B.conj().T @ F)
    assert np.max(np.abs(m.coeffs - ref)) <= 1e-8
    resid = _misfit(m, full_trace(conj_zeta), FULL)
    assert resid > 0.1


def test_project_needs_full_boundary():
    with pytest.raises(BepError):
        project_hardy(arc_trace(zeta_power(1), 0.0, 1.0), 2, GEOM)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 8), st.integers(0, 2**31 - 1))
def test_projection_idempotent_and_self_adjoint(N, seed):
    rng = np.random.default_rng(seed)
    k = np.arange(-10, 11)
    cf = rng.normal(size=(2, k.size)) + 1j * rng.normal(size=(2, k.size))
    cg = rng.normal(size=(2, k.size)) + 1j * rng.normal(size=(2, k.size))

    def make(c):
        return lambda tag, th: np.exp(1j * np.outer(th, k)) @ c[0 if tag == OUTER else 1]

    f, g = make(cf), make(cg)
    Pf = project_hardy(full_trace(f), N, GEOM)
    Pg = project_hardy(full_trace(g), N, GEOM)
    again = project_hardy(Pf.as_trace(), N, GEOM)
    assert np.max(np.abs(again.coeffs - Pf.coeffs)) <= 1e-10 * max(1.0, np.max(np.abs(Pf.coeffs)))
    tags, th, w = arc_quadrature(FULL)

    def values(fn, model=None):
        out = np.empty(th.shape, complex)
        for tag in (OUTER, INNER):
            m = tags == tag
            out[m] = model.trace(tag, th[m]) if model is not None else fn(tag, th[m])
        return out

    lhs = np.sum(w * values(None, Pf) * np.conj(values(g)))
    rhs = np.sum(w * values(f) * np.conj(values(None, Pg)))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


# ----------------------------------------------------------------------------
# bounded extremal problem
# ----------------------------------------------------------------------------

I_ARC = (0.0, 1.5 * math.pi)


def test_bep_feasible_exact_datum():
    f = zeta_power(1)
    sol = solve_bep(arc_trace(f, *I_ARC), lambda tag, th: f(tag, th).real, 0.01, 4, GEOM)
    assert sol.error_I <= 1e-10
    assert sol.lam == -1.0 and not sol.saturated


def test_bep_saturates_half_bound():
    f = zeta_power(1)
    trace = arc_trace(f, *I_ARC)
    unc = solve_bep(trace, 0.0, 1e9, 4, GEOM)
    M = 0.5 * unc.constraint_J
    sol = solve_bep(trace, 0.0, M, 4, GEOM)
    assert sol.lam > 0
    assert abs(sol.constraint_J - M) <= 1e-8 * M
    assert sol.error_I > unc.error_I


def test_bep_unreachable_bound():
    f = zeta_power(2)
    trace = arc_trace(f, *I_ARC)
    with pytest.raises(SaturationError):
        solve_bep(trace, lambda tag, th: 5 + np.cos(7 * th), 1e-9, 1, GEOM)


def test_bep_rejects_bad_bound():
    with pytest.raises(ValueError):
        solve_bep(arc_trace(zeta_power(1), *I_ARC), 0.0, -1.0, 2, GEOM)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_lambda_monotonicity(N, seed):
    rng = np.random.default_rng(seed)
    k = np.arange(-7, 8)
    c = rng.normal(size=k.size) + 1j * rng.normal(size=k.size)
    trace = arc_trace(lambda tag, th: np.exp(1j * np.outer(th, k)) @ c, 0.0, float(rng.uniform(2, 5)))
    system = _BepSystem(trace, float(rng.normal()), N, GEOM, 0.0)
    cons = np.array([system.constraint(system.coefficients(lam)) for lam in np.logspace(-6, 6, 40)])
    assert np.all(np.diff(cons) <= 1e-12 * cons[0])
    # strict decrease wherever the curve is not already flat at its floor
    active = cons[:-1] - cons[-1] > 1e-8 * cons[0]
    assert np.all(np.diff(cons)[active] < 0)


def test_nested_space_monotonicity():
    trace = arc_trace(lambda tag, th: np.exp(np.cos(th)) + 1j * np.sin(np.sin(2 * th)), *I_ARC)
    errs = [solve_bep(trace, 0.0, 1e12, N, GEOM).error_I for N in range(17)]
    assert np.all(np.diff(errs) <= 1e-12)


def test_norm_equivalence_constant():
    kappas = [real_part_norm_constant(GEOM, N) for N in (4, 8, 12)]
    assert np.all(np.diff(kappas) <= 1e-12)
    kappa = kappas[1]
    assert kappa > 0.05
    rng = np.random.default_rng(7)
    for _ in range(30):
        N = int(rng.integers(0, 9))
        a = rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)
        a[N] = a[N].real
        m = LaurentModel(GEOM, a, float(rng.normal()))
        full = l2_norm(m, FULL, single_valued=False)
        re = l2_norm(m, FULL, real_part=True, single_valued=False)
        assert re >= (kappa - 1e-9) * full


# ----------------------------------------------------------------------------
# cross-validation
# ----------------------------------------------------------------------------


def test_cross_validate_exact_trace():
    m = random_model(np.random.default_rng(5), 3)
    trace = arc_trace(lambda tag, th: m.trace(tag, th), *I_ARC)
    M2, sol = cross_validate(trace, ((0.0, math.pi), (math.pi, 1.5 * math.pi)), 0.0, 3, GEOM)
    assert M2 > 0
    assert _misfit(sol.model, trace, ((OUTER, (math.pi, 1.5 * math.pi)),)) <= 1e-8


def test_cross_validate_noisy_beats_unconstrained():
    rng = np.random.default_rng(11)
    m = random_model(rng, 4)
    k = np.arange(-12, 13)
    noise = 0.02 * (rng.normal(size=k.size) + 1j * rng.normal(size=k.size))

    def noisy(tag, th):
        return m.trace(tag, th) + np.exp(1j * np.outer(th, k)) @ noise

    trace = arc_trace(noisy, *I_ARC)
    I1, I2 = ((0.0, 0.6 * math.pi), (0.9 * math.pi, 1.5 * math.pi)), (0.6 * math.pi, 0.9 * math.pi)
    val = ((OUTER, I2),)
    N = 10
    M2, _ = cross_validate(trace, (I1, I2), 0.0, N, GEOM)
    train = ComplexTrace(tuple(arc for a, b in I1 for arc in trace.restrict(OUTER, a, b).arcs))
    part = BoundaryPartition.from_I(tuple((OUTER, iv) for iv in I1), held=val)
    system = _BepSystem(train, 0.0, N, GEOM, 0.0, part)
    best = system.solve(M2)
    unc = system.solution(system.coefficients(0.0), -1.0, np.inf)
    assert _misfit(best.model, trace, val) <= _misfit(unc.model, trace, val)
    # log-grid scan oracle: the returned bound is no worse than any grid point, up to the search tolerance
    c_unc = unc.constraint_J
    scan = []
    for M in np.geomspace(1e-3 * c_unc, c_unc, 40):
        try:
            scan.append(_misfit(system.solve(M).model, trace, val))
        except SaturationError:
            pass
    assert _misfit(best.model, trace, val) <= min(scan) * (1 + 1e-3)


def test_cross_validate_swap_symmetry():
    m = random_model(np.random.default_rng(2), 3)
    trace = arc_trace(lambda tag, th: m.trace(tag, th), 0.0, math.pi)
    a = (0.0, 0.5 * math.pi)
    b = (0.5 * math.pi, math.pi)
    _, s1 = cross_validate(trace, (a, b), 0.0, 3, GEOM)
    _, s2 = cross_validate(trace, (b, a), 0.0, 3, GEOM)
    assert np.max(np.abs(s1.model.coeffs - s2.model.coeffs)) <= 1e-6


def test_cross_validate_flat_curve(caplog):
    trace = arc_trace(lambda tag, th: 0 * th + 0j, *I_ARC)
    with caplog.at_level(logging.WARNING):
        M2, sol = cross_validate(trace, ((0.0, 1.0), (1.0, 2.0)), 0.0, 2, GEOM)
    assert "flat" in caplog.text
    assert M2 > 0 and np.all(np.isfinite(sol.model.coeffs))


@pytest.mark.parametrize("split", [((0.0, 1.0), (2.0, 2.0)), ((0.0, 2.0), (1.0, 3.0))])
def test_cross_validate_bad_split(split):
    trace = arc_trace(zeta_power(1), *I_ARC)
    with pytest.raises(ValueError):
        cross_validate(trace, split, 0.0, 2, GEOM)


def test_bep_report_round_trip(tmp_path):
    trace = arc_trace(zeta_power(1), *I_ARC)
    sols = [solve_bep(trace, 0.0, M, 3, GEOM) for M in (1e-3, 10.0)]
    write_bep_report(sols, tmp_path / "r.csv")
    rows = read_bep_report(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "N,lambda,error_I,constraint_J,M"
    assert rows[0]["lambda"] > 0 and rows[0]["constraint_J"] == pytest.approx(1e-3, rel=1e-8)
    assert rows[1]["lambda"] == -1.0
    assert rows[0]["error_I"] == sols[0].error_I


# ----------------------------------------------------------------------------
# interior evaluation and diagnostics
# ----------------------------------------------------------------------------


def test_interior_constant_and_linear():
    p = np.array([2.42 + 0.8, 0.0])
    f, g = evaluate_interior(LaurentModel(GEOM, [0, 5, 0]), p)
    assert f == 5 and np.all(g == 0)
    f, g = evaluate_interior(LaurentModel(GEOM, [0, 0, 1]), p)
    assert f == pytest.approx(0.8 / 0.92)
    assert np.allclose(g, [1 / 0.92, 0.0])


def test_interior_rejects_outside():
    with pytest.raises(ValueError):
        evaluate_interior(LaurentModel(GEOM, [1.0]), [2.42 + 0.95, 0.0])
    with pytest.raises(ValueError):
        evaluate_interior(LaurentModel(GEOM, [1.0]), [2.42, 0.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_interior_gradient_fd(N, seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, N, b0=float(rng.normal()))
    rad = rng.uniform(0.65, 0.87, 5)
    ang = rng.uniform(0, TWO_PI, 5)
    pts = np.column_stack([2.42 + rad * np.cos(ang), rad * np.sin(ang)])
    _, g = evaluate_interior(m, pts)
    e = 1e-6
    fd = np.column_stack([
        (evaluate_interior(m, pts + [e, 0])[0].real - evaluate_interior(m, pts - [e, 0])[0].real) / (2 * e),
        (evaluate_interior(m, pts + [0, e])[0].real - evaluate_interior(m, pts - [0, e])[0].real) / (2 * e),
    ])
    assert np.all(np.abs(fd - g) <= 1e-6 * np.maximum(1.0, np.abs(g)).max())


def test_inner_prediction_matches_analytic():
    m = random_model(np.random.default_rng(3), 4, b0=0.2)
    th = np.linspace(0, TWO_PI, 50)
    u, du = inner_prediction(m, th)
    e_r = np.column_stack([np.cos(th), np.sin(th)])

    def radial(d):
        _, g = evaluate_interior(m, np.array([2.42, 0.0]) + (0.6 + d) * e_r)
        return np.sum(g * e_r, axis=1)

    # linear extrapolation of the radial derivative onto the inner circle
    limit = 2 * radial(1e-6) - radial(2e-6)
    assert np.allclose(u, m.trace(INNER, th).real)
    assert np.allclose(du, limit, atol=1e-6)


def test_omega_residual_holomorphic():
    pts = np.array([[0.5, 0.2], [1.1, -0.4], [0.9, 0.9]])
    res = omega_transform_residual(lambda r, z: r**2 - z**2, lambda r, z: 2 * r * z, Conductivity.constant(1.0), pts)
    assert res <= 1e-8


def test_omega_residual_inverse_r():
    pts = np.array([[0.8, 0.2], [1.1, -0.4], [1.3, 0.5]])
    sigma = Conductivity.inverse_r()
    ok = omega_transform_residual(lambda r, z: r**2, lambda r, z: 2 * z, sigma, pts)
    bad = omega_transform_residual(lambda r, z: r**2, lambda r, z: 0 * z, sigma, pts)
    assert ok <= 1e-6
    assert bad > 0.1
