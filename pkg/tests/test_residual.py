import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from membrane_lab.catalog import CatalogEntry, get_entry, sympy_evaluator
from membrane_lab.grid import Field2, Grid2, sample
from membrane_lab.residual import (EquationId, ResidualError, convergence_ladder, degeneracy,
                                   fields_from_entry, implicit_P_check, is_degenerate, p_of_y,
                                   residual, symmetry_check)

tau, mu, R, t, phi = sp.symbols("tau mu R t phi", positive=True)
zeta = sp.Symbol("zeta", negative=True)
eps = sp.Symbol("epsilon", positive=True)


def _custom(name, role, axes, exprs, grid, params=None):
    return CatalogEntry(name=name, role=role, paper_eq="test", evaluator=sympy_evaluator(axes, exprs),
                        params=params or {}, components=tuple(exprs), default_grid=grid,
                        axis_names=axes)


# ----------------------------------------------------------------- symbolic oracles


@pytest.mark.parametrize("expr", [sp.sqrt(2) * sp.sqrt(mu**2 + eps) / tau,
                                  sp.sqrt(2) * mu / tau + eps * tau**2])
def test_eq7_solves_lightcone_symbolically(expr):
    lhs = sp.diff(expr, tau, 2)
    rhs = expr * sp.diff(expr * sp.diff(expr, mu), mu)
    assert sp.simplify(lhs - rhs) == 0


@pytest.mark.parametrize("name, eps_val", [("eq7-sqrt", 0.3), ("eq7-drop", 0.2)])
def test_eq7_analytic_residual(name, eps_val):
    rep = residual(EquationId.EQ3_lightcone, get_entry(name, epsilon=eps_val))
    assert rep.max_relative <= 1e-10
    assert rep.max_residual <= 1e-10 * 10


def test_eq7_drop_residual_vanishes():
    rep = residual("EQ3", get_entry("eq7-drop", epsilon=0.2))
    assert rep.max_residual < 1e-13


@pytest.mark.parametrize("eq, name, params", [
    ("EQ33_zeta", "eq1-levelset", {"C": 1.0}),
    ("EQ32_tau", "eq37", {"c": 1.0}),
    ("EQ32_tau", "eq38", {}),
    ("EQ33_zeta", "eq48", {}),
    ("EQ33_zeta", "eq2-drop", {}),
    ("EQ33_zeta", "eq49-separable", {}),
    ("EQ33_zeta", "eq51-general", {}),
    ("EQ31_s", "s-hyperboloid", {}),
    ("EQ31_s", "s-levelset", {}),
    ("EQ31_s", "s-eq37", {}),
    ("EQ69_g_graph", "eq66-graph", {}),
    ("EQ68_graph", "eq68-graph-r", {}),
    ("EQ67_system", "eq66-ansatz", {}),
])
def test_catalog_analytic_residuals(eq, name, params):
    assert residual(eq, get_entry(name, **params)).max_relative <= 1e-10


def test_graph_h_machine_zero():
    rep = residual("EQ70", get_entry("eq66-graph"))
    assert rep.max_residual < 1e-14


def test_orthonormal_constraints():
    rep = residual("EQ59_constraints", get_entry("eq60-orthonormal"))
    assert len(rep.parts) == 2 and max(rep.parts) <= 1e-10


def test_r_equation_fd_on_129():
    rep = residual("EQ62_r", get_entry("eq60-orthonormal"), method="fd")
    assert rep.max_residual <= 1e-4
    lad = convergence_ladder("EQ62_r", get_entry("eq60-orthonormal"),
                             Grid2.make(("t", "phi"), (1, 2, 33), (1, 2, 33)))
    assert lad.passed


def test_r_equation_sign_of_z_term():
    # the hyperboloid fixes the sign: r (r'^2 - z'^2) holds, r (r'^2 + z'^2) does not
    u = 8 * phi**2 / t**4
    r = t * sp.sqrt((sp.sqrt(1 + u) + 1) / 2 - 1)
    z = t * sp.sqrt((sp.sqrt(1 + u) + 1) / 2)
    base = sp.diff(r, t, 2) - r**2 * sp.diff(r, phi, 2)
    plus = base - r * (sp.diff(r, phi)**2 + sp.diff(z, phi)**2)
    fixed = base - r * (sp.diff(r, phi)**2 - sp.diff(z, phi)**2)
    pt = {t: sp.Rational(3, 2), phi: sp.Rational(5, 4)}
    assert abs(float(plus.subs(pt))) > 1e-2
    assert abs(float(fixed.subs(pt))) < 1e-14
    assert residual("EQ62_r", get_entry("eq60-orthonormal")).max_relative < 1e-10


def test_wave_equation_in_t_phi():
    e = get_entry("eq60-orthonormal")
    assert residual("EQ64_wave_external", e).max_relative <= 1e-10
    assert residual("EQ57_wave", e).max_relative <= 1e-10
    assert residual("EQ57_wave", e, components={"Z": "t"}).max_residual == 0.0


@pytest.mark.parametrize("name", ["eq7-sqrt", "eq7-drop", "eq8-hyperboloid-R"])
def test_wave_equation_in_tau_mu(name):
    assert residual("EQ57_wave", get_entry(name)).max_relative <= 1e-10


@pytest.mark.parametrize("a, solves", [(1, True), (-2, True), (3, False)])
def test_g_equation_perturbations(a, solves):
    g = Grid2.make(("tau", "zeta"), (1, 2, 33), (-2, -1, 33))
    e = _custom("g-test", "s_of_tau_zeta", ("tau", "zeta"),
                {"g": f"-tau*zeta + epsilon*tau**({a})"}, g, {"epsilon": 0.1})
    rep = residual("EQ53_g", e)
    assert (rep.max_relative < 1e-12) == solves


def test_g_equation_symbolic_oracle():
    a = sp.Symbol("a")

    def res(gf):
        gt, gz = sp.diff(gf, tau), sp.diff(gf, zeta)
        return (sp.diff(gf, tau, 2) * gz**2 + sp.diff(gf, zeta, 2) * gt**2 - 2 * sp.diff(gf, tau, zeta) * gt * gz
                + 4 * (gf * sp.diff(gf, tau, zeta) - gt * gz) + 2 * gf)

    assert sp.simplify(res(tau * zeta)) == 0 and sp.simplify(res(-tau * zeta)) == 0
    assert sp.factor(res(-tau * zeta + eps * tau**a)) == sp.factor(eps * tau**a * (a - 1) * (a + 2))


def test_g_bridge_from_s():
    # g = s^2/2 computed from s partials
    for name in ("s-hyperboloid", "s-levelset", "s-eq37"):
        e = get_entry(name)
        assert residual("EQ53_g", e).max_relative < 1e-10


def test_g_bridge_constant_on_fields():
    ratios = []
    e = get_entry("s-levelset")
    for n in (33, 65):
        grid = Grid2.make(("tau", "zeta"), (1, 2, n), (-2, -1, n))
        s = sample(e, grid)
        r31 = residual("EQ31_s", s).max_residual
        r53 = residual("EQ53_g", {"s": s}).max_residual
        ratios.append(r53 / r31)
    assert all(r < 20 for r in ratios)


def test_eq32_eq33_same_code_path():
    # eq37 with c = 1 and eq1-levelset with C = 4 are the same function with roles swapped
    g32 = get_entry("eq37").default_grid
    a = residual("EQ32_tau", get_entry("eq37", c=1.0))
    b = residual("EQ33_zeta", get_entry("eq1-levelset", C=4.0), g32.renamed(("tau", "R")))
    assert np.array_equal(a.field, b.field)


# ----------------------------------------------------------------- errors and roles


def test_role_mismatch():
    with pytest.raises(ResidualError):
        residual("EQ31", get_entry("eq8-hyperboloid"))
    with pytest.raises(ResidualError):
        residual("EQ3", get_entry("eq37"))
    with pytest.raises(ResidualError):
        residual("EQ99", get_entry("eq37"))


def test_singular_locus_rejected():
    g = Grid2.make(("tau", "R"), (-1, 1, 9), (1, 2, 9))
    with pytest.raises(ResidualError):
        residual("EQ33", get_entry("eq8-hyperboloid"), g)


def test_report_json():
    rep = residual("EQ32", get_entry("eq37"))
    data = json.loads(rep.to_json())
    for key in ("eq", "entry", "grid", "max_residual", "l2_residual", "degenerate", "h_refinement_ratio"):
        assert key in data
    assert data["max_residual"] >= 0 and data["l2_residual"] >= 0


def test_fd_fields_and_ladder():
    e = get_entry("eq7-sqrt")
    coarse = Grid2.make(("tau", "mu"), (1, 2, 33), (1, 2, 33))
    lad = convergence_ladder("EQ3", e, coarse)
    assert lad.passed and not lad.exact
    assert all(3.2 <= r <= 4.8 for r in lad.ratios)
    lad2 = convergence_ladder("EQ3", None, coarse, sampler=lambda g: fields_from_entry(e, ["R"])(g)["R"])
    assert lad2.ratios == pytest.approx(lad.ratios, rel=1e-10)


# ----------------------------------------------------------------- degeneracy


def test_degeneracy_hyperboloid_oracle():
    z = -R**2 / (2 * tau)
    indicator = sp.simplify(sp.diff(z, R)**2 + 2 * sp.diff(z, tau))
    assert sp.simplify(indicator - 2 * R**2 / tau**2) == 0
    e = get_entry("eq8-hyperboloid")
    T, Rv = e.default_grid.mesh()
    ind = degeneracy(e)
    assert np.allclose(ind.values, 2 * Rv**2 / T**2, rtol=1e-14)
    assert not is_degenerate(e)
    assert not residual("EQ33", e).degenerate


def test_degeneracy_null_shift():
    e = get_entry("null-shift")
    assert np.max(np.abs(degeneracy(e).values)) < 1e-14
    rep = residual("EQ33", e)
    assert rep.max_relative < 1e-10 and rep.degenerate


def test_degeneracy_graph():
    assert residual("EQ70", get_entry("graph-null")).degenerate
    assert not residual("EQ70", get_entry("eq66-graph")).degenerate
    assert residual("EQ68", get_entry("graph-null-r")).degenerate
    assert not residual("EQ68", get_entry("eq68-graph-r")).degenerate


def test_degeneracy_role_mismatch():
    with pytest.raises(ResidualError):
        degeneracy(get_entry("eq37"), role="R_of_tau_mu")


# ----------------------------------------------------------------- symmetries


def test_scaling_symmetry():
    rep = symmetry_check("EQ33", get_entry("eq8-hyperboloid"), {"alpha": 2.0, "gamma": 3.0})
    assert rep.max_relative <= 1e-10


@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0))
def test_scaling_symmetry_property(alpha, gamma):
    for eq, name in (("EQ33", "eq48"), ("EQ32", "eq37")):
        e = get_entry(name)
        g = Grid2.make(e.axes, (1, 2, 17), (1, 2, 17))
        assert symmetry_check(eq, e, {"alpha": alpha, "gamma": gamma}, g).max_relative <= 1e-10


def test_s_form_symmetry():
    rep = symmetry_check("EQ31", get_entry("s-hyperboloid"), {"e": 2.0, "a": 1.0, "b": 0.25})
    assert rep.max_relative <= 1e-10


@given(st.floats(0.5, 2.0), st.floats(0.5, 2.0))
def test_s_form_symmetry_property(a, b):
    e = 1 / np.sqrt(a * b)
    g = Grid2.make(("tau", "zeta"), (1, 2, 17), (-2, -1, 17))
    rep = symmetry_check("EQ31", get_entry("s-levelset"), {"e": e, "a": a, "b": b}, g)
    assert rep.max_relative <= 1e-10


def test_identity_symmetry_report_identical():
    e = get_entry("eq48")
    a = symmetry_check("EQ33", e, {})
    b = residual("EQ33", e)
    assert a.as_dict() == b.as_dict()


def test_symmetry_constraint_enforced():
    with pytest.raises(ResidualError):
        symmetry_check("EQ31", get_entry("s-hyperboloid"), {"e": 2.0, "a": 1.0, "b": 1.0})


# ----------------------------------------------------------------- implicit P(y)


def test_p_at_one():
    P = sp.Symbol("P", positive=True)
    root = sp.solve(P**4 + P**2 - 2, P)
    assert root == [1]
    assert p_of_y(1.0) == pytest.approx(1.0)
    y = sp.Symbol("y", positive=True)
    slope = sp.diff(sp.sqrt((sp.sqrt(1 + 8 * y**2) - 1) / 2), y).subs(y, 1)
    assert sp.nsimplify(slope) == sp.Rational(2, 3)


def test_p_limit_and_check():
    assert p_of_y(1e-8) < 1e-7
    assert implicit_P_check(0.05, 5.0) <= 1e-10
    with pytest.raises(ResidualError):
        implicit_P_check(0.0, 1.0)
