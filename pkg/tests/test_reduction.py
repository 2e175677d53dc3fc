from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import assume, given, strategies as st

from membrane_lab.catalog import CatalogEntry, get_entry, sympy_evaluator
from membrane_lab.grid import Field2, Grid2
from membrane_lab.reduction import (BlowUpError, Family, ProfileSamples, ProfileState, ReductionError,
                                    ReductionSpec, SingularPointError, abel_round_trip, analytic_profile,
                                    ansatz_coefficients, ansatz_conditions, ansatz_entry_expr,
                                    integrate_profile, integrate_separable, lift_profile,
                                    linear_part_condition, linear_part_exponents, log_form_residual,
                                    ode_residual, separable_family, to_abel)
from membrane_lab.residual import convergence_ladder, residual

SQ2 = np.sqrt(2.0)


# ----------------------------------------------------------------- specs


def test_t_constraint():
    ReductionSpec.T(-3, 1)
    with pytest.raises(ReductionError):
        ReductionSpec.T(1, 1)


def test_exponents_exact():
    with pytest.raises(TypeError):
        ReductionSpec.F(1.5, 0)
    s = ReductionSpec.H("1/2", -1)
    assert s.p == Fraction(1, 2) and s.family is Family.H_profile
    assert s.to_dict() == {"family": "H_profile", "p": "1/2", "q": "-1"}


# ----------------------------------------------------------------- ODE residuals


def test_f_profile_substitution_oracle():
    # R = (mu/tau) f(tau^a mu^b) solves the light-cone equation iff f solves the reduced ODE
    tau, mu, x = sp.symbols("tau mu x", positive=True)
    for (a, b), f in (((0, -2), sp.sqrt(2) * sp.sqrt(1 + x / 2)), ((3, -1), sp.sqrt(2) + x / 2)):
        Rx = (mu / tau) * f.subs(x, tau**a * mu**b)
        pde = sp.diff(Rx, tau, 2) - Rx * sp.diff(Rx * sp.diff(Rx, mu), mu)
        assert sp.simplify(pde) == 0


@pytest.mark.parametrize("spec, expr, lo, hi", [
    (ReductionSpec.F(0, -2), "sqrt(2)*sqrt(1+eps*x)", 0.25, 1.0),
    (ReductionSpec.F(3, -1), "sqrt(2)+eps*x", 0.0625, 1.0),
])
def test_f_profiles(spec, expr, lo, hi):
    p = analytic_profile(expr, np.linspace(lo, hi, 101), eps=0.5)
    assert ode_residual(spec, p) <= 1e-8


@pytest.mark.parametrize("spec, expr", [
    (ReductionSpec.T(-3, 1), "c/2 - q**2/2"),
    (ReductionSpec.T(5, -3), "c/2 + q**2/2"),
])
def test_t_profiles(spec, expr):
    p = analytic_profile(expr, np.linspace(0.5, 2.0, 64), variable="q", c=1.3)
    assert ode_residual(spec, p) < 1e-13


def test_h_profile():
    d = 0.7
    p = analytic_profile("1 + d*z + d**2/12*z**2", np.linspace(0.1, 1.0, 64), variable="z", d=d)
    assert ode_residual(ReductionSpec.H(2, -1), p) < 1e-13
    wrong = analytic_profile("1 + d*z + d**2/10*z**2", np.linspace(0.1, 1.0, 64), variable="z", d=d)
    assert ode_residual(ReductionSpec.H(2, -1), wrong) > 1e-3


def test_graph_profile():
    p = analytic_profile("1 - x**2", np.linspace(0, 0.9, 64))
    assert ode_residual(ReductionSpec.graph(), p) < 1e-14
    assert ode_residual(ReductionSpec.graph(), get_entry("eq66-graph")) < 1e-13


def test_fd_residual_and_nonuniform():
    x = np.linspace(0.25, 1.0, 201)
    p = analytic_profile("sqrt(2)*sqrt(1+x)", x)
    fd = ProfileSamples(p.x, p.value, p.derivative)
    assert ode_residual(ReductionSpec.F(0, -2), fd) < 1e-4
    xs = x**2
    bad = ProfileSamples(xs, p.value, p.derivative)
    with pytest.raises(ReductionError):
        ode_residual(ReductionSpec.F(0, -2), bad)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_singular_profile_rejected():
    p = analytic_profile("1/x", np.linspace(0.0, 1.0, 11))
    with pytest.raises(SingularPointError):
        ode_residual(ReductionSpec.F(1, 1), p)


@given(st.integers(-4, 4), st.integers(-4, 4), st.floats(0.1, 1.0))
def test_log_form_equivalence(a, b, c):
    spec = ReductionSpec.F(a, b)
    x = np.linspace(0.5, 2.0, 17)
    p = analytic_profile("1 + c*x**2 + sin(x)", x, c=c)
    direct = spec.residual(x, p.value, p.derivative, p.second)
    g1 = x * p.derivative
    g2 = x * x * p.second + x * p.derivative
    logf = log_form_residual(spec, np.log(x), p.value, g1, g2)
    scale = np.maximum(1.0, np.abs(direct))
    assert np.max(np.abs(direct - logf) / scale) <= 1e-8


def test_log_form_family_check():
    with pytest.raises(ReductionError):
        log_form_residual(ReductionSpec.graph(), 0, 1, 0, 0)


# ----------------------------------------------------------------- Abel form


def test_abel_f0_root():
    for spec in (ReductionSpec.F(3, -1), ReductionSpec.F(2, 0), ReductionSpec.F(-1, "1/3")):
        assert to_abel(spec).F0(SQ2) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("a", [2, -3])
def test_abel_constant_f1(a):
    g = np.linspace(0.5, 3.0, 9)
    F1 = to_abel(ReductionSpec.F(a, 0)).F1(g)
    assert np.allclose(F1, 3 * np.sign(a), rtol=1e-15)


def test_abel_coefficients_symbolic():
    g, a, b = sp.symbols("g a b", real=True)
    Q = a**2 - b**2 * g**2
    F1 = 3 * (a + b * g**2) / sp.sqrt(Q)
    form = to_abel(ReductionSpec.F(3, -1))
    gv = np.linspace(0.5, 2.5, 7)
    expect = sp.lambdify(g, F1.subs({a: 3, b: -1}), "numpy")(gv)
    assert np.allclose(form.F1(gv), expect, rtol=1e-14)
    # the canonical form follows from the second-kind form under w = sqrt(Q) G
    G = sp.Function("G")(g)
    f2, f1, f0 = b**2 * g / Q, 3 * (b * g**2 + a) / Q, (g**3 - 2 * g) / Q
    w = sp.sqrt(Q) * G
    lhs = w * sp.diff(w, g)
    rhs = F1 * w + g * (g**2 - 2)
    sub = lhs.subs(sp.Derivative(G, g), (f2 * G**2 + f1 * G + f0) / G)
    assert sp.simplify(sub - rhs) == 0


def test_abel_domain():
    with pytest.raises(ReductionError):
        to_abel(ReductionSpec.F(0, -2), (1.0, 2.0))
    with pytest.raises(ReductionError):
        to_abel(ReductionSpec.graph())


def test_abel_round_trip_closes():
    rt = abel_round_trip(ReductionSpec.F(3, -1), lambda x: (SQ2 + x, np.ones_like(x)), (0.2, 1.4))
    assert rt.w_error <= 1e-6 and rt.f_error <= 1e-6


def test_abel_round_trip_sqrt_profile_outside_domain():
    # alpha' = 0 leaves alpha'^2 - beta'^2 g^2 negative everywhere
    prof = lambda x: (SQ2 * np.sqrt(1 + x), SQ2 / (2 * np.sqrt(1 + x)))
    with pytest.raises(ReductionError):
        abel_round_trip(ReductionSpec.F(0, -2), prof, (0.25, 1.0))


def test_abel_second_kind_on_profile():
    x = np.linspace(0.2, 1.4, 33)
    form = to_abel(ReductionSpec.F(3, -1))
    g, G = SQ2 + x, x.copy()
    # dG/dg = d(x f')/dx / f' = 1 for f = sqrt(2) + x
    assert np.max(np.abs(form.second_kind_residual(g, G, np.ones_like(x)))) < 1e-13
    w = form.w_from_G(g, G)
    assert np.allclose(form.G_from_w(g, w), G, rtol=1e-15)


# ----------------------------------------------------------------- integrator


def test_graph_integration():
    out = integrate_profile(ReductionSpec.graph(), ProfileState(0.0, 1.0, 0.0), (0.0, 0.9), step=1e-3,
                            nodes=np.linspace(0, 0.9, 91))
    assert np.max(np.abs(out.value - (1 - out.x**2))) <= 1e-8


def test_zero_length_interval():
    st0 = ProfileState(0.5, 1.2, -0.3)
    out = integrate_profile(ReductionSpec.F(3, -1), st0, (0.5, 0.5))
    assert out.state(0) == st0


def test_step_halving_ratio():
    spec = ReductionSpec.F(0, -2)

    def exact(x):
        return SQ2 * np.sqrt(1 + x)

    start = ProfileState(0.5, exact(0.5), SQ2 / (2 * np.sqrt(1.5)))
    errs = [abs(integrate_profile(spec, start, (0.5, 1.5), step=h, nodes=[1.5]).value[-1] - exact(1.5))
            for h in (0.1, 0.05, 0.025)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(16 * 0.7 <= r <= 16 * 1.3 for r in ratios)


def test_backward_integration():
    spec = ReductionSpec.F(3, -1)
    out = integrate_profile(spec, ProfileState(1.0, SQ2 + 0.5, 0.5), (1.0, 0.2), step=0.01)
    assert np.max(np.abs(out.value - (SQ2 + 0.5 * out.x))) < 1e-12


def test_integrator_errors():
    spec = ReductionSpec.graph()
    with pytest.raises(ReductionError):
        integrate_profile(spec, ProfileState(0.1, 1.0, 0.0), (0.0, 1.0))
    with pytest.raises(ReductionError):
        integrate_profile(spec, ProfileState(0.0, 1.0, 0.0), (0.0, 1.0), step=0)
    # 1 + h - x^2 vanishes for h = x^2 - 1 on the null cone
    with pytest.raises(SingularPointError):
        integrate_profile(spec, ProfileState(0.0, -1.0, 0.0), (0.0, 0.5))


def test_csv_round_trip():
    p = analytic_profile("1 - x**2", np.linspace(0, 0.9, 10))
    q = ProfileSamples.from_csv(p.to_csv())
    assert np.array_equal(q.x, p.x) and np.array_equal(q.value, p.value)


# ----------------------------------------------------------------- self-similar lift


@pytest.mark.parametrize("spec, exact, grid", [
    (ReductionSpec.F(0, -2), lambda x: (SQ2 * np.sqrt(1 + 0.5 * x), SQ2 * 0.25 / np.sqrt(1 + 0.5 * x)),
     ((1.0, 2.0), (1.0, 2.0))),
    (ReductionSpec.F(3, -1), lambda x: (SQ2 + 0.5 * x, 0.5), ((0.5, 1.0), (1.0, 2.0))),
])
def test_lifted_profile_converges(spec, exact, grid):
    (t0, t1), (m0, m1) = grid
    a, b = float(spec.p), float(spec.q)
    corners = [t**a * m**b for t in (t0, t1) for m in (m0, m1)]
    lo, hi = min(corners), max(corners)
    f, df = exact(lo)
    prof = integrate_profile(spec, ProfileState(lo, f, df), (lo, hi), step=1e-3,
                             nodes=np.linspace(lo, hi, 401))
    radius = lift_profile(spec, prof)

    def sampler(g):
        T, M = g.mesh()
        return Field2(g, radius(T, M))

    coarse = Grid2.make(("tau", "mu"), (t0, t1, 33), (m0, m1, 33))
    lad = convergence_ladder("EQ3", None, coarse, sampler=sampler, floor=1e-9)
    assert lad.passed


def test_lift_range_checked():
    prof = analytic_profile("sqrt(2)+x", np.linspace(0.5, 1.0, 5))
    radius = lift_profile(ReductionSpec.F(3, -1), prof)
    with pytest.raises(ReductionError):
        radius(np.array([2.0]), np.array([1.0]))


# ----------------------------------------------------------------- ansatz


def _fam(families):
    return {(f.a, f.d_zero, f.k, f.trivial_shift) for f in families}


def test_ansatz_plus():
    fams = _fam(ansatz_coefficients("plus"))
    assert fams == {(Fraction(2), False, Fraction(1, 12), False), (Fraction(-1), True, None, False),
                    (Fraction(1, 2), True, None, True)}


def test_ansatz_minus():
    fams = _fam(ansatz_coefficients("minus"))
    assert fams == {(Fraction(3), True, None, False), (Fraction(1, 2), True, None, True)}


def test_ansatz_derived_plus_agrees():
    assert _fam(ansatz_coefficients("plus", "derived")) == _fam(ansatz_coefficients("plus"))


def test_ansatz_derived_minus_extra_family():
    extra = _fam(ansatz_coefficients("minus", "derived")) - _fam(ansatz_coefficients("minus"))
    assert extra == {(Fraction(0), False, Fraction(-1, 4), False)}


def test_ansatz_derived_linear_condition():
    # the order-z condition for the minus form is -d a (a - 5)
    cond = ansatz_conditions("minus", "derived")[0]
    assert cond == {(1, 0): (Fraction(0), Fraction(5), Fraction(-1))}


@pytest.mark.parametrize("form", ["plus", "minus"])
def test_ansatz_families_solve_level_set_equation(form):
    for fam in ansatz_coefficients(form, "derived"):
        expr = ansatz_entry_expr(fam, d=0.6, e=0.4)
        grid = Grid2.make(("tau", "R"), (1.0, 2.0, 17), (1.0, 2.0, 17))
        e = CatalogEntry(name="ansatz", role="zeta_of_tau_R", paper_eq="test",
                         evaluator=sympy_evaluator(("tau", "R"), {"zeta": expr}), params={},
                         components=("zeta",), default_grid=grid, axis_names=("tau", "R"))
        assert residual("EQ33", e).max_relative < 1e-10, fam


def test_ansatz_bad_form():
    with pytest.raises(ReductionError):
        ansatz_coefficients("other")
    with pytest.raises(ReductionError):
        ansatz_conditions("plus", "nowhere")


# ----------------------------------------------------------------- separable family


def test_separable_delta_zero_closed_form():
    tau0 = 0.5
    tr = integrate_separable(-1 / (1 - tau0), 1 / (1 - tau0) ** 2, 0, 0, (1.0, 2.0))
    assert np.max(np.abs(tr.D + 1 / (tr.tau - tau0))) <= 1e-8


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_separable_invariant_drift(D0, Dd0):
    tr = integrate_separable(D0, Dd0, 0.1, 0.2, (1.0, 2.0), step=1e-3)
    # near-blow-up trajectories lose absolute conservation with |D|^4
    assume(np.max(np.abs(tr.D)) <= 2.0)
    assert tr.drift <= 1e-9


def test_separable_z1_linear_equation():
    tr = integrate_separable(0.5, 0.2, 0.25, 0.5, (1.0, 2.0))
    # z1dot = -C2 exp(int 4D)
    integ = np.concatenate([[0], np.cumsum(np.diff(tr.tau) * (tr.D[1:] + tr.D[:-1]) / 2)])
    assert np.allclose(tr.z1dot, -0.5 * np.exp(4 * integ), rtol=1e-5)


@pytest.mark.parametrize("C2", [0.0, 0.5])
def test_separable_entry_gate(C2):
    e = separable_family(0.5, 0.2, C1=0.25, C2=C2)
    assert residual("EQ33", e).max_relative <= 1e-8


def test_separable_delta_input():
    e = separable_family(0.5, delta=0.1, branch=-1.0)
    assert e.params["Ddot0"] == pytest.approx(-np.sqrt(0.1 + 0.5**4))
    with pytest.raises(ReductionError):
        separable_family(0.5)
    with pytest.raises(ReductionError):
        separable_family(0.5, delta=-1.0)


def test_separable_blowup():
    # D = -1/(tau - 1.5) with the opposite sign reaches infinity at tau = 1.5
    with pytest.raises(BlowUpError):
        integrate_separable(2.0, 4.0, 0, 0, (1.0, 2.0))


# ----------------------------------------------------------------- linear-part exponents


def test_linear_part_roots():
    a = sp.Symbol("a")
    assert set(linear_part_exponents("+")) == set(sp.solve(a**2 - 7 * a + 6, a))
    assert set(linear_part_exponents("-")) == set(sp.solve(a**2 + a - 2, a))


def test_linear_part_predicate():
    assert linear_part_condition(1, 0, "+")
    assert linear_part_condition(0, 6, "+")
    assert not linear_part_condition(2, 0, "+")
    assert linear_part_condition(-2, 0, "-")
    with pytest.raises(ReductionError):
        linear_part_condition(1, 0, "x")
