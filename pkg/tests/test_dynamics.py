import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachstep.dynamics import (
    ControlAffineSystem, RelativeDegreeUndefined, SingularDecouplingError, build_eta_map, decoupling,
    feedback_linearize, lie_derivative, vector_relative_degree,
)
from reachstep.simulation import measure_linearization
from reachstep.symbolic import Polynomial, evaluate, parse, scale, to_polynomial, var

from conftest import double_integrator

DUBINS_F = [parse(s) for s in ("v*cos(theta)", "v*sin(theta)", "0", "0")]
DUBINS_X = ("x1", "x2", "theta", "v")


def test_lie_derivative_dubins_position():
    assert lie_derivative(var("x1"), DUBINS_F, DUBINS_X) == parse("v*cos(theta)")


def test_lie_derivative_of_constant():
    assert lie_derivative(parse("4"), DUBINS_F, DUBINS_X).is_const(0.0)


def test_lie_derivative_gradient_dot_field():
    f = [var("x2"), parse("-x1")]
    assert lie_derivative(var("x1"), f, ("x1", "x2")) == var("x2")
    assert lie_derivative(parse("x1^2 + x2^2"), f, ("x1", "x2")).is_const(0.0)


def test_lie_derivative_dimension_mismatch():
    with pytest.raises(ValueError):
        lie_derivative(var("x1"), [var("x2")], ("x1", "x2"))


@pytest.mark.parametrize("name", ["example1", "dubins", "arm"])
def test_fixture_relative_degree(specs, name):
    prof = vector_relative_degree(specs[name].system)
    assert prof.r == (2, 2) and prof.fully_linearizable and prof.sum_r == 4


def test_single_integrator_relative_degree_one():
    si = ControlAffineSystem.single_integrator(("a", "b", "c"), [(-1, 1)] * 3)
    assert vector_relative_degree(si).r == (1, 1, 1)


def test_relative_degree_undefined_when_input_never_appears():
    sys = ControlAffineSystem(("p", "q"), (var("p"), 0.0), ((0.0,), (1.0,)), (var("p"),), ((-1, 1), (-1, 1)))
    with pytest.raises(RelativeDegreeUndefined):
        vector_relative_degree(sys)


def test_rank_deficient_decoupling_is_undefined():
    # both outputs see the same input direction
    sys = ControlAffineSystem(("a", "b"), (0.0, 0.0), ((1.0, 1.0), (1.0, 1.0)), (var("a"), var("b")),
                              ((-1, 1), (-1, 1)))
    with pytest.raises(RelativeDegreeUndefined):
        vector_relative_degree(sys)


def test_partial_linearizable_warns():
    sys = ControlAffineSystem(("a", "b"), (var("b"), 0.0), ((1.0,), (0.0,)), (var("a"),), ((-1, 1), (-1, 1)))
    prof = vector_relative_degree(sys)
    assert prof.r == (1,) and not prof.fully_linearizable
    with pytest.warns(UserWarning, match="internal dynamics"):
        build_eta_map(sys, prof)


@given(st.floats(0.1, 50.0), st.floats(0.1, 50.0))
@settings(max_examples=15, deadline=None)
def test_relative_degree_invariant_under_column_scaling(specs, c1, c2):
    sys = specs["dubins"].system
    g = tuple((scale(row[0], c1), scale(row[1], c2)) for row in sys.g)
    scaled = ControlAffineSystem(sys.state, sys.f, g, sys.h, sys.state_box, sys.output_names)
    assert vector_relative_degree(scaled).r == vector_relative_degree(sys).r


def test_dubins_eta_chain(specs):
    sys = specs["dubins"].system
    em = build_eta_map(sys, vector_relative_degree(sys))
    assert em.chains[0] == (var("x1"), parse("v*cos(theta)"))
    assert em.gammas == (2, 2)


def test_example1_eta_chain(specs):
    sys = specs["example1"].system
    em = build_eta_map(sys, vector_relative_degree(sys))
    assert em.chains[0] == (var("x1"), var("x2"))


def test_length_one_chain():
    si = ControlAffineSystem.single_integrator(("a",), [(-1, 1)])
    em = build_eta_map(si, vector_relative_degree(si))
    assert em.chains == ((var("a"),),)


@pytest.mark.parametrize("name", ["example1", "dubins", "arm"])
def test_eta_jacobian_full_rank(specs, name):
    sys = specs[name].system
    em = build_eta_map(sys, vector_relative_degree(sys))
    J = em.jacobian(sys.sample_box(200, np.random.default_rng(0)))
    s = np.linalg.svd(J, compute_uv=False)
    assert np.mean(s[:, -1] > 1e-8 * s[:, 0]) >= 0.95


def test_dubins_decoupling_matrix(specs):
    sys = specs["dubins"].system
    dec = decoupling(sys, vector_relative_degree(sys))
    want = [["-v*sin(theta)", "cos(theta)"], ["v*cos(theta)", "sin(theta)"]]
    pt = {"x1": 0.3, "x2": -1.0, "theta": 0.7, "v": 2.5}
    for i in range(2):
        for j in range(2):
            assert evaluate(dec.A[i][j], pt) == pytest.approx(evaluate(parse(want[i][j]), pt), abs=1e-14)
    x = sys.sample_box(50, np.random.default_rng(3))
    assert np.allclose(np.linalg.det(dec.evaluate_A(x)), -x[:, 3], atol=1e-12)


def test_identity_input_decoupling_is_constant():
    si = ControlAffineSystem.single_integrator(("a", "b"), [(-1, 1)] * 2)
    dec = decoupling(si, vector_relative_degree(si))
    assert np.array_equal(dec.evaluate_A(np.zeros((3, 2))), np.broadcast_to(np.eye(2), (3, 2, 2)))


def test_feedback_linearize_cancels_drift(specs):
    sys = specs["example1"].system
    dec = decoupling(sys, vector_relative_degree(sys))
    x = np.array([0.2, 1.0, -0.1, 0.5])
    _, lfr = dec.evaluate(x[None])
    assert np.allclose(feedback_linearize(dec, lfr[0], x), 0.0, atol=1e-12)


def test_feedback_linearize_double_integrator():
    di = double_integrator()
    dec = decoupling(di, vector_relative_degree(di))
    assert feedback_linearize(dec, [3.0], [0.4, -0.2]) == pytest.approx([3.0])


def test_feedback_linearize_dubins_singular_at_rest(specs):
    sys = specs["dubins"].system
    dec = decoupling(sys, vector_relative_degree(sys))
    with pytest.raises(SingularDecouplingError):
        feedback_linearize(dec, [0.0, 0.0], [0.0, 0.0, 0.3, 0.0])


@pytest.mark.parametrize("name", ["example1", "dubins", "arm"])
def test_linearized_outputs_follow_command(specs, name):
    sys = specs[name].system
    prof = vector_relative_degree(sys)
    x0 = {"example1": [0.2, 1.0, -0.1, 0.5], "dubins": [0.5, 1.0, -0.3, 18.0],
          "arm": [0.3, 1.55, -0.8, 1.6]}[name]

    def v(t):
        return np.array([0.5 * np.cos(3 * t) + 0.2, 0.3 * np.sin(2 * t) - 0.4])

    chk = measure_linearization(sys, prof, decoupling(sys, prof), x0, v, dt=1e-3, steps=200)
    assert chk.relative_error <= 1e-3


def test_system_rejects_foreign_variables():
    with pytest.raises(ValueError):
        ControlAffineSystem(("a",), (var("b"),), ((1.0,),), (var("a"),), ((-1, 1),))


def test_system_rejects_empty_box():
    with pytest.raises(ValueError):
        ControlAffineSystem(("a",), (0.0,), ((1.0,),), (var("a"),), ((1, 1),))


def test_fixture_fields_are_polynomial_for_example1(specs):
    sys = specs["example1"].system
    assert all(isinstance(to_polynomial(e, sys.state), Polynomial) for e in sys.f)
