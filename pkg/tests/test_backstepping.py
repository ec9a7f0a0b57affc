import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachstep.backstepping import (
    EmptySafeSubsetError, GainSchedule, LevelSetGrid, TopOfChainError, build_certificate, certificate_from_dict,
    certificate_to_dict, levelset_grid, load_certificate, mu_nesting, sample_safe_subset, save_certificate,
    total_time_derivative,
)
from reachstep.dynamics import ControlAffineSystem, SingularDecouplingError
from reachstep.simulation import verify_pointwise
from reachstep.sos import BaseController
from reachstep.symbolic import Polynomial, Var, evaluate, parse, to_polynomial

from conftest import DI_PHI, DI_PSI, di_base, di_certificate, di_hand_input, di_hand_Psi, double_integrator


# --- time derivatives -----------------------------------------------------------


def test_shift_dynamics():
    assert total_time_derivative(parse("eta1_1"), (2,)) == parse("eta1_2")


def test_chain_rule_square():
    assert total_time_derivative(parse("eta1_1^2"), (2,)) == parse("2*eta1_1*eta1_2")


def test_two_output_chain_rule():
    k = parse("3*eta1_1^2*eta2_1 - eta2_1^3")
    got = total_time_derivative(k, (2, 2))
    want = parse("6*eta1_1*eta2_1*eta1_2 + (3*eta1_1^2 - 3*eta2_1^2)*eta2_2")
    pt = {"eta1_1": 0.3, "eta2_1": -1.2, "eta1_2": 0.7, "eta2_2": 2.0}
    assert evaluate(got, pt) == pytest.approx(evaluate(want, pt), rel=1e-14)


def test_top_of_chain_rejected():
    with pytest.raises(TopOfChainError):
        total_time_derivative(parse("eta1_2"), (2,))


# --- chain construction ---------------------------------------------------------


@pytest.mark.parametrize("name", ["example1", "dubins", "arm"])
def test_relative_degree_two_chain_is_k1(certs, name):
    c = certs[name]
    assert all(len(layers) == 1 for layers in c.chain)
    assert c.chain[0][0] == c.k1[0]


def triple_integrator():
    return ControlAffineSystem(("p", "v", "a"), (Var("v"), Var("a"), 0.0), ((0.0,), (0.0,), (1.0,)), (Var("p"),),
                               ((-1.0, 1.0), (-3.0, 3.0), (-8.0, 8.0)), ("y",))


def test_triple_integrator_second_layer():
    mu1, mu2, lam = 0.7, 1.3, 2.0
    cert = build_certificate(triple_integrator(), di_base(lam), DI_PSI, DI_PHI,
                             mu=GainSchedule(((mu1, mu2),), lam))
    names = ("eta1_1", "eta1_2", "eta1_3")
    k2 = to_polynomial(cert.chain[0][1], names)
    hand = to_polynomial(parse(f"{mu1}*(-2*eta1_1) - eta1_2 + {lam / 2}*(eta1_2 + eta1_1)"), names)
    assert (k2 - hand).max_abs_coefficient() <= 1e-15


def test_triple_integrator_certificate_inequality():
    lam = 2.0
    cert = build_certificate(triple_integrator(), di_base(lam), DI_PSI, DI_PHI, mu=GainSchedule(((1.0, 1.0),), lam))
    rep = verify_pointwise(cert, 10_000, seed=1, tol=1e-8)
    assert rep.passed, rep.min_value


# --- controller -----------------------------------------------------------------


def test_double_integrator_hand_value():
    u, singular = di_certificate().controller(np.array([[0.5, 0.0]]))
    assert u[0, 0] == pytest.approx(-0.5, abs=1e-15) and not singular[0]


def test_all_terms_vanish():
    u, _ = di_certificate().controller(np.array([[0.0, 0.0]]))
    assert u[0, 0] == 0.0


def test_double_integrator_matches_hand_code():
    x = double_integrator().sample_box(100, np.random.default_rng(7))
    for mu, lam in [(1.0, 2.0), (0.3, 0.5), (4.0, 1.0)]:
        u, _ = di_certificate(mu, lam).controller(x)
        assert np.max(np.abs(u[:, 0] - di_hand_input(x, mu, lam))) <= 1e-10
        assert np.max(np.abs(di_certificate(mu, lam).psi_eval(x) - di_hand_Psi(x, mu))) <= 1e-12


def test_dubins_controller_regular_and_singular(certs):
    c = certs["dubins"]
    u, singular = c.controller(np.array([[0.5, 1.0, 0.3, 2.0]]))
    assert np.all(np.isfinite(u)) and not singular[0]
    with pytest.raises(SingularDecouplingError):
        c.controller(np.array([[0.5, 1.0, 0.3, 0.0]]))
    u, singular = c.controller(np.array([[0.5, 1.0, 0.3, 0.0]]), strict=False)
    assert singular[0] and np.all(np.isnan(u))


# --- Psi ---------------------------------------------------------------------------


def matched_states(name, cert, y):
    """States whose derivative coordinates equal k1(y)."""
    kv = np.stack([to_polynomial(e, ("eta1_1", "eta2_1"))(*y.T) for e in cert.k1], axis=1)
    if name == "example1":
        return np.column_stack([y[:, 0], kv[:, 0], y[:, 1], kv[:, 1]])
    if name == "dubins":
        return np.column_stack([y[:, 0], y[:, 1], np.arctan2(kv[:, 1], kv[:, 0]), np.hypot(kv[:, 0], kv[:, 1])])
    raise KeyError(name)


@pytest.mark.parametrize("name", ["example1", "dubins"])
def test_chain_collapse(specs, certs, name):
    c = certs[name]
    lo, hi = np.array(specs[name].output_box).T
    y = lo + (hi - lo) * np.random.default_rng(3).random((200, 2))
    x = matched_states(name, c, y)
    assert np.max(np.abs(c.psi_eval(x) - specs[name].psi(*y.T))) <= 1e-12 * (1 + np.abs(specs[name].psi(*y.T)).max())


def test_chain_collapse_double_integrator():
    p = np.linspace(-1, 1, 11)
    x = np.column_stack([p, -p])
    assert np.array_equal(di_certificate().psi_eval(x), 1 - p**2)


@pytest.mark.parametrize("name", ["example1", "dubins", "arm"])
def test_Psi_below_psi(specs, certs, name):
    c = certs[name]
    x = c.system.sample_box(5000, np.random.default_rng(0))
    P = c.psi_eval(x)
    p = c.psi_phi(c.outputs(x))[0]
    assert np.all(P <= p + 1e-12)
    assert np.all(p[P > 0] > 0)


def test_large_mu_approaches_psi_from_below(certs):
    c = certs["dubins"]
    x = c.system.sample_box(500, np.random.default_rng(1))
    psi = c.psi_phi(c.outputs(x))[0]
    prev = -np.inf
    for mu in [0.1, 1.0, 10.0, 1e3, 1e6]:
        P = c.with_gains(GainSchedule.uniform(c.gammas, mu, c.lam)).psi_eval(x)
        assert np.all(P >= prev) and np.all(P <= psi)
        prev = P
    assert np.max(np.abs(prev - psi)) <= 1e-3 * (1 + np.abs(psi).max())


@given(st.floats(0.01, 100.0), st.floats(1.0, 50.0))
@settings(max_examples=20, deadline=None)
def test_mu_monotone_nesting_pointwise(certs, mu, factor):
    c = certs["dubins"]
    x = c.system.sample_box(2000, np.random.default_rng(5))
    small = c.with_gains(GainSchedule.uniform(c.gammas, mu, c.lam)).psi_eval(x) > 0
    large = c.with_gains(GainSchedule.uniform(c.gammas, mu * factor, c.lam)).psi_eval(x) > 0
    assert not np.any(small & ~large)


def test_double_integrator_inequality():
    rep = verify_pointwise(di_certificate(), 10_000, seed=0, tol=1e-8)
    assert rep.passed and rep.samples == 10_000


def test_gain_schedule_validation():
    with pytest.raises(ValueError):
        GainSchedule(((0.0,),), 1.0)
    with pytest.raises(ValueError):
        GainSchedule(((1.0,),), 0.0)
    with pytest.raises(ValueError):
        GainSchedule.from_spec((2, 2), [[1.0]], 1.0)


# --- sampling --------------------------------------------------------------------


def test_constant_psi_accepts_everything():
    si = ControlAffineSystem.single_integrator(("y",), [(-1, 1)])
    one = Polynomial(("y",), {(0,): 1.0})
    base = BaseController(("y",), (Polynomial(("y",)),), 1.0, 0.0, True, "Optimal")
    cert = build_certificate(si, base, one, DI_PHI)
    _, acc = sample_safe_subset(cert, 50, seed=0)
    assert acc == 1.0


def test_example1_safe_samples(certs):
    x, acc = sample_safe_subset(certs["example1"], 100, seed=0)
    assert x.shape == (100, 4) and np.all(certs["example1"].psi_eval(x) > 0) and 0 < acc <= 1


def test_sampling_is_deterministic(certs):
    a, _ = sample_safe_subset(certs["dubins"], 20, seed=4)
    b, _ = sample_safe_subset(certs["dubins"], 20, seed=4)
    assert np.array_equal(a, b)


def test_tiny_mu_empties_safe_subset(certs):
    c = certs["dubins"]
    with pytest.raises(EmptySafeSubsetError):
        sample_safe_subset(c.with_gains(GainSchedule.uniform(c.gammas, 1e-9, c.lam)), 100, seed=0)


def test_sample_count_validated(certs):
    with pytest.raises(ValueError):
        sample_safe_subset(certs["dubins"], 0)


# --- level sets -------------------------------------------------------------------


def test_constant_field_grid():
    si = ControlAffineSystem.single_integrator(("a", "b"), [(-1, 1), (-1, 1)])
    one = Polynomial(("a", "b"), {(0, 0): 1.0})
    base = BaseController(("a", "b"), (Polynomial(("a", "b")),) * 2, 1.0, 0.0, True, "Optimal")
    cert = build_certificate(si, base, one, Polynomial(("a", "b"), {(2, 0): 1.0, (0, 0): -0.1}))
    g = levelset_grid(cert, ("a", "b"), resolution=2)
    assert g.values.shape == (2, 2) and np.all(g.values == 1.0)


def test_grid_rejects_same_axis(certs):
    with pytest.raises(ValueError):
        levelset_grid(certs["dubins"], ("x1", "x1"))


def test_dubins_nesting_over_mu(specs, certs):
    sl = specs["dubins"].levelset_slice
    rep = mu_nesting(certs["dubins"], [0.1, 1.0, 10.0], sl["axes"], sl["fixed"], 256)
    assert rep.nested and rep.positive_cells[0] < rep.positive_cells[-1]
    assert all(0 < r <= 1 for r in rep.ratios) and list(rep.ratios) == sorted(rep.ratios)


@pytest.mark.parametrize("name", ["dubins", "arm"])
def test_Psi_grid_below_psi_grid(specs, certs, name):
    sl = specs[name].levelset_slice
    P = levelset_grid(certs[name], sl["axes"], sl["fixed"], 64)
    p = levelset_grid(certs[name], sl["axes"], sl["fixed"], 64, field="psi")
    assert np.all(P.values <= p.values)


def test_grid_csv_round_trip(tmp_path, specs, certs):
    sl = specs["dubins"].levelset_slice
    g = levelset_grid(certs["dubins"], sl["axes"], sl["fixed"], 16)
    g.to_csv(tmp_path / "g.csv")
    back = LevelSetGrid.from_csv(tmp_path / "g.csv", sl["fixed"])
    assert back.axes == g.axes
    assert np.array_equal(back.xs, g.xs) and np.array_equal(back.ys, g.ys) and np.array_equal(back.values, g.values)


# --- serialisation ----------------------------------------------------------------


def test_certificate_round_trip(tmp_path, specs, certs):
    c = certs["dubins"]
    digest = save_certificate(c, tmp_path / "c.json")
    back = load_certificate(tmp_path / "c.json", specs["dubins"].system)
    assert back.Psi == c.Psi and back.lam == c.lam and back.gains == c.gains
    assert len(digest) == 64
    x = c.system.sample_box(50, np.random.default_rng(0))
    assert np.array_equal(back.controller(x)[0], c.controller(x)[0])


def test_tampered_certificate_rejected(specs, certs):
    d = certificate_to_dict(certs["dubins"])
    d["Psi"] = "1 + " + d["Psi"]
    with pytest.raises(ValueError):
        certificate_from_dict(d, specs["dubins"].system)


def test_certificate_for_other_system_rejected(specs, certs):
    with pytest.raises(ValueError):
        certificate_from_dict(certificate_to_dict(certs["dubins"]), specs["arm"].system)
