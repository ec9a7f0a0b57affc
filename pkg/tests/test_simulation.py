import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from reachstep.backstepping import LevelSetGrid, levelset_grid, sample_safe_subset
from reachstep.simulation import (
    Outcome, SimConfig, Trajectory, audit_trajectory, export_batch_csv, export_csv, export_svg, monotonicity_audit,
    rk4_step, rk4_step_t, run_batch, run_trajectory, simulate, verify_pointwise,
)

from conftest import di_certificate


# --- integrator --------------------------------------------------------------------


def test_rk4_exponential_single_step():
    x = rk4_step(lambda z: z, np.array([1.0]), 0.1)
    assert x[0] == pytest.approx(1.10517083, abs=1e-8)


def test_rk4_constant_and_linear_fields():
    x0 = np.array([[0.3, -2.0]])
    assert np.array_equal(rk4_step(lambda z: np.zeros_like(z), x0, 0.5), x0)
    assert np.allclose(rk4_step(lambda z: np.ones_like(z), x0, 0.5), x0 + 0.5, atol=1e-15)


def test_time_dependent_step_is_exact_for_cubics():
    # x' = 3 t^2 integrates exactly under RK4
    x = rk4_step_t(lambda t, z: np.full_like(z, 3 * t * t), 0.2, np.array([0.0]), 0.3)
    assert x[0] == pytest.approx(0.5**3 - 0.2**3, abs=1e-15)


def test_empirical_order():
    cert = di_certificate()
    x0 = np.array([[0.6, 0.4]])
    free = dict(stop_on_reach=False, stop_on_safety=False)
    ref = simulate(cert, x0, SimConfig(dt=1e-4, t_max=1.0, **free))[0].states[-1]
    errs = [np.linalg.norm(simulate(cert, x0, SimConfig(dt=h, t_max=1.0, **free))[0].states[-1] - ref)
            for h in (0.1, 0.05, 0.025)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.5, orders


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_max=0.01)
    assert SimConfig(dt=0.01, t_max=1.0).steps == 100


# --- runs ---------------------------------------------------------------------------


def test_start_inside_target_reaches_immediately():
    t = run_trajectory(di_certificate(), [0.1, -0.1])
    assert t.outcome is Outcome.REACHED and t.outcome_time == 0.0 and len(t.times) == 1


def test_double_integrator_run():
    t = run_trajectory(di_certificate(), [0.95, -0.9])
    assert t.outcome is Outcome.REACHED
    assert np.all(t.psi > 0)
    assert audit_trajectory(t).passed


def test_lockstep_matches_individual_runs():
    cert = di_certificate(mu=0.5)
    x0 = np.array([[0.9, -0.5], [-0.8, 0.9], [0.7, 0.0]])
    batch = simulate(cert, x0)
    for i, row in enumerate(x0):
        single = run_trajectory(cert, row)
        assert single.outcome is batch[i].outcome
        assert np.array_equal(single.states, batch[i].states)


def test_timeout_when_horizon_short():
    t = run_trajectory(di_certificate(), [0.95, -0.9], SimConfig(dt=1e-3, t_max=0.01))
    assert t.outcome is Outcome.TIMEOUT and t.times[-1] == pytest.approx(0.01)


def test_batch_of_one(certs):
    rep = run_batch(certs["example1"], 1, SimConfig(dt=1e-2, t_max=10.0))
    assert len(rep.trajectories) == 1 and sum(rep.counts.values()) == 1
    d = rep.to_dict()
    assert d["count"] == 1 and len(d["runs"]) == 1


def test_batch_validation(certs):
    with pytest.raises(ValueError):
        run_batch(certs["example1"], 0)


@pytest.mark.parametrize("name", ["example1", "dubins", "arm"])
def test_trajectory_invariants(certs, name):
    rep = run_batch(certs[name], 5, SimConfig(dt=2e-3, t_max=20.0, seed=3))
    for t in rep.trajectories:
        assert np.all(t.Psi <= t.psi + 1e-12)
        if t.outcome is Outcome.REACHED:
            assert np.all(t.psi > 0)
    assert rep.all_monotone


def test_singular_run_reported(certs):
    c = certs["dubins"]
    x0 = sample_safe_subset(c, 1, seed=0)[0][0]
    x0[3] = 0.0
    t = simulate(c, x0[None, :])[0]
    assert t.outcome is Outcome.SINGULAR and t.outcome_time == 0.0


# --- audit -----------------------------------------------------------------------------


def test_constant_sequence_is_monotone():
    r = monotonicity_audit(np.full(10, 0.4))
    assert r.passed and r.max_drop == 0.0


def test_decreasing_sequence_fails_at_step():
    vals = np.array([0.1, 0.2, 0.3, 0.25, 0.4])
    r = monotonicity_audit(vals)
    assert not r.passed and r.worst_step == 2 and r.max_drop == pytest.approx(0.05)


def test_audit_tolerance_scales_with_magnitude():
    assert monotonicity_audit(np.array([1.0, 1.0 - 1e-6])).passed
    assert not monotonicity_audit(np.array([1.0, 1.0 - 1e-5])).passed


def test_reached_sample_excluded():
    n = 4
    t = Trajectory(np.arange(n) * 0.1, np.zeros((n, 1)), np.zeros((n, 1)), np.zeros((n, 1)),
                   np.array([0.1, 0.2, 0.3, 0.0]), np.ones(n), Outcome.REACHED, 0.3)
    assert audit_trajectory(t).passed
    t.outcome = Outcome.TIMEOUT
    assert not audit_trajectory(t).passed


def test_audit_needs_two_samples():
    with pytest.raises(ValueError):
        monotonicity_audit([1.0])


# --- pointwise verification -------------------------------------------------------------


def test_verify_detects_inflated_rate():
    cert = di_certificate()
    assert verify_pointwise(cert, 2000, seed=0).passed
    assert not verify_pointwise(cert, 2000, seed=0, lam=100 * cert.lam).passed


def test_verify_rejects_zero_samples():
    with pytest.raises(ValueError, match="sample"):
        verify_pointwise(di_certificate(), 0)


def test_verify_is_seeded():
    a = verify_pointwise(di_certificate(), 500, seed=9)
    b = verify_pointwise(di_certificate(), 500, seed=9)
    assert a == b


# --- export -----------------------------------------------------------------------------


def test_csv_columns_and_rows(tmp_path):
    t = run_trajectory(di_certificate(), [0.9, -0.5], SimConfig(dt=0.1, t_max=0.2, stop_on_reach=False))
    assert len(t.times) == 3
    export_csv(t, tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["t", "p", "v", "y", "u1", "psi"]
    assert len(rows) == 4
    assert [float(v) for v in rows[1]] == [0.0, 0.9, -0.5, 0.9, float(t.inputs[0, 0]), float(t.Psi[0])]


def test_csv_is_bitwise_deterministic(tmp_path, certs):
    paths = []
    for k in range(2):
        rep = run_batch(certs["dubins"], 3, SimConfig(dt=1e-2, seed=11))
        paths.append(export_batch_csv(rep.trajectories, tmp_path / f"b{k}.csv", stride=5))
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_batch_csv_keeps_last_sample(tmp_path):
    t = run_trajectory(di_certificate(), [0.9, -0.5], SimConfig(dt=0.1, t_max=0.5, stop_on_reach=False))
    rows = list(csv.reader(open(export_batch_csv([t], tmp_path / "b.csv", stride=2))))
    assert [float(r[1]) for r in rows[1:]] == pytest.approx([0.0, 0.2, 0.4, 0.5])


def test_svg_structure(tmp_path, certs):
    rep = run_batch(certs["example1"], 3, SimConfig(dt=1e-2))
    path = export_svg(certs["example1"], rep.trajectories, tmp_path / "p.svg", box=((-1.2, 1.2), (-1.2, 1.2)))
    root = ET.parse(path).getroot()
    ns = {"s": "http://www.w3.org/2000/svg"}
    groups = {g.get("id"): g for g in root.findall("s:g", ns)}
    assert len(groups["safe-set"].findall("s:polyline", ns)) >= 1
    assert len(groups["target-set"].findall("s:polyline", ns)) >= 1
    assert len(groups["trajectories"].findall("s:polyline", ns)) == 3
    assert len(groups["markers"].findall("s:circle", ns)) == 3


def test_levelset_csv_via_disk_matches_grid(tmp_path):
    cert = di_certificate()
    g = levelset_grid(cert, ("p", "v"), resolution=9)
    g.to_csv(tmp_path / "g.csv")
    back = LevelSetGrid.from_csv(tmp_path / "g.csv")
    assert np.array_equal(back.values, g.values)
