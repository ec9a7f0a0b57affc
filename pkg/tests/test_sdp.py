import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachstep.sdp import (
    DegenerateProblemError, SdpaParseError, SdpOptions, SdpProblem, SdpStatus, export_sdpa, import_solution,
    read_sdpa, solve, write_solution,
)
from reachstep.sdp.sdpa import format_sdpa
from reachstep.sos import build_program, program_for

from sdpa_oracle import solve_dat_s


def arrow_toy() -> SdpProblem:
    """min x subject to [[x, 1], [1, x]] PSD, written as X11 - X22 = 0, X12 = 1."""
    return SdpProblem(
        (2,), [np.array([[1.0, 0.0], [0.0, 0.0]])],
        [np.array([[[1.0, 0.0], [0.0, -1.0]], [[0.0, 0.5], [0.5, 0.0]]])], [0.0, 1.0],
    )


def forced_toy() -> SdpProblem:
    return SdpProblem((1,), [np.zeros((1, 1))], [np.ones((1, 1, 1))], [1.0])


def infeasible_toy() -> SdpProblem:
    return SdpProblem((1,), [np.zeros((1, 1))], [np.ones((1, 1, 1))], [-1.0])


def free_scalar_toy() -> SdpProblem:
    """min s subject to X - s I = [[0, 1], [1, 0]] entrywise, X PSD; s* = 1."""
    a = np.zeros((3, 2, 2))
    a[0, 0, 0] = 1.0
    a[1, 1, 1] = 1.0
    a[2, 0, 1] = a[2, 1, 0] = 0.5
    return SdpProblem((2,), [np.zeros((2, 2))], [a], [0.0, 0.0, 1.0], c_free=[1.0],
                      a_free=[[-1.0], [-1.0], [0.0]])


def test_arrow_toy_optimum():
    sol = solve(arrow_toy())
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-7)


def test_forced_toy():
    sol = solve(forced_toy())
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(np.array([[1.0]]), abs=1e-8)
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_infeasible_toy():
    assert solve(infeasible_toy()).status is SdpStatus.INFEASIBLE


def test_free_scalar_toy():
    sol = solve(free_scalar_toy())
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.free[0] == pytest.approx(1.0, abs=1e-7)


def test_iteration_limit_status():
    sol = solve(arrow_toy(), SdpOptions(max_iter=2))
    assert sol.status is SdpStatus.ITERATION_LIMIT


def test_empty_problem_solve_is_degenerate():
    with pytest.raises(DegenerateProblemError):
        solve(SdpProblem((), [], [], np.zeros(0)))


@pytest.mark.parametrize("make", [arrow_toy, forced_toy, free_scalar_toy])
def test_optimal_certificate_quality(make):
    p = make()
    sol = solve(p)
    std = p.standard_form()
    xs = sol.x if p.n_free == 0 else sol.x
    res = np.max(np.abs(p.residual(xs[: len(p.block_sizes)], sol.free if p.n_free else None)))
    assert res <= 1e-6 * (1 + np.max(np.abs(p.b)))
    for s, xk in zip(std.block_sizes, sol.x):
        if s > 0:
            assert np.linalg.eigvalsh(xk).min() >= -1e-8
    assert abs(sol.primal_objective - sol.dual_objective) <= 1e-7 * (1 + abs(sol.objective))


def test_solve_is_deterministic():
    a, b = solve(arrow_toy()), solve(arrow_toy())
    assert a.iterations == b.iterations and a.objective == b.objective
    assert all(np.array_equal(x, y) for x, y in zip(a.x, b.x))


# --- SDPA files -------------------------------------------------------------------


def test_sdpa_header_layout(tmp_path):
    path = export_sdpa(arrow_toy(), tmp_path / "toy.dat-s")
    lines = path.read_bytes().split(b"\n")
    assert lines[:4] == [b"2", b"1", b"2", b"0 1"]
    assert b"\r" not in path.read_bytes()
    for ln in lines[4:-1]:
        mat, blk, i, j, _ = ln.split()
        assert int(i) <= int(j)


def test_sdpa_round_trip(tmp_path):
    p = free_scalar_toy()
    q = read_sdpa(export_sdpa(p, tmp_path / "p.dat-s"))
    std = p.standard_form()
    assert q.block_sizes == std.block_sizes
    assert np.array_equal(q.b, std.b)
    for x, y in zip(q.c + q.a, std.c + std.a):
        assert np.array_equal(x, y)


def test_sdpa_bytes_deterministic(tmp_path):
    assert format_sdpa(arrow_toy()) == format_sdpa(arrow_toy())
    assert "0.10000000000000001" in format_sdpa(SdpProblem((1,), [np.zeros((1, 1))], [np.ones((1, 1, 1))], [0.1]))


def test_export_empty_problem_fails(tmp_path):
    with pytest.raises(DegenerateProblemError):
        export_sdpa(SdpProblem((), [], [], np.zeros(0)), tmp_path / "e.dat-s")


def test_read_sdpa_reports_line(tmp_path):
    bad = tmp_path / "bad.dat-s"
    bad.write_text("1\n1\n2\n1.0\n1 1 1 1 1.0\n1 1 x 2 1.0\n")
    with pytest.raises(SdpaParseError) as info:
        read_sdpa(bad)
    assert info.value.line == 6


def test_solution_file_round_trip(tmp_path):
    p = arrow_toy()
    sol = solve(p)
    back = import_solution(write_solution(sol, p.block_sizes, tmp_path / "toy.out"))
    assert back.status is sol.status
    assert back.primal_objective == pytest.approx(sol.primal_objective, abs=1e-15)
    assert np.allclose(back.x[0], sol.x[0], atol=0, rtol=1e-15)
    assert np.allclose(back.y, sol.y, atol=0, rtol=1e-15)


def test_malformed_solution_file(tmp_path):
    f = tmp_path / "broken.out"
    f.write_text("phase.value  = pdOPT\nobjValPrimal = +1.0\nxVec = \n{1.0,,}\n")
    with pytest.raises(SdpaParseError) as info:
        import_solution(f)
    assert info.value.line >= 1


# --- external solver oracle -------------------------------------------------------


@pytest.mark.parametrize("make,want", [(arrow_toy, 1.0), (forced_toy, 0.0), (free_scalar_toy, 1.0)])
def test_external_solver_agrees_on_toys(tmp_path, make, want):
    p = make()
    ext = -solve_dat_s(export_sdpa(p, tmp_path / "t.dat-s"))
    assert ext == pytest.approx(want, abs=1e-6)
    assert abs(solve(p).objective - ext) <= 1e-5


def regression_corpus(specs, bases):
    for name, s in specs.items():
        sur = s.surrogate()
        yield f"{name}-first", build_program(sur, s.safe, s.synthesis)
        if bases[name].stage1_delta is not None:
            yield f"{name}-final", program_for(bases[name], sur, s.safe, s.synthesis)


def test_external_solver_agrees_on_synthesis_programs(tmp_path, specs, bases):
    gaps = {}
    for tag, prog in regression_corpus(specs, bases):
        ext = -solve_dat_s(export_sdpa(prog.sdp, tmp_path / f"{tag}.dat-s"))
        gaps[tag] = abs(solve(prog.sdp).objective - ext)
    assert max(gaps.values()) <= 1e-5, gaps


# --- properties -------------------------------------------------------------------


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(0.1, 3.0))
@settings(max_examples=25, deadline=None)
def test_min_eigenvalue_problem(entries, t):
    """min <C, X> with tr X = t gives t * lambda_min(C)."""
    a, b, c = entries
    C = np.array([[a, b], [b, c]])
    p = SdpProblem((2,), [C], [np.eye(2)[None]], [t])
    sol = solve(p)
    assert sol.status is SdpStatus.OPTIMAL
    assert sol.objective == pytest.approx(t * np.linalg.eigvalsh(C)[0], abs=1e-6 * (1 + t * np.abs(C).max()))
