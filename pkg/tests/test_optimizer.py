import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_enumerate

from mblab.errors import InfeasibleSolutionError, LPParseError, SizeLimitError
from mblab.optimizer import (AssignmentModel, Solver, SolverConfig, decoupled_upper_bound,
                             export_lp, import_solution, objective_value, solve_exact,
                             solve_local_search)

# actor 1: [3,0] or [1,1]; actor 2: [0,3] or [1,1]
FOUR = np.array([[[[3, 0], [1, 1]], [[0, 3], [1, 1]]]], dtype=float)

# averaging the scenarios first picks (0, 0), worth 2; the averaged objective picks (1, 1), worth 3
NONLINEAR = np.array([[[[3, 2], [2, 1]], [[1, 0], [0, 0]]],
                      [[[0, 3], [2, 3]], [[2, 2], [3, 2]]]], dtype=float)


def test_objective_examples():
    assert objective_value([[[[5, 7]]]], (0,)) == 5
    assert objective_value(np.zeros((2, 3, 2, 4)), (1, 0, 1)) == 0
    two = np.array([[[[3.0]]], [[[1.0]]]])
    assert objective_value(two, (0,)) == 2


def test_exact_example():
    rep = solve_exact(FOUR)
    assert rep.assignment == (0, 0) and rep.value == 3
    vals = {a: objective_value(FOUR, a) for a in [(0, 0), (0, 1), (1, 0), (1, 1)]}
    assert vals == {(0, 0): 3, (0, 1): 1, (1, 0): 1, (1, 1): 2}
    assert rep.gap == 0


def test_exact_single_option_and_duplicates():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(1, 4, 1, 3))
    assert solve_exact(t).value == pytest.approx(objective_value(t, (0, 0, 0, 0)))
    t = rng.normal(size=(1, 4, 3, 3))
    assert solve_exact(np.concatenate([t, t])).assignment == solve_exact(t).assignment


def test_exact_refuses_past_limit():
    t = np.random.default_rng(1).normal(size=(2, 8, 4, 3))
    with pytest.raises(SizeLimitError):
        solve_exact(t, enumeration_limit=10)


def test_exact_tie_break_on_flat_table():
    assert solve_exact(np.full((1, 5, 4, 3), 2000.0)).assignment == (0,) * 5


@pytest.mark.parametrize("seed", range(40))
def test_exact_matches_oracle_on_larger_tables(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(-3, 4, size=(2, 7, 3, 4)).astype(float)
    a, v = naive_enumerate(t.tolist())
    rep = solve_exact(t)
    assert rep.assignment == a and rep.value == pytest.approx(v, abs=1e-9)


def test_local_search_example_success_rate():
    # pilot: 995 of 1000 seeds reach the optimum with restarts=5
    hits = sum(solve_local_search(FOUR, restarts=5, rng=np.random.default_rng(s)).value == 3
               for s in range(1000))
    assert hits >= 950


@pytest.mark.parametrize("seed", range(20))
def test_local_search_contracts(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(3, 6, 4, 5))
    rep = solve_local_search(t, restarts=3, rng=np.random.default_rng(seed))
    assert rep.value == pytest.approx(objective_value(t, rep.assignment), abs=1e-9)
    assert rep.value <= rep.upper_bound + 1e-6
    assert rep.gap >= 0
    k1 = t[:, :, :1, :]
    assert solve_local_search(k1, rng=rng).value == pytest.approx(solve_exact(k1).value)


def test_local_search_time_budget_runs():
    t = np.random.default_rng(3).normal(size=(2, 10, 5, 4))
    rep = solve_local_search(t, restarts=50, time_budget_ms=1, rng=np.random.default_rng(0))
    assert rep.value == pytest.approx(objective_value(t, rep.assignment))


def test_decoupled_bound_examples():
    assert decoupled_upper_bound(FOUR) == 4
    t = np.random.default_rng(4).normal(size=(2, 3, 1, 4))
    assert decoupled_upper_bound(t) == pytest.approx(solve_exact(t).value)
    t = np.random.default_rng(5).normal(size=(2, 3, 3, 4))
    dominated = np.concatenate([t, t[:, :, :1, :] - 1.0], axis=2)
    assert decoupled_upper_bound(dominated) == decoupled_upper_bound(t)


@given(st.integers(0, 10_000), st.floats(0.01, 100))
@settings(max_examples=40, deadline=None)
def test_scaling_invariance(seed, c):
    t = np.random.default_rng(seed).integers(-4, 5, size=(2, 4, 3, 3)).astype(float)
    a = solve_exact(t)
    b = solve_exact(c * t)
    assert b.value == pytest.approx(c * a.value, rel=1e-9, abs=1e-9)
    assert decoupled_upper_bound(c * t) == pytest.approx(c * decoupled_upper_bound(t), rel=1e-9)
    best = {x for x in np.ndindex(3, 3, 3, 3)
            if abs(objective_value(t, x) - a.value) <= 1e-9}
    assert b.assignment in best


def test_objective_is_not_linear_in_scenarios():
    on_mean = solve_exact(NONLINEAR.mean(axis=0))
    on_avg = solve_exact(NONLINEAR)
    assert on_mean.assignment == (0, 0) and on_avg.assignment == (1, 1)
    assert objective_value(NONLINEAR, on_mean.assignment) == 2
    assert on_avg.value == 3


def test_lp_smallest_model():
    buf = io.StringIO()
    export_lp(AssignmentModel(np.array([[[[5.0]]]])), buf)
    text = buf.getvalue()
    assert "Maximize\n obj: M_1\n" in text
    assert " c_1_1: 5 b_1_1 - M_1 >= 0\n" in text
    assert " one_1: b_1_1 = 1\n" in text
    binaries = text.split("Binaries\n")[1].split("End")[0].split()
    assert binaries == ["b_1_1"]
    assert text.rstrip().endswith("End")
    m = AssignmentModel(np.zeros((3, 2, 4, 5)))
    assert (m.n_binaries, m.n_covering) == (8, 15)


def test_lp_coefficients_six_significant_digits():
    buf = io.StringIO()
    export_lp(np.array([[[[1234.56789, -0.000123456789]]]]), buf)
    assert "1234.57 b_1_1" in buf.getvalue()
    assert "- 0.000123457 b_1_1" in buf.getvalue()


def test_import_solution_errors():
    with pytest.raises(LPParseError, match="line 3"):
        import_solution(io.StringIO("b_1_1 1\n\nb_1_x 0\n"), (1, 2))
    with pytest.raises(LPParseError, match="unknown variable"):
        import_solution(io.StringIO("b_1_9 1\n"), (1, 2))
    with pytest.raises(LPParseError):
        import_solution(io.StringIO("z_1 1\n"), (1, 2))
    with pytest.raises(InfeasibleSolutionError):
        import_solution(io.StringIO("b_1_1 0\nb_1_2 0.4\n"), (1, 2))
    text = "# comment\nobj 3\nM_1 3\nb_1_1 0.9999\nb_1_2 1e-9\nb_2_1 0\nb_2_2 1\n"
    assert import_solution(io.StringIO(text), (1, 2, 2, 2)) == (0, 1)


def test_solver_dispatch_and_cache():
    with pytest.raises(ValueError):
        Solver(SolverConfig(backend="simplex"))
    s = Solver(SolverConfig(backend="exact"))
    a = s.solve(FOUR)
    assert s.solve(FOUR.copy()) is a
    loc = Solver(SolverConfig(backend="local")).solve(FOUR, rng=np.random.default_rng(0))
    assert loc.backend == "local"
