import io

import numpy as np
import pytest

from corround.simplex import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    UNBOUNDED,
    DimensionMismatch,
    LPProblem,
    solve,
    write_lp,
)

from conftest import vertex_enumeration_optimum

INF = float("inf")


def test_lower_and_upper_bound_rows():
    p = LPProblem(
        c=np.array([1.0]),
        constraints=[(np.array([1.0]), ">=", 3.0), (np.array([1.0]), "<=", 10.0)],
    )
    s = solve(p)
    assert s.status == OPTIMAL
    assert s.objective == pytest.approx(3.0, abs=1e-9)


def test_unbounded():
    assert solve(LPProblem(c=np.array([-1.0]), constraints=[])).status == UNBOUNDED


def test_infeasible():
    p = LPProblem(
        c=np.array([0.0]),
        constraints=[(np.array([1.0]), "<=", 1.0), (np.array([1.0]), ">=", 2.0)],
    )
    assert solve(p).status == INFEASIBLE


def test_equalities_and_free_variables():
    p = LPProblem(
        c=np.array([2.0, 1.0]),
        constraints=[(np.array([1.0, 1.0]), "=", 1.0)],
        bounds=[(0.0, INF), (-INF, INF)],
    )
    s = solve(p)
    assert s.status == OPTIMAL
    assert s.objective == pytest.approx(1.0, abs=1e-9)
    assert s.x[0] == pytest.approx(0.0, abs=1e-9)


def test_dict_rows_and_finite_boxes():
    p = LPProblem(
        c=np.array([2.0, 3.0]),
        constraints=[({0: 1.0, 1: 1.0}, ">=", 4.0)],
        bounds=[(0.0, 3.0), (0.0, 3.0)],
    )
    s = solve(p)
    assert s.status == OPTIMAL
    assert s.objective == pytest.approx(9.0, abs=1e-9)
    assert np.allclose(s.x, [3.0, 1.0], atol=1e-9)


def test_negative_lower_bounds():
    p = LPProblem(
        c=np.array([1.0]),
        constraints=[(np.array([1.0]), ">=", -5.0)],
        bounds=[(-INF, INF)],
    )
    s = solve(p)
    assert s.status == OPTIMAL and s.objective == pytest.approx(-5.0)


def test_crossed_bounds_infeasible():
    p = LPProblem(c=np.array([1.0]), constraints=[], bounds=[(2.0, 1.0)])
    assert solve(p).status == INFEASIBLE


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        LPProblem(c=np.array([1.0, 2.0]), constraints=[(np.array([1.0]), "<=", 1.0)])
    with pytest.raises(DimensionMismatch):
        LPProblem(c=np.array([1.0]), constraints=[({3: 1.0}, "<=", 1.0)])
    with pytest.raises(DimensionMismatch):
        LPProblem(c=np.array([1.0]), constraints=[(np.array([1.0]), "!!", 1.0)])
    with pytest.raises(DimensionMismatch):
        LPProblem(c=np.array([1.0]), constraints=[(np.array([1.0]), "<=", INF)])


def test_iteration_limit_status():
    p = LPProblem(
        c=np.array([1.0, 1.0]),
        constraints=[(np.array([1.0, 1.0]), "=", 2.0), (np.array([1.0, -1.0]), "=", 0.0)],
    )
    s = solve(p, max_pivots=0)
    assert s.status == ITERATION_LIMIT
    assert s.x is None and s.objective is None


def test_determinism():
    gen = np.random.default_rng(0)
    A = gen.normal(size=(6, 4))
    b = np.abs(gen.normal(size=6)) + 1.0
    p1 = LPProblem(c=gen.normal(size=4), constraints=[(A[i], "<=", b[i]) for i in range(6)],
                   bounds=[(0.0, 5.0)] * 4)
    s1 = solve(p1)
    s2 = solve(p1)
    assert s1.status == s2.status == OPTIMAL
    assert np.array_equal(s1.x, s2.x)
    assert s1.iterations == s2.iterations


def test_residual_certification_field():
    p = LPProblem(
        c=np.array([1.0, 2.0]),
        constraints=[(np.array([1.0, 1.0]), ">=", 1.0)],
    )
    s = solve(p)
    assert s.status == OPTIMAL
    assert s.max_violation <= 1e-7


def test_vertex_enumeration_oracle_battery():
    gen = np.random.default_rng(42)
    solved = 0
    for trial in range(30):
        n = int(gen.integers(2, 5))
        m = int(gen.integers(1, 7))
        x0 = gen.uniform(0.2, 2.5, size=n)
        rows = []
        for _ in range(m):
            a = gen.normal(size=n)
            rel = ("<=", ">=", "=")[int(gen.integers(0, 3))]
            ax = float(a @ x0)
            if rel == "<=":
                rows.append((a, rel, ax + abs(gen.normal())))
            elif rel == ">=":
                rows.append((a, rel, ax - abs(gen.normal())))
            else:
                rows.append((a, rel, ax))
        bounds = [(0.0, 3.0)] * n
        c = gen.normal(size=n)
        p = LPProblem(c=c, constraints=rows, bounds=bounds)
        s = solve(p)
        assert s.status == OPTIMAL, trial
        expect = vertex_enumeration_optimum(c, rows, bounds)
        assert expect is not None
        assert s.objective == pytest.approx(expect, abs=1e-6), trial
        solved += 1
    assert solved == 30


def test_degenerate_problem():
    # many redundant constraints through the same vertex
    n = 3
    rows = [(np.eye(n)[i], "<=", 1.0) for i in range(n)]
    rows += [(np.ones(n), "<=", 3.0), (np.ones(n), "<=", 3.0)]
    rows += [(np.array([1.0, 1.0, 0.0]), "<=", 2.0)]
    p = LPProblem(c=-np.ones(n), constraints=rows)
    s = solve(p)
    assert s.status == OPTIMAL
    assert s.objective == pytest.approx(-3.0, abs=1e-9)


def test_beale_cycling_example_terminates():
    # the classic cycling instance for naive pivot rules; must terminate at
    # objective -1/20 with x = (1/25, 0, 1, 0)
    p = LPProblem(
        c=np.array([-0.75, 150.0, -0.02, 6.0]),
        constraints=[
            (np.array([0.25, -60.0, -1.0 / 25.0, 9.0]), "<=", 0.0),
            (np.array([0.5, -90.0, -1.0 / 50.0, 3.0]), "<=", 0.0),
            (np.array([0.0, 0.0, 1.0, 0.0]), "<=", 1.0),
        ],
    )
    s = solve(p, max_pivots=10_000)
    assert s.status == OPTIMAL
    assert s.objective == pytest.approx(-0.05, abs=1e-9)
    assert np.allclose(s.x, [0.04, 0.0, 1.0, 0.0], atol=1e-9)


def test_redundant_equalities():
    # second equality is a copy: phase 1 leaves a basic artificial behind
    p = LPProblem(
        c=np.array([1.0, 1.0]),
        constraints=[
            (np.array([1.0, 1.0]), "=", 2.0),
            (np.array([1.0, 1.0]), "=", 2.0),
            (np.array([1.0, -1.0]), "<=", 0.5),
        ],
    )
    s = solve(p)
    assert s.status == OPTIMAL
    assert s.objective == pytest.approx(2.0, abs=1e-9)


def test_write_lp_mps_sections():
    p = LPProblem(
        c=np.array([1.0, -2.0]),
        constraints=[(np.array([1.0, 1.0]), "<=", 4.0), ({1: 1.0}, "=", 1.0)],
        bounds=[(0.0, 10.0), (-INF, INF)],
    )
    buf = io.StringIO()
    write_lp(p, buf)
    text = buf.getvalue()
    for tag in ("NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA", " L  R0", " E  R1", " FR BND X1"):
        assert tag in text
