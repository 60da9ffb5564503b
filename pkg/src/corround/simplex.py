"""Self-contained linear programming solver (no external LP dependency).

Two-phase primal simplex on sparse constraint data. The basis is carried as
a sparse LU factorization (scipy's SuperLU) plus a product-form eta file
that is rebuilt every ~100 pivots, so a single iteration costs two
triangular solves and a handful of O(m) vector sweeps instead of a full
dense-tableau update. Pricing is Devex, switching permanently to Bland's
rule after a long degenerate stall so cycling cannot occur. Every optimal
result is re-verified against the original constraints before it is
returned.

Problems are stated as `min c.x` over rows `(coefficients, relation, rhs)`
with per-variable bounds; coefficients may be dense vectors or {index: value}
dicts (the builders in this package pass dicts).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

RELATIONS = ("<=", "=", ">=")

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
REFACTOR_EVERY = 100
STALL_LIMIT = 1000

INF = float("inf")


class DimensionMismatch(ValueError):
    """A constraint row's width disagrees with the objective's."""


class SolverNumericalError(RuntimeError):
    """The factored basis or the final residual check broke down."""


Coef = Union[np.ndarray, Sequence[float], dict]


@dataclass
class LPProblem:
    """min c.x subject to rows (coef, rel, rhs) and per-variable bounds.

    ``bounds[j]`` is (lower, upper) with +-inf allowed; the default for every
    variable is (0, +inf). rhs values must be finite.
    """

    c: np.ndarray
    constraints: list = field(default_factory=list)
    bounds: Optional[list] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        for pos, (coef, rel, rhs) in enumerate(self.constraints):
            if rel not in RELATIONS:
                raise DimensionMismatch(f"row {pos}: unknown relation {rel!r}")
            if not np.isfinite(rhs):
                raise DimensionMismatch(f"row {pos}: rhs must be finite, got {rhs}")
            if isinstance(coef, dict):
                if coef and (min(coef) < 0 or max(coef) >= n):
                    raise DimensionMismatch(f"row {pos}: column index out of range")
            elif len(coef) != n:
                raise DimensionMismatch(
                    f"row {pos}: width {len(coef)} != objective width {n}"
                )
        if self.bounds is not None and len(self.bounds) != n:
            raise DimensionMismatch("bounds length != objective width")

    @property
    def n(self) -> int:
        return self.c.size

    def row_arrays(self, pos: int) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero (indices, values) of a constraint row."""
        coef = self.constraints[pos][0]
        if isinstance(coef, dict):
            if not coef:
                return np.empty(0, dtype=np.int64), np.empty(0)
            idx = np.fromiter(coef.keys(), dtype=np.int64)
            val = np.fromiter(coef.values(), dtype=float)
            order = np.argsort(idx)
            return idx[order], val[order]
        arr = np.asarray(coef, dtype=float)
        idx = np.flatnonzero(arr)
        return idx, arr[idx]


@dataclass
class LPSolution:
    status: str
    objective: Optional[float]
    x: Optional[np.ndarray]
    iterations: int = 0
    max_violation: float = 0.0


def solve(problem: LPProblem, max_pivots: int = 10 ** 6) -> LPSolution:
    """Two-phase simplex; returns a certified status.

    Optimal solutions satisfy every constraint within 1e-7 absolute and all
    bounds within 1e-9 (verified; violations raise SolverNumericalError).
    """
    std = _Standardized(problem)
    if std.infeasible_bounds:
        return LPSolution(INFEASIBLE, None, None)
    if std.m == 0:
        return _solve_unconstrained(problem, std)

    core = _Core(std.A, std.b, max_pivots)
    core.attach_basis(std.basis0)
    if std.artificials.size:
        phase1_c = np.zeros(std.n_total)
        phase1_c[std.artificials] = 1.0
        status = core.run(phase1_c)
        if status == ITERATION_LIMIT:
            return LPSolution(ITERATION_LIMIT, None, None, core.iterations)
        if status != OPTIMAL:
            # phase 1 is bounded below by 0; unbounded here means breakdown
            raise SolverNumericalError(f"phase 1 ended {status}")
        if core.objective(phase1_c) > FEAS_TOL:
            return LPSolution(INFEASIBLE, None, None, core.iterations)
        core.drive_out_artificials(std.artificial_mask)
        core.refactor()

    forbidden = std.artificial_mask if std.artificials.size else None
    status = core.run(std.c_int, forbidden=forbidden, art_mask=std.artificial_mask)
    if status != OPTIMAL:
        return LPSolution(status, None, None, core.iterations)

    x = std.recover(core.basic_values())
    viol = _max_violation(problem, x)
    if viol > FEAS_TOL:
        raise SolverNumericalError(f"residual check failed: violation {viol:.3e}")
    obj = float(problem.c @ x)
    return LPSolution(OPTIMAL, obj, x, core.iterations, viol)


def _solve_unconstrained(problem: LPProblem, std: "_Standardized") -> LPSolution:
    # no rows at all: each internal variable sits at 0 unless its cost pulls
    # it to +inf
    if np.any(std.c_int < -PIVOT_TOL):
        return LPSolution(UNBOUNDED, None, None)
    x = std.recover(np.empty(0))
    return LPSolution(OPTIMAL, float(problem.c @ x), x, 0, _max_violation(problem, x))


def _max_violation(problem: LPProblem, x: np.ndarray) -> float:
    worst = 0.0
    for pos, (_, rel, rhs) in enumerate(problem.constraints):
        idx, val = problem.row_arrays(pos)
        ax = float(val @ x[idx]) if idx.size else 0.0
        if rel == "<=":
            worst = max(worst, ax - rhs)
        elif rel == ">=":
            worst = max(worst, rhs - ax)
        else:
            worst = max(worst, abs(ax - rhs))
    if problem.bounds is not None:
        for j, (lo, hi) in enumerate(problem.bounds):
            if lo != -INF:
                worst = max(worst, lo - x[j])
            if hi != INF:
                worst = max(worst, x[j] - hi)
    else:
        worst = max(worst, float(max(0.0, -x.min())) if x.size else 0.0)
    return worst


class _Standardized:
    """Rewrite an LPProblem over nonnegative internal variables.

    Finite lower bounds shift variables, finite upper bounds add rows, free
    variables split into a difference of two nonnegatives. Slack/surplus
    columns are appended, rows are sign-normalized to rhs >= 0, and
    artificial columns cover rows with no natural starting basis column.
    """

    def __init__(self, p: LPProblem):
        n = p.n
        bounds = p.bounds if p.bounds is not None else [(0.0, INF)] * n
        self.infeasible_bounds = False
        self.offset = np.zeros(n)
        self.terms: list[list[tuple[int, float]]] = []  # x_j = offset + sum sign*s
        n_int = 0
        extra_rows = []  # (internal_col, cap) for finite upper bounds
        for j, (lo, hi) in enumerate(bounds):
            lo, hi = float(lo), float(hi)
            if lo > hi:
                self.infeasible_bounds = True
                lo = hi
            if lo == -INF and hi == INF:
                self.terms.append([(n_int, 1.0), (n_int + 1, -1.0)])
                n_int += 2
            elif lo != -INF:
                self.offset[j] = lo
                self.terms.append([(n_int, 1.0)])
                if hi != INF:
                    extra_rows.append((n_int, hi - lo))
                n_int += 1
            else:  # lo = -inf, hi finite: x = hi - s
                self.offset[j] = hi
                self.terms.append([(n_int, -1.0)])
                n_int += 1
        self.n_struct = n_int

        rows_i, rows_v, rhs, rels = [], [], [], []
        for pos in range(len(p.constraints)):
            idx, val = p.row_arrays(pos)
            _, rel, b = p.constraints[pos]
            b = float(b)
            if idx.size:
                b -= float(val @ self.offset[idx])
            cols, vals = [], []
            for j, v in zip(idx, val):
                for col, sign in self.terms[j]:
                    cols.append(col)
                    vals.append(v * sign)
            rows_i.append(np.asarray(cols, dtype=np.int64))
            rows_v.append(np.asarray(vals))
            rhs.append(b)
            rels.append(rel)
        for col, cap in extra_rows:
            rows_i.append(np.asarray([col], dtype=np.int64))
            rows_v.append(np.asarray([1.0]))
            rhs.append(float(cap))
            rels.append("<=")

        m = len(rhs)
        self.m = m
        b_arr = np.asarray(rhs)
        flip = b_arr < 0.0
        for r in np.flatnonzero(flip):
            rows_v[r] = -rows_v[r]
            b_arr[r] = -b_arr[r]
            if rels[r] == "<=":
                rels[r] = ">="
            elif rels[r] == ">=":
                rels[r] = "<="
        self.b = b_arr

        # slack/surplus columns and the starting basis
        coo_r, coo_c, coo_v = [], [], []
        for r in range(m):
            coo_r.append(np.full(rows_i[r].size, r, dtype=np.int64))
            coo_c.append(rows_i[r])
            coo_v.append(rows_v[r])
        basis = np.empty(m, dtype=np.int64)
        col = n_int
        artificial = []
        for r in range(m):
            if rels[r] == "<=":
                coo_r.append(np.asarray([r]))
                coo_c.append(np.asarray([col]))
                coo_v.append(np.asarray([1.0]))
                basis[r] = col
                col += 1
            elif rels[r] == ">=":
                coo_r.append(np.asarray([r]))
                coo_c.append(np.asarray([col]))
                coo_v.append(np.asarray([-1.0]))
                if b_arr[r] <= PIVOT_TOL:
                    basis[r] = col
                    col += 1
                else:
                    col += 1
                    coo_r.append(np.asarray([r]))
                    coo_c.append(np.asarray([col]))
                    coo_v.append(np.asarray([1.0]))
                    basis[r] = col
                    artificial.append(col)
                    col += 1
            else:
                coo_r.append(np.asarray([r]))
                coo_c.append(np.asarray([col]))
                coo_v.append(np.asarray([1.0]))
                basis[r] = col
                artificial.append(col)
                col += 1
        self.n_total = col
        if m:
            self.A = sparse.coo_matrix(
                (np.concatenate(coo_v), (np.concatenate(coo_r), np.concatenate(coo_c))),
                shape=(m, self.n_total),
            ).tocsc()
        else:
            self.A = sparse.csc_matrix((0, self.n_total))
        self.basis0 = basis
        self.artificials = np.asarray(artificial, dtype=np.int64)
        self.artificial_mask = np.zeros(self.n_total, dtype=bool)
        self.artificial_mask[self.artificials] = True

        self.c_int = np.zeros(self.n_total)
        for j in range(n):
            for cidx, sign in self.terms[j]:
                self.c_int[cidx] += p.c[j] * sign

    def recover(self, x_int_struct: np.ndarray) -> np.ndarray:
        """Map internal nonnegative variables back to original ones."""
        x = self.offset.copy()
        for j, terms in enumerate(self.terms):
            for col, sign in terms:
                if col < x_int_struct.size:
                    x[j] += sign * x_int_struct[col]
        return x


class _Core:
    """Revised simplex state: basis, LU factors, eta file, basic values."""

    def __init__(self, A: sparse.csc_matrix, b: np.ndarray, max_pivots: int):
        self.A = A
        self.AT = A.T.tocsr()
        self.b = b
        self.m, self.n = A.shape
        self.max_pivots = max_pivots
        self.iterations = 0
        self.basis = None  # set by attach_basis
        self.in_basis = np.zeros(self.n, dtype=bool)
        self.etas: list[tuple[int, np.ndarray]] = []
        self.lu = None
        self.xB = None
        self.bland = False

    def attach_basis(self, basis: np.ndarray):
        self.basis = basis.copy()
        self.in_basis[:] = False
        self.in_basis[self.basis] = True
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis]
        try:
            self.lu = splu(B.tocsc())
        except RuntimeError as exc:
            raise SolverNumericalError(f"singular basis: {exc}") from exc
        self.etas = []
        self.xB = self.lu.solve(self.b)
        np.clip(self.xB, 0.0, None, out=self.xB)

    def ftran(self, col: np.ndarray) -> np.ndarray:
        v = self.lu.solve(col)
        for r, w in self.etas:
            vr = v[r] / w[r]
            if vr != 0.0:
                v -= w * vr
            v[r] = vr
        return v

    def btran(self, g: np.ndarray) -> np.ndarray:
        g = g.copy()
        for r, w in reversed(self.etas):
            s = w @ g
            g[r] = (g[r] - (s - w[r] * g[r])) / w[r]
        return self.lu.solve(g, trans="T")

    def objective(self, c: np.ndarray) -> float:
        return float(c[self.basis] @ self.xB)

    def basic_values(self) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.basis] = self.xB
        return x

    def run(self, c: np.ndarray, forbidden=None, art_mask=None):
        """Minimize c over the current basis; returns a status string.

        Pricing is Devex (reference weights reset on refactor), which keeps
        degenerate plateaus short; a long stall still flips the rule to
        Bland's permanently, which guarantees no cycling. Claimed unbounded
        rays are re-verified against a fresh factorization first.
        """
        if self.basis is None:
            raise SolverNumericalError("no basis attached")
        # dual feasibility is judged relative to the cost magnitude so that
        # round-off in large-coefficient problems cannot masquerade as an
        # improving (or unbounded) direction
        dual_tol = PIVOT_TOL * max(1.0, float(np.abs(c).max()) if c.size else 1.0)
        self.devex = np.ones(self.n)
        stall = 0
        fresh = False
        while True:
            if self.iterations >= self.max_pivots:
                return ITERATION_LIMIT
            y = self.btran(c[self.basis])
            d = c - self.AT.dot(y)
            d[self.in_basis] = 0.0
            if forbidden is not None:
                d[forbidden] = 0.0
            j = self._entering(d, dual_tol)
            if j < 0:
                return OPTIMAL
            w = self.ftran(self.A[:, j].toarray().ravel())
            r, theta = self._leaving(w, art_mask)
            if r < 0:
                # re-verify a ray claim against a fresh factorization before
                # believing it
                if fresh and not self.etas:
                    return UNBOUNDED
                self.refactor()
                self.devex = np.ones(self.n)
                fresh = True
                continue
            fresh = False
            if not self.bland:
                self._devex_update(j, r, w)
            had_etas = len(self.etas)
            self._pivot(j, r, theta, w)
            if len(self.etas) <= had_etas:  # refactor happened inside
                self.devex = np.ones(self.n)
            stall = stall + 1 if theta <= 1e-12 else 0
            if stall >= STALL_LIMIT:
                self.bland = True

    def _entering(self, d: np.ndarray, dual_tol: float) -> int:
        if self.bland:
            neg = np.flatnonzero(d < -dual_tol)
            return int(neg[0]) if neg.size else -1
        neg = d < -dual_tol
        if not np.any(neg):
            return -1
        score = np.where(neg, d * d / self.devex, -1.0)
        return int(np.argmax(score))

    def _devex_update(self, j: int, r: int, w: np.ndarray):
        """Forrest-Goldfarb reference weight update after pivoting on row r."""
        alpha_q = w[r]
        if abs(alpha_q) <= PIVOT_TOL:
            return
        er = np.zeros(self.m)
        er[r] = 1.0
        row = self.AT.dot(self.btran(er))
        gamma_q = self.devex[j]
        np.maximum(self.devex, (row / alpha_q) ** 2 * gamma_q, out=self.devex)
        self.devex[self.basis[r]] = max(gamma_q / alpha_q ** 2, 1.0)
        self.devex[j] = max(gamma_q / alpha_q ** 2, 1.0)

    def _leaving(self, w: np.ndarray, art_mask) -> tuple[int, float]:
        if art_mask is not None:
            # never let a basic artificial turn positive: kick it out at
            # zero step as soon as its row carries weight
            art_rows = np.flatnonzero(art_mask[self.basis] & (np.abs(w) > PIVOT_TOL))
            if art_rows.size:
                r = int(art_rows[np.argmin(self.basis[art_rows])])
                return r, 0.0
        cand = np.flatnonzero(w > PIVOT_TOL)
        if cand.size == 0:
            return -1, 0.0
        ratios = self.xB[cand] / w[cand]
        theta = ratios.min()
        near = cand[ratios <= theta + 1e-12]
        if self.bland:
            r = int(near[np.argmin(self.basis[near])])
        else:
            # among tied rows take the largest pivot element: fewer
            # degenerate revisits and a better-conditioned basis
            r = int(near[np.argmax(w[near])])
        return r, max(theta, 0.0)

    def _pivot(self, j: int, r: int, theta: float, w: np.ndarray):
        if theta != 0.0:
            self.xB -= theta * w
        self.xB[r] = theta
        np.clip(self.xB, 0.0, None, out=self.xB)
        self.in_basis[self.basis[r]] = False
        self.in_basis[j] = True
        self.basis[r] = j
        self.etas.append((r, w))
        self.iterations += 1
        if len(self.etas) >= REFACTOR_EVERY:
            self.refactor()

    def drive_out_artificials(self, art_mask: np.ndarray):
        """Replace basic artificials by structural columns at zero step.

        Rows whose artificial cannot be replaced (all-zero row in the
        current tableau) are linearly dependent; their artificial stays
        basic at value 0 and is handled by the ratio test's kick rule.
        """
        for r in range(self.m):
            if not art_mask[self.basis[r]]:
                continue
            er = np.zeros(self.m)
            er[r] = 1.0
            rho = self.btran(er)
            row = self.AT.dot(rho)
            row[self.in_basis] = 0.0
            row[art_mask] = 0.0
            cands = np.flatnonzero(np.abs(row) > 1e-7)
            if cands.size:
                j = int(cands[0])
                w = self.ftran(self.A[:, j].toarray().ravel())
                if abs(w[r]) > PIVOT_TOL:
                    self._pivot(j, r, 0.0, w)


def write_lp(problem: LPProblem, f: TextIO, name: str = "CORROUND") -> None:
    """Dump a problem in fixed MPS format for cross-checking externally."""
    f.write(f"NAME          {name}\n")
    f.write("ROWS\n")
    f.write(" N  COST\n")
    tag = {"<=": "L", ">=": "G", "=": "E"}
    for pos, (_, rel, _) in enumerate(problem.constraints):
        f.write(f" {tag[rel]}  R{pos}\n")
    f.write("COLUMNS\n")
    cols: dict[int, list[tuple[str, float]]] = {j: [] for j in range(problem.n)}
    for j in range(problem.n):
        if problem.c[j] != 0.0:
            cols[j].append(("COST", float(problem.c[j])))
    for pos in range(len(problem.constraints)):
        idx, val = problem.row_arrays(pos)
        for j, v in zip(idx, val):
            cols[int(j)].append((f"R{pos}", float(v)))
    for j in range(problem.n):
        for rowname, v in cols[j]:
            f.write(f"    X{j}  {rowname}  {v!r}\n")
    f.write("RHS\n")
    for pos, (_, _, rhs) in enumerate(problem.constraints):
        if rhs != 0.0:
            f.write(f"    RHS  R{pos}  {float(rhs)!r}\n")
    f.write("BOUNDS\n")
    bounds = problem.bounds if problem.bounds is not None else [(0.0, INF)] * problem.n
    for j, (lo, hi) in enumerate(bounds):
        if lo == -INF and hi == INF:
            f.write(f" FR BND X{j}\n")
            continue
        if lo not in (0.0, -INF):
            f.write(f" LO BND X{j}  {float(lo)!r}\n")
        if lo == -INF:
            f.write(f" MI BND X{j}\n")
        if hi != INF:
            f.write(f" UP BND X{j}  {float(hi)!r}\n")
    f.write("ENDATA\n")
