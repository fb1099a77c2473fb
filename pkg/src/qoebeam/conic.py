r"""Declarative conic programs over real scalars and Hermitian PSD blocks.

A ConeProgram collects scalar variables, Hermitian PSD matrix blocks, and
constraints built from affine expressions (Expr): linear (in)equalities,
second-order cones ||elements|| <= bound, and exponential cones
y * exp(x/y) <= z.  The objective is a linear expression to maximize.

Compilation targets Clarabel.  A Hermitian block W of dimension n is carried
by n^2 real parameters (its diagonal, and Re/Im of the upper triangle); a
block declared with scale c is carried as c * W (coefficients and returned
values are adjusted, so callers always see W -- the scale only changes what
the solver works with).  W >= 0 is imposed on the real symmetric embedding

    E(W) = [[Re W, -Im W], [Im W, Re W]]  (PSD iff W is),

written in scaled-triangle form (column-major upper triangle, off-diagonal
entries times sqrt(2)).  Because blocks are reconstructed from the n^2
parameters, returned matrices are exactly Hermitian.

Inner products use the real pairing: for Hermitian A,
<A, W> = sum_p A_pp W_pp + sum_{p<q} 2 (Re A_pq Re W_pq + Im A_pq Im W_pq).

Text dumps of the full program are available via dump() for debugging and
for freezing fixtures; the format is what dump() prints (one section per
variable kind and cone family, one numbered line per constraint).
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

import clarabel

from .linalg import as_hermitian, is_psd

# solution statuses
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"
NUMERICAL_FAILURE = "numerical_failure"

_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": MAX_ITER,
}


class Expr:
    """Real affine expression: const + sum(coef * scalar) + sum(<A, block>)."""

    __slots__ = ("const", "scalars", "blocks")

    def __init__(self, const: float = 0.0):
        self.const = float(const)
        self.scalars: dict[str, float] = {}
        self.blocks: dict[str, np.ndarray] = {}

    # ---- constructors ----

    @staticmethod
    def var(name: str, coef: float = 1.0) -> "Expr":
        e = Expr()
        e.scalars[name] = float(coef)
        return e

    @staticmethod
    def inner(name: str, mat: np.ndarray) -> "Expr":
        """<mat, block> with Hermitian mat."""
        e = Expr()
        e.blocks[name] = as_hermitian(mat, tol=1e-8)
        return e

    @staticmethod
    def quad(name: str, h: np.ndarray) -> "Expr":
        """h^H W h as <h h^H, W>."""
        h = np.asarray(h, dtype=complex).ravel()
        return Expr.inner(name, np.outer(h, h.conj()))

    # ---- arithmetic ----

    def copy(self) -> "Expr":
        e = Expr(self.const)
        e.scalars = dict(self.scalars)
        e.blocks = {k: v.copy() for k, v in self.blocks.items()}
        return e

    def __add__(self, other):
        e = self.copy()
        if isinstance(other, Expr):
            e.const += other.const
            for k, v in other.scalars.items():
                e.scalars[k] = e.scalars.get(k, 0.0) + v
            for k, v in other.blocks.items():
                e.blocks[k] = e.blocks[k] + v if k in e.blocks else v.copy()
        else:
            e.const += float(other)
        return e

    __radd__ = __add__

    def __mul__(self, c):
        c = float(c)
        e = Expr(self.const * c)
        e.scalars = {k: v * c for k, v in self.scalars.items()}
        e.blocks = {k: v * c for k, v in self.blocks.items()}
        return e

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Expr) else -float(other))

    def __rsub__(self, other):
        return (-self) + float(other)


@dataclass
class ConicSolution:
    status: str
    objective: float | None
    scalars: dict
    blocks: dict
    iterations: int = 0
    primal_residual: float = math.nan
    dual_residual: float = math.nan
    gap: float = math.nan
    solve_time_s: float = 0.0
    raw_status: str = ""
    warnings: list = field(default_factory=list)


class ConeProgram:
    """A conic optimization problem; see the module docstring."""

    def __init__(self):
        self._scalars: dict[str, dict] = {}
        self._blocks: dict[str, dict] = {}
        self._nvar = 0
        self._eq: list[tuple[Expr, float]] = []
        self._ineq: list[tuple[Expr, float]] = []     # expr <= rhs
        self._socs: list[tuple[Expr, list[Expr]]] = []
        self._exps: list[tuple[Expr, Expr, Expr]] = []
        self._objective: Expr = Expr()
        self._next_id = 0

    # ---- variables ----

    def add_scalar(self, name: str, lower: float | None = None) -> str:
        if name in self._scalars or name in self._blocks:
            raise ValueError(f"duplicate variable name {name!r}")
        self._scalars[name] = {"index": self._nvar, "lower": lower}
        self._nvar += 1
        return name

    def add_psd_block(self, name: str, dim: int, scale: float = 1.0) -> str:
        """Hermitian PSD block; `scale` makes the solver carry scale * W,
        which callers use to bring wildly scaled coefficient matrices down
        to O(1) without touching their own bookkeeping."""
        if name in self._scalars or name in self._blocks:
            raise ValueError(f"duplicate variable name {name!r}")
        if dim < 1:
            raise ValueError("block dimension must be >= 1")
        scale = float(scale)
        if not (scale > 0.0 and math.isfinite(scale)):
            raise ValueError("block scale must be positive and finite")
        self._blocks[name] = {"start": self._nvar, "dim": int(dim), "scale": scale}
        self._nvar += dim * dim
        return name

    # ---- constraints ----

    def _cid(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def add_linear(self, expr: Expr, sense: str, rhs: float = 0.0) -> int:
        self._check_expr(expr)
        rhs = float(rhs)
        if sense == "==":
            self._eq.append((expr, rhs))
        elif sense == "<=":
            self._ineq.append((expr, rhs))
        elif sense == ">=":
            self._ineq.append((-expr, -rhs))
        else:
            raise ValueError(f"unknown sense {sense!r}")
        return self._cid()

    def add_soc(self, bound: Expr, elements: list[Expr]) -> int:
        """||(e_1, ..., e_m)||_2 <= bound."""
        self._check_expr(bound)
        for e in elements:
            self._check_expr(e)
        if not elements:
            raise ValueError("second-order cone needs at least one element")
        self._socs.append((bound, list(elements)))
        return self._cid()

    def add_exp(self, x: Expr, y: Expr, z: Expr) -> int:
        """(x, y, z) in the exponential cone: y > 0 and y*exp(x/y) <= z."""
        for e in (x, y, z):
            self._check_expr(e)
        self._exps.append((x, y, z))
        return self._cid()

    def maximize(self, expr: Expr):
        self._check_expr(expr)
        self._objective = expr.copy()

    def _check_expr(self, expr: Expr):
        if not isinstance(expr, Expr):
            raise TypeError("expected an Expr")
        for name in expr.scalars:
            if name not in self._scalars:
                raise ValueError(f"unknown scalar {name!r}")
        for name, mat in expr.blocks.items():
            if name not in self._blocks:
                raise ValueError(f"unknown block {name!r}")
            d = self._blocks[name]["dim"]
            if mat.shape != (d, d):
                raise ValueError(f"coefficient for block {name!r} has shape {mat.shape}, "
                                 f"expected {(d, d)}")

    # ---- structure inspection (used by tests) ----

    def structure(self) -> dict:
        return {
            "scalars": len(self._scalars),
            "psd_blocks": {k: v["dim"] for k, v in self._blocks.items()},
            "eq": len(self._eq),
            "ineq": len(self._ineq) + sum(1 for s in self._scalars.values()
                                          if s["lower"] is not None),
            "soc": len(self._socs),
            "exp": len(self._exps),
        }

    # ---- compilation ----

    def _off_index(self, start: int, dim: int, p: int, q: int) -> int:
        # upper-triangle pairs ordered (0,1),(0,2),(1,2),(0,3)...: column-major
        return start + dim + 2 * (q * (q - 1) // 2 + p)

    def _expr_terms(self, expr: Expr) -> tuple[list[int], list[float], float]:
        cols: list[int] = []
        vals: list[float] = []
        for name, c in expr.scalars.items():
            if c != 0.0:
                cols.append(self._scalars[name]["index"])
                vals.append(c)
        for name, mat in expr.blocks.items():
            blk = self._blocks[name]
            start, dim = blk["start"], blk["dim"]
            # the solver variable is scale * W, so <A, W> = <A / scale, scale * W>
            inv = 1.0 / blk["scale"]
            a = as_hermitian(mat, tol=1e-8)
            for i in range(dim):
                v = float(a[i, i].real) * inv
                if v != 0.0:
                    cols.append(start + i)
                    vals.append(v)
            for q in range(1, dim):
                for p in range(q):
                    re = 2.0 * float(a[p, q].real) * inv
                    im = 2.0 * float(a[p, q].imag) * inv
                    base = self._off_index(start, dim, p, q)
                    if re != 0.0:
                        cols.append(base)
                        vals.append(re)
                    if im != 0.0:
                        cols.append(base + 1)
                        vals.append(im)
        return cols, vals, expr.const

    def _embedding_param(self, name: str, i: int, j: int):
        """Parameter (column, sign) carrying entry (i, j), i <= j, of the real
        embedding of block `name`; None for structural zeros."""
        blk = self._blocks[name]
        start, n = blk["start"], blk["dim"]
        if j < n:                       # Re-block upper triangle
            if i == j:
                return start + i, 1.0
            return self._off_index(start, n, i, j), 1.0
        if i >= n:                      # lower-right copy of Re W
            ip, jp = i - n, j - n
            if ip == jp:
                return start + ip, 1.0
            return self._off_index(start, n, ip, jp), 1.0
        jp = j - n                      # -Im W block: -Y[i, jp], Y antisymmetric
        if i == jp:
            return None
        if i < jp:
            return self._off_index(start, n, i, jp) + 1, -1.0
        return self._off_index(start, n, jp, i) + 1, 1.0

    @staticmethod
    def _row_scale(vals: list[float]) -> float:
        m = max((abs(v) for v in vals), default=0.0)
        return m if m > 0.0 else 1.0

    def _compile(self):
        rows_i: list[int] = []
        cols_i: list[int] = []
        vals_i: list[float] = []
        b: list[float] = []
        cones = []
        row = 0

        def put(r, cols, vals):
            rows_i.extend([r] * len(cols))
            cols_i.extend(cols)
            vals_i.extend(vals)

        # Rows are normalized to unit coefficient scale (per row for linear
        # constraints, per cone for SOC/exp; cones admit positive scaling):
        # channel gains span many orders of magnitude and the solver's own
        # equilibration cannot absorb all of it.

        # zero cone: expr == rhs  ->  s = rhs - expr = 0
        for expr, rhs in self._eq:
            cols, vals, c = self._expr_terms(expr)
            scale = 1.0 / self._row_scale(vals)
            put(row, cols, [v * scale for v in vals])
            b.append((rhs - c) * scale)
            row += 1
        if self._eq:
            cones.append(clarabel.ZeroConeT(len(self._eq)))

        # nonneg cone: expr <= rhs -> s = rhs - expr >= 0; lower bounds x >= lb
        n_nonneg = 0
        for expr, rhs in self._ineq:
            cols, vals, c = self._expr_terms(expr)
            scale = 1.0 / self._row_scale(vals)
            put(row, cols, [v * scale for v in vals])
            b.append((rhs - c) * scale)
            row += 1
            n_nonneg += 1
        for name, s in self._scalars.items():
            if s["lower"] is not None:
                put(row, [s["index"]], [-1.0])
                b.append(-float(s["lower"]))
                row += 1
                n_nonneg += 1
        if n_nonneg:
            cones.append(clarabel.NonnegativeConeT(n_nonneg))

        # second-order cones: s = (bound, elements...)
        for bound, elems in self._socs:
            terms = [self._expr_terms(e) for e in [bound] + list(elems)]
            scale = 1.0 / self._row_scale(
                [v for cols, vals, c in terms for v in vals]
                + [c for cols, vals, c in terms])
            for cols, vals, c in terms:
                put(row, cols, [-v * scale for v in vals])
                b.append(c * scale)
                row += 1
            cones.append(clarabel.SecondOrderConeT(1 + len(elems)))

        # exponential cones: s = (x, y, z); scaling would distort the log
        # relation only if applied per-row, so scale the whole cone
        for triple in self._exps:
            terms = [self._expr_terms(e) for e in triple]
            scale = 1.0 / self._row_scale(
                [v for cols, vals, c in terms for v in vals]
                + [c for cols, vals, c in terms])
            for cols, vals, c in terms:
                put(row, cols, [-v * scale for v in vals])
                b.append(c * scale)
                row += 1
            cones.append(clarabel.ExponentialConeT())

        # PSD cones: s = svec(E(W)); entries are already unit scale
        for name, blk in self._blocks.items():
            m = 2 * blk["dim"]
            for j in range(m):
                for i in range(j + 1):
                    hit = self._embedding_param(name, i, j)
                    if hit is not None:
                        col, sign = hit
                        scale = math.sqrt(2.0) if i < j else 1.0
                        put(row, [col], [-sign * scale])
                    b.append(0.0)
                    row += 1
            cones.append(clarabel.PSDTriangleConeT(m))

        a_mat = sp.csc_matrix((vals_i, (rows_i, cols_i)), shape=(row, self._nvar))
        q = np.zeros(self._nvar)
        cols, vals, obj_const = self._expr_terms(self._objective)
        for c, v in zip(cols, vals):
            q[c] -= v       # maximize -> minimize the negation
        return a_mat, np.asarray(b, dtype=float), cones, q, obj_const

    # ---- solving ----

    def solve(self, feas_tol: float = 1e-7, gap_tol: float = 1e-6,
              max_iter: int = 200, verbose: bool = False) -> ConicSolution:
        if self._nvar == 0:
            # constant program (no variables): trivially optimal
            if self._eq or self._ineq or self._socs or self._exps:
                raise ValueError("constraints on a program with no variables")
            return ConicSolution(status=OPTIMAL, objective=self._objective.const,
                                 scalars={}, blocks={}, raw_status="trivial")

        a_mat, b, cones, q, obj_const = self._compile()
        if a_mat.shape[0] == 0:
            # unconstrained LP: bounded only if the objective is constant
            if np.any(q != 0.0):
                return ConicSolution(status=UNBOUNDED, objective=None,
                                     scalars={}, blocks={}, raw_status="trivial")
            zeros = np.zeros(self._nvar)
            return self._extract(zeros, OPTIMAL, obj_const, raw="trivial")

        p_mat = sp.csc_matrix((self._nvar, self._nvar))
        # Two-rung attempt ladder.  The first rung shrinks the static KKT
        # regularization: at its 1e-8 default it biases the duality gap by
        # ~eps * ||x||^2, which the large lifted power variables turn into a
        # gap floor above tol.  Small or degenerate programs conversely rely
        # on that regularization, so anything short of a clean Solve retries
        # at the solver defaults, where AlmostSolved is also acceptable.
        last = None
        for reg in (1e-12, None):
            settings = clarabel.DefaultSettings()
            settings.verbose = verbose
            settings.max_iter = int(max_iter)
            settings.tol_feas = feas_tol
            settings.tol_gap_abs = gap_tol
            settings.tol_gap_rel = gap_tol
            if reg is not None:
                settings.static_regularization_constant = reg
            solver = clarabel.DefaultSolver(p_mat, q, a_mat, b, cones, settings)
            raw = solver.solve()
            raw_name = str(raw.status).split(".")[-1]
            status = _STATUS_MAP.get(raw_name, NUMERICAL_FAILURE)
            diag = dict(iterations=raw.iterations, raw_status=raw_name,
                        primal_residual=raw.r_prim, dual_residual=raw.r_dual,
                        gap=abs(raw.obj_val - raw.obj_val_dual),
                        solve_time_s=raw.solve_time)
            if reg is None and raw_name in ("InsufficientProgress", "NumericalError") \
                    and raw.r_prim <= 10.0 * feas_tol \
                    and raw.r_dual <= 10.0 * feas_tol \
                    and diag["gap"] <= 1e-2 * max(1.0, abs(raw.obj_val)):
                # the solver gave up (stalled steps or a failed factorization)
                # but its final iterate is clean: residuals at tolerance and
                # only the duality-gap readout short of target.  The iterate
                # is feasible and its objective value is exact, so callers
                # can still use it; the gap cap merely rejects points
                # abandoned far from the optimal face.
                status = OPTIMAL
            if status == NUMERICAL_FAILURE or (reg is not None and raw_name != "Solved"):
                last = ConicSolution(status=NUMERICAL_FAILURE, objective=None,
                                     scalars={}, blocks={}, **diag)
                continue
            if status in (INFEASIBLE, UNBOUNDED, MAX_ITER):
                return ConicSolution(status=status, objective=None, scalars={},
                                     blocks={}, **diag)
            sol = self._extract(np.asarray(raw.x), status, obj_const, raw=raw_name,
                                feas_tol=feas_tol)
            for key, val in diag.items():
                if key != "raw_status":
                    setattr(sol, key, val)
            if sol.status != NUMERICAL_FAILURE:
                return sol
            last = sol
        return last

    def _extract(self, x: np.ndarray, status: str, obj_const: float, raw: str = "",
                 feas_tol: float = 1e-7) -> ConicSolution:
        scalars = {name: float(x[s["index"]]) for name, s in self._scalars.items()}
        raws = {}
        for name, blk in self._blocks.items():
            start, dim = blk["start"], blk["dim"]
            w = np.zeros((dim, dim), dtype=complex)
            for i in range(dim):
                w[i, i] = x[start + i]
            for q_ in range(1, dim):
                for p in range(q_):
                    base = self._off_index(start, dim, p, q_)
                    w[p, q_] = x[base] + 1j * x[base + 1]
                    w[q_, p] = np.conj(w[p, q_])
            raws[name] = w
        # a near-zero block can dip negative by the solver's tolerance on the
        # scale of the whole iterate, not its own, so violations are judged
        # against the largest block magnitude carried by the solve
        scale_ref = max((float(np.abs(np.diagonal(w)).max()) for w in raws.values()
                         if w.size), default=1.0)
        blocks = {}
        warnings = []
        for name, blk in self._blocks.items():
            w = raws[name]
            if not is_psd(w):
                # solver iterates satisfy the cone only to feasibility tolerance;
                # clip eigenvalues within that tolerance, fail beyond it
                vals, vecs = np.linalg.eigh(w)
                floor = -10.0 * feas_tol * max(1.0, float(vals[-1]), scale_ref)
                if vals[0] < floor:
                    status = NUMERICAL_FAILURE
                    warnings.append(f"block {name} violates PSD: lam_min={vals[0]:.3e}")
                else:
                    w = (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T
                    w = (w + w.conj().T) / 2.0
            blocks[name] = w / blk["scale"]
        objective = None
        if status == OPTIMAL:
            objective = obj_const
            for name, c in self._objective.scalars.items():
                objective += c * scalars[name]
            for name, mat in self._objective.blocks.items():
                objective += float(np.real(np.trace(mat.conj().T @ blocks[name])))
        return ConicSolution(status=status, objective=objective, scalars=scalars,
                             blocks=blocks, raw_status=raw, warnings=warnings)

    # ---- debugging ----

    def _fmt_expr(self, expr: Expr) -> str:
        parts = []
        for name, c in expr.scalars.items():
            parts.append(f"{c:+.6g}*{name}")
        for name, mat in expr.blocks.items():
            if mat.shape[0] <= 4:
                body = np.array2string(mat, precision=4, separator=",",
                                       suppress_small=True).replace("\n", " ")
            else:
                body = f"<{mat.shape[0]}x{mat.shape[1]} hermitian>"
            parts.append(f"+tr(A*{name}), A={body}")
        if expr.const or not parts:
            parts.append(f"{expr.const:+.6g}")
        return " ".join(parts)

    def dump(self) -> str:
        out = ["conic program"]
        out.append("scalars:")
        for name, s in self._scalars.items():
            lo = "" if s["lower"] is None else f" >= {s['lower']:g}"
            out.append(f"  {name}{lo}")
        out.append("psd blocks:")
        for name, blk in self._blocks.items():
            out.append(f"  {name}: {blk['dim']}x{blk['dim']} hermitian")
        out.append(f"maximize: {self._fmt_expr(self._objective)}")
        out.append("subject to:")
        for expr, rhs in self._eq:
            out.append(f"  [eq]   {self._fmt_expr(expr)} == {rhs:g}")
        for expr, rhs in self._ineq:
            out.append(f"  [ineq] {self._fmt_expr(expr)} <= {rhs:g}")
        for bound, elems in self._socs:
            body = "; ".join(self._fmt_expr(e) for e in elems)
            out.append(f"  [soc]  ||{body}|| <= {self._fmt_expr(bound)}")
        for x, y, z in self._exps:
            out.append(f"  [exp]  ({self._fmt_expr(x)} | {self._fmt_expr(y)} | "
                       f"{self._fmt_expr(z)}) : y*exp(x/y) <= z")
        return "\n".join(out)
