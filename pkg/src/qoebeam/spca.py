r"""Shared machinery for the lifted beamforming designs.

Both service designs optimize over lifted per-(user, BS) matrices W_{k,j}
(relaxations of w w^H) under per-antenna power caps and collapsed SINR
floors, and both replace the nonconvex SINR-to-auxiliary coupling

    t_k <= 1 + SINR_k   i.e.   t_k * s_k <= signal_k + s_k

(with s_k an upper bound on interference + noise) by the convex majorant

    lam/2 * t^2 + 1/(2 lam) * s^2 >= t s   (equality iff lam = s/t),

then iterate: solve the convex surrogate, set lam <- s*/t*, stop when
max_k |lam_k* - lam_k| <= eps.  Each iterate is feasible for the original
problem (the majorant tightens the true constraint), so the objective trace
is non-decreasing and any iterate is a valid design.

Channels are rescaled by 1/sigma_k inside the builders so the effective
noise is 1; SINRs, rates and the power variables are unchanged by this.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet
from .conic import ConeProgram, Expr, INFEASIBLE, OPTIMAL

DEFAULT_EPS = 1e-3
DEFAULT_MAX_ITER = 30


def majorant_gap(lam, t, s):
    """Slack of the surrogate inequality, lam/2 t^2 + s^2/(2 lam) - t s.

    Non-negative for every positive (lam, t, s) by AM-GM and zero exactly at
    lam = s/t, which is what makes the s/t update a fixed-point iteration.
    """
    lam = np.asarray(lam, dtype=float)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return 0.5 * lam * t * t + s * s / (2.0 * lam) - t * s


# SPCA run statuses
CONVERGED = "converged"
MAX_ITER_REACHED = "max_iter"
STALLED = "stalled"              # solver failed mid-loop; previous iterate kept
INIT_INFEASIBLE = "infeasible"
SOLVER_FAILURE = "solver_failure"


@dataclass
class NetworkProblem:
    """Channels plus the constraint data shared by both designs."""
    channels: ChannelSet
    mbs_caps_mw: np.ndarray       # per-antenna caps at the MBS, (M,)
    sbs_caps_mw: np.ndarray       # per-antenna caps per SBS, (num_small, N)
    noise_mw: np.ndarray          # per-user noise power, (K,)
    sinr_floors: np.ndarray       # collapsed per-user floors (linear), (K,)

    def __post_init__(self):
        k = self.channels.num_users
        self.mbs_caps_mw = np.atleast_1d(np.asarray(self.mbs_caps_mw, dtype=float))
        self.sbs_caps_mw = np.asarray(self.sbs_caps_mw, dtype=float).reshape(
            self.channels.num_small, -1) if self.channels.num_small else np.zeros((0, 0))
        self.noise_mw = np.broadcast_to(np.asarray(self.noise_mw, dtype=float), (k,)).copy()
        self.sinr_floors = np.broadcast_to(np.asarray(self.sinr_floors, dtype=float), (k,)).copy()
        if self.mbs_caps_mw.size != self.channels.dim(0):
            raise ValueError("MBS cap vector does not match the antenna count")
        if self.channels.num_small and self.sbs_caps_mw.shape[1] != self.channels.dim(1):
            raise ValueError("SBS cap vector does not match the antenna count")
        if np.any(self.mbs_caps_mw <= 0) or (self.sbs_caps_mw.size and
                                             np.any(self.sbs_caps_mw <= 0)):
            raise ValueError("power caps must be positive")
        if np.any(self.noise_mw <= 0):
            raise ValueError("noise power must be positive")
        if np.any(self.sinr_floors < 0):
            raise ValueError("SINR floors must be non-negative")

    @property
    def num_users(self) -> int:
        return self.channels.num_users

    def bs_caps(self, j: int) -> np.ndarray:
        return self.mbs_caps_mw if j == 0 else self.sbs_caps_mw[j - 1]

    def scaled_channels(self) -> list:
        """Channel vectors divided by the user's noise std (unit-noise form)."""
        return [[self.channels.vector(k, j) / math.sqrt(self.noise_mw[k])
                 for j in range(self.channels.num_bs)]
                for k in range(self.num_users)]


@dataclass
class ProblemLayout:
    """Variable names a builder hands back so the loop and the extraction
    stage can read the solution."""
    blocks: list            # blocks[k][j] -> PSD block name
    z: list                 # QoE auxiliary per user
    t: list                 # the auxiliary whose ratio updates lam (t or t2)
    s: list                 # interference-plus-noise bound per user
    report_offset: float    # constant completing the aggregated-MOS objective
    extras: dict = field(default_factory=dict)


# ============================================================
# shared constraint groups
# ============================================================

def add_lifted_blocks(prog: ConeProgram, p: NetworkProblem) -> list:
    """One PSD block per (user, BS).  Blocks of BS j are declared with scale
    max_k ||hbar_kj||^2 so the channel quadratics reach the solver at O(1);
    without this the strongest small-cell gains (~1e5 after noise scaling)
    swamp every other coefficient in their rows."""
    hbar = p.scaled_channels()
    gains = []
    for j in range(p.channels.num_bs):
        g = max(float(np.vdot(hbar[k][j], hbar[k][j]).real)
                for k in range(p.num_users))
        gains.append(g if g > 0.0 else 1.0)
    names = []
    for k in range(p.num_users):
        names.append([prog.add_psd_block(f"W[{k}][{j}]", p.channels.dim(j),
                                         scale=gains[j])
                      for j in range(p.channels.num_bs)])
    return names


def signal_expr(k: int, blocks: list, hbar: list) -> Expr:
    e = Expr()
    for j, name in enumerate(blocks[k]):
        e = e + Expr.quad(name, hbar[k][j])
    return e


def interference_expr(k: int, blocks: list, hbar: list) -> Expr:
    e = Expr()
    for l, row in enumerate(blocks):
        if l == k:
            continue
        for j, name in enumerate(row):
            e = e + Expr.quad(name, hbar[k][j])
    return e


def max_received_signal(p: NetworkProblem) -> np.ndarray:
    """Per-user ceiling on the useful received power (unit-noise form).

    Full per-antenna power, phases aligned to the user's channel, summed
    non-coherently over the base stations: sig_k <= sum_j (sum_q
    sqrt(P_jq) |hbar_kjq|)^2.  No beamformer can do better, so the value
    bounds the reachable SINR and anchors the lam safeguard below.
    """
    hbar = p.scaled_channels()
    out = np.zeros(p.num_users)
    for k in range(p.num_users):
        total = 0.0
        for j in range(p.channels.num_bs):
            amp = np.sqrt(np.asarray(p.bs_caps(j), dtype=float))
            total += float(np.sum(amp * np.abs(hbar[k][j])) ** 2)
        out[k] = total
    return out


def received_power_alias(prog: ConeProgram, k: int, blocks: list, hbar: list,
                         s_name: str, scale: float = 1.0) -> str:
    """Scalar u_k with scale * u_k == signal_k + s_k as a linear equality.

    Channel gains span many orders of magnitude; hiding them behind an alias
    keeps the majorant SOC at O(1) coefficients, and the equality row is
    rescaled on its own during compilation.  `scale` lets the caller match
    the alias coefficient to the other cone entries.
    """
    name = f"u[{k}]"
    prog.add_scalar(name)
    prog.add_linear(signal_expr(k, blocks, hbar) + Expr.var(s_name)
                    - Expr.var(name, scale), "==", 0.0)
    return name


def add_power_constraints(prog: ConeProgram, p: NetworkProblem, blocks: list):
    """Per-antenna caps: sum_k W_{k,j}[q,q] <= P_{j,q}."""
    for j in range(p.channels.num_bs):
        dim = p.channels.dim(j)
        caps = p.bs_caps(j)
        for q in range(dim):
            d = np.zeros((dim, dim))
            d[q, q] = 1.0
            e = Expr()
            for k in range(p.num_users):
                e = e + Expr.inner(blocks[k][j], d)
            prog.add_linear(e, "<=", float(caps[q]))


def add_floor_constraints(prog: ConeProgram, p: NetworkProblem, blocks: list,
                          hbar: list):
    """(1 + 1/Gamma_k) * signal_k - total_k >= 1 in unit-noise form; floors of
    zero are vacuous and skipped."""
    for k in range(p.num_users):
        g = p.sinr_floors[k]
        if g <= 0.0:
            continue
        sig = signal_expr(k, blocks, hbar)
        total = sig + interference_expr(k, blocks, hbar)
        prog.add_linear(sig * (1.0 + 1.0 / g) - total, ">=", 1.0)


# ============================================================
# feasibility initialization
# ============================================================

@dataclass
class InitState:
    feasible: bool
    slack: float | None = None
    lifted: list | None = None
    sinr0: np.ndarray | None = None
    t0: np.ndarray | None = None
    s0: np.ndarray | None = None
    lam0: np.ndarray | None = None
    raw_status: str = ""


# the surrogate loop needs feasible iterates more than tight gaps; 1e-6 sits
# at the edge of what the worst-conditioned iterations can certify
LOOP_SOLVER_OPTS = {"gap_tol": 1e-5}


def _loop_opts(solver_opts: dict | None) -> dict:
    opts = dict(LOOP_SOLVER_OPTS)
    opts.update(solver_opts or {})
    return opts


def init_lambda(p: NetworkProblem, solver_opts: dict | None = None) -> InitState:
    """Feasibility SDP: maximize the worst per-user floor slack.

    delta* >= 0 certifies that the SINR floors are jointly reachable under the
    per-antenna caps; the maximizer W0 seeds lam_k = s_k / t_k with
    t0 = 1 + SINR_k(W0) and s0 = interference_k(W0) + 1 (unit noise), at which
    the surrogate holds with equality, so the first SPCA iterate is feasible.
    """
    hbar = p.scaled_channels()
    prog = ConeProgram()
    blocks = add_lifted_blocks(prog, p)
    prog.add_scalar("slack")
    for k in range(p.num_users):
        sig = signal_expr(k, blocks, hbar)
        inter = interference_expr(k, blocks, hbar)
        g = p.sinr_floors[k]
        prog.add_linear(sig - inter * g - Expr.var("slack"), ">=", g)
    add_power_constraints(prog, p, blocks)
    prog.maximize(Expr.var("slack"))
    sol = prog.solve(**_loop_opts(solver_opts))
    if sol.status != OPTIMAL:
        return InitState(feasible=False, raw_status=sol.raw_status or sol.status)
    slack = sol.scalars["slack"]
    if slack < -1e-9:
        return InitState(feasible=False, slack=slack, raw_status=sol.raw_status)
    lifted = [[sol.blocks[name] for name in row] for row in blocks]
    sig = np.zeros(p.num_users)
    inter = np.zeros(p.num_users)
    for k in range(p.num_users):
        for l in range(p.num_users):
            got = sum(float(np.real(np.vdot(hbar[k][j], lifted[l][j] @ hbar[k][j])))
                      for j in range(len(lifted[l])))
            if l == k:
                sig[k] = max(got, 0.0)
            else:
                inter[k] += got
    # the slack maximizer blasts full power, so with loose floors it is an
    # interference-heavy extreme whose s/t ratios would seed lam far from any
    # fixed point; back the power off to the smallest common multiple that
    # still meets every floor (alpha -> 1 as the floors tighten)
    active = p.sinr_floors > 0.0
    if np.any(active):
        g = p.sinr_floors[active]
        alpha = float(np.max(g / (sig[active] - g * inter[active])))
        alpha = min(max(alpha, 0.0), 1.0)
    else:
        alpha = 0.0
    lifted = [[alpha * w for w in row] for row in lifted]
    s0 = alpha * inter + 1.0
    sinr0 = alpha * sig / s0
    t0 = 1.0 + sinr0
    lam0 = s0 / t0
    return InitState(feasible=True, slack=slack, lifted=lifted, sinr0=sinr0,
                     t0=t0, s0=s0, lam0=lam0, raw_status=sol.raw_status)


# ============================================================
# the surrogate loop
# ============================================================

# once the objective is flat at solver precision over this many consecutive
# iterations, further lam polishing cannot move the answer
STAGNATION_WINDOW = 3


@dataclass
class SpcaRun:
    status: str
    init: InitState
    sol: object = None
    layout: ProblemLayout | None = None
    lam_history: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""
    warnings: list = field(default_factory=list)


def run_spca(p: NetworkProblem, build, eps: float = DEFAULT_EPS,
             max_iter: int = DEFAULT_MAX_ITER,
             solver_opts: dict | None = None) -> SpcaRun:
    """Iterate `build(p, lam) -> (ConeProgram, ProblemLayout)` to convergence.

    Stops when max_k |lam_k_new - lam_k| / lam_k <= eps (relative max-norm;
    lam spans decades since lam_k ~ 1/SINR_k, so an absolute test would stop
    the high-SINR users while their surrogate is still slack), or when the
    objective stagnates at solver precision.  A solver failure after at
    least one success returns with status "stalled"; on the first iterate
    it is fatal.

    The run keeps an incumbent: the iterate with the best primal objective
    seen so far.  With exact inner solves every iterate improves on the
    last (the surrogate always contains it), but on hard late instances the
    inner solver can return a certified-optimal point that is slightly
    worse than the previous one; its objective value is still exact, so
    max-tracking restores monotonicity without trusting optimality claims.
    lam always marches from the latest solve.

    lam updates are clamped from below at 1 / (1 + max signal): s >= 1 plus
    the majorant make any lam below 1 / (2 max signal + 2) infeasible, and
    every fixed point s*^2 / (s* + sig*) sits at or above the clamp, so the
    clamp only blocks noise-driven undershoot, never a real direction.
    """
    init = init_lambda(p, solver_opts)
    if not init.feasible:
        return SpcaRun(status=INIT_INFEASIBLE, init=init)
    lam_floor = 1.0 / (1.0 + max_received_signal(p))
    lam = np.maximum(init.lam0, lam_floor)
    run = SpcaRun(status=MAX_ITER_REACHED, init=init, lam_history=[lam.copy()])
    opts = _loop_opts(solver_opts)
    best = -np.inf
    for it in range(1, max_iter + 1):
        prog, layout = build(p, lam)
        sol = prog.solve(**opts)
        if sol.status != OPTIMAL:
            if run.sol is None:
                run.status = SOLVER_FAILURE
                run.warnings.append(f"iteration {it}: solver status {sol.status}")
                return run
            run.status = STALLED
            run.warnings.append(f"iteration {it}: solver status {sol.status}; "
                                "keeping the incumbent")
            return run
        run.iterations = it
        obj = sol.objective + layout.report_offset
        if obj > best:
            best = obj
            run.sol = sol
            run.layout = layout
        run.trace.append(best)
        t_scale = layout.extras.get("t_scale")
        lam_new = np.array([max(sol.scalars[layout.s[k]], 1.0)
                            / (sol.scalars[layout.t[k]]
                               * (1.0 if t_scale is None else t_scale[k]))
                            for k in range(p.num_users)])
        lam_new = np.maximum(lam_new, lam_floor)
        run.lam_history.append(lam_new.copy())
        if float(np.max(np.abs(lam_new - lam) / lam)) <= eps:
            run.status = CONVERGED
            run.converged = True
            run.stop_reason = "lambda"
            return run
        if len(run.trace) > STAGNATION_WINDOW:
            recent = run.trace[-(STAGNATION_WINDOW + 1):]
            span = max(recent) - min(recent)
            # the solver resolves the objective to ~gap_tol of its own
            # (offset-free) magnitude; spans below that are pure noise
            noise = opts.get("gap_tol", 1e-6) * max(1.0, abs(sol.objective))
            if span <= 5.0 * noise:
                run.status = CONVERGED
                run.converged = True
                run.stop_reason = "objective"
                return run
        lam = lam_new
    return run
