r"""From lifted matrices back to physical beamformers.

The relaxation drops rank(W) <= 1; in practice the optimizer returns (near)
rank-1 blocks and the leading eigenpair w = sqrt(lam1) v1 is the beamformer.
When a block is materially higher rank (lam2/lam1 above a threshold) we fall
back to Gaussian randomization: draw candidates from CN(0, W), rescale to the
per-antenna caps, and keep the best aggregated MOS among candidates meeting
the SINR floors.

Everything reported downstream is recomputed here from the extracted vectors
with the true (unnormalized) channels and noise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import qoe, spca
from .conic import ConeProgram, Expr
from .linalg import leading_eigenpair

EXTRACTION_TOL = 1e-4      # lam2/lam1 above this triggers randomization
RANDOMIZATION_DRAWS = 100
FLOOR_SLACK = 1e-4         # floors verified as sinr >= Gamma * (1 - slack)
CAP_SLACK = 1e-6
# SINR-target deflations tried by the power reallocation, tightest first;
# targets never drop below the hard floors * (1 - REPAIR_FLOOR_MARGIN)
REPAIR_DEFLATIONS = (1e-6, 1e-4, 1e-3)
REPAIR_FLOOR_MARGIN = 1e-5
SANDWICH_RTOL = 1e-3       # slack left by the objective-stagnation stop

# terminal statuses
OPTIMAL = "optimal"
QOE_RELAXED = "qoe_relaxed"
INFEASIBLE = "infeasible"
SOLVER_FAILURE = "solver_failure"
EXTRACTION_FAILED = "extraction_failed"


@dataclass
class BeamformingSolution:
    status: str
    converged: bool = False
    iterations: int = 0
    lifted: list | None = None
    beams: list | None = None
    extraction_quality: np.ndarray | None = None
    sinr: np.ndarray | None = None
    rate: np.ndarray | None = None
    mos_raw: np.ndarray | None = None
    mos_clipped: np.ndarray | None = None
    solver_mos: np.ndarray | None = None     # per-user MOS implied by z*
    objective: float | None = None           # solver aggregated MOS (incl offsets)
    aggregated_mos: float | None = None      # sum of clipped extracted MOS
    per_antenna_mw: list | None = None
    lam_history: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    randomization_used: bool = False
    warnings: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.status == OPTIMAL


# ============================================================
# extraction
# ============================================================

def extract_rank1(w: np.ndarray, tol: float = EXTRACTION_TOL) -> tuple[np.ndarray, float]:
    """Leading eigenpair extraction w = sqrt(lam1) v1.

    Returns (vector, quality) with quality = lam2/lam1 (0 for a numerically
    zero or 1x1 block); quality <= tol counts as rank-1.
    """
    lam1, v1, lam2 = leading_eigenpair(w)
    if lam1 <= 1e-15:
        return np.zeros(w.shape[0], dtype=complex), 0.0
    return math.sqrt(lam1) * v1, max(lam2, 0.0) / lam1


def per_antenna_usage(p: spca.NetworkProblem, beams: list) -> list:
    """Per-BS vector of summed |w_q|^2 over users, in mW."""
    out = []
    for j in range(p.channels.num_bs):
        usage = np.zeros(p.channels.dim(j))
        for k in range(p.num_users):
            usage += np.abs(beams[k][j]) ** 2
        out.append(usage)
    return out


def _floor_ok(p: spca.NetworkProblem, beams: list) -> bool:
    for k in range(p.num_users):
        g = p.sinr_floors[k]
        if g <= 0.0:
            continue
        if qoe.user_sinr(k, p.channels, beams, p.noise_mw[k]) < g * (1.0 - FLOOR_SLACK):
            return False
    return True


def verify(p: spca.NetworkProblem, beams: list) -> list:
    """Check the original constraints on extracted beams; returns warnings."""
    notes = []
    for j, usage in enumerate(per_antenna_usage(p, beams)):
        caps = p.bs_caps(j)
        worst = float(np.max(usage - caps))
        if worst > CAP_SLACK * max(1.0, float(caps.max())):
            notes.append(f"BS {j}: per-antenna cap exceeded by {worst:.3e} mW")
    if not _floor_ok(p, beams):
        notes.append("SINR floor violated after extraction")
    return notes


def _true_sinr(p: spca.NetworkProblem, lifted: list) -> np.ndarray:
    """Per-user SINR of a lifted design (unit-noise form)."""
    hbar = p.scaled_channels()
    out = np.zeros(p.num_users)
    for k in range(p.num_users):
        sig, inter = 0.0, 0.0
        for l in range(p.num_users):
            got = sum(float(np.real(np.vdot(hbar[k][j], lifted[l][j] @ hbar[k][j])))
                      for j in range(p.channels.num_bs))
            if l == k:
                sig = got
            else:
                inter += got
        out[k] = max(sig, 0.0) / (inter + 1.0)
    return out


def power_reallocation(p: spca.NetworkProblem, lifted: list,
                       sinr_targets: np.ndarray,
                       solver_opts: dict | None = None) -> list | None:
    """Rank-1 redesign: keep each block's dominant direction, re-solve powers.

    The relaxed solver hands back points near the center of a flat face of
    equal-objective designs, which are rarely rank-1, and no tolerance makes
    the stray eigenmass on small secondary blocks vanish.  Fixing every
    block's direction to its leading eigenvector turns the design space into
    per-block powers alpha_{k,j} >= 0, in which the SINR targets and the
    per-antenna caps are linear; any feasible point of that LP is exactly
    rank-1 by construction.  Targets are deflated in a short ladder (the
    discarded eigenmass may have carried some signal) but never below the
    hard floors; None means no rung was feasible.
    """
    hbar = p.scaled_channels()
    num_bs = p.channels.num_bs
    dirs = [[leading_eigenpair(lifted[k][j])[1] for j in range(num_bs)]
            for k in range(p.num_users)]
    # gain[k][l][j]: channel-k power picked up from user l's BS-j direction
    gain = np.zeros((p.num_users, p.num_users, num_bs))
    for k in range(p.num_users):
        for l in range(p.num_users):
            for j in range(num_bs):
                gain[k, l, j] = abs(np.vdot(hbar[k][j], dirs[l][j])) ** 2
    base = np.asarray(sinr_targets, dtype=float)
    floors = p.sinr_floors * (1.0 - REPAIR_FLOOR_MARGIN)
    for defl in REPAIR_DEFLATIONS:
        targets = np.maximum(base * (1.0 - defl), floors)
        prog = ConeProgram()
        names = [[prog.add_scalar(f"a[{k}][{j}]", lower=0.0)
                  for j in range(num_bs)] for k in range(p.num_users)]
        total = Expr()
        for k in range(p.num_users):
            e = Expr()
            for j in range(num_bs):
                e = e + Expr.var(names[k][j], gain[k, k, j])
                for l in range(p.num_users):
                    if l != k:
                        e = e - Expr.var(names[l][j], targets[k] * gain[k, l, j])
                total = total + Expr.var(names[k][j])
            prog.add_linear(e, ">=", targets[k])
        for j in range(num_bs):
            caps = p.bs_caps(j)
            for q in range(p.channels.dim(j)):
                e = Expr()
                for k in range(p.num_users):
                    w = abs(dirs[k][j][q]) ** 2
                    if w > 0.0:
                        e = e + Expr.var(names[k][j], w)
                prog.add_linear(e, "<=", float(caps[q]))
        prog.maximize(-total)
        sol = prog.solve(**spca._loop_opts(solver_opts))
        if sol.status == spca.OPTIMAL:
            return [[sol.scalars[names[k][j]]
                     * np.outer(dirs[k][j], dirs[k][j].conj())
                     for j in range(num_bs)] for k in range(p.num_users)]
    return None


def _sample_from_lifted(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    vals, vecs = np.linalg.eigh(w)
    vals = np.clip(vals, 0.0, None)
    zc = (rng.standard_normal(w.shape[0]) + 1j * rng.standard_normal(w.shape[0])) / math.sqrt(2.0)
    return (vecs * np.sqrt(vals)) @ zc


def _cap_backoff(p: spca.NetworkProblem, beams: list) -> float:
    """Largest common scale <= 1 bringing all per-antenna usages under cap."""
    c = 1.0
    for j, usage in enumerate(per_antenna_usage(p, beams)):
        caps = p.bs_caps(j)
        hot = usage > caps
        if np.any(hot):
            c = min(c, float(np.sqrt(np.min(caps[hot] / usage[hot]))))
    return c


def _profile_mos(p: spca.NetworkProblem, beams: list, profile) -> np.ndarray:
    return np.array([qoe.mos_of_rate(qoe.user_rate(k, p.channels, beams, p.noise_mw[k]),
                                     profile, k)
                     for k in range(p.num_users)])


def gaussian_randomization(p: spca.NetworkProblem, lifted: list, base: list,
                           flagged: list, profile, rng: np.random.Generator,
                           draws: int = RANDOMIZATION_DRAWS) -> list | None:
    """Redraw flagged users' beams from CN(0, W), backing everyone off to the
    caps; returns the floor-feasible candidate with the best aggregated MOS,
    or None if no draw qualifies."""
    best = None
    best_score = -np.inf
    candidates = [base] + [None] * draws
    for d in range(draws):
        cand = [[w.copy() for w in row] for row in base]
        for k in flagged:
            for j in range(p.channels.num_bs):
                cand[k][j] = _sample_from_lifted(lifted[k][j], rng)
        candidates[d + 1] = cand
    for cand in candidates:
        c = _cap_backoff(p, cand)
        if c < 1.0:
            cand = [[c * w for w in row] for row in cand]
        if not _floor_ok(p, cand):
            continue
        score = float(np.sum(np.clip(_profile_mos(p, cand, profile),
                                     *qoe.MOS_REPORT_RANGE)))
        if score > best_score:
            best_score = score
            best = cand
    return best


# ============================================================
# oracles
# ============================================================

def oracle_single_user(h: np.ndarray, caps_mw: np.ndarray, noise_mw: float):
    """Closed-form single-user design under per-antenna caps.

    Per antenna the optimal beam uses full power phase-aligned to the channel,
    w_q = sqrt(P_q) h_q / |h_q|, giving rate log2(1 + (sum_q sqrt(P_q)|h_q|)^2
    / sigma^2).
    """
    h = np.asarray(h, dtype=complex).ravel()
    caps_mw = np.broadcast_to(np.asarray(caps_mw, dtype=float), h.shape)
    w = np.zeros_like(h)
    nz = np.abs(h) > 0
    w[nz] = np.sqrt(caps_mw[nz]) * h[nz] / np.abs(h[nz])
    amp = float(np.sum(np.sqrt(caps_mw[nz]) * np.abs(h[nz])))
    rate = math.log2(1.0 + amp * amp / float(noise_mw))
    return w, rate


# ============================================================
# assembling a BeamformingSolution from an SPCA run
# ============================================================

def _solver_mos_from_z(zvals: np.ndarray, profile) -> np.ndarray:
    if isinstance(profile, qoe.VideoServiceParams):
        return profile.mos_scale * np.log10(np.maximum(zvals, 1e-300)) + profile.mos_offset
    return np.array([profile[k].scale * math.log(max(z, 1e-300)) + profile[k].offset
                     for k, z in enumerate(zvals)])


def finalize(p: spca.NetworkProblem, run: spca.SpcaRun, profile,
             rng: np.random.Generator | None = None, relaxed: bool = False,
             extraction_tol: float = EXTRACTION_TOL,
             draws: int = RANDOMIZATION_DRAWS) -> BeamformingSolution:
    """Extraction, fallback, metric evaluation and constraint verification."""
    if run.status == spca.INIT_INFEASIBLE:
        return BeamformingSolution(status=INFEASIBLE, warnings=list(run.warnings))
    if run.status == spca.SOLVER_FAILURE or run.sol is None:
        return BeamformingSolution(status=SOLVER_FAILURE, warnings=list(run.warnings))

    rng = rng or np.random.default_rng(0)
    layout = run.layout
    lifted = [[run.sol.blocks[name] for name in row] for row in layout.blocks]
    zvals = np.array([run.sol.scalars[name] for name in layout.z])
    solver_mos = _solver_mos_from_z(zvals, profile)

    repair_note = None
    repaired = power_reallocation(p, lifted,
                                  np.maximum(_true_sinr(p, lifted), p.sinr_floors))
    if repaired is None:
        repair_note = "power reallocation failed; extracting the surrogate blocks"
    else:
        lifted = repaired

    beams = []
    quality = np.zeros((p.num_users, p.channels.num_bs))
    for k in range(p.num_users):
        row = []
        traces = [max(float(np.trace(lifted[k][j]).real), 0.0)
                  for j in range(p.channels.num_bs)]
        big = max(traces)
        for j in range(p.channels.num_bs):
            # a numerically-empty block carries no beam; its spectrum is
            # noise and must not trip the rank check
            if big <= 0.0 or traces[j] <= 1e-8 * big:
                row.append(np.zeros(p.channels.dim(j), dtype=complex))
                continue
            w, q = extract_rank1(lifted[k][j], extraction_tol)
            row.append(w)
            quality[k, j] = q
        beams.append(row)

    out = BeamformingSolution(
        status=QOE_RELAXED if relaxed else OPTIMAL,
        converged=run.converged, iterations=run.iterations,
        lifted=lifted, beams=beams, extraction_quality=quality,
        solver_mos=solver_mos, objective=run.trace[-1] if run.trace else None,
        lam_history=list(run.lam_history), trace=list(run.trace),
        warnings=list(run.warnings))
    if repair_note:
        out.warnings.append(repair_note)

    flagged = [k for k in range(p.num_users) if np.any(quality[k] > extraction_tol)]
    notes = verify(p, beams)
    if flagged or notes:
        repaired = gaussian_randomization(p, lifted, beams,
                                          flagged or list(range(p.num_users)),
                                          profile, rng, draws)
        if repaired is None:
            out.status = EXTRACTION_FAILED
            out.warnings += notes or [f"users {flagged}: no randomization draw met the floors"]
        else:
            out.beams = beams = repaired
            out.randomization_used = True
            out.warnings += [f"randomization engaged for users {flagged or 'all'}"]
            leftover = verify(p, beams)
            if leftover:
                out.status = EXTRACTION_FAILED
                out.warnings += leftover

    out.sinr = np.array([qoe.user_sinr(k, p.channels, beams, p.noise_mw[k])
                         for k in range(p.num_users)])
    out.rate = np.log2(1.0 + out.sinr)
    out.mos_raw = _profile_mos(p, beams, profile)
    out.mos_clipped = np.clip(out.mos_raw, *qoe.MOS_REPORT_RANGE)
    out.aggregated_mos = float(np.sum(out.mos_clipped))
    out.per_antenna_mw = per_antenna_usage(p, beams)

    # relaxation sandwich: the surrogate's own MOS should dominate what the
    # extracted design reports.  The objective-stagnation stop can leave the
    # majorant slack by about the stagnation noise, so the check carries a
    # matching tolerance; anything beyond it means a corrupted solve.
    if np.all(np.isfinite(out.mos_raw)):
        bound = float(np.sum(np.clip(solver_mos, *qoe.MOS_REPORT_RANGE)))
        if out.aggregated_mos > bound + SANDWICH_RTOL * max(1.0, abs(bound)):
            out.warnings.append(f"extracted MOS {out.aggregated_mos:.8g} exceeds "
                                f"relaxation bound {bound:.8g}")
    return out
