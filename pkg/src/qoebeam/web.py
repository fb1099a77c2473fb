r"""Aggregated web-browsing MOS maximization via SDR + the surrogate loop.

Per user k the lifted relaxation carries z_k (the rate-to-page-size ratio
B R_k / FS_k whose log is the MOS), t_k (a lower bound on 1 + SINR_k) and
s_k (an upper bound on interference + noise, unit-noise form):

    maximize   sum_k scale_k * ln z_k           (+ offsets, re-added in reports)
    s.t.       exp(z_k * FS_k ln2 / B) <= t_k                  [exp cone]
               lam_k/2 t_k^2 + 1/(2 lam_k) s_k^2 <= signal_k + s_k   [SOC]
               interference_k + 1 <= s_k                       [linear]
               per-antenna caps, collapsed SINR floors, W >= 0

The SOC row is the convex majorant of t_k s_k <= signal_k + s_k and is exact
at lam_k = s_k / t_k, which the outer loop enforces at convergence.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import solution, spca
from .conic import ConeProgram, Expr
from .qoe import LN2, MOS_REPORT_RANGE, QoeRequirement, web_sinr_threshold
from .solution import BeamformingSolution


@dataclass
class WebProblemSpec(spca.NetworkProblem):
    service: list = None            # WebServiceParams per user
    requirement: QoeRequirement = None

    def __post_init__(self):
        super().__post_init__()
        if self.service is None or len(self.service) != self.num_users:
            raise ValueError("need one WebServiceParams per user")
        if self.requirement is not None and \
                self.requirement.mos_min.size != self.num_users:
            raise ValueError("requirement arrays must match the user count")


def web_problem(channels, mbs_caps_mw, sbs_caps_mw, noise_mw, service,
                requirement: QoeRequirement) -> WebProblemSpec:
    """Build the spec with collapsed floors max(sinr_min, A(mos_min)).

    mos_min at or below the reporting floor is vacuous (clipped MOS can
    never fall below it) and adds no SINR requirement.
    """
    floors = np.array([max(float(requirement.sinr_min[k]),
                           web_sinr_threshold(float(requirement.mos_min[k]), service[k])
                           if requirement.mos_min[k] > MOS_REPORT_RANGE[0] else 0.0)
                       for k in range(len(service))])
    return WebProblemSpec(channels=channels, mbs_caps_mw=mbs_caps_mw,
                          sbs_caps_mw=sbs_caps_mw, noise_mw=noise_mw,
                          sinr_floors=floors, service=service, requirement=requirement)


def build_relaxed_web(p: WebProblemSpec, lam: np.ndarray):
    """One convex surrogate instance at multiplier vector `lam`."""
    prog = ConeProgram()
    hbar = p.scaled_channels()
    blocks = spca.add_lifted_blocks(prog, p)
    z, t, s, lnz = [], [], [], []
    obj = Expr()
    offset = 0.0
    # t_k tracks 1 + SINR_k ~ 1/lam_k, which reaches 1e6..1e8 on isolated
    # users; solve for tau_k = t_k / c_k instead so every cone sees O(1)
    # values, and fold ln c_k into the rate link
    t_scale = np.maximum(1.0, 1.0 / lam)
    for k in range(p.num_users):
        svc = p.service[k]
        c = float(t_scale[k])
        z.append(prog.add_scalar(f"z[{k}]"))
        t.append(prog.add_scalar(f"t[{k}]"))
        # s >= 1 holds structurally (noise alone); the explicit bound keeps
        # the solver honest where the interference row is badly scaled
        s.append(prog.add_scalar(f"s[{k}]", lower=1.0))
        lnz.append(prog.add_scalar(f"lnz[{k}]"))
        # recenter ln z around its value at the surrogate target t ~ 1/lam so
        # the solver-side objective stays O(1); otherwise the MOS intercepts
        # inflate |objective| and the solver's relative gap criterion lets the
        # iterates wobble at ~1e-3
        zhat = svc.bandwidth_hz * math.log(max(1.0 / lam[k], 2.0)) \
            / (svc.page_size_bits * LN2)
        ref = math.log(max(zhat, 1e-9))
        obj = obj + Expr.var(lnz[k], svc.scale) + svc.scale * ref
        offset += svc.offset
        # objective epigraph: lnz + ref <= ln z
        prog.add_exp(Expr.var(lnz[k]) + ref, Expr(1.0), Expr.var(z[k]))
        # rate link: z * FS ln2 / B <= ln(c * tau) = ln c + ln tau
        coef = svc.page_size_bits * LN2 / svc.bandwidth_hz
        prog.add_exp(Expr.var(z[k], coef) - math.log(c), Expr(1.0),
                     Expr.var(t[k]))
        # majorant of t*s <= signal + s (rotated cone against u = signal + s)
        cu = max(1.0, math.sqrt(2.0 / lam[k]))
        u = Expr.var(spca.received_power_alias(prog, k, blocks, hbar, s[k], cu),
                     cu)
        prog.add_soc(u + 1.0,
                     [Expr.var(t[k], math.sqrt(2.0 * lam[k]) * c),
                      Expr.var(s[k], math.sqrt(2.0 / lam[k])),
                      u - 1.0])
        # interference bound (unit noise)
        prog.add_linear(spca.interference_expr(k, blocks, hbar) - Expr.var(s[k]),
                        "<=", -1.0)
    spca.add_power_constraints(prog, p, blocks)
    spca.add_floor_constraints(prog, p, blocks, hbar)
    prog.maximize(obj)
    return prog, spca.ProblemLayout(blocks=blocks, z=z, t=t, s=s,
                                    report_offset=offset,
                                    extras={"t_scale": t_scale})


def spca_solve_web(p: WebProblemSpec, eps: float = spca.DEFAULT_EPS,
                   max_iter: int = spca.DEFAULT_MAX_ITER,
                   rng: np.random.Generator | None = None,
                   relax_qoe: bool = True,
                   solver_opts: dict | None = None) -> BeamformingSolution:
    """Full pipeline: init, surrogate loop, extraction, verification.

    If the QoE floors make the drop infeasible the solve is retried with the
    plain QoS floors (sinr_min only) and the result flagged "qoe_relaxed".
    """
    run = spca.run_spca(p, build_relaxed_web, eps, max_iter, solver_opts)
    used, relaxed = p, False
    if run.status == spca.INIT_INFEASIBLE and relax_qoe and p.requirement is not None \
            and np.any(p.sinr_floors > p.requirement.sinr_min + 1e-12):
        fallback = dataclasses.replace(p, sinr_floors=p.requirement.sinr_min.copy())
        rerun = spca.run_spca(fallback, build_relaxed_web, eps, max_iter, solver_opts)
        if rerun.status not in (spca.INIT_INFEASIBLE, spca.SOLVER_FAILURE):
            run, used, relaxed = rerun, fallback, True
    return solution.finalize(used, run, p.service, rng, relaxed=relaxed)
