r"""Aggregated video-MOS maximization via SDR + the surrogate loop.

The video score is g log10(PSNR) + e with PSNR following a fitted square-root
law of the bitrate B R.  Writing t1 = sqrt(B R), the PSNR bound

    z <= u + (v / sqrt(r)) (t1 - r / t1)

splits into the hyperbolic constraint p t1 >= r (rotated SOC) plus the linear
row t1 - p >= (sqrt(r)/v)(z - u); t1 itself is tied to the auxiliary
t2 <= 1 + SINR through B log2(t2) >= t1^2 (an exp-cone epigraph of ln t2 and
one rotated SOC).  The t2/s coupling uses the same majorant as the web
design, so the surrogate loop updates lam_k = s_k / t2_k.

z_k has no upper bound; concavity of the objective and the power caps keep
the problem bounded.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import solution, spca
from .conic import ConeProgram, Expr
from .qoe import LN2, MOS_REPORT_RANGE, QoeRequirement, VideoServiceParams, \
    video_sinr_threshold
from .solution import BeamformingSolution

# keeps r/t1 bounded and B R strictly above the PSNR model floor
_T1_FLOOR_PAD = 1e-9


@dataclass
class VideoProblemSpec(spca.NetworkProblem):
    service: VideoServiceParams = None
    requirement: QoeRequirement = None

    def __post_init__(self):
        super().__post_init__()
        if not isinstance(self.service, VideoServiceParams):
            raise ValueError("service must be a VideoServiceParams")
        if self.requirement is not None and \
                self.requirement.mos_min.size != self.num_users:
            raise ValueError("requirement arrays must match the user count")


def video_problem(channels, mbs_caps_mw, sbs_caps_mw, noise_mw,
                  service: VideoServiceParams,
                  requirement: QoeRequirement) -> VideoProblemSpec:
    """Build the spec with collapsed floors max(sinr_min, A(mos_min)); a
    mos_min at or below the reporting floor is vacuous (clipped MOS can
    never fall below it) and adds no SINR requirement."""
    floors = np.array([max(float(requirement.sinr_min[k]),
                           video_sinr_threshold(float(requirement.mos_min[k]), service)
                           if requirement.mos_min[k] > MOS_REPORT_RANGE[0] else 0.0)
                       for k in range(channels.num_users)])
    return VideoProblemSpec(channels=channels, mbs_caps_mw=mbs_caps_mw,
                            sbs_caps_mw=sbs_caps_mw, noise_mw=noise_mw,
                            sinr_floors=floors, service=service,
                            requirement=requirement)


def build_relaxed_video(p: VideoProblemSpec, lam: np.ndarray):
    prog = ConeProgram()
    hbar = p.scaled_channels()
    blocks = spca.add_lifted_blocks(prog, p)
    svc = p.service
    sqrt_r = math.sqrt(svc.rate_scale_bps)
    z, t2, s, lnz = [], [], [], []
    obj = Expr()
    # solve for tau_k = t2_k / c_k so cones see O(1) values even when the
    # surrogate SINR target 1/lam_k reaches 1e6..1e8; ln c_k rejoins in the
    # rate tie below
    t_scale = np.maximum(1.0, 1.0 / lam)
    for k in range(p.num_users):
        c = float(t_scale[k])
        z.append(prog.add_scalar(f"z[{k}]"))
        t1 = prog.add_scalar(f"t1[{k}]", lower=sqrt_r + _T1_FLOOR_PAD)
        t2.append(prog.add_scalar(f"t2[{k}]"))
        # s >= 1 holds structurally (noise alone); the explicit bound keeps
        # the solver honest where the interference row is badly scaled
        s.append(prog.add_scalar(f"s[{k}]", lower=1.0))
        psplit = prog.add_scalar(f"p[{k}]", lower=0.0)
        lnz.append(prog.add_scalar(f"lnz[{k}]"))
        lntau = prog.add_scalar(f"lnt2[{k}]")
        # recenter ln z around the PSNR the surrogate target t2 ~ 1/lam would
        # deliver, keeping the solver-side objective O(1) (the raw MOS
        # intercepts would otherwise inflate it ~15x and loosen the solver's
        # relative gap criterion into visible objective wobble)
        t2hat = max(1.0 / lam[k], 2.0)
        t1hat = max(math.sqrt(svc.bandwidth_hz * math.log2(t2hat)),
                    sqrt_r + _T1_FLOOR_PAD)
        zhat = svc.psnr_offset + svc.psnr_slope / sqrt_r \
            * (t1hat - svc.rate_scale_bps / t1hat)
        ref = math.log(max(zhat, 1.0))
        obj = obj + Expr.var(lnz[k], svc.mos_scale / math.log(10.0)) \
            + svc.mos_scale * ref / math.log(10.0)
        # objective epigraph and the log of tau
        prog.add_exp(Expr.var(lnz[k]) + ref, Expr(1.0), Expr.var(z[k]))
        prog.add_exp(Expr.var(lntau), Expr(1.0), Expr.var(t2[k]))
        # rate tie: t1^2 <= B log2(t2) = (B/ln2)(ln tau + ln c)  [rotated SOC]
        q = Expr.var(lntau, svc.bandwidth_hz / LN2) \
            + svc.bandwidth_hz * math.log(c) / LN2
        prog.add_soc(q + 1.0, [Expr.var(t1, 2.0), q - 1.0])
        # hyperbolic split: psplit * t1 >= r   [rotated SOC]
        prog.add_soc(Expr.var(psplit) + Expr.var(t1),
                     [Expr(2.0 * sqrt_r), Expr.var(psplit) - Expr.var(t1)])
        # PSNR bound: t1 - psplit >= (sqrt(r)/v)(z - u)
        prog.add_linear(Expr.var(t1) - Expr.var(psplit)
                        - Expr.var(z[k], sqrt_r / svc.psnr_slope),
                        ">=", -sqrt_r * svc.psnr_offset / svc.psnr_slope)
        # majorant of t2*s <= signal + s
        cu = max(1.0, math.sqrt(2.0 / lam[k]))
        u = Expr.var(spca.received_power_alias(prog, k, blocks, hbar, s[k], cu),
                     cu)
        prog.add_soc(u + 1.0,
                     [Expr.var(t2[k], math.sqrt(2.0 * lam[k]) * c),
                      Expr.var(s[k], math.sqrt(2.0 / lam[k])),
                      u - 1.0])
        prog.add_linear(spca.interference_expr(k, blocks, hbar) - Expr.var(s[k]),
                        "<=", -1.0)
    spca.add_power_constraints(prog, p, blocks)
    spca.add_floor_constraints(prog, p, blocks, hbar)
    prog.maximize(obj)
    return prog, spca.ProblemLayout(blocks=blocks, z=z, t=t2, s=s,
                                    report_offset=p.num_users * svc.mos_offset,
                                    extras={"t_scale": t_scale})


def spca_solve_video(p: VideoProblemSpec, eps: float = spca.DEFAULT_EPS,
                     max_iter: int = spca.DEFAULT_MAX_ITER,
                     rng: np.random.Generator | None = None,
                     relax_qoe: bool = True,
                     solver_opts: dict | None = None) -> BeamformingSolution:
    """Video counterpart of spca_solve_web, with the same QoS-only fallback."""
    run = spca.run_spca(p, build_relaxed_video, eps, max_iter, solver_opts)
    used, relaxed = p, False
    if run.status == spca.INIT_INFEASIBLE and relax_qoe and p.requirement is not None \
            and np.any(p.sinr_floors > p.requirement.sinr_min + 1e-12):
        fallback = dataclasses.replace(p, sinr_floors=p.requirement.sinr_min.copy())
        rerun = spca.run_spca(fallback, build_relaxed_video, eps, max_iter, solver_opts)
        if rerun.status not in (spca.INIT_INFEASIBLE, spca.SOLVER_FAILURE):
            run, used, relaxed = rerun, fallback, True
    return solution.finalize(used, run, p.service, rng, relaxed=relaxed)
