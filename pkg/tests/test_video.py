import numpy as np
import pytest

from qoebeam import solution, spca
from qoebeam.channel import ChannelSet, Topology, drop_rng, drop_users, generate_channels
from qoebeam.qoe import (QoeRequirement, VideoServiceParams, user_rate,
                         video_mos, video_sinr_threshold)
from qoebeam.video import (VideoProblemSpec, build_relaxed_video,
                           spca_solve_video, video_problem)

NOISE_MW = 1.9952623149688827e-13
MBS_CAP = 63.09573444801933
SBS_CAP = 0.0812830516164099

SVC = VideoServiceParams(mos_scale=27.37, mos_offset=-39.43, psnr_offset=28.046,
                         psnr_slope=0.038, rate_scale_bps=5.024,
                         bandwidth_hz=15000.0)


def single_user(h, caps, noise=1.0, sinr_min=0.0, mos_min=1.0):
    ch = ChannelSet(vectors=[[np.asarray(h, dtype=complex)]],
                    gains=np.ones((1, 1)), num_small=0)
    req = QoeRequirement(mos_min=[mos_min], sinr_min=[sinr_min])
    return video_problem(ch, np.asarray(caps, dtype=float), np.zeros((0, 0)),
                         noise, SVC, req)


def desk_video(drop=0, sinr_min=3.0, mos_min=1.0):
    top = Topology(num_small=1, mbs_antennas=6, sbs_antennas=2,
                   macro_users=2, per_small_users=1)
    rng = drop_rng(2024, drop)
    ch = generate_channels(drop_users(top, rng), top, 7.0, rng)
    k = ch.num_users
    req = QoeRequirement(mos_min=np.full(k, mos_min), sinr_min=np.full(k, sinr_min))
    return video_problem(ch, np.full(6, MBS_CAP), np.full((1, 2), SBS_CAP),
                         NOISE_MW, SVC, req)


# ============================================================
# floor collapsing and validation
# ============================================================

def test_vacuous_mos_floor_adds_no_sinr_requirement():
    p = single_user([1.0, 1.0], [4.0, 4.0], sinr_min=3.0, mos_min=1.0)
    assert p.sinr_floors[0] == 3.0


def test_mos_floor_collapses_through_threshold_inversion():
    thr = video_sinr_threshold(2.5, SVC)
    p = single_user([1.0, 1.0], [4.0, 4.0], sinr_min=3.0, mos_min=2.5)
    assert p.sinr_floors[0] == pytest.approx(max(3.0, thr))
    # the threshold inverts the MOS chain exactly
    assert video_mos(np.log2(1.0 + thr), SVC) == pytest.approx(2.5, abs=1e-9)


def test_spec_requires_video_params():
    ch = ChannelSet(vectors=[[np.ones(2, dtype=complex)]],
                    gains=np.ones((1, 1)), num_small=0)
    with pytest.raises(ValueError):
        VideoProblemSpec(channels=ch, mbs_caps_mw=np.ones(2),
                         sbs_caps_mw=np.zeros((0, 0)), noise_mw=1.0,
                         sinr_floors=0.0, service=None, requirement=None)


# ============================================================
# surrogate structure
# ============================================================

def test_build_relaxed_video_cone_counts():
    p = desk_video()
    k = p.num_users
    prog, layout = build_relaxed_video(p, np.full(k, 0.25))
    # z, t1, t2, s, psplit, lnz, lnt2 and the received-power alias
    assert len(prog._scalars) == 8 * k
    assert len(prog._blocks) == 2 * k
    assert len(prog._socs) == 3 * k      # rate tie, hyperbolic split, majorant
    assert len(prog._exps) == 2 * k      # objective epigraph + ln of t2
    assert len(prog._eq) == k
    # PSNR + interference rows, caps, active floors
    assert len(prog._ineq) == 2 * k + (6 + 2) + k
    assert layout.report_offset == pytest.approx(k * SVC.mos_offset)


# ============================================================
# solve behavior
# ============================================================

def test_single_user_matches_closed_form():
    # the score is monotone in rate, so the optimum is the aligned
    # full-power beam of the closed-form design
    h = np.array([1.2 - 0.3j, 0.4 + 0.8j])
    caps = np.array([3.0, 2.0])
    p = single_user(h, caps, noise=1.0, sinr_min=1.0)
    sol = spca_solve_video(p)
    assert sol.status == solution.OPTIMAL
    _, rate_star = solution.oracle_single_user(h, caps, 1.0)
    assert sol.rate[0] == pytest.approx(rate_star, abs=1e-3)


def test_full_pipeline_meets_caps_and_floors():
    p = desk_video(drop=0)
    sol = spca_solve_video(p)
    assert sol.status == solution.OPTIMAL
    assert sol.converged
    for j, usage in enumerate(sol.per_antenna_mw):
        assert np.all(usage <= p.bs_caps(j) * (1.0 + 1e-6))
    assert np.all(sol.sinr >= p.sinr_floors * (1.0 - 1e-4))
    assert np.all(sol.extraction_quality <= 1e-4)
    assert np.all((sol.mos_clipped >= 1.0) & (sol.mos_clipped <= 5.0))
    rates = [user_rate(k, p.channels, sol.beams, NOISE_MW)
             for k in range(p.num_users)]
    assert sol.mos_raw == pytest.approx([video_mos(r, SVC) for r in rates])


def test_unreachable_qoe_floor_falls_back_to_qos():
    p = single_user([1.0, 1.0], [4.0, 4.0], noise=1.0, sinr_min=3.0, mos_min=4.9)
    assert p.sinr_floors[0] > 16.0   # cap ceiling is (2+2)^2
    sol = spca_solve_video(p)
    assert sol.status == solution.QOE_RELAXED
    assert sol.sinr[0] >= 3.0 * (1.0 - 1e-4)
