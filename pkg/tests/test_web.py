import numpy as np
import pytest

from qoebeam import solution, spca
from qoebeam.channel import ChannelSet, Topology, drop_rng, drop_users, generate_channels
from qoebeam.qoe import (QoeRequirement, WebServiceParams, calibrate_web,
                         user_rate, web_mos, web_sinr_threshold)
from qoebeam.web import WebProblemSpec, build_relaxed_web, spca_solve_web, web_problem

B = 15000.0
KB = 8000.0
NOISE_MW = 1.9952623149688827e-13
MBS_CAP = 63.09573444801933
SBS_CAP = 0.0812830516164099

SCALE, OFFSET = calibrate_web(2.0, 7.0, 320 * KB, B)
SVC = WebServiceParams(scale=SCALE, offset=OFFSET, page_size_bits=320 * KB,
                       bandwidth_hz=B)


def single_user(h, caps, noise=1.0, sinr_min=0.0, mos_min=1.0):
    ch = ChannelSet(vectors=[[np.asarray(h, dtype=complex)]],
                    gains=np.ones((1, 1)), num_small=0)
    req = QoeRequirement(mos_min=[mos_min], sinr_min=[sinr_min])
    return web_problem(ch, np.asarray(caps, dtype=float), np.zeros((0, 0)),
                       noise, [SVC], req)


def desk_web(drop=0, sinr_min=3.0, mos_min=1.0):
    top = Topology(num_small=1, mbs_antennas=6, sbs_antennas=2,
                   macro_users=2, per_small_users=1)
    rng = drop_rng(2024, drop)
    ch = generate_channels(drop_users(top, rng), top, 7.0, rng)
    k = ch.num_users
    req = QoeRequirement(mos_min=np.full(k, mos_min), sinr_min=np.full(k, sinr_min))
    return web_problem(ch, np.full(6, MBS_CAP), np.full((1, 2), SBS_CAP),
                       NOISE_MW, [SVC] * k, req)


# ============================================================
# floor collapsing
# ============================================================

def test_vacuous_mos_floor_adds_no_sinr_requirement():
    p = single_user([1.0, 1.0], [4.0, 4.0], sinr_min=3.0, mos_min=1.0)
    assert p.sinr_floors[0] == 3.0


def test_mos_floor_collapses_through_threshold_inversion():
    p = single_user([1.0, 1.0], [4.0, 4.0], sinr_min=3.0, mos_min=3.5)
    assert p.sinr_floors[0] == pytest.approx(web_sinr_threshold(3.5, SVC))
    assert p.sinr_floors[0] > 3.0


def test_spec_validation():
    ch = ChannelSet(vectors=[[np.ones(2, dtype=complex)]],
                    gains=np.ones((1, 1)), num_small=0)
    with pytest.raises(ValueError):
        WebProblemSpec(channels=ch, mbs_caps_mw=np.ones(2),
                       sbs_caps_mw=np.zeros((0, 0)), noise_mw=1.0,
                       sinr_floors=0.0, service=[SVC, SVC], requirement=None)


# ============================================================
# surrogate structure
# ============================================================

def test_build_relaxed_web_cone_counts():
    p = desk_web()
    k = p.num_users
    prog, layout = build_relaxed_web(p, np.full(k, 0.25))
    assert len(layout.blocks) == k and len(layout.blocks[0]) == 2
    # z, t, s, lnz and the received-power alias per user
    assert len(prog._scalars) == 5 * k
    assert len(prog._blocks) == 2 * k
    assert len(prog._socs) == k          # one majorant cone per user
    assert len(prog._exps) == 2 * k      # objective epigraph + rate link
    assert len(prog._eq) == k            # alias tie
    # interference bounds + per-antenna caps + active floors
    assert len(prog._ineq) == k + (6 + 2) + k
    assert layout.report_offset == pytest.approx(k * SVC.offset)


def test_report_offset_completes_the_objective():
    p = desk_web(drop=0)
    run = spca.run_spca(p, build_relaxed_web)
    assert run.sol is not None
    zvals = np.array([run.sol.scalars[n] for n in run.layout.z])
    # solver objective + offset equals the MOS sum implied by z*
    direct = sum(SVC.scale * np.log(max(z, 1e-300)) for z in zvals) \
        + p.num_users * SVC.offset
    assert run.sol.objective + run.layout.report_offset == pytest.approx(direct, rel=1e-6)


# ============================================================
# solve behavior
# ============================================================

def test_single_user_matches_closed_form():
    h = np.array([0.9 + 0.4j, -0.3 + 1.1j, 0.5 - 0.2j])
    caps = np.array([2.0, 3.0, 1.5])
    p = single_user(h, caps, noise=1.0, sinr_min=1.0)
    sol = spca_solve_web(p)
    assert sol.status == solution.OPTIMAL
    _, rate_star = solution.oracle_single_user(h, caps, 1.0)
    assert sol.rate[0] == pytest.approx(rate_star, abs=1e-3)


def test_full_pipeline_meets_caps_and_floors():
    p = desk_web(drop=0)
    sol = spca_solve_web(p)
    assert sol.status == solution.OPTIMAL
    assert sol.converged
    for j, usage in enumerate(sol.per_antenna_mw):
        assert np.all(usage <= p.bs_caps(j) * (1.0 + 1e-6))
    assert np.all(sol.sinr >= p.sinr_floors * (1.0 - 1e-4))
    assert np.all(sol.extraction_quality <= 1e-4)
    assert np.all((sol.mos_clipped >= 1.0) & (sol.mos_clipped <= 5.0))
    assert sol.aggregated_mos == pytest.approx(float(np.sum(sol.mos_clipped)))
    # reported raw MOS is the simplified (RTT-free) model at the true rate
    assert sol.mos_raw == pytest.approx(
        [web_mos(user_rate(k, p.channels, sol.beams, NOISE_MW), SVC)
         for k in range(p.num_users)])


def test_unreachable_qoe_floor_falls_back_to_qos():
    # ceiling on the reachable SINR is (2+2)^2 = 16; a MOS floor near 5
    # needs far more, while the plain QoS floor of 3 is easy
    p = single_user([1.0, 1.0], [4.0, 4.0], noise=1.0, sinr_min=3.0, mos_min=4.99)
    assert p.sinr_floors[0] > 16.0
    sol = spca_solve_web(p)
    assert sol.status == solution.QOE_RELAXED
    assert not sol.feasible
    assert sol.sinr[0] >= 3.0 * (1.0 - 1e-4)


def test_fallback_disabled_reports_infeasible():
    p = single_user([1.0, 1.0], [4.0, 4.0], noise=1.0, sinr_min=3.0, mos_min=4.99)
    sol = spca_solve_web(p, relax_qoe=False)
    assert sol.status == solution.INFEASIBLE


def test_hard_qos_floor_infeasible_even_after_fallback():
    p = single_user([1.0, 1.0], [4.0, 4.0], noise=1.0, sinr_min=100.0, mos_min=4.99)
    sol = spca_solve_web(p)
    assert sol.status == solution.INFEASIBLE
