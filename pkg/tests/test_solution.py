import math

import numpy as np
import pytest

from qoebeam import solution, spca
from qoebeam.channel import ChannelSet
from qoebeam.qoe import QoeRequirement, WebServiceParams, calibrate_web, user_sinr
from qoebeam.solution import (extract_rank1, gaussian_randomization,
                              oracle_single_user, per_antenna_usage,
                              power_reallocation, verify)
from qoebeam.web import web_problem

B = 15000.0
KB = 8000.0
SCALE, OFFSET = calibrate_web(2.0, 7.0, 320 * KB, B)
SVC = WebServiceParams(scale=SCALE, offset=OFFSET, page_size_bits=320 * KB,
                       bandwidth_hz=B)


def two_user_problem(sinr_min=2.0):
    # fixed, well-separated channels so every assertion is deterministic
    h = [[np.array([1.0 + 0.2j, 0.3 - 0.1j]), np.array([0.05 + 0.02j])],
         [np.array([0.2 - 0.4j, 1.1 + 0.3j]), np.array([0.9 + 0.5j])]]
    ch = ChannelSet(vectors=h, gains=np.ones((2, 2)), num_small=1)
    req = QoeRequirement(mos_min=np.ones(2), sinr_min=np.full(2, sinr_min))
    return web_problem(ch, np.array([5.0, 5.0]), np.array([[3.0]]), 1.0,
                       [SVC, SVC], req)


# ============================================================
# eigen extraction
# ============================================================

def test_extract_rank1_exact():
    v = np.array([1.0 + 1j, 2.0 - 0.5j, -0.3j])
    w, q = extract_rank1(np.outer(v, v.conj()))
    assert q <= 1e-12
    np.testing.assert_allclose(np.outer(w, w.conj()), np.outer(v, v.conj()),
                               atol=1e-12)


def test_extract_rank1_mixture_quality():
    u = np.array([1.0, 0.0], dtype=complex)
    v = np.array([0.0, 1.0], dtype=complex)
    w, q = extract_rank1(4.0 * np.outer(u, u.conj()) + 1.0 * np.outer(v, v.conj()))
    assert q == pytest.approx(0.25)
    np.testing.assert_allclose(np.abs(w), [2.0, 0.0], atol=1e-12)


def test_extract_rank1_zero_block():
    w, q = extract_rank1(np.zeros((3, 3), dtype=complex))
    assert q == 0.0 and np.all(w == 0)


# ============================================================
# verification helpers
# ============================================================

def test_per_antenna_usage_sums_users():
    p = two_user_problem()
    beams = [[np.array([1.0, 2.0j]), np.array([1.0 + 1.0j])],
             [np.array([0.5, 0.5]), np.array([1.0])]]
    usage = per_antenna_usage(p, beams)
    np.testing.assert_allclose(usage[0], [1.0 + 0.25, 4.0 + 0.25])
    np.testing.assert_allclose(usage[1], [2.0 + 1.0])


def test_verify_flags_cap_and_floor_violations():
    p = two_user_problem(sinr_min=2.0)
    # wildly over-cap beams
    beams = [[np.full(2, 10.0 + 0j), np.array([10.0 + 0j])],
             [np.full(2, 10.0 + 0j), np.array([10.0 + 0j])]]
    notes = verify(p, beams)
    assert any("cap exceeded" in n for n in notes)
    # all-zero beams violate the floors but no cap
    zero = [[np.zeros(2, dtype=complex), np.zeros(1, dtype=complex)]] * 2
    notes = verify(p, zero)
    assert notes == ["SINR floor violated after extraction"]


# ============================================================
# closed-form single-user design
# ============================================================

def test_oracle_single_user_frozen_value():
    # amp = 2*1 + 3*2 = 8, rate = log2(1 + 64/2)
    w, rate = oracle_single_user([1.0, 2.0j], [4.0, 9.0], 2.0)
    np.testing.assert_allclose(w, [2.0, 3.0j], atol=1e-12)
    assert rate == pytest.approx(math.log2(33.0), abs=1e-12)


def test_oracle_single_user_skips_dead_antennas():
    w, rate = oracle_single_user([0.0, 1.0], [4.0, 4.0], 1.0)
    assert w[0] == 0.0
    assert rate == pytest.approx(math.log2(5.0))


def test_oracle_beats_random_designs():
    rng = np.random.default_rng(3)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    caps = rng.uniform(0.5, 2.0, 4)
    _, rate_star = oracle_single_user(h, caps, 1.0)
    for _ in range(200):
        w = np.sqrt(caps) * np.exp(2j * np.pi * rng.uniform(size=4))
        rate = math.log2(1.0 + abs(np.vdot(h, w)) ** 2)
        assert rate <= rate_star + 1e-12


# ============================================================
# rank-1 power reallocation
# ============================================================

def test_power_reallocation_restores_rank1():
    p = two_user_problem(sinr_min=1.0)
    hbar = p.scaled_channels()
    # start from aligned rank-1 beams, then smear each block with an
    # orthogonal direction the way a flat-face SDP iterate does
    beams = [[0.8 * np.sqrt(p.bs_caps(j)) * hb / np.linalg.norm(hb)
              for j, hb in enumerate(hbar[k])] for k in range(2)]
    lifted = []
    for k in range(2):
        row = []
        for j in range(2):
            w = np.outer(beams[k][j], beams[k][j].conj())
            if w.shape[0] > 1:
                junk = np.array([-beams[k][j][1].conj(), beams[k][j][0].conj()])
                w = w + 0.05 * np.outer(junk, junk.conj())
            row.append(w)
        lifted.append(row)
    targets = np.maximum(solution._true_sinr(p, lifted), p.sinr_floors)
    out = power_reallocation(p, lifted, targets)
    assert out is not None
    for k in range(2):
        for j in range(2):
            _, q = extract_rank1(out[k][j])
            assert q <= 1e-9
    # floors hold on the repaired design and caps are honored
    for j, usage in enumerate(per_antenna_usage(
            p, [[extract_rank1(out[k][j])[0] for j in range(2)] for k in range(2)])):
        assert np.all(usage <= p.bs_caps(j) * (1.0 + 1e-6))
    sinr = solution._true_sinr(p, out)
    assert np.all(sinr >= p.sinr_floors * (1.0 - 1e-4))


def test_power_reallocation_infeasible_targets_return_none():
    p = two_user_problem(sinr_min=0.0)
    lifted = [[np.eye(2, dtype=complex) * 0.1, np.eye(1, dtype=complex) * 0.1]
              for _ in range(2)]
    out = power_reallocation(p, lifted, np.array([1e9, 1e9]))
    assert out is None


# ============================================================
# randomization fallback
# ============================================================

def test_gaussian_randomization_recovers_floor_feasibility():
    p = two_user_problem(sinr_min=1.0)
    hbar = p.scaled_channels()
    beams = [[np.sqrt(p.bs_caps(j)) * hb / np.linalg.norm(hb)
              for j, hb in enumerate(hbar[k])] for k in range(2)]
    lifted = [[np.outer(w, w.conj()) for w in row] for row in beams]
    # zeroed base violates the floors, forcing the draws to do the work
    base = [[np.zeros(2, dtype=complex), np.zeros(1, dtype=complex)]
            for _ in range(2)]
    rng = np.random.default_rng(11)
    out = gaussian_randomization(p, lifted, base, [0, 1], [SVC, SVC], rng)
    assert out is not None
    for k in range(2):
        assert user_sinr(k, p.channels, out, 1.0) >= p.sinr_floors[k] * (1.0 - 1e-4)
    for j, usage in enumerate(per_antenna_usage(p, out)):
        assert np.all(usage <= p.bs_caps(j) * (1.0 + 1e-9))


# ============================================================
# finalize entry conditions
# ============================================================

def test_finalize_passes_through_infeasibility():
    p = two_user_problem()
    run = spca.SpcaRun(status=spca.INIT_INFEASIBLE,
                       init=spca.InitState(feasible=False))
    out = solution.finalize(p, run, [SVC, SVC])
    assert out.status == solution.INFEASIBLE
    assert out.beams is None and not out.feasible


def test_finalize_passes_through_solver_failure():
    p = two_user_problem()
    run = spca.SpcaRun(status=spca.SOLVER_FAILURE,
                       init=spca.InitState(feasible=True),
                       warnings=["iteration 1: solver status numerical_failure"])
    out = solution.finalize(p, run, [SVC, SVC])
    assert out.status == solution.SOLVER_FAILURE
    assert out.warnings
