import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from qoebeam.channel import ChannelSet
from qoebeam import qoe
from qoebeam.qoe import (QoeRequirement, VideoServiceParams, WebServiceParams,
                         calibrate_web, clip_mos, mos_of_rate, page_delay,
                         slow_start_cycles, user_rate, user_rate_lifted,
                         user_sinr, video_mos, video_psnr, video_sinr_threshold,
                         web_mos, web_mos_full, web_sinr_threshold)

B = 15000.0
KB = 8000.0  # bits per kilobyte (1 kB = 1000 bytes)

SCALE, OFFSET = calibrate_web(2.0, 7.0, 320 * KB, B)


def web_params(page_kb=320.0):
    return WebServiceParams(scale=SCALE, offset=OFFSET, page_size_bits=page_kb * KB,
                            bandwidth_hz=B)


VIDEO = VideoServiceParams(mos_scale=27.37, mos_offset=-39.43, psnr_offset=28.046,
                           psnr_slope=0.038, rate_scale_bps=5.024, bandwidth_hz=B)


# ============================================================
# calibration and the web model
# ============================================================

def test_calibration_frozen_values():
    # 4/ln(3.5) and 5 - scale*ln(B*7/FS), hand-evaluated
    assert SCALE == pytest.approx(3.192942400591712, abs=1e-12)
    assert OFFSET == pytest.approx(15.197626422984081, abs=1e-9)


def test_calibration_endpoint_conditions():
    p = web_params()
    assert web_mos(2.0, p) == pytest.approx(1.0, abs=1e-9)
    assert web_mos(7.0, p) == pytest.approx(5.0, abs=1e-9)


def test_calibration_guards():
    with pytest.raises(ValueError):
        calibrate_web(7.0, 2.0, 320 * KB, B)
    with pytest.raises(ValueError):
        calibrate_web(2.0, 7.0, -1.0, B)


def test_web_mos_monotone_and_page_size_effect():
    p = web_params()
    rates = np.linspace(0.5, 10.0, 40)
    vals = [web_mos(r, p) for r in rates]
    assert np.all(np.diff(vals) > 0)
    # bigger page, lower score at the same rate
    assert web_mos(3.0, web_params(1000.0)) < web_mos(3.0, web_params(50.0))
    with pytest.raises(ValueError):
        web_mos(0.0, p)


def test_web_threshold_round_trip_and_anchors():
    p = web_params()
    # calibration makes the anchors exact: A(1) = 2^rmin - 1, A(5) = 2^rmax - 1
    assert web_sinr_threshold(1.0, p) == pytest.approx(3.0, abs=1e-9)
    assert web_sinr_threshold(5.0, p) == pytest.approx(127.0, abs=1e-7)
    for m in np.linspace(1.0, 4.5, 50):
        a = web_sinr_threshold(m, p)
        assert web_mos(math.log2(1.0 + a), p) == pytest.approx(m, abs=1e-9)


def test_web_threshold_overflow_guard():
    p = WebServiceParams(scale=1.0, offset=0.0, page_size_bits=B, bandwidth_hz=B)
    # required rate e^mos exceeds 60 bit/s/Hz
    with pytest.raises(ValueError, match="unattainable"):
        web_sinr_threshold(5.0, p)
    assert web_sinr_threshold(4.0, p) == pytest.approx(2.0 ** math.exp(4.0) - 1.0)


# ============================================================
# full delay model
# ============================================================

def test_slow_start_clamps_at_low_rate():
    p = web_params()
    # at B=15 kHz, R=2: L1 = log2(0.5 + 900/23360) < 0 -> clamp to 0
    assert slow_start_cycles(2.0, p) == 0.0
    assert page_delay(2.0, p) == pytest.approx(85.42333333333333, abs=1e-9)


def test_page_delay_with_active_slow_start():
    # wide-band variant exercises the un-clamped branch; hand-evaluated
    p = WebServiceParams(scale=SCALE, offset=OFFSET, page_size_bits=320 * KB,
                         bandwidth_hz=1e7)
    assert slow_start_cycles(2.0, p) == pytest.approx(4.710664925954632, abs=1e-9)
    assert page_delay(2.0, p) == pytest.approx(0.33265497609539646, abs=1e-9)
    rates = np.linspace(0.5, 8.0, 30)
    delays = [page_delay(r, p) for r in rates]
    assert np.all(np.diff(delays) < 0)


def test_full_mos_collapses_to_simple_model_without_rtt():
    p = WebServiceParams(scale=SCALE, offset=OFFSET, page_size_bits=320 * KB,
                         bandwidth_hz=B, rtt_s=0.0)
    for r in (0.5, 2.0, 7.0):
        assert page_delay(r, p) == pytest.approx(p.page_size_bits / (B * r), rel=1e-12)
        assert web_mos_full(r, p) == pytest.approx(web_mos(r, p), abs=1e-9)


# ============================================================
# video model
# ============================================================

def test_video_frozen_values():
    assert video_psnr(7.0, VIDEO) == pytest.approx(33.53929156303218, abs=1e-9)
    assert video_mos(7.0, VIDEO) == pytest.approx(2.3244098307875376, abs=1e-9)
    assert video_mos(2.0, VIDEO) == pytest.approx(1.3816413106457262, abs=1e-9)


def test_video_domain_guard_and_monotonicity():
    with pytest.raises(ValueError, match="validity"):
        video_psnr(5.024 / B, VIDEO)
    rates = np.linspace(0.01, 10.0, 60)
    vals = [video_psnr(r, VIDEO) for r in rates]
    assert np.all(np.diff(vals) > 0)


def test_video_threshold_closed_form_matches_root_finding():
    # independent oracle: solve video_mos(R) = m numerically
    for m in (1.5, 2.5, 3.5, 4.5):
        a = video_sinr_threshold(m, VIDEO)
        r_star = brentq(lambda r: video_mos(r, VIDEO) - m, 1e-3, 60.0, xtol=1e-12)
        assert math.log2(1.0 + a) == pytest.approx(r_star, abs=1e-8)
    assert video_sinr_threshold(2.5, VIDEO) == pytest.approx(320.7297471456814, rel=1e-10)


def test_video_threshold_round_trip():
    for m in np.linspace(1.0, 4.5, 50):
        a = video_sinr_threshold(m, VIDEO)
        assert video_mos(math.log2(1.0 + a), VIDEO) == pytest.approx(m, abs=1e-6)


def test_video_threshold_below_psnr_floor_is_zero():
    # mos target whose PSNR requirement sits below the fit floor
    low = VIDEO.mos_scale * math.log10(VIDEO.psnr_offset) + VIDEO.mos_offset - 1.0
    assert video_sinr_threshold(low, VIDEO) == 0.0


@given(st.floats(1.0, 4.8), st.floats(0.02, 0.08), st.floats(20.0, 35.0))
@settings(max_examples=50, deadline=None)
def test_video_threshold_round_trip_random_params(m, slope, offset):
    p = VideoServiceParams(mos_scale=27.37, mos_offset=-39.43, psnr_offset=offset,
                           psnr_slope=slope, rate_scale_bps=5.024, bandwidth_hz=B)
    try:
        a = video_sinr_threshold(m, p)
    except ValueError:
        return
    if a == 0.0:
        return
    assert video_mos(math.log2(1.0 + a), p) == pytest.approx(m, abs=1e-6)


# ============================================================
# spectral efficiency
# ============================================================

def two_user_setup():
    rng = np.random.default_rng(17)
    vectors = [[rng.standard_normal(3) + 1j * rng.standard_normal(3),
                rng.standard_normal(2) + 1j * rng.standard_normal(2)]
               for _ in range(2)]
    chans = ChannelSet(vectors=vectors, gains=np.ones((2, 2)), num_small=1)
    beams = [[rng.standard_normal(3) + 1j * rng.standard_normal(3),
              rng.standard_normal(2) + 1j * rng.standard_normal(2)]
             for _ in range(2)]
    return chans, beams


def test_user_rate_zero_beams():
    chans, beams = two_user_setup()
    zero = [[np.zeros(3, dtype=complex), np.zeros(2, dtype=complex)] for _ in range(2)]
    assert user_rate(0, chans, zero, 1.0) == 0.0


def test_single_user_single_antenna_sinr():
    chans = ChannelSet(vectors=[[np.array([2.0 + 0.0j])]], gains=np.ones((1, 1)))
    beams = [[np.array([3.0 + 0.0j])]]
    assert user_sinr(0, chans, beams, 4.0) == pytest.approx(36.0 / 4.0, rel=1e-12)


def test_lifted_rate_matches_vector_rate():
    chans, beams = two_user_setup()
    mats = [[np.outer(w, w.conj()) for w in bk] for bk in beams]
    for k in range(2):
        assert user_rate_lifted(k, chans, mats, 0.7) == \
            pytest.approx(user_rate(k, chans, beams, 0.7), rel=1e-10)


def test_interference_partition():
    chans, beams = two_user_setup()
    sig0, inter0 = qoe.user_signal_interference(0, chans, beams)
    # user 0's interference is exactly what user 1's beams deposit on h_0
    manual = sum(abs(np.vdot(chans.vector(0, j), beams[1][j])) ** 2 for j in range(2))
    assert inter0 == pytest.approx(manual, rel=1e-12)
    assert sig0 > 0


# ============================================================
# reporting helpers
# ============================================================

def test_clip_and_dispatch():
    assert clip_mos(7.3) == 5.0
    assert clip_mos(-2.0) == 1.0
    assert clip_mos(3.3) == 3.3
    web_profile = [web_params(50.0), web_params(1000.0)]
    assert mos_of_rate(3.0, web_profile, 1) == pytest.approx(web_mos(3.0, web_profile[1]))
    assert mos_of_rate(3.0, VIDEO, 0) == pytest.approx(video_mos(3.0, VIDEO))
    assert mos_of_rate(0.0, web_profile, 0) == float("-inf")
    assert mos_of_rate(1e-9, VIDEO, 0) == float("-inf")


def test_requirement_validation():
    req = QoeRequirement(mos_min=np.array([1.0, 2.0]), sinr_min=np.array([3.0, 3.0]))
    assert req.mos_min.shape == (2,)
    with pytest.raises(ValueError):
        QoeRequirement(mos_min=np.ones(2), sinr_min=np.ones(3))
    with pytest.raises(ValueError):
        QoeRequirement(mos_min=np.ones(2), sinr_min=-np.ones(2))
