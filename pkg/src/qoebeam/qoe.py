r"""Mean-opinion-score (MOS) models for web browsing and streamed video, and
their exact inverses from a minimum-MOS requirement to a SINR threshold.

Web browsing: the page download time at spectral efficiency R [bit/s/Hz] over
bandwidth B [Hz] maps to a logarithmic satisfaction score.  With the RTT and
slow-start terms dropped (both are negligible at few-subcarrier bandwidths)

    MOS_web(R) = scale * ln(B*R / FS) + offset,

calibrated so MOS(rate_min) = 1 and MOS(rate_max) = 5 for the average page.

Video streaming: a fitted PSNR model of the received stream,

    PSNR(R) = u + v * sqrt(B*R/r) * (1 - r/(B*R)),
    MOS_video(R) = g * log10(PSNR(R)) + e.

MOS values are unclipped inside optimization objectives; reports clip to
[1, 5].
"""

import math
from dataclasses import dataclass

import numpy as np

from .linalg import quadratic_form

LN2 = math.log(2.0)

# reject QoE targets whose SINR threshold would overflow: 2^60 - 1 SINR is
# far beyond anything physical
MAX_RATE_EXPONENT = 60.0

MOS_REPORT_RANGE = (1.0, 5.0)


# ============================================================
# service parameter bundles
# ============================================================

@dataclass(frozen=True)
class WebServiceParams:
    """Logarithmic web-MOS model for one user's page download."""
    scale: float              # multiplies ln(B*R/FS)
    offset: float             # intercept of the fit
    page_size_bits: float
    bandwidth_hz: float
    segment_size_bits: float = 1460 * 8.0
    rtt_s: float = 0.03

    def __post_init__(self):
        if self.scale <= 0 or self.page_size_bits <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("scale, page size and bandwidth must be positive")
        if self.segment_size_bits <= 0 or self.rtt_s < 0:
            raise ValueError("bad segment size or RTT")


@dataclass(frozen=True)
class VideoServiceParams:
    """PSNR-based video-MOS model (shared by all video users)."""
    mos_scale: float          # multiplies log10(PSNR)
    mos_offset: float
    psnr_offset: float        # PSNR floor of the fit, dB
    psnr_slope: float
    rate_scale_bps: float     # reference bitrate of the fit, bit/s
    bandwidth_hz: float

    def __post_init__(self):
        if self.mos_scale <= 0 or self.psnr_slope <= 0:
            raise ValueError("mos_scale and psnr_slope must be positive")
        if self.rate_scale_bps <= 0 or self.bandwidth_hz <= 0:
            raise ValueError("rate_scale_bps and bandwidth must be positive")


@dataclass
class QoeRequirement:
    """Per-user minimum MOS and minimum SINR (linear) demands."""
    mos_min: np.ndarray
    sinr_min: np.ndarray

    def __post_init__(self):
        self.mos_min = np.atleast_1d(np.asarray(self.mos_min, dtype=float))
        self.sinr_min = np.atleast_1d(np.asarray(self.sinr_min, dtype=float))
        if self.mos_min.shape != self.sinr_min.shape:
            raise ValueError("mos_min and sinr_min must have matching shapes")
        if np.any(self.sinr_min < 0):
            raise ValueError("sinr_min must be non-negative")


# ============================================================
# web model
# ============================================================

def calibrate_web(rate_min: float, rate_max: float, page_size_avg_bits: float,
                  bandwidth_hz: float) -> tuple[float, float]:
    """Fit (scale, offset) so the average page scores MOS 1 at rate_min and
    MOS 5 at rate_max [bit/s/Hz]."""
    if not (0 < rate_min < rate_max):
        raise ValueError("need 0 < rate_min < rate_max")
    if page_size_avg_bits <= 0 or bandwidth_hz <= 0:
        raise ValueError("page size and bandwidth must be positive")
    scale = 4.0 / math.log(rate_max / rate_min)
    offset = 5.0 - scale * math.log(bandwidth_hz * rate_max / page_size_avg_bits)
    return scale, offset


def web_mos(rate: float, p: WebServiceParams) -> float:
    """Simplified (RTT-free) web MOS at spectral efficiency `rate`, unclipped."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    return p.scale * math.log(p.bandwidth_hz * rate / p.page_size_bits) + p.offset


def slow_start_cycles(rate: float, p: WebServiceParams) -> float:
    """Number of TCP slow-start cycles with idle periods, clamped at zero.

    The fitted cycle count min(L1, L2) goes negative at low rates where the
    model is extrapolating; a negative count is meaningless so we clamp.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    r_bps = p.bandwidth_hz * rate
    l1 = math.log2(0.5 + r_bps * p.rtt_s / (2.0 * p.segment_size_bits))
    l2 = math.log2(0.5 + p.page_size_bits / (4.0 * p.segment_size_bits))
    return max(0.0, min(l1, l2))


def page_delay(rate: float, p: WebServiceParams) -> float:
    """Full page download time [s] including handshake and slow-start terms."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    r_bps = p.bandwidth_hz * rate
    ncyc = slow_start_cycles(rate, p)
    return (3.0 * p.rtt_s + p.page_size_bits / r_bps
            + ncyc * (p.segment_size_bits / r_bps + p.rtt_s)
            - 2.0 * p.segment_size_bits * (2.0 ** ncyc - 1.0) / r_bps)


def web_mos_full(rate: float, p: WebServiceParams, offset: float | None = None) -> float:
    """Delay-based web MOS, -scale*ln(d(R)) + offset.

    Defaults to the fitted offset of the simplified model; with rtt_s = 0 the
    two models then agree exactly (the delay collapses to FS/(B*R)).
    """
    off = p.offset if offset is None else offset
    return -p.scale * math.log(page_delay(rate, p)) + off


def web_sinr_threshold(mos_min: float, p: WebServiceParams) -> float:
    """Minimum SINR (linear) for the simplified web MOS to reach mos_min."""
    exponent = (p.page_size_bits / p.bandwidth_hz) * math.exp((mos_min - p.offset) / p.scale)
    if exponent > MAX_RATE_EXPONENT:
        raise ValueError(f"mos_min {mos_min} unattainable: needs rate {exponent:.1f} bit/s/Hz")
    return 2.0 ** exponent - 1.0


# ============================================================
# video model
# ============================================================

def video_psnr(rate: float, p: VideoServiceParams) -> float:
    """PSNR [dB] of the fitted stream model at spectral efficiency `rate`."""
    bitrate = p.bandwidth_hz * rate
    if bitrate <= p.rate_scale_bps:
        raise ValueError("bitrate below the PSNR model's validity floor")
    return p.psnr_offset + p.psnr_slope * math.sqrt(bitrate / p.rate_scale_bps) \
        * (1.0 - p.rate_scale_bps / bitrate)


def video_mos_of_psnr(psnr: float, p: VideoServiceParams) -> float:
    """MOS of a decoded stream at the given PSNR [dB], unclipped."""
    if psnr <= 0:
        raise ValueError("PSNR must be positive")
    return p.mos_scale * math.log10(psnr) + p.mos_offset


def video_mos(rate: float, p: VideoServiceParams) -> float:
    """Video MOS at spectral efficiency `rate`, unclipped."""
    return video_mos_of_psnr(video_psnr(rate, p), p)


def video_sinr_threshold(mos_min: float, p: VideoServiceParams) -> float:
    r"""Minimum SINR (linear) for the video MOS to reach mos_min.

    Closed form: with X the required PSNR excess over the floor u and
    y = sqrt(B*R), the model PSNR = u + (v/sqrt(r))*y - v*sqrt(r)/y gives the
    quadratic (v/sqrt(r)) y^2 - X y - v sqrt(r) = 0, whose positive root is

        y = ( sqrt(r) X / v + sqrt(r X^2 / v^2 + 4 r) ) / 2.
    """
    x = 10.0 ** ((mos_min - p.mos_offset) / p.mos_scale) - p.psnr_offset
    if x <= 0:
        # target below the PSNR floor: any valid bitrate satisfies it
        return 0.0
    root = math.sqrt(p.rate_scale_bps) * x / p.psnr_slope \
        + math.sqrt(p.rate_scale_bps * x * x / p.psnr_slope ** 2 + 4.0 * p.rate_scale_bps)
    y = root / 2.0
    exponent = y * y / p.bandwidth_hz
    if exponent > MAX_RATE_EXPONENT:
        raise ValueError(f"mos_min {mos_min} unattainable: needs rate {exponent:.1f} bit/s/Hz")
    return 2.0 ** exponent - 1.0


# ============================================================
# spectral efficiency from beamformers (per-subcarrier SINR)
# ============================================================

def user_signal_interference(k: int, channels, beams) -> tuple[float, float]:
    """Received signal power and inter-user interference [mW] for user k.

    `beams[l][j]` is BS j's beamformer for user l (zero vector if BS j does
    not transmit to l).
    """
    sig = 0.0
    inter = 0.0
    for j in range(channels.num_bs):
        h = channels.vector(k, j)
        for l in range(channels.num_users):
            p = abs(np.vdot(h, beams[l][j])) ** 2
            if l == k:
                sig += p
            else:
                inter += p
    return float(sig), float(inter)


def user_sinr(k: int, channels, beams, noise_mw: float) -> float:
    sig, inter = user_signal_interference(k, channels, beams)
    return sig / (inter + noise_mw)


def user_rate(k: int, channels, beams, noise_mw: float) -> float:
    """Spectral efficiency log2(1 + SINR) [bit/s/Hz]; 0 for all-zero beams."""
    return math.log2(1.0 + user_sinr(k, channels, beams, noise_mw))


def user_signal_interference_lifted(k: int, channels, mats) -> tuple[float, float]:
    """Same as user_signal_interference but from lifted matrices W = w w^H
    (or their PSD relaxations)."""
    sig = 0.0
    inter = 0.0
    for j in range(channels.num_bs):
        h = channels.vector(k, j)
        for l in range(channels.num_users):
            p = quadratic_form(h, mats[l][j])
            if l == k:
                sig += p
            else:
                inter += p
    return float(sig), float(inter)


def user_sinr_lifted(k: int, channels, mats, noise_mw: float) -> float:
    sig, inter = user_signal_interference_lifted(k, channels, mats)
    return sig / (inter + noise_mw)


def user_rate_lifted(k: int, channels, mats, noise_mw: float) -> float:
    return math.log2(1.0 + user_sinr_lifted(k, channels, mats, noise_mw))


# ============================================================
# reporting helpers
# ============================================================

def clip_mos(mos: float) -> float:
    lo, hi = MOS_REPORT_RANGE
    return min(max(mos, lo), hi)


def mos_of_rate(rate: float, profile, k: int = 0) -> float:
    """Unclipped MOS of user k at `rate` under a web profile (list of
    per-user WebServiceParams) or a shared VideoServiceParams.

    Rates outside the model domain (zero, or below the video validity floor)
    return -inf: the web model diverges there and the video fit is undefined,
    and both clip to the report floor.
    """
    if isinstance(profile, VideoServiceParams):
        if p_bitrate_invalid(rate, profile):
            return float("-inf")
        return video_mos(rate, profile)
    p = profile[k]
    if rate <= 0:
        return float("-inf")
    return web_mos(rate, p)


def p_bitrate_invalid(rate: float, p: VideoServiceParams) -> bool:
    return p.bandwidth_hz * rate <= p.rate_scale_bps
