"""QoE-aware downlink beamforming for two-tier networks.

Convex-relaxation solvers (semidefinite lifting plus a sequential convex
surrogate loop) that maximize the summed opinion score of web and video
users served jointly by a macro base station and a ring of small cells,
with per-antenna power caps and optional per-user quality floors.
"""

from qoebeam.channel import (ChannelSet, Topology, drop_rng, drop_users,
                             generate_channels)
from qoebeam.qoe import (QoeRequirement, VideoServiceParams, WebServiceParams,
                         calibrate_web, video_mos, video_psnr,
                         video_sinr_threshold, web_mos, web_sinr_threshold)
from qoebeam.solution import BeamformingSolution, finalize, oracle_single_user
from qoebeam.spca import NetworkProblem, SpcaRun, run_spca
from qoebeam.video import VideoProblemSpec, spca_solve_video, video_problem
from qoebeam.web import WebProblemSpec, spca_solve_web, web_problem

__version__ = "0.1.0"

__all__ = [
    "BeamformingSolution",
    "ChannelSet",
    "NetworkProblem",
    "QoeRequirement",
    "SpcaRun",
    "Topology",
    "VideoProblemSpec",
    "VideoServiceParams",
    "WebProblemSpec",
    "WebServiceParams",
    "calibrate_web",
    "drop_rng",
    "drop_users",
    "finalize",
    "generate_channels",
    "oracle_single_user",
    "run_spca",
    "spca_solve_video",
    "spca_solve_web",
    "video_mos",
    "video_problem",
    "video_psnr",
    "video_sinr_threshold",
    "web_mos",
    "web_problem",
    "web_sinr_threshold",
]
